"""Global encoder: edge features, passthrough, equation oracle, equivariance."""

import math

import numpy as np

from intentcast.global_encoder import edge_features, global_attend
from intentcast.model import build_params
from intentcast.nn import Tensor
from intentcast.scene import AgentState, Scene

from helpers import make_track, micro_config, random_scene

RNG = np.random.default_rng(41)


def oracle_softmax(x):
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=-1, keepdims=True)


def oracle_layer_norm(x, g, b, eps=1e-5):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(-1, keepdims=True)
    return xc / np.sqrt(var + eps) * g + b


def scene_with_last_states(states):
    tracks = []
    for i, st in enumerate(states):
        xy = np.tile([st[0], st[1]], (3, 1))
        xy[0] -= [st[2] * 0.5, st[3] * 0.5]  # trivial history
        track = make_track(f"a{i}", xy, vxy=np.tile([st[2], st[3]], (3, 1)),
                           yaw=np.full(3, st[4]))
        tracks.append(track)
    return Scene("s", 2.0, 0, tracks)


def test_edge_features_identical_poses():
    scene = scene_with_last_states([(1.0, 2.0, 0.5, 0.0, 0.3),
                                    (1.0, 2.0, 0.5, 0.0, 0.3)])
    e = edge_features(scene)
    assert np.allclose(e[0, 1], [0, 0, 0, 0, 1, 0], atol=1e-12)


def test_edge_features_quarter_turn():
    scene = scene_with_last_states([(0.0, 0.0, 0.0, 0.0, 0.0),
                                    (0.0, 0.0, 0.0, 0.0, math.pi / 2)])
    e = edge_features(scene)
    assert np.allclose(e[0, 1][4:], [0.0, 1.0], atol=1e-12)


def test_edge_features_random_pair_against_recomputation():
    for _ in range(20):
        s0 = RNG.uniform(-5, 5, 4).tolist() + [float(RNG.uniform(-3, 3))]
        s1 = RNG.uniform(-5, 5, 4).tolist() + [float(RNG.uniform(-3, 3))]
        scene = scene_with_last_states([tuple(s0), tuple(s1)])
        e = edge_features(scene)
        dx, dy = s1[0] - s0[0], s1[1] - s0[1]
        dvx, dvy = s1[2] - s0[2], s1[3] - s0[3]
        dth = math.remainder(s1[4] - s0[4], 2 * math.pi)
        assert np.allclose(e[0, 1],
                           [dx, dy, dvx, dvy, math.cos(dth), math.sin(dth)],
                           atol=1e-12)
        # antisymmetry of the first four components
        assert np.allclose(e[0, 1][:4], -e[1, 0][:4], atol=1e-15)
        assert abs(e[0, 1][4] ** 2 + e[0, 1][5] ** 2 - 1.0) <= 1e-9


def test_single_agent_passthrough():
    cfg = micro_config()
    reg = build_params(cfg, seed=0)
    z = Tensor(RNG.normal(size=(1, 2 * cfg.d_h)))
    scene = scene_with_last_states([(0.0, 0.0, 1.0, 0.0, 0.0)])
    out = global_attend(z, edge_features(scene), reg, cfg)
    assert out is z


def test_two_agent_equation_oracle():
    cfg = micro_config()
    reg = build_params(cfg, seed=1)
    n, width = 2, 2 * cfg.d_h
    z = RNG.normal(size=(n, width))
    scene = scene_with_last_states([(0.0, 0.0, 1.0, 0.0, 0.0),
                                    (3.0, -1.0, 0.0, 2.0, 0.7)])
    edges = edge_features(scene)

    # edge embedding
    h = np.maximum(edges @ reg["global.edge.l0.w"].data
                   + reg["global.edge.l0.b"].data, 0)
    e_emb = h @ reg["global.edge.l1.w"].data + reg["global.edge.l1.b"].data

    wq, wk, wv = (reg[f"global.{p}"].data for p in ("wq", "wk", "wv"))
    dh = width // cfg.heads
    att = np.zeros_like(z)
    for i in range(n):
        others = [j for j in range(n) if j != i]
        q = z[i] @ wq
        kv = np.concatenate([z[others], e_emb[i, others]], axis=-1)
        k = kv @ wk
        v = kv @ wv
        for hh in range(cfg.heads):
            sl = slice(hh * dh, (hh + 1) * dh)
            scores = (k[:, sl] @ q[sl]) / np.sqrt(cfg.d_h)
            att[i, sl] = oracle_softmax(scores[None])[0] @ v[:, sl]
    expected = oracle_layer_norm(z + att, reg["global.ln.g"].data,
                                 reg["global.ln.b"].data)

    got = global_attend(Tensor(z), edges, reg, cfg).data
    assert np.allclose(got, expected, atol=1e-12)


def test_permutation_equivariance():
    cfg = micro_config()
    reg = build_params(cfg, seed=2)
    scene = random_scene(RNG, n_agents=4, t_h=4, t_f=3)
    z = RNG.normal(size=(4, 2 * cfg.d_h))
    base = global_attend(Tensor(z), edge_features(scene), reg, cfg).data

    perm = np.array([2, 0, 3, 1])
    scene_p = Scene(scene.scene_id, scene.rate_hz, 0,
                    [scene.tracks[j] for j in perm])
    out_p = global_attend(Tensor(z[perm]), edge_features(scene_p), reg, cfg).data
    assert np.max(np.abs(out_p - base[perm])) <= 1e-12


def test_translation_invariance_of_edges():
    scene = random_scene(RNG, n_agents=3, t_h=4, t_f=3)
    base = edge_features(scene)
    for track in scene.tracks:
        for st in track.states:
            st.x += 77.0
            st.y -= 13.0
    shifted = edge_features(scene)
    assert np.max(np.abs(shifted - base)) <= 1e-9
