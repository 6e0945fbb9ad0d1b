"""CLI surface: exit codes, file contracts, determinism, hand-checked eval."""

import json
import math

import numpy as np
import pytest

from intentcast.bench import read_bench_csv
from intentcast.cli import main
from intentcast.scene import (
    AgentClass,
    AgentState,
    KeyPointFrame,
    ObservedTrack,
    Scene,
    write_scenes,
)

SPEC = {
    "n_scenes": 6,
    "agents_min": 2,
    "agents_max": 3,
    "mix": {"straight": 0.4, "left_turn": 0.3, "right_turn": 0.3},
    "noise_std": 0.02,
    "intent_lead_steps": 2,
    "t_h": 4,
    "t_f": 3,
    "rate_hz": 2.0,
    "speed_min": 2.5,
    "speed_max": 3.5,
}

CONFIG = {
    "t_h": 4, "t_f": 3, "rate_hz": 2.0, "d_h": 8, "heads": 2, "modes": 2,
    "epochs": 1, "batch_size": 8, "seed": 0, "val_split": 0.0,
}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Generate data and train one tiny checkpoint for the module's tests."""
    root = tmp_path_factory.mktemp("cli")
    spec_path = root / "spec.json"
    spec_path.write_text(json.dumps(SPEC))
    assert main(["--seed", "5", "gen", "--spec", str(spec_path),
                 "--out", str(root / "scenes.jsonl")]) == 0
    cfg_path = root / "train.json"
    cfg_path.write_text(json.dumps(CONFIG))
    assert main(["train", "--config", str(cfg_path),
                 "--data", str(root / "scenes.jsonl"),
                 "--out", str(root / "model.ckpt"),
                 "--log", str(root / "log.csv")]) == 0
    return root


def test_gen_count_and_determinism(tmp_path, workdir):
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps(SPEC | {"n_scenes": 5}))
    out1, out2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert main(["--seed", "3", "gen", "--spec", str(spec_path), "--out", str(out1)]) == 0
    assert main(["--seed", "3", "gen", "--spec", str(spec_path), "--out", str(out2)]) == 0
    assert len(out1.read_text().splitlines()) == 5
    assert out1.read_bytes() == out2.read_bytes()


def test_gen_rejects_malformed_spec(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(SPEC | {"mix": {"straight": 0.5}}))
    assert main(["gen", "--spec", str(bad), "--out", str(tmp_path / "x.jsonl")]) == 2
    assert "mix" in capsys.readouterr().err

    unknown = tmp_path / "unknown.json"
    unknown.write_text(json.dumps(SPEC | {"wheels": 3}))
    assert main(["gen", "--spec", str(unknown), "--out", str(tmp_path / "x.jsonl")]) == 2
    assert "wheels" in capsys.readouterr().err


def test_train_echoes_defaults(tmp_path, workdir, capsys):
    cfg_path = tmp_path / "partial.json"
    cfg_path.write_text(json.dumps({"t_h": 4, "t_f": 3, "d_h": 8, "heads": 2,
                                    "modes": 2, "epochs": 1, "val_split": 0.0}))
    code = main(["train", "--config", str(cfg_path),
                 "--data", str(workdir / "scenes.jsonl"),
                 "--out", str(tmp_path / "m.ckpt")])
    out = capsys.readouterr().out
    assert code == 0
    echoed = json.loads(out.splitlines()[0].removeprefix("effective config: "))
    assert echoed["learning_rate"] == 0.0005
    assert echoed["weight_decay"] == 0.0001
    assert echoed["batch_size"] == 32
    assert echoed["epochs"] == 1


def test_train_rejects_unknown_config_key(tmp_path, workdir, capsys):
    cfg_path = tmp_path / "typo.json"
    cfg_path.write_text(json.dumps(CONFIG | {"learning_rte": 1e-3}))
    assert main(["train", "--config", str(cfg_path),
                 "--data", str(workdir / "scenes.jsonl"),
                 "--out", str(tmp_path / "m.ckpt")]) == 2
    assert "learning_rte" in capsys.readouterr().err


def test_train_rejects_unlabeled_data(tmp_path, workdir, capsys):
    scenes = [json.loads(line) for line in
              (workdir / "scenes.jsonl").read_text().splitlines()]
    for track in scenes[0]["tracks"]:
        track.pop("future", None)
    data = tmp_path / "unlabeled.jsonl"
    data.write_text("\n".join(json.dumps(s) for s in scenes) + "\n")
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(CONFIG))
    assert main(["train", "--config", str(cfg_path), "--data", str(data),
                 "--out", str(tmp_path / "m.ckpt")]) == 2
    assert "future missing" in capsys.readouterr().err


def test_train_log_written(workdir):
    lines = (workdir / "log.csv").read_text().splitlines()
    assert lines[0].startswith("epoch,step,loss_cls,loss_reg,loss")
    assert len(lines) >= 2


def test_predict_contract_and_determinism(tmp_path, workdir):
    out1, out2 = tmp_path / "p1.jsonl", tmp_path / "p2.jsonl"
    for out in (out1, out2):
        assert main(["predict", "--checkpoint", str(workdir / "model.ckpt"),
                     "--scenes", str(workdir / "scenes.jsonl"),
                     "--out", str(out)]) == 0
    assert out1.read_bytes() == out2.read_bytes()

    scene_lines = (workdir / "scenes.jsonl").read_text().splitlines()
    pred_lines = out1.read_text().splitlines()
    assert len(pred_lines) == len(scene_lines)
    for sline, pline in zip(scene_lines, pred_lines):
        scene = json.loads(sline)
        pred = json.loads(pline)
        assert pred["scene_id"] == scene["scene_id"]
        assert len(pred["agents"]) == len(scene["tracks"])
        for agent in pred["agents"]:
            assert len(agent["modes"]) == CONFIG["modes"]
            total = sum(m["prob"] for m in agent["modes"])
            assert abs(total - 1.0) <= 1e-6
            for mode in agent["modes"]:
                assert len(mode["points"]) == CONFIG["t_f"]
                for point in mode["points"]:
                    assert len(point) == 4
                    assert point[2] > 0 and point[3] > 0


def test_predict_rejects_t_h_mismatch(tmp_path, workdir, capsys):
    spec_path = tmp_path / "spec5.json"
    spec_path.write_text(json.dumps(SPEC | {"t_h": 5, "n_scenes": 2}))
    data = tmp_path / "scenes5.jsonl"
    assert main(["gen", "--spec", str(spec_path), "--out", str(data)]) == 0
    assert main(["predict", "--checkpoint", str(workdir / "model.ckpt"),
                 "--scenes", str(data), "--out", str(tmp_path / "p.jsonl")]) == 2
    assert "T_h" in capsys.readouterr().err


def test_eval_perfect_predictions_scores_zero(tmp_path, workdir, capsys):
    scenes = [json.loads(line) for line in
              (workdir / "scenes.jsonl").read_text().splitlines()]
    pred_path = tmp_path / "perfect.jsonl"
    with open(pred_path, "w") as fh:
        for scene in scenes:
            agents = []
            for track in scene["tracks"]:
                points = [[x, y, 1.0, 1.0] for x, y in track["future"]]
                agents.append({"agent_id": track["agent_id"],
                               "modes": [{"prob": 1.0, "points": points}]})
            fh.write(json.dumps({"scene_id": scene["scene_id"],
                                 "agents": agents}) + "\n")
    report_path = tmp_path / "report.json"
    assert main(["eval", "--predictions", str(pred_path),
                 "--scenes", str(workdir / "scenes.jsonl"),
                 "--json", str(report_path)]) == 0
    report = json.loads(report_path.read_text())
    assert report["minADE_k"] == 0.0
    assert report["minFDE_k"] == 0.0
    assert report["WSADE"] == 0.0
    assert report["MR"] == 0.0
    assert report["n_agents"] == sum(len(s["tracks"]) for s in scenes)


def _fixture_scene(tmp_path):
    """Two agents with hand-computable speeds and errors (2 Hz, T_f = 2)."""
    def frames(n):
        return [KeyPointFrame(np.zeros((9, 2)), np.zeros(9, dtype=bool))
                for _ in range(n)]

    vehicle = ObservedTrack(
        "veh", AgentClass.VEHICLE,
        [AgentState(-5.0, 0.0, 10.0, 0.0, 0.0), AgentState(0.0, 0.0, 10.0, 0.0, 0.0)],
        frames(2), future=np.array([[5.0, 0.0], [10.0, 0.0]]))
    walker = ObservedTrack(
        "ped", AgentClass.PEDESTRIAN,
        [AgentState(-0.5, 5.0, 1.0, 0.0, 0.0), AgentState(0.0, 5.0, 1.0, 0.0, 0.0)],
        frames(2), future=np.array([[0.5, 5.0], [1.0, 5.0]]))
    scene = Scene("fixture", 2.0, 0, [vehicle, walker])
    path = tmp_path / "fixture.jsonl"
    write_scenes(path, [scene])
    return path


def test_eval_hand_computed_fixture(tmp_path):
    scenes_path = _fixture_scene(tmp_path)
    preds = {
        "scene_id": "fixture",
        "agents": [
            {"agent_id": "veh", "modes": [
                {"prob": 0.9, "points": [[4.0, 0.0, 1, 1], [9.0, 0.0, 1, 1]]},
                {"prob": 0.1, "points": [[5.0, 0.0, 1, 1], [10.0, 0.0, 1, 1]]},
            ]},
            {"agent_id": "ped", "modes": [
                {"prob": 0.8, "points": [[2.5, 5.0, 1, 1], [3.0, 5.0, 1, 1]]},
                {"prob": 0.2, "points": [[0.5, 5.0, 1, 1], [1.0, 5.5, 1, 1]]},
            ]},
        ],
    }
    pred_path = tmp_path / "preds.jsonl"
    pred_path.write_text(json.dumps(preds) + "\n")
    report_path = tmp_path / "report.json"
    csv_path = tmp_path / "agents.csv"
    assert main(["eval", "--predictions", str(pred_path),
                 "--scenes", str(scenes_path), "--tau", "2.0",
                 "--json", str(report_path), "--csv", str(csv_path)]) == 0
    report = json.loads(report_path.read_text())
    # speeds 10 and 1 m/s -> weights 1/11 and 10/11; top-mode ADEs 1 and 2
    assert report["WSADE"] == pytest.approx(21.0 / 11.0, abs=1e-12)
    assert report["WSFDE"] == pytest.approx(21.0 / 11.0, abs=1e-12)
    assert report["minADE_k"] == pytest.approx(0.125, abs=1e-12)
    assert report["minFDE_k"] == pytest.approx(0.25, abs=1e-12)
    assert report["MR"] == 0.0
    assert report["n_agents"] == 2
    assert report["per_class"]["vehicle"]["mean_speed"] == pytest.approx(10.0)
    assert report["per_class"]["pedestrian"]["mean_speed"] == pytest.approx(1.0)
    rows = csv_path.read_text().strip().splitlines()
    assert len(rows) == 3


def test_eval_missing_agent_lists_id(tmp_path, capsys):
    scenes_path = _fixture_scene(tmp_path)
    preds = {"scene_id": "fixture",
             "agents": [{"agent_id": "veh", "modes": [
                 {"prob": 1.0, "points": [[0, 0, 1, 1], [0, 0, 1, 1]]}]}]}
    pred_path = tmp_path / "preds.jsonl"
    pred_path.write_text(json.dumps(preds) + "\n")
    assert main(["eval", "--predictions", str(pred_path),
                 "--scenes", str(scenes_path)]) == 2
    assert "ped" in capsys.readouterr().err


def test_bench_structure(tmp_path, workdir):
    out = tmp_path / "bench.csv"
    assert main(["bench", "--checkpoint", str(workdir / "model.ckpt"),
                 "--agents", "1,2,4", "--repeats", "8", "--warmup", "2",
                 "--out", str(out)]) == 0
    rows = read_bench_csv(out.read_text())
    assert len(rows) == 3
    for row in rows:
        assert row.p50_ms <= row.p95_ms <= row.p99_ms
        assert row.p50_ms > 0
        assert row.precision == "f64"


def test_bench_f32(tmp_path, workdir):
    out = tmp_path / "bench32.csv"
    assert main(["--precision", "f32", "bench",
                 "--checkpoint", str(workdir / "model.ckpt"),
                 "--agents", "1", "--repeats", "4", "--warmup", "1",
                 "--out", str(out)]) == 0
    rows = read_bench_csv(out.read_text())
    assert rows[0].precision == "f32"
    assert math.isfinite(rows[0].p99_ms)
