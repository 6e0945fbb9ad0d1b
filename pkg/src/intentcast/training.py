"""Optimization loop, gradient checking, and the pose-encoder ablation driver.

The optimizer is Adam with decoupled weight decay; shuffling is a pure
function of (seed, epoch) so interrupted runs can resume bit-exactly; the
held-out split hashes scene ids so it is independent of file order.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field

import numpy as np

from .config import ModelConfig, TrainConfig
from .metrics import EvalReport, evaluate, samples_from_scene
from .model import build_params, predict, scene_inputs, scene_loss
from .nn import ParamRegistry, no_grad
from .scene import Scene
from .synthetic import SyntheticSpec, generate_synthetic


class DivergenceDetected(RuntimeError):
    """Loss went non-finite; carries the last good parameters."""

    def __init__(self, message: str, registry: ParamRegistry, step: int):
        super().__init__(message)
        self.registry = registry
        self.step = step


class AdamW:
    """Adam with decoupled weight decay.  weight_decay=0 reproduces plain
    Adam exactly."""

    def __init__(self, reg: ParamRegistry, lr: float, weight_decay: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.reg = reg
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(t.data) for n, t in reg.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in reg.items()}

    def step(self) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for name, tensor in self.reg.items():
            g = tensor.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / b1c) / (np.sqrt(v / b2c) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * tensor.data
            tensor.data = tensor.data - self.lr * update

    def state_dict(self) -> dict:
        return {
            "t": self.t,
            "m": {n: a.reshape(-1).tolist() for n, a in self.m.items()},
            "v": {n: a.reshape(-1).tolist() for n, a in self.v.items()},
        }

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        for n in self.m:
            self.m[n] = np.asarray(state["m"][n], dtype=float).reshape(self.m[n].shape)
            self.v[n] = np.asarray(state["v"][n], dtype=float).reshape(self.v[n].shape)


def split_scenes(scenes: list[Scene], val_fraction: float) -> tuple[list[Scene], list[Scene]]:
    """Deterministic holdout by scene_id hash, independent of list order."""
    train, val = [], []
    for scene in scenes:
        digest = hashlib.sha1(scene.scene_id.encode("utf-8")).hexdigest()
        bucket = int(digest, 16) % 10_000
        (val if bucket < val_fraction * 10_000 else train).append(scene)
    return train, val


def evaluate_scenes(reg: ParamRegistry, cfg: ModelConfig, scenes: list[Scene],
                    tau: float = 2.0) -> EvalReport:
    """Free-running predictions over `scenes`, scored with the metric suite."""
    samples = []
    for scene in scenes:
        pred = predict(scene, reg, cfg)
        samples.extend(samples_from_scene(scene, pred.positions(), pred.probs()))
    return evaluate(samples, tau=tau)


@dataclass
class LogRow:
    epoch: int
    step: int
    loss_cls: float
    loss_reg: float
    loss: float
    val_min_ade: float = float("nan")
    val_min_fde: float = float("nan")
    wall_ms_per_step: float = 0.0

    CSV_HEADER = "epoch,step,loss_cls,loss_reg,loss,val_minADE,val_minFDE,wall_ms_per_step"

    def to_csv(self) -> str:
        def fmt(x):
            return "" if np.isnan(x) else f"{x:.9g}"
        return (f"{self.epoch},{self.step},{self.loss_cls:.9g},{self.loss_reg:.9g},"
                f"{self.loss:.9g},{fmt(self.val_min_ade)},{fmt(self.val_min_fde)},"
                f"{self.wall_ms_per_step:.4g}")


@dataclass
class TrainResult:
    registry: ParamRegistry
    log: list[LogRow]
    optimizer_state: dict
    epochs_done: int
    val_report: EvalReport | None = None


def _check_labeled(scenes: list[Scene]) -> None:
    for scene in scenes:
        for track in scene.tracks:
            if track.future is None:
                raise ValueError(f"scene {scene.scene_id}: future missing")


def train(cfg: TrainConfig, scenes: list[Scene],
          resume_params: ParamRegistry | None = None,
          resume_state: dict | None = None,
          start_epoch: int = 0,
          max_steps: int | None = None) -> TrainResult:
    """Run the optimization loop; deterministic given (cfg, scenes)."""
    cfg.validate()
    _check_labeled(scenes)
    train_scenes, val_scenes = split_scenes(scenes, cfg.val_split)
    if not train_scenes:
        raise ValueError("empty training split")

    mcfg = cfg.model_config()
    reg = resume_params if resume_params is not None else build_params(mcfg, cfg.seed)
    opt = AdamW(reg, cfg.learning_rate, cfg.weight_decay)
    if resume_state is not None:
        opt.load_state_dict(resume_state)

    inputs = [scene_inputs(s, mcfg) for s in train_scenes]
    rows: list[LogRow] = []
    step = opt.t
    last_good = {n: t.data.copy() for n, t in reg.items()}
    for epoch in range(start_epoch, cfg.epochs):
        order = np.random.default_rng((cfg.seed, epoch)).permutation(len(inputs))
        for lo in range(0, len(order), cfg.batch_size):
            batch = order[lo:lo + cfg.batch_size]
            t0 = time.perf_counter()
            total = None
            cls_sum = reg_sum = 0.0
            for idx in batch:
                loss, cls, regl = scene_loss(inputs[idx], reg, mcfg,
                                             variant=cfg.loss_variant,
                                             teacher_forcing=cfg.teacher_forcing)
                total = loss if total is None else total + loss
                cls_sum += cls.item()
                reg_sum += regl.item()
            total = total * (1.0 / len(batch))
            loss_val = total.item()
            if not np.isfinite(loss_val):
                for n, t in reg.items():
                    t.data = last_good[n]
                raise DivergenceDetected(
                    f"non-finite loss at step {step}", reg, step)
            for n, t in reg.items():
                last_good[n] = t.data.copy()
            reg.zero_grad()
            total.backward()
            opt.step()
            wall_ms = (time.perf_counter() - t0) * 1e3
            rows.append(LogRow(epoch, step, cls_sum / len(batch),
                               reg_sum / len(batch), loss_val,
                               wall_ms_per_step=wall_ms))
            step += 1
            if max_steps is not None and step >= max_steps:
                break
        if val_scenes:
            report = evaluate_scenes(reg, mcfg, val_scenes)
            rows[-1].val_min_ade = report.min_ade_k
            rows[-1].val_min_fde = report.min_fde_k
        if max_steps is not None and step >= max_steps:
            break

    final_report = evaluate_scenes(reg, mcfg, val_scenes) if val_scenes else None
    return TrainResult(reg, rows, opt.state_dict(), epochs_done=cfg.epochs,
                       val_report=final_report)


# -- gradient checking ----------------------------------------------------------------


@dataclass
class GradCheckReport:
    per_param: dict[str, float]
    max_rel_err: float
    n_scalars: int
    runtime_s: float

    def worst(self, k: int = 5) -> list[tuple[str, float]]:
        return sorted(self.per_param.items(), key=lambda kv: -kv[1])[:k]


def micro_scene(cfg: ModelConfig, n_agents: int = 3, seed: int = 1024) -> Scene:
    """A small labeled scene for gradient checking.  The default seed gives a
    well-conditioned instance: no ReLU pre-activation sits within the
    finite-difference step of its kink, so central differences are valid."""
    spec = SyntheticSpec(
        n_scenes=1, agents_min=n_agents, agents_max=n_agents,
        mix={"straight": 0.4, "left_turn": 0.3, "right_turn": 0.3},
        noise_std=0.05, intent_lead_steps=2,
        t_h=cfg.t_h, t_f=cfg.t_f, rate_hz=cfg.rate_hz,
        speed_min=2.5, speed_max=3.5)
    return generate_synthetic(spec, seed)[0]


def grad_check(cfg: TrainConfig, scene: Scene | None = None,
               eps: float = 1e-4,
               param_names: list[str] | None = None) -> GradCheckReport:
    """Compare parameters' analytic gradients of the training loss on one
    scene against central finite differences.  `param_names` restricts the
    check (None checks every parameter)."""
    t0 = time.perf_counter()
    mcfg = cfg.model_config()
    if scene is None:
        scene = micro_scene(mcfg)
    reg = build_params(mcfg, cfg.seed)
    inputs = scene_inputs(scene, mcfg)

    total, _, _ = scene_loss(inputs, reg, mcfg, variant=cfg.loss_variant,
                             teacher_forcing=True)
    reg.zero_grad()
    total.backward()
    analytic = {n: t.grad.copy() for n, t in reg.items()}

    def loss_value() -> float:
        with no_grad():
            loss, _, _ = scene_loss(inputs, reg, mcfg, variant=cfg.loss_variant,
                                    teacher_forcing=True)
        return loss.item()

    selected = reg.items()
    if param_names is not None:
        selected = [(n, reg[n]) for n in param_names]
    per_param: dict[str, float] = {}
    for name, tensor in selected:
        flat = tensor.data.reshape(-1)
        numeric = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = loss_value()
            flat[i] = orig - eps
            fm = loss_value()
            flat[i] = orig
            numeric[i] = (fp - fm) / (2.0 * eps)
        a = analytic[name].reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-6)
        per_param[name] = float(np.max(np.abs(a - numeric) / denom))

    n_checked = sum(reg[n].size for n in per_param)
    return GradCheckReport(
        per_param=per_param,
        max_rel_err=max(per_param.values()),
        n_scalars=n_checked,
        runtime_s=time.perf_counter() - t0,
    )


# -- ablation -----------------------------------------------------------------------------


@dataclass
class AblationArm:
    min_ade_per_seed: list[float] = field(default_factory=list)
    min_fde_per_seed: list[float] = field(default_factory=list)

    @property
    def median_min_ade(self) -> float:
        return float(np.median(self.min_ade_per_seed))

    @property
    def median_min_fde(self) -> float:
        return float(np.median(self.min_fde_per_seed))


@dataclass
class AblationReport:
    with_si: AblationArm
    without_si: AblationArm
    seeds: list[int]

    def to_dict(self) -> dict:
        return {
            "seeds": self.seeds,
            "with_si": {
                "minADE_per_seed": self.with_si.min_ade_per_seed,
                "minFDE_per_seed": self.with_si.min_fde_per_seed,
                "median_minADE": self.with_si.median_min_ade,
                "median_minFDE": self.with_si.median_min_fde,
            },
            "without_si": {
                "minADE_per_seed": self.without_si.min_ade_per_seed,
                "minFDE_per_seed": self.without_si.min_fde_per_seed,
                "median_minADE": self.without_si.median_min_ade,
                "median_minFDE": self.without_si.median_min_fde,
            },
        }


def ablate_si(spec: SyntheticSpec, cfg: TrainConfig,
              seeds: list[int]) -> AblationReport:
    """Train matched models with the pose encoder on and off, on identical
    data per seed, and report held-out minADE/minFDE medians per arm."""
    import dataclasses

    report = AblationReport(AblationArm(), AblationArm(), list(seeds))
    for seed in seeds:
        scenes = generate_synthetic(spec, seed)
        for enabled, arm in ((True, report.with_si), (False, report.without_si)):
            arm_cfg = dataclasses.replace(cfg, si_enabled=enabled, seed=seed)
            result = train(arm_cfg, scenes)
            if result.val_report is None:
                raise ValueError("ablation requires a non-empty validation split")
            arm.min_ade_per_seed.append(result.val_report.min_ade_k)
            arm.min_fde_per_seed.append(result.val_report.min_fde_k)
    return report
