"""CPU inference latency harness.

Measures wall-clock per single-scene forward pass (feature extraction through
free-running decode) over a sweep of agent counts, reporting p50/p95/p99 over
the timed repeats after discarding warm-up runs.  Results record thread count
and float precision; these are CPU numbers and are not comparable to
accelerator figures.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .model import predict
from .nn import ParamRegistry, default_dtype, set_default_dtype
from .synthetic import SyntheticSpec, generate_synthetic

DEFAULT_SWEEP = (1, 8, 32, 128)


@dataclass
class BenchResult:
    n_agents: int
    t_h: int
    t_f: int
    modes: int
    p50_ms: float
    p95_ms: float
    p99_ms: float
    threads: int
    precision: str

    CSV_HEADER = "n_agents,t_h,t_f,modes,p50_ms,p95_ms,p99_ms,threads,precision"

    def to_csv(self) -> str:
        return (f"{self.n_agents},{self.t_h},{self.t_f},{self.modes},"
                f"{self.p50_ms:.6f},{self.p95_ms:.6f},{self.p99_ms:.6f},"
                f"{self.threads},{self.precision}")


def bench_scene(cfg: ModelConfig, n_agents: int, seed: int):
    spec = SyntheticSpec(
        n_scenes=1, agents_min=n_agents, agents_max=n_agents,
        mix={"straight": 0.4, "left_turn": 0.3, "right_turn": 0.3},
        noise_std=0.05, intent_lead_steps=2,
        t_h=cfg.t_h, t_f=cfg.t_f, rate_hz=cfg.rate_hz)
    return generate_synthetic(spec, seed)[0]


def run_bench(reg: ParamRegistry, cfg: ModelConfig,
              sweep: tuple[int, ...] = DEFAULT_SWEEP, repeats: int = 50,
              warmup: int = 5, seed: int = 0, threads: int = 1,
              precision: str = "f64") -> list[BenchResult]:
    """Timed forward passes per agent count; one result row per sweep entry."""
    if precision not in ("f32", "f64"):
        raise ValueError(f"precision must be f32 or f64, got {precision!r}")
    saved_dtype = default_dtype()
    set_default_dtype(np.float32 if precision == "f32" else np.float64)
    try:
        if precision == "f32":
            for _, tensor in reg.items():
                tensor.data = tensor.data.astype(np.float32)
        results = []
        for n in sweep:
            scene = bench_scene(cfg, n, seed)
            for _ in range(warmup):
                predict(scene, reg, cfg)
            lat = np.empty(repeats)
            for r in range(repeats):
                t0 = time.perf_counter()
                predict(scene, reg, cfg)
                lat[r] = (time.perf_counter() - t0) * 1e3
            p50, p95, p99 = np.percentile(lat, [50, 95, 99])
            results.append(BenchResult(
                n_agents=n, t_h=cfg.t_h, t_f=cfg.t_f, modes=cfg.modes,
                p50_ms=float(p50), p95_ms=float(p95), p99_ms=float(p99),
                threads=threads, precision=precision))
        return results
    finally:
        set_default_dtype(saved_dtype)
        if precision == "f32":
            for _, tensor in reg.items():
                tensor.data = tensor.data.astype(np.float64)


def bench_csv(results: list[BenchResult]) -> str:
    buf = io.StringIO()
    buf.write(BenchResult.CSV_HEADER + "\n")
    for row in results:
        buf.write(row.to_csv() + "\n")
    return buf.getvalue()


def read_bench_csv(text: str) -> list[BenchResult]:
    rows = list(csv.DictReader(io.StringIO(text)))
    return [BenchResult(int(r["n_agents"]), int(r["t_h"]), int(r["t_f"]),
                        int(r["modes"]), float(r["p50_ms"]), float(r["p95_ms"]),
                        float(r["p99_ms"]), int(r["threads"]), r["precision"])
            for r in rows]
