"""Command-line surface: gen, train, predict, eval, bench.

Exit codes: 0 ok, 1 I/O failure, 2 validation error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .bench import DEFAULT_SWEEP, bench_csv, run_bench
from .config import ConfigError, TrainConfig, dataclass_from_dict, load_train_config
from .metrics import DEFAULT_TAU_M, EvalSample, evaluate, per_agent_csv
from .model import load_model, predict, save_model
from .nn import CheckpointError
from .predictor import parse_prediction_record, prediction_record
from .scene import MalformedScene, RateMismatch, read_scenes, to_ego_frame
from .synthetic import SyntheticSpec, SyntheticSpecError, generate_synthetic
from .training import DivergenceDetected, LogRow, train
from .scene import write_scenes

EXIT_OK = 0
EXIT_IO = 1
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _limit_threads(threads: int) -> None:
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(limits=threads)
    except Exception:
        pass  # best effort; thread count is still recorded in outputs


def cmd_gen(args) -> int:
    try:
        raw = json.loads(Path(args.spec).read_text(encoding="utf-8"))
    except OSError as exc:
        return _fail(EXIT_IO, f"cannot read spec: {exc}")
    except json.JSONDecodeError as exc:
        return _fail(EXIT_VALIDATION, f"{args.spec}: invalid JSON ({exc})")
    try:
        spec = dataclass_from_dict(SyntheticSpec, raw, where=str(args.spec))
        scenes = generate_synthetic(spec, seed=args.seed if args.seed is not None else 0)
    except (ConfigError, SyntheticSpecError) as exc:
        return _fail(EXIT_VALIDATION, str(exc))
    try:
        write_scenes(args.out, scenes)
    except OSError as exc:
        return _fail(EXIT_IO, f"cannot write {args.out}: {exc}")
    print(f"wrote {len(scenes)} scenes to {args.out}")
    return EXIT_OK


def _effective_train_config(args) -> TrainConfig:
    path = args.config or args.global_config
    cfg = load_train_config(path) if path else TrainConfig().validate()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed).validate()
    return cfg


def cmd_train(args) -> int:
    try:
        cfg = _effective_train_config(args)
    except ConfigError as exc:
        return _fail(EXIT_VALIDATION, str(exc))
    except OSError as exc:
        return _fail(EXIT_IO, f"cannot read config: {exc}")
    print("effective config: " + json.dumps(dataclasses.asdict(cfg), sort_keys=True))

    try:
        scenes = [to_ego_frame(s) for s in read_scenes(args.data)]
    except OSError as exc:
        return _fail(EXIT_IO, f"cannot read scenes: {exc}")
    except (MalformedScene, RateMismatch) as exc:
        return _fail(EXIT_VALIDATION, str(exc))

    resume_params = resume_state = None
    start_epoch = 0
    if args.resume:
        try:
            resume_params, ckpt_cfg = load_model(args.out)
            sidecar = json.loads(Path(str(args.out) + ".state.json").read_text())
            resume_state = sidecar["optimizer"]
            start_epoch = int(sidecar["epoch"])
        except (OSError, CheckpointError, json.JSONDecodeError, KeyError) as exc:
            return _fail(EXIT_IO, f"cannot resume from {args.out}: {exc}")
        if ckpt_cfg != cfg.model_config():
            return _fail(EXIT_VALIDATION,
                         "resume checkpoint hyperparameters disagree with config")

    try:
        result = train(cfg, scenes, resume_params=resume_params,
                       resume_state=resume_state, start_epoch=start_epoch)
    except DivergenceDetected as exc:
        save_model(args.out, exc.registry, cfg.model_config())
        return _fail(EXIT_NUMERIC, f"{exc}; last good checkpoint written to {args.out}")
    except ValueError as exc:
        return _fail(EXIT_VALIDATION, str(exc))

    try:
        save_model(args.out, result.registry, cfg.model_config())
        sidecar = {"epoch": result.epochs_done, "optimizer": result.optimizer_state}
        Path(str(args.out) + ".state.json").write_text(json.dumps(sidecar))
        if args.log:
            lines = [LogRow.CSV_HEADER] + [row.to_csv() for row in result.log]
            Path(args.log).write_text("\n".join(lines) + "\n")
    except OSError as exc:
        return _fail(EXIT_IO, f"cannot write outputs: {exc}")

    last = result.log[-1] if result.log else None
    if last is not None:
        print(f"final loss {last.loss:.6f} after {last.step + 1} steps")
    if result.val_report is not None:
        print(f"val minADE {result.val_report.min_ade_k:.6f} "
              f"minFDE {result.val_report.min_fde_k:.6f}")
    return EXIT_OK


def cmd_predict(args) -> int:
    try:
        reg, cfg = load_model(args.checkpoint)
    except OSError as exc:
        return _fail(EXIT_IO, f"cannot read checkpoint: {exc}")
    except (CheckpointError, ConfigError) as exc:
        return _fail(EXIT_VALIDATION, str(exc))
    try:
        scenes = [to_ego_frame(s) for s in read_scenes(args.scenes)]
    except OSError as exc:
        return _fail(EXIT_IO, f"cannot read scenes: {exc}")
    except (MalformedScene, RateMismatch) as exc:
        return _fail(EXIT_VALIDATION, str(exc))

    for scene in scenes:
        if scene.t_h != cfg.t_h:
            return _fail(EXIT_VALIDATION,
                         f"scene {scene.scene_id}: T_h {scene.t_h} does not match "
                         f"checkpoint T_h {cfg.t_h}")
        if scene.rate_hz != cfg.rate_hz:
            return _fail(EXIT_VALIDATION,
                         f"scene {scene.scene_id}: rate {scene.rate_hz} does not "
                         f"match checkpoint rate {cfg.rate_hz}")

    try:
        with open(args.out, "w", encoding="utf-8") as fh:
            for scene in scenes:
                pred = predict(scene, reg, cfg)
                record = prediction_record(scene.scene_id,
                                           [t.agent_id for t in scene.tracks],
                                           pred)
                fh.write(json.dumps(record) + "\n")
    except OSError as exc:
        return _fail(EXIT_IO, f"cannot write predictions: {exc}")
    print(f"wrote predictions for {len(scenes)} scenes to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        scenes = [to_ego_frame(s) for s in read_scenes(args.scenes)]
        lines = Path(args.predictions).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        return _fail(EXIT_IO, str(exc))
    except (MalformedScene, RateMismatch) as exc:
        return _fail(EXIT_VALIDATION, str(exc))

    predictions: dict[str, dict] = {}
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            scene_id, agents = parse_prediction_record(json.loads(line))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            return _fail(EXIT_VALIDATION,
                         f"{args.predictions}:{lineno}: bad record ({exc})")
        predictions[scene_id] = agents

    samples: list[EvalSample] = []
    for scene in scenes:
        if scene.scene_id not in predictions:
            return _fail(EXIT_VALIDATION, f"no predictions for scene {scene.scene_id}")
        agents = predictions[scene.scene_id]
        for track in scene.tracks:
            if track.agent_id not in agents:
                return _fail(EXIT_VALIDATION,
                             f"scene {scene.scene_id}: agent {track.agent_id} "
                             f"missing from predictions")
            if track.future is None:
                return _fail(EXIT_VALIDATION,
                             f"scene {scene.scene_id}: future missing")
            points, probs = agents[track.agent_id]
            samples.append(EvalSample(
                scene_id=scene.scene_id,
                agent_id=track.agent_id,
                agent_class=track.agent_class,
                pred_modes=points[..., 0:2],
                probs=probs,
                gt=np.asarray(track.future, dtype=float),
                last_obs=track.state_array()[-1, :2],
                rate_hz=scene.rate_hz,
            ))

    report = evaluate(samples, tau=args.tau)
    print(report.to_table())
    try:
        if args.json:
            Path(args.json).write_text(report.to_json() + "\n")
        if args.csv:
            Path(args.csv).write_text(per_agent_csv(samples, tau=args.tau))
    except OSError as exc:
        return _fail(EXIT_IO, f"cannot write report: {exc}")
    return EXIT_OK


def cmd_bench(args) -> int:
    try:
        reg, cfg = load_model(args.checkpoint)
    except OSError as exc:
        return _fail(EXIT_IO, f"cannot read checkpoint: {exc}")
    except (CheckpointError, ConfigError) as exc:
        return _fail(EXIT_VALIDATION, str(exc))
    try:
        sweep = tuple(int(x) for x in args.agents.split(","))
        if not sweep or any(n < 1 for n in sweep):
            raise ValueError
    except ValueError:
        return _fail(EXIT_VALIDATION, f"bad sweep {args.agents!r}")

    results = run_bench(reg, cfg, sweep=sweep, repeats=args.repeats,
                        warmup=args.warmup, seed=args.seed or 0,
                        threads=args.threads, precision=args.precision)
    text = bench_csv(results)
    print(text, end="")
    if args.out:
        try:
            Path(args.out).write_text(text)
        except OSError as exc:
            return _fail(EXIT_IO, f"cannot write {args.out}: {exc}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="intentcast",
        description="Map-free multi-agent trajectory prediction with "
                    "pose-keypoint intent cues.")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the configured RNG seed")
    parser.add_argument("--config", dest="global_config", default=None,
                        help="TrainConfig JSON (train falls back to this)")
    parser.add_argument("--threads", type=int, default=1,
                        help="BLAS thread limit (best effort)")
    parser.add_argument("--precision", choices=("f32", "f64"), default="f64")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic scene corpus")
    p.add_argument("--spec", required=True, help="SyntheticSpec JSON file")
    p.add_argument("--out", required=True, help="output scenes JSONL")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", help="TrainConfig JSON (defaults when omitted)")
    p.add_argument("--data", required=True, help="labeled scenes JSONL")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--log", help="training log CSV path")
    p.add_argument("--resume", action="store_true",
                   help="continue from the checkpoint at --out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict futures for scenes")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scenes", required=True)
    p.add_argument("--out", required=True, help="output predictions JSONL")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--predictions", required=True)
    p.add_argument("--scenes", required=True)
    p.add_argument("--tau", type=float, default=DEFAULT_TAU_M,
                   help="miss-rate threshold in meters")
    p.add_argument("--json", help="write the report as JSON here")
    p.add_argument("--csv", help="write per-agent rows here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="measure per-scene inference latency")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--agents", default=",".join(str(n) for n in DEFAULT_SWEEP),
                   help="comma-separated agent counts")
    p.add_argument("--repeats", type=int, default=50)
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--out", help="write the sweep CSV here")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _limit_threads(args.threads)
    return args.func(args)


def entrypoint() -> None:
    sys.exit(main())
