"""
twinforge command-line interface
Thin adapters over the services: every subcommand reads a config file and/or flags,
writes its artifacts into --out-dir and leaves a manifest.json behind.
Exit codes: 0 ok, 2 config error, 3 runtime error.
"""
import argparse
import json
import logging
import os
import sys
import tempfile
import time
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Type, TypeVar

import numpy as np
import pandas as pd
from dotenv import load_dotenv
from joblib import Parallel, delayed
from pydantic import BaseModel, ValidationError

from . import __version__
from .errors import ConfigError, DatasetError, EvaluatorFailure, TwinforgeError
from .ml_models.delay_twin import build_tensors, load_model, predict
from .ml_models.twin_trainer import evaluation_frame, fit_twin
from .models.schemas import (
    EvaluatorKind,
    GenDatasetConfig,
    LossKind,
    OptimizationTrace,
    OptimizeConfig,
    QtConfig,
    SimConfig,
    TrainJobConfig,
    TwinMode,
)
from .services.evaluation import prediction_frame, size_bucket_table
from .services.evaluators import SimulatorEvaluator, build_evaluator
from .services.manifest import ManifestRecorder, load_manifest, prepare_out_dir
from .services.packet_simulator import PacketSimulator, simulate, warn_if_expensive
from .services.queueing_model import link_utilization, qt_path_metrics
from .services.routing_optimizer import nes_optimize, trace_rows
from .services.scenario_generator import (
    derive_seed,
    gen_topology,
    gen_traffic,
    generate_dataset,
    load_dataset,
    load_sample,
    save_dataset,
    size_bucket,
)
from .services.what_if import what_if_link_failure

logger = logging.getLogger("twinforge")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
DEFAULT_EVENT_WARN = 5e7
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

M = TypeVar("M", bound=BaseModel)


# ---------------------------------------------------------------------------
# Environment, logging and config helpers
# ---------------------------------------------------------------------------

def configure_logging(verbose: bool = False, quiet: bool = False) -> None:
    level = os.getenv("TWINFORGE_LOG_LEVEL", "INFO").upper()
    if not isinstance(logging.getLevelName(level), int):
        level = "INFO"
    if verbose:
        level = "DEBUG"
    elif quiet:
        level = "WARNING"
    logging.basicConfig(level=level, format=LOG_FORMAT)


def env_number(name: str, default: float, cast: Callable = float):
    raw = os.getenv(name)
    if raw is None or raw == "":
        return default
    try:
        return cast(raw)
    except ValueError:
        raise ConfigError(f"environment variable {name}={raw!r} is not a number", details={"field": name})


def config_error(e: ValidationError, source: str) -> ConfigError:
    fields = [".".join(str(part) for part in err["loc"]) or "<root>" for err in e.errors()]
    problems = [f"{field}: {err['msg']}" for field, err in zip(fields, e.errors())]
    return ConfigError(f"{source}: " + "; ".join(problems), details={"fields": fields})


def load_config(path: Optional[str], model: Type[M]) -> M:
    if path is None:
        return model()
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}", details={"path": path})
    try:
        return model.model_validate_json(text)
    except ValidationError as e:
        raise config_error(e, path)


def with_updates(cfg: M, **updates: Any) -> M:
    """Validated copy of `cfg` with overrides applied (None values are ignored)"""
    data = cfg.model_dump()
    data.update({k: v for k, v in updates.items() if v is not None})
    try:
        return type(cfg).model_validate(data)
    except ValidationError as e:
        raise config_error(e, "command-line override")


def resolve_seed(args: argparse.Namespace, default: int) -> int:
    """--seed beats TWINFORGE_SEED beats the config file"""
    if args.seed is not None:
        return args.seed
    return env_number("TWINFORGE_SEED", default, int)


def sim_overrides(args: argparse.Namespace, base: SimConfig, seed: Optional[int] = None) -> SimConfig:
    return with_updates(base, duration=args.sim_duration, warmup=args.sim_warmup, seed=seed)


def event_warn_threshold() -> float:
    return env_number("TWINFORGE_EVENT_WARN", DEFAULT_EVENT_WARN)


def show_progress(args: argparse.Namespace) -> bool:
    return not args.quiet and sys.stderr.isatty()


def snapshot(args: argparse.Namespace, effective: Optional[BaseModel] = None) -> Dict[str, Any]:
    return {
        "argv": list(args.argv),
        "effective": effective.model_dump(mode="json") if effective is not None else None,
    }


def write_csv(frame: pd.DataFrame, path: Path) -> Path:
    frame.to_csv(path, index=False, float_format="%.10g")
    return path


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_gen_dataset(args: argparse.Namespace) -> None:
    cfg = load_config(args.config, GenDatasetConfig)
    seed = resolve_seed(args, cfg.scenario.seed)
    cfg = with_updates(
        cfg,
        scenario=with_updates(cfg.scenario, seed=seed).model_dump(),
        sim=sim_overrides(args, cfg.sim).model_dump(),
        labeler=args.labeler,
        samples=args.samples,
    )
    out_dir = prepare_out_dir(args.out_dir, args.force)
    recorder = ManifestRecorder("gen-dataset", out_dir, snapshot(args, cfg), seed)

    labeler = build_evaluator(cfg.labeler, cfg.sim, cfg.qt, warn_events=event_warn_threshold())
    samples = generate_dataset(
        seed, cfg.scenario, labeler, cfg.samples, jobs=args.jobs, qt_config=cfg.qt, progress=show_progress(args)
    )
    save_dataset(samples, out_dir)
    recorder.finish()
    logger.info(f"Wrote {len(samples)} {cfg.labeler.value}-labeled samples to {out_dir}")


def cmd_train(args: argparse.Namespace) -> None:
    job = load_config(args.config, TrainJobConfig)
    seed = resolve_seed(args, job.train.seed)
    job = with_updates(
        job,
        twin=with_updates(job.twin, mode=args.mode, d=args.d, T=args.T).model_dump(),
        train=with_updates(job.train, seed=seed, epochs=args.epochs, loss_kind=args.loss).model_dump(),
    )
    dataset = load_dataset(args.dataset)
    out_dir = prepare_out_dir(args.out_dir, args.force)
    recorder = ManifestRecorder("train", out_dir, snapshot(args, job), seed)

    _, history = fit_twin(
        dataset, job.twin, job.train, str(out_dir / "model.json"), str(out_dir / "history.csv"), show_progress(args)
    )
    recorder.finish()
    logger.info(f"Trained {job.twin.mode.value} twin; best validation loss {history['val_loss'].min():.4f}")


def parse_model_arg(arg: str) -> tuple:
    """'name=path' or 'path' (named after the file stem)"""
    if "=" in arg:
        name, path = arg.split("=", 1)
        return name, path
    return Path(arg).stem, arg


def cmd_eval(args: argparse.Namespace) -> None:
    if not args.model and not args.qt:
        raise ConfigError("nothing to evaluate: pass --model and/or --qt", details={"field": "model"})
    models = [(name, load_model(path)) for name, path in map(parse_model_arg, args.model or [])]
    out_dir = prepare_out_dir(args.out_dir, args.force)
    recorder = ManifestRecorder("eval", out_dir, snapshot(args))

    frames: Dict[tuple, pd.DataFrame] = {}
    for directory in args.dataset:
        samples = load_dataset(directory)
        unlabeled = [s.index for s in samples if s.label is None]
        if unlabeled:
            raise DatasetError(f"{directory}: samples {unlabeled} carry no label")
        bucket = size_bucket(samples)

        scored = [(name, evaluation_frame(name, model, samples)) for name, model in models]
        if args.qt:
            metrics = Parallel(n_jobs=args.jobs)(
                delayed(qt_path_metrics)(s.topology, s.traffic, s.routing) for s in samples
            )
            scored.append(("qt", prediction_frame("qt", samples, [m.delays for m in metrics])))
        for name, frame in scored:
            key = (name, bucket)
            frames[key] = pd.concat([frames[key], frame], ignore_index=True) if key in frames else frame

    table = size_bucket_table(frames)
    write_csv(table, out_dir / "eval.csv")
    if args.dump_predictions:
        write_csv(pd.concat(frames.values(), ignore_index=True), out_dir / "predictions.csv")
    recorder.finish()
    print(table.to_csv(index=False, float_format="%.6g"), end="")


def write_trace(run_dir: Path, trace: OptimizationTrace) -> Path:
    return write_csv(pd.DataFrame(trace_rows(trace), columns=["iter", "best_delay_s", "mean_delay_s"]), run_dir / "trace.csv")


def cmd_optimize(args: argparse.Namespace) -> None:
    cfg = load_config(args.config, OptimizeConfig)
    seed = resolve_seed(args, cfg.scenario.seed)
    cfg = with_updates(
        cfg,
        scenario=with_updates(cfg.scenario, seed=seed).model_dump(),
        es=with_updates(cfg.es, seed=seed, evaluator=args.evaluator, iterations=args.iterations).model_dump(),
        sim=sim_overrides(args, cfg.sim, seed).model_dump(),
    )
    model = load_model(args.model) if cfg.es.evaluator == EvaluatorKind.TWIN and args.model else None
    evaluator = build_evaluator(cfg.es.evaluator, cfg.sim, cfg.qt, model)
    measurer = SimulatorEvaluator(cfg.sim, event_warn_threshold())

    out_dir = prepare_out_dir(args.out_dir, args.force)
    recorder = ManifestRecorder("optimize", out_dir, snapshot(args, cfg), seed)

    topo = gen_topology(derive_seed(seed, 0), cfg.scenario)
    (out_dir / "topology.json").write_text(topo.model_dump_json(indent=2) + "\n")
    logger.info(f"Optimizing routing on a {topo.nodes}-node, {len(topo.links)}-link topology")

    rows: List[dict] = []
    for intensity in cfg.intensities:
        tm = gen_traffic(derive_seed(seed, 1), topo, intensity, cfg.scenario.mean_packet_size)
        run_dir = out_dir / f"intensity_{intensity:g}"
        run_dir.mkdir()
        try:
            trace = nes_optimize(topo, tm, evaluator, cfg.es, measurer, jobs=args.jobs)
        except EvaluatorFailure as e:
            if e.trace is not None:
                write_trace(run_dir, e.trace)
            raise
        write_trace(run_dir, trace)
        result = {
            "intensity": intensity,
            "evaluator": cfg.es.evaluator.value,
            "iterations": len(trace.records),
            "best_weights": trace.best_weights,
            "evaluator_delay_s": trace.best_fitness,
            "baseline_evaluator_delay_s": trace.baseline_fitness,
            "simulated_delay_s": trace.simulated_delay,
            "baseline_simulated_delay_s": trace.baseline_simulated_delay,
            "improvement": trace.improvement,
        }
        (run_dir / "result.json").write_text(json.dumps(result, indent=2) + "\n")
        rows.append(
            {
                "intensity": intensity,
                "baseline_sim_delay_s": trace.baseline_simulated_delay,
                "optimized_sim_delay_s": trace.simulated_delay,
                "delay_reduction_s": trace.baseline_simulated_delay - trace.simulated_delay,
                "improvement": trace.improvement,
            }
        )
        logger.info(f"Intensity {intensity:g}: improvement {trace.improvement or 0.0:.2%} over equal weights")

    table = pd.DataFrame(
        rows, columns=["intensity", "baseline_sim_delay_s", "optimized_sim_delay_s", "delay_reduction_s", "improvement"]
    )
    write_csv(table, out_dir / "improvement.csv")
    recorder.finish()
    print(table.to_csv(index=False, float_format="%.6g"), end="")


def cmd_simulate(args: argparse.Namespace) -> None:
    sample = load_sample(args.sample)
    base = load_config(args.config, SimConfig)
    cfg = sim_overrides(args, base, resolve_seed(args, base.seed))
    out_dir = prepare_out_dir(args.out_dir, args.force)
    recorder = ManifestRecorder("simulate", out_dir, snapshot(args, cfg), cfg.seed)

    warn_if_expensive(cfg, sample.traffic, sample.routing, event_warn_threshold())
    result = PacketSimulator(sample.topology, sample.traffic, sample.routing, cfg).run()
    frame = pd.DataFrame(
        [
            {"src": p.src, "dst": p.dst, "delay_s": p.mean_delay, "loss": p.loss, "delivered": p.delivered}
            for p in result.metrics.paths
        ],
        columns=["src", "dst", "delay_s", "loss", "delivered"],
    )
    write_csv(frame, out_dir / "paths.csv")
    recorder.finish()
    logger.info(f"Simulated {result.events} events; mean path delay {frame['delay_s'].mean():.6f} s")


def cmd_qt(args: argparse.Namespace) -> None:
    sample = load_sample(args.sample)
    cfg = load_config(args.config, QtConfig)
    out_dir = prepare_out_dir(args.out_dir, args.force)
    recorder = ManifestRecorder("qt", out_dir, snapshot(args, cfg))

    metrics = qt_path_metrics(sample.topology, sample.traffic, sample.routing, cfg)
    frame = pd.DataFrame(
        [{"src": p.src, "dst": p.dst, "delay_s": p.mean_delay, "loss": p.loss} for p in metrics.paths],
        columns=["src", "dst", "delay_s", "loss"],
    )
    write_csv(frame, out_dir / "paths.csv")
    if args.links:
        links = link_utilization(sample.topology, sample.traffic, sample.routing, cfg)
        write_csv(pd.DataFrame(links, columns=["link", "src", "dst", "rho", "blocking", "sojourn_s"]), out_dir / "links.csv")
    recorder.finish()
    logger.info(f"Fixed point {'converged' if metrics.converged else 'did NOT converge'}; "
                f"mean path delay {frame['delay_s'].mean():.6f} s")


def median_wall_time(fn: Callable[[], Any], repeats: int) -> float:
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return float(np.median(times))


def cmd_bench(args: argparse.Namespace) -> None:
    sample = load_sample(args.sample)
    model = load_model(args.model)
    topo, tm, routing = sample.topology, sample.traffic, sample.routing
    engines: Dict[str, Callable[[], Any]] = {
        "twin": lambda: predict(model, build_tensors(topo, tm, routing, model.scales)),
        "qt": lambda: qt_path_metrics(topo, tm, routing),
    }
    sim_cfg = None
    if args.with_sim:
        sim_cfg = sim_overrides(args, SimConfig(), resolve_seed(args, 0))
        warn_if_expensive(sim_cfg, tm, routing, event_warn_threshold())
        engines["sim"] = lambda: simulate(topo, tm, routing, sim_cfg)

    out_dir = prepare_out_dir(args.out_dir, args.force)
    recorder = ManifestRecorder("bench", out_dir, snapshot(args), sim_cfg.seed if sim_cfg else None)
    rows = []
    for name, fn in engines.items():
        median = median_wall_time(fn, args.repeats)
        rows.append({"engine": name, "median_s": median})
        logger.info(f"{name}: median {median:.4f} s over {args.repeats} runs")
    table = pd.DataFrame(rows, columns=["engine", "median_s"])
    write_csv(table, out_dir / "bench.csv")
    recorder.finish()
    print(table.to_csv(index=False, float_format="%.6g"), end="")


def cmd_whatif(args: argparse.Namespace) -> None:
    sample = load_sample(args.sample)
    kind = EvaluatorKind(args.evaluator)
    sim_cfg = sim_overrides(args, SimConfig(), resolve_seed(args, 0))
    model = load_model(args.model) if kind == EvaluatorKind.TWIN and args.model else None
    evaluator = build_evaluator(kind, sim_cfg, QtConfig(), model, warn_events=event_warn_threshold())

    out_dir = prepare_out_dir(args.out_dir, args.force)
    seed = sim_cfg.seed if kind == EvaluatorKind.SIM else None
    recorder = ManifestRecorder("whatif", out_dir, snapshot(args), seed)
    report = what_if_link_failure(sample, args.link, evaluator)
    frame = pd.DataFrame(
        [p.model_dump() for p in report.paths], columns=["src", "dst", "delay_before_s", "delay_after_s"]
    )
    write_csv(frame, out_dir / "whatif.csv")
    (out_dir / "whatif.json").write_text(report.model_dump_json(indent=2) + "\n")
    recorder.finish()


def strip_options(argv: Sequence[str], valued: Sequence[str], flags: Sequence[str]) -> List[str]:
    kept: List[str] = []
    skip = False
    for token in argv:
        if skip:
            skip = False
            continue
        name = token.split("=", 1)[0]
        if name in flags:
            continue
        if name in valued:
            skip = "=" not in token
            continue
        kept.append(token)
    return kept


def cmd_replay(args: argparse.Namespace) -> None:
    """Re-run a recorded experiment into a new directory"""
    manifest = load_manifest(args.manifest)
    recorded = manifest.config.get("argv")
    if not recorded:
        raise ConfigError(f"{args.manifest}: manifest has no recorded command line", details={"field": "argv"})
    argv = strip_options(recorded, valued=["--out-dir", "--config", "--seed", "--jobs"], flags=["--force"])

    with tempfile.TemporaryDirectory() as tmp:
        effective = manifest.config.get("effective")
        if effective is not None:
            config_path = Path(tmp) / "config.json"
            config_path.write_text(json.dumps(effective))
            argv += ["--config", str(config_path)]
        if manifest.seed is not None:
            argv += ["--seed", str(manifest.seed)]
        argv += ["--out-dir", args.out_dir] + (["--force"] if args.force else [])
        logger.info(f"Replaying: twinforge {' '.join(argv)}")

        replayed = build_parser().parse_args(argv)
        replayed.argv = argv
        replayed.jobs = 1
        replayed.handler(replayed)


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", required=True, help="Experiment directory to create")
    common.add_argument("--force", action="store_true", help="Overwrite a non-empty --out-dir")
    common.add_argument("--jobs", type=int, default=None, help="Parallel workers (default TWINFORGE_JOBS or 1)")
    common.add_argument("--verbose", action="store_true", help="Debug logging")
    common.add_argument("--quiet", action="store_true", help="Warnings only, no progress bars")

    seeded = argparse.ArgumentParser(add_help=False)
    seeded.add_argument("--seed", type=int, default=None, help="Overrides TWINFORGE_SEED and the config seed")

    sim = argparse.ArgumentParser(add_help=False)
    sim.add_argument("--sim-duration", type=float, default=None, help="Measured simulated seconds")
    sim.add_argument("--sim-warmup", type=float, default=None, help="Discarded warm-up seconds")

    parser = argparse.ArgumentParser(prog="twinforge", description="Network digital twin workbench")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-dataset", parents=[common, seeded, sim], help="Generate a labeled dataset")
    p.add_argument("--config", help="GenDatasetConfig JSON file")
    p.add_argument("--labeler", choices=[EvaluatorKind.SIM.value, EvaluatorKind.QT.value], help="Label source")
    p.add_argument("--samples", type=int, default=None, help="Number of samples")
    p.set_defaults(handler=cmd_gen_dataset)

    p = sub.add_parser("train", parents=[common, seeded], help="Train a delay twin")
    p.add_argument("--dataset", required=True, help="Dataset directory")
    p.add_argument("--config", help="TrainJobConfig JSON file")
    p.add_argument("--mode", choices=[m.value for m in TwinMode], help="Twin architecture")
    p.add_argument("--d", type=int, default=None, help="Hidden state width")
    p.add_argument("--T", type=int, default=None, help="Message-passing iterations")
    p.add_argument("--epochs", type=int, default=None, help="Training epochs")
    p.add_argument("--loss", choices=[k.value for k in LossKind], help="Training loss")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="Score models against dataset labels per size bucket")
    p.add_argument("--dataset", action="append", required=True, help="Dataset directory (repeatable)")
    p.add_argument("--model", action="append", help="Twin model file, optionally NAME=PATH (repeatable)")
    p.add_argument("--qt", action="store_true", help="Also score the queueing model")
    p.add_argument("--dump-predictions", action="store_true", help="Write per-path predictions.csv")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("optimize", parents=[common, seeded, sim], help="Delay-aware routing optimization")
    p.add_argument("--config", help="OptimizeConfig JSON file")
    p.add_argument("--evaluator", choices=[EvaluatorKind.TWIN.value, EvaluatorKind.QT.value], help="Fitness evaluator")
    p.add_argument("--model", help="Twin model file (evaluator twin)")
    p.add_argument("--iterations", type=int, default=None, help="NES iterations per intensity")
    p.set_defaults(handler=cmd_optimize)

    p = sub.add_parser("simulate", parents=[common, seeded, sim], help="Packet-level simulation of one sample")
    p.add_argument("--sample", required=True, help="Sample JSON file")
    p.add_argument("--config", help="SimConfig JSON file")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("qt", parents=[common], help="Queueing-model estimate of one sample")
    p.add_argument("--sample", required=True, help="Sample JSON file")
    p.add_argument("--config", help="QtConfig JSON file")
    p.add_argument("--links", action="store_true", help="Also write per-link links.csv")
    p.set_defaults(handler=cmd_qt)

    p = sub.add_parser("bench", parents=[common, seeded, sim], help="Median wall time of each evaluator")
    p.add_argument("--sample", required=True, help="Sample JSON file")
    p.add_argument("--model", required=True, help="Twin model file")
    p.add_argument("--with-sim", action="store_true", help="Include the simulator")
    p.add_argument("--repeats", type=int, default=5, help="Timed runs per engine")
    p.set_defaults(handler=cmd_bench)

    p = sub.add_parser("whatif", parents=[common, seeded, sim], help="Delay impact of a link failure")
    p.add_argument("--sample", required=True, help="Sample JSON file")
    p.add_argument("--link", type=int, required=True, help="Id of the failed link (its reverse fails too)")
    p.add_argument("--evaluator", choices=[k.value for k in EvaluatorKind], default=EvaluatorKind.QT.value)
    p.add_argument("--model", help="Twin model file (evaluator twin)")
    p.set_defaults(handler=cmd_whatif)

    p = sub.add_parser("replay", help="Re-run the experiment recorded in a manifest")
    p.add_argument("--manifest", required=True, help="manifest.json or its experiment directory")
    p.add_argument("--out-dir", required=True, help="New experiment directory")
    p.add_argument("--force", action="store_true", help="Overwrite a non-empty --out-dir")
    p.add_argument("--verbose", action="store_true", help="Debug logging")
    p.add_argument("--quiet", action="store_true", help="Warnings only")
    p.set_defaults(handler=cmd_replay)

    return parser


def run(args: argparse.Namespace) -> int:
    try:
        if hasattr(args, "jobs"):
            args.jobs = args.jobs or env_number("TWINFORGE_JOBS", 1, int)
        args.handler(args)
    except ConfigError as e:
        logger.error(f"Configuration error: {e.message}")
        return EXIT_CONFIG
    except TwinforgeError as e:
        logger.error(f"{e.error_code}: {e.message}")
        return EXIT_RUNTIME
    except Exception as e:
        logger.error(f"Unexpected error: {str(e)}", exc_info=args.verbose)
        return EXIT_RUNTIME
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    args.argv = argv
    configure_logging(args.verbose, args.quiet)
    return run(args)
