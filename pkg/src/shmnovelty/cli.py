"""Command-line interface: simulate, train, tune, detect, run, report.

Exit codes: 0 success, 1 runtime failure, 2 usage error.  Settings come from
defaults, then ``--config`` (TOML), then explicit flags.  Outputs go to
``--out``, else ``$SHMNOVELTY_OUT``, else ``./shm_out``.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import engine
from .engine import EngineConfig, GroundTruth
from .errors import InvalidParameter, ShmNoveltyError
from .features import window_array
from .gan import GanTrainConfig
from .io import (
    DatasetFile,
    RunManifest,
    load_baseline,
    load_dataset,
    load_manifest,
    load_report,
    report_summary,
    save_baseline,
    save_dataset,
    save_manifest,
    save_report,
    save_score_trace,
    sha256_file,
)
from .synthetic import SyntheticSpec, damage_sequence_spec, generate_synthetic

OUT_ENV = "SHMNOVELTY_OUT"
log = logging.getLogger("shmnovelty")


class UsageError(Exception):
    pass


def _int_at_least(lo):
    def parse(text):
        try:
            v = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
        if v < lo:
            raise argparse.ArgumentTypeError(f"must be >= {lo}")
        return v
    return parse


def _even_window(text):
    v = _int_at_least(4)(text)
    if v % 2:
        raise argparse.ArgumentTypeError("window length must be even")
    return v


def _positive_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def _widths(text):
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated layer widths") from None


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("engine settings")
    g.add_argument("--dl", type=_even_window, help="window length D_L (samples)")
    g.add_argument("--tl", type=_int_at_least(2), help="training windows T_L")
    g.add_argument("--vl", type=_int_at_least(2), help="windows per detection iteration V_L")
    g.add_argument("--beta", type=_positive_float, help="system reliability index")
    g.add_argument("--mode", choices=engine.MODES)
    g.add_argument("--seed", type=int)
    g.add_argument("--epochs", type=_int_at_least(1))
    g.add_argument("--latent-dim", type=_int_at_least(1))
    g.add_argument("--g-hidden", type=_widths, help="generator hidden widths, e.g. 512,1024,2048")
    g.add_argument("--d-hidden", type=_widths, help="discriminator hidden widths")
    g.add_argument("--mchs-iters", type=_int_at_least(100))
    g.add_argument("--config", type=Path, help="TOML file with engine settings")
    g.add_argument("--out", type=Path, help=f"output directory (default ${OUT_ENV} or ./shm_out)")
    g.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shmnovelty", description="Streaming unsupervised novelty detection")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a synthetic dataset")
    p.add_argument("--spec", type=Path, help="JSON or TOML synthetic spec (default: damage sequence)")
    p.add_argument("--windows-per-class", type=_int_at_least(1), default=150)
    p.add_argument("--csv", action="store_true", help="write the CSV variant")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path)
    p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("train", help="train an (untuned) baseline on the first T_L windows")
    p.add_argument("dataset", type=Path)
    p.add_argument("--start", type=_int_at_least(0), default=0, help="first training window")
    _common(p)

    p = sub.add_parser("tune", help="tune thresholds of a saved baseline (no retraining)")
    p.add_argument("baseline", type=Path)
    p.add_argument("--output", type=Path, help="tuned bundle path (default <out>/baseline_tuned.zip)")
    _common(p)

    p = sub.add_parser("detect", help="scan a dataset with a tuned baseline (static)")
    p.add_argument("dataset", type=Path)
    p.add_argument("--baseline", type=Path, required=True)
    _common(p)

    p = sub.add_parser("run", help="full train/tune/detect pipeline")
    p.add_argument("dataset", type=Path, nargs="?")
    p.add_argument("--manifest", type=Path, help="re-run exactly from a saved run manifest")
    _common(p)

    p = sub.add_parser("report", help="summarise a saved report and write its score trace")
    p.add_argument("report", type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


# --- settings ---------------------------------------------------------------

_FLAG_FIELDS = {"dl": "d_l", "tl": "t_l", "vl": "v_l", "beta": "beta", "mode": "mode", "seed": "seed",
                "mchs_iters": "mchs_iterations"}
_GAN_FLAGS = {"epochs": "epochs", "latent_dim": "latent_dim", "g_hidden": "generator_hidden",
              "d_hidden": "discriminator_hidden"}


def _read_toml(path: Path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"{path}: {exc}") from None
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None


def resolve_config(args, base: EngineConfig | None = None) -> EngineConfig:
    d = (base or EngineConfig()).to_dict()
    if getattr(args, "config", None):
        file_cfg = _read_toml(args.config)
        unknown = set(file_cfg) - set(d)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        gan_over = file_cfg.pop("gan", {})
        d.update(file_cfg)
        unknown = set(gan_over) - set(d["gan"])
        if unknown:
            raise UsageError(f"unknown [gan] keys: {sorted(unknown)}")
        d["gan"].update(gan_over)
    for flag, key in _FLAG_FIELDS.items():
        if getattr(args, flag, None) is not None:
            d[key] = getattr(args, flag)
    for flag, key in _GAN_FLAGS.items():
        if getattr(args, flag, None) is not None:
            d["gan"][key] = getattr(args, flag)
    try:
        return EngineConfig.from_dict(d)
    except (InvalidParameter, TypeError) as exc:
        raise UsageError(str(exc)) from None


def out_dir(args) -> Path:
    out = args.out or os.environ.get(OUT_ENV) or "shm_out"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _windows(ds: DatasetFile, cfg: EngineConfig):
    return window_array(ds.stream, cfg.d_l)


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True, indent=1))


# --- commands ---------------------------------------------------------------

def cmd_simulate(args) -> int:
    if args.spec:
        text = args.spec.read_text()
        raw = _read_toml(args.spec) if args.spec.suffix.lower() == ".toml" else json.loads(text)
        spec = SyntheticSpec.from_dict(raw)
        if args.seed is not None:
            spec = replace(spec, seed=args.seed)
    else:
        spec = damage_sequence_spec(args.windows_per_class, seed=args.seed or 0)
    stream, bounds = generate_synthetic(spec)
    out = out_dir(args)
    path = save_dataset(out / ("dataset.csv" if args.csv else "dataset.shmd"), DatasetFile(stream, bounds or None))
    (out / "synthetic_spec.json").write_text(json.dumps(spec.to_dict(), sort_keys=True, indent=1) + "\n")
    _emit({"dataset": str(path), "channels": stream.channels, "samples": stream.length, "boundaries": bounds})
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    ds = load_dataset(args.dataset)
    windows = _windows(ds, cfg)
    if args.start + cfg.t_l > windows.shape[0]:
        raise InvalidParameter(f"dataset has {windows.shape[0]} windows; need {args.start + cfg.t_l}")
    b = engine.train_baseline(windows[args.start: args.start + cfg.t_l], cfg, 0, args.start)
    path = save_baseline(out_dir(args) / "baseline.zip", b, cfg)
    _emit({"baseline": str(path), "train_range": list(b.train_range),
           "final_losses": [float(x) for x in b.gan.loss_history[-1]]})
    return 0


def cmd_tune(args) -> int:
    b, saved_cfg = load_baseline(args.baseline)
    cfg = resolve_config(args, saved_cfg)
    if cfg.d_l != b.d_l:
        raise UsageError(f"--dl {cfg.d_l} does not match the baseline's window length {b.d_l}")
    engine.tune_baseline(b, cfg)
    path = save_baseline(args.output or out_dir(args) / "baseline_tuned.zip", b, cfg)
    _emit({"baseline": str(path), "v_l": cfg.v_l, "beta": cfg.beta,
           "thresholds": [float(x) for x in b.system.thresholds],
           "beta_element": b.system.targets.beta_element})
    return 0


def _write_run_outputs(out: Path, report, truth) -> dict:
    if truth is not None:
        engine.evaluate(report, truth, report.v_l)
    paths = {"report": str(save_report(out / "report.json", report)),
             "scores": str(save_score_trace(out / "scores.csv", report))}
    return paths


def cmd_detect(args) -> int:
    b, saved_cfg = load_baseline(args.baseline)
    if b.system is None:
        raise InvalidParameter("baseline is not tuned; run `tune` first")
    cfg = resolve_config(args, saved_cfg)
    cfg = replace(cfg, mode="static", v_l=b.system.v_l or cfg.v_l, d_l=b.d_l)
    ds = load_dataset(args.dataset)
    report = engine.run_static(_windows(ds, cfg), cfg, baseline=b)
    truth = GroundTruth(ds.boundaries) if ds.boundaries else None
    paths = _write_run_outputs(out_dir(args), report, truth)
    _emit({**paths, **report_summary(report)})
    return 0


def cmd_run(args) -> int:
    if args.manifest:
        manifest = load_manifest(args.manifest)
        cfg = manifest.engine_config()
        dataset = Path(manifest.dataset)
        if sha256_file(dataset) != manifest.dataset_sha256:
            raise InvalidParameter(f"dataset {dataset} no longer matches the manifest checksum")
    elif args.dataset is None:
        raise UsageError("run needs a dataset path or --manifest")
    else:
        cfg = resolve_config(args)
        dataset = args.dataset
    ds = load_dataset(dataset)
    truth = GroundTruth(ds.boundaries) if ds.boundaries else None
    report = engine.run_static(_windows(ds, cfg), cfg) if cfg.mode == "static" \
        else engine.run_dynamic(_windows(ds, cfg), cfg, truth)
    out = out_dir(args)
    paths = _write_run_outputs(out, report, truth)
    manifest = RunManifest(cfg.to_dict(), cfg.seed, str(Path(dataset).resolve()), sha256_file(dataset),
                           outputs=paths, truth=None if truth is None else truth.boundaries)
    paths["manifest"] = str(save_manifest(out / "manifest.json", manifest))
    _emit({**paths, **report_summary(report)})
    return 0


def cmd_report(args) -> int:
    report = load_report(args.report)
    out = out_dir(args) if args.out else args.report.parent
    trace = save_score_trace(out / f"{args.report.stem}_scores.csv", report)
    _emit({"scores": str(trace), **report_summary(report)})
    return 0


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "tune": cmd_tune, "detect": cmd_detect,
            "run": cmd_run, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"shmnovelty: error: {exc}", file=sys.stderr)
        return 2
    except (ShmNoveltyError, OSError, ValueError) as exc:
        print(f"shmnovelty: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
