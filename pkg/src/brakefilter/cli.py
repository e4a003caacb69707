"""``brakefilter`` command line.

Subcommands: generate, segment, train, infer, evaluate, sweep.

Option values resolve as: command-line flag, then ``--config`` JSON file,
then built-in defaults (M=10, epsilon=1e-10, kappa=10, critical value 0.9,
5 K-means restarts).

Exit codes: 0 ok, 2 configuration, 3 data, 4 numerical failure, 5 model I/O.
"""

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from ._io import atomic_write_text
from .errors import (
    ConfigError,
    DegenerateComponentError,
    DimensionError,
    DomainError,
    EmptyInputError,
    InsufficientDataError,
    ModelFormatError,
    MonotonicityError,
    NumericalError,
    ParseError,
    SchemaError,
    SingularMatrixError,
)
from .evaluation import cross_validate, format_plot_csv, threshold_sweep, write_report
from .gmm import bic, select_components
from .hmm import TrainConfig, load_model, run_sequence, save_model, train_brake_hmm
from .pipeline import Rejection, SegmentationRules, build_dataset, collect_events, write_events
from .simgen import SimConfig, simulate_corpus

logger = logging.getLogger("brakefilter")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_MODEL = 0, 2, 3, 4, 5

DEFAULTS = {
    "m_components": 10,
    "epsilon": 1e-10,
    "max_iter": 500,
    "restarts": 5,
    "seed": 0,
    "kappa": 10,
    "critical_value": 0.9,
    "thresholds": "0.1:0.9:0.1",
    "max_range": 120.0,
    "min_range": 10.0,
    "min_speed": 5.0,
    "min_duration": 50.0,
    "max_curvature": 1e-3,
    "min_events": 1,
    "events": 10,
    "duration": 180.0,
    "dt": 0.1,
    "jitter": 1.0,
    "select_m": None,
}


@dataclass
class RunConfig:
    subcommand: str
    inputs: list = field(default_factory=list)
    out: str = None
    model: str = None
    plot_csv: str = None
    m_components: int = 10
    select_m: str = None
    epsilon: float = 1e-10
    max_iter: int = 500
    restarts: int = 5
    seed: int = 0
    kappa: int = 10
    critical_value: float = 0.9
    thresholds: str = "0.1:0.9:0.1"
    max_range: float = 120.0
    min_range: float = 10.0
    min_speed: float = 5.0
    min_duration: float = 50.0
    max_curvature: float = 1e-3
    min_events: int = 1
    events: int = 10
    duration: float = 180.0
    dt: float = 0.1
    jitter: float = 1.0

    def validate(self):
        checks = [
            ("m_components", self.m_components >= 1),
            ("epsilon", self.epsilon > 0),
            ("max_iter", self.max_iter >= 1),
            ("restarts", self.restarts >= 1),
            ("kappa", self.kappa >= 2),
            ("critical_value", self.critical_value is None or 0 < self.critical_value < 1),
            ("max_range", self.max_range > self.min_range),
            ("min_range", self.min_range >= 0),
            ("min_speed", self.min_speed > 0),
            ("min_duration", self.min_duration >= 0),
            ("max_curvature", self.max_curvature >= 0),
            ("min_events", self.min_events >= 0),
            ("events", self.events >= 1),
            ("duration", self.duration > 0),
            ("dt", self.dt > 0),
            ("jitter", self.jitter >= 0),
        ]
        for name, ok in checks:
            if not ok:
                raise ConfigError(f"invalid value for {name}: {getattr(self, name)!r}")
        return self

    @property
    def rules(self):
        return SegmentationRules(
            max_range=self.max_range, min_range=self.min_range, min_speed=self.min_speed,
            max_curvature=self.max_curvature, min_duration=self.min_duration, min_events=self.min_events,
        )

    @property
    def train_config(self):
        return TrainConfig(
            m_components=self.m_components, epsilon=self.epsilon, max_iter=self.max_iter,
            restarts=self.restarts, seed=self.seed, critical_value=self.critical_value,
        )


def parse_m_range(text):
    """``"2..6"`` -> ``range(2, 7)``."""
    lo, sep, hi = str(text).partition("..")
    try:
        a, b = int(lo), int(hi)
    except ValueError:
        raise ConfigError(f"--select-m expects A..B, got {text!r}") from None
    if not sep or a < 1 or b < a:
        raise ConfigError(f"--select-m expects 1 <= A <= B, got {text!r}")
    return range(a, b + 1)


def parse_thresholds(text):
    """``"0.1:0.9:0.1"`` (start:stop:step, inclusive) or ``"0.1,0.5,0.9"``."""
    text = str(text).strip()
    try:
        if ":" in text:
            start, stop, step = (float(x) for x in text.split(":"))
            if not step > 0 or stop < start:
                raise ConfigError(f"bad threshold range {text!r}")
            n = int(round((stop - start) / step)) + 1
            values = [round(start + i * step, 10) for i in range(n)]
        else:
            values = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse thresholds {text!r}") from None
    if not values:
        raise ConfigError("no thresholds given")
    for v in values:
        if not 0 < v < 1:
            raise ConfigError(f"threshold {v} outside (0, 1)")
    return values


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

def _add_segmentation(p):
    g = p.add_argument_group("segmentation overrides")
    g.add_argument("--max-range", type=float, help="event ends at range >= this [m] (default 120)")
    g.add_argument("--min-range", type=float, help="event ends below this range [m] (default 10)")
    g.add_argument("--min-speed", type=float, help="event ends below this ego speed [m/s] (default 5)")
    g.add_argument("--min-duration", type=float, help="keep events strictly longer than this [s] (default 50)")
    g.add_argument("--max-curvature", type=float, help="road curvature bound [1/m] (default 1e-3)")
    g.add_argument("--min-events", type=int, help="reject a driver with fewer events (default 1)")


def _add_model(p):
    g = p.add_argument_group("model")
    g.add_argument("--m-components", type=int, help="mixture components / hidden modes (default 10)")
    g.add_argument("--epsilon", type=float, help="EM log-likelihood convergence threshold (default 1e-10)")
    g.add_argument("--max-iter", type=int, help="EM iteration cap (default 500)")
    g.add_argument("--restarts", type=int, help="K-means restarts for initialization (default 5)")


def build_parser():
    parser = argparse.ArgumentParser(prog="brakefilter", description="Learn and infer braking actions in car following.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file of option defaults")
        p.add_argument("--seed", type=int, help="random seed (default 0)")

    p = sub.add_parser("generate", help="write a synthetic trace corpus")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--events", type=int, help="number of traces (default 10)")
    p.add_argument("--duration", type=float, help="seconds per trace (default 180)")
    p.add_argument("--dt", type=float, help="sampling step [s] (default 0.1)")
    p.add_argument("--jitter", type=float, help="parameter jitter scale, 0 disables (default 1)")

    p = sub.add_parser("segment", help="extract car-following events from traces")
    common(p)
    p.add_argument("--input", nargs="+", required=True, help="trace files or directories")
    p.add_argument("--out", required=True, help="events CSV to write")
    _add_segmentation(p)

    p = sub.add_parser("train", help="fit a brake model")
    common(p)
    p.add_argument("--input", nargs="+", required=True, help="trace/event files or directories")
    p.add_argument("--out", required=True, help="model JSON to write")
    p.add_argument("--select-m", help="pick M by BIC over A..B before training")
    p.add_argument("--critical-value", type=float, help="default decoding threshold stored in the model (0.9)")
    _add_model(p)
    _add_segmentation(p)

    p = sub.add_parser("infer", help="per-tick brake estimates")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--out", required=True, help="predictions CSV to write")
    p.add_argument("--critical-value", type=float, help="decoding threshold (default: model's)")
    _add_segmentation(p)

    p = sub.add_parser("evaluate", help="k-fold cross-validation")
    common(p)
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--out", required=True, help="report JSON to write")
    p.add_argument("--plot-csv", help="per-fold CSV (default: report path with .csv)")
    p.add_argument("--kappa", type=int, help="number of folds (default 10)")
    p.add_argument("--critical-value", type=float, help="decoding threshold (default 0.9)")
    _add_model(p)
    _add_segmentation(p)

    p = sub.add_parser("sweep", help="metrics across critical values")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--out", required=True, help="sweep CSV to write")
    p.add_argument("--thresholds", help="start:stop:step or comma list (default 0.1:0.9:0.1)")
    _add_segmentation(p)
    return parser


def resolve_config(args):
    known = {f.name for f in fields(RunConfig)} - {"subcommand", "inputs"}
    file_values = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
        for key, value in raw.items():
            name = key.replace("-", "_")
            if name not in known:
                raise ConfigError(f"unknown config key {key!r}")
            file_values[name] = value
    values = {}
    for name in known:
        cli = getattr(args, name, None)
        if cli is not None:
            values[name] = cli
        elif name in file_values:
            values[name] = file_values[name]
        elif name in DEFAULTS:
            values[name] = DEFAULTS[name]
    if args.subcommand == "infer" and getattr(args, "critical_value", None) is None:
        # fall back to the threshold stored in the model file
        values["critical_value"] = file_values.get("critical_value")
    cfg = RunConfig(subcommand=args.subcommand, inputs=list(getattr(args, "input", None) or []), **values)
    return cfg.validate()


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def _load_dataset(cfg, driver_id="driver"):
    try:
        events = collect_events(cfg.inputs, cfg.rules)
    except FileNotFoundError as exc:
        raise InsufficientDataError(f"input not found: {exc}") from None
    if not events:
        raise InsufficientDataError(f"no car-following events found in {', '.join(map(str, cfg.inputs))}")
    ds = build_dataset(events, driver_id, cfg.min_events)
    if isinstance(ds, Rejection):
        raise InsufficientDataError(f"driver {ds.driver_id}: {ds.event_count} events < {ds.min_events}")
    return ds


def cmd_generate(cfg, out=None):
    out = out or sys.stdout
    template = SimConfig(duration=cfg.duration, dt=cfg.dt)
    paths = simulate_corpus(template, cfg.events, cfg.seed, cfg.out, jitter=cfg.jitter)
    print(f"wrote {len(paths)} traces and manifest.json to {cfg.out}", file=out)
    return EXIT_OK


def cmd_segment(cfg, out=None):
    out = out or sys.stdout
    try:
        events = collect_events(cfg.inputs, cfg.rules)
    except FileNotFoundError as exc:
        raise InsufficientDataError(f"input not found: {exc}") from None
    write_events(events, cfg.out)
    print(f"{len(events)} events, {sum(len(e) for e in events)} ticks -> {cfg.out}", file=out)
    return EXIT_OK


def cmd_train(cfg, out=None):
    out = out or sys.stdout
    ds = _load_dataset(cfg)
    tc = cfg.train_config
    if cfg.select_m:
        X = np.concatenate([e.zeta for e in ds.events])
        best, curve = select_components(X, parse_m_range(cfg.select_m), epsilon=cfg.epsilon,
                                        seed=cfg.seed, max_iter=cfg.max_iter, restarts=cfg.restarts)
        print("M,BIC", file=out)
        for m, value in curve:
            print(f"{m},{value!r}", file=out)
        print(f"selected M={best}", file=out)
        tc = replace(tc, m_components=best)
    model, report = train_brake_hmm([e.zeta for e in ds.events], tc)
    X = np.concatenate([e.zeta for e in ds.events])
    save_model(model, cfg.out)
    print(f"events={ds.event_count} ticks={X.shape[0]} brake_fraction={ds.brake_fraction:.4f}", file=out)
    print(f"M={model.m_components} iterations={report.iterations} converged={report.converged} "
          f"log_likelihood={report.final_log_likelihood!r} bic={bic(model.mixture, X)!r}", file=out)
    print(f"model -> {cfg.out}", file=out)
    return EXIT_OK


def cmd_infer(cfg, out=None):
    out = out or sys.stdout
    model = load_model(cfg.model)
    cv = model.default_critical_value if cfg.critical_value is None else cfg.critical_value
    try:
        events = collect_events(cfg.inputs, cfg.rules)
    except FileNotFoundError as exc:
        raise InsufficientDataError(f"input not found: {exc}") from None
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["event", "source", "t", "br_hat", "action"] + [f"alpha_{k}" for k in range(model.m_components)])
    n = 0
    for idx, ev in enumerate(events):
        res = run_sequence(model, ev.xi, cv)
        for t, b, a, al in zip(ev.t, res.br_hat, res.actions, res.alpha):
            w.writerow([idx, ev.source_trace, repr(float(t)), repr(float(b)), int(a)] + [repr(float(x)) for x in al])
        n += len(res)
    atomic_write_text(cfg.out, buf.getvalue())
    print(f"{n} ticks from {len(events)} events -> {cfg.out}", file=out)
    return EXIT_OK


def cmd_evaluate(cfg, out=None):
    out = out or sys.stdout
    ds = _load_dataset(cfg)
    report = cross_validate(ds, cfg.kappa, cfg.train_config, cfg.critical_value, cfg.seed)
    plot = cfg.plot_csv or str(Path(cfg.out).with_suffix(".csv"))
    write_report(report, cfg.out, plot)
    for name in ("accuracy", "sensitivity", "specificity"):
        m, s = report.mean[name], report.std[name]
        text = "undefined" if m is None else f"{100 * m:.2f}% +/- {100 * s:.2f}"
        print(f"{name}: {text}", file=out)
    print(f"report -> {cfg.out}, {plot}", file=out)
    return EXIT_OK


def cmd_sweep(cfg, out=None):
    out = out or sys.stdout
    thresholds = parse_thresholds(cfg.thresholds)
    model = load_model(cfg.model)
    try:
        events = collect_events(cfg.inputs, cfg.rules)
    except FileNotFoundError as exc:
        raise InsufficientDataError(f"input not found: {exc}") from None
    if not events:
        raise InsufficientDataError("no labeled events to sweep over")
    points = threshold_sweep(model, events, thresholds)
    atomic_write_text(cfg.out, format_plot_csv(None, points))
    print(f"{len(points)} thresholds -> {cfg.out}", file=out)
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "segment": cmd_segment,
    "train": cmd_train,
    "infer": cmd_infer,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
}


def _configure_logging():
    level = os.environ.get("BRAKEFILTER_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None):
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.subcommand](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ModelFormatError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (InsufficientDataError, EmptyInputError, ParseError, SchemaError, MonotonicityError,
            DomainError, DimensionError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DegenerateComponentError, SingularMatrixError, NumericalError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        if args.subcommand in ("infer", "sweep") and getattr(exc, "filename", None) == getattr(args, "model", None):
            print(f"model error: {exc}", file=sys.stderr)
            return EXIT_MODEL
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
