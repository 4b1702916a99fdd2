"""Command-line surface: synth, run, evaluate, forecast.

Config is a flat YAML mapping; every key can be overridden by a CLI flag of
the same name.  All outputs land under --out with fixed filenames and are
byte-deterministic given the config (seed included).

Exit codes: 0 success, 2 usage/precondition, 3 data validation, 4 numerical.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import dataclass

import numpy as np
import yaml

from . import conformal as _conformal
from . import data as _data
from . import evaluation as _evaluation
from .errors import DataValidationError, HstcError, NumericalError, PreconditionError
from .topology import NetworkTopology


def _parse_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {value!r}")


def _parse_cap(value):
    if value is None:
        return math.inf
    if isinstance(value, str) and value.strip().lower() in ("inf", "infinity", ""):
        return math.inf
    cap = float(value)
    if not cap > 0:
        raise argparse.ArgumentTypeError("cap must be positive")
    return cap


@dataclass
class RunConfig:
    # input/output paths
    events: str | None = None
    topology: str | None = None
    covariates: str | None = None
    panel: str | None = None
    out: str = "."
    # synthesis
    n: int | None = None
    m: int | None = None
    T: int | None = None
    preset: str = "small"
    cap: float = math.inf
    start: str = "2020-01-01"
    end: str | None = None
    bin_length: str = "6M"
    # pipeline
    alpha: float = 0.05
    K: int = 10
    epochs: int = 1000
    learning_rate: float = 0.01
    quantile_method: str = "empirical"
    qr_window: int = 10
    t0: int | None = None
    test_len: int | None = None
    horizon: int | None = None
    seed: int = 0
    threads: int = 1
    fit_cap: bool = True
    refit_each_step: bool = False

    def settings(self) -> _conformal.PipelineSettings:
        return _conformal.PipelineSettings(
            alpha=self.alpha,
            K=self.K,
            quantile_method=self.quantile_method,
            qr_window=self.qr_window,
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            fit_cap=self.fit_cap,
            refit_each_step=self.refit_each_step,
        )


_FIELD_TYPES = {
    "events": str, "topology": str, "covariates": str, "panel": str, "out": str,
    "n": int, "m": int, "T": int, "preset": str, "cap": _parse_cap,
    "start": str, "end": str, "bin_length": str,
    "alpha": float, "K": int, "epochs": int, "learning_rate": float,
    "quantile_method": str, "qr_window": int, "t0": int, "test_len": int,
    "horizon": int, "seed": int, "threads": int,
    "fit_cap": _parse_bool, "refit_each_step": _parse_bool,
}


def _load_config_file(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise PreconditionError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise DataValidationError(f"malformed config {path}: {exc}") from None
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise DataValidationError(f"config {path} must be a flat key/value mapping")
    return doc


def _build_config(args) -> RunConfig:
    values = {}
    if args.config:
        raw = _load_config_file(args.config)
        for key, value in raw.items():
            if key not in _FIELD_TYPES:
                raise PreconditionError(f"unknown config key {key!r}")
            if value is not None:
                values[key] = _FIELD_TYPES[key](value)
    for key in _FIELD_TYPES:
        override = getattr(args, key, None)
        if override is not None:
            values[key] = override
    cfg = RunConfig(**values)
    if not (0.0 < cfg.alpha < 1.0):
        raise PreconditionError(f"alpha must lie in (0, 1), got {cfg.alpha}")
    if cfg.K < 1:
        raise PreconditionError("K must be >= 1")
    if cfg.threads < 1:
        raise PreconditionError("threads must be >= 1")
    return cfg


def _require(cfg: RunConfig, *keys):
    missing = [k for k in keys if getattr(cfg, k) is None]
    if missing:
        raise PreconditionError(f"missing required config keys: {missing}")


def _outpath(cfg: RunConfig, name: str) -> str:
    os.makedirs(cfg.out, exist_ok=True)
    return os.path.join(cfg.out, name)


def _load_inputs(cfg: RunConfig):
    """Topology plus panel, from a panel document or an event file."""
    _require(cfg, "topology")
    topo = NetworkTopology.from_csv(cfg.topology)
    if cfg.panel is not None:
        panel = _data.CountPanel.load(cfg.panel)
        if panel.n != topo.n:
            raise DataValidationError(
                f"panel has {panel.n} circuits, topology has {topo.n}"
            )
        if panel.circuit_ids is not None and tuple(panel.circuit_ids) != tuple(topo.circuit_ids):
            raise DataValidationError("panel circuit ordering disagrees with topology")
    elif cfg.events is not None:
        _require(cfg, "end")
        panel = _data.ingest_events(cfg.events, topo, cfg.bin_length, cfg.start, cfg.end)
    else:
        raise PreconditionError("either a panel document or an events file is required")
    if cfg.covariates is not None:
        Z = _data.ingest_covariates(cfg.covariates, topo, panel.bin_start_times)
        panel = _data.CountPanel(
            Y=panel.Y, bin_start_times=panel.bin_start_times,
            bin_length=panel.bin_length, Z=Z, circuit_ids=panel.circuit_ids,
        )
    return topo, panel


def _staged(stage: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except HstcError as exc:
        raise type(exc)(f"[{stage}] {exc}") from exc


def _fmt(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# Commands.

def cmd_synth(cfg: RunConfig) -> int:
    _require(cfg, "n", "m", "T")
    panel, topo, truth = _staged(
        "synthesize", _data.generate_synthetic,
        cfg.n, cfg.m, cfg.T, seed=cfg.seed, preset=cfg.preset, cap=cfg.cap,
        start=cfg.start, bin_length=cfg.bin_length,
    )
    _staged("write outputs", panel.save, _outpath(cfg, "panel.json"))
    _staged("write outputs", topo.to_csv, _outpath(cfg, "topology.csv"))
    _staged("write outputs", truth.save, _outpath(cfg, "truth_model.json"))
    print(f"synth: n={cfg.n} m={cfg.m} T={cfg.T} total={int(panel.Y.sum())}")
    return 0


def _write_interval_tables(cfg: RunConfig, forecast, topo):
    rows_c = [
        (cid, forecast.t, forecast.lower[i], forecast.lower_clamped[i],
         forecast.upper[i], forecast.upper[i] - forecast.lower[i])
        for i, cid in enumerate(topo.circuit_ids)
    ]
    rows_s = [
        (sid, forecast.t, forecast.sub_lower[j], max(forecast.sub_lower[j], 0.0),
         forecast.sub_upper[j], forecast.sub_upper[j] - forecast.sub_lower[j])
        for j, sid in enumerate(topo.substation_ids)
    ]
    for name, rows in (("circuit_intervals.csv", rows_c),
                       ("substation_intervals.csv", rows_s)):
        with open(_outpath(cfg, name), "w", encoding="utf-8", newline="") as fh:
            fh.write("id,bin,lower_raw,lower_clamped,upper,width\n")
            for rid, t, lo, loc, up, w in rows:
                fh.write(f"{rid},{t},{_fmt(lo)},{_fmt(loc)},{_fmt(up)},{_fmt(w)}\n")


def cmd_run(cfg: RunConfig) -> int:
    _require(cfg, "t0")
    topo, panel = _staged("load inputs", _load_inputs, cfg)
    forecast, audit = _staged(
        "pipeline", _conformal.hst_conformal_pipeline,
        panel, topo, cfg.t0, settings=cfg.settings(), seed=cfg.seed,
    )
    _staged("write outputs", _write_interval_tables, cfg, forecast, topo)
    _staged("write outputs", audit.save, _outpath(cfg, "audit.json"))
    print(f"run: target_bin={forecast.t} alpha={cfg.alpha} "
          f"mean_width={_fmt(np.mean(forecast.width))}")
    return 0


def cmd_evaluate(cfg: RunConfig) -> int:
    _require(cfg, "t0", "test_len")
    topo, panel = _staged("load inputs", _load_inputs, cfg)
    spec = _data.SplitSpec(t0=cfg.t0, test=cfg.test_len)
    report = _staged(
        "evaluate", _evaluation.rolling_evaluate,
        panel, topo, spec, cfg.settings(), seed=cfg.seed,
    )
    _staged("write outputs", _evaluation.write_metrics, report, _outpath(cfg, "metrics.txt"))
    _staged("write outputs", _evaluation.write_cells_csv, report, _outpath(cfg, "eval_cells.csv"))
    print(f"evaluate: val={report.val!r} agg_val={report.agg_val!r} "
          f"size={report.size!r}")
    return 0


def cmd_forecast(cfg: RunConfig) -> int:
    _require(cfg, "t0", "horizon")
    topo, panel = _staged("load inputs", _load_inputs, cfg)
    hf = _staged(
        "forecast", _evaluation.horizon_forecast,
        panel, topo, cfg.t0, cfg.settings(), cfg.horizon, seed=cfg.seed,
    )
    _staged("write outputs", _evaluation.write_forecast_csv, hf, topo,
            _outpath(cfg, "forecast_envelopes.csv"))
    print(f"forecast: steps={hf.horizon} units={topo.n + topo.m}")
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "run": cmd_run,
    "evaluate": cmd_evaluate,
    "forecast": cmd_forecast,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hstconformal",
        description="Hierarchical conformal intervals for circuit/substation "
                    "event-count forecasts",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, blurb in (
        ("synth", "generate a synthetic panel, topology, and ground-truth model"),
        ("run", "one-shot calibrated interval forecast for the next bin"),
        ("evaluate", "rolling one-step evaluation over a test suffix"),
        ("forecast", "multi-step trajectory envelopes"),
    ):
        p = sub.add_parser(name, help=blurb)
        p.add_argument("--config", help="flat YAML config file")
        for key, conv in _FIELD_TYPES.items():
            p.add_argument(f"--{key}", type=conv, default=None)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _build_config(args)
        return _COMMANDS[args.command](cfg)
    except PreconditionError as exc:
        print(f"precondition error: {exc}", file=sys.stderr)
        return 2
    except DataValidationError as exc:
        print(f"data validation error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
