"""Rolling one-step evaluation, the half-nodes trial, and horizon forecasts.

The rolling harness fits once on the training block, then walks the test
suffix bin by bin: each bin gets an interval built from all data before it,
is checked for circuit- and substation-level coverage, and its score joins
the calibration pool before the next bin.  A full refit per step is
available behind ``refit_each_step``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import hawkes as _hawkes
from . import rng as _rng
from .conformal import (
    IntervalForecast,
    PipelineSettings,
    _prepare,
    _quantile_for,
    build_interval,
    score_bin,
)
from .data import CountPanel, SplitSpec
from .errors import PreconditionError
from .topology import NetworkTopology


@dataclass(frozen=True, eq=False)
class EvalReport:
    """Coverage/width metrics over the test suffix plus per-cell detail."""

    val: float
    agg_val: float
    size: float
    size_raw: float
    per_bin: tuple
    config: dict
    bins: tuple
    circuit_ids: tuple
    substation_ids: tuple
    truth: np.ndarray  # (n_test, n)
    sub_truth: np.ndarray  # (n_test, m)
    circuit_hits: np.ndarray  # (n_test, n) bool
    sub_hits: np.ndarray  # (n_test, m) bool
    widths_std: np.ndarray  # (n_test, n)
    forecasts: tuple  # per-bin IntervalForecast

    def __post_init__(self):
        if not (0.0 <= self.val <= 1.0 and 0.0 <= self.agg_val <= 1.0):
            raise PreconditionError("coverage rates must lie in [0, 1]")
        if self.size < 0.0:
            raise PreconditionError("mean width must be nonnegative")


def coverage_counts(forecast: IntervalForecast, y_t, topo: NetworkTopology):
    """Coverage indicators for one bin, from RAW bounds at both levels."""
    y = np.asarray(y_t, dtype=np.float64)
    hits = (forecast.lower <= y) & (y <= forecast.upper)
    sub_y = topo.aggregate(y)
    sub_hits = (forecast.sub_lower <= sub_y) & (sub_y <= forecast.sub_upper)
    return hits, sub_hits


def rolling_evaluate(panel: CountPanel, topo: NetworkTopology, spec: SplitSpec,
                     settings: PipelineSettings = PipelineSettings(),
                     seed: int = 0) -> EvalReport:
    """One-step-ahead intervals over the test suffix; see module docstring."""
    Y = panel.Y
    T = panel.T
    spec.validate(T)
    if spec.test < 1:
        raise PreconditionError("rolling evaluation needs a nonempty test suffix")
    test_start = T - spec.test
    model, scores = _prepare(panel, topo, spec.t0, settings, seed, cal_stop=test_start)
    scale = scores.scale

    n, m = topo.n, topo.m
    n_test = spec.test
    truth = np.empty((n_test, n), dtype=np.int64)
    sub_truth = np.empty((n_test, m), dtype=np.int64)
    circuit_hits = np.empty((n_test, n), dtype=bool)
    sub_hits = np.empty((n_test, m), dtype=bool)
    widths_std = np.empty((n_test, n))
    forecasts = []
    per_bin = []

    for step, t in enumerate(range(test_start, T)):
        if settings.refit_each_step:
            model = _hawkes.fit(
                panel.rows(0, t), topo,
                settings.fit_config(_rng.derive(seed, "fit", t)),
            )
        qest = _quantile_for(scores, settings)
        mult = _hawkes._base_mult(model, panel.Z)
        scen = _hawkes.simulate_bin(
            model, Y[:t], t=t, K=settings.K, seed=_rng.derive(seed, "cal", t),
            base_mult_row=None if mult is None else mult[t],
        )
        iv = build_interval(scen, qest, scale, topo, settings.alpha, t=t)
        hits, shits = coverage_counts(iv, Y[t], topo)

        truth[step] = Y[t]
        sub_truth[step] = topo.aggregate(Y[t])
        circuit_hits[step] = hits
        sub_hits[step] = shits
        widths_std[step] = iv.width / scale
        forecasts.append(iv)
        per_bin.append({
            "bin": t,
            "val": float(hits.mean()),
            "agg_val": float(shits.mean()),
            "size": float((iv.width / scale).mean()),
        })
        # the bin's own score joins the pool before the next bin is predicted
        scores = scores.extend(score_bin(Y[t], scen, topo, scale))

    raw_widths = np.stack([f.width for f in forecasts])
    return EvalReport(
        val=float(circuit_hits.mean()),
        agg_val=float(sub_hits.mean()),
        size=float(widths_std.mean()),
        size_raw=float(raw_widths.mean()),
        per_bin=tuple(per_bin),
        config={
            "alpha": settings.alpha,
            "K": settings.K,
            "quantile_method": settings.quantile_method,
            "seed": seed,
            "t0": spec.t0,
            "test": spec.test,
            "refit_each_step": settings.refit_each_step,
        },
        bins=tuple(range(test_start, T)),
        circuit_ids=panel.circuit_ids or tuple(topo.circuit_ids),
        substation_ids=tuple(topo.substation_ids),
        truth=truth,
        sub_truth=sub_truth,
        circuit_hits=circuit_hits,
        sub_hits=sub_hits,
        widths_std=widths_std,
        forecasts=tuple(forecasts),
    )


def _restrict_panel(panel: CountPanel, keep: np.ndarray) -> CountPanel:
    ids = panel.circuit_ids
    return CountPanel(
        Y=panel.Y[:, keep],
        bin_start_times=panel.bin_start_times,
        bin_length=panel.bin_length,
        Z=None if panel.Z is None else panel.Z[:, keep],
        circuit_ids=None if ids is None else tuple(ids[i] for i in keep),
    )


def half_nodes_trial(panel: CountPanel, topo: NetworkTopology, spec: SplitSpec,
                     settings: PipelineSettings = PipelineSettings(),
                     seed: int = 0, keep=None) -> EvalReport:
    """Rerun the rolling evaluation on a random half of the circuits.

    ``keep`` overrides the sampled circuit set (same order conventions as
    topology.subsample); with all indices kept the report matches
    rolling_evaluate exactly.
    """
    if topo.n < 2:
        raise PreconditionError("need at least 2 circuits to halve")
    if keep is None:
        gen = _rng.generator(seed, "subsample")
        keep = np.sort(gen.choice(topo.n, topo.n // 2, replace=False))
    else:
        keep = np.sort(np.asarray(list(keep), dtype=np.int64))
    sub_topo = topo.subsample(keep)
    sub_panel = _restrict_panel(panel, keep)
    return rolling_evaluate(sub_panel, sub_topo, spec, settings, seed)


@dataclass(frozen=True, eq=False)
class HorizonForecast:
    """Per-step interval forecasts plus cumulative-count envelopes."""

    steps: tuple  # IntervalForecast per horizon step
    cum_lower: np.ndarray  # (H, n) raw circuit cumulative bounds
    cum_upper: np.ndarray
    cum_sub_lower: np.ndarray  # (H, m)
    cum_sub_upper: np.ndarray
    start_bin: int
    alpha: float

    @property
    def horizon(self) -> int:
        return len(self.steps)


def horizon_forecast(panel: CountPanel, topo: NetworkTopology, t0: int,
                     settings: PipelineSettings = PipelineSettings(),
                     horizon: int = 1, seed: int = 0) -> HorizonForecast:
    """K recursive trajectories wrapped in calibrated per-step envelopes.

    Step h's interval applies the one-step calibrated quantile to the
    min/max envelope of the K trajectories at that step; cumulative
    envelopes add the observed history totals to cumulative trajectory
    counts before enveloping, so they flatten once trajectories saturate.
    At horizon 1 the first step equals the one-shot pipeline forecast.
    """
    if horizon < 1:
        raise PreconditionError("need horizon >= 1")
    Y = panel.Y
    T = panel.T
    model, scores = _prepare(panel, topo, t0, settings, seed)
    qest = _quantile_for(scores, settings)
    margin = qest.q * scores.scale

    mult = _hawkes._base_mult(model, panel.Z)
    base_mult = None if mult is None else np.tile(mult[-1], (horizon, 1))
    traj = _hawkes.simulate_trajectory(
        model, Y, horizon=horizon, K=settings.K,
        seed=_rng.derive(seed, "target"), base_mult=base_mult,
    )  # (K, H, n)

    steps = tuple(
        build_interval(
            _hawkes.ScenarioSet(samples=traj[:, h, :], t=T + h),
            qest, scores.scale, topo, settings.alpha, t=T + h,
        )
        for h in range(horizon)
    )
    observed = Y.sum(axis=0).astype(np.float64)
    cum_traj = observed[None, None, :] + np.cumsum(traj, axis=1)
    cum_lower = cum_traj.min(axis=0) - margin[None, :]
    cum_upper = cum_traj.max(axis=0) + margin[None, :]
    return HorizonForecast(
        steps=steps,
        cum_lower=cum_lower,
        cum_upper=cum_upper,
        cum_sub_lower=topo.aggregate(cum_lower),
        cum_sub_upper=topo.aggregate(cum_upper),
        start_bin=T,
        alpha=settings.alpha,
    )


# ---------------------------------------------------------------------------
# Plot-ready exports.

def write_metrics(report: EvalReport, path):
    """Plain-text metric summary; fixed key order, repr floats."""
    lines = [
        f"val={report.val!r}",
        f"agg_val={report.agg_val!r}",
        f"size={report.size!r}",
        f"size_raw={report.size_raw!r}",
        f"cells_circuit={report.circuit_hits.size}",
        f"cells_substation={report.sub_hits.size}",
    ]
    for key in sorted(report.config):
        lines.append(f"config.{key}={report.config[key]!r}")
    for row in report.per_bin:
        lines.append(
            f"bin={row['bin']} val={row['val']!r} agg_val={row['agg_val']!r} "
            f"size={row['size']!r}"
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_cells_csv(report: EvalReport, path):
    """Flat per-(unit, bin) rows: bounds, truth, coverage indicator."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["kind", "id", "bin", "truth", "lower_raw", "lower_clamped", "upper",
             "width", "covered"]
        )
        for step, t in enumerate(report.bins):
            f = report.forecasts[step]
            clamped = f.lower_clamped
            for i, cid in enumerate(report.circuit_ids):
                writer.writerow([
                    "circuit", cid, t, int(report.truth[step, i]),
                    repr(float(f.lower[i])), repr(float(clamped[i])),
                    repr(float(f.upper[i])), repr(float(f.upper[i] - f.lower[i])),
                    int(report.circuit_hits[step, i]),
                ])
            for j, sid in enumerate(report.substation_ids):
                writer.writerow([
                    "substation", sid, t, int(report.sub_truth[step, j]),
                    repr(float(f.sub_lower[j])), repr(float(max(f.sub_lower[j], 0.0))),
                    repr(float(f.sub_upper[j])),
                    repr(float(f.sub_upper[j] - f.sub_lower[j])),
                    int(report.sub_hits[step, j]),
                ])


def write_forecast_csv(hf: HorizonForecast, topo: NetworkTopology, path):
    """Per-step interval rows plus cumulative envelopes for plotting."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["kind", "id", "step", "bin", "lower_raw", "lower_clamped", "upper",
             "cum_lower", "cum_upper"]
        )
        for h, f in enumerate(hf.steps):
            clamped = f.lower_clamped
            for i, cid in enumerate(topo.circuit_ids):
                writer.writerow([
                    "circuit", cid, h, hf.start_bin + h,
                    repr(float(f.lower[i])), repr(float(clamped[i])),
                    repr(float(f.upper[i])),
                    repr(float(hf.cum_lower[h, i])), repr(float(hf.cum_upper[h, i])),
                ])
            for j, sid in enumerate(topo.substation_ids):
                writer.writerow([
                    "substation", sid, h, hf.start_bin + h,
                    repr(float(f.sub_lower[j])),
                    repr(float(max(f.sub_lower[j], 0.0))),
                    repr(float(f.sub_upper[j])),
                    repr(float(hf.cum_sub_lower[h, j])),
                    repr(float(hf.cum_sub_upper[h, j])),
                ])
