"""Binned count panels: event ingestion, synthetic generation, splits.

Bins are left-closed right-open on a monthly grid: bin_length "6M" means
each bin spans six calendar months and starts on the first of a month.
An event exactly on a boundary belongs to the later bin.
"""

from __future__ import annotations

import csv
import json
import re
import warnings
from dataclasses import dataclass
from datetime import date, datetime

import numpy as np

from . import hawkes as _hawkes
from . import rng as _rng
from .errors import DataValidationError, PreconditionError
from .topology import NetworkTopology

_PANEL_FORMAT = "hstconformal-panel-v1"


def _parse_bin_length(bin_length: str) -> int:
    m = re.fullmatch(r"(\d+)M", str(bin_length))
    if not m or int(m.group(1)) < 1:
        raise DataValidationError(
            f"bin_length must look like '6M' (whole months), got {bin_length!r}"
        )
    return int(m.group(1))


def _parse_date(value, what="date") -> date:
    if isinstance(value, datetime):
        return value.date()
    if isinstance(value, date):
        return value
    try:
        return date.fromisoformat(str(value))
    except ValueError:
        raise DataValidationError(f"unparseable {what}: {value!r}") from None


def _add_months(d: date, k: int) -> date:
    months = d.year * 12 + (d.month - 1) + k
    return date(months // 12, months % 12 + 1, d.day)


def _months_between(a: date, b: date) -> int:
    return (b.year - a.year) * 12 + (b.month - a.month)


def make_bin_grid(start, T: int, bin_length: str = "6M") -> tuple:
    """T bin start dates stepping by bin_length from a first-of-month start."""
    start = _parse_date(start, "grid start")
    if start.day != 1:
        raise DataValidationError("bin grid must start on the first of a month")
    step = _parse_bin_length(bin_length)
    return tuple(_add_months(start, k * step) for k in range(T))


@dataclass(frozen=True, eq=False)
class CountPanel:
    """Installation counts per bin (rows) per circuit (columns)."""

    Y: np.ndarray
    bin_start_times: tuple
    bin_length: str = "6M"
    Z: np.ndarray | None = None
    circuit_ids: tuple | None = None

    def __post_init__(self):
        Y = np.asarray(self.Y)
        if Y.ndim != 2:
            raise DataValidationError("counts must be a (bins, circuits) matrix")
        if not np.issubdtype(Y.dtype, np.integer):
            if not np.all(Y == np.floor(Y)):
                raise DataValidationError("counts must be integers")
        Y = Y.astype(np.int64)
        if (Y < 0).any():
            raise DataValidationError("counts must be nonnegative")
        T, n = Y.shape
        times = tuple(_parse_date(t, "bin start") for t in self.bin_start_times)
        if len(times) != T:
            raise DataValidationError(
                f"{len(times)} bin start times for {T} count rows"
            )
        step = _parse_bin_length(self.bin_length)
        for a, b in zip(times, times[1:]):
            if _months_between(a, b) != step or a.day != b.day:
                raise DataValidationError(
                    f"bin starts must advance by exactly {self.bin_length}: {a} -> {b}"
                )
        Z = self.Z
        if Z is not None:
            Z = np.asarray(Z, dtype=np.float64)
            if Z.ndim != 3 or Z.shape[:2] != (T, n):
                raise DataValidationError(
                    f"covariates must be (bins, circuits, p) = ({T}, {n}, p)"
                )
            Z.flags.writeable = False
        if self.circuit_ids is not None and len(self.circuit_ids) != n:
            raise DataValidationError("circuit_ids length must match circuit count")
        Y.flags.writeable = False
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "bin_start_times", times)
        object.__setattr__(self, "Z", Z)
        if self.circuit_ids is not None:
            object.__setattr__(self, "circuit_ids", tuple(self.circuit_ids))

    @property
    def T(self) -> int:
        return self.Y.shape[0]

    @property
    def n(self) -> int:
        return self.Y.shape[1]

    def rows(self, start: int, stop: int) -> "CountPanel":
        """Contiguous bin-range view (order preserving)."""
        if not (0 <= start <= stop <= self.T):
            raise PreconditionError(f"row range [{start}, {stop}) outside {self.T} bins")
        return CountPanel(
            Y=self.Y[start:stop],
            bin_start_times=self.bin_start_times[start:stop],
            bin_length=self.bin_length,
            Z=None if self.Z is None else self.Z[start:stop],
            circuit_ids=self.circuit_ids,
        )

    def to_dict(self) -> dict:
        return {
            "format": _PANEL_FORMAT,
            "bin_length": self.bin_length,
            "bin_start_times": [t.isoformat() for t in self.bin_start_times],
            "circuit_ids": None if self.circuit_ids is None else list(self.circuit_ids),
            "counts": self.Y.tolist(),
            "covariates": None if self.Z is None else self.Z.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CountPanel":
        if doc.get("format") != _PANEL_FORMAT:
            raise DataValidationError(f"unsupported panel format {doc.get('format')!r}")
        cids = doc.get("circuit_ids")
        cov = doc.get("covariates")
        return cls(
            Y=np.array(doc["counts"], dtype=np.int64),
            bin_start_times=tuple(doc["bin_start_times"]),
            bin_length=doc["bin_length"],
            Z=None if cov is None else np.array(cov, dtype=np.float64),
            circuit_ids=None if cids is None else tuple(cids),
        )

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "CountPanel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class SplitSpec:
    """Cut-off based partition: t0 is the 1-based index of the first
    calibration bin, so bins 1..t0-1 train; an optional suffix of ``test``
    bins is held out at the end."""

    t0: int
    test: int = 0

    def validate(self, T: int):
        if self.test < 0:
            raise PreconditionError("test length must be nonnegative")
        if not (1 < self.t0 < T):
            raise PreconditionError(f"need 1 < t0 < T, got t0={self.t0}, T={T}")
        if self.t0 > T - self.test:
            raise PreconditionError(
                f"no calibration bins left: t0={self.t0}, T={T}, test={self.test}"
            )


def split(panel: CountPanel, spec: SplitSpec):
    """(train, calibration, test) views; concatenation restores the panel."""
    spec.validate(panel.T)
    cut = spec.t0 - 1
    hold = panel.T - spec.test
    return panel.rows(0, cut), panel.rows(cut, hold), panel.rows(hold, panel.T)


# ---------------------------------------------------------------------------
# Event-file ingestion.

def _parse_timestamp(text: str, where: str):
    try:
        ts = datetime.fromisoformat(text.strip())
    except ValueError:
        raise DataValidationError(f"{where}: unparseable timestamp {text!r}") from None
    return ts


def ingest_events(events_file, topo: NetworkTopology, bin_length: str = "6M",
                  start=None, end=None) -> CountPanel:
    """Bin an event CSV (header circuit_id,timestamp) onto [start, end).

    Events outside the range are dropped with a counted warning; unknown
    circuit ids are an error listing the offenders.
    """
    if start is None or end is None:
        raise PreconditionError("ingest_events requires an explicit [start, end) range")
    start = _parse_date(start, "start")
    end = _parse_date(end, "end")
    if start.day != 1 or end.day != 1:
        raise DataValidationError("start and end must fall on the first of a month")
    step = _parse_bin_length(bin_length)
    months = _months_between(start, end)
    if months <= 0 or months % step != 0:
        raise DataValidationError(
            f"[{start}, {end}) does not cover a whole number of {bin_length} bins"
        )
    T = months // step
    n = topo.n
    index = {cid: i for i, cid in enumerate(topo.circuit_ids)}
    Y = np.zeros((T, n), dtype=np.int64)
    start_dt = datetime(start.year, start.month, 1)
    end_dt = datetime(end.year, end.month, 1)

    unknown = set()
    dropped = 0
    with open(events_file, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataValidationError(f"{events_file}: empty events file") from None
        if [h.strip() for h in header] != ["circuit_id", "timestamp"]:
            raise DataValidationError(
                f"{events_file}: expected header circuit_id,timestamp, got {header}"
            )
        for ln, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise DataValidationError(f"{events_file}:{ln}: expected 2 columns")
            cid = row[0].strip()
            ts = _parse_timestamp(row[1], f"{events_file}:{ln}")
            i = index.get(cid)
            if i is None:
                unknown.add(cid)
                continue
            if not (start_dt <= ts < end_dt):
                dropped += 1
                continue
            t = _months_between(start, ts.date()) // step
            Y[t, i] += 1
    if unknown:
        raise DataValidationError(
            f"{events_file}: unknown circuit ids: {sorted(unknown)[:10]}"
        )
    if dropped:
        warnings.warn(
            f"dropped {dropped} events outside [{start}, {end})",
            UserWarning,
            stacklevel=2,
        )
    return CountPanel(
        Y=Y,
        bin_start_times=make_bin_grid(start, T, bin_length),
        bin_length=bin_length,
        circuit_ids=topo.circuit_ids,
    )


def write_events(panel: CountPanel, path):
    """Serialize a panel to the event CSV format (bin start as timestamp).

    Re-ingesting on the same grid reproduces the counts exactly.
    """
    if panel.circuit_ids is None:
        raise PreconditionError("panel carries no circuit ids to write events with")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["circuit_id", "timestamp"])
        for t in range(panel.T):
            stamp = panel.bin_start_times[t].isoformat()
            for i, cid in enumerate(panel.circuit_ids):
                for _ in range(panel.Y[t, i]):
                    writer.writerow([cid, stamp])


def ingest_covariates(cov_file, topo: NetworkTopology, bin_start_times) -> np.ndarray:
    """Load a bin-level covariate CSV (circuit_id,bin_start,cov_1..cov_p).

    Missing (circuit, bin) rows are zero-filled; rows must land exactly on
    the panel's bin grid.
    """
    times = {(_parse_date(t, "bin start")): k for k, t in enumerate(bin_start_times)}
    index = {cid: i for i, cid in enumerate(topo.circuit_ids)}
    with open(cov_file, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 3 or header[0].strip() != "circuit_id" \
                or header[1].strip() != "bin_start":
            raise DataValidationError(
                f"{cov_file}: expected header circuit_id,bin_start,cov_1.."
            )
        p = len(header) - 2
        Z = np.zeros((len(times), topo.n, p))
        for ln, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != p + 2:
                raise DataValidationError(f"{cov_file}:{ln}: expected {p + 2} columns")
            cid = row[0].strip()
            i = index.get(cid)
            if i is None:
                raise DataValidationError(f"{cov_file}:{ln}: unknown circuit id {cid!r}")
            d = _parse_date(row[1].strip(), f"bin start at {cov_file}:{ln}")
            t = times.get(d)
            if t is None:
                raise DataValidationError(f"{cov_file}:{ln}: {d} is not on the bin grid")
            try:
                Z[t, i] = [float(c) for c in row[2:]]
            except ValueError:
                raise DataValidationError(
                    f"{cov_file}:{ln}: non-numeric covariate value"
                ) from None
    return Z


# ---------------------------------------------------------------------------
# Synthetic generation.

_PRESETS = {
    # mu range, uniform A scaled to this row sum over beta, beta
    "small": {"mu_low": 0.2, "mu_high": 1.0, "row_sum": 0.5, "beta": 1.0},
}


def _synthetic_topology(n: int, m: int, gen) -> NetworkTopology:
    # round-robin assignment keeps every substation nonempty; the shuffle
    # decorrelates circuit index from substation
    assign = np.array([i % m for i in range(n)])
    gen.shuffle(assign)
    width = max(3, len(str(n)))
    swidth = max(2, len(str(m)))
    return NetworkTopology.from_assignments(
        [f"c{i:0{width}d}" for i in range(n)],
        [f"s{j:0{swidth}d}" for j in assign],
    )


def _preset_model(preset: str, n: int, cap: float, floor: float, gen) -> _hawkes.HawkesModel:
    if preset not in _PRESETS:
        raise PreconditionError(f"unknown preset {preset!r}; have {sorted(_PRESETS)}")
    p = _PRESETS[preset]
    beta = p["beta"]
    mu = gen.uniform(p["mu_low"], p["mu_high"], n)
    A = gen.uniform(0.0, 1.0, (n, n))
    A *= (p["row_sum"] / beta) / A.sum(axis=1, keepdims=True)
    return _hawkes.HawkesModel(
        mu=mu, A=A, beta=beta,
        sat=_hawkes.SaturationParams(cap=cap, floor=floor),
    )


def generate_synthetic(n: int, m: int, T: int, model: _hawkes.HawkesModel | None = None,
                       seed: int = 0, preset: str = "small", cap: float = np.inf,
                       floor: float = 0.0, start="2020-01-01", bin_length: str = "6M"):
    """Random topology + ground-truth model + simulated panel.

    Returns (panel, topology, truth model); deterministic given seed.  Pass
    ``model`` to simulate from a fixed ground truth instead of the preset.
    """
    if m < 1 or n < m:
        raise PreconditionError(f"need n >= m >= 1, got n={n}, m={m}")
    if T < 2:
        raise PreconditionError(f"need T >= 2 bins, got {T}")
    topo = _synthetic_topology(n, m, _rng.generator(seed, "synth", "topo"))
    if model is None:
        truth = _preset_model(preset, n, cap, floor, _rng.generator(seed, "synth", "truth"))
    else:
        if model.n != n:
            raise PreconditionError(f"supplied model has n={model.n}, requested n={n}")
        truth = model
    truth = _hawkes.HawkesModel(
        mu=truth.mu, A=truth.A, beta=truth.beta, sat=truth.sat,
        cov_coef=truth.cov_coef, circuit_ids=topo.circuit_ids, meta=truth.meta,
    )
    Y = _hawkes.simulate_trajectory(
        truth, None, horizon=T, K=1, seed=_rng.derive(seed, "synth", "panel")
    )[0]
    panel = CountPanel(
        Y=Y,
        bin_start_times=make_bin_grid(start, T, bin_length),
        bin_length=bin_length,
        circuit_ids=topo.circuit_ids,
    )
    return panel, topo, truth
