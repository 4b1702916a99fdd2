"""Discrete-time multivariate Hawkes count model with saturation.

Counts live on a fixed bin grid.  Given the history of bins before t, the
bin-t intensity for circuit i is

    lambda_it = gamma_t * ( mu_i + sum_{t'<t} sum_{i'} A[i,i'] * y_{i',t'}
                            * beta * exp(-beta * (t - t')) )

with saturation factor gamma_t = max(floor, 1 - N_{<t}/cap) where N_{<t} is
the network-wide cumulative count before t.  Counts in bin t are Poisson
with mean lambda_it given the history; events within a bin share the bin
timestamp, so thinning over the piecewise-constant intensity reduces
exactly to one Poisson draw per circuit per bin.

Likelihood values omit the log(y!) term throughout: it is constant in the
parameters, so fitting and model comparison are unaffected.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import rng as _rng
from ._kernels import ACTIVE
from .errors import DataValidationError, NumericalError, PreconditionError

_MODEL_FORMAT = "hstconformal-model-v1"
_GAMMA_FORM = "linear_saturation_v1"

_ADAM_B1 = 0.9
_ADAM_B2 = 0.999
_ADAM_EPS = 1e-8
_MAX_HALVINGS = 60


@dataclass(frozen=True)
class SaturationParams:
    """Network-wide adoption cap and lower clamp for the saturation factor."""

    cap: float = math.inf
    floor: float = 0.0

    def __post_init__(self):
        if not self.cap > 0:
            raise PreconditionError(f"cap must be positive, got {self.cap}")
        if not (0.0 <= self.floor < 1.0):
            raise PreconditionError(f"floor must lie in [0, 1), got {self.floor}")


@dataclass(frozen=True)
class FitConfig:
    epochs: int = 1000
    learning_rate: float = 0.01
    seed: int = 0
    convergence_tol: float = 1e-8
    fit_cap: bool = True
    floor: float = 0.0
    same_substation_only: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise PreconditionError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise PreconditionError("learning_rate must be positive")
        if self.convergence_tol < 0:
            raise PreconditionError("convergence_tol must be nonnegative")
        if not (0.0 <= self.floor < 1.0):
            raise PreconditionError("floor must lie in [0, 1)")


@dataclass(frozen=True)
class FitMeta:
    epochs_run: int
    loglik_init: float
    loglik_final: float
    converged: bool
    seed: int
    n_train_bins: int


@dataclass(frozen=True, eq=False)
class ScenarioSet:
    """K joint count draws for one target bin."""

    samples: np.ndarray  # (K, n) int64
    t: int

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.int64)
        if s.ndim != 2:
            raise PreconditionError("samples must be a (K, n) matrix")
        if s.shape[0] < 1:
            raise PreconditionError("need K >= 1 scenarios")
        if (s < 0).any():
            raise PreconditionError("scenario counts must be nonnegative")
        s.flags.writeable = False
        object.__setattr__(self, "samples", s)

    @property
    def K(self) -> int:
        return self.samples.shape[0]

    @property
    def n(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True, eq=False)
class HawkesModel:
    """Immutable parameter set; see the module docstring for the intensity."""

    mu: np.ndarray
    A: np.ndarray
    beta: float
    sat: SaturationParams = field(default_factory=SaturationParams)
    cov_coef: np.ndarray | None = None
    circuit_ids: tuple | None = None
    meta: FitMeta | None = None

    def __post_init__(self):
        mu = np.ascontiguousarray(self.mu, dtype=np.float64)
        A = np.ascontiguousarray(self.A, dtype=np.float64)
        if mu.ndim != 1:
            raise PreconditionError("mu must be a vector")
        n = mu.shape[0]
        if A.shape != (n, n):
            raise PreconditionError(f"A must be ({n}, {n}), got {A.shape}")
        if (mu < 0).any() or (A < 0).any():
            raise PreconditionError("mu and A must be nonnegative")
        if not self.beta > 0:
            raise PreconditionError("beta must be positive")
        if self.circuit_ids is not None and len(self.circuit_ids) != n:
            raise PreconditionError("circuit_ids length must match mu")
        cc = self.cov_coef
        if cc is not None:
            cc = np.ascontiguousarray(cc, dtype=np.float64)
            if cc.ndim != 1:
                raise PreconditionError("cov_coef must be a vector")
            cc.flags.writeable = False
        rowsum = float(A.sum(axis=1).max()) if n else 0.0
        # an event adds beta * e^(-beta * d) to the excitation at lag d, so
        # its expected offspring count is the row sum times the summed mass
        mass = self.beta * math.exp(-self.beta) / -math.expm1(-self.beta)
        if rowsum * mass > 1.0:
            warnings.warn(
                f"largest branching ratio = {rowsum * mass:.3g} > 1: "
                "excitation may be explosive",
                UserWarning,
                stacklevel=2,
            )
        mu.flags.writeable = False
        A.flags.writeable = False
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "cov_coef", cc)

    @property
    def n(self) -> int:
        return self.mu.shape[0]

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        cap = self.sat.cap
        meta = None
        if self.meta is not None:
            meta = {
                "epochs_run": self.meta.epochs_run,
                "loglik_init": self.meta.loglik_init,
                "loglik_final": self.meta.loglik_final,
                "converged": self.meta.converged,
                "seed": self.meta.seed,
                "n_train_bins": self.meta.n_train_bins,
            }
        return {
            "format": _MODEL_FORMAT,
            "gamma_form": _GAMMA_FORM,
            "n": self.n,
            "circuit_ids": list(self.circuit_ids) if self.circuit_ids else None,
            "mu": self.mu.tolist(),
            "A": self.A.tolist(),
            "beta": self.beta,
            "cap": "inf" if math.isinf(cap) else cap,
            "floor": self.sat.floor,
            "cov_coef": None if self.cov_coef is None else self.cov_coef.tolist(),
            "meta": meta,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "HawkesModel":
        if doc.get("format") != _MODEL_FORMAT:
            raise DataValidationError(f"unsupported model format {doc.get('format')!r}")
        if doc.get("gamma_form") != _GAMMA_FORM:
            raise DataValidationError(
                f"unsupported saturation form {doc.get('gamma_form')!r}"
            )
        cap = doc["cap"]
        cap = math.inf if cap == "inf" else float(cap)
        meta = None
        if doc.get("meta") is not None:
            meta = FitMeta(**doc["meta"])
        cids = doc.get("circuit_ids")
        cc = doc.get("cov_coef")
        return cls(
            mu=np.array(doc["mu"], dtype=np.float64),
            A=np.array(doc["A"], dtype=np.float64),
            beta=float(doc["beta"]),
            sat=SaturationParams(cap=cap, floor=float(doc["floor"])),
            cov_coef=None if cc is None else np.array(cc, dtype=np.float64),
            circuit_ids=None if cids is None else tuple(cids),
            meta=meta,
        )

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "HawkesModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# Shared helpers.

def _panel_counts(panel) -> np.ndarray:
    Y = np.asarray(getattr(panel, "Y", panel))
    if Y.ndim != 2:
        raise PreconditionError("counts must form a (bins, circuits) matrix")
    if (Y < 0).any():
        raise DataValidationError("counts must be nonnegative")
    return Y

def _history_array(history, n: int) -> np.ndarray:
    if history is None:
        return np.zeros((0, n), dtype=np.float64)
    h = np.asarray(getattr(history, "Y", history), dtype=np.float64)
    if h.size == 0:
        return np.zeros((0, n), dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != n:
        raise PreconditionError(
            f"history must have {n} columns (circuits), got shape {h.shape}"
        )
    return h

def _gamma_series(bin_totals: np.ndarray, cap: float, floor: float):
    """Saturation factors for each bin plus d(gamma)/d(cap), zero where clamped."""
    T = bin_totals.shape[0]
    before = np.concatenate(([0.0], np.cumsum(bin_totals)))[:T]
    raw = 1.0 - before / cap
    gamma = np.maximum(floor, raw)
    if math.isinf(cap):
        dgam = np.zeros(T)
    else:
        dgam = np.where(raw > floor, before / (cap * cap), 0.0)
    return gamma, dgam

def _base_mult(model: HawkesModel, Z) -> np.ndarray | None:
    """Per-bin multiplicative modulation of mu from covariates, if enabled."""
    if model.cov_coef is None:
        return None
    if Z is None:
        raise PreconditionError("model has covariate coefficients but no covariates given")
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 3 or Z.shape[2] != model.cov_coef.shape[0]:
        raise PreconditionError("covariates must be (bins, circuits, p) matching cov_coef")
    return np.exp(Z @ model.cov_coef)

def _normalize_bins(bins, T: int):
    if bins is None:
        return 0, T
    if isinstance(bins, range):
        b0, b1 = bins.start, bins.stop
        if bins.step != 1:
            raise PreconditionError("bin range must have step 1")
    else:
        b0, b1 = int(bins[0]), int(bins[1])
    if not (0 <= b0 < b1 <= T):
        raise PreconditionError(f"bin range [{b0}, {b1}) outside panel of {T} bins")
    return b0, b1


def intensity(model: HawkesModel, history, base_mult_row=None) -> np.ndarray:
    """Intensity vector for the bin immediately after ``history``.

    ``history`` holds counts for all earlier bins, one row per bin; an empty
    or None history gives the pure-baseline first bin.
    """
    h = _history_array(history, model.n)
    G = ACTIVE.excitation_series(h, model.beta)[-1]
    gamma = max(model.sat.floor, 1.0 - float(h.sum()) / model.sat.cap)
    base = model.mu if base_mult_row is None else model.mu * base_mult_row
    return gamma * (base + model.A @ G)


def _loglik_with_cov(counts, G, gamma, mu, A, mult, b0, b1):
    # Covariate-modulated variant kept off the kernel hot path.
    Y = counts[b0:b1]
    base = mu[None, :] * mult[b0:b1] + G[b0:b1] @ A.T
    lam = gamma[b0:b1, None] * base
    if np.any((lam <= 0.0) & (Y > 0.0)):
        return -np.inf
    pos = lam > 0.0
    safe = np.where(pos, lam, 1.0)
    return float(np.sum(np.where(Y > 0.0, Y * np.log(safe), 0.0) - lam))


def log_likelihood(model: HawkesModel, panel, bins=None) -> float:
    """Poisson log likelihood of the selected bins given prior history.

    The log(y!) term is omitted (constant in parameters).  Returns -inf when
    any selected cell has positive count but zero intensity.
    """
    Y = _panel_counts(panel)
    if Y.shape[1] != model.n:
        raise PreconditionError(f"panel has {Y.shape[1]} circuits, model has {model.n}")
    b0, b1 = _normalize_bins(bins, Y.shape[0])
    counts = Y.astype(np.float64)
    G = ACTIVE.excitation_series(counts, model.beta)
    gamma, _ = _gamma_series(counts.sum(axis=1), model.sat.cap, model.sat.floor)
    mult = _base_mult(model, getattr(panel, "Z", None))
    if mult is not None:
        return _loglik_with_cov(counts, G, gamma, model.mu, model.A, mult, b0, b1)
    return float(ACTIVE.loglik_value(counts, G, gamma, model.mu, model.A, b0, b1))


@dataclass(frozen=True, eq=False)
class GradientResult:
    """Gradient in the unconstrained parameterization (see ``fit``)."""

    loglik: float
    d_mu: np.ndarray
    d_A: np.ndarray
    d_beta: float
    d_cap: float


def _grads_raw(model: HawkesModel, counts: np.ndarray, b0: int, b1: int):
    G = ACTIVE.excitation_series(counts, model.beta)
    H = ACTIVE.excitation_beta_series(counts, model.beta, G)
    gamma, dgam = _gamma_series(counts.sum(axis=1), model.sat.cap, model.sat.floor)
    return ACTIVE.loglik_grads(counts, G, H, gamma, dgam, model.mu, model.A, b0, b1)


def _to_unconstrained_grads(model: HawkesModel, dmu, dA, dbeta, dcap):
    # mu, A, cap use an exponential map; beta a softplus map, whose derivative
    # expressed through the constrained value is 1 - exp(-beta).
    g_mu = dmu * model.mu
    g_A = dA * model.A
    g_beta = dbeta * (1.0 - math.exp(-model.beta))
    g_cap = 0.0 if math.isinf(model.sat.cap) else dcap * model.sat.cap
    return g_mu, g_A, g_beta, g_cap


def log_likelihood_gradient(model: HawkesModel, panel, bins=None) -> GradientResult:
    """Exact gradient of ``log_likelihood`` in unconstrained coordinates.

    Coordinates: log mu, log A (elementwise), inverse-softplus beta, log cap.
    Raises NumericalError when the likelihood is not finite at the point.
    """
    Y = _panel_counts(panel)
    if Y.shape[1] != model.n:
        raise PreconditionError(f"panel has {Y.shape[1]} circuits, model has {model.n}")
    if model.cov_coef is not None:
        raise PreconditionError("gradients do not support the covariate channel")
    b0, b1 = _normalize_bins(bins, Y.shape[0])
    counts = Y.astype(np.float64)
    ll, dmu, dA, dbeta, dcap = _grads_raw(model, counts, b0, b1)
    if not math.isfinite(ll):
        raise NumericalError("log likelihood is not finite at this parameter point")
    g_mu, g_A, g_beta, g_cap = _to_unconstrained_grads(model, dmu, dA, dbeta, dcap)
    return GradientResult(float(ll), g_mu, g_A, float(g_beta), float(g_cap))


# ---------------------------------------------------------------------------
# Fitting.

def _softplus(u: float) -> float:
    return math.log1p(math.exp(-abs(u))) + max(u, 0.0)

def _softplus_inv(x: float) -> float:
    # log(exp(x) - 1), stable for small and large x
    return x + math.log(-math.expm1(-x))


class _Packer:
    """Flat packing of unconstrained parameters for the optimizer."""

    def __init__(self, n: int, fit_cap: bool, mask: np.ndarray | None):
        self.n = n
        self.fit_cap = fit_cap
        self.mask = mask

    def pack(self, u_mu, u_A, u_beta, u_cap):
        parts = [u_mu, u_A.ravel(), [u_beta]]
        if self.fit_cap:
            parts.append([u_cap])
        return np.concatenate(parts)

    def unpack(self, u, cap_fixed):
        n = self.n
        u_mu = u[:n]
        u_A = u[n : n + n * n].reshape(n, n)
        u_beta = float(u[n + n * n])
        cap = math.exp(float(u[n + n * n + 1])) if self.fit_cap else cap_fixed
        mu = np.exp(u_mu)
        A = np.exp(u_A)
        if self.mask is not None:
            A = A * self.mask
        beta = _softplus(u_beta)
        return mu, A, beta, cap

    def pack_grads(self, g_mu, g_A, g_beta, g_cap):
        if self.mask is not None:
            g_A = g_A * self.mask
        parts = [g_mu, g_A.ravel(), [g_beta]]
        if self.fit_cap:
            parts.append([g_cap])
        return np.concatenate(parts)


def fit(panel, topo, cfg: FitConfig = FitConfig()) -> HawkesModel:
    """Maximize the likelihood by adaptive-moment gradient ascent.

    Parameters are optimized in unconstrained space (exponential map for mu,
    A, cap; softplus for beta) from a scale-aware initialization with a
    seeded +/-10% perturbation.  The returned model is the best point seen,
    so its likelihood never falls below the initialization value.  Steps
    that land on a non-finite likelihood are retried with halved length.
    """
    Y = _panel_counts(panel)
    T, n = Y.shape
    if T < 2:
        raise PreconditionError("need at least 2 training bins")
    if topo is not None and topo.n != n:
        raise PreconditionError(f"topology has {topo.n} circuits, panel has {n}")
    counts = Y.astype(np.float64)
    total = float(counts.sum())

    gen = _rng.generator(cfg.seed, "fit")
    def perturb(shape=None):
        return 1.0 + 0.1 * gen.uniform(-1.0, 1.0, shape)

    mu0 = np.maximum(counts.mean(axis=0), 1e-3) * perturb(n)
    A0 = np.full((n, n), 1e-2) * perturb((n, n))
    beta0 = 1.0 * perturb()
    # when the cap is not optimized it stays switched off entirely; a frozen
    # finite cap would bake a spurious downward trend into every intensity
    cap0 = max(2.0 * total, 1.0) * perturb() if cfg.fit_cap else math.inf

    mask = None
    if cfg.same_substation_only:
        if topo is None:
            raise PreconditionError("same_substation_only requires a topology")
        mask = topo.shared_membership().astype(np.float64)

    packer = _Packer(n, cfg.fit_cap, mask)
    u = packer.pack(np.log(mu0), np.log(A0), _softplus_inv(float(beta0)),
                    math.log(cap0) if cfg.fit_cap else 0.0)

    def evaluate(uvec, want_grads: bool):
        mu, A, beta, cap = packer.unpack(uvec, cap0)
        G = ACTIVE.excitation_series(counts, beta)
        gamma, dgam = _gamma_series(counts.sum(axis=1), cap, cfg.floor)
        if not want_grads:
            return float(ACTIVE.loglik_value(counts, G, gamma, mu, A, 0, T)), None
        H = ACTIVE.excitation_beta_series(counts, beta, G)
        ll, dmu, dA, dbeta, dcap = ACTIVE.loglik_grads(
            counts, G, H, gamma, dgam, mu, A, 0, T
        )
        if not math.isfinite(ll):
            return float(ll), None
        g_mu = dmu * mu
        g_A = dA * A
        g_beta = dbeta * (1.0 - math.exp(-beta))
        g_cap = dcap * cap if cfg.fit_cap else 0.0
        return float(ll), packer.pack_grads(g_mu, g_A, g_beta, g_cap)

    ll, grads = evaluate(u, True)
    if not math.isfinite(ll):
        raise NumericalError("likelihood not finite at initialization")
    ll_init = ll
    best_ll, best_u = ll, u.copy()

    m = np.zeros_like(u)
    v = np.zeros_like(u)
    epochs_run = 0
    converged = False
    ll_prev = ll
    for k in range(1, cfg.epochs + 1):
        m = _ADAM_B1 * m + (1.0 - _ADAM_B1) * grads
        v = _ADAM_B2 * v + (1.0 - _ADAM_B2) * grads * grads
        mhat = m / (1.0 - _ADAM_B1**k)
        vhat = v / (1.0 - _ADAM_B2**k)
        delta = cfg.learning_rate * mhat / (np.sqrt(vhat) + _ADAM_EPS)

        scale = 1.0
        for _ in range(_MAX_HALVINGS):
            u_try = u + scale * delta
            ll_try, _ = evaluate(u_try, False)
            if math.isfinite(ll_try):
                break
            scale *= 0.5
        else:
            raise NumericalError(
                f"no finite likelihood along the ascent direction at epoch {k}"
            )
        u = u_try
        epochs_run = k

        ll, grads = evaluate(u, True)
        if not math.isfinite(ll):
            # grads evaluation re-checks the same point; keep the invariant
            raise NumericalError(f"likelihood became non-finite at epoch {k}")
        if ll > best_ll:
            best_ll, best_u = ll, u.copy()
        if abs(ll - ll_prev) <= cfg.convergence_tol * (1.0 + abs(ll_prev)):
            converged = True
            break
        ll_prev = ll

    mu, A, beta, cap = packer.unpack(best_u, cap0)
    meta = FitMeta(
        epochs_run=epochs_run,
        loglik_init=ll_init,
        loglik_final=best_ll,
        converged=converged,
        seed=cfg.seed,
        n_train_bins=T,
    )
    return HawkesModel(
        mu=mu,
        A=A,
        beta=beta,
        sat=SaturationParams(cap=cap, floor=cfg.floor),
        circuit_ids=None if topo is None else tuple(topo.circuit_ids),
        meta=meta,
    )


# ---------------------------------------------------------------------------
# Simulation.

def _sim_inputs(model: HawkesModel, history, horizon: int, base_mult):
    h = _history_array(history, model.n)
    g0 = ACTIVE.excitation_series(h, model.beta)[-1]
    n0 = float(h.sum())
    if base_mult is None:
        bm = np.ones((horizon, model.n))
    else:
        bm = np.asarray(base_mult, dtype=np.float64)
        if bm.shape != (horizon, model.n):
            raise PreconditionError(
                f"base_mult must be ({horizon}, {model.n}), got {bm.shape}"
            )
    return g0, n0, bm


def simulate_bin(model: HawkesModel, history, t=None, K: int = 10, seed: int = 0,
                 base_mult_row=None) -> ScenarioSet:
    """K independent joint count draws for the bin after ``history``.

    Each sample uses its own derived generator (seed, sample index), so the
    collection order is deterministic and samples could run in parallel.
    """
    if K < 1:
        raise PreconditionError("need K >= 1")
    h = _history_array(history, model.n)
    if t is None:
        t = h.shape[0]
    bm = None if base_mult_row is None else np.asarray(base_mult_row, float)[None, :]
    g0, n0, bm = _sim_inputs(model, h, 1, bm)
    out = np.empty((K, model.n), dtype=np.int64)
    for k in range(K):
        gen = _rng.generator(seed, k)
        out[k] = ACTIVE.simulate_counts(
            gen, model.mu, model.A, model.beta, model.sat.cap, model.sat.floor,
            g0, n0, bm, 1,
        )[0]
    return ScenarioSet(samples=out, t=int(t))


def simulate_trajectory(model: HawkesModel, history, horizon: int, K: int = 10,
                        seed: int = 0, base_mult=None) -> np.ndarray:
    """K recursive trajectories of shape (horizon, n).

    Each trajectory extends its own simulated history bin by bin; trajectory
    k draws from the derived generator (seed, k), matching ``simulate_bin``
    exactly at horizon 1.
    """
    if horizon < 1:
        raise PreconditionError("need horizon >= 1")
    if K < 1:
        raise PreconditionError("need K >= 1")
    g0, n0, bm = _sim_inputs(model, history, horizon, base_mult)
    out = np.empty((K, horizon, model.n), dtype=np.int64)
    for k in range(K):
        gen = _rng.generator(seed, k)
        out[k] = ACTIVE.simulate_counts(
            gen, model.mu, model.A, model.beta, model.sat.cap, model.sat.floor,
            g0, n0, bm, horizon,
        )
    return out
