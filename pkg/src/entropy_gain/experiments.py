"""Parameter sweeps that compare finite-n entropy quantities with their limits.

Each ``run_*`` function takes a plain JSON-style config dict, validates it
(unknown keys are rejected), sweeps the grid and returns an
:class:`ExperimentReport`. Warnings raised while computing a grid point are
recorded by class name in that point's ``warning_flags``.

Finite-n values of the log-det quantities behave like ``L + c/n``, so the
default limit estimate is a least-squares fit of that model over the tail of
the grid rather than a plain tail mean (which is biased by ``c/n``).
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import threading
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
from scipy.signal import lfilter

from . import gaussian as gs
from .gaussian import DisturbanceSpec, InputSpec, IllConditionedWarning
from .lti import (
    TransferFunction,
    closed_loop,
    from_coeffs,
    from_impulse,
    jensen_log_integral,
    make_tf,
    nmp_summary,
)
from .processes import ProcessSpec, adversarial_probe, entropy_balance_probe
from .toeplitz import (
    OverflowBudgetError,
    conv_matrix,
    decay_rate_fit,
    effective_entropy_gain,
    overflow_safe_n,
    svd_spectrum,
)

log = logging.getLogger(__name__)

__all__ = [
    "ConfigError",
    "Record",
    "Series",
    "ExperimentReport",
    "fit_limit",
    "log_grid",
    "parse_filter",
    "rdf_reverse_waterfill",
    "rdf_gap",
    "networked_information",
    "networked_information_dense",
    "feedback_rate",
    "segment_bin_entropy",
    "quantized_discrepancy",
    "quantized_closed_form",
    "DEFAULTS",
    "RUNNERS",
    "run",
]

LN2 = math.log(2.0)


class ConfigError(ValueError):
    """Invalid experiment configuration."""


# -- reports ----------------------------------------------------------------


@dataclass(frozen=True)
class Record:
    n: float
    value: float
    warning_flags: tuple[str, ...] = ()
    series: str = "main"


@dataclass(frozen=True)
class Series:
    name: str
    fitted_limit: float
    target: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(abs(self.fitted_limit - self.target) <= self.tolerance)


@dataclass
class ExperimentReport:
    experiment: str
    config: dict
    records: list[Record]
    series: list[Series]
    limit_method: str = "tail_extrapolate"
    wall_time: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.series)

    @property
    def fitted_limit(self) -> float:
        return self.series[0].fitted_limit

    @property
    def target(self) -> float:
        return self.series[0].target

    @property
    def tolerance(self) -> float:
        return self.series[0].tolerance

    def values(self, series: str = "main") -> np.ndarray:
        return np.array([r.value for r in self.records if r.series == series])

    def grid(self, series: str = "main") -> np.ndarray:
        return np.array([r.n for r in self.records if r.series == series])

    @property
    def multi_series(self) -> bool:
        return len(self.series) > 1

    def to_dict(self, unit: str = "nats") -> dict:
        """JSON-ready dict. Wall time is left out so reports are reproducible byte for byte."""
        scale = _unit_scale(unit)

        def series_dict(s: Series) -> dict:
            return {
                "name": s.name,
                "fitted_limit": s.fitted_limit * scale,
                "target": s.target * scale,
                "tolerance": s.tolerance * scale,
                "pass": s.passed,
            }

        return {
            "experiment": self.experiment,
            "config": self.config,
            "unit": unit,
            "limit_method": self.limit_method,
            "fitted_limit": self.fitted_limit * scale,
            "target": self.target * scale,
            "tolerance": self.tolerance * scale,
            "pass": self.passed,
            "series": [series_dict(s) for s in self.series],
            "records": [
                {
                    **({"series": r.series} if self.multi_series else {}),
                    "n": r.n,
                    "value": r.value * scale,
                    "warning_flags": list(r.warning_flags),
                }
                for r in self.records
            ],
            **({"extra": self.extra} if self.extra else {}),
        }

    def to_json(self, unit: str = "nats") -> str:
        return json.dumps(self.to_dict(unit), indent=2, sort_keys=True) + "\n"

    def to_csv(self, unit: str = "nats") -> str:
        scale = _unit_scale(unit)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        head = ["n", f"value_{unit}_per_sample", "warning_flags"]
        writer.writerow((["series"] if self.multi_series else []) + head)
        for r in self.records:
            row = [_fmt(r.n), repr(float(r.value * scale)), ";".join(r.warning_flags)]
            writer.writerow(([r.series] if self.multi_series else []) + row)
        return buf.getvalue()


def _fmt(n: float) -> str:
    return str(int(n)) if float(n).is_integer() else repr(float(n))


def _unit_scale(unit: str) -> float:
    if unit == "nats":
        return 1.0
    if unit == "bits":
        return 1.0 / LN2
    raise ConfigError(f"unknown unit {unit!r}")


def fit_limit(ns: Sequence[float], values: Sequence[float], method: str = "tail_extrapolate", tail_fraction: float = 0.2) -> float:
    """Estimate ``lim v_n`` from a finite sweep.

    ``tail_mean`` averages the last ``tail_fraction`` of the grid,
    ``tail_extrapolate`` fits ``v_n = L + c / n`` to the same tail (at least
    three points) and returns ``L``, ``last`` returns the final value.
    """
    ns = np.asarray(ns, dtype=float)
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("empty sweep")
    k = max(1, int(math.ceil(tail_fraction * v.size)))
    if method == "last":
        return float(v[-1])
    if method == "tail_mean":
        return float(np.mean(v[-k:]))
    if method == "tail_extrapolate":
        k = min(v.size, max(k, 3))
        if k < 2:
            return float(v[-1])
        X = np.column_stack([np.ones(k), 1.0 / ns[-k:]])
        coef, *_ = np.linalg.lstsq(X, v[-k:], rcond=None)
        return float(coef[0])
    raise ConfigError(f"unknown limit method {method!r}")


def log_grid(n_min: int, n_max: int, points: int = 20) -> list[int]:
    return sorted(set(int(round(x)) for x in np.geomspace(n_min, n_max, points)))


def _sweep(fn: Callable[[float], float], grid: Sequence[float], workers: int = 1) -> list[tuple[float, tuple[str, ...]]]:
    # catch_warnings is process-global, so warnings are routed to a
    # thread-local list through a single outer context instead
    local = threading.local()

    def record(message, category, *args, **kwargs):
        local.caught.append(category.__name__)

    def one(n):
        local.caught = []
        value = float(fn(n))
        return value, tuple(sorted(set(local.caught)))

    with warnings.catch_warnings():
        warnings.simplefilter("always")
        warnings.showwarning = record
        if workers > 1 and len(grid) > 1:
            with ThreadPoolExecutor(workers) as pool:
                return list(pool.map(one, grid))
        return [one(n) for n in grid]


# -- config parsing ---------------------------------------------------------

COMMON_KEYS = {"experiment", "n_grid", "tolerance", "seed", "limit", "tail_fraction"}


def _check_keys(config: dict, allowed: set[str]) -> None:
    unknown = set(config) - allowed - COMMON_KEYS
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")


def parse_filter(data) -> TransferFunction:
    """Filter from ``{"impulse": [...]}``, ``{"b": [...], "a": [...]}`` or roots."""
    if isinstance(data, TransferFunction):
        return data
    if not isinstance(data, dict):
        raise ConfigError("filter must be an object")
    try:
        if "impulse" in data:
            if set(data) != {"impulse"}:
                raise ConfigError("impulse filters take no other fields")
            return from_impulse(data["impulse"])
        if "b" in data:
            if not set(data) <= {"b", "a"}:
                raise ConfigError(f"unknown filter fields: {sorted(set(data) - {'b', 'a'})}")
            return from_coeffs(data["b"], data.get("a", [1.0]))
        return TransferFunction.from_dict(data)
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"bad filter: {exc}") from exc


def _grid(config: dict, default: list[int]) -> list[int]:
    g = config.get("n_grid", default)
    if isinstance(g, dict):
        if not set(g) <= {"min", "max", "points"}:
            raise ConfigError("n_grid object takes min, max, points")
        g = log_grid(int(g["min"]), int(g["max"]), int(g.get("points", 20)))
    try:
        g = sorted(set(int(n) for n in g))
    except (TypeError, ValueError) as exc:
        raise ConfigError("n_grid must be a list of integers") from exc
    if not g or g[0] < 1:
        raise ConfigError("n_grid must contain positive integers")
    return g


def _series(config: dict, name: str, grid, values, target: float, tol: float) -> Series:
    method = config.get("limit", "tail_extrapolate")
    frac = float(config.get("tail_fraction", 0.2))
    return Series(name, fit_limit(grid, values, method, frac), float(target), float(config.get("tolerance", tol)))


def _report(exp: str, config: dict, grid, results, target, tol, extra=None) -> ExperimentReport:
    recs = [Record(n, v, f) for n, (v, f) in zip(grid, results)]
    ser = _series(config, "main", grid, [v for v, _ in results], target, tol)
    return ExperimentReport(exp, config, recs, [ser], config.get("limit", "tail_extrapolate"), extra=extra or {})


def _input_spec(config: dict) -> InputSpec:
    try:
        raw = dict(config.get("input") or {})
        if raw.get("shaping") is not None:
            raw["shaping"] = parse_filter(raw["shaping"]).to_dict()
        return InputSpec.from_dict(raw)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad input spec: {exc}") from exc


def _wrap_errors(fn):
    """Turn validation errors raised during model construction into ConfigError."""

    def inner(config: dict, workers: int = 1) -> ExperimentReport:
        start = time.perf_counter()
        try:
            report = fn(dict(config), workers)
        except (ConfigError, OverflowBudgetError):
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{fn.__name__}: bad config ({exc})") from exc
        report.wall_time = time.perf_counter() - start
        log.info("%s finished in %.3f s", report.experiment, report.wall_time)
        return report

    inner.__name__ = fn.__name__
    inner.__doc__ = fn.__doc__
    return inner


# -- runners: filter entropy gains -------------------------------------------


@_wrap_errors
def run_disturbance(config: dict, workers: int = 1) -> ExperimentReport:
    """Output-disturbance gain ``(h(y) - h(u)) / n``; target is the sum of the
    ``min(kappa, m)`` largest ``log|rho|``."""
    _check_keys(config, {"filter", "input", "disturbance"})
    tf = parse_filter(config["filter"])
    inp = _input_spec(config)
    draw = dict(config["disturbance"])
    draw.setdefault("seed", int(config.get("seed", 0)))
    try:
        dist = DisturbanceSpec.from_dict(draw)
    except ValueError as exc:
        raise ConfigError(f"bad disturbance: {exc}") from exc
    grid = _grid(config, log_grid(10, min(300, overflow_safe_n(tf))))
    results = _sweep(lambda n: gs.disturbance_gain(tf, inp, dist, n), grid, workers)
    target = math.log(abs(tf.g0)) + nmp_summary(tf).partial_log_sum(dist.kappa)
    return _report("disturbance", config, grid, results, target, 0.02)


@_wrap_errors
def run_input_disturbance(config: dict, workers: int = 1) -> ExperimentReport:
    """Gain from a disturbance added before the filter; target ``log|g0|``."""
    _check_keys(config, {"filter", "input", "nu", "covariance", "variance"})
    tf = parse_filter(config["filter"])
    inp = _input_spec(config)
    nu = int(config.get("nu", 1))
    cov = config.get("covariance", (float(config.get("variance", 1.0)) * np.eye(nu)).tolist())
    grid = _grid(config, log_grid(10, 300))
    results = _sweep(lambda n: gs.input_disturbance_gain(tf, nu, cov, n, inp), grid, workers)
    return _report("input-disturbance", config, grid, results, math.log(abs(tf.g0)), 0.02)


@_wrap_errors
def run_initial_state(config: dict, workers: int = 1) -> ExperimentReport:
    """Gain from a random initial state; target is the sum of the
    ``min(rank x0, m)`` largest ``log|rho|``."""
    _check_keys(config, {"filter", "input", "x0_covariance", "x0_factor"})
    tf = parse_filter(config["filter"])
    inp = _input_spec(config)
    cov = config.get("x0_covariance")
    fac = config.get("x0_factor")
    try:
        F = gs._x0_factor(tf, cov, fac)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    grid = _grid(config, log_grid(10, min(300, overflow_safe_n(tf))))
    results = _sweep(lambda n: gs.initial_state_gain(tf, n=n, x0_factor=F, input_spec=inp), grid, workers)
    tau = int(np.linalg.matrix_rank(F)) if F.size else 0
    target = math.log(abs(tf.g0)) + nmp_summary(tf).partial_log_sum(tau)
    return _report("initial-state", config, grid, results, target, 0.02)


@_wrap_errors
def run_effective_gain(config: dict, workers: int = 1) -> ExperimentReport:
    """Per-sample effective gain of the full convolution of an FIR filter."""
    _check_keys(config, {"filter"})
    tf = parse_filter(config["filter"])
    if not tf.is_fir:
        raise ConfigError("effective gain needs an FIR filter")
    grid = _grid(config, log_grid(10, 500))
    results = _sweep(lambda n: effective_entropy_gain(tf, n) / n, grid, workers)
    target = jensen_log_integral(tf).value
    return _report("effective-gain", config, grid, results, target, 0.02)


@_wrap_errors
def run_spectrum(config: dict, workers: int = 1) -> ExperimentReport:
    """Smallest singular value of ``G_n`` against n; the fitted quantity is the
    per-sample decay slope, targeted at ``-log|rho_1|``."""
    _check_keys(config, {"filter", "n_indices"})
    tf = parse_filter(config["filter"])
    grid = _grid(config, list(range(10, 41)))
    fit = decay_rate_fit(tf, grid, config.get("n_indices"))
    results = _sweep(lambda n: float(svd_spectrum(conv_matrix(tf, n)).log_values[0]), grid, workers)
    recs = [Record(n, v, f) for n, (v, f) in zip(grid, results)]
    expected = float(fit.expected[0]) if fit.m else 0.0
    tol = float(config.get("tolerance", 0.01 * abs(expected) if expected else 0.04))
    series = [Series("slope_1", float(fit.slopes[0]), expected, tol)]
    extra = {"slopes": fit.slopes.tolist(), "expected": fit.expected.tolist(), "n_used": fit.n_used.tolist()}
    return ExperimentReport("spectrum", config, recs, series, "least_squares_slope", extra=extra)


# -- rate distortion -------------------------------------------------------


def rdf_reverse_waterfill(log_eigs: Sequence[float], D: float) -> tuple[float, float]:
    """Water level ``theta`` and rate (nats/sample) for eigenvalues ``exp(log_eigs)``.

    ``theta`` solves ``mean(min(lambda, theta)) = D``. The mean is piecewise
    linear in ``theta``, so the root is found exactly by scanning the sorted
    eigenvalues. Only eigenvalues below ``theta`` are exponentiated, so
    ``lambda`` as large as ``exp(1e5)`` is fine.
    """
    if not D > 0:
        raise ValueError("distortion must be positive")
    L = np.sort(np.asarray(log_eigs, dtype=float))
    n = L.size
    lmax = L[-1]
    mean_log = lmax + math.log(np.mean(np.exp(L - lmax)))
    if math.log(D) >= mean_log:
        return float(math.exp(min(lmax, 700.0))), 0.0
    below = 0.0
    for k in range(n):
        theta = (n * D - below) / (n - k)
        if theta <= math.exp(min(L[k], 700.0)):
            break
        below += math.exp(L[k])
    log_theta = math.log(theta)
    rate = 0.5 * float(np.sum(np.maximum(L - log_theta, 0.0))) / n
    return theta, rate


def _log_eigs_unstable(A_tf: TransferFunction, n: int, big: int) -> np.ndarray:
    """``log`` eigenvalues of ``A_n A_n^T``; the ``big`` growing ones come from
    ``A_n`` itself and the rest from the well-conditioned FIR inverse."""
    s_dir = svd_spectrum(conv_matrix(A_tf, n)).values
    s_inv = svd_spectrum(conv_matrix(A_tf.inverse(), n)).values
    small = -np.log(s_inv[big:])[::-1]
    large = np.log(s_dir[n - big :]) if big else np.array([])
    return 2.0 * np.concatenate([small, large])


def rdf_gap(poles: Sequence, D: float, n: int) -> float:
    """``R_{x,n}(D) - R_{x~,n}(D)`` for the all-pole source and its stable mirror."""
    p = np.asarray([complex(*z) if isinstance(z, (list, tuple)) else complex(z) for z in poles])
    M = len(p)
    unstable = int(np.sum(np.abs(p) > 1))
    A = make_tf(np.zeros(M), p, 1.0)
    mirror = np.where(np.abs(p) > 1, 1.0 / np.conj(p), p)
    A_t = make_tf(np.zeros(M), mirror, 1.0 / float(np.prod(np.abs(p[np.abs(p) > 1]))) if unstable else 1.0)
    if n > overflow_safe_n(A.inverse()):
        raise OverflowBudgetError(n, overflow_safe_n(A.inverse()))
    h = lfilter(A_t.b, A_t.a, np.r_[1.0, np.zeros(20000)])
    if D >= float(np.sum(h * h)):
        raise ValueError(f"distortion {D} exceeds the stationary source variance {np.sum(h * h):.6g}")
    _, r_x = rdf_reverse_waterfill(_log_eigs_unstable(A, n, unstable), D)
    _, r_t = rdf_reverse_waterfill(2.0 * svd_spectrum(conv_matrix(A_t, n)).log_values, D)
    return r_x - r_t


@_wrap_errors
def run_rdf_gap(config: dict, workers: int = 1) -> ExperimentReport:
    """Rate-distortion gap between an unstable all-pole source and its stable
    mirror; target is the sum of ``log|p|`` over unstable poles."""
    _check_keys(config, {"poles", "distortion"})
    poles = config["poles"]
    D = float(config.get("distortion", 0.2))
    grid = _grid(config, log_grid(10, 60, 12))
    try:
        results = _sweep(lambda n: rdf_gap(poles, D, n), grid, workers)
    except ValueError as exc:
        if isinstance(exc, OverflowBudgetError):
            raise
        raise ConfigError(str(exc)) from exc
    p = np.abs([complex(*z) if isinstance(z, (list, tuple)) else complex(z) for z in poles])
    target = float(np.sum(np.log(p[p > 1])))
    return _report("rdf-gap", config, grid, results, target, 0.05)


# -- networked control -------------------------------------------------------


def _loop_sim(P: TransferFunction, T: TransferFunction, u: np.ndarray, x0: np.ndarray, s0: np.ndarray):
    """Simulate ``y = u - P T y`` column by column.

    Returns the internal plant sequence ``x`` (``x = y / D``) and the output
    ``y``. ``x0 = (x_{1-p}, ..., x_0)`` is the plant state and ``s0`` the
    channel state, as columns.
    """
    p, t = P.order, T.order
    D = P.a / P.a[0]
    Nc = np.pad(P.b / P.a[0], (0, p + 1 - len(P.b)))
    Theta = T.a / T.a[0]
    Gamma = np.pad(T.b / T.a[0], (0, t + 1 - len(T.b)))
    n, k = u.shape
    xs = np.zeros((p + n, k))
    ss = np.zeros((t + n, k))
    xs[:p] = x0
    ss[:t] = s0
    y = np.zeros((n, k))
    for j in range(n):
        xi, si = p + j, t + j
        w = sum(Nc[i] * xs[xi - i] for i in range(1, p + 1))
        ss[si] = w - sum(Theta[i] * ss[si - i] for i in range(1, t + 1))
        v = sum(Gamma[i] * ss[si - i] for i in range(t + 1))
        xs[xi] = u[j] - v - sum(D[i] * xs[xi - i] for i in range(1, p + 1))
        y[j] = u[j] - v
    return xs[p:], y


def _plant_history_map(P: TransferFunction, n: int) -> np.ndarray:
    """``C`` with ``y = D_n x + C x0`` (direct pass of the plant state through ``D``)."""
    p = P.order
    D = P.a / P.a[0]
    C = np.zeros((n, p))
    for k in range(min(n, p)):
        for i in range(k + 1, p + 1):
            C[k, p + k - i] += D[i]
    return C


def _forward_sub_mp(L: np.ndarray, cols, dps: int):
    ctx = gs.mp_context(dps)
    n = L.shape[0]
    Lm = [[ctx.mpf(float(L[i, j])) for j in range(i + 1)] for i in range(n)]
    out = []
    for c in cols:
        z = []
        for i in range(n):
            acc = c[i] - ctx.fdot(Lm[i][:i], z)
            z.append(acc / Lm[i][i])
        out.append(z)
    return out


def networked_information(
    P: TransferFunction,
    T: TransferFunction,
    n: int,
    input_variance: float = 1.0,
    noise_variance: float = 0.0,
    x0_covariance=None,
    s0_covariance=None,
) -> float:
    """``I(x0; y_1^n) / n`` for the loop ``y = u~ - P T y`` with ``u~ = u + c``.

    ``y = D_n x + C x0`` with ``det D_n = 1``, so ``y`` carries the same
    information as ``x + D_n^{-1} C x0``. Writing ``x = V + Xbar x0`` with
    ``V`` independent of ``x0`` (input, channel noise, channel state), the
    answer is ``log det(I + F^T Z^T K_V^{-1} Z F) / 2n`` with
    ``Z = Xbar + D_n^{-1} C``. Only ``D_n^{-1} C`` grows; with several unstable
    plant poles it is carried in mpmath.
    """
    closed_loop(P, T)  # raises for an unstable loop
    p, t = P.order, T.order
    F = gs.psd_factor(np.eye(p) if x0_covariance is None else x0_covariance)
    if F.shape[1] == 0:
        return 0.0
    Fs = gs.psd_factor(s0_covariance) if s0_covariance is not None else np.zeros((t, 0))
    var = input_variance + noise_variance
    if not var > 0:
        raise ValueError("input plus channel noise must have positive variance")
    safe = overflow_safe_n(make_tf(P.poles, np.zeros(p)))
    if n > safe:
        raise OverflowBudgetError(n, safe)
    X_u, _ = _loop_sim(P, T, math.sqrt(var) * np.eye(n), np.zeros((p, n)), np.zeros((t, n)))
    X_bar, _ = _loop_sim(P, T, np.zeros((n, F.shape[1])), F, np.zeros((t, F.shape[1])))
    K_V = X_u @ X_u.T
    if Fs.shape[1]:
        X_s, _ = _loop_sim(P, T, np.zeros((n, Fs.shape[1])), np.zeros((p, Fs.shape[1])), Fs)
        K_V += X_s @ X_s.T
    L = np.linalg.cholesky(K_V)
    if np.linalg.cond(L) ** 2 > gs.COND_GUARD:
        warnings.warn("conditional covariance is near singular", IllConditionedWarning, stacklevel=2)
    C = _plant_history_map(P, n) @ F
    D = P.a / P.a[0]
    unstable = int(np.sum(np.abs(P.poles) > 1))
    rho = max((abs(z) for z in P.poles), default=0.0)
    growth = n * math.log10(rho) if rho > 1 else 0.0
    if unstable >= 2 and F.shape[1] >= 2 and growth > 4:
        dps = gs._working_dps(growth)
        ctx = gs.mp_context(dps)
        grown = gs._filter_mp([1.0], D, gs.to_mp_columns(C, dps), dps)
        Z = [[g + ctx.mpf(float(b)) for g, b in zip(gc, X_bar[:, j])] for j, gc in enumerate(grown)]
        W = _forward_sub_mp(L, Z, dps)
        return gs.logdet_update(W, np.eye(F.shape[1]), dps) / (2 * n)
    Z = X_bar + lfilter([1.0], D, C, axis=0)
    W = sla.solve_triangular(L, Z, lower=True)
    return gs.logdet_update(W, np.eye(F.shape[1])) / (2 * n)


def networked_information_dense(P, T, n, input_variance=1.0, noise_variance=0.0, x0_covariance=None, s0_covariance=None) -> float:
    """Same quantity from the joint Gaussian model of ``(x0, y)``; small n only."""
    p, t = P.order, T.order
    Fx = np.linalg.cholesky(np.atleast_2d(np.eye(p) if x0_covariance is None else x0_covariance))
    sd = math.sqrt(input_variance + noise_variance)
    _, Y_u = _loop_sim(P, T, sd * np.eye(n), np.zeros((p, n)), np.zeros((t, n)))
    _, Y_x = _loop_sim(P, T, np.zeros((n, p)), Fx, np.zeros((t, p)))
    parts = [("u", Y_u), ("x0", Y_x)]
    if s0_covariance is not None:
        Fs = np.linalg.cholesky(np.atleast_2d(s0_covariance))
        _, Y_s = _loop_sim(P, T, np.zeros((n, t)), np.zeros((p, t)), Fs)
        parts.append(("s0", Y_s))
    M = gs.LinearGaussianModel.from_parts(parts)
    # x0 itself is Fx z_x, an invertible map of its seed block
    return gs.mutual_information(M, "output", "x0") / n


@_wrap_errors
def run_networked_mi(config: dict, workers: int = 1) -> ExperimentReport:
    """``I(x0; y) / n`` in a loop closed through a linear channel; target is the
    sum of ``log|p|`` over unstable plant poles."""
    _check_keys(config, {"plant", "channel", "input_variance", "noise_variance", "x0_covariance", "s0_covariance"})
    P = parse_filter(config["plant"])
    T = parse_filter(config.get("channel", {"gain": 1.0}))
    try:
        closed_loop(P, T)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    x0 = config.get("x0_covariance")
    s0 = config.get("s0_covariance")
    kw = dict(
        input_variance=float(config.get("input_variance", 1.0)),
        noise_variance=float(config.get("noise_variance", 0.0)),
        x0_covariance=None if x0 is None else np.atleast_2d(x0),
        s0_covariance=None if s0 is None else np.atleast_2d(s0),
    )
    grid = _grid(config, log_grid(10, min(300, overflow_safe_n(make_tf(P.poles, np.zeros(P.order))))))
    results = _sweep(lambda n: networked_information(P, T, n, **kw), grid, workers)
    mags = np.abs(P.poles)
    target = float(np.sum(np.log(mags[mags > 1])))
    if kw["x0_covariance"] is not None and not np.any(kw["x0_covariance"]):
        target = 0.0
    return _report("networked-mi", config, grid, results, target, 0.05)


# -- feedback capacity scheme ------------------------------------------------


def feedback_rate(B: TransferFunction, S: TransferFunction | None, K_v, K_d, n: int) -> float:
    """``I(v; y) / n`` for ``y = v + (1 + B) z + d`` with ``z = S e``.

    ``v`` and ``d`` live on the first ``M`` samples, so the rate is the
    difference of two output-disturbance gains of ``A = (1 + B) S`` with
    seed covariances ``K_v + K_d`` and ``K_d``.
    """
    if B.gain != 0 and (B.relative_degree < 1 or not B.is_stable):
        raise ValueError("feedback filter must be strictly causal and stable")
    one_plus_b = _one_plus(B)
    A = one_plus_b if S is None else one_plus_b * S
    K_v = np.atleast_2d(np.asarray(K_v, dtype=float))
    M = K_v.shape[0]
    K_d = np.zeros((M, M)) if K_d is None else np.atleast_2d(np.asarray(K_d, dtype=float))
    with_v = gs.disturbance_gain(A, None, DisturbanceSpec(M, K_v + K_d), n)
    if not np.any(K_d):
        without = math.log(abs(A.g0))
    else:
        without = gs.disturbance_gain(A, None, DisturbanceSpec(M, K_d), n)
    return with_v - without


def _one_plus(B: TransferFunction) -> TransferFunction:
    a = B.a / B.a[0]
    b = B.b / B.a[0]
    L = max(len(a), len(b))
    return from_coeffs(np.pad(a, (0, L - len(a))) + np.pad(b, (0, L - len(b))), a)


@_wrap_errors
def run_feedback_collapse(config: dict, workers: int = 1) -> ExperimentReport:
    """Rate of the feedback coding scheme without and with a small output
    disturbance; targets are the NMP log-sum of ``1 + B`` and zero."""
    _check_keys(config, {"feedback", "noise_shaping", "v_covariance", "disturbance_variance", "disturbance_covariance"})
    B = parse_filter(config.get("feedback", {"b": [0.0, 1.5]}))
    S = parse_filter(config["noise_shaping"]) if config.get("noise_shaping") else None
    K_v = np.atleast_2d(np.asarray(config.get("v_covariance", [[1.0]]), dtype=float))
    M = K_v.shape[0]
    if "disturbance_covariance" in config:
        K_d = np.atleast_2d(np.asarray(config["disturbance_covariance"], dtype=float))
    else:
        K_d = float(config.get("disturbance_variance", 1e-6)) * np.eye(M)
    grid = _grid(config, log_grid(10, 300))
    clean = _sweep(lambda n: feedback_rate(B, S, K_v, None, n), grid, workers)
    noisy = _sweep(lambda n: feedback_rate(B, S, K_v, K_d, n), grid, workers)
    records = [Record(n, v, f, "undisturbed") for n, (v, f) in zip(grid, clean)]
    records += [Record(n, v, f, "disturbed") for n, (v, f) in zip(grid, noisy)]
    target = nmp_summary(_one_plus(B)).log_sum
    series = [
        _series(config, "undisturbed", grid, [v for v, _ in clean], target, 0.05),
        _series(config, "disturbed", grid, [v for v, _ in noisy], 0.0, 0.05),
    ]
    return ExperimentReport("feedback-collapse", config, records, series, config.get("limit", "tail_extrapolate"))


# -- quantized entropies of a segment ----------------------------------------


def segment_bin_entropy(start: Sequence[float], end: Sequence[float], delta: float) -> float:
    """Entropy of the ``delta``-grid cell index of a point uniform on a segment.

    The segment is cut at every grid crossing of any coordinate; each piece
    lies in one cell and a straight segment never re-enters a cell, so the
    cell probabilities are the piece lengths (adjacent pieces in the same
    cell are merged).
    """
    a = np.asarray(start, dtype=float)
    b = np.asarray(end, dtype=float)
    if not delta > 0:
        raise ValueError("delta must be positive")
    ts = [np.array([0.0, 1.0])]
    for ai, bi in zip(a, b):
        if ai == bi:
            continue
        lo, hi = sorted((ai, bi))
        ks = np.arange(math.ceil(lo / delta), math.floor(hi / delta) + 1)
        ts.append((ks * delta - ai) / (bi - ai))
    t = np.unique(np.clip(np.concatenate(ts), 0.0, 1.0))
    lengths = np.diff(t)
    keep = lengths > 0
    mid = 0.5 * (t[:-1] + t[1:])[keep]
    lengths = lengths[keep]
    cells = np.floor((a[None, :] + mid[:, None] * (b - a)[None, :]) / delta).astype(np.int64)
    new = np.r_[True, np.any(np.diff(cells, axis=0) != 0, axis=1)]
    probs = np.add.reduceat(lengths, np.flatnonzero(new))
    probs = probs[probs > 0]
    return float(-np.sum(probs * np.log(probs)))


def quantized_discrepancy(delta: float, direction: Sequence[float] = (1.0, 1.0)) -> float:
    """``H_1((A y)^delta) - H_d(y^delta)`` for ``y`` uniform on a unit segment
    from the origin along ``direction``; ``A y`` is the arc-length coordinate."""
    e = np.asarray(direction, dtype=float)
    e = e / np.linalg.norm(e)
    return segment_bin_entropy([0.0], [1.0], delta) - segment_bin_entropy(np.zeros_like(e), e, delta)


def quantized_closed_form(delta: float) -> float:
    """Floor-function expression of the same discrepancy for the diagonal segment."""

    def h(step: float) -> float:
        k = math.floor(1.0 / step)
        rest = 1.0 - k * step
        return -k * step * math.log(step) - (rest * math.log(rest) if rest > 0 else 0.0)

    return h(delta) - h(delta * math.sqrt(2.0))


@_wrap_errors
def run_quantized_discrepancy(config: dict, workers: int = 1) -> ExperimentReport:
    """Discrepancy sweep over the cell size; the grid column holds ``delta``
    (finest last) and the limit is the value at the finest cell."""
    _check_keys(config, {"deltas", "direction"})
    deltas = config.get("deltas", [float(d) for d in np.geomspace(0.5, 1e-4, 12)])
    deltas = sorted((float(d) for d in deltas), reverse=True)
    if any(not 0 < d <= 0.5 for d in deltas):
        raise ConfigError("every delta must lie in (0, 0.5]")
    direction = config.get("direction", [1.0, 1.0])
    results = _sweep(lambda d: quantized_discrepancy(d, direction), deltas, workers)
    e = np.abs(np.asarray(direction, dtype=float))
    if np.count_nonzero(e) == 1:
        target = 0.0
    elif len(e) == 2 and math.isclose(e[0], e[1]):
        target = math.log(math.sqrt(2.0))
    else:
        raise ConfigError("a known limit exists only for axis-aligned or diagonal planar segments")
    cfg = dict(config)
    cfg.setdefault("limit", "last")
    recs = [Record(d, v, f) for d, (v, f) in zip(deltas, results)]
    ser = _series(cfg, "main", deltas, [v for v, _ in results], target, 1e-3)
    return ExperimentReport("quantized", config, recs, [ser], cfg["limit"])


# -- entropy-balance probes --------------------------------------------------


@_wrap_errors
def run_probe(config: dict, workers: int = 1) -> ExperimentReport:
    """Projection probe ``(h(Phi u) - h(u)) / n``; target 0 for balanced inputs.

    ``adversarial_filter`` switches to the Gaussian ``G^{-1}``-shaped input
    probed along its small singular directions, whose target is
    ``-sum log|rho|``.
    """
    _check_keys(config, {"process", "nu", "trials", "adversarial_filter"})
    grid = _grid(config, [4, 8, 12])
    if config.get("adversarial_filter") is not None:
        tf = parse_filter(config["adversarial_filter"])
        res = adversarial_probe(tf, grid)
        target = -nmp_summary(tf).log_sum
        tol = 0.05
    else:
        raw = dict(config.get("process", {"kind": "uniform_iid"}))
        raw.setdefault("seed", int(config.get("seed", 0)))
        try:
            spec = ProcessSpec.from_dict(raw)
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"bad process: {exc}") from exc
        res = entropy_balance_probe(spec, grid, int(config.get("nu", 1)), int(config.get("trials", 20_000)), workers)
        target = 0.0
        tol = 0.02 if res.method == "analytic" else 0.1
    results = [(float(v), ()) for v in res.values]
    cfg = dict(config)
    cfg.setdefault("limit", "last")
    recs = [Record(int(n), v, f) for n, (v, f) in zip(res.n, results)]
    ser = _series(cfg, "main", res.n, res.values, target, tol)
    return ExperimentReport("probe", config, recs, [ser], cfg["limit"], extra={"method": res.method})


# -- defaults and dispatch ----------------------------------------------------

DEFAULTS: dict[str, dict] = {
    "disturbance": {
        "filter": {"impulse": [1.0, -1.5]},
        "disturbance": {"kappa": 1, "variance": 1e-4, "placement": "first_m_coordinates"},
        "n_grid": {"min": 10, "max": 300, "points": 20},
    },
    "input-disturbance": {"filter": {"impulse": [1.0, -1.5]}, "nu": 1, "variance": 1.0, "n_grid": {"min": 10, "max": 300, "points": 20}},
    "initial-state": {"filter": {"impulse": [1.0, -1.5]}, "x0_covariance": [[1.0]], "n_grid": {"min": 10, "max": 300, "points": 20}},
    "effective-gain": {"filter": {"impulse": [1.0, 2.0]}, "n_grid": {"min": 10, "max": 500, "points": 20}},
    "rdf-gap": {"poles": [1.3], "distortion": 0.2, "n_grid": {"min": 10, "max": 60, "points": 12}},
    "networked-mi": {
        "plant": {"zeros": [], "poles": [2.0], "gain": 1.0},
        "channel": {"gain": 1.5},
        "input_variance": 1.0,
        "noise_variance": 0.1,
        "x0_covariance": [[1.0]],
        "n_grid": {"min": 10, "max": 300, "points": 20},
    },
    "feedback-collapse": {
        "feedback": {"b": [0.0, 1.5]},
        "noise_shaping": {"zeros": [-0.5], "poles": [0.3], "gain": 1.0},
        "v_covariance": [[1.0]],
        "disturbance_variance": 1e-6,
        "n_grid": {"min": 10, "max": 300, "points": 20},
    },
    "quantized": {"deltas": [float(d) for d in np.geomspace(0.5, 1e-4, 12)], "direction": [1.0, 1.0]},
    "spectrum": {"filter": {"impulse": [1.0, -1.5]}, "n_grid": list(range(10, 41))},
    "probe": {"process": {"kind": "uniform_iid", "low": 0.0, "high": 1.0}, "nu": 1, "trials": 20000, "n_grid": [4, 8, 12]},
}

RUNNERS: dict[str, Callable[..., ExperimentReport]] = {
    "disturbance": run_disturbance,
    "input-disturbance": run_input_disturbance,
    "initial-state": run_initial_state,
    "effective-gain": run_effective_gain,
    "rdf-gap": run_rdf_gap,
    "networked-mi": run_networked_mi,
    "feedback-collapse": run_feedback_collapse,
    "quantized": run_quantized_discrepancy,
    "spectrum": run_spectrum,
    "probe": run_probe,
}


def run(experiment: str, config: dict | None = None, workers: int = 1) -> ExperimentReport:
    """Run ``experiment`` with ``config`` (defaults when ``None``)."""
    if experiment not in RUNNERS:
        raise ConfigError(f"unknown experiment {experiment!r}")
    cfg = json.loads(json.dumps(DEFAULTS[experiment] if config is None else config))
    return RUNNERS[experiment](cfg, workers)
