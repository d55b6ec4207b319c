"""Seeded samplers for i.i.d.-driven processes and Monte-Carlo entropy estimates."""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.signal import lfilter
from scipy.spatial import cKDTree
from scipy.special import digamma, gammaln, log_ndtr, ndtr

from .gaussian import DisturbanceSpec, LOG_2PIE
from .lti import TransferFunction
from .toeplitz import conv_matrix, svd_spectrum, usable_n

__all__ = [
    "ProcessSpec",
    "DuplicateSamplesWarning",
    "sample",
    "knn_entropy",
    "entropy_rate",
    "random_orthonormal_rows",
    "entropy_balance_probe",
    "adversarial_probe",
    "uniform_input_gain_mc",
    "samples_to_csv",
]

CHUNK = 4096
KNN_MIN_TRIALS = 1000
KNN_MAX_DIM = 16
KINDS = ("gaussian_iid", "uniform_iid", "piecewise_constant_iid", "mp_filtered", "sum")


class DuplicateSamplesWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class ProcessSpec:
    """Description of a random sequence.

    Parameters by kind:

    * ``gaussian_iid``: ``variance``.
    * ``uniform_iid``: ``low``, ``high``.
    * ``piecewise_constant_iid``: ``edges``, ``probs``, ``min_width``.
    * ``mp_filtered``: ``filter`` (stable, minimum phase) and one ``component``.
    * ``sum``: ``components`` added sample by sample.
    """

    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown process kind {self.kind!r}")
        p = self.params
        if self.kind == "gaussian_iid" and not p.get("variance", 1.0) > 0:
            raise ValueError("variance must be positive")
        if self.kind == "uniform_iid" and not p.get("high", 1.0) > p.get("low", 0.0):
            raise ValueError("uniform support must have positive width")
        if self.kind == "piecewise_constant_iid":
            edges = np.asarray(p["edges"], dtype=float)
            probs = np.asarray(p["probs"], dtype=float)
            eps = float(p.get("min_width", 0.0))
            if not eps > 0:
                raise ValueError("piecewise-constant densities need min_width > 0")
            if edges.size != probs.size + 1:
                raise ValueError("need one more edge than probabilities")
            if np.any(np.diff(edges) < eps):
                raise ValueError(f"every bin must be at least {eps} wide")
            if np.any(probs < 0) or not math.isclose(probs.sum(), 1.0, rel_tol=1e-9):
                raise ValueError("probabilities must be non-negative and sum to 1")
        if self.kind == "mp_filtered":
            tf = p["filter"]
            if not (tf.is_stable and tf.is_minimum_phase and tf.is_biproper):
                raise ValueError("shaping filter must be stable, minimum phase and biproper")
            if not isinstance(p.get("component"), ProcessSpec):
                raise ValueError("mp_filtered needs a component process")
        if self.kind == "sum" and not p.get("components"):
            raise ValueError("sum needs at least one component")

    @classmethod
    def from_dict(cls, data: dict) -> "ProcessSpec":
        data = dict(data)
        kind = data.pop("kind")
        seed = int(data.pop("seed", 0))
        if kind == "mp_filtered":
            data["filter"] = TransferFunction.from_dict(data["filter"])
            data["component"] = cls.from_dict(data["component"])
        if kind == "sum":
            data["components"] = [cls.from_dict(c) for c in data["components"]]
        return cls(kind, data, seed)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "seed": self.seed}
        for key, val in self.params.items():
            if isinstance(val, TransferFunction):
                d[key] = val.to_dict()
            elif isinstance(val, ProcessSpec):
                d[key] = val.to_dict()
            elif key == "components":
                d[key] = [c.to_dict() for c in val]
            else:
                d[key] = val
        return d

    @property
    def variance(self) -> float:
        """Per-sample variance of the i.i.d. kinds."""
        p = self.params
        if self.kind == "gaussian_iid":
            return float(p.get("variance", 1.0))
        if self.kind == "uniform_iid":
            return (p.get("high", 1.0) - p.get("low", 0.0)) ** 2 / 12
        if self.kind == "piecewise_constant_iid":
            e = np.asarray(p["edges"], dtype=float)
            q = np.asarray(p["probs"], dtype=float)
            m1 = np.sum(q * (e[1:] + e[:-1]) / 2)
            m2 = np.sum(q * (e[1:] ** 2 + e[1:] * e[:-1] + e[:-1] ** 2) / 3)
            return float(m2 - m1**2)
        raise ValueError(f"{self.kind} is not i.i.d.")


def entropy_rate(spec: ProcessSpec) -> float:
    """Exact per-sample differential entropy for the i.i.d. kinds."""
    p = spec.params
    if spec.kind == "gaussian_iid":
        return 0.5 * (LOG_2PIE + math.log(p.get("variance", 1.0)))
    if spec.kind == "uniform_iid":
        return math.log(p.get("high", 1.0) - p.get("low", 0.0))
    if spec.kind == "piecewise_constant_iid":
        w = np.diff(np.asarray(p["edges"], dtype=float))
        q = np.asarray(p["probs"], dtype=float)
        nz = q > 0
        return float(-np.sum(q[nz] * np.log(q[nz] / w[nz])))
    raise ValueError(f"no closed-form entropy rate for {spec.kind}")


def _chunk_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, index])))


def _draw(spec: ProcessSpec, n: int, rows: int, chunk: int) -> np.ndarray:
    p = spec.params
    if spec.kind == "mp_filtered":
        base = _draw(p["component"], n, rows, chunk)
        tf = p["filter"]
        return lfilter(tf.b, tf.a, base, axis=1)
    if spec.kind == "sum":
        return sum(_draw(c, n, rows, chunk) for c in p["components"])
    rng = _chunk_rng(spec.seed, chunk)
    if spec.kind == "gaussian_iid":
        return rng.standard_normal((rows, n)) * math.sqrt(p.get("variance", 1.0))
    if spec.kind == "uniform_iid":
        return rng.uniform(p.get("low", 0.0), p.get("high", 1.0), (rows, n))
    edges = np.asarray(p["edges"], dtype=float)
    cdf = np.concatenate([[0.0], np.cumsum(p["probs"])])
    cdf[-1] = 1.0
    # inverse CDF: pick the bin, then place the point uniformly inside it
    v = rng.uniform(size=(rows, n))
    k = np.clip(np.searchsorted(cdf, v, side="right") - 1, 0, len(edges) - 2)
    frac = (v - cdf[k]) / np.maximum(cdf[k + 1] - cdf[k], 1e-300)
    return edges[k] + frac * (edges[k + 1] - edges[k])


def sample(spec: ProcessSpec, n: int, trials: int, workers: int = 1) -> np.ndarray:
    """``trials x n`` matrix of independent realizations.

    Trials are generated in fixed chunks, each with its own counter-based
    stream keyed by ``(seed, chunk index)``, so the output does not depend on
    ``workers``.
    """
    if n < 1 or trials < 1:
        raise ValueError("n and trials must be >= 1")
    sizes = [min(CHUNK, trials - s) for s in range(0, trials, CHUNK)]
    jobs = list(enumerate(sizes))
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda job: _draw(spec, n, job[1], job[0]), jobs))
    else:
        parts = [_draw(spec, n, rows, idx) for idx, rows in jobs]
    return np.vstack(parts)


def knn_entropy(samples: np.ndarray, k: int = 4, seed: int = 0) -> float:
    """Kozachenko-Leonenko entropy estimate in nats (Euclidean metric).

    Exact duplicates get a ``1e-12`` jitter and a :class:`DuplicateSamplesWarning`.
    """
    X = np.asarray(samples, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    N, d = X.shape
    if N < KNN_MIN_TRIALS:
        raise ValueError(f"kNN entropy needs at least {KNN_MIN_TRIALS} samples, got {N}")
    if d > KNN_MAX_DIM:
        raise ValueError(f"dimension {d} exceeds the estimator budget of {KNN_MAX_DIM}")
    tree = cKDTree(X)
    dist, _ = tree.query(X, k=k + 1, workers=-1)
    eps = dist[:, k]
    if np.any(eps == 0):
        warnings.warn("duplicate samples; adding 1e-12 jitter", DuplicateSamplesWarning, stacklevel=2)
        X = X + 1e-12 * np.random.default_rng(seed).standard_normal(X.shape)
        dist, _ = cKDTree(X).query(X, k=k + 1, workers=-1)
        eps = dist[:, k]
    log_vd = 0.5 * d * math.log(math.pi) - gammaln(0.5 * d + 1)
    return float(digamma(N) - digamma(k) + log_vd + d * np.mean(np.log(eps)))


def random_orthonormal_rows(rows: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """``rows x n`` matrix with orthonormal rows, from a Gaussian matrix."""
    Q, R = np.linalg.qr(rng.standard_normal((n, rows)))
    return (Q * np.sign(np.diag(R))).T


@dataclass(frozen=True)
class ProbeResult:
    n: np.ndarray
    values: np.ndarray
    method: str


def entropy_balance_probe(
    spec: ProcessSpec,
    n_grid: Sequence[int],
    nu: int = 1,
    trials: int = 100_000,
    workers: int = 1,
) -> ProbeResult:
    """``(h(Phi_n u) - h(u)) / n`` with ``Phi_n`` a random ``(n - nu) x n`` isometry.

    Gaussian i.i.d. inputs use the closed form; every other kind is estimated
    with :func:`knn_entropy` (both terms), so ``n`` is capped at 16.
    """
    ns = np.asarray(sorted(set(int(n) for n in n_grid)))
    if np.any(ns <= nu):
        raise ValueError("every n must exceed nu")
    if spec.kind == "gaussian_iid":
        var = spec.variance
        vals = -(nu / ns) * 0.5 * (LOG_2PIE + math.log(var))
        return ProbeResult(ns, vals, "analytic")
    if ns.max() > KNN_MAX_DIM:
        raise ValueError(f"Monte-Carlo probes are limited to n <= {KNN_MAX_DIM}")
    rng = np.random.default_rng(spec.seed)
    vals = []
    for n in ns:
        U = sample(spec, int(n), trials, workers)
        Phi = random_orthonormal_rows(int(n) - nu, int(n), rng)
        vals.append((knn_entropy(U @ Phi.T) - knn_entropy(U)) / n)
    return ProbeResult(ns, np.asarray(vals), "knn")


def adversarial_probe(tf: TransferFunction, n_grid: Sequence[int], variance: float = 1.0) -> ProbeResult:
    """Probe of ``u = G_n^{-1} w`` (Gaussian) along the small-singular directions.

    Dropping the ``m`` right singular directions of ``G_n`` that carry the
    decaying singular values removes ``sum log d_i`` of entropy, which
    per sample tends to ``-sum log|rho|`` rather than zero.
    """
    m = sum(1 for z in tf.zeros if abs(z) > 1)
    ns = np.asarray(sorted(set(int(n) for n in n_grid)))
    if ns.max() > usable_n(tf):
        raise ValueError(f"n must stay below {usable_n(tf)} to resolve the small singular values")
    vals = []
    for n in ns:
        d = svd_spectrum(conv_matrix(tf, int(n))).values
        # R u = D^{-1} Q w has independent coordinates with variance var / d_i^2
        dropped = 0.5 * m * (LOG_2PIE + math.log(variance)) - np.sum(np.log(d[:m]))
        vals.append(-dropped / n)
    return ProbeResult(ns, np.asarray(vals), "analytic")


def _truncnorm_entropy(lo: np.ndarray, hi: np.ndarray, sigma: float) -> np.ndarray:
    """Entropy of N(0, sigma^2) restricted to [lo, hi]."""
    a, b = lo / sigma, hi / sigma
    # mass in log space, evaluated in the tail that keeps precision
    flip = a > 0
    a2, b2 = np.where(flip, -b, a), np.where(flip, -a, b)
    log_z = log_ndtr(b2) + np.log1p(-np.exp(np.minimum(log_ndtr(a2) - log_ndtr(b2), -1e-300)))
    z = np.exp(log_z)

    def phi_x(x):
        with np.errstate(invalid="ignore"):
            return np.where(np.isfinite(x), x * np.exp(-0.5 * x * x) / math.sqrt(2 * math.pi), 0.0)

    return 0.5 * LOG_2PIE + math.log(sigma) + log_z + (phi_x(a) - phi_x(b)) / (2 * z)


def uniform_input_gain_mc(
    tf: TransferFunction,
    disturbance: DisturbanceSpec,
    n: int,
    trials: int = 100_000,
    low: float = 0.0,
    high: float = 1.0,
    seed: int = 0,
) -> float:
    """Monte-Carlo ``(h(G_n u + Phi s) - h(u)) / n`` for ``u`` uniform i.i.d.

    Since ``det G_n = g0^n`` the gain equals ``log|g0| + I(s; y) / n``. With a
    scalar seed ``s`` the posterior of ``s`` given ``y`` is a Gaussian cut to
    the interval that keeps ``G_n^{-1} y - r s`` inside the cube, so
    ``h(s | y)`` is averaged in closed form over sampled ``y``.
    """
    if disturbance.kappa != 1:
        raise ValueError("the conditional-entropy estimator handles a scalar seed only")
    from .gaussian import inverse_filter_columns

    sigma = math.sqrt(disturbance.covariance[0, 0])
    r = inverse_filter_columns(tf, disturbance.matrix(n))[:, 0]
    spec = ProcessSpec("uniform_iid", {"low": low, "high": high}, seed)
    U = sample(spec, n, trials)
    s = sigma * _chunk_rng(seed + 1, 0).standard_normal(trials)
    q = U + np.outer(s, r)
    nz = np.abs(r) > 1e-300
    with np.errstate(divide="ignore"):
        t1 = (q[:, nz] - high) / r[nz]
        t2 = (q[:, nz] - low) / r[nz]
    lo = np.max(np.minimum(t1, t2), axis=1)
    hi = np.min(np.maximum(t1, t2), axis=1)
    h_cond = np.mean(_truncnorm_entropy(lo, hi, sigma))
    h_s = 0.5 * LOG_2PIE + math.log(sigma)
    return math.log(abs(tf.g0)) + float(h_s - h_cond) / n


def samples_to_csv(samples: np.ndarray, path) -> None:
    np.savetxt(path, np.asarray(samples), delimiter=",", fmt="%.17g")
