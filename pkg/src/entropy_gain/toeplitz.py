"""Lower-triangular Toeplitz convolution matrices and their spectra."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg as sla

from .lti import (
    ImpulseResponse,
    TransferFunction,
    from_impulse,
    impulse_response,
    jensen_log_integral,
    nmp_summary,
)

__all__ = [
    "ConvolutionMatrix",
    "SingularSpectrum",
    "DecayFit",
    "GSReport",
    "SpectrumError",
    "OverflowBudgetError",
    "MAX_DIM",
    "conv_matrix",
    "tall_conv_matrix",
    "svd_spectrum",
    "usable_n",
    "decay_rate_fit",
    "effective_entropy_gain",
    "gs_limit_check",
    "inverse_conv_columns",
    "spectra_to_csv",
]

MAX_DIM = 2000
EPS = np.finfo(float).eps
UNDERFLOW_MARGIN = 1e3
OVERFLOW_LOG10 = 150.0


class SpectrumError(RuntimeError):
    pass


class OverflowBudgetError(ValueError):
    """Inverse-filter growth would exceed ``10**150`` at the requested size."""

    def __init__(self, n: int, safe_n: int):
        super().__init__(f"n={n} exceeds the overflow budget; largest safe n is {safe_n}")
        self.n = n
        self.safe_n = safe_n


def _samples(impulse, n: int | None = None) -> np.ndarray:
    if isinstance(impulse, TransferFunction):
        if n is None:
            raise ValueError("a length is required to sample a transfer function")
        return impulse_response(impulse, n).samples
    g = np.asarray(impulse, dtype=float).ravel()
    if g.size == 0:
        raise ValueError("empty impulse response")
    return g


def _check_dim(n: int) -> None:
    if n < 1:
        raise ValueError("n must be >= 1")
    if n > MAX_DIM:
        raise ValueError(f"n={n} exceeds the dense-storage cap of {MAX_DIM}")


@dataclass(frozen=True)
class ConvolutionMatrix:
    """Dense convolution matrix, square ``n x n`` or tall ``(n + eta) x n``."""

    matrix: np.ndarray
    impulse: np.ndarray
    kind: str

    @property
    def n(self) -> int:
        return self.matrix.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.matrix, dtype=dtype)


def conv_matrix(impulse, n: int) -> ConvolutionMatrix:
    """Square lower-triangular Toeplitz matrix with entry (i, j) = g[i - j]."""
    _check_dim(n)
    g = _samples(impulse, n)
    col = np.zeros(n)
    col[: min(n, g.size)] = g[:n]
    return ConvolutionMatrix(sla.toeplitz(col, np.zeros(n)), g, "square")


def tall_conv_matrix(impulse, n: int) -> ConvolutionMatrix:
    """Full convolution map of an FIR response of length ``eta + 1``."""
    _check_dim(n)
    if isinstance(impulse, TransferFunction):
        if not impulse.is_fir:
            raise ValueError("the tall convolution matrix is only defined for FIR filters")
        g = np.trim_zeros(impulse.b, "b")
    elif isinstance(impulse, ImpulseResponse):
        src = impulse.source
        if src is not None and not src.is_fir:
            raise ValueError("the tall convolution matrix is only defined for FIR filters")
        g = impulse.samples
    else:
        g = _samples(impulse)
    eta = g.size - 1
    col = np.zeros(n + eta)
    col[: g.size] = g
    return ConvolutionMatrix(sla.toeplitz(col, np.zeros(n)), g, "tall")


@dataclass(frozen=True)
class SingularSpectrum:
    """Singular values in ascending order, with optional SVD factors.

    With ``G = Q.T @ diag(d) @ R``, ``left`` holds ``Q`` (rows are left
    singular vectors, ordered like ``values``) and ``right`` holds ``R``.
    """

    values: np.ndarray
    n: int
    underflow: bool
    left: np.ndarray | None = None
    right: np.ndarray | None = None

    @property
    def log_values(self) -> np.ndarray:
        return np.log(self.values)


def svd_spectrum(cm: ConvolutionMatrix | np.ndarray, factors: bool = False) -> SingularSpectrum:
    A = np.asarray(cm, dtype=float)
    try:
        if factors:
            U, s, Vt = np.linalg.svd(A, full_matrices=False)
        else:
            s = sla.svdvals(A)
    except (np.linalg.LinAlgError, ValueError) as exc:
        cond = np.linalg.cond(A, 1) if np.all(np.isfinite(A)) else np.inf
        raise SpectrumError(f"SVD failed for n={A.shape[1]} (condition estimate {cond:.3g})") from exc
    order = np.argsort(s)
    s = s[order]
    underflow = bool(s[0] < UNDERFLOW_MARGIN * EPS * s[-1]) if s.size else False
    if factors:
        return SingularSpectrum(s, A.shape[1], underflow, U[:, order].T, Vt[order])
    return SingularSpectrum(s, A.shape[1], underflow)


def _spectral_norm_bound(tf: TransferFunction, points: int = 4096) -> float:
    w = 2 * np.pi * np.arange(points) / points
    return float(np.max(np.abs(tf(np.exp(1j * w)))))


def usable_n(tf: TransferFunction) -> int:
    """Largest n for which ``|rho_1|^-n`` stays resolvable against the norm."""
    summary = nmp_summary(tf)
    if summary.m == 0:
        return MAX_DIM
    rho = abs(summary.distinct[0])
    floor = UNDERFLOW_MARGIN * EPS * _spectral_norm_bound(tf)
    return int(min(MAX_DIM, np.floor(-np.log(floor) / np.log(rho))))


@dataclass(frozen=True)
class DecayFit:
    """Least-squares slopes of ``log d_{n,l}`` against n, for l = 1..len(slopes)."""

    slopes: np.ndarray
    expected: np.ndarray
    m: int
    n_used: np.ndarray


def decay_rate_fit(tf: TransferFunction, n_grid: Iterable[int], n_indices: int | None = None) -> DecayFit:
    """Fit the exponential decay rate of the smallest singular values.

    Only the ``m + max(1, min(n_grid) // 5)`` smallest values are fitted by
    default; deeper indices slide across the bulk of the spectrum as n grows
    and their slope stops being meaningful.
    """
    if not (tf.is_biproper and tf.is_stable):
        raise ValueError("decay_rate_fit needs a stable biproper filter")
    summary = nmp_summary(tf)
    grid = sorted(set(int(n) for n in n_grid))
    if n_indices is None:
        n_indices = summary.m + max(1, grid[0] // 5)
    n_indices = min(n_indices, grid[0])
    ns, logs = [], []
    for n in grid:
        spec = svd_spectrum(conv_matrix(tf, n))
        if spec.underflow:
            continue
        ns.append(n)
        logs.append(spec.log_values[:n_indices])
    if len(ns) < 4:
        raise ValueError(f"only {len(ns)} usable n values (need >= 4); shrink the grid")
    ns_arr = np.asarray(ns, dtype=float)
    L = np.vstack(logs)
    slopes = np.polyfit(ns_arr, L, 1)[0]
    expected = np.zeros(n_indices)
    for l in range(min(summary.m, n_indices)):
        expected[l] = -np.log(abs(summary.distinct[summary.iota[l] - 1]))
    return DecayFit(np.atleast_1d(slopes), expected, summary.m, ns_arr.astype(int))


def _fir_taps(tf_fir) -> np.ndarray:
    if isinstance(tf_fir, TransferFunction):
        if not tf_fir.is_fir:
            raise ValueError("effective entropy gain is defined here for FIR filters only")
        return np.trim_zeros(tf_fir.b, "b")
    return _samples(tf_fir)


def effective_entropy_gain(tf_fir, n: int) -> float:
    """``0.5 * log det(G_tall^T G_tall)`` in nats, via a QR factorization."""
    g = _fir_taps(tf_fir)
    if g[0] == 0:
        raise ValueError("g0 = 0: the tall convolution matrix is treated as rank deficient")
    G = tall_conv_matrix(g, n).matrix
    R = np.linalg.qr(G, mode="r")
    diag = np.abs(np.diag(R))
    if np.min(diag) <= EPS * np.max(diag) * n:
        raise ValueError("tall convolution matrix is numerically rank deficient")
    return float(np.sum(np.log(diag)))


@dataclass(frozen=True)
class GSReport:
    n: np.ndarray
    per_sample: np.ndarray
    target: float
    gap: np.ndarray
    trend_slope: float

    @property
    def terminal_gap(self) -> float:
        return float(self.gap[-1])


def gs_limit_check(tf_fir, n_grid: Iterable[int]) -> GSReport:
    """Compare ``effective_entropy_gain(n) / n`` with the Jensen integral.

    ``trend_slope`` is the least-squares slope of ``log|gap|`` against
    ``log n``; negative means the gap is shrinking.
    """
    g = _fir_taps(tf_fir)
    target = jensen_log_integral(from_impulse(g)).value
    ns = np.asarray(sorted(set(int(n) for n in n_grid)))
    per = np.array([effective_entropy_gain(g, int(n)) / n for n in ns])
    gap = per - target
    mag = np.abs(gap)
    if len(ns) >= 2 and np.all(mag > 0):
        slope = float(np.polyfit(np.log(ns), np.log(mag), 1)[0])
    else:
        slope = 0.0 if np.all(mag == 0) else float("nan")
    return GSReport(ns, per, target, gap, slope)


def _growth_rate(impulse) -> float:
    if isinstance(impulse, TransferFunction):
        roots = impulse.zeros
    else:
        g = np.trim_zeros(np.asarray(impulse, dtype=float), "b")
        roots = np.roots(g) if g.size > 1 else np.array([])
    return float(np.max(np.abs(roots))) if len(roots) else 0.0


def overflow_safe_n(impulse) -> int:
    rho = _growth_rate(impulse)
    if rho <= 1:
        return MAX_DIM
    return int(min(MAX_DIM, np.floor(OVERFLOW_LOG10 / np.log10(rho))))


def inverse_conv_columns(impulse, n: int, k: int) -> np.ndarray:
    """First ``k`` columns of the inverse of the square convolution matrix.

    Raises :class:`OverflowBudgetError` when the inverse response would grow
    past ``10**150`` within ``n`` samples.
    """
    _check_dim(n)
    if not 0 <= k <= n:
        raise ValueError("k must lie in [0, n]")
    safe = overflow_safe_n(impulse)
    if n > safe:
        raise OverflowBudgetError(n, safe)
    if isinstance(impulse, TransferFunction):
        h = impulse_response(impulse.inverse(), n).samples
    else:
        from scipy.signal import lfilter

        g = _samples(impulse)
        if g[0] == 0:
            raise ValueError("g0 = 0: convolution matrix is singular")
        delta = np.zeros(n)
        delta[0] = 1.0
        h = lfilter([1.0], g, delta)
    return sla.toeplitz(h, np.zeros(n))[:, :k]


def spectra_to_csv(spectra: Sequence[SingularSpectrum], out=None) -> str:
    """Write ``n, index, singular_value, underflow_flag`` rows (index is 1-based)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["n", "index", "singular_value", "underflow_flag"])
    for spec in spectra:
        for i, d in enumerate(spec.values, start=1):
            writer.writerow([spec.n, i, repr(float(d)), int(spec.underflow)])
    text = buf.getvalue()
    if out is not None:
        if hasattr(out, "write"):
            out.write(text)
        else:
            with open(out, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
    return text
