"""Rational discrete-time transfer functions.

A filter is stored in zero/pole/gain form in the ``z`` variable,

    G(z) = gain * prod(z - zeros) / prod(z - poles),

which is causal when ``len(zeros) <= len(poles)``. Coefficient vectors are
exposed in powers of ``z**-1`` (the ``b, a`` convention of
:func:`scipy.signal.lfilter`), so ``make_tf([-2], [0])`` is ``1 + 2 z^-1``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.signal import lfilter

__all__ = [
    "TransferFunction",
    "ImpulseResponse",
    "NMPSummary",
    "JensenResult",
    "ClosedLoop",
    "NearUnitCircleWarning",
    "make_tf",
    "from_coeffs",
    "from_impulse",
    "impulse_response",
    "jensen_log_integral",
    "nmp_summary",
    "factorize",
    "blaschke_product",
    "closed_loop",
    "natural_response_maps",
]

CONJ_TOL = 1e-8
CLUSTER_TOL = 1e-6
UNIT_CIRCLE_TOL = 1e-12
NEAR_UNIT_GUARD = 1e-3


class NearUnitCircleWarning(RuntimeWarning):
    """A zero or pole sits close enough to |z| = 1 to slow quadrature down."""


def _as_roots(values: Iterable) -> np.ndarray:
    out = []
    for v in values:
        if isinstance(v, (list, tuple)):
            if len(v) != 2:
                raise ValueError(f"root given as pair must be [re, im], got {v!r}")
            out.append(complex(v[0], v[1]))
        else:
            out.append(complex(v))
    return np.asarray(out, dtype=complex)


def _pair_conjugates(roots: np.ndarray, what: str) -> np.ndarray:
    """Snap complex roots onto exact conjugate pairs; fail if a partner is missing."""
    roots = np.asarray(roots, dtype=complex).copy()
    scale = np.maximum(1.0, np.abs(roots))
    real = np.abs(roots.imag) <= CONJ_TOL * scale
    roots[real] = roots[real].real
    unmatched = list(np.flatnonzero(~real & (roots.imag > 0)))
    lower = list(np.flatnonzero(~real & (roots.imag < 0)))
    for i in unmatched:
        dist = [abs(roots[j] - np.conj(roots[i])) for j in lower]
        if not dist or min(dist) > CONJ_TOL * scale[i]:
            raise ValueError(f"{what} {roots[i]} has no conjugate partner")
        j = lower.pop(int(np.argmin(dist)))
        mid = 0.5 * (roots[i] + np.conj(roots[j]))
        roots[i], roots[j] = mid, np.conj(mid)
    if lower:
        raise ValueError(f"{what} {roots[lower[0]]} has no conjugate partner")
    return roots


def _real_poly(roots: np.ndarray) -> np.ndarray:
    return np.real_if_close(np.poly(roots), tol=1e6).real if len(roots) else np.ones(1)


@dataclass(frozen=True, eq=False)
class TransferFunction:
    """Causal real-coefficient rational filter in zero/pole/gain form.

    Build instances with :func:`make_tf`, :func:`from_coeffs` or
    :func:`from_impulse`; they validate the roots and cache the coefficient
    vectors ``b`` (numerator) and ``a`` (denominator) in powers of ``z^-1``.
    """

    zeros: np.ndarray
    poles: np.ndarray
    gain: float
    b: np.ndarray = field(repr=False)
    a: np.ndarray = field(repr=False)

    @property
    def order(self) -> int:
        return len(self.poles)

    @property
    def relative_degree(self) -> int:
        return len(self.poles) - len(self.zeros)

    @property
    def is_biproper(self) -> bool:
        return self.relative_degree == 0 and self.gain != 0

    @property
    def is_stable(self) -> bool:
        return bool(np.all(np.abs(self.poles) < 1))

    @property
    def is_fir(self) -> bool:
        return bool(np.all(self.poles == 0))

    @property
    def is_minimum_phase(self) -> bool:
        return bool(np.all(np.abs(self.zeros) < 1))

    @property
    def g0(self) -> float:
        """First impulse-response sample."""
        return float(self.gain) if self.relative_degree == 0 else 0.0

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        num = np.prod(z[..., None] - self.zeros, axis=-1) if len(self.zeros) else 1.0
        den = np.prod(z[..., None] - self.poles, axis=-1) if len(self.poles) else 1.0
        return self.gain * num / den

    def __mul__(self, other: "TransferFunction") -> "TransferFunction":
        if not isinstance(other, TransferFunction):
            return make_tf(self.zeros, self.poles, self.gain * float(other))
        return make_tf(
            np.concatenate([self.zeros, other.zeros]),
            np.concatenate([self.poles, other.poles]),
            self.gain * other.gain,
        )

    __rmul__ = __mul__

    def inverse(self) -> "TransferFunction":
        """Return ``1/G``; only causal when ``G`` is biproper."""
        if not self.is_biproper:
            raise ValueError("only biproper filters have a causal inverse")
        return make_tf(self.poles, self.zeros, 1.0 / self.gain)

    def scaled(self, c: float) -> "TransferFunction":
        return make_tf(self.zeros, self.poles, self.gain * c)

    def cancel(self, tol: float = CLUSTER_TOL) -> "TransferFunction":
        """Remove zero/pole pairs that coincide within ``tol``."""
        zeros = list(self.zeros)
        poles = list(self.poles)
        keep_zeros = []
        for zr in zeros:
            if poles:
                d = np.abs(np.asarray(poles) - zr)
                j = int(np.argmin(d))
                if d[j] <= tol * max(1.0, abs(zr)):
                    poles.pop(j)
                    continue
            keep_zeros.append(zr)
        return make_tf(keep_zeros, poles, self.gain)

    def to_dict(self) -> dict:
        return {
            "zeros": [[float(r.real), float(r.imag)] for r in self.zeros],
            "poles": [[float(r.real), float(r.imag)] for r in self.poles],
            "gain": float(self.gain),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "TransferFunction":
        unknown = set(data) - {"zeros", "poles", "gain"}
        if unknown:
            raise ValueError(f"unknown filter fields: {sorted(unknown)}")
        return make_tf(data.get("zeros", []), data.get("poles", []), data.get("gain", 1.0))

    @classmethod
    def from_json(cls, text: str) -> "TransferFunction":
        return cls.from_dict(json.loads(text))


def make_tf(zeros: Sequence = (), poles: Sequence = (), gain: float = 1.0) -> TransferFunction:
    """Validate roots and build a :class:`TransferFunction`.

    Raises
    ------
    ValueError
        If there are more zeros than poles (non-causal), a root lies on the
        unit circle, or a complex root lacks its conjugate.
    """
    z = _pair_conjugates(_as_roots(zeros), "zero")
    p = _pair_conjugates(_as_roots(poles), "pole")
    if len(z) > len(p):
        raise ValueError(f"non-causal filter: {len(z)} zeros but only {len(p)} poles")
    for what, roots in (("zero", z), ("pole", p)):
        on_circle = np.abs(np.abs(roots) - 1.0) <= UNIT_CIRCLE_TOL
        if np.any(on_circle):
            raise ValueError(f"{what} {roots[on_circle][0]} lies on the unit circle")
    gain = float(gain)
    b = np.concatenate([np.zeros(len(p) - len(z)), gain * _real_poly(z)])
    a = _real_poly(p)
    return TransferFunction(z, p, gain, b, a)


def from_coeffs(b: Sequence[float], a: Sequence[float] = (1.0,)) -> TransferFunction:
    """Build a filter from ``z^-1`` coefficient vectors; roots via companion eigenvalues."""
    b = np.trim_zeros(np.atleast_1d(np.asarray(b, dtype=float)), "b")
    a = np.trim_zeros(np.atleast_1d(np.asarray(a, dtype=float)), "b")
    if a.size == 0 or a[0] == 0:
        raise ValueError("denominator must have a nonzero leading coefficient")
    if b.size == 0:
        return make_tf([], [], 0.0)
    length = max(len(b), len(a))
    bp = np.concatenate([b, np.zeros(length - len(b))])
    ap = np.concatenate([a, np.zeros(length - len(a))])
    lead = np.flatnonzero(bp)[0]
    zeros = np.roots(bp)
    poles = np.roots(ap)
    return make_tf(zeros, poles, bp[lead] / ap[0])


def from_impulse(g: Sequence[float]) -> TransferFunction:
    """FIR filter whose impulse response is ``g``."""
    return from_coeffs(g, [1.0])


@dataclass(frozen=True)
class ImpulseResponse:
    """First ``n`` impulse-response samples ``g_0 .. g_{n-1}`` of a filter."""

    samples: np.ndarray
    source: TransferFunction | None = None

    @property
    def n(self) -> int:
        return len(self.samples)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.samples, dtype=dtype)

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, item):
        return self.samples[item]


def impulse_response(tf: TransferFunction, n: int) -> ImpulseResponse:
    if n < 1:
        raise ValueError("n must be >= 1")
    delta = np.zeros(n)
    delta[0] = 1.0
    return ImpulseResponse(lfilter(tf.b, tf.a, delta), tf)


@dataclass(frozen=True)
class JensenResult:
    value: float
    near_unit_circle: bool

    def __float__(self) -> float:
        return self.value


def jensen_log_integral(tf: TransferFunction, quadrature_points: int = 1 << 16) -> JensenResult:
    """Mean of ``log|G(e^{jw})|`` over a uniform grid on [-pi, pi).

    For a periodic integrand the trapezoid rule reduces to the grid mean.
    Roots within 1e-3 of the unit circle set ``near_unit_circle`` and emit a
    :class:`NearUnitCircleWarning`, since convergence slows sharply there.
    """
    if quadrature_points < 512:
        raise ValueError("quadrature_points must be >= 512")
    if tf.gain == 0:
        raise ValueError("log|G| is not integrable for the zero filter")
    roots = np.concatenate([tf.zeros, tf.poles])
    near = bool(np.any(np.abs(np.abs(roots) - 1.0) < NEAR_UNIT_GUARD))
    if near:
        warnings.warn("root within 1e-3 of the unit circle", NearUnitCircleWarning, stacklevel=2)
    w = -np.pi + 2 * np.pi * np.arange(quadrature_points) / quadrature_points
    e = np.exp(1j * w)
    acc = np.full(quadrature_points, np.log(abs(tf.gain)))
    for zr in tf.zeros:
        acc += np.log(np.abs(e - zr))
    for pl in tf.poles:
        acc -= np.log(np.abs(e - pl))
    return JensenResult(float(np.mean(acc)), near)


def _cluster(roots: np.ndarray, tol: float = CLUSTER_TOL) -> list[tuple[complex, int]]:
    groups: list[list[complex]] = []
    for r in roots:
        for grp in groups:
            if abs(grp[0] - r) <= tol * max(1.0, abs(r)):
                grp.append(r)
                break
        else:
            groups.append([r])
    return [(complex(np.mean(g)), len(g)) for g in groups]


@dataclass(frozen=True)
class NMPSummary:
    """Non-minimum-phase zero bookkeeping.

    ``distinct`` holds the distinct NMP zeros ordered by decreasing modulus,
    ``multiplicities`` their multiplicities, and ``iota[k-1]`` the 1-based
    index into ``distinct`` of the k-th NMP zero counted with multiplicity.
    ``log_sum`` is the sum of ``log|rho|`` over all m NMP zeros (nats).
    """

    m: int
    M: int
    distinct: tuple[complex, ...]
    multiplicities: tuple[int, ...]
    iota: tuple[int, ...]
    log_sum: float

    def partial_log_sum(self, k: int) -> float:
        """Sum of ``log|rho_iota(i)|`` for i = 1..min(k, m)."""
        k = min(max(k, 0), self.m)
        return float(sum(np.log(abs(self.distinct[self.iota[i] - 1])) for i in range(k)))


def nmp_summary(tf: TransferFunction) -> NMPSummary:
    nmp = tf.zeros[np.abs(tf.zeros) > 1]
    groups = _cluster(nmp)
    groups.sort(key=lambda g: (-abs(g[0]), -np.angle(g[0])))
    distinct = tuple(g[0] for g in groups)
    mult = tuple(g[1] for g in groups)
    m = int(sum(mult))
    cum = np.cumsum(mult)
    iota = tuple(int(np.searchsorted(cum, k) + 1) for k in range(1, m + 1))
    log_sum = float(sum(l * np.log(abs(r)) for r, l in zip(distinct, mult)))
    return NMPSummary(m, len(distinct), distinct, mult, iota, log_sum)


def factorize(tf: TransferFunction, mode: str = "poles_zeros") -> tuple[TransferFunction, TransferFunction]:
    """Split a stable biproper filter into two biproper factors.

    ``poles_zeros`` returns ``(P, N)`` with ``P`` all-pole (zeros at the
    origin) and ``N`` FIR carrying the zeros and the gain.  ``mp_nmp`` returns
    ``(G_mp, F)`` where ``F`` is monic FIR with exactly the NMP zeros and
    ``G_mp`` keeps every pole and the minimum-phase zeros.
    """
    if not tf.is_biproper:
        raise ValueError("factorize requires a biproper filter")
    p = tf.order
    if mode == "poles_zeros":
        P = make_tf(np.zeros(p), tf.poles, 1.0)
        N = make_tf(tf.zeros, np.zeros(p), tf.gain)
        return P, N
    if mode == "mp_nmp":
        if not tf.is_stable:
            raise ValueError("mp_nmp factorization requires a stable filter")
        outside = np.abs(tf.zeros) > 1
        m = int(outside.sum())
        F = make_tf(tf.zeros[outside], np.zeros(m), 1.0)
        G_mp = make_tf(np.concatenate([tf.zeros[~outside], np.zeros(m)]), tf.poles, tf.gain)
        return G_mp, F
    raise ValueError(f"unknown factorization mode {mode!r}")


def blaschke_product(poles: Sequence) -> TransferFunction:
    """All-pass ``prod (z - p) / prod conj(p) (z - 1/conj(p))`` for ``|p| > 1``."""
    p = _pair_conjugates(_as_roots(poles), "pole")
    if np.any(np.abs(p) <= 1):
        raise ValueError("Blaschke product needs poles strictly outside the unit circle")
    gain = 1.0 / np.prod(np.conj(p)) if len(p) else 1.0
    return make_tf(p, 1.0 / np.conj(p), float(np.real(gain)))


@dataclass(frozen=True)
class ClosedLoop:
    """Map from exogenous input to ``y`` for ``y = u - P T y``.

    ``y = unstable_factor * stable_factor * u``: the FIR factor is the plant
    denominator (its initial state is the plant state), the stable fraction
    is ``Theta / (Theta D + N Gamma)``.
    """

    tf: TransferFunction
    unstable_factor: TransferFunction
    stable_factor: TransferFunction


def _polyadd(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    n = max(len(p), len(q))
    return np.pad(p, (0, n - len(p))) + np.pad(q, (0, n - len(q)))


def closed_loop(P: TransferFunction, T: TransferFunction) -> ClosedLoop:
    if P.relative_degree != 1:
        raise ValueError("plant must be strictly proper with relative degree 1")
    if T.relative_degree != 0:
        raise ValueError("channel must be biproper (or a constant)")
    D, N = P.a, P.b / P.a[0]
    D = D / P.a[0]
    Gamma, Theta = T.b, T.a
    char = _polyadd(np.convolve(Theta, D), np.convolve(N, Gamma))
    stable = from_coeffs(Theta, char)
    if not stable.is_stable:
        raise ValueError(
            f"closed loop is unstable: characteristic roots {np.round(stable.poles, 6).tolist()}"
        )
    dfac = make_tf(P.poles, np.zeros(P.order), 1.0)
    total = make_tf(
        np.concatenate([dfac.zeros, stable.zeros]),
        np.concatenate([dfac.poles, stable.poles]),
        stable.gain,
    )
    return ClosedLoop(total.cancel(), dfac, stable)


def natural_response_maps(tf: TransferFunction, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Natural-response matrices of the ``P N`` realization.

    ``P = 1/a(z^-1)`` runs ``w_k = u_k - sum a_i w_{k-i}`` with initial state
    ``x0 = (w_{1-p}, ..., w_0)`` shared with ``N = b(z^-1)``.  Returns
    ``(C_tilde, C)`` where ``C_tilde @ x0`` is the natural response of ``P``
    and ``C @ x0`` the direct contribution of the pre-time ``w`` through the
    taps of ``N``; the output natural response is ``N_n C_tilde x0 + C x0``.
    ``C`` is zero below row ``p``.
    """
    p = tf.order
    a = tf.a / tf.a[0]
    b = np.pad(tf.b / tf.a[0], (0, p + 1 - len(tf.b)))
    C_tilde = np.zeros((n, p))
    C = np.zeros((n, p))
    for j in range(p):
        hist = np.zeros(p)  # hist[i] = w_{-i}, i = 0..p-1
        hist[p - 1 - j] = 1.0
        w = np.zeros(n)
        for k in range(n):
            acc = 0.0
            for i in range(1, p + 1):
                t = k - i
                acc -= a[i] * (w[t] if t >= 0 else hist[-t - 1])
            w[k] = acc
        C_tilde[:, j] = w
        for k in range(min(n, p)):
            C[k, j] = sum(b[i] * hist[i - k - 1] for i in range(k + 1, p + 1))
    return C_tilde, C
