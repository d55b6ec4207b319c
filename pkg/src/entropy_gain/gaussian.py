"""Closed-form entropy algebra for linear-Gaussian vectors.

Every entropy gain here reduces to ``log det(A A^T + Phi K Phi^T)`` for a
lower-triangular Toeplitz ``A``. Because ``det A = g0^n``, the determinant
lemma turns this into a small ``kappa x kappa`` determinant,

    log det(A A^T + Phi K Phi^T) = 2 n log|g0| + log det(I + L^T W^T W L),

with ``W = A^{-1} Phi`` (an inverse-filter run on the columns of ``Phi``) and
``K = L L^T``. ``W`` grows like ``|rho|^n`` for NMP zeros ``rho``. With two
or more growing columns the smaller growth directions fall below double
precision, so those runs are repeated in mpmath at a working precision sized
to the growth.
"""

from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import mpmath
import numpy as np
import scipy.linalg as sla
from scipy.signal import lfilter

from .lti import TransferFunction, natural_response_maps, nmp_summary
from .toeplitz import OverflowBudgetError, conv_matrix, overflow_safe_n

__all__ = [
    "LinearGaussianModel",
    "InputSpec",
    "DisturbanceSpec",
    "DegenerateDistributionError",
    "IllConditionedWarning",
    "gaussian_entropy",
    "logdet_psd",
    "entropy",
    "mutual_information",
    "logdet_update",
    "inverse_filter_columns",
    "disturbance_gain",
    "disturbance_gain_dense",
    "input_disturbance_gain",
    "initial_state_gain",
    "initial_state_gain_dense",
    "psd_factor",
    "mp_context",
    "to_mp_columns",
]

LOG_2PIE = math.log(2 * math.pi * math.e)
COND_GUARD = 1e12


class DegenerateDistributionError(ValueError):
    """Covariance is singular, so the differential entropy is undefined."""


class IllConditionedWarning(RuntimeWarning):
    pass


def logdet_psd(K: np.ndarray) -> float:
    """log det of a symmetric positive-definite matrix via Cholesky."""
    K = np.atleast_2d(np.asarray(K, dtype=float))
    if K.size == 0:
        return 0.0
    try:
        L = np.linalg.cholesky(0.5 * (K + K.T))
    except np.linalg.LinAlgError as exc:
        raise DegenerateDistributionError("covariance is not positive definite") from exc
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def gaussian_entropy(K: np.ndarray) -> float:
    K = np.atleast_2d(K)
    return 0.5 * (K.shape[0] * LOG_2PIE + logdet_psd(K))


def psd_factor(K: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Factor ``F`` with ``F @ F.T == K``; zero-variance directions are dropped."""
    K = np.atleast_2d(np.asarray(K, dtype=float))
    if K.size == 0:
        return np.zeros((K.shape[0], 0))
    w, V = np.linalg.eigh(0.5 * (K + K.T))
    if np.any(w < -tol * max(1.0, np.max(np.abs(w)))):
        raise ValueError("covariance has negative eigenvalues")
    keep = w > tol * max(1.0, np.max(np.abs(w)))
    return V[:, keep] * np.sqrt(w[keep])


@dataclass(frozen=True)
class LinearGaussianModel:
    """Random vector ``y = M z + b`` with ``z`` standard normal.

    ``blocks`` names disjoint slices of ``z`` (``"u"``, ``"x0"`` ...) and must
    cover all of its coordinates.
    """

    generator: np.ndarray
    offset: np.ndarray | None = None
    blocks: dict[str, slice] = field(default_factory=dict)

    def __post_init__(self):
        M = np.atleast_2d(np.asarray(self.generator, dtype=float))
        object.__setattr__(self, "generator", M)
        if self.offset is None:
            object.__setattr__(self, "offset", np.zeros(M.shape[0]))
        if self.blocks:
            covered = np.zeros(M.shape[1], dtype=int)
            for name, sl in self.blocks.items():
                covered[sl] += 1
            if np.any(covered != 1):
                raise ValueError("blocks must partition the generator columns")

    @classmethod
    def from_parts(cls, parts: Sequence[tuple[str, np.ndarray]]) -> "LinearGaussianModel":
        """Stack named generator blocks side by side: ``y = sum M_i z_i``."""
        mats, blocks, start = [], {}, 0
        for name, mat in parts:
            mat = np.atleast_2d(np.asarray(mat, dtype=float))
            mats.append(mat)
            blocks[name] = slice(start, start + mat.shape[1])
            start += mat.shape[1]
        return cls(np.hstack(mats), None, blocks)

    @property
    def dim(self) -> int:
        return self.generator.shape[0]

    @property
    def covariance(self) -> np.ndarray:
        return self.generator @ self.generator.T

    def selector(self, which) -> np.ndarray:
        """Linear map from ``z`` to the requested variable.

        ``which`` is ``"output"``, a block name, or ``("output", rows)``.
        """
        if isinstance(which, tuple) and which[0] == "output":
            return self.generator[np.asarray(which[1])]
        if which == "output":
            return self.generator
        if which in self.blocks:
            sl = self.blocks[which]
            E = np.zeros((sl.stop - sl.start, self.generator.shape[1]))
            E[:, sl] = np.eye(sl.stop - sl.start)
            return E
        raise KeyError(f"unknown variable {which!r}")


def entropy(model: LinearGaussianModel) -> float:
    """Differential entropy in nats, from a QR factor of the generator."""
    M = model.generator
    n, w = M.shape
    if w < n:
        raise DegenerateDistributionError(f"rank <= {w} < dimension {n}")
    R = np.linalg.qr(M.T, mode="r")
    d = np.abs(np.diag(R))
    if d.size == 0:
        return 0.0
    if np.min(d) <= np.finfo(float).eps * np.max(d) * max(n, w):
        raise DegenerateDistributionError("generator is rank deficient")
    return 0.5 * n * LOG_2PIE + float(np.sum(np.log(d)))


def mutual_information(model: LinearGaussianModel, target="output", given="x0") -> float:
    """``I(target; given)`` in nats via the conditional covariance.

    Emits :class:`IllConditionedWarning` if the conditioning covariance has
    condition number above 1e12.
    """
    T = model.selector(target)
    B = model.selector(given)
    K_t, K_b, K_tb = T @ T.T, B @ B.T, T @ B.T
    if K_b.size == 0 or K_t.size == 0:
        return 0.0
    try:
        Lb = np.linalg.cholesky(K_b)
    except np.linalg.LinAlgError as exc:
        raise DegenerateDistributionError("conditioning covariance is singular") from exc
    if np.linalg.cond(K_b) > COND_GUARD:
        warnings.warn("conditioning covariance is near singular", IllConditionedWarning, stacklevel=2)
    X = sla.solve_triangular(Lb, K_tb.T, lower=True)
    K_cond = K_t - X.T @ X
    return 0.5 * (logdet_psd(K_t) - logdet_psd(K_cond))


# -- growth-safe determinant identity -------------------------------------


def _working_dps(growth_log10: float) -> int:
    return int(30 + 2 * max(growth_log10, 0.0))


@functools.lru_cache(maxsize=None)
def mp_context(dps: int) -> mpmath.ctx_mp.MPContext:
    """Private mpmath context; never mutated, so safe to share across threads."""
    ctx = mpmath.MPContext()
    ctx.dps = dps
    return ctx


def _filter_mp(b, a, columns, dps):
    """Run ``b/a`` (z^-1 coefficients, zero state) over mp column lists."""
    ctx = mp_context(dps)
    bb = [ctx.mpf(float(x)) for x in b]
    aa = [ctx.mpf(float(x)) for x in a]
    out = []
    for x in columns:
        y = []
        for t in range(len(x)):
            acc = ctx.mpf(0)
            for i in range(min(len(bb), t + 1)):
                acc += bb[i] * x[t - i]
            for i in range(1, min(len(aa), t + 1)):
                acc -= aa[i] * y[t - i]
            y.append(acc / aa[0])
        out.append(y)
    return out


def to_mp_columns(X: np.ndarray, dps: int):
    ctx = mp_context(dps)
    return [[ctx.mpf(float(v)) for v in X[:, j]] for j in range(X.shape[1])]


def inverse_filter_columns(tf: TransferFunction, X: np.ndarray, dps: int | None = None):
    """Apply ``1/G`` (zero initial state) to each column of ``X``.

    Returns a float array, or a list of mpmath columns when ``dps`` is given.
    """
    if tf.g0 == 0:
        raise ValueError("filter has g0 = 0 and no causal inverse")
    if dps is None:
        return lfilter(tf.a, tf.b, X, axis=0)
    return _filter_mp(tf.a, tf.b, to_mp_columns(X, dps), dps)


def logdet_update(W, factor: np.ndarray, dps: int | None = None) -> float:
    """``log det(I + F^T W^T W F)`` for float ``W`` or mp columns ``W``."""
    F = np.atleast_2d(np.asarray(factor, dtype=float))
    if F.size == 0:
        return 0.0
    if dps is None:
        WF = np.asarray(W) @ F
        # QR of [WF; I] keeps the conditioning of WF rather than squaring it.
        R = np.linalg.qr(np.vstack([WF, np.eye(F.shape[1])]), mode="r")
        return 2.0 * float(np.sum(np.log(np.abs(np.diag(R)))))
    ctx = mp_context(dps)
    k, tau = F.shape
    Fm = [[ctx.mpf(float(F[i, j])) for j in range(tau)] for i in range(k)]
    G = [[ctx.fdot(W[i], W[j]) for j in range(k)] for i in range(k)]
    A = ctx.matrix(tau, tau)
    for p in range(tau):
        for q in range(tau):
            A[p, q] = ctx.fsum(Fm[i][p] * G[i][j] * Fm[j][q] for i in range(k) for j in range(k)) + (1 if p == q else 0)
    return float(ctx.log(ctx.det(A)))


# -- input and disturbance specifications ---------------------------------


@dataclass(frozen=True)
class InputSpec:
    """Gaussian input ``u = sqrt(variance) * S w`` with ``w`` i.i.d. standard.

    ``shaping`` (``S``) must be stable, minimum phase and biproper; ``None``
    means an i.i.d. input.
    """

    variance: float = 1.0
    shaping: TransferFunction | None = None

    def __post_init__(self):
        if not self.variance > 0:
            raise ValueError("input variance must be positive")
        S = self.shaping
        if S is not None and not (S.is_biproper and S.is_stable and S.is_minimum_phase):
            raise ValueError("shaping filter must be stable, minimum phase and biproper")

    @classmethod
    def from_dict(cls, data: dict | None) -> "InputSpec":
        data = dict(data or {})
        if "covariance" in data:
            raise ValueError("only innovations-form inputs are supported; give a shaping filter")
        unknown = set(data) - {"variance", "shaping"}
        if unknown:
            raise ValueError(f"unknown input fields: {sorted(unknown)}")
        shaping = data.get("shaping")
        return cls(
            float(data.get("variance", 1.0)),
            TransferFunction.from_dict(shaping) if shaping is not None else None,
        )

    def to_dict(self) -> dict:
        return {"variance": self.variance, "shaping": None if self.shaping is None else self.shaping.to_dict()}

    def logdet_cov(self, n: int) -> float:
        s0 = self.shaping.g0 if self.shaping is not None else 1.0
        return n * (math.log(self.variance) + 2 * math.log(abs(s0)))

    def whiten(self, X, dps=None):
        """Apply ``S^{-1} / sqrt(variance)`` to the columns of ``X``."""
        scale = 1.0 / math.sqrt(self.variance)
        if self.shaping is None:
            if dps is None:
                return np.asarray(X) * scale
            return [[v * scale for v in col] for col in X]
        if dps is None:
            return inverse_filter_columns(self.shaping, np.asarray(X)) * scale
        out = _filter_mp(self.shaping.a, self.shaping.b, X, dps)
        return [[v * scale for v in col] for col in out]


@dataclass(frozen=True)
class DisturbanceSpec:
    """Output disturbance ``z = Phi s`` with ``s ~ N(0, covariance)``.

    ``placement`` picks the orthonormal basis: ``first_m_coordinates``
    (identity columns), ``random_orthonormal`` (random orthonormal columns
    supported on the first ``support`` samples, fixed by ``seed``) or
    ``custom`` (``basis`` given explicitly, rows beyond its length are zero).
    """

    kappa: int
    covariance: np.ndarray
    placement: str = "first_m_coordinates"
    support: int | None = None
    seed: int = 0
    basis: np.ndarray | None = None

    def __post_init__(self):
        K = np.atleast_2d(np.asarray(self.covariance, dtype=float)).reshape(self.kappa, self.kappa)
        object.__setattr__(self, "covariance", K)
        if self.kappa < 0:
            raise ValueError("kappa must be non-negative")
        if self.kappa and logdet_psd(K) == -np.inf:
            raise ValueError("seed covariance must be positive definite")
        if self.placement not in ("first_m_coordinates", "random_orthonormal", "custom"):
            raise ValueError(f"unknown placement {self.placement!r}")
        if self.placement == "custom":
            if self.basis is None:
                raise ValueError("custom placement needs an explicit basis")
            B = np.atleast_2d(np.asarray(self.basis, dtype=float))
            if B.shape[1] != self.kappa:
                raise ValueError("basis must have kappa columns")
            if not np.allclose(B.T @ B, np.eye(self.kappa), atol=1e-10):
                raise ValueError("basis columns must be orthonormal")
            object.__setattr__(self, "basis", B)

    @classmethod
    def isotropic(cls, kappa: int, variance: float, **kw) -> "DisturbanceSpec":
        return cls(kappa, variance * np.eye(kappa), **kw)

    @property
    def span(self) -> int:
        """Number of leading samples the basis touches."""
        if self.placement == "first_m_coordinates":
            return self.kappa
        if self.placement == "random_orthonormal":
            return self.support or max(2 * self.kappa, 8)
        return self.basis.shape[0]

    def matrix(self, n: int) -> np.ndarray:
        """The ``n x kappa`` truncation of the basis."""
        if n < self.span:
            raise ValueError(f"n={n} is shorter than the disturbance support {self.span}")
        Phi = np.zeros((n, self.kappa))
        if self.placement == "first_m_coordinates":
            Phi[: self.kappa] = np.eye(self.kappa)
        elif self.placement == "random_orthonormal":
            rng = np.random.default_rng(self.seed)
            Q, _ = np.linalg.qr(rng.standard_normal((self.span, self.kappa)))
            Phi[: self.span] = Q
        else:
            Phi[: self.basis.shape[0]] = self.basis
        return Phi

    def to_dict(self) -> dict:
        d = {
            "kappa": self.kappa,
            "covariance": self.covariance.tolist(),
            "placement": self.placement,
            "seed": self.seed,
        }
        if self.support is not None:
            d["support"] = self.support
        if self.basis is not None:
            d["basis"] = self.basis.tolist()
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "DisturbanceSpec":
        allowed = {"kappa", "covariance", "variance", "placement", "support", "seed", "basis"}
        unknown = set(data) - allowed
        if unknown:
            raise ValueError(f"unknown disturbance fields: {sorted(unknown)}")
        kappa = int(data["kappa"])
        if "covariance" in data:
            cov = np.asarray(data["covariance"], dtype=float)
        else:
            cov = float(data.get("variance", 1.0)) * np.eye(kappa)
        return cls(
            kappa,
            cov,
            data.get("placement", "first_m_coordinates"),
            data.get("support"),
            int(data.get("seed", 0)),
            None if data.get("basis") is None else np.asarray(data["basis"], dtype=float),
        )


# -- entropy gains ----------------------------------------------------------


def _combined(tf: TransferFunction, inp: InputSpec) -> TransferFunction:
    return tf if inp.shaping is None else tf * inp.shaping


def _precision_for(tf: TransferFunction, n: int, columns: int) -> int | None:
    """mp working precision when several growing columns share the Gram, else None."""
    rho = max((abs(z) for z in tf.zeros), default=0.0)
    if columns < 2 or rho <= 1:
        return None
    growth = n * math.log10(rho)
    return _working_dps(growth) if growth > 4 else None


def _check_budget(tf: TransferFunction, n: int) -> None:
    safe = overflow_safe_n(tf)
    if n > safe:
        raise OverflowBudgetError(n, safe)


def disturbance_gain(
    tf: TransferFunction,
    input_spec: InputSpec | None,
    disturbance: DisturbanceSpec,
    n: int,
) -> float:
    """``(h(y) - h(u)) / n`` for ``y = G u + Phi s`` (nats per sample)."""
    inp = input_spec or InputSpec()
    if not tf.is_biproper:
        raise ValueError("filter must be biproper")
    _check_budget(tf, n)
    base = math.log(abs(tf.g0))
    if disturbance.kappa == 0:
        return base
    Phi = disturbance.matrix(n)
    dps = _precision_for(tf, n, disturbance.kappa)
    W = inverse_filter_columns(tf, Phi, dps)
    W = inp.whiten(W, dps)
    F = np.linalg.cholesky(disturbance.covariance)
    return base + logdet_update(W, F, dps) / (2 * n)


def disturbance_gain_dense(
    tf: TransferFunction,
    input_spec: InputSpec | None,
    disturbance: DisturbanceSpec,
    n: int,
) -> float:
    """Reference value from dense log-determinants; only sensible for small n."""
    inp = input_spec or InputSpec()
    G = conv_matrix(tf, n).matrix
    S = conv_matrix(inp.shaping, n).matrix if inp.shaping is not None else np.eye(n)
    K_u = inp.variance * S @ S.T
    Phi = disturbance.matrix(n)
    K_y = G @ K_u @ G.T + Phi @ disturbance.covariance @ Phi.T
    return 0.5 * (np.linalg.slogdet(K_y)[1] - np.linalg.slogdet(K_u)[1]) / n


def input_disturbance_gain(
    tf: TransferFunction,
    nu: int,
    seed_covariance,
    n: int,
    input_spec: InputSpec | None = None,
) -> float:
    """``(h(G(u + Psi a)) - h(u)) / n`` with ``Psi`` the first ``nu`` coordinates.

    ``G_n^{-1}`` cancels exactly against the forced response, so the whitened
    disturbance is ``S^{-1} Psi`` and no growing inverse is ever formed.
    """
    inp = input_spec or InputSpec()
    if not tf.is_biproper:
        raise ValueError("filter must be biproper")
    base = math.log(abs(tf.g0))
    if nu == 0:
        return base
    K = np.atleast_2d(np.asarray(seed_covariance, dtype=float))
    if K.shape == (1, 1) and nu > 1:
        K = K[0, 0] * np.eye(nu)
    Psi = np.zeros((n, nu))
    Psi[:nu] = np.eye(nu)
    W = inp.whiten(Psi)
    return base + logdet_update(W, np.linalg.cholesky(K)) / (2 * n)


def _x0_factor(tf: TransferFunction, x0_covariance=None, x0_factor=None) -> np.ndarray:
    p = tf.order
    if x0_factor is not None:
        F = np.atleast_2d(np.asarray(x0_factor, dtype=float))
    elif x0_covariance is not None:
        K = np.atleast_2d(np.asarray(x0_covariance, dtype=float))
        if K.shape != (p, p):
            raise ValueError(f"x0 covariance is {K.shape}, filter order is {p}")
        F = psd_factor(K)
    else:
        F = np.eye(p)
    if F.shape[0] != p:
        raise ValueError(f"x0 factor has {F.shape[0]} rows, filter order is {p}")
    return F


def initial_state_gain(
    tf: TransferFunction,
    x0_covariance=None,
    n: int = 100,
    *,
    x0_factor=None,
    input_spec: InputSpec | None = None,
) -> float:
    """``(h(G_n u + ybar) - h(u)) / n`` with ``ybar`` the natural response to ``x0``.

    ``x0`` has covariance ``x0_covariance`` or ``x0 = x0_factor @ s`` with
    ``s`` standard normal (rank-deficient states).
    """
    inp = input_spec or InputSpec()
    if not (tf.is_biproper and tf.is_stable):
        raise ValueError("filter must be stable and biproper")
    _check_budget(tf, n)
    F = _x0_factor(tf, x0_covariance, x0_factor)
    base = math.log(abs(tf.g0))
    if F.shape[1] == 0 or not np.any(F):
        return base
    C_tilde, C = natural_response_maps(tf, n)
    a = tf.a / tf.a[0]
    # G^{-1}(N C~ + C) = a * C~ + G^{-1} C; the first term is FIR, so no growth.
    bounded = lfilter(a, [1.0], C_tilde, axis=0)
    dps = _precision_for(tf, n, F.shape[1])
    grown = inverse_filter_columns(tf, C, dps)
    if dps is None:
        W = inp.whiten(bounded + grown)
    else:
        ctx = mp_context(dps)
        cols = [[g + ctx.mpf(float(b)) for g, b in zip(gcol, bounded[:, j])] for j, gcol in enumerate(grown)]
        W = inp.whiten(cols, dps)
    return base + logdet_update(W, F, dps) / (2 * n)


def initial_state_gain_dense(tf, x0_covariance=None, n=10, *, x0_factor=None, input_spec=None) -> float:
    inp = input_spec or InputSpec()
    F = _x0_factor(tf, x0_covariance, x0_factor)
    G = conv_matrix(tf, n).matrix
    S = conv_matrix(inp.shaping, n).matrix if inp.shaping is not None else np.eye(n)
    K_u = inp.variance * S @ S.T
    C_tilde, C = natural_response_maps(tf, n)
    N = conv_matrix(np.pad(tf.b / tf.a[0], (0, 0)), n).matrix
    Z = (N @ C_tilde + C) @ F
    K_y = G @ K_u @ G.T + Z @ Z.T
    return 0.5 * (np.linalg.slogdet(K_y)[1] - np.linalg.slogdet(K_u)[1]) / n


def nmp_target(tf: TransferFunction, k: int | None = None) -> float:
    s = nmp_summary(tf)
    return s.log_sum if k is None else s.partial_log_sum(k)
