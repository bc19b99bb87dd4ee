"""PCA whitening and the symmetric fixed-point (negentropy) ICA solver."""

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from resources.utils.errors import (
    DegenerateInput,
    DimensionMismatch,
    InvalidParameter,
    NonConvergenceWarning,
    RankDeficient,
)

logger = logging.getLogger(__name__)

LN2 = math.log(2.0)
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 4000


@dataclass(frozen=True, eq=False)
class WhiteningResult:
    whitened: np.ndarray  # R x T, identity sample covariance
    forward: np.ndarray  # R x F
    inverse: np.ndarray  # F x R
    mean: np.ndarray  # F
    explained_variance: np.ndarray  # R, fractions, descending

    @property
    def rank(self) -> int:
        return self.whitened.shape[0]

    def transform(self, X: np.ndarray) -> np.ndarray:
        """Whiten new data with the fitted mean and transform."""
        return self.forward @ (np.asarray(X, dtype=float) - self.mean[:, None])


@dataclass(frozen=True, eq=False)
class UnmixingMatrix:
    rows: np.ndarray  # K x R, orthonormal rows in whitened space
    converged: bool
    iterations: int
    seed: int

    @property
    def n_components(self) -> int:
        return self.rows.shape[0]


@dataclass(frozen=True, eq=False)
class MixingModel:
    mixing: np.ndarray  # F x K
    sources: np.ndarray  # K x T

    def __post_init__(self):
        A = np.asarray(self.mixing, dtype=float)
        S = np.asarray(self.sources, dtype=float)
        if A.ndim != 2 or S.ndim != 2 or A.shape[1] != S.shape[0]:
            raise DimensionMismatch(f"mixing {A.shape} incompatible with sources {S.shape}")
        object.__setattr__(self, "mixing", A)
        object.__setattr__(self, "sources", S)


# ---------- PCA ----------


def _svd_flip(U: np.ndarray, Vt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic SVD signs: largest-|.| entry of every left singular vector is positive."""
    pivots = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[pivots, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs, Vt * signs[:, None]


def centered_svd(X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Row-mean-centred thin SVD with sign convention: returns (mean, U, s, Vt)."""
    X = np.asarray(X, dtype=float)
    mean = X.mean(axis=1)
    U, s, Vt = linalg.svd(X - mean[:, None], full_matrices=False, lapack_driver="gesdd")
    U, Vt = _svd_flip(U, Vt)
    return mean, U, s, Vt


def numerical_rank(s: np.ndarray, shape: tuple[int, int]) -> int:
    if s.size == 0 or s[0] == 0:
        return 0
    tol = s[0] * max(shape) * np.finfo(float).eps
    return int(np.sum(s > tol))


def pca_whiten(X: np.ndarray, rank: int) -> WhiteningResult:
    """Remove row means and whiten onto the top ``rank`` principal directions.

    X is F x T (features by samples); the whitened output has identity sample
    covariance (ddof=1).
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D matrix, got shape {X.shape}")
    F, T = X.shape
    if T < 2:
        raise InvalidParameter("pca_whiten needs at least 2 samples")
    if rank < 1 or rank > min(F, T - 1):
        raise InvalidParameter(f"rank={rank} must be in [1, min(F, T-1)={min(F, T - 1)}]")

    mean, U, s, Vt = centered_svd(X)
    available = numerical_rank(s, X.shape)
    if available < rank:
        raise RankDeficient(rank, available)

    scale = math.sqrt(T - 1)
    s_r = s[:rank]
    forward = (U[:, :rank] / s_r).T * scale
    inverse = U[:, :rank] * (s_r / scale)
    whitened = Vt[:rank] * scale
    total = float(np.sum(s**2))
    explained = s_r**2 / total
    return WhiteningResult(whitened=whitened, forward=forward, inverse=inverse, mean=mean, explained_variance=explained)


# ---------- contrast ----------


def contrast_logcosh(u):
    """G(u) = ln cosh u with derivatives g = tanh u and g' = 1 - tanh^2 u.

    Uses |u| + ln((1 + e^{-2|u|}) / 2) so large |u| does not overflow. Accepts
    scalars or arrays.
    """
    u = np.asarray(u, dtype=float)
    a = np.abs(u)
    G = a + np.log1p(np.exp(-2.0 * a)) - LN2
    g = np.tanh(u)
    g_prime = 1.0 - g * g
    if G.ndim == 0:
        return float(G), float(g), float(g_prime)
    return G, g, g_prime


# ---------- fixed-point ICA ----------


def symmetric_decorrelation(W: np.ndarray) -> np.ndarray:
    """W <- (W W^T)^{-1/2} W."""
    s, u = linalg.eigh(W @ W.T)
    s = np.clip(s, np.finfo(W.dtype).tiny, None)
    return (u * (1.0 / np.sqrt(s))) @ u.T @ W


def _check_whitened_input(Z: np.ndarray, K: int, max_iter: int) -> np.ndarray:
    Z = np.asarray(Z, dtype=float)
    if Z.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D matrix, got shape {Z.shape}")
    R = Z.shape[0]
    if K < 1 or K > R:
        raise InvalidParameter(f"K={K} must be in [1, R={R}]")
    if max_iter < 1:
        raise InvalidParameter("max_iter must be >= 1")
    flat = np.ptp(Z, axis=1) == 0
    if np.any(flat):
        raise DegenerateInput(f"row {int(np.argmax(flat))} of the whitened input has zero variance")
    return Z


def _initial_rows(K: int, R: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return symmetric_decorrelation(rng.standard_normal((K, R)))


def ica_fixed_point(
    Z: np.ndarray,
    K: int,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    seed: int = 0,
) -> UnmixingMatrix:
    """Symmetric FastICA with the log-cosh contrast on whitened data Z (R x T)."""
    Z = _check_whitened_input(Z, K, max_iter)
    T = Z.shape[1]
    W = _initial_rows(K, Z.shape[0], seed)

    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        _, g, g_prime = contrast_logcosh(W @ Z)
        W_new = symmetric_decorrelation((g @ Z.T) / T - g_prime.mean(axis=1)[:, None] * W)
        lim = float(np.max(np.abs(np.abs(np.einsum("ij,ij->i", W_new, W)) - 1.0)))
        W = W_new
        if lim < tol:
            converged = True
            break

    if not converged:
        msg = f"fixed-point ICA did not converge in {max_iter} iterations (seed={seed})"
        logger.warning("[ICA] %s", msg)
        warnings.warn(msg, NonConvergenceWarning, stacklevel=2)
    logger.debug("[ICA] K=%d T=%d iterations=%d converged=%s", K, T, it, converged)
    return UnmixingMatrix(rows=W, converged=converged, iterations=it, seed=seed)


def ica_picard_orthogonal(
    Z: np.ndarray,
    K: int,
    tol: float = 1e-7,
    max_iter: int = DEFAULT_MAX_ITER,
    seed: int = 0,
    memory: int = 7,
) -> UnmixingMatrix:
    """Alternative solver: orthogonal-constraint likelihood descent with L-BFGS curvature.

    Minimises the negative log-likelihood with a log-cosh score on the orthogonal
    group, using relative-gradient steps and a limited-memory two-loop recursion
    on the skew-symmetric search directions. Only valid for K == R (square).
    """
    Z = _check_whitened_input(Z, K, max_iter)
    R, T = Z.shape
    if K != R:
        raise InvalidParameter("the quasi-Newton solver expects K equal to the whitened rank")
    W = _initial_rows(K, R, seed)

    def loss(Y):
        return float(np.mean(np.sum(contrast_logcosh(Y)[0], axis=0)))

    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    Y = W @ Z
    grad = None
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        psi = np.tanh(Y)
        G = psi @ Y.T / T
        G = (G - G.T) / 2.0
        if float(np.max(np.abs(G))) < tol:
            converged = True
            break
        if grad is not None:
            s_hist.append(last_step)
            y_hist.append(G - grad)
            if len(s_hist) > memory:
                s_hist.pop(0)
                y_hist.pop(0)
        grad = G

        # two-loop recursion
        q = G.copy()
        alphas = []
        for s_k, y_k in reversed(list(zip(s_hist, y_hist))):
            rho = 1.0 / max(np.sum(s_k * y_k), 1e-300)
            alpha = rho * np.sum(s_k * q)
            alphas.append((rho, alpha))
            q = q - alpha * y_k
        if s_hist:
            gamma = np.sum(s_hist[-1] * y_hist[-1]) / max(np.sum(y_hist[-1] ** 2), 1e-300)
            q = q * gamma if gamma > 0 else q
        for (s_k, y_k), (rho, alpha) in zip(zip(s_hist, y_hist), reversed(alphas)):
            beta = rho * np.sum(y_k * q)
            q = q + s_k * (alpha - beta)
        direction = -q
        if np.sum(direction * G) >= 0:
            direction = -G
            s_hist.clear()
            y_hist.clear()

        step = 1.0
        current = loss(Y)
        for _ in range(10):
            rotation = linalg.expm(step * direction)
            Y_new = rotation @ Y
            if loss(Y_new) < current:
                break
            step /= 2.0
        last_step = step * direction
        W = rotation @ W
        Y = Y_new

    if not converged:
        msg = f"quasi-Newton ICA did not converge in {max_iter} iterations (seed={seed})"
        logger.warning("[ICA] %s", msg)
        warnings.warn(msg, NonConvergenceWarning, stacklevel=2)
    return UnmixingMatrix(rows=W, converged=converged, iterations=it, seed=seed)


SOLVERS = {
    "fastica": ica_fixed_point,
    "picard": ica_picard_orthogonal,
}


def get_solver(name: str):
    try:
        return SOLVERS[name.lower()]
    except KeyError:
        raise InvalidParameter(f"unknown ICA solver {name!r}; choose one of {sorted(SOLVERS)}") from None
