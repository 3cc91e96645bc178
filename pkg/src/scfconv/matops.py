"""Half-vectorization algebra, symmetrization and spectral filter kernels.

All operations here are pure functions of their inputs and safe to call
concurrently.  Eigenvalues are always returned in ascending order; the
completion used by ``vech_inv`` is the plain transpose (not the conjugate
transpose), so ``vech_inv(vech(W)) == W`` holds for complex-symmetric W but
not for general complex Hermitian W.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

HERMITIAN_TOL = 1e-12
GAP_TOL = 1e-12


class ZeroGapError(ValueError):
    """The occupied/virtual spectrum is degenerate (lambda_p == lambda_{p+1}).

    The analysis assumes a nonzero gap; a degenerate cross gap makes the
    density matrix ill-defined.
    """


class ChemicalPotentialError(RuntimeError):
    """Bisection for the chemical potential could not meet the trace target."""


def require_hermitian(a, tol: float = HERMITIAN_TOL, name: str = "matrix") -> np.ndarray:
    """Validate that ``a`` is square and Hermitian within ``tol`` (relative)."""
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")
    scale = max(1.0, float(np.abs(a).max()) if a.size else 0.0)
    if float(np.abs(a - a.conj().T).max()) > tol * scale:
        raise ValueError(f"{name} is not Hermitian within tolerance {tol}")
    return a


def triangular_dim(m: int) -> int:
    """Dimension n with n(n+1)/2 == m, or raise if m is not triangular."""
    n = int(round((np.sqrt(8 * m + 1) - 1) / 2))
    if n * (n + 1) // 2 != m:
        raise ValueError(f"length {m} is not a triangular number")
    return n


@lru_cache(maxsize=None)
def _vech_index_cached(n: int) -> np.ndarray:
    idx = [j * n + i for j in range(n) for i in range(j, n)]
    return np.asarray(idx, dtype=np.intp)


def vech_index(n: int) -> np.ndarray:
    """Column-major (Fortran) vec indices of the lower triangle, incl. diagonal."""
    return _vech_index_cached(n).copy()


def vech(w) -> np.ndarray:
    """Column-stacked lower-triangle vectorization (w11..wn1, w22..wn2, ..., wnn)."""
    w = np.asarray(w)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {w.shape}")
    return w.ravel(order="F")[_vech_index_cached(w.shape[0])]


def vech_inv(v) -> np.ndarray:
    """Inverse of ``vech`` with transpose (symmetric) completion.

    The strict upper triangle is the transpose of the strict lower triangle,
    so the result is complex-symmetric, not Hermitian, for complex input.
    """
    v = np.asarray(v)
    if v.ndim != 1:
        raise ValueError("expected a vector")
    n = triangular_dim(v.shape[0])
    flat = np.zeros(n * n, dtype=np.result_type(v.dtype, float))
    flat[_vech_index_cached(n)] = v
    w = flat.reshape(n, n, order="F")
    return w + np.tril(w, -1).T


def selector_T(n: int) -> np.ndarray:
    """The m-by-n^2 0/1 selector with T @ vec(W) = vech(W) (block-diagonal choice)."""
    m = n * (n + 1) // 2
    t = np.zeros((m, n * n))
    t[np.arange(m), _vech_index_cached(n)] = 1.0
    return t


def symmetrize_S(x) -> np.ndarray:
    """Map X = L + D + R (triangular split) to L + D + L^T."""
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {x.shape}")
    lower = np.tril(x)
    return lower + np.tril(x, -1).T


def _check_cross_gap(lam: np.ndarray, p: int, tol: float = GAP_TOL) -> float:
    gap = lam[p] - lam[p - 1]
    scale = max(1.0, float(np.abs(lam).max()))
    if gap <= tol * scale:
        raise ZeroGapError(
            f"zero gap: lambda_p = {lam[p - 1]!r} and lambda_p+1 = {lam[p]!r} "
            "are degenerate; the analysis assumes a nonzero gap"
        )
    return gap


def spectral_filter_density(b, p: int, return_eig: bool = False):
    """Orthogonal projector onto the invariant subspace of the p smallest eigenvalues.

    Returns ``P = X1 @ X1^H`` with P Hermitian, P^2 = P, trace(P) = p.  With
    ``return_eig`` the full ascending eigendecomposition is returned as well.
    """
    b = require_hermitian(b)
    n = b.shape[0]
    if not 1 <= p < n:
        raise ValueError(f"occupation p={p} must satisfy 1 <= p < n={n}")
    lam, x = np.linalg.eigh(b)
    _check_cross_gap(lam, p)
    x1 = x[:, :p]
    density = x1 @ x1.conj().T
    if return_eig:
        return density, lam, x
    return density


def fermi_occupations(lam, beta: float, mu: float) -> np.ndarray:
    """Fermi-Dirac occupations f(t) = 1 / (1 + exp(beta (t - mu))), overflow-safe."""
    lam = np.asarray(lam, dtype=float)
    return 0.5 * (1.0 - np.tanh(0.5 * beta * (lam - mu)))


def fermi_chemical_potential(
    lam, beta: float, p: int, tol: float = 1e-12, max_iter: int = 200
) -> float:
    """Chemical potential mu with sum of occupations equal to p, by bisection.

    Brackets on [lambda_1 - 1, lambda_n + 1]; the total occupation is strictly
    increasing in mu for finite beta.
    """
    lam = np.sort(np.asarray(lam, dtype=float))
    if beta <= 0:
        raise ValueError("beta must be positive")
    lo, hi = lam[0] - 1.0, lam[-1] + 1.0
    if fermi_occupations(lam, beta, lo).sum() > p or fermi_occupations(lam, beta, hi).sum() < p:
        raise ChemicalPotentialError(
            f"trace target p={p} not bracketed on [{lo}, {hi}] for beta={beta}"
        )
    mu = 0.5 * (lo + hi)
    for _ in range(max_iter):
        mu = 0.5 * (lo + hi)
        trace = fermi_occupations(lam, beta, mu).sum()
        if abs(trace - p) <= tol:
            return mu
        if trace < p:
            lo = mu
        else:
            hi = mu
    trace = fermi_occupations(lam, beta, mu).sum()
    if abs(trace - p) <= tol:
        return mu
    raise ChemicalPotentialError(
        f"mu bisection did not reach |trace - p| <= {tol} in {max_iter} iterations "
        f"(residual {trace - p:.3e})"
    )


def fermi_density(b, beta: float, p: int, return_eig: bool = False):
    """Smoothed density P_f = X f(Lambda) X^H with mu solved so trace(P_f) = p."""
    b = require_hermitian(b)
    n = b.shape[0]
    if not 1 <= p < n:
        raise ValueError(f"occupation p={p} must satisfy 1 <= p < n={n}")
    lam, x = np.linalg.eigh(b)
    mu = fermi_chemical_potential(lam, beta, p)
    f = fermi_occupations(lam, beta, mu)
    density = (x * f) @ x.conj().T
    if return_eig:
        return density, lam, x, mu
    return density


def divided_difference_matrix(
    lambdas, p: int, kind: str = "step", beta: float | None = None, mu: float | None = None
) -> np.ndarray:
    """Divided-difference matrix of the occupation filter on the given spectrum.

    For the step filter this is the reciprocal-gap matrix: 1/(lambda_j -
    lambda_i) on occupied/virtual cross pairs, zero elsewhere.  For the Fermi
    filter all off-diagonal entries are divided differences of f and the
    diagonal is f'(lambda_i).
    """
    lam = np.asarray(lambdas, dtype=float)
    n = lam.shape[0]
    if not 1 <= p < n:
        raise ValueError(f"occupation p={p} must satisfy 1 <= p < n={n}")
    if np.any(np.diff(lam) < 0):
        raise ValueError("eigenvalues must be in ascending order")
    if kind == "step":
        _check_cross_gap(lam, p)
        r = np.zeros((n, n))
        diff = lam[p:][None, :] - lam[:p][:, None]
        r[:p, p:] = 1.0 / diff
        r[p:, :p] = r[:p, p:].T
        return r
    if kind == "fermi":
        if beta is None:
            raise ValueError("fermi filter requires beta")
        if mu is None:
            mu = fermi_chemical_potential(lam, beta, p)
        f = fermi_occupations(lam, beta, mu)
        fprime = -beta * f * (1.0 - f)
        diff = lam[:, None] - lam[None, :]
        scale = max(1.0, float(np.abs(lam).max()))
        near = np.abs(diff) <= 1e-10 * scale
        safe = np.where(near, 1.0, diff)
        r = (f[:, None] - f[None, :]) / safe
        mid = 0.5 * (lam[:, None] + lam[None, :])
        fm = fermi_occupations(mid, beta, mu)
        r = np.where(near, -beta * fm * (1.0 - fm), r)
        np.fill_diagonal(r, fprime)
        return r
    raise ValueError(f"unknown filter kind {kind!r}")
