"""Exact Jacobian of the fixed-point map, convergence factor, and the bound ladder.

The Jacobian acts on half-vectorized density-matrix coordinates (dimension
m = n(n+1)/2) and is assembled either from dense Kronecker products (small n)
or column-by-column through the structured formula: apply L to a basis
perturbation, rotate into the eigenbasis, scale entrywise by the
reciprocal-gap matrix, rotate back, and half-vectorize.  Both routes are
mathematically identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .matops import (
    ZeroGapError,
    divided_difference_matrix,
    fermi_chemical_potential,
    vech,
    vech_index,
    vech_inv,
)
from .problems import Problem, assemble_Lprime
from .scf import FixedPointBundle, ScfOptions, estimate_rate, locate_fixed_point, scf_step

# Above this dimension the n^2 x n^2 Kronecker factors are not materialized
# and the column-structured assembly is used instead.
KRON_CAP = 32


@dataclass
class GapStructure:
    """Sorted occupied/virtual cross gaps and the index sets of the smallest ones.

    ``pairs[k]`` is the (occupied, virtual) eigenvalue index pair (1-based) of
    the k-th smallest cross gap ``cross_gaps[k]``.  Ties are broken by gap
    value, then lexicographically, so the sets are reproducible.
    """

    cross_gaps: np.ndarray
    pairs: list
    n: int
    p: int

    @property
    def count(self) -> int:
        return self.p * (self.n - self.p)

    def delta(self, j: int) -> float:
        """j-th smallest cross gap (1-based), with sentinel +inf past the last."""
        if j < 1:
            raise ValueError("gap index is 1-based")
        if j > self.count:
            return np.inf
        return float(self.cross_gaps[j - 1])

    def omega(self, q: int) -> list:
        """Both orientations of the q smallest-gap index pairs, |omega(q)| = 2q."""
        if not 0 <= q <= self.count:
            raise ValueError(f"q={q} out of range [0, {self.count}]")
        out = []
        for i, j in self.pairs[:q]:
            out.append((j, i))
            out.append((i, j))
        return out


def gap_structure(lambdas, p: int) -> GapStructure:
    """All p(n-p) occupied/virtual gaps sorted ascending with their index pairs."""
    lam = np.asarray(lambdas, dtype=float)
    n = lam.shape[0]
    if not 1 <= p < n:
        raise ValueError(f"occupation p={p} must satisfy 1 <= p < n={n}")
    scale = max(1.0, float(np.abs(lam).max()))
    if lam[p] - lam[p - 1] <= 1e-12 * scale:
        raise ZeroGapError(
            f"zero gap: lambda_p = {lam[p - 1]!r}, lambda_p+1 = {lam[p]!r}"
        )
    entries = []
    for i in range(1, p + 1):
        for j in range(p + 1, n + 1):
            entries.append((abs(lam[j - 1] - lam[i - 1]), i, j))
    entries.sort()
    return GapStructure(
        cross_gaps=np.array([e[0] for e in entries]),
        pairs=[(e[1], e[2]) for e in entries],
        n=n,
        p=p,
    )


@dataclass
class JacobianBundle:
    """The assembled Jacobian with the pieces needed for every bound.

    ``vec_r`` is the diagonal of D stored as vec of the divided-difference
    matrix; ``sign`` is the scalar in front of the assembled product.
    """

    j_p: np.ndarray
    vec_r: np.ndarray
    l_prime: np.ndarray
    x: np.ndarray
    lambdas: np.ndarray
    p: int
    sign: float = -1.0
    filter: str = "step"

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def m(self) -> int:
        return self.j_p.shape[0]


def _assemble(x, vec_r, l_prime, sign: float, kron_cap: int) -> np.ndarray:
    n = x.shape[0]
    m = l_prime.shape[1]
    vidx = vech_index(n)
    if n <= kron_cap:
        k1 = np.kron(x.conj(), x)
        k2 = np.kron(x.T, x.conj().T)
        full = sign * (k1 * vec_r[None, :]) @ (k2 @ l_prime)
        return full[vidx, :]
    # column-structured route: rotate, scale by R entrywise, rotate back
    r = vec_r.reshape(n, n, order="F")
    l3 = np.ascontiguousarray(l_prime.reshape(n, n, m, order="F"))
    tmp = np.tensordot(x.conj().T, l3, axes=([1], [0]))
    mid = np.tensordot(tmp, x, axes=([1], [0])).transpose(0, 2, 1)
    mid = mid * (sign * r)[:, :, None]
    tmp = np.tensordot(x, mid, axes=([1], [0]))
    out = np.tensordot(tmp, x.conj(), axes=([1], [1])).transpose(0, 2, 1)
    flat = out.reshape(n * n, m, order="F")
    return flat[vidx, :]


def assemble_jacobian(
    bundle: FixedPointBundle, l_prime: np.ndarray, kron_cap: int = KRON_CAP
) -> JacobianBundle:
    """Exact Jacobian of the step-filter fixed-point map at the fixed point."""
    r = divided_difference_matrix(bundle.lambdas, bundle.p, kind="step")
    vec_r = r.ravel(order="F")
    j_p = _assemble(bundle.x, vec_r, l_prime, sign=-1.0, kron_cap=kron_cap)
    return JacobianBundle(
        j_p=j_p,
        vec_r=vec_r,
        l_prime=l_prime,
        x=bundle.x,
        lambdas=np.asarray(bundle.lambdas, dtype=float),
        p=bundle.p,
        sign=-1.0,
        filter="step",
    )


def fermi_jacobian(
    bundle: FixedPointBundle,
    l_prime: np.ndarray,
    beta: float,
    mu: float | None = None,
    kron_cap: int = KRON_CAP,
) -> JacobianBundle:
    """Jacobian with the Fermi-Dirac divided-difference matrix in place of R.

    The assembled product carries a positive sign; the divided differences of
    the (decreasing) Fermi function are themselves negative on cross pairs,
    which recovers the step-filter Jacobian in the sharp limit.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    if mu is None:
        mu = fermi_chemical_potential(bundle.lambdas, beta, bundle.p)
    r_f = divided_difference_matrix(bundle.lambdas, bundle.p, kind="fermi", beta=beta, mu=mu)
    vec_r = r_f.ravel(order="F")
    j_p = _assemble(bundle.x, vec_r, l_prime, sign=1.0, kron_cap=kron_cap)
    return JacobianBundle(
        j_p=j_p,
        vec_r=vec_r,
        l_prime=l_prime,
        x=bundle.x,
        lambdas=np.asarray(bundle.lambdas, dtype=float),
        p=bundle.p,
        sign=1.0,
        filter="fermi",
    )


def jacobian_fd(
    problem: Problem,
    p_star: np.ndarray,
    step: float | None = None,
    filter: str = "step",
    beta: float | None = None,
    order: int = 4,
) -> np.ndarray:
    """Finite-difference Jacobian: the independent oracle for ``assemble_jacobian``.

    Column j is a central difference of vech(Psi(.)) along the real
    perturbation direction vech_inv(e_j).  The default is the fourth-order
    five-point stencil with a step of 5e-4 times (1 + ||P*||_F): the
    second-order stencil at its optimal step leaves an absolute noise floor
    near 1e-11 from cancellation, which is not small enough to certify
    Jacobian columns that are several orders below the matrix scale.
    """
    n = p_star.shape[0]
    m = n * (n + 1) // 2
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    if step is None:
        base = 5e-4 if order == 4 else 1e-5
        step = base * (1.0 + float(np.linalg.norm(p_star)))
    out = np.zeros((m, m), dtype=complex)
    ej = np.zeros(m)
    for j in range(m):
        ej.flat = 0.0
        ej[j] = 1.0
        direction = vech_inv(ej).real

        def psi(t):
            shifted, _, _ = scf_step(
                problem, p_star + t * direction, filter=filter, beta=beta
            )
            return vech(shifted)

        try:
            if order == 2:
                col = (psi(step) - psi(-step)) / (2.0 * step)
            else:
                col = (
                    -psi(2.0 * step)
                    + 8.0 * psi(step)
                    - 8.0 * psi(-step)
                    + psi(-2.0 * step)
                ) / (12.0 * step)
        except ZeroGapError as exc:
            raise ZeroGapError(f"zero gap while perturbing column j={j + 1}: {exc}") from exc
        out[:, j] = col
    return out


def realified_jacobian_fd(
    problem: Problem, p_star: np.ndarray, step: float | None = None
) -> np.ndarray:
    """Real Jacobian over the n^2 real coordinates of the Hermitian manifold.

    Coordinates: Re of every vech entry (m of them) followed by Im of the
    strict-lower vech entries (m - n of them).  The imaginary parts of the
    diagonal are identically zero for Hermitian matrices, so the real
    dimension is n^2, not 2m.  Complements the complex m x m Jacobian, whose
    coordinate map is complex-linear only on symmetric completions.
    """
    n = p_star.shape[0]
    m = n * (n + 1) // 2
    if step is None:
        step = 1e-5 * (1.0 + float(np.linalg.norm(p_star)))
    vidx = vech_index(n)
    rows = vidx % n
    cols = vidx // n
    offdiag = np.flatnonzero(rows != cols)

    directions = []
    for j in range(m):
        ej = np.zeros(m)
        ej[j] = 1.0
        directions.append(vech_inv(ej).real)
    for j in offdiag:
        d = np.zeros((n, n), dtype=complex)
        d[rows[j], cols[j]] = 1j
        d[cols[j], rows[j]] = -1j
        directions.append(d)

    def coords(delta):
        v = vech(delta)
        return np.concatenate([v.real, v[offdiag].imag])

    dim = m + offdiag.size
    out = np.zeros((dim, dim))
    for k, direction in enumerate(directions):
        plus, _, _ = scf_step(problem, p_star + step * direction)
        minus, _, _ = scf_step(problem, p_star - step * direction)
        out[:, k] = coords((plus - minus) / (2.0 * step))
    return out


def convergence_factor(j_p: np.ndarray) -> float:
    """Spectral radius of the Jacobian: the exact local convergence factor."""
    if j_p.shape[0] == 0:
        return 0.0
    return float(np.abs(np.linalg.eigvals(j_p)).max())


def bound_c2(j_p: np.ndarray) -> float:
    """Spectral-norm bound: largest singular value of the Jacobian."""
    return float(np.linalg.norm(j_p, 2))


def bound_naive(l_prime: np.ndarray, delta1: float) -> float:
    """||L'||_2 / delta_1."""
    if delta1 <= 0:
        raise ValueError("delta1 must be positive")
    return float(np.linalg.norm(l_prime, 2)) / delta1


def _cross_pairs(vec_r: np.ndarray, n: int):
    """Ordered index pairs (a, b), 0-based, where the divided-difference matrix
    has cross-gap entries, together with |r_ab|."""
    r = vec_r.reshape(n, n, order="F")
    out = []
    for a in range(n):
        for b in range(n):
            if a != b and r[a, b] != 0.0:
                out.append((a, b, abs(r[a, b])))
    return out


def bound_cyclic(jb: JacobianBundle) -> tuple[float, float]:
    """The two cyclic-permutation spectral-norm bounds (c_2a, c_2b).

    Both matrices have nonzero columns only where the diagonal of D is
    nonzero; the norms are evaluated on those columns directly, which stays
    exact and avoids materializing n^2 x n^2 products.
    """
    n = jb.n
    m = jb.l_prime.shape[1]
    vidx = vech_index(n)
    pairs = _cross_pairs(jb.vec_r, n)
    if not pairs:
        return 0.0, 0.0
    cols_a = np.zeros((n * n, len(pairs)), dtype=complex)
    cols_b = np.zeros((n * n, len(pairs)), dtype=complex)
    lh = jb.l_prime.conj().T
    for k, (a, b, rab) in enumerate(pairs):
        outer = np.outer(jb.x[:, a], jb.x[:, b].conj())
        # adjoint column of the c_2a matrix
        v = lh @ outer.ravel(order="F")
        col = np.zeros(n * n, dtype=complex)
        col[vidx] = v
        cols_a[:, k] = rab * col
        # column of the c_2b matrix (one-nonzero-column identity)
        cols_b[:, k] = rab * (jb.l_prime @ vech(outer))
    c2a = float(np.linalg.svd(cols_a, compute_uv=False)[0])
    c2b = float(np.linalg.svd(cols_b, compute_uv=False)[0])
    return c2a, c2b


def _pair_terms(jb: JacobianBundle, gaps: GapStructure) -> np.ndarray:
    """Per-gap terms (||L(S(x_l x_m^H))||_F + ||L(S(x_m x_l^H))||_F) / gap."""
    terms = np.zeros(gaps.count)
    for k, ((i, j), gap) in enumerate(zip(gaps.pairs, gaps.cross_gaps)):
        xo = jb.x[:, i - 1]
        xv = jb.x[:, j - 1]
        t = np.linalg.norm(jb.l_prime @ vech(np.outer(xv, xo.conj())))
        t += np.linalg.norm(jb.l_prime @ vech(np.outer(xo, xv.conj())))
        terms[k] = t / gap
    return terms


def bound_gap(jb: JacobianBundle, gaps: GapStructure, q: int) -> float:
    """Higher-gap bound: ||L'||_2 / delta_{q+1} plus the q smallest-gap pair terms."""
    if not 0 <= q <= gaps.count:
        raise ValueError(f"q={q} out of range [0, {gaps.count}]")
    return bound_gap_all(jb, gaps, q_max=q)[q]


def bound_gap_all(jb: JacobianBundle, gaps: GapStructure, q_max: int | None = None) -> np.ndarray:
    """The whole family c_gap[q] for q = 0 .. q_max (default p(n-p))."""
    full = gaps.count
    if q_max is None:
        q_max = full
    if not 0 <= q_max <= full:
        raise ValueError(f"q_max={q_max} out of range [0, {full}]")
    norm_lp = float(np.linalg.norm(jb.l_prime, 2))
    terms = _pair_terms(jb, gaps)
    cum = np.concatenate([[0.0], np.cumsum(terms)])
    out = np.empty(q_max + 1)
    for q in range(q_max + 1):
        lead = 0.0 if q >= full else norm_lp / gaps.delta(q + 1)
        out[q] = lead + cum[q]
    return out


def bound_rank_truncated(
    jb: JacobianBundle, k: int, gaps: GapStructure | None = None
) -> float:
    """Spectral norm of the Jacobian truncated to the k smallest-gap entries of D.

    Keeps only the diagonal entries of D indexed by omega(k) (rank <= 2k);
    k = p(n-p) leaves D untouched and recovers c_2 exactly.
    """
    if gaps is None:
        gaps = gap_structure(jb.lambdas, jb.p)
    if not 1 <= k <= gaps.count:
        raise ValueError(f"k={k} out of range [1, {gaps.count}]")
    n = jb.n
    m = jb.l_prime.shape[1]
    r = jb.vec_r.reshape(n, n, order="F")
    l3 = np.ascontiguousarray(jb.l_prime.reshape(n, n, m, order="F"))
    selected = gaps.omega(k)
    left = np.zeros((m, len(selected)), dtype=complex)
    right = np.zeros((len(selected), m), dtype=complex)
    for t, (a, b) in enumerate(selected):
        xa = jb.x[:, a - 1]
        xb = jb.x[:, b - 1]
        left[:, t] = r[a - 1, b - 1] * vech(np.outer(xa, xb.conj()))
        right[t, :] = np.einsum("i,ijt,j->t", xa.conj(), l3, xb)
    q_factor, r_factor = np.linalg.qr(left)
    return float(np.linalg.svd(r_factor @ right, compute_uv=False)[0])


def bound_liu(problem: Problem, delta1: float) -> float:
    """Reference diagonal-nonlinearity bound 2 alpha sqrt(n) ||A0^-1||_2 / delta_1."""
    alpha = problem.meta.get("alpha")
    if alpha is None:
        raise ValueError("problem metadata does not carry the coupling alpha")
    norm_inv = float(np.linalg.norm(np.linalg.inv(problem.a0), 2))
    return 2.0 * float(alpha) * np.sqrt(problem.n) * norm_inv / delta1


def cyclic_spectral_radii(jb: JacobianBundle) -> list:
    """Spectral radii of the four cyclic reorderings of the Jacobian product.

    Materializes dense Kronecker factors; intended for moderate n (checks and
    tests), where agreement to round-off is an invariant of the theory.
    """
    n = jb.n
    x = jb.x
    d = jb.vec_r
    vidx = vech_index(n)
    m = jb.l_prime.shape[1]
    k1 = np.kron(x.conj(), x)
    k2 = np.kron(x.T, x.conj().T)
    t_dense = np.zeros((m, n * n))
    t_dense[np.arange(m), vidx] = 1.0
    lpt = jb.l_prime @ t_dense
    radii = [convergence_factor(jb.j_p)]
    a2 = jb.sign * (k1 * d[None, :]) @ (k2 @ lpt)
    radii.append(convergence_factor(a2))
    a3 = jb.sign * (d[:, None] * (k2 @ lpt)) @ k1
    radii.append(convergence_factor(a3))
    a4 = jb.sign * lpt @ (k1 * d[None, :]) @ k2
    radii.append(convergence_factor(a4))
    return radii


@dataclass
class ConvergenceReport:
    """Exact convergence factor, the full bound ladder, and the gap structure."""

    n: int
    p: int
    converged: bool
    c: float | None = None
    c2: float | None = None
    c2a: float | None = None
    c2b: float | None = None
    c_naive: float | None = None
    c_gap: np.ndarray | None = None
    c_liu: float | None = None
    c_tilde: list | None = None
    gaps: GapStructure | None = None
    measured_rate: float | None = None
    fd_check: float | None = None

    def to_dict(self) -> dict:
        deltas = None
        omega = None
        if self.gaps is not None:
            deltas = [float(v) for v in self.gaps.cross_gaps]
            q_top = len(self.c_gap) - 1 if self.c_gap is not None else self.gaps.count
            omega = [
                [[int(a), int(b)] for a, b in self.gaps.omega(q)]
                for q in range(q_top + 1)
            ]
        return {
            "n": self.n,
            "p": self.p,
            "converged": self.converged,
            "c": self.c,
            "c2": self.c2,
            "c2a": self.c2a,
            "c2b": self.c2b,
            "c_naive": self.c_naive,
            "c_gap": None if self.c_gap is None else [float(v) for v in self.c_gap],
            "c_liu": self.c_liu,
            "c_tilde": self.c_tilde,
            "deltas": deltas,
            "omega": omega,
            "measured_rate": self.measured_rate,
            "fd_check": self.fd_check,
        }


def analyze_problem(
    problem: Problem,
    opts: ScfOptions | None = None,
    q_max: int | None = None,
    fd_check: bool = False,
    kron_cap: int = KRON_CAP,
) -> tuple[ConvergenceReport, FixedPointBundle | None, JacobianBundle | None]:
    """Full analysis pipeline: locate the fixed point, assemble J, evaluate bounds.

    Divergent plain SCF is handled by damped fixed-point location; the
    Jacobian and every bound still apply at the located fixed point.
    ``q_max`` caps both the c_gap family and the rank-truncation list (the
    full-rank value, which must equal c_2, is always included).
    """
    bundle, plain = locate_fixed_point(problem, opts)
    if not bundle.converged:
        return ConvergenceReport(n=problem.n, p=problem.p, converged=False), bundle, None
    l_prime = assemble_Lprime(problem.op, problem.n)
    jb = assemble_jacobian(bundle, l_prime, kron_cap=kron_cap)
    gaps = gap_structure(bundle.lambdas, problem.p)
    full = gaps.count
    q_top = full if q_max is None else min(q_max, full)

    c = convergence_factor(jb.j_p)
    c2 = bound_c2(jb.j_p)
    c2a, c2b = bound_cyclic(jb)
    c_naive = bound_naive(l_prime, gaps.delta(1))
    c_gap = bound_gap_all(jb, gaps, q_max=q_top)
    c_liu = None
    if problem.meta.get("alpha") is not None:
        c_liu = bound_liu(problem, gaps.delta(1))
    tilde_ks = sorted(set(range(1, q_top + 1)) | {full})
    c_tilde = [[k, bound_rank_truncated(jb, k, gaps)] for k in tilde_ks]

    measured = None
    if plain is not None and plain.converged and plain.damping == 1.0:
        try:
            measured = estimate_rate(plain.errors_to_fixed).rate
        except Exception:
            measured = None

    fd_err = None
    if fd_check:
        fd = jacobian_fd(problem, bundle.p_star)
        fd_err = max_column_relative_error(jb.j_p, fd)

    report = ConvergenceReport(
        n=problem.n,
        p=problem.p,
        converged=True,
        c=c,
        c2=c2,
        c2a=c2a,
        c2b=c2b,
        c_naive=c_naive,
        c_gap=c_gap,
        c_liu=c_liu,
        c_tilde=c_tilde,
        gaps=gaps,
        measured_rate=measured,
        fd_check=fd_err,
    )
    return report, bundle, jb


def max_column_relative_error(
    j_assembled: np.ndarray, j_reference: np.ndarray, floor_frac: float = 1e-6
) -> float:
    """Largest column-wise relative deviation between two Jacobians.

    Columns whose reference norm is below ``floor_frac`` times the largest
    column norm are compared against that floor instead: a purely relative
    comparison of a numerically zero column is ill-posed (any rounding noise
    would dominate), so such columns only need to be negligible at the floor
    scale.
    """
    ref_norms = np.linalg.norm(j_reference, axis=0)
    floor = max(floor_frac * float(ref_norms.max(initial=0.0)), 1e-300)
    diff = np.linalg.norm(j_assembled - j_reference, axis=0)
    return float((diff / np.maximum(ref_norms, floor)).max())
