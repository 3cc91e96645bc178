"""SCF fixed-point iteration on density matrices and empirical rate estimation."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .matops import (
    ZeroGapError,
    fermi_chemical_potential,
    fermi_occupations,
    require_hermitian,
    spectral_filter_density,
)
from .problems import Problem

RATE_FLOOR = 100.0 * np.finfo(float).eps


class RateEstimationError(RuntimeError):
    """Too few usable tail points; rerun with a smaller tol or more iterations."""


@dataclass
class ScfOptions:
    """Options for the fixed-point solve.

    ``damping`` is the mixing weight theta in P_{k+1} = (1-theta) P_k +
    theta Psi(P_k); theta = 1 is plain SCF.  Damping is a fixed-point-finding
    aid only; rate measurements are meaningful for theta = 1.
    """

    tol: float = 1e-12
    max_iter: int = 500
    damping: float = 1.0
    filter: str = "step"
    beta: float | None = None

    def __post_init__(self):
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.filter not in ("step", "fermi"):
            raise ValueError(f"unknown filter {self.filter!r}")
        if self.filter == "fermi" and (self.beta is None or self.beta <= 0):
            raise ValueError("fermi filter requires beta > 0")


@dataclass
class IterationRecord:
    """Per-iteration diagnostics from the solve."""

    step_err: float
    lambda_p: float
    lambda_p1: float
    gap: float


@dataclass
class FixedPointBundle:
    """Converged density matrix with the full eigendecomposition of A(P*).

    ``errors_to_fixed`` is filled post hoc from the stored iterates once P*
    is known; it aligns with ``history`` (entry k is ||P_{k+1} - P*||_F).
    """

    p_star: np.ndarray
    x: np.ndarray
    lambdas: np.ndarray
    history: list[IterationRecord]
    converged: bool
    p: int
    damping: float = 1.0
    filter: str = "step"
    beta: float | None = None
    mu: float | None = None
    errors_to_fixed: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.p_star.shape[0]

    @property
    def iterations(self) -> int:
        return len(self.history)

    @property
    def step_errors(self) -> np.ndarray:
        return np.array([rec.step_err for rec in self.history])


def scf_step(problem: Problem, density, filter: str = "step", beta: float | None = None):
    """One application of the fixed-point map: P -> filter density of A0 + L(P).

    Returns (P_next, lambdas, X) with the full ascending eigendecomposition
    of A(P) for diagnostics.
    """
    density = require_hermitian(density, name="P")
    a = require_hermitian(problem.apply(density), tol=1e-10, name="A(P)")
    if filter == "step":
        return spectral_filter_density(a, problem.p, return_eig=True)
    if filter == "fermi":
        if beta is None or beta <= 0:
            raise ValueError("fermi filter requires beta > 0")
        lam, x = np.linalg.eigh(a)
        mu = fermi_chemical_potential(lam, beta, problem.p)
        f = fermi_occupations(lam, beta, mu)
        return (x * f) @ x.conj().T, lam, x
    raise ValueError(f"unknown filter {filter!r}")


def scf_solve(problem: Problem, p0=None, opts: ScfOptions | None = None) -> FixedPointBundle:
    """Iterate P_{k+1} = (1-theta) P_k + theta Psi(P_k) until the step is below tol.

    Non-convergence is not an exception: the returned bundle carries the full
    history with ``converged=False`` so parameter sweeps over diverging ranges
    still emit data.  A zero cross gap at some iterate raises ZeroGapError
    identifying the iterate index.
    """
    opts = opts or ScfOptions()
    if p0 is None:
        density = spectral_filter_density(problem.a0, problem.p)
    else:
        density = np.asarray(require_hermitian(p0, name="P0"), dtype=complex)
        if abs(np.trace(density).real - problem.p) > 1e-8 * max(1, problem.p):
            raise ValueError(
                f"P0 must have trace p={problem.p}, got {np.trace(density).real!r}"
            )
    theta = opts.damping
    history: list[IterationRecord] = []
    iterates: list[np.ndarray] = []
    converged = False
    for k in range(opts.max_iter):
        try:
            psi, lam, _ = scf_step(problem, density, filter=opts.filter, beta=opts.beta)
        except ZeroGapError as exc:
            raise ZeroGapError(f"zero gap at SCF iterate {k}: {exc}") from exc
        nxt = psi if theta == 1.0 else (1.0 - theta) * density + theta * psi
        step_err = float(np.linalg.norm(nxt - density))
        p = problem.p
        history.append(
            IterationRecord(
                step_err=step_err,
                lambda_p=float(lam[p - 1]),
                lambda_p1=float(lam[p]),
                gap=float(lam[p] - lam[p - 1]),
            )
        )
        density = nxt
        iterates.append(density)
        if step_err <= opts.tol:
            converged = True
            break
    p_star = density
    a_star = problem.apply(p_star)
    lam, x = np.linalg.eigh(require_hermitian(a_star, tol=1e-10, name="A(P*)"))
    mu = None
    if opts.filter == "fermi":
        mu = fermi_chemical_potential(lam, opts.beta, problem.p)
    errors = np.array([float(np.linalg.norm(it - p_star)) for it in iterates])
    return FixedPointBundle(
        p_star=p_star,
        x=x,
        lambdas=lam,
        history=history,
        converged=converged,
        p=problem.p,
        damping=theta,
        filter=opts.filter,
        beta=opts.beta,
        mu=mu,
        errors_to_fixed=errors,
    )


def locate_fixed_point(
    problem: Problem,
    opts: ScfOptions | None = None,
    fallback_dampings=(0.5, 0.2, 0.05),
    fallback_max_iter: int = 5000,
) -> tuple[FixedPointBundle, FixedPointBundle | None]:
    """Find a fixed point, falling back to damped iteration when plain SCF fails.

    Returns (bundle, plain_bundle) where plain_bundle is the theta = 1 run
    (the one rate measurements may use) and bundle is the first converged run.
    Needed to evaluate divergent cases (c > 1), where plain SCF never settles
    but the damped iteration shares the same fixed points.
    """
    opts = opts or ScfOptions()
    plain = scf_solve(problem, opts=replace(opts, damping=1.0))
    if plain.converged:
        return plain, plain
    for theta in fallback_dampings:
        damped = scf_solve(
            problem, opts=replace(opts, damping=theta, max_iter=fallback_max_iter)
        )
        if damped.converged:
            return damped, plain
    return plain, plain


@dataclass
class RateEstimate:
    """Geometric convergence rate fitted on the asymptotic tail of the history."""

    rate: float
    ratios: np.ndarray
    points_used: int


def estimate_rate(errors, tail: int = 8, floor: float = RATE_FLOOR) -> RateEstimate:
    """Least-squares geometric rate from the tail of an error sequence.

    Uses the last ``tail`` entries that sit above the round-off floor
    (default 100x machine precision) and fits the slope of log(error)
    against the iteration index.
    """
    errors = np.asarray(errors, dtype=float)
    usable = np.flatnonzero(errors > floor)
    if usable.size < 6:
        raise RateEstimationError(
            f"only {usable.size} usable tail points above the floor {floor:.2e}; "
            "rerun with a smaller tol or more iterations"
        )
    idx = usable[-tail:]
    logs = np.log(errors[idx])
    slope = np.polyfit(idx.astype(float), logs, 1)[0]
    ratios = errors[idx][1:] / errors[idx][:-1]
    return RateEstimate(rate=float(np.exp(slope)), ratios=ratios, points_used=idx.size)
