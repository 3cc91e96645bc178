"""Unit tests for Jacobian assembly, the convergence factor and the bound ladder."""

import numpy as np
import pytest

from scfconv import (
    GapStructure,
    ScfOptions,
    analyze_problem,
    assemble_Lprime,
    assemble_jacobian,
    bound_c2,
    bound_cyclic,
    bound_gap,
    bound_gap_all,
    bound_liu,
    bound_naive,
    bound_rank_truncated,
    build_illustrative,
    build_laplacian,
    convergence_factor,
    cyclic_spectral_radii,
    estimate_rate,
    fermi_jacobian,
    gap_structure,
    jacobian_fd,
    locate_fixed_point,
    max_column_relative_error,
    realified_jacobian_fd,
    vech,
)
from scfconv.analysis import _pair_terms
from scfconv.matops import ChemicalPotentialError, selector_T
from scfconv.problems import HadamardMask, Problem, apply_L
from scfconv.matops import symmetrize_S

from conftest import solved_random_instances


def solved(problem, **kw):
    bundle, plain = locate_fixed_point(problem, ScfOptions(**kw))
    lp = assemble_Lprime(problem.op, problem.n)
    return bundle, plain, assemble_jacobian(bundle, lp)


def test_gap_structure_ordering_and_pairs():
    lam = np.array([1.0, 1.16, 10.0])
    gaps = gap_structure(lam, 1)
    assert gaps.count == 2
    assert np.allclose(gaps.cross_gaps, [0.16, 9.0], atol=1e-14)
    assert gaps.pairs == [(1, 2), (1, 3)]
    assert gaps.delta(1) == pytest.approx(0.16)
    assert gaps.delta(3) == np.inf
    assert gaps.omega(1) == [(2, 1), (1, 2)]
    assert gaps.omega(2) == [(2, 1), (1, 2), (3, 1), (1, 3)]
    with pytest.raises(ValueError):
        gaps.omega(3)
    with pytest.raises(ValueError):
        gaps.delta(0)


def test_gap_structure_equally_spaced():
    lam = np.arange(6, dtype=float)
    gaps = gap_structure(lam, 2)
    assert gaps.count == 8
    assert np.all(np.diff(gaps.cross_gaps) >= 0)
    assert gaps.pairs[0] == (2, 3)
    # omega(q) sets are nested and of size 2q
    for q in range(gaps.count + 1):
        assert len(gaps.omega(q)) == 2 * q
    assert set(gaps.omega(2)) >= set(gaps.omega(1))


def test_gap_structure_laplacian_reference_case():
    problem = build_laplacian(7, 10.0, 3, variant="real")
    bundle, _, _ = solved(problem)
    gaps = gap_structure(bundle.lambdas, 3)
    assert gaps.omega(3) == [(4, 3), (3, 4), (4, 2), (2, 4), (5, 3), (3, 5)]


def test_jacobian_matches_fd_illustrative():
    problem = build_illustrative(0.1)
    bundle, _, jb = solved(problem)
    fd = jacobian_fd(problem, bundle.p_star)
    assert max_column_relative_error(jb.j_p, fd) <= 1e-6


def test_jacobian_matches_fd_random():
    problem, bundle = solved_random_instances(1)[0]
    jb = assemble_jacobian(bundle, assemble_Lprime(problem.op, problem.n))
    fd = jacobian_fd(problem, bundle.p_star)
    assert max_column_relative_error(jb.j_p, fd) <= 1e-6


def test_jacobian_zero_for_linear_problem():
    n, p = 4, 2
    a0 = np.diag(np.arange(n, dtype=float))
    problem = Problem(a0=a0, op=HadamardMask(mask=np.zeros((n, n))), p=p)
    bundle, _, jb = solved(problem)
    assert np.allclose(jb.j_p, 0.0, atol=1e-14)
    assert convergence_factor(jb.j_p) == 0.0


def test_dense_and_structured_assembly_agree():
    problem = build_laplacian(9, 5.0, 4, variant="complex")
    bundle, _ = locate_fixed_point(problem)
    lp = assemble_Lprime(problem.op, problem.n)
    dense = assemble_jacobian(bundle, lp, kron_cap=64)
    structured = assemble_jacobian(bundle, lp, kron_cap=0)
    assert np.allclose(dense.j_p, structured.j_p, atol=1e-14)


def test_phase_invariance():
    problem = build_illustrative(0.15)
    bundle, _, jb = solved(problem)
    rng = np.random.default_rng(11)
    phases = np.exp(1j * rng.uniform(0, 2 * np.pi, size=problem.n))
    rotated = assemble_jacobian(
        type(bundle)(
            p_star=bundle.p_star,
            x=bundle.x * phases[None, :],
            lambdas=bundle.lambdas,
            history=[],
            converged=True,
            p=bundle.p,
        ),
        jb.l_prime,
    )
    assert np.allclose(rotated.j_p, jb.j_p, atol=1e-13)


def test_cyclic_spectral_radii_agree():
    problem = build_illustrative(0.2)
    _, _, jb = solved(problem)
    radii = cyclic_spectral_radii(jb)
    assert max(radii) - min(radii) <= 1e-10 * max(1.0, max(radii))


def test_convergence_factor_matches_measured_rate():
    problem = build_illustrative(0.2)
    bundle, plain, jb = solved(problem)
    rho = convergence_factor(jb.j_p)
    rate = estimate_rate(plain.errors_to_fixed).rate
    assert abs(rate - rho) <= 0.05 * rho


def test_bound_c2_dominates_c():
    for eps in (0.05, 0.1, 0.2):
        _, _, jb = solved(build_illustrative(eps))
        assert convergence_factor(jb.j_p) <= bound_c2(jb.j_p) + 1e-12


def test_bound_naive_reference_value():
    problem = build_illustrative(0.0)
    bundle, _, jb = solved(problem)
    gaps = gap_structure(bundle.lambdas, problem.p)
    assert bound_naive(jb.l_prime, gaps.delta(1)) == pytest.approx(625.0, rel=1e-12)
    with pytest.raises(ValueError):
        bound_naive(jb.l_prime, 0.0)


def test_bound_gap_zero_equals_naive():
    problem = build_illustrative(0.1)
    bundle, _, jb = solved(problem)
    gaps = gap_structure(bundle.lambdas, problem.p)
    naive = bound_naive(jb.l_prime, gaps.delta(1))
    assert bound_gap(jb, gaps, 0) == pytest.approx(naive, rel=1e-14)


def test_bound_gap_explicit_formula():
    problem = build_illustrative(0.1)
    bundle, _, jb = solved(problem)
    gaps = gap_structure(bundle.lambdas, problem.p)
    x = jb.x

    def pair_term(i, j, gap):
        a = np.linalg.norm(
            apply_L(problem.op, symmetrize_S(np.outer(x[:, j], x[:, i].conj())))
        )
        b = np.linalg.norm(
            apply_L(problem.op, symmetrize_S(np.outer(x[:, i], x[:, j].conj())))
        )
        return (a + b) / gap

    norm_lp = np.linalg.norm(jb.l_prime, 2)
    expected_q1 = norm_lp / gaps.delta(2) + pair_term(0, 1, gaps.delta(1))
    assert bound_gap(jb, gaps, 1) == pytest.approx(expected_q1, rel=1e-12)
    # full q: no leading term, both pair contributions
    expected_q2 = pair_term(0, 1, gaps.delta(1)) + pair_term(0, 2, gaps.delta(2))
    assert bound_gap(jb, gaps, 2) == pytest.approx(expected_q2, rel=1e-12)
    with pytest.raises(ValueError):
        bound_gap(jb, gaps, 3)


def test_bound_gap_family_is_cumulative():
    problem, bundle = solved_random_instances(3)[2]
    jb = assemble_jacobian(bundle, assemble_Lprime(problem.op, problem.n))
    gaps = gap_structure(bundle.lambdas, problem.p)
    family = bound_gap_all(jb, gaps)
    terms = _pair_terms(jb, gaps)
    norm_lp = np.linalg.norm(jb.l_prime, 2)
    for q in range(gaps.count + 1):
        lead = 0.0 if q == gaps.count else norm_lp / gaps.delta(q + 1)
        assert family[q] == pytest.approx(lead + terms[:q].sum(), rel=1e-12)


def test_bound_cyclic_matches_dense_products():
    problem, bundle = solved_random_instances(2)[1]
    n = problem.n
    lp = assemble_Lprime(problem.op, n)
    jb = assemble_jacobian(bundle, lp)
    c2a, c2b = bound_cyclic(jb)
    k1 = np.kron(jb.x.conj(), jb.x)
    k2 = np.kron(jb.x.T, jb.x.conj().T)
    lpt = lp @ selector_T(n)
    dense_a = jb.vec_r[:, None] * (k2 @ lpt)
    dense_b = lpt @ (k1 * jb.vec_r[None, :])
    assert c2a == pytest.approx(np.linalg.norm(dense_a, 2), rel=1e-12)
    assert c2b == pytest.approx(np.linalg.norm(dense_b, 2), rel=1e-12)


def test_bound_cyclic_column_identity():
    problem = build_illustrative(0.1)
    bundle, _, jb = solved(problem)
    n = problem.n
    r = jb.vec_r.reshape(n, n, order="F")
    lpt = jb.l_prime @ selector_T(n)
    k1 = np.kron(jb.x.conj(), jb.x)
    dense_b = lpt @ (k1 * jb.vec_r[None, :])
    for a in range(n):
        for b in range(n):
            col = dense_b[:, b * n + a]
            outer = np.outer(jb.x[:, a], jb.x[:, b].conj())
            expected = r[a, b] * apply_L(problem.op, symmetrize_S(outer)).ravel(order="F")
            assert np.allclose(col, expected, atol=1e-12)


def test_bound_cyclic_zero_operator():
    problem = Problem(
        a0=np.diag([0.0, 1.0, 3.0]), op=HadamardMask(mask=np.zeros((3, 3))), p=1
    )
    _, _, jb = solved(problem)
    assert bound_cyclic(jb) == (0.0, 0.0)


def test_bound_rank_truncated_full_recovers_c2():
    problem = build_illustrative(0.2)
    bundle, _, jb = solved(problem)
    gaps = gap_structure(bundle.lambdas, problem.p)
    c2 = bound_c2(jb.j_p)
    assert bound_rank_truncated(jb, gaps.count, gaps) == pytest.approx(c2, rel=1e-12)
    with pytest.raises(ValueError):
        bound_rank_truncated(jb, 0, gaps)


def test_bound_rank_truncated_matches_dense_truncation():
    problem, bundle = solved_random_instances(4)[3]
    n = problem.n
    lp = assemble_Lprime(problem.op, n)
    jb = assemble_jacobian(bundle, lp)
    gaps = gap_structure(bundle.lambdas, problem.p)
    k = max(1, gaps.count // 2)
    # dense oracle: zero out every entry of D outside omega(k), reassemble
    keep = np.zeros((n, n))
    for a, b in gaps.omega(k):
        keep[a - 1, b - 1] = 1.0
    vec_r_trunc = (jb.vec_r.reshape(n, n, order="F") * keep).ravel(order="F")
    k1 = np.kron(jb.x.conj(), jb.x)
    k2 = np.kron(jb.x.T, jb.x.conj().T)
    t = selector_T(n)
    dense = t @ (k1 * vec_r_trunc[None, :]) @ (k2 @ lp)
    assert bound_rank_truncated(jb, k, gaps) == pytest.approx(
        np.linalg.norm(dense, 2), rel=1e-11
    )


def test_bound_liu_values():
    problem = build_laplacian(10, 3.0, 4, variant="real")
    bundle, _, _ = solved(problem)
    gaps = gap_structure(bundle.lambdas, problem.p)
    val = bound_liu(problem, gaps.delta(1))
    norm_inv = np.linalg.norm(np.linalg.inv(problem.a0), 2)
    assert val == pytest.approx(2.0 * 3.0 * np.sqrt(10) * norm_inv / gaps.delta(1))
    # linear in alpha
    problem2 = build_laplacian(10, 6.0, 4, variant="real")
    assert bound_liu(problem2, gaps.delta(1)) == pytest.approx(2.0 * val)
    with pytest.raises(ValueError):
        bound_liu(build_illustrative(0.1), 0.16)


def test_fermi_jacobian_sharp_limit():
    problem = build_illustrative(0.1)
    bundle, _, jb = solved(problem)
    rho_step = convergence_factor(jb.j_p)
    for beta, rel in ((1e3, 0.02), (1e4, 1e-3)):
        jf = fermi_jacobian(bundle, jb.l_prime, beta=beta)
        assert convergence_factor(jf.j_p) == pytest.approx(rho_step, rel=rel)


def test_fermi_jacobian_vanishes_for_flat_occupations():
    problem = build_illustrative(0.1)
    bundle, _, jb = solved(problem)
    # at vanishing beta the occupations are flat and the Jacobian collapses;
    # mu must be supplied since no chemical potential can meet the trace target
    jf = fermi_jacobian(bundle, jb.l_prime, beta=1e-8, mu=float(bundle.lambdas.mean()))
    assert np.abs(jf.j_p).max() < 1e-6
    with pytest.raises(ChemicalPotentialError):
        fermi_jacobian(bundle, jb.l_prime, beta=1e-8)


def test_fermi_jacobian_rejects_bad_beta():
    problem = build_illustrative(0.1)
    bundle, _, jb = solved(problem)
    with pytest.raises(ValueError):
        fermi_jacobian(bundle, jb.l_prime, beta=0.0)


def test_realified_spectral_radius_matches_complex():
    problem = build_laplacian(6, 8.0, 2, variant="complex", h=0.25)
    bundle, _, jb = solved(problem)
    rho = convergence_factor(jb.j_p)
    rho_real = convergence_factor(realified_jacobian_fd(problem, bundle.p_star))
    assert rho_real == pytest.approx(rho, rel=1e-5)


def test_realified_jacobian_dimension():
    problem = build_illustrative(0.1)
    bundle, _, _ = solved(problem)
    j_real = realified_jacobian_fd(problem, bundle.p_star)
    assert j_real.shape == (9, 9)  # n^2 real coordinates on the Hermitian manifold


def test_sign_flip_preserves_norm_quantities():
    _, _, jb = solved(build_illustrative(0.2))
    assert convergence_factor(-jb.j_p) == pytest.approx(convergence_factor(jb.j_p))
    assert bound_c2(-jb.j_p) == pytest.approx(bound_c2(jb.j_p))


def test_divided_difference_norm_identity():
    problem, bundle = solved_random_instances(1)[0]
    jb = assemble_jacobian(bundle, assemble_Lprime(problem.op, problem.n))
    gaps = gap_structure(bundle.lambdas, problem.p)
    d_norm = np.abs(jb.vec_r).max()
    assert d_norm * gaps.delta(1) == pytest.approx(1.0, rel=1e-12)


def test_analyze_problem_report_consistency():
    problem = build_illustrative(0.1)
    report, bundle, jb = analyze_problem(problem, q_max=2, fd_check=True)
    assert report.converged
    assert report.c <= report.c2 + 1e-12
    assert report.c_gap[0] == pytest.approx(report.c_naive, rel=1e-12)
    assert report.fd_check <= 1e-6
    assert report.measured_rate == pytest.approx(report.c, rel=0.05)
    payload = report.to_dict()
    assert payload["n"] == 3 and payload["p"] == 1
    assert len(payload["deltas"]) == 2
    assert payload["c_tilde"][-1][0] == 2
    assert payload["c_tilde"][-1][1] == pytest.approx(report.c2, rel=1e-12)
    assert payload["omega"][1] == [[2, 1], [1, 2]]
    assert payload["c_liu"] is None


def test_analyze_problem_includes_liu_for_laplacian():
    problem = build_laplacian(8, 2.0, 3, variant="real")
    report, _, _ = analyze_problem(problem, q_max=1)
    assert report.c_liu is not None
    assert report.c_liu >= report.c_naive - 1e-12


def test_max_column_relative_error_basics():
    a = np.eye(3)
    assert max_column_relative_error(a, a) == 0.0
    b = a.copy()
    b[0, 0] += 1e-3
    assert max_column_relative_error(b, a) == pytest.approx(1e-3, rel=1e-10)
