import itertools
import math

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.integrate import solve_ivp

from brwlab.errors import BracketError, ConfigError, EigenConvergenceError, SingularSolveError
from brwlab.model import BrwModel, OffspringLaw, WalkKernel, build_simple_kernel
from brwlab.operators import (
    LatticeBox,
    SourceLanczos,
    TruncatedOperator,
    build_operator,
    critical_intensity,
    extrapolate_critical,
    green_function_at_origin,
    principal_eigenpair,
    principal_eigenvalue,
    transition_probabilities,
)

from conftest import pure_birth


def walk(d, L, kappa=1.0):
    return build_operator(pure_birth(d, 0.0, kappa), LatticeBox(d, L))


# --- box ---------------------------------------------------------------


@pytest.mark.parametrize("d, L", [(1, 3), (2, 2), (3, 1)])
def test_box_enumeration_is_bijection(d, L):
    box = LatticeBox(d, L)
    pts = box.sites
    assert len({tuple(p) for p in pts}) == box.size == (2 * L + 1) ** d
    assert np.array_equal(box.indices(pts), np.arange(box.size))
    assert tuple(pts[box.origin]) == (0,) * d
    assert box.index((0,) * d) == box.origin


def test_box_rejects_outside_points():
    box = LatticeBox(2, 2)
    with pytest.raises(IndexError):
        box.index((3, 0))
    with pytest.raises(ConfigError):
        LatticeBox(1, 0)


# --- assembly ----------------------------------------------------------


def test_d1_matrix_transcription():
    op = walk(1, 1)
    expected = [[-1, 0.5, 0], [0.5, -1, 0.5], [0, 0.5, -1]]
    assert np.array_equal(op.dense(), expected)
    branched = build_operator(pure_birth(1, 0.3), LatticeBox(1, 1), include_branching=True)
    assert branched.dense()[1, 1] == pytest.approx(-0.7)
    assert branched.without_branching().dense().tolist() == expected


def test_d2_matches_brute_force_assembly():
    box = LatticeBox(2, 1)
    kernel = build_simple_kernel(2, 1.0)
    op = build_operator(BrwModel(kernel, OffspringLaw.binary(0, 0)), box)
    sites = [tuple(p) for p in itertools.product(range(-1, 2), repeat=2)]
    brute = np.zeros((9, 9))
    for i, x in enumerate(sites):
        for j, y in enumerate(sites):
            z = tuple(b - a for a, b in zip(x, y))
            brute[i, j] = kernel.rate(z)
    assert np.array_equal(op.dense(), brute)
    assert op.is_symmetric()
    off = brute[~np.eye(9, dtype=bool)]
    assert set(np.unique(off)) == {0.0, 0.25}


def test_row_sums_dirichlet():
    kernel = WalkKernel(2, {(1, 0): 0.3, (-1, 0): 0.3, (1, 1): 0.2, (-1, -1): 0.2})
    op = build_operator(BrwModel(kernel, OffspringLaw.binary(0, 0)), LatticeBox(2, 3))
    rows = np.asarray(op.matrix.sum(axis=1)).ravel()
    assert np.all(rows <= 1e-15)
    interior = np.all(np.abs(op.box.sites) <= 2, axis=1)
    assert np.allclose(rows[interior], 0.0, atol=1e-15)
    assert np.all(rows[~interior] < 0)


def test_adjoint_is_transpose():
    kernel = WalkKernel(1, {(1,): 0.7, (-1,): 0.3})
    model = BrwModel(kernel, OffspringLaw.binary(0, 0))
    box = LatticeBox(1, 3)
    fwd = build_operator(model, box).dense()
    adj = build_operator(model, box, adjoint=True).dense()
    assert np.array_equal(adj, fwd.T)
    assert not build_operator(model, box).is_symmetric()


def test_assembly_rejects_small_box():
    kernel = WalkKernel(1, {(2,): 0.5, (-2,): 0.5, (1,): 0.1, (-1,): 0.1})
    with pytest.raises(ConfigError):
        build_operator(BrwModel(kernel, OffspringLaw.binary(0, 0)), LatticeBox(1, 1))
    with pytest.raises(ConfigError):
        build_operator(pure_birth(1, 0.0), LatticeBox(2, 2))


# --- transition probabilities --------------------------------------------


def test_transition_identity_at_zero():
    assert np.array_equal(transition_probabilities(walk(2, 2), 0.0), np.eye(25))


def test_transition_short_time_against_taylor():
    op = walk(1, 5)
    A = op.dense()
    t = 0.1
    taylor = sum(np.linalg.matrix_power(t * A, k) / math.factorial(k) for k in range(5))
    P = transition_probabilities(op, t)
    o = op.box.origin
    assert abs(P[o, o] - 0.905) < 0.01
    # remainder bound: ||tA||^5 / 5! with ||A|| <= 2 kappa
    assert np.max(np.abs(P - taylor)) <= (2 * t) ** 5 / 120


@pytest.mark.parametrize("t", [0.5, 3.0, 10.0])
def test_transition_kernel_properties(t):
    P = transition_probabilities(walk(2, 4), t)
    assert np.allclose(P, P.T, atol=1e-14)
    assert P.min() >= -1e-15
    assert P.sum(axis=1).max() <= 1 + 1e-12


@pytest.mark.parametrize("d, L", [(1, 20), (2, 6)])
def test_transition_matches_kolmogorov_ode(d, L):
    op = walk(d, L)
    A = op.matrix
    o = op.box.origin
    e = np.zeros(op.size)
    e[o] = 1.0
    ts = [1.0, 5.0, 10.0]
    sol = solve_ivp(lambda t, y: A @ y, (0, 10), e, t_eval=ts, method="DOP853", rtol=1e-12, atol=1e-14)
    for k, t in enumerate(ts):
        P = transition_probabilities(op, t)
        assert np.max(np.abs(P[:, o] - sol.y[:, k])) < 1e-8


def test_transition_rejects_bad_input():
    with pytest.raises(ValueError):
        transition_probabilities(walk(1, 3), -1.0)
    branched = build_operator(pure_birth(1, 1.0), LatticeBox(1, 3), include_branching=True)
    with pytest.raises(ValueError):
        transition_probabilities(branched, 1.0)


# --- principal eigenvalue -------------------------------------------------


def branched(d, beta, L, kappa=1.0):
    return build_operator(pure_birth(d, beta, kappa), LatticeBox(d, L), include_branching=True)


def test_no_branching_no_positive_eigenvalue():
    assert principal_eigenvalue(branched(2, 0.0, 5)) <= 0


def test_d1_eigenvalue_against_dense_oracle_and_closed_form():
    op = branched(1, 2.0, 40)
    lam = principal_eigenvalue(op)
    assert lam > 0
    assert abs(lam - np.linalg.eigvalsh(op.dense()).max()) < 1e-8
    # whole-line value sqrt(kappa^2 + beta^2) - kappa, box effects are exponentially small
    assert lam == pytest.approx(math.sqrt(5) - 1, abs=1e-10)


def test_sparse_eigen_path_against_dense_and_lanczos():
    op = branched(2, 1.5, 25)  # 2601 sites, beyond the dense cutoff
    lam, vec = principal_eigenpair(op)
    assert abs(lam - np.linalg.eigvalsh(op.dense()).max()) < 1e-8
    assert abs(lam - SourceLanczos(op.without_branching()).top_eigenvalue(1.5)) < 1e-9
    assert vec[op.box.origin] > 0
    assert np.linalg.norm(op.matrix @ vec - lam * vec) < 1e-6


def test_eigen_nonconvergence_reports_iterations():
    with pytest.raises(EigenConvergenceError, match="after 1 iterations"):
        principal_eigenvalue(branched(2, 0.01, 25), maxiter=1)


def test_eigenvalue_monotone_in_beta_and_box():
    assert principal_eigenvalue(branched(1, 3.0, 20)) > principal_eigenvalue(branched(1, 2.0, 20))
    lams = [principal_eigenvalue(branched(3, 0.8, L)) for L in (3, 5, 8)]
    assert lams[0] <= lams[1] <= lams[2]


def test_eigenvalue_invariant_under_relabelling():
    op = branched(2, 1.2, 4)
    perm = np.random.default_rng(3).permutation(op.size)
    P = sp.eye(op.size, format="csr")[perm]
    shuffled = TruncatedOperator(op.box, (P @ op.matrix @ P.T).tocsr(), op.beta)
    assert principal_eigenvalue(shuffled) == pytest.approx(principal_eigenvalue(op), abs=1e-12)


def test_lanczos_matches_dense_for_many_betas():
    op = walk(2, 6)
    lz = SourceLanczos(op)
    dense = op.dense()
    o = op.box.origin
    for beta in (0.0, 0.3, 1.0, 2.5):
        m = dense.copy()
        m[o, o] += beta
        assert lz.top_eigenvalue(beta) == pytest.approx(np.linalg.eigvalsh(m).max(), abs=1e-11)


def test_lanczos_rejects_bad_operators():
    with pytest.raises(ValueError):
        SourceLanczos(branched(1, 1.0, 3))
    kernel = WalkKernel(1, {(1,): 0.7, (-1,): 0.3})
    with pytest.raises(ValueError):
        SourceLanczos(build_operator(BrwModel(kernel, OffspringLaw.binary(0, 0)), LatticeBox(1, 3)))


def test_bisection_requires_bracket():
    op = walk(1, 3)
    shifted = TruncatedOperator(op.box, (op.matrix + sp.eye(op.size) * 2.0).tocsr())
    with pytest.raises(BracketError):
        SourceLanczos(shifted).critical_beta()


# --- Green's function ------------------------------------------------------


def test_green_decays_at_large_lambda():
    assert green_function_at_origin(walk(2, 5), 1e6) < 1e-5


def test_green_d1_is_linear_in_box():
    # for the d=1 nearest-neighbour walk with kappa=1, G_box(0,0) = L + 1
    for L in (5, 10, 20, 40):
        assert green_function_at_origin(walk(1, L)) == pytest.approx(L + 1, rel=1e-10)


def test_green_d3_converges():
    values = [green_function_at_origin(walk(3, L)) for L in (10, 20, 40)]
    steps = np.diff(values)
    assert np.all(steps > 0)
    assert steps[1] < steps[0]
    # frozen values from the linear solves
    assert values == pytest.approx([1.4784, 1.4965, 1.5062], abs=2e-4)


def test_green_singular_is_reported():
    # a Neumann-type generator annihilates constants and is singular at lam = 0
    box = LatticeBox(1, 3)
    m = np.diag(np.full(6, 0.5), 1) + np.diag(np.full(6, 0.5), -1)
    m -= np.diag(m.sum(axis=1))
    op = TruncatedOperator(box, sp.csr_matrix(m))
    with pytest.warns(Warning):
        with pytest.raises(SingularSolveError):
            green_function_at_origin(op)


# --- critical intensity -----------------------------------------------------


def test_d1_critical_intensity_goes_to_zero():
    rep = critical_intensity(pure_birth(1, 1.0), schedule=(10, 20, 40, 80))
    # per-box value is exactly 1/(L+1)
    for L, b in zip(rep.half_widths, rep.per_box):
        assert b == pytest.approx(1 / (L + 1), abs=2e-6)
    assert rep.extrapolated == 0.0
    assert rep.green_extrapolated == 0.0
    # each doubling shrinks the distance to 0 by the factor (L+1)/(2L+1) ~ 0.52
    ratios = np.array(rep.per_box[1:]) / np.array(rep.per_box[:-1])
    assert np.all(ratios <= 0.53)


def test_d2_critical_intensity_goes_to_zero():
    rep = critical_intensity(pure_birth(2, 1.0), schedule=(5, 10, 20))
    assert rep.extrapolated == 0.0
    assert rep.per_box[0] > rep.per_box[1] > rep.per_box[2] > 0


def test_d3_critical_intensity_agrees_with_green():
    rep = critical_intensity(pure_birth(3, 1.0))
    assert rep.relative_disagreement() < 0.02
    assert rep.relative_disagreement() < 1e-5
    assert rep.extrapolated == pytest.approx(rep.green_extrapolated, rel=1e-5)
    # frozen: 1 / G_0(0,0) of the d=3 simple walk with kappa = 1
    assert rep.extrapolated == pytest.approx(0.6595, abs=2e-4)
    assert all(abs(b.beta_c - b.green_beta_c) <= 2e-6 for b in rep.boxes)


def test_critical_intensity_rejects_inadmissible():
    kernel = WalkKernel(1, {(1,): 1.0})
    with pytest.raises(ConfigError):
        critical_intensity(BrwModel(kernel, OffspringLaw.binary(1, 1)))


def test_extrapolation_single_box_and_transient():
    assert extrapolate_critical([0.3], [10], 3) == 0.3
    # 1/beta_c affine in (L+1)^-1 for d = 3 is recovered exactly
    g_inf, c = 1.5, 0.4
    Ls = [10, 20]
    vals = [1 / (g_inf - c / (L + 1)) for L in Ls]
    assert extrapolate_critical(vals, Ls, 3) == pytest.approx(1 / g_inf, rel=1e-12)
