import numpy as np
import pytest

from multistroke.surrogate import (build_surrogate, check_bound, clean_recursion, iterated_bound,
                                   power_iteration_norm, projector_matrices, simulate, trace_rows)

SHAPE = (1, 4, 4)


def build(T=3, rho=0.5, kappa=0.0, sigma=0.1, weights=0.3, n=20_000, **kw):
    return build_surrogate(SHAPE, 2, T, rho=rho, kappa=kappa, sigma=sigma, weights=weights, n_samples=n, **kw)


def test_power_iteration_matches_svd():
    M = np.random.default_rng(0).standard_normal((7, 5))
    assert power_iteration_norm(M, rtol=1e-12) == pytest.approx(np.linalg.norm(M, 2), rel=1e-8)
    assert power_iteration_norm(np.zeros((3, 3))) == 0.0
    with pytest.raises(RuntimeError):
        power_iteration_norm(M, max_iter=1)


def test_projectors_are_complementary_orthogonal():
    qc, qd = projector_matrices((2, 4, 4), 2)
    np.testing.assert_allclose(qc @ qc, qc, atol=1e-14)
    np.testing.assert_allclose(qc, qc.T, atol=1e-14)
    np.testing.assert_allclose(qc @ qd, 0, atol=1e-14)
    assert round(np.trace(qc)) == 8 and round(np.trace(qd)) == 24


def test_dimensions_and_declared_norms():
    spec = build(T=2, rho=1.0, kappa=0.0)
    assert (spec.d_coarse, spec.d_detail) == (4, 12)
    for t in (1, 2):
        dd = spec.qd @ spec.M[t] @ spec.qd
        est = power_iteration_norm(dd, rtol=1e-12)
        assert 1 - 1e-8 <= est <= 1 + 1e-8
        # the block itself is built as zeros; the product only carries basis round-off
        assert np.max(np.abs(spec.qd @ spec.M[t] @ spec.qc)) < 1e-14
    assert np.all(spec.B == 0) and all(np.all(b == 0) for b in spec.bias)


def test_bias_energy_is_detail_energy():
    spec = build(T=2, bias_energy=0.2)
    for t in (1, 2):
        b = spec.bias[t]
        assert np.sum((spec.qd @ b) ** 2) == pytest.approx(0.2, rel=1e-12)
        assert np.max(np.abs(spec.qc @ b)) < 1e-12


@pytest.mark.parametrize("kw", [dict(rho=[0.5, 0.5]), dict(kappa=-0.1), dict(weights=1.0), dict(T=0),
                                dict(detail_kind="lowrank")])
def test_build_rejects(kw):
    with pytest.raises(ValueError):
        build(**kw)


def test_zero_dynamics_collapse_after_one_step():
    spec = build(T=3, rho=0.0, kappa=0.0, sigma=0.0, n=1000)
    trace = simulate(spec)
    assert trace.E[3] > 1.0
    assert np.all(trace.E[:3] < 1e-28)


def test_gaussian_init_detail_energy():
    spec = build(T=1, weights=0.4, n=100_000, seed=3)
    trace = simulate(spec)
    assert trace.E[1] == pytest.approx(12 * 0.6**2, rel=0.02)
    assert trace.C2[1] == pytest.approx(4.0, rel=0.02)


def test_clean_scalar_case_is_equality():
    spec = build(T=1, rho=0.8, sigma=0.3, weights=0.5, detail_kind="scalar", n=100_000, seed=4)
    trace = simulate(spec)
    assert trace.E[0] == pytest.approx(clean_recursion(trace, spec, 1), rel=0.01)
    report = check_bound(trace, spec)[0]
    assert report.ok and report.margin > 0
    assert trace.N == 12
    assert abs(trace.N_emp[1] - 12) / 12 < 0.01


def test_bound_large_kappa_zero_rho():
    spec = build(T=3, rho=0.0, kappa=2.0, sigma=0.1, weights=0.5, n=50_000, seed=5)
    trace = simulate(spec)
    for r in check_bound(trace, spec):
        kappa_term = 3 * 4.0 * trace.C2[r.t]
        assert r.ok
        assert kappa_term > 0.5 * r.bound


def test_bound_without_stroke():
    spec = build(T=3, rho=0.9, kappa=0.5, sigma=0.1, weights=0.0, bias_energy=0.05, n=50_000, seed=6)
    assert all(r.ok for r in check_bound(simulate(spec), spec))


def test_iterated_contraction():
    spec = build(T=10, rho=0.5, sigma=0.0, weights=0.5, n=50_000, seed=7)
    trace = simulate(spec)
    rep = iterated_bound(trace, spec, 10, 0)
    assert rep.q == pytest.approx(0.0625)
    assert rep.ok
    assert rep.exit < 1e-10 * rep.entry


def test_single_step_block_is_clean_bound():
    spec = build(T=4, rho=0.7, sigma=0.2, weights=0.4, detail_kind="scalar", n=50_000, seed=8)
    trace = simulate(spec)
    rep = iterated_bound(trace, spec, 3, 2)
    q = 0.7**2 * 0.6**2
    assert rep.bound == pytest.approx(q * trace.E[3] + 0.2**2 * 0.6**2 * 12, rel=1e-12)
    assert rep.bound == pytest.approx(clean_recursion(trace, spec, 3), rel=1e-12)


def test_iterated_preconditions():
    trace_spec = build(T=3, rho=0.5, kappa=0.3, weights=0.5, n=1000)
    with pytest.raises(ValueError, match="coupling"):
        iterated_bound(simulate(trace_spec), trace_spec, 3, 0)
    spec = build(T=3, rho=0.5, weights=0.0, n=1000)
    trace = simulate(spec)
    with pytest.raises(ValueError, match="w_min"):
        iterated_bound(trace, spec, 3, 0)
    assert iterated_bound(trace, spec, 3, 0, allow_unstroked=True).q == pytest.approx(0.25)
    spec = build(T=3, rho=1.0, weights=0.5, n=1000)
    with pytest.raises(ValueError, match="rho"):
        iterated_bound(simulate(spec), spec, 3, 0)
    with pytest.raises(ValueError):
        iterated_bound(trace, spec, 2, 2)


def test_larger_stroke_weight_lowers_steady_state_energy():
    finals = []
    for w in (0.0, 0.2, 0.4, 0.6):
        spec = build(T=30, rho=0.6, sigma=0.3, weights=w, n=20_000, seed=11)
        trace = simulate(spec)
        finals.append(trace.E[1])
    assert all(a > b for a, b in zip(finals, finals[1:]))


def test_simulation_is_seeded():
    spec = build(T=2, n=5000, seed=12)
    a, b = simulate(spec), simulate(spec)
    np.testing.assert_array_equal(a.E, b.E)
    assert np.all(a.E >= 0) and np.all(a.C2 >= 0)


def test_trace_rows():
    spec = build(T=2, n=2000)
    rows = list(trace_rows(simulate(spec), spec))
    assert [r[0] for r in rows] == [2, 1, 0]
    assert rows[0][4] == "" and rows[0][5] == ""
    assert rows[1][5] == pytest.approx(rows[1][4] - rows[1][1])
