import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from branchlab.errors import NotMonotone, UnbalancedMeasures
from branchlab.measures import (
    MollifiedMeasure,
    ball_mass,
    canonicalize,
    wrap_unit,
)
from branchlab.transport import (
    MonotonePlan,
    displacement_ahlfors,
    interpolate_plan,
    loeper_check,
    mccann,
    w2_line,
    w2_torus,
)


def random_measure(rng, max_atoms=64, n_atoms=None):
    n = n_atoms or rng.integers(1, max_atoms + 1)
    pos = rng.random(n)
    mass = rng.random(n) + 0.05
    mass /= mass.sum()
    return canonicalize((pos, mass))


def oracle_cut_sweep(mu, nu, n_cuts=10_000):
    """Brute-force periodic cost: exhaustive minimum over cut positions.

    The cut cost is piecewise constant between consecutive atoms, so on top
    of the uniform cut grid every piece is also evaluated once through its
    representative; the result is the exact minimum over all cuts.
    """
    def line_cost(cut):
        up = np.sort(wrap_unit(mu.positions - cut))
        uw = mu.masses[np.argsort(wrap_unit(mu.positions - cut), kind="stable")]
        vp = np.sort(wrap_unit(nu.positions - cut))
        vw = nu.masses[np.argsort(wrap_unit(nu.positions - cut), kind="stable")]
        cu, cv = np.cumsum(uw), np.cumsum(vw)
        qs = np.sort(np.concatenate([cu, cv]))
        deltas = np.diff(np.concatenate([[0.0], qs]))
        mids = qs - deltas / 2.0
        iu = np.minimum(np.searchsorted(cu, mids), cu.size - 1)
        iv = np.minimum(np.searchsorted(cv, mids), cv.size - 1)
        return float(np.sum(deltas * (up[iu] - vp[iv]) ** 2))

    cuts = np.arange(n_cuts) / n_cuts
    atoms = np.unique(wrap_unit(np.concatenate([mu.positions, nu.positions])))
    reps = np.concatenate([atoms, atoms + np.diff(
        np.concatenate([atoms, [atoms[0] + 1.0]])) / 2.0])
    all_cuts = np.unique(np.concatenate([cuts, wrap_unit(reps)]))
    return min(line_cost(float(c)) for c in all_cuts)


def test_w2_line_identity():
    mu = canonicalize([(0.2, 0.5), (0.7, 0.5)])
    res = w2_line(mu, mu)
    assert res.cost_sq == 0.0
    assert np.array_equal(res.plan.source, res.plan.target)


def test_w2_line_single_displacement():
    res = w2_line(canonicalize([(0.25, 1.0)]), canonicalize([(0.75, 1.0)]))
    assert res.cost_sq == pytest.approx(0.25, rel=1e-15)


def test_w2_line_lebesgue_refinement_to_atom():
    n = 2 ** 12
    grid = canonicalize(((np.arange(n) + 0.5) / n, np.full(n, 1.0 / n)))
    res = w2_line(grid, canonicalize([(0.5, 1.0)]))
    assert res.cost_sq == pytest.approx(1.0 / 12.0, abs=1e-5)


def test_w2_line_unbalanced():
    with pytest.raises(UnbalancedMeasures):
        w2_line(canonicalize([(0.2, 1.0)]), canonicalize([(0.3, 0.5)]))


def test_w2_line_cost_matches_plan():
    rng = np.random.default_rng(0)
    for _ in range(20):
        mu, nu = random_measure(rng), random_measure(rng)
        res = w2_line(mu, nu)
        assert res.cost_sq == pytest.approx(res.plan.cost_sq(), rel=1e-12)
        m0, m1 = res.plan.marginals()
        assert np.allclose(m0.positions, mu.positions)
        assert np.allclose(m0.masses, mu.masses)
        assert np.allclose(m1.positions, nu.positions)
        assert np.allclose(m1.masses, nu.masses)


def test_w2_torus_wraps():
    res = w2_torus(canonicalize([(0.0, 1.0)]), canonicalize([(0.9, 1.0)]))
    assert res.cost_sq == pytest.approx(0.01, rel=1e-12)


def test_w2_torus_antipodal_tie():
    res = w2_torus(canonicalize([(0.25, 1.0)]), canonicalize([(0.75, 1.0)]))
    assert res.cost_sq == pytest.approx(0.25, rel=1e-12)
    assert res.antipodal


def test_w2_torus_matches_brute_force():
    rng = np.random.default_rng(42)
    for _ in range(25):
        mu, nu = random_measure(rng), random_measure(rng)
        res = w2_torus(mu, nu)
        assert res.cost_sq == pytest.approx(oracle_cut_sweep(mu, nu),
                                            abs=1e-10, rel=1e-10)


def test_w2_torus_not_above_line():
    rng = np.random.default_rng(3)
    for _ in range(20):
        mu, nu = random_measure(rng), random_measure(rng)
        assert w2_torus(mu, nu).cost_sq <= w2_line(mu, nu).cost_sq + 1e-15


@given(st.integers(0, 2 ** 31 - 1))
@settings(max_examples=30, deadline=None)
def test_w2_line_triangle_inequality(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (random_measure(rng, max_atoms=12) for _ in range(3))
    wab = w2_line(a, b).cost
    wbc = w2_line(b, c).cost
    wac = w2_line(a, c).cost
    assert wac <= wab + wbc + 1e-10


def test_mccann_endpoints():
    mu = canonicalize([(0.2, 0.4), (0.5, 0.6)])
    nu = canonicalize([(0.3, 1.0)])
    assert mccann(mu, nu, 0.0) is mu
    assert mccann(mu, nu, 1.0) is nu


def test_mccann_midpoint():
    out = mccann(canonicalize([(0.0, 1.0)]), canonicalize([(0.5, 1.0)]), 0.5)
    assert out.atoms == [(0.25, 1.0)]


def test_mccann_mass_conserved_and_monotone():
    rng = np.random.default_rng(11)
    for _ in range(10):
        mu, nu = random_measure(rng, 16), random_measure(rng, 16)
        mid = mccann(mu, nu, 0.37)
        assert mid.total_mass == pytest.approx(mu.total_mass, rel=1e-12)
        # interpolant couples monotonically with both endpoints
        assert w2_line(mu, mid).plan.is_monotone()
        assert w2_line(mid, nu).plan.is_monotone()


def test_mccann_geodesic_identity():
    rng = np.random.default_rng(5)
    for _ in range(100):
        mu, nu = random_measure(rng, 24), random_measure(rng, 24)
        w = w2_line(mu, nu).cost
        lam, sig = sorted(rng.random(2))
        wls = w2_line(mccann(mu, nu, lam), mccann(mu, nu, sig)).cost
        assert wls == pytest.approx(abs(lam - sig) * w, abs=1e-10)


def test_displacement_ahlfors_identity_cases():
    mu = canonicalize([(0.1, 0.3), (0.5, 0.7)])
    plan = w2_line(mu, mu).plan
    radii = [2.0 ** -k for k in range(2, 8)]
    m_lam, m0 = displacement_ahlfors(plan, 0.5, 0.7, radii)
    assert m_lam == pytest.approx(m0, rel=1e-12)
    m_small, m0b = displacement_ahlfors(w2_line(mu, canonicalize(
        [(0.2, 1.0)])).plan, 1e-12, 0.7, radii)
    assert m_small == pytest.approx(m0b, rel=1e-6)


def cantor_measure(depth: int) -> np.ndarray:
    pos = np.array([0.0])
    for _ in range(depth):
        pos = np.concatenate([pos / 3.0, pos / 3.0 + 2.0 / 3.0])
    return np.sort(pos)


def test_displacement_ahlfors_cantor_inequality():
    depth = 8
    pos = cantor_measure(depth) * (1.0 - 3.0 ** -depth)
    mu = canonicalize((pos, np.full(pos.size, 2.0 ** -depth)))
    n = 256
    target = canonicalize(((np.arange(n) + 0.5) / n, np.full(n, 1.0 / n)))
    plan = w2_line(mu, target).plan
    alpha = math.log(2) / math.log(3)
    radii = [2.0 ** -k for k in range(2, 9)]
    for lam in (0.25, 0.5, 0.75):
        m_lam, m0 = displacement_ahlfors(plan, lam, alpha, radii)
        assert m_lam <= 2.0 ** alpha * (1.0 - lam) ** -alpha * m0 * (1 + 1e-12)


def test_displacement_ahlfors_requires_monotone():
    plan = MonotonePlan(np.array([0.1, 0.2]), np.array([0.9, 0.1]),
                        np.array([0.5, 0.5]))
    with pytest.raises(NotMonotone):
        displacement_ahlfors(plan, 0.5, 0.5, [0.25])


def test_loeper_identical_measures():
    m = MollifiedMeasure(canonicalize([(0.5, 1.0)]), 0.05)
    lhs, rhs = loeper_check(m, m, grid=256, K=2048)
    assert lhs == 0.0 and rhs == 0.0


def test_loeper_inequality_cases():
    m1 = MollifiedMeasure(canonicalize([(0.0, 1.0)]), 0.05)
    m2 = MollifiedMeasure(canonicalize([(0.1, 1.0)]), 0.05)
    lhs, rhs = loeper_check(m1, m2, grid=2048, K=16384)
    assert lhs <= rhs * (1 + 1e-3)
    m3 = MollifiedMeasure(canonicalize([(0.2, 0.5), (0.7, 0.5)]), 0.02)
    m4 = MollifiedMeasure(canonicalize(
        [(0.1, 0.25), (0.35, 0.25), (0.6, 0.25), (0.85, 0.25)]), 0.02)
    lhs, rhs = loeper_check(m3, m4, grid=2048, K=16384)
    assert lhs <= rhs * (1 + 1e-3)


def test_plan_json():
    plan = w2_line(canonicalize([(0.2, 1.0)]), canonicalize([(0.6, 1.0)])).plan
    assert plan.to_json() == [[0.2, 0.6, 1.0]]
