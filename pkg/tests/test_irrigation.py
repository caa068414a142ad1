import json
import math
from pathlib import Path

import numpy as np
import pytest

from branchlab.errors import (
    DivergentBoundaryNorm,
    InvalidMass,
    NodeNotFound,
    TimeOutOfRange,
)
from branchlab.irrigation import (
    boundary_measure,
    full_energy,
    induced_plan,
    internal_energy,
    make_pattern,
    pattern_from_json,
    pattern_slice,
    subsystem,
    validate,
)
from branchlab.transport import w2_line

DATA = Path(__file__).parent / "data"


def static_branch(x=0.5, T=1.0, mass=1.0):
    return make_pattern(T, [(0.0, x), (T, x)], [(0, 1, mass)], [(1, 0.0)])


def v_pattern(T=1.0):
    return make_pattern(T, [(0.0, 0.5), (T, 0.4), (T, 0.6)],
                        [(0, 1, 0.5), (0, 2, 0.5)], [(1, 0.0), (2, 0.0)])


def dirac_grid_pattern(n, T=1.0):
    nodes, edges, tips = [], [], []
    for j in range(n):
        x = (j + 0.5) / n
        nodes += [(0.0, x), (T, x)]
        edges.append((2 * j, 2 * j + 1, 1.0 / n))
        tips.append((2 * j + 1, 0.0))
    return make_pattern(T, nodes, edges, tips)


def crossing_pattern(T=1.0):
    return make_pattern(
        T, [(0.0, 0.3), (0.0, 0.7), (T, 0.7), (T, 0.3)],
        [(0, 2, 0.5), (1, 3, 0.5)], [(2, 0.0), (3, 0.0)])


def series_truncated(two_s, K):
    n = np.arange(1, K + 1, dtype=float)
    return 2.0 * float(np.sum(n ** (-two_s)))


def test_structure_checks():
    with pytest.raises(TimeOutOfRange):
        make_pattern(1.0, [(0.0, 0.5), (0.0, 0.6)], [(0, 1, 1.0)], [(1, 0.0)])
    with pytest.raises(InvalidMass):
        make_pattern(1.0, [(0.0, 0.5), (1.0, 0.5)], [(0, 1, -1.0)], [(1, 0.0)])
    with pytest.raises(InvalidMass):
        # Kirchhoff violation at the interior node
        make_pattern(1.0, [(0.0, 0.5), (0.5, 0.5), (1.0, 0.4), (1.0, 0.6)],
                     [(0, 1, 1.0), (1, 2, 0.2), (1, 3, 0.2)],
                     [(2, 0.0), (3, 0.0)])


def test_slice_static():
    p = static_branch()
    for t in (0.0, 0.3, 1.0):
        sl = pattern_slice(p, t)
        assert sl.measure.atoms == [(0.5, 1.0)]


def test_slice_v_interpolates():
    p = v_pattern()
    sl = pattern_slice(p, 0.5)
    assert sl.measure.atoms == [(0.45, 0.5), (0.55, 0.5)]
    assert pattern_slice(p, 0.0).measure.atoms == [(0.5, 1.0)]


def test_slice_at_node_time_counts_once():
    # interior node: inbound edge ends, outbound edges start; mass stays 1
    p = make_pattern(1.0, [(0.0, 0.5), (0.5, 0.5), (1.0, 0.4), (1.0, 0.6)],
                     [(0, 1, 1.0), (1, 2, 0.5), (1, 3, 0.5)],
                     [(2, 0.0), (3, 0.0)])
    sl = pattern_slice(p, 0.5)
    assert sl.measure.atoms == [(0.5, 1.0)]
    assert len(sl.branch_ids[0]) == 2


def test_slice_out_of_range():
    with pytest.raises(TimeOutOfRange):
        pattern_slice(static_branch(), 1.5)


def test_slice_mass_one_at_random_times():
    rng = np.random.default_rng(0)
    for p in (static_branch(), v_pattern(), dirac_grid_pattern(5)):
        for t in rng.random(100):
            assert pattern_slice(p, float(t)).measure.total_mass == \
                pytest.approx(1.0, rel=1e-12)


def test_internal_energy_examples():
    assert internal_energy(static_branch(), 0.0, 1.0) == (1.0, 0.0)
    perim, ekin = internal_energy(v_pattern(), 0.0, 1.0)
    assert perim == pytest.approx(2.0, rel=1e-14)
    assert ekin == pytest.approx(0.01, rel=1e-12)
    assert internal_energy(dirac_grid_pattern(2), 0.0, 1.0) == (2.0, 0.0)


def test_internal_energy_additivity():
    p = v_pattern()
    for (a, b, c) in [(0.0, 0.3, 1.0), (0.0, 0.77, 0.9)]:
        pa, ea = internal_energy(p, a, b)
        pb, eb = internal_energy(p, b, c)
        pc, ec = internal_energy(p, a, c)
        assert pa + pb == pytest.approx(pc, rel=1e-14)
        assert ea + eb == pytest.approx(ec, rel=1e-14)


def test_internal_energy_invalid_interval():
    with pytest.raises(TimeOutOfRange):
        internal_energy(static_branch(), 0.5, 0.2)


def test_benamou_brenier_lower_bound():
    rng = np.random.default_rng(4)
    p = v_pattern()
    for _ in range(20):
        a, b = sorted(rng.random(2))
        if b - a < 1e-3:
            continue
        _, ekin = internal_energy(p, a, b)
        w2 = w2_line(pattern_slice(p, a).measure,
                     pattern_slice(p, b).measure).cost_sq
        assert ekin >= w2 / (b - a) - 1e-9


def test_full_energy_static_matches_series():
    K = 100_000
    e = full_energy(static_branch(), 0.75, "atomic", K)
    assert e.perimeter == pytest.approx(2.0)
    assert e.kinetic == 0.0
    assert e.boundary_penalty == pytest.approx(2.0 * series_truncated(1.5, K),
                                               rel=1e-10)
    assert e.total == e.perimeter + e.kinetic + e.boundary_penalty


def test_full_energy_equispaced_grid():
    n, T, s, k_base = 4, 0.25, 0.75, 25_000
    K = n * k_base
    e = full_energy(dirac_grid_pattern(n, T), s, "atomic", K)
    assert e.perimeter == pytest.approx(2 * T * n, rel=1e-12)
    oracle = 2.0 * series_truncated(2 * s, k_base) / n ** (2 * s)
    assert e.boundary_penalty == pytest.approx(oracle, rel=1e-10)


def test_full_energy_block_tiles_zero_penalty():
    n, T = 4, 0.5
    nodes, edges, tips = [], [], []
    for j in range(n):
        x = (j + 0.5) / n
        nodes += [(0.0, x), (T, x)]
        edges.append((2 * j, 2 * j + 1, 1.0 / n))
        tips.append((2 * j + 1, 1.0 / n))
    p = make_pattern(T, nodes, edges, tips)
    e = full_energy(p, 0.4, "block", 4096)
    # zero up to phase-cancellation roundoff (~1e-32)
    assert e.boundary_penalty == pytest.approx(0.0, abs=1e-20)


def test_full_energy_atomic_divergence():
    with pytest.raises(DivergentBoundaryNorm):
        full_energy(static_branch(), 0.4, "atomic", 256)


def test_boundary_measure_modes():
    p = v_pattern()
    atoms = boundary_measure(p, "atomic")
    assert atoms.atoms == [(0.4, 0.5), (0.6, 0.5)]
    m = boundary_measure(p, "mollified", mollify_eps=0.05)
    assert m.epsilon == 0.05
    with pytest.raises(InvalidMass):
        boundary_measure(p, "block")  # atomic tips carry no width


def test_subsystem_cases():
    p = v_pattern()
    whole = subsystem(p, 0)
    assert whole.n_edges == p.n_edges
    left = subsystem(p, 1)
    assert left.n_edges == 1
    assert boundary_measure(left, "atomic").atoms == [(0.4, 0.5)]
    i_left = internal_energy(left, 0.0, 1.0)
    i_right = internal_energy(subsystem(p, 2), 0.0, 1.0)
    i_full = internal_energy(p, 0.0, 1.0)
    assert i_left[0] + i_right[0] == pytest.approx(i_full[0], rel=1e-14)
    assert i_left[1] + i_right[1] == pytest.approx(i_full[1], rel=1e-13)
    with pytest.raises(NodeNotFound):
        subsystem(p, 99)


def test_induced_plan_is_optimal_for_monotone_patterns():
    p = v_pattern()
    plan = induced_plan(p, 0.2, 0.9)
    assert plan.is_monotone()
    res = w2_line(pattern_slice(p, 0.2).measure, pattern_slice(p, 0.9).measure)
    assert plan.cost_sq() == pytest.approx(res.cost_sq, rel=1e-12)


def test_validate_static_all_pass():
    report = validate(static_branch())
    assert report.all_passed
    assert report.results["equipartition"].data["residual"] == \
        pytest.approx(0.0, abs=1e-12)
    assert report.results["equipartition"].data["lambda_mean"] == \
        pytest.approx(1.0)


def test_validate_v_barycenter():
    report = validate(v_pattern())
    assert report.passed("barycenter")
    assert report.passed("cone")
    assert report.passed("no_loop")


def test_validate_crossing_fails_monotone():
    report = validate(crossing_pattern())
    assert not report.passed("monotone_coupling")
    assert "disagree" in report.results["monotone_coupling"].witness


def test_validate_off_barycenter_root():
    p = make_pattern(1.0, [(0.0, 0.9), (1.0, 0.4), (1.0, 0.6)],
                     [(0, 1, 0.5), (0, 2, 0.5)], [(1, 0.0), (2, 0.0)])
    report = validate(p)
    assert not report.passed("barycenter")


def test_golden_json_round_trip():
    golden = json.loads((DATA / "v_pattern.json").read_text())
    p = pattern_from_json(golden)
    built = v_pattern()
    assert np.array_equal(p.node_t, built.node_t)
    assert np.array_equal(p.node_x, built.node_x)
    assert np.array_equal(p.edge_mass, built.edge_mass)
    assert p.to_json() == built.to_json()
