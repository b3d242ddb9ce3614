from __future__ import annotations

import itertools
import math

import numpy as np
import pytest

from orsched.instance import Instance, ORDaySlot, Surgery
from orsched.milp import solve
from orsched.sbm import (
    BigMTable,
    ScenarioSet,
    add_sbm_constraints,
    compute_big_m,
    constraint_overtime_prob,
    elbow_scan,
    kmedoids_reduce,
    sample_scenarios,
    scenarios_from_csv,
    scenarios_to_csv,
    violated_counts,
    violation_budget,
)
from orsched.scheduler import build_base, extract_schedule
from orsched.distributions import moments_from_lognormal
from tests.test_instance import make_type


def two_surgery_instance(capacity=250.0):
    types = [make_type("T1", 100.0, 400.0), make_type("T2", 200.0, 900.0)]
    surgeries = [Surgery("S1", "T1", 0, None), Surgery("S2", "T2", 0, None)]
    slots = [ORDaySlot("OR1", 0, capacity)]
    return Instance(types=types, surgeries=surgeries, slots=slots, alpha=0.15)


def test_sample_scenarios_shape_and_determinism():
    inst = two_surgery_instance()
    a = sample_scenarios(inst, 50, seed=9)
    b = sample_scenarios(inst, 50, seed=9)
    assert a.durations.shape == (50, 2)
    assert np.array_equal(a.durations, b.durations)
    assert a.surgery_ids == ("S1", "S2")
    c = sample_scenarios(inst, 50, seed=10)
    assert not np.array_equal(a.durations, c.durations)
    assert np.all(a.durations > 0.0)


def test_sample_scenarios_mean_converges():
    inst = two_surgery_instance()
    sset = sample_scenarios(inst, 100000, seed=3)
    for s in inst.surgeries:
        expected = moments_from_lognormal(inst.type_of(s).lognormal).mean
        got = float(sset.column(s.surgery_id).mean())
        assert got == pytest.approx(expected, rel=0.01)


def test_scenario_csv_round_trip(tmp_path):
    inst = two_surgery_instance()
    sset = sample_scenarios(inst, 12, seed=1)
    path = tmp_path / "scen.csv"
    scenarios_to_csv(sset, path)
    back = scenarios_from_csv(path)
    assert back.surgery_ids == sset.surgery_ids
    assert np.array_equal(back.durations, sset.durations)
    # writing again is byte-identical (repr floats round-trip)
    path2 = tmp_path / "scen2.csv"
    scenarios_to_csv(back, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_kmedoids_identity_when_k_large():
    inst = two_surgery_instance()
    sset = sample_scenarios(inst, 8, seed=0)
    red = kmedoids_reduce(sset, 8)
    assert np.array_equal(red.durations, sset.durations)
    red2 = kmedoids_reduce(sset, 20)
    assert np.array_equal(red2.durations, sset.durations)


def test_kmedoids_finds_separated_clusters():
    rng = np.random.default_rng(4)
    c1 = rng.normal(100.0, 1.0, size=(10, 3))
    c2 = rng.normal(500.0, 1.0, size=(10, 3))
    c3 = rng.normal(900.0, 1.0, size=(8, 3))
    x = np.vstack([c1, c2, c3])
    sset = ScenarioSet(surgery_ids=("A", "B", "C"), durations=x)
    red = kmedoids_reduce(sset, 3)
    levels = sorted(red.durations.mean(axis=1))
    assert levels[0] == pytest.approx(100.0, abs=5.0)
    assert levels[1] == pytest.approx(500.0, abs=5.0)
    assert levels[2] == pytest.approx(900.0, abs=5.0)
    # medoids are actual scenarios from the input
    for row in red.durations:
        assert any(np.array_equal(row, orig) for orig in x)
    assert red.source == "reduced-from:28"


def test_kmedoids_matches_bruteforce_on_tiny_set():
    rng = np.random.default_rng(11)
    x = rng.uniform(0.0, 100.0, size=(7, 2))
    sset = ScenarioSet(surgery_ids=("A", "B"), durations=x)
    red = kmedoids_reduce(sset, 2)

    def total_dist(medoid_idx):
        d = np.sqrt(((x[:, None, :] - x[None, medoid_idx, :]) ** 2).sum(axis=2))
        return float(d.min(axis=1).sum())

    best = min(total_dist(list(pair)) for pair in itertools.combinations(range(7), 2))
    got_idx = [
        next(i for i in range(7) if np.array_equal(x[i], row)) for row in red.durations
    ]
    assert total_dist(got_idx) == pytest.approx(best, rel=1e-12)


def test_kmedoids_deterministic():
    inst = two_surgery_instance()
    sset = sample_scenarios(inst, 40, seed=2)
    a = kmedoids_reduce(sset, 5)
    b = kmedoids_reduce(sset, 5)
    assert np.array_equal(a.durations, b.durations)


def test_big_m_frozen_example():
    # means 100/200 with capacity 250: both surgeries together violate
    # mean capacity, so the slot's max scenario load is max(120, 210).
    inst = two_surgery_instance(capacity=250.0)
    sset = ScenarioSet(
        surgery_ids=("S1", "S2"), durations=np.array([[120.0, 210.0]])
    )
    table = compute_big_m(inst, sset)
    assert table.q[("OR1", 0, 0)] == pytest.approx(210.0)
    assert table.m[("OR1", 0, 0)] == pytest.approx(-40.0)
    assert table.n_solves == 1


def test_big_m_respects_due_coupling():
    # A is mandatory on day 0, so the day-1 slot can never hold it; its
    # big-M auxiliary problem must see that through the due constraint.
    types = [make_type("T1", 200.0, 100.0)]
    surgeries = [Surgery("A", "T1", 0, 0), Surgery("B", "T1", 0, None)]
    slots = [ORDaySlot("OR1", 0, 250.0), ORDaySlot("OR1", 1, 250.0)]
    inst = Instance(types=types, surgeries=surgeries, slots=slots)
    sset = ScenarioSet(
        surgery_ids=("A", "B"), durations=np.array([[230.0, 190.0]])
    )
    table = compute_big_m(inst, sset)
    assert table.q[("OR1", 1, 0)] == pytest.approx(190.0)  # only B
    assert table.q[("OR1", 0, 0)] == pytest.approx(230.0)  # A shows up here


def test_equal_capacity_skip_rule():
    types = [make_type("T1", 100.0, 400.0)]
    surgeries = [Surgery("S1", "T1", 0, None), Surgery("S2", "T1", 0, None)]
    slots_eq = [ORDaySlot("OR1", 0, 510.0), ORDaySlot("OR2", 0, 510.0)]
    inst_eq = Instance(types=types, surgeries=surgeries, slots=slots_eq)
    sset = sample_scenarios(inst_eq, 6, seed=0)
    table = compute_big_m(inst_eq, sset)
    assert table.n_solves == 6
    assert table.n_skipped == 6
    # same day, different capacities: no skipping possible
    slots_ne = [ORDaySlot("OR1", 0, 510.0), ORDaySlot("OR2", 0, 480.0)]
    inst_ne = Instance(types=types, surgeries=surgeries, slots=slots_ne)
    sset2 = sample_scenarios(inst_ne, 6, seed=0)
    table2 = compute_big_m(inst_ne, sset2)
    assert table2.n_solves == 12
    assert table2.n_skipped == 0
    # equal-capacity entries are identical per scenario
    for l in range(6):
        assert table.m[("OR1", 0, l)] == table.m[("OR2", 0, l)]


def test_nonpositive_big_m_scenarios_add_no_rows():
    inst = two_surgery_instance(capacity=250.0)
    sset = ScenarioSet(
        surgery_ids=("S1", "S2"),
        durations=np.array([[120.0, 210.0], [140.0, 300.0]]),
    )
    table = compute_big_m(inst, sset)
    base = build_base(inst)
    n_before = len(base.model.constraints)
    add_sbm_constraints(base, sset, table)
    names = [c.name for c in base.model.constraints[n_before:]]
    # scenario 0 can never be violated (M=-40): no row, no indicator
    assert not any("sbm_capacity[OR1,0,0]" == n for n in names)
    assert any("sbm_capacity[OR1,0,1]" == n for n in names)


def test_violation_budget_floor():
    assert violation_budget(0.15, 20) == 3
    assert violation_budget(0.15, 10) == 1
    assert violation_budget(0.15, 7) == 1
    assert violation_budget(0.10, 9) == 0
    assert violation_budget(0.15, 210) == 31


def test_solved_schedule_respects_scenario_budget():
    types = [
        make_type("T1", 150.0, 2500.0),
        make_type("T2", 120.0, 1600.0),
        make_type("T3", 180.0, 3600.0),
    ]
    surgeries = [
        Surgery("S1", "T1", 0, None),
        Surgery("S2", "T2", 0, None),
        Surgery("S3", "T3", 0, None),
        Surgery("S4", "T1", 0, None),
        Surgery("S5", "T2", 0, None),
    ]
    slots = [ORDaySlot("OR1", 0, 510.0), ORDaySlot("OR1", 1, 510.0)]
    inst = Instance(types=types, surgeries=surgeries, slots=slots, alpha=0.3)
    sset = sample_scenarios(inst, 10, seed=21)
    table = compute_big_m(inst, sset)
    base = build_base(inst)
    add_sbm_constraints(base, sset, table)
    sol = solve(base.model)
    sched = extract_schedule(base, sol, method="sbm")
    counts = violated_counts(sched, sset, inst)
    budget = violation_budget(inst.alpha, 10)
    for key, count in counts.items():
        assert count <= budget
    probs = constraint_overtime_prob(sched, sset, inst)
    for key in counts:
        assert probs[key] == counts[key] / 10.0


def test_elbow_flat_curve_picks_smallest():
    # deterministic durations: every scenario is identical, the curve is
    # flat and the first window already qualifies
    types = [make_type("T1", 170.0, 0.0)]
    surgeries = [Surgery(f"S{i}", "T1", 0, None) for i in range(4)]
    slots = [ORDaySlot("OR1", 0, 510.0)]
    inst = Instance(types=types, surgeries=surgeries, slots=slots)
    res = elbow_scan(inst, sizes=[2, 3, 4, 5], seed=0, master_count=30)
    assert res.chosen == 2
    objs = [v for _, v in res.curve]
    assert max(objs) - min(objs) < 1e-9
