from __future__ import annotations

import json
import math

import numpy as np
import pytest

from orsched.distributions import lognormal_from_moments, lognormal_percentile
from orsched.evaluate import (
    CaseVerdict,
    OvertimeCase,
    case_instance,
    cases_from_json,
    cases_to_json,
    cross_feasible,
    evaluate_overtime_case,
    generate_cases,
    simulate,
)
from orsched.fnn import FeedForwardNet
from orsched.instance import Instance, ORDaySlot, Surgery, SurgeryType
from orsched.milp import solve
from orsched.plf import add_plf_constraints, build_breakpoints, plf_config_for_instance
from orsched.sbm import add_sbm_constraints, compute_big_m, sample_scenarios
from orsched.scheduler import Schedule, build_base, extract_schedule
from tests.test_instance import make_type


def pooled_type(tid, mean, sd, n=40, seed=0):
    rng = np.random.default_rng(seed)
    ln = lognormal_from_moments(mean, sd * sd)
    pool = np.exp(ln.mu + math.sqrt(ln.sigma2) * rng.standard_normal(n))
    pool = mean + (pool - pool.mean()) * (sd / pool.std())
    pool = np.clip(pool, 1.0, 700.0)
    return make_type(tid, pool=list(pool))


def sim_instance():
    types = [pooled_type("T1", 150.0, 30.0, seed=1), pooled_type("T2", 200.0, 50.0, seed=2)]
    surgeries = [
        Surgery("S1", "T1", 0, None),
        Surgery("S2", "T2", 0, None),
        Surgery("S3", "T1", 0, None),
    ]
    slots = [ORDaySlot("OR1", 0, 510.0), ORDaySlot("OR2", 0, 510.0)]
    return Instance(types=types, surgeries=surgeries, slots=slots, alpha=0.15)


def schedule_for(inst, assignments):
    mean_load = {sl.key: 0.0 for sl in inst.slots}
    by_id = {s.surgery_id: s for s in inst.surgeries}
    for sid, o, d in assignments:
        mean_load[(o, d)] += inst.type_of(by_id[sid]).sample_mean
    return Schedule(
        method="manual",
        alpha=inst.alpha,
        assignments=list(assignments),
        mean_load=mean_load,
        objective=0.0,
    )


def test_simulate_deterministic_and_sourced():
    inst = sim_instance()
    sched = schedule_for(inst, [("S1", "OR1", 0), ("S2", "OR1", 0), ("S3", "OR2", 0)])
    a = simulate(sched, inst, draws=2000, seed=5)
    b = simulate(sched, inst, draws=2000, seed=5)
    assert a.source == "empirical-pool"
    assert a.per_slot == b.per_slot
    c = simulate(sched, inst, draws=2000, seed=7)
    assert a.per_slot != c.per_slot
    d = simulate(sched, inst, draws=2000, seed=5, source="lognormal")
    assert d.source == "lognormal"


def test_simulate_empty_slot_and_average():
    inst = sim_instance()
    sched = schedule_for(inst, [("S1", "OR1", 0), ("S2", "OR1", 0)])
    rep = simulate(sched, inst, draws=1000, seed=0, threshold=0.0)
    assert rep.per_slot[("OR2", 0)]["overtime_prob"] == 0.0
    assert rep.per_slot[("OR2", 0)]["n_surgeries"] == 0
    # average over nonempty slots only
    assert rep.average_prob == rep.per_slot[("OR1", 0)]["overtime_prob"]
    # threshold 0: the loaded slot counts as excessive iff its prob > 0
    loaded_prob = rep.per_slot[("OR1", 0)]["overtime_prob"]
    assert rep.n_excessive == (1 if loaded_prob > 0 else 0)


def test_simulate_slot_results_do_not_depend_on_other_slots():
    inst = sim_instance()
    full = schedule_for(inst, [("S1", "OR1", 0), ("S2", "OR2", 0)])
    partial = schedule_for(inst, [("S1", "OR1", 0)])
    a = simulate(full, inst, draws=3000, seed=9)
    b = simulate(partial, inst, draws=3000, seed=9)
    assert a.per_slot[("OR1", 0)] == b.per_slot[("OR1", 0)]


def test_simulate_calibrated_at_exact_percentile():
    mean, var = 300.0, 4000.0
    ln = lognormal_from_moments(mean, var)
    cap = lognormal_percentile(ln, 0.85)
    t = make_type("T1", mean, var)
    t = SurgeryType(t.type_id, t.sample_mean, t.normal, ln, 40, ())
    inst = Instance(
        types=[t],
        surgeries=[Surgery("S1", "T1", 0, None)],
        slots=[ORDaySlot("OR1", 0, cap)],
        alpha=0.15,
    )
    sched = schedule_for(inst, [("S1", "OR1", 0)])
    rep = simulate(sched, inst, draws=10000, seed=42, source="lognormal")
    assert rep.per_slot[("OR1", 0)]["overtime_prob"] == pytest.approx(0.15, abs=0.01)


def test_simulate_missing_pool_rejected():
    t = make_type("T1", 100.0, 400.0)  # no pool
    inst = Instance(
        types=[t],
        surgeries=[Surgery("S1", "T1", 0, None)],
        slots=[ORDaySlot("OR1", 0, 510.0)],
    )
    sched = schedule_for(inst, [("S1", "OR1", 0)])
    with pytest.raises(ValueError, match="lack pools"):
        simulate(sched, inst, draws=100, seed=0, source="empirical-pool")
    rep = simulate(sched, inst, draws=100, seed=0)  # auto-falls back
    assert rep.source == "lognormal"


def test_report_json_and_csv():
    inst = sim_instance()
    sched = schedule_for(inst, [("S1", "OR1", 0)])
    rep = simulate(sched, inst, draws=500, seed=1)
    payload = json.loads(rep.to_json())
    assert payload["draws"] == 500
    assert len(payload["slots"]) == 2
    rows = rep.csv_rows()
    assert rows[0][0] == "or_id"
    assert len(rows) == 3


def linear_net(w_e=1.0, w_v=0.0, bias=0.0):
    """ReLU net computing relu(w_e * E + w_v * V + bias)."""
    return FeedForwardNet(
        weights=[np.eye(2), np.array([[w_e, w_v]])],
        biases=[np.zeros(2), np.array([bias])],
        alpha=0.15,
    )


def test_cross_feasible_fnn():
    inst = sim_instance()
    sched = schedule_for(inst, [("S1", "OR1", 0), ("S2", "OR1", 0)])
    # net output = E: accepts while total lognormal mean <= capacity
    net = linear_net(1.0, 0.0, 0.0)
    verdict = cross_feasible(sched, inst, "fnn", net=net)
    assert verdict[("OR1", 0)] is True  # ~350 < 510
    tight = linear_net(2.0, 0.0, 0.0)
    verdict2 = cross_feasible(sched, inst, "fnn", net=tight)
    assert verdict2[("OR1", 0)] is False
    assert verdict2[("OR2", 0)] is True  # empty slot: prediction at zero load


def test_cross_feasible_plf_self_consistency():
    inst = sim_instance()
    base = build_base(inst)
    bp = build_breakpoints(plf_config_for_instance(inst))
    add_plf_constraints(base, bp)
    sched = extract_schedule(base, solve(base.model), method="plf")
    verdict = cross_feasible(sched, inst, "plf", breakpoints=bp)
    assert all(verdict.values())


def test_cross_feasible_plf_out_of_range_is_rejected():
    inst = sim_instance()
    sched = schedule_for(inst, [("S1", "OR1", 0), ("S2", "OR1", 0), ("S3", "OR1", 0)])
    from orsched.plf import PlfConfig

    bp = build_breakpoints(PlfConfig(delta_max=1.0, n=1, sigma2_max=100.0))
    verdict = cross_feasible(sched, inst, "plf", breakpoints=bp)
    assert verdict[("OR1", 0)] is False


def test_cross_feasible_sbm_self_consistency():
    inst = sim_instance()
    sset = sample_scenarios(inst, 20, seed=7)
    bigm = compute_big_m(inst, sset)
    base = build_base(inst)
    add_sbm_constraints(base, sset, bigm)
    sched = extract_schedule(base, solve(base.model), method="sbm")
    verdict = cross_feasible(sched, inst, "sbm", scenarios=sset)
    assert all(verdict.values())


def test_case_instance_shape():
    types = {t.type_id: t for t in sim_instance().types}
    case = OvertimeCase("c1", ("T1", "T1", "T2"), capacity=400.0)
    inst = case_instance(case, types, alpha=0.15)
    assert len(inst.surgeries) == 3
    assert len(inst.slots) == 1
    assert inst.slots[0].capacity == 400.0
    # undated surgeries on a one-day horizon get due index 1
    assert inst.due_index(inst.surgeries[0]) == 1
    with pytest.raises(ValueError, match="at least two"):
        OvertimeCase("bad", ("T1",))


def test_evaluate_case_plf_allows_and_rejects():
    types = {
        "SMALL": make_type("SMALL", 100.0, 100.0),
        "HUGE": make_type("HUGE", 400.0, 10000.0),
    }
    ok = OvertimeCase("ok", ("SMALL", "SMALL"), capacity=510.0)
    verdict = evaluate_overtime_case(ok, types, "plf")
    assert verdict.allowed and verdict.n_scheduled == 2
    over = OvertimeCase("over", ("HUGE", "HUGE", "HUGE"), capacity=510.0)
    verdict2 = evaluate_overtime_case(over, types, "plf")
    assert not verdict2.allowed
    assert verdict2.n_scheduled < 3


def test_evaluate_case_fnn_and_sbm():
    types = {"A": make_type("A", 120.0, 900.0), "B": make_type("B", 150.0, 1600.0)}
    case = OvertimeCase("c", ("A", "B"), capacity=510.0, realized_total=540.0)
    net = linear_net(1.0, 0.0, 0.0)
    v_fnn = evaluate_overtime_case(case, types, "fnn", net=net)
    assert v_fnn.allowed  # E ~ 272 <= 510
    assert v_fnn.realized_overtime is True
    v_sbm = evaluate_overtime_case(case, types, "sbm", n_scenarios=30, scenario_seed=1)
    assert isinstance(v_sbm, CaseVerdict)
    assert v_sbm.n_case == 2


def test_rejection_is_monotone_under_added_surgeries():
    # for the deterministic methods, growing a rejected case can never
    # turn it into an allowed one
    types = {"A": make_type("A", 200.0, 2500.0), "B": make_type("B", 160.0, 1600.0)}
    net = linear_net(1.0, 0.005, 0.0)
    rng = np.random.default_rng(3)
    for _ in range(10):
        size = int(rng.integers(2, 5))
        ids = tuple(rng.choice(["A", "B"], size=size))
        case = OvertimeCase("m", ids, capacity=450.0)
        bigger = OvertimeCase("m2", ids + (str(rng.choice(["A", "B"])),), capacity=450.0)
        for method, kw in (("plf", {}), ("fnn", {"net": net})):
            small_allowed = evaluate_overtime_case(case, types, method, **kw).allowed
            big_allowed = evaluate_overtime_case(bigger, types, method, **kw).allowed
            if not small_allowed:
                assert not big_allowed


def test_generate_cases_and_json_round_trip():
    inst = sim_instance()
    cases = generate_cases(inst, 6, seed=4, capacity=510.0)
    assert len(cases) == 6
    assert all(len(c.type_ids) >= 2 for c in cases)
    assert all(c.realized_total is not None for c in cases)
    again = generate_cases(inst, 6, seed=4, capacity=510.0)
    assert cases == again
    text = cases_to_json(cases)
    back = cases_from_json(text)
    assert back == cases
