"""Schedule evaluation: simulation, cross-method checks, capacity cases.

Simulation redraws every scheduled surgery's duration and counts how
often each slot's total exceeds its capacity. Draws come either from
the raw observation pools (empirical bootstrap) or from the fitted
lognormals; each slot consumes its own child of the master seed, so
per-slot results do not depend on what else is on the schedule.

cross_feasible answers "would method M accept this fixed assignment?"
for any schedule, enabling the three-way cross-comparison of methods.
evaluate_overtime_case asks whether a method would have allowed a
historical OR day: all case surgeries released on day 0 of a one-day,
one-OR horizon; allowed means the solver schedules every one of them.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .distributions import inv_norm_cdf, moments_from_lognormal
from .instance import Instance, ORDaySlot, Surgery, SurgeryType
from .milp import solve
from .scheduler import Schedule, build_base, extract_schedule

FEAS_TOL = 1e-6


@dataclass
class SimulationReport:
    draws: int
    seed: int
    source: str
    threshold: float
    per_slot: dict[tuple[str, int], dict] = field(default_factory=dict)

    @property
    def average_prob(self) -> float:
        probs = [
            row["overtime_prob"] for row in self.per_slot.values() if row["n_surgeries"] > 0
        ]
        return float(np.mean(probs)) if probs else 0.0

    @property
    def n_excessive(self) -> int:
        return sum(
            1
            for row in self.per_slot.values()
            if row["n_surgeries"] > 0 and row["overtime_prob"] > self.threshold
        )

    def to_json(self) -> str:
        payload = {
            "draws": self.draws,
            "seed": self.seed,
            "source": self.source,
            "threshold": self.threshold,
            "average_overtime_prob": self.average_prob,
            "n_excessive_slots": self.n_excessive,
            "slots": [
                {
                    "or_id": o,
                    "day": d,
                    **{k: v for k, v in self.per_slot[(o, d)].items()},
                }
                for (o, d) in sorted(self.per_slot)
            ],
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    def csv_rows(self):
        header = ["or_id", "day", "capacity", "n_surgeries", "mean_load", "overtime_prob"]
        rows = [header]
        for (o, d) in sorted(self.per_slot):
            row = self.per_slot[(o, d)]
            rows.append(
                [
                    o,
                    d,
                    repr(row["capacity"]),
                    row["n_surgeries"],
                    repr(row["mean_load"]),
                    repr(row["overtime_prob"]),
                ]
            )
        return rows


def _resolve_source(instance: Instance, schedule: Schedule, source: str | None) -> str:
    scheduled_types = {
        instance.get_type(next(s.type_id for s in instance.surgeries if s.surgery_id == sid))
        for sid, _, _ in schedule.assignments
    }
    have_pools = all(len(t.duration_pool) > 0 for t in scheduled_types)
    if source is None:
        return "empirical-pool" if have_pools else "lognormal"
    if source == "empirical-pool" and not have_pools:
        missing = sorted(t.type_id for t in scheduled_types if not t.duration_pool)
        raise ValueError(f"empirical source requested but types lack pools: {missing}")
    if source not in ("empirical-pool", "lognormal"):
        raise ValueError(f"unknown simulation source {source!r}")
    return source


def simulate(
    schedule: Schedule,
    instance: Instance,
    draws: int = 10000,
    seed: int = 0,
    source: str | None = None,
    threshold: float = 0.15,
) -> SimulationReport:
    """Monte-Carlo overtime probability per slot at a fixed schedule."""
    if draws <= 0:
        raise ValueError(f"draws must be positive, got {draws}")
    resolved = _resolve_source(instance, schedule, source)
    by_id = {s.surgery_id: s for s in instance.surgeries}
    report = SimulationReport(draws=draws, seed=seed, source=resolved, threshold=threshold)

    slots = sorted(instance.slots, key=lambda sl: (sl.or_id, sl.day))
    children = np.random.SeedSequence(seed).spawn(len(slots))
    for sl, child in zip(slots, children):
        ids = schedule.assigned_to(sl.key)
        mean_load = schedule.mean_load.get(sl.key, 0.0)
        if not ids:
            report.per_slot[sl.key] = {
                "capacity": sl.capacity,
                "n_surgeries": 0,
                "mean_load": mean_load,
                "overtime_prob": 0.0,
            }
            continue
        rng = np.random.default_rng(child)
        totals = np.zeros(draws)
        for sid in ids:
            t = instance.type_of(by_id[sid])
            if resolved == "empirical-pool":
                pool = np.asarray(t.duration_pool, dtype=float)
                totals += rng.choice(pool, size=draws, replace=True)
            else:
                ln = t.lognormal
                totals += np.exp(ln.mu + math.sqrt(ln.sigma2) * rng.standard_normal(draws))
        prob = float(np.mean(totals > sl.capacity))
        report.per_slot[sl.key] = {
            "capacity": sl.capacity,
            "n_surgeries": len(ids),
            "mean_load": mean_load,
            "overtime_prob": prob,
        }
    return report


def cross_feasible(
    schedule: Schedule,
    instance: Instance,
    method: str,
    net=None,
    breakpoints=None,
    scenarios=None,
    alpha: float | None = None,
    tol: float = FEAS_TOL,
) -> dict[tuple[str, int], bool]:
    """Per-slot verdict: does `method`'s overtime constraint accept the
    fixed assignment? The shared mean-capacity rows are not re-tested
    here; validate() covers those.
    """
    if alpha is None:
        alpha = schedule.alpha if schedule.alpha else instance.alpha
    by_id = {s.surgery_id: s for s in instance.surgeries}
    out = {}
    if method == "fnn":
        if net is None:
            raise ValueError("fnn cross-feasibility needs a trained net")
        from .fnn import forward

        for sl in instance.slots:
            ids = schedule.assigned_to(sl.key)
            e = v = 0.0
            for sid in ids:
                m = moments_from_lognormal(instance.type_of(by_id[sid]).lognormal)
                e += m.mean
                v += m.variance
            out[sl.key] = bool(forward(net, e, v) <= sl.capacity + tol)
    elif method == "plf":
        if breakpoints is None:
            raise ValueError("plf cross-feasibility needs a breakpoint table")
        from .plf import approx_sqrt

        z = inv_norm_cdf(1.0 - alpha)
        for sl in instance.slots:
            ids = schedule.assigned_to(sl.key)
            mu = sum(instance.type_of(by_id[sid]).normal.mu for sid in ids)
            var = sum(instance.type_of(by_id[sid]).normal.sigma2 for sid in ids)
            if var > breakpoints.x_max * (1.0 + 1e-12):
                # outside the approximation's range: the model could not
                # have certified this slot
                out[sl.key] = False
                continue
            out[sl.key] = bool(mu + z * approx_sqrt(breakpoints, var) <= sl.capacity + tol)
    elif method == "sbm":
        if scenarios is None:
            raise ValueError("sbm cross-feasibility needs a scenario set")
        from .sbm import violated_counts, violation_budget

        counts = violated_counts(schedule, scenarios, instance, tol=tol)
        budget = violation_budget(alpha, scenarios.n_scenarios)
        for sl in instance.slots:
            out[sl.key] = counts[sl.key] <= budget
    else:
        raise ValueError(f"unknown method {method!r}")
    return out


@dataclass(frozen=True)
class OvertimeCase:
    """A historical OR day: which surgeries ran, what capacity, and
    (optionally) the realized total duration in minutes."""

    case_id: str
    type_ids: tuple[str, ...]
    capacity: float = 510.0
    realized_total: float | None = None

    def __post_init__(self):
        if len(self.type_ids) < 2:
            raise ValueError(f"case {self.case_id!r}: need at least two surgeries")
        if self.capacity <= 0:
            raise ValueError(f"case {self.case_id!r}: capacity must be positive")


@dataclass
class CaseVerdict:
    case_id: str
    method: str
    allowed: bool
    n_scheduled: int
    n_case: int
    realized_overtime: bool | None = None


def case_instance(case: OvertimeCase, types: dict[str, SurgeryType], alpha: float) -> Instance:
    """One-OR, one-day instance holding exactly the case's surgeries."""
    missing = [tid for tid in case.type_ids if tid not in types]
    if missing:
        raise ValueError(f"case {case.case_id!r} references unknown types {missing}")
    used = []
    seen = set()
    for tid in case.type_ids:
        if tid not in seen:
            used.append(types[tid])
            seen.add(tid)
    surgeries = [
        Surgery(surgery_id=f"{case.case_id}#{i}", type_id=tid, release=0, due=None)
        for i, tid in enumerate(case.type_ids)
    ]
    slots = [ORDaySlot(or_id="OR1", day=0, capacity=case.capacity)]
    return Instance(
        types=used, surgeries=surgeries, slots=slots, alpha=alpha, name=f"case-{case.case_id}"
    )


def evaluate_overtime_case(
    case: OvertimeCase,
    types: dict[str, SurgeryType],
    method: str,
    alpha: float = 0.15,
    net=None,
    delta_max: float = 1.0,
    n_scenarios: int = 100,
    scenario_seed: int = 0,
    time_limit: float | None = 30.0,
) -> CaseVerdict:
    """Would `method` have allowed this day's surgery list?

    Builds the one-slot instance, adds the method's overtime machinery
    and solves; "allowed" means every case surgery gets scheduled. Mean
    durations above capacity make a surgery unschedulable, so such
    cases come back not-allowed rather than erroring.
    """
    inst = case_instance(case, types, alpha)
    base = build_base(inst)
    if method == "fnn":
        if net is None:
            raise ValueError("fnn case evaluation needs a trained net")
        from .fnn import embed

        embed(net, base)
    elif method == "plf":
        from .plf import add_plf_constraints, build_breakpoints, plf_config_for_instance

        bp = build_breakpoints(plf_config_for_instance(inst, delta_max=delta_max))
        add_plf_constraints(base, bp)
    elif method == "sbm":
        from .sbm import add_sbm_constraints, compute_big_m, sample_scenarios

        sset = sample_scenarios(inst, n_scenarios, seed=scenario_seed)
        bigm = compute_big_m(inst, sset, time_limit=time_limit or 10.0)
        add_sbm_constraints(base, sset, bigm)
    else:
        raise ValueError(f"unknown method {method!r}")
    sol = solve(base.model, time_limit=time_limit)
    sched = extract_schedule(base, sol, method=method)
    n_case = len(case.type_ids)
    realized = None
    if case.realized_total is not None:
        realized = bool(case.realized_total > case.capacity)
    return CaseVerdict(
        case_id=case.case_id,
        method=method,
        allowed=sched.n_scheduled() == n_case,
        n_scheduled=sched.n_scheduled(),
        n_case=n_case,
        realized_overtime=realized,
    )


def generate_cases(
    instance: Instance,
    count: int,
    seed: int,
    capacity: float = 510.0,
    min_size: int = 2,
    max_size: int = 5,
) -> list[OvertimeCase]:
    """Synthetic historical days drawn from an instance's types.

    Realized totals are one bootstrap draw per surgery from the type's
    observation pool (fitted lognormal when no pool is stored).
    """
    if count <= 0:
        raise ValueError("count must be positive")
    rng = np.random.default_rng(seed)
    type_ids = [t.type_id for t in instance.types]
    cases = []
    width = len(str(count))
    for i in range(count):
        size = int(rng.integers(min_size, max_size + 1))
        chosen = rng.choice(len(type_ids), size=size, replace=True)
        total = 0.0
        for idx in chosen:
            t = instance.types[int(idx)]
            if t.duration_pool:
                total += float(rng.choice(np.asarray(t.duration_pool)))
            else:
                ln = t.lognormal
                total += float(np.exp(ln.mu + math.sqrt(ln.sigma2) * rng.standard_normal()))
        cases.append(
            OvertimeCase(
                case_id=f"case{i + 1:0{width}d}",
                type_ids=tuple(type_ids[int(j)] for j in sorted(chosen)),
                capacity=capacity,
                realized_total=total,
            )
        )
    return cases


def cases_to_json(cases: list[OvertimeCase]) -> str:
    return json.dumps(
        [
            {
                "case_id": c.case_id,
                "type_ids": list(c.type_ids),
                "capacity": c.capacity,
                "realized_total": c.realized_total,
            }
            for c in cases
        ],
        indent=2,
        sort_keys=True,
    )


def cases_from_json(text: str) -> list[OvertimeCase]:
    rows = json.loads(text)
    cases = []
    for i, row in enumerate(rows):
        cases.append(
            OvertimeCase(
                case_id=str(row.get("case_id", f"case{i + 1}")),
                type_ids=tuple(row["type_ids"]),
                capacity=float(row.get("capacity", 510.0)),
                realized_total=(
                    float(row["realized_total"])
                    if row.get("realized_total") is not None
                    else None
                ),
            )
        )
    return cases
