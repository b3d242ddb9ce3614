"""Base assignment model and schedule handling.

The base MILP assigns surgeries to OR/day slots: each surgery at most
once, never before its release day, mandatorily inside the release/due
window when a due date falls in the horizon, and per-slot mean load
within capacity. The objective rewards scheduled minutes plus an
urgency bonus of 1/(q_s + 1). Overtime-risk constraints are layered on
top of this model by the fnn / plf / sbm modules.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .instance import Instance, ORDaySlot, Surgery
from .milp import LinearModel, Solution, VarRef


@dataclass
class BaseModel:
    """The generic assignment MILP plus the variable map x[(s, o, d)]."""

    instance: Instance
    model: LinearModel
    x: dict[tuple[str, str, int], VarRef]

    def slot_vars(self, slot: ORDaySlot) -> list[tuple[Surgery, VarRef]]:
        out = []
        for s in self.instance.surgeries:
            var = self.x.get((s.surgery_id, slot.or_id, slot.day))
            if var is not None:
                out.append((s, var))
        return out


def priority_weight(instance: Instance, surgery: Surgery) -> float:
    return 1.0 / (instance.due_index(surgery) + 1.0)


def build_base(instance: Instance, name: str | None = None) -> BaseModel:
    """Build the assignment model with the four generic constraint groups.

    Variables exist only for slot days at or after the surgery's release
    (release constraints by omission). Iteration order is fixed to
    (surgery, or, day) lexicographic so identical inputs always produce
    the identical matrix.
    """
    model = LinearModel(name=name or f"base[{instance.name}]")
    slots = instance.sorted_slots()
    x: dict[tuple[str, str, int], VarRef] = {}

    for s in instance.surgeries:
        for sl in slots:
            if sl.day < s.release:
                continue
            var = model.add_binary(f"x[{s.surgery_id},{sl.or_id},{sl.day}]")
            x[(s.surgery_id, sl.or_id, sl.day)] = var
            w = instance.type_of(s).sample_mean
            model.set_objective_term(var, w + priority_weight(instance, s))

    for s in instance.surgeries:
        own = [(1.0, v) for (sid, _, _), v in x.items() if sid == s.surgery_id]
        if own:
            model.add_constraint(f"assign_once[{s.surgery_id}]", own, "<=", 1.0)
        if instance.must_schedule(s):
            window = [
                (1.0, v)
                for (sid, _, d), v in x.items()
                if sid == s.surgery_id and s.release <= d <= s.due
            ]
            if not window:
                # A mandatory surgery with no admissible slot can never be
                # scheduled; fail fast with a clear message instead of
                # handing the solver a trivially infeasible row.
                raise ValueError(
                    f"surgery {s.surgery_id!r} is mandatory but has no slot in "
                    f"[{s.release}, {s.due}]"
                )
            model.add_constraint(f"due[{s.surgery_id}]", window, ">=", 1.0)

    for sl in slots:
        terms = []
        for s in instance.surgeries:
            v = x.get((s.surgery_id, sl.or_id, sl.day))
            if v is not None:
                terms.append((instance.type_of(s).sample_mean, v))
        if terms:
            model.add_constraint(
                f"mean_capacity[{sl.or_id},{sl.day}]", terms, "<=", sl.capacity
            )

    return BaseModel(instance=instance, model=model, x=x)


@dataclass
class Schedule:
    """An assignment of surgeries to slots plus derived per-slot facts."""

    method: str
    alpha: float
    assignments: list[tuple[str, str, int]]  # (surgery_id, or_id, day)
    mean_load: dict[tuple[str, int], float]
    objective: float
    solver_status: str = "optimal"
    solver_gap: float = 0.0
    solver_bound: float = 0.0
    constraint_overtime_prob: dict[tuple[str, int], float] = field(default_factory=dict)

    def assigned_to(self, slot_key: tuple[str, int]) -> list[str]:
        return [sid for sid, o, d in self.assignments if (o, d) == slot_key]

    def slot_of(self, surgery_id: str) -> tuple[str, int] | None:
        for sid, o, d in self.assignments:
            if sid == surgery_id:
                return (o, d)
        return None

    def n_scheduled(self) -> int:
        return len(self.assignments)

    def to_json(self) -> str:
        payload = {
            "method": self.method,
            "alpha": self.alpha,
            "objective": self.objective,
            "solver": {
                "status": self.solver_status,
                "gap": self.solver_gap,
                "bound": self.solver_bound,
            },
            "assignments": [
                {"surgery_id": sid, "or_id": o, "day": d}
                for sid, o, d in sorted(self.assignments)
            ],
            "slots": [
                {
                    "or_id": o,
                    "day": d,
                    "mean_load": self.mean_load[(o, d)],
                    "constraint_overtime_prob": self.constraint_overtime_prob.get((o, d)),
                }
                for (o, d) in sorted(self.mean_load)
            ],
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Schedule":
        payload = json.loads(text)
        mean_load = {}
        cop = {}
        for row in payload.get("slots", []):
            key = (row["or_id"], int(row["day"]))
            mean_load[key] = float(row["mean_load"])
            if row.get("constraint_overtime_prob") is not None:
                cop[key] = float(row["constraint_overtime_prob"])
        return cls(
            method=payload["method"],
            alpha=float(payload["alpha"]),
            assignments=[
                (r["surgery_id"], r["or_id"], int(r["day"]))
                for r in payload.get("assignments", [])
            ],
            mean_load=mean_load,
            objective=float(payload["objective"]),
            solver_status=payload.get("solver", {}).get("status", "optimal"),
            solver_gap=float(payload.get("solver", {}).get("gap", 0.0)),
            solver_bound=float(payload.get("solver", {}).get("bound", 0.0)),
            constraint_overtime_prob=cop,
        )


def extract_schedule(base: BaseModel, solution: Solution, method: str = "base") -> Schedule:
    """Read the assignment out of a solved model (x > 0.5 counts as on)."""
    inst = base.instance
    assignments = []
    for (sid, o, d), var in base.x.items():
        if solution.value(var) > 0.5:
            assignments.append((sid, o, d))
    mean_load = {}
    for sl in inst.slots:
        total = 0.0
        for sid, o, d in assignments:
            if (o, d) == sl.key:
                total += inst.get_type(_type_id_of(inst, sid)).sample_mean
        mean_load[sl.key] = total
    return Schedule(
        method=method,
        alpha=inst.alpha,
        assignments=sorted(assignments),
        mean_load=mean_load,
        objective=solution.objective,
        solver_status=solution.status,
        solver_gap=solution.gap,
        solver_bound=solution.best_bound,
    )


def _type_id_of(instance: Instance, surgery_id: str) -> str:
    for s in instance.surgeries:
        if s.surgery_id == surgery_id:
            return s.type_id
    raise KeyError(surgery_id)


def objective_of(schedule: Schedule, instance: Instance) -> tuple[float, float, float]:
    """(total, scheduled mean minutes, urgency bonus) recomputed from scratch.

    fsum keeps the components exactly rounded, so the same set of
    assignments gives the identical value no matter the order they are
    listed in.
    """
    by_id = {s.surgery_id: s for s in instance.surgeries}
    picked = [by_id[sid] for sid, _, _ in schedule.assignments]
    duration = math.fsum(instance.type_of(s).sample_mean for s in picked)
    priority = math.fsum(priority_weight(instance, s) for s in picked)
    return duration + priority, duration, priority


def utilization(schedule: Schedule, instance: Instance) -> float:
    """Scheduled mean minutes over total slot capacity."""
    total_cap = instance.total_capacity()
    _, duration, _ = objective_of(schedule, instance)
    return duration / total_cap if total_cap > 0 else 0.0


def validate(schedule: Schedule, instance: Instance, tol: float = 1e-6) -> list[str]:
    """Check a schedule against the generic constraints; returns violations."""
    problems = []
    by_id = {s.surgery_id: s for s in instance.surgeries}
    slot_keys = {sl.key for sl in instance.slots}
    seen: dict[str, int] = {}
    for sid, o, d in schedule.assignments:
        if sid not in by_id:
            problems.append(f"unknown surgery {sid!r}")
            continue
        if (o, d) not in slot_keys:
            problems.append(f"surgery {sid!r} assigned to unknown slot {(o, d)}")
            continue
        seen[sid] = seen.get(sid, 0) + 1
        s = by_id[sid]
        if d < s.release:
            problems.append(f"surgery {sid!r} scheduled on day {d} before release {s.release}")
        if s.due is not None and d > s.due:
            problems.append(f"surgery {sid!r} scheduled on day {d} after due {s.due}")
    for sid, count in seen.items():
        if count > 1:
            problems.append(f"surgery {sid!r} scheduled {count} times")
    for s in instance.surgeries:
        if instance.must_schedule(s) and s.surgery_id not in seen:
            problems.append(f"mandatory surgery {s.surgery_id!r} not scheduled")
    for sl in instance.slots:
        load = math.fsum(
            instance.type_of(by_id[sid]).sample_mean
            for sid, o, d in schedule.assignments
            if (o, d) == sl.key and sid in by_id
        )
        if load > sl.capacity + tol:
            problems.append(
                f"slot {sl.key} mean load {load:.3f} exceeds capacity {sl.capacity:.3f}"
            )
    return problems
