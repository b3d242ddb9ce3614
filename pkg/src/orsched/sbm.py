"""Scenario-based chance constraints.

Duration uncertainty is represented by a finite set of scenarios (one
duration per surgery per scenario, sampled from the fitted lognormals
and optionally thinned by k-medoids clustering). A slot may exceed its
capacity in at most floor(alpha * L) of the L scenarios; per-scenario
indicator binaries relax the capacity row via big-M coefficients that
are themselves optimized: M = Q - C where Q maximizes the slot's load
in that scenario subject to the generic assignment constraints.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .instance import Instance
from .milp import SolverError, solve
from .scheduler import BaseModel, Schedule, build_base


@dataclass(frozen=True)
class ScenarioSet:
    surgery_ids: tuple[str, ...]
    durations: np.ndarray  # shape (n_scenarios, n_surgeries)
    seed: int | None = None
    source: str = "raw"

    def __post_init__(self):
        if self.durations.ndim != 2 or self.durations.shape[1] != len(self.surgery_ids):
            raise ValueError("durations must be (n_scenarios, n_surgeries)")

    @property
    def n_scenarios(self) -> int:
        return int(self.durations.shape[0])

    def column(self, surgery_id: str) -> np.ndarray:
        return self.durations[:, self.surgery_ids.index(surgery_id)]


def sample_scenarios(instance: Instance, count: int, seed: int) -> ScenarioSet:
    """Draw duration scenarios from each surgery's fitted lognormal."""
    if count <= 0:
        raise ValueError(f"scenario count must be positive, got {count}")
    rng = np.random.default_rng(seed)
    cols = []
    for s in instance.surgeries:
        ln = instance.type_of(s).lognormal
        cols.append(np.exp(ln.mu + math.sqrt(ln.sigma2) * rng.standard_normal(count)))
    durations = np.column_stack(cols) if cols else np.zeros((count, 0))
    return ScenarioSet(
        surgery_ids=tuple(s.surgery_id for s in instance.surgeries),
        durations=durations,
        seed=seed,
        source="raw",
    )


def scenarios_to_csv(sset: ScenarioSet, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(sset.surgery_ids)
        for row in sset.durations:
            w.writerow([repr(float(v)) for v in row])


def scenarios_from_csv(path) -> ScenarioSet:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise ValueError(f"{path}: empty scenario file")
        rows = [[float(v) for v in row] for row in reader if row]
    return ScenarioSet(
        surgery_ids=tuple(header),
        durations=np.array(rows, dtype=float) if rows else np.zeros((0, len(header))),
        seed=None,
        source="file",
    )


def _distance_matrix(x: np.ndarray) -> np.ndarray:
    gram = x @ x.T
    sq = np.diag(gram)
    d2 = sq[:, None] + sq[None, :] - 2.0 * gram
    np.clip(d2, 0.0, None, out=d2)
    return np.sqrt(d2)


def kmedoids_reduce(sset: ScenarioSet, k: int, seed: int = 0) -> ScenarioSet:
    """Thin a scenario set to k representative scenarios (PAM).

    Classic BUILD + SWAP partitioning around medoids with Euclidean
    distance on the duration vectors. The algorithm is deterministic
    (greedy BUILD start, first-index tie breaks), so `seed` has no
    effect; it is accepted for interface symmetry with the samplers.
    Medoids are returned as rows of the original matrix, in original
    order.
    """
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    n = sset.n_scenarios
    if k >= n:
        return ScenarioSet(
            surgery_ids=sset.surgery_ids,
            durations=sset.durations.copy(),
            seed=sset.seed,
            source=sset.source,
        )

    d = _distance_matrix(sset.durations)

    # BUILD: first medoid minimizes total distance, each next one
    # maximizes the drop in total nearest-medoid distance.
    medoids = [int(np.argmin(d.sum(axis=1)))]
    nearest = d[:, medoids[0]].copy()
    while len(medoids) < k:
        gains = np.maximum(nearest[:, None] - d, 0.0).sum(axis=0)
        gains[medoids] = -1.0
        new = int(np.argmax(gains))
        medoids.append(new)
        np.minimum(nearest, d[:, new], out=nearest)

    # SWAP: try replacing medoid j by candidate c; accept the best
    # strictly-improving swap until none is left.
    medoids = sorted(medoids)
    for _ in range(200):
        med_arr = np.array(medoids)
        dm = d[:, med_arr]  # (n, k)
        order = np.argsort(dm, kind="stable", axis=1)
        d1 = dm[np.arange(n), order[:, 0]]
        n1 = order[:, 0]
        d2 = dm[np.arange(n), order[:, 1]] if k > 1 else np.full(n, np.inf)

        best = (0.0, None, None)
        in_med = np.zeros(n, dtype=bool)
        in_med[med_arr] = True
        for c in range(n):
            if in_med[c]:
                continue
            dc = d[:, c]
            b = np.minimum(dc - d1, 0.0)
            a = np.minimum(d2, dc) - d1
            base = float(b.sum())
            per_j = base + np.bincount(n1, weights=a - b, minlength=k)
            j = int(np.argmin(per_j))
            delta = float(per_j[j])
            if delta < best[0] - 1e-12:
                best = (delta, j, c)
        if best[1] is None:
            break
        medoids[best[1]] = best[2]
        medoids = sorted(medoids)

    return ScenarioSet(
        surgery_ids=sset.surgery_ids,
        durations=sset.durations[medoids].copy(),
        seed=sset.seed,
        source=f"reduced-from:{n}",
    )


@dataclass
class BigMTable:
    """Optimized big-M values per (or_id, day, scenario index).

    q[key] is the maximum load the slot can take in that scenario under
    the generic constraints; m[key] = q - capacity. n_solves / n_skipped
    record how often the auxiliary ILP actually ran vs. was skipped by
    the equal-capacity rule.
    """

    q: dict[tuple[str, int, int], float] = field(default_factory=dict)
    m: dict[tuple[str, int, int], float] = field(default_factory=dict)
    n_solves: int = 0
    n_skipped: int = 0


def compute_big_m(
    instance: Instance, sset: ScenarioSet, time_limit: float = 10.0
) -> BigMTable:
    """Per-slot, per-scenario big-M by auxiliary ILPs.

    Within a day, ORs are processed in order of capacity; when the
    capacity repeats, the previous OR's value is copied instead of
    re-solving (the auxiliary ILP depends on the slot only through its
    day and capacity). Every solve must prove optimality within the
    time limit, otherwise the big-M would be unsafe and we raise.
    """
    if set(sset.surgery_ids) != {s.surgery_id for s in instance.surgeries}:
        raise ValueError("scenario set does not cover the instance's surgeries")
    aux = build_base(instance, name=f"bigm[{instance.name}]")
    table = BigMTable()
    by_day: dict[int, list] = {}
    for sl in instance.slots:
        by_day.setdefault(sl.day, []).append(sl)
    col = {sid: i for i, sid in enumerate(sset.surgery_ids)}

    for l in range(sset.n_scenarios):
        w = sset.durations[l]
        for day in sorted(by_day):
            prev_cap = None
            prev_q = None
            for sl in sorted(by_day[day], key=lambda s: (s.capacity, s.or_id)):
                if prev_cap is not None and sl.capacity == prev_cap:
                    q = prev_q
                    table.n_skipped += 1
                else:
                    objective = {}
                    for s in instance.surgeries:
                        var = aux.x.get((s.surgery_id, sl.or_id, sl.day))
                        if var is not None:
                            objective[var.index] = float(w[col[s.surgery_id]])
                    aux.model.objective = objective
                    sol = solve(aux.model, time_limit=time_limit)
                    if sol.status != "optimal":
                        raise SolverError(
                            f"big-M auxiliary ILP for slot {sl.key}, scenario {l} "
                            f"did not prove optimality within {time_limit}s"
                        )
                    q = sol.objective
                    table.n_solves += 1
                    prev_cap, prev_q = sl.capacity, q
                table.q[(sl.or_id, sl.day, l)] = q
                table.m[(sl.or_id, sl.day, l)] = q - sl.capacity
    return table


def violation_budget(alpha: float, n_scenarios: int) -> int:
    return int(math.floor(alpha * n_scenarios + 1e-9))


def add_sbm_constraints(
    base: BaseModel,
    sset: ScenarioSet,
    bigm: BigMTable,
    alpha: float | None = None,
) -> None:
    """Attach scenario capacity rows and the per-slot violation budget.

    Scenarios whose big-M is nonpositive can never be violated by a
    feasible assignment (the maximum possible load already fits) and
    contribute neither a row nor an indicator.
    """
    inst = base.instance
    if alpha is None:
        alpha = inst.alpha
    model = base.model
    col = {sid: i for i, sid in enumerate(sset.surgery_ids)}
    budget = violation_budget(alpha, sset.n_scenarios)

    for sl in inst.sorted_slots():
        o, d = sl.key
        pairs = base.slot_vars(sl)
        indicators = []
        for l in range(sset.n_scenarios):
            key = (o, d, l)
            if key not in bigm.m:
                raise ValueError(f"big-M table has no entry for slot {sl.key}, scenario {l}")
            m_val = bigm.m[key]
            if m_val <= 0.0:
                continue
            y = model.add_binary(f"y[{o},{d},{l}]")
            indicators.append(y)
            terms = [
                (float(sset.durations[l][col[s.surgery_id]]), v) for s, v in pairs
            ]
            terms.append((-m_val, y))
            model.add_constraint(f"sbm_capacity[{o},{d},{l}]", terms, "<=", sl.capacity)
        if indicators:
            model.add_constraint(
                f"sbm_budget[{o},{d}]",
                [(1.0, y) for y in indicators],
                "<=",
                float(budget),
            )


def violated_counts(
    schedule: Schedule, sset: ScenarioSet, instance: Instance, tol: float = 1e-6
) -> dict[tuple[str, int], int]:
    """Per-slot count of scenarios whose realized load exceeds capacity."""
    col = {sid: i for i, sid in enumerate(sset.surgery_ids)}
    out = {}
    for sl in instance.slots:
        ids = schedule.assigned_to(sl.key)
        if not ids:
            out[sl.key] = 0
            continue
        idx = [col[sid] for sid in ids]
        loads = sset.durations[:, idx].sum(axis=1)
        out[sl.key] = int(np.sum(loads > sl.capacity + tol))
    return out


def constraint_overtime_prob(
    schedule: Schedule, sset: ScenarioSet, instance: Instance
) -> dict[tuple[str, int], float]:
    """Fraction of scenarios violating each slot at a fixed assignment."""
    counts = violated_counts(schedule, sset, instance)
    n = max(sset.n_scenarios, 1)
    return {key: c / n for key, c in counts.items()}


@dataclass
class ElbowResult:
    curve: list[tuple[int, float]]
    chosen: int
    master_count: int


def elbow_scan(
    instance: Instance,
    sizes,
    seed: int,
    master_count: int = 2000,
    time_limit: float | None = None,
    bigm_time_limit: float = 10.0,
) -> ElbowResult:
    """Objective value as a function of the reduced scenario count.

    A master set of `master_count` raw scenarios is thinned to each size
    in turn; the full scenario model is solved and its objective
    recorded. The chosen size is the first whose 3-point window has
    both successive relative changes below 1% (a flat curve therefore
    selects the smallest size); without such a window the largest size
    is returned.
    """
    sizes = sorted(set(int(s) for s in sizes))
    if not sizes:
        raise ValueError("no sizes to scan")
    master = sample_scenarios(instance, master_count, seed)
    curve = []
    for size in sizes:
        reduced = kmedoids_reduce(master, size)
        bigm = compute_big_m(instance, reduced, time_limit=bigm_time_limit)
        base = build_base(instance)
        add_sbm_constraints(base, reduced, bigm)
        sol = solve(base.model, time_limit=time_limit)
        curve.append((size, sol.objective))

    chosen = sizes[-1]
    for i in range(len(curve) - 2):
        ok = True
        for a, b in ((i, i + 1), (i + 1, i + 2)):
            va, vb = curve[a][1], curve[b][1]
            denom = abs(va) if va != 0.0 else 1.0
            if abs(vb - va) / denom >= 0.01:
                ok = False
                break
        if ok:
            chosen = curve[i][0]
            break
    return ElbowResult(curve=curve, chosen=chosen, master_count=master_count)
