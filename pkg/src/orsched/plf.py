"""Piecewise-linear square-root overtime constraints.

Under the normal model the total duration in a slot is N(sum mu_s,
sum sigma2_s), so keeping overtime risk below alpha means

    sum_s X_sod mu_s  +  z_{1-alpha} * sqrt(sum_s X_sod sigma2_s)  <=  C_od.

The square root is replaced by a piecewise-linear over-approximation:
segment endpoints are placed where the chord of sqrt just touches a
maximum gap of delta, then every endpoint value is shifted up by delta.
The resulting model constraint is conservative by construction (the
approximation sits in the band [sqrt(x), sqrt(x) + delta]) and enters
the MILP through a lambda-formulation with adjacency binaries.

Breakpoint placement: equating the worst-case secant gap
(sqrt(b)-sqrt(a))^2 / (4 (sqrt(a)+sqrt(b))) to delta gives, with
t = sqrt(x), the recurrence

    t_{i+1} = t_i + 2 delta + 2 sqrt(delta^2 + 2 delta t_i)

whose closed form is t_k = 2 k (k+1) delta. The number of segments b is
the smallest count that covers x_max at delta_max; delta is then shrunk
by bisection to the smallest value still covering x_max in b segments,
which also tightens the band.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .distributions import inv_norm_cdf
from .instance import Instance
from .scheduler import BaseModel, Schedule


@dataclass(frozen=True)
class PlfConfig:
    """Approximation targets: band width and the sqrt argument range.

    x_max = n * sigma2_max bounds the total duration variance a slot can
    accumulate (n surgeries, each at most sigma2_max).
    """

    delta_max: float = 1.0
    n: int = 8
    sigma2_max: float = 54035.0

    @property
    def x_max(self) -> float:
        return self.n * self.sigma2_max


@dataclass(frozen=True)
class Breakpoints:
    xs: tuple[float, ...]
    ys: tuple[float, ...]  # sqrt(x_i) + delta
    delta: float
    x_max: float

    @property
    def n_points(self) -> int:
        return len(self.xs)

    @property
    def n_segments(self) -> int:
        return len(self.xs) - 1


def _coverage_steps(delta: float, x_max: float, max_steps: int = 100000) -> int:
    """Number of tangency segments needed to reach sqrt(x_max) at width delta."""
    target = math.sqrt(x_max)
    t = 0.0
    steps = 0
    while t < target:
        t = t + 2.0 * delta + 2.0 * math.sqrt(delta * delta + 2.0 * delta * t)
        steps += 1
        if steps > max_steps:
            raise ValueError(f"delta={delta} needs more than {max_steps} segments")
    return steps


def build_breakpoints(cfg: PlfConfig) -> Breakpoints:
    """Breakpoint table for sqrt on [0, x_max]; see the module docstring."""
    if cfg.delta_max <= 0.0:
        raise ValueError(f"delta_max must be positive, got {cfg.delta_max}")
    x_max = float(cfg.x_max)
    if x_max < 0.0:
        raise ValueError(f"x_max must be nonnegative, got {x_max}")
    if x_max == 0.0:
        return Breakpoints(xs=(0.0,), ys=(0.0,), delta=0.0, x_max=0.0)

    b = _coverage_steps(cfg.delta_max, x_max)

    def covers(delta: float) -> bool:
        target = math.sqrt(x_max)
        t = 0.0
        for _ in range(b):
            t = t + 2.0 * delta + 2.0 * math.sqrt(delta * delta + 2.0 * delta * t)
            if t >= target:
                return True
        return False

    # Smallest delta that still covers x_max in b segments. Coverage is
    # monotone increasing in delta, so plain bisection applies.
    lo, hi = 0.0, cfg.delta_max
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if mid <= 0.0:
            break
        if covers(mid):
            hi = mid
        else:
            lo = mid
    delta = hi

    ts = [0.0]
    while ts[-1] < math.sqrt(x_max):
        t = ts[-1]
        ts.append(t + 2.0 * delta + 2.0 * math.sqrt(delta * delta + 2.0 * delta * t))
    ts[-1] = math.sqrt(x_max)  # clamp the last point onto the interval end
    xs = tuple(t * t for t in ts)
    ys = tuple(t + delta for t in ts)
    return Breakpoints(xs=xs, ys=ys, delta=delta, x_max=x_max)


def approx_sqrt(bp: Breakpoints, x):
    """Evaluate the piecewise-linear approximation at x (scalar or array)."""
    arr = np.asarray(x, dtype=float)
    slack = 1e-9 * max(1.0, bp.x_max)
    if np.any(arr < -slack) or np.any(arr > bp.x_max + slack):
        raise ValueError(f"argument outside [0, {bp.x_max}]")
    arr = np.clip(arr, 0.0, bp.x_max)
    out = np.interp(arr, bp.xs, bp.ys)
    if np.ndim(x) == 0:
        return float(out)
    return out


def max_secant_gap(a: float, b: float) -> float:
    """Worst-case gap between sqrt and its chord on [a, b] (closed form)."""
    sa, sb = math.sqrt(a), math.sqrt(b)
    if sa + sb == 0.0:
        return 0.0
    return (sb - sa) ** 2 / (4.0 * (sa + sb))


def slot_sigma2_bound(instance: Instance, slot) -> float:
    """Upper bound on total variance a mean-feasible slot can hold.

    Fractional-knapsack relaxation: admit surgeries by variance-per-mean
    ratio until mean capacity runs out. Always >= the true maximum over
    feasible subsets, which is all the x_max pre-check needs.
    """
    items = []
    for s in instance.surgeries:
        if slot.day < s.release:
            continue
        t = instance.type_of(s)
        items.append((t.normal.sigma2, t.sample_mean))
    items.sort(key=lambda it: (it[0] / it[1] if it[1] > 0 else math.inf), reverse=True)
    cap = slot.capacity
    total = 0.0
    for sigma2, mean in items:
        if mean <= 0.0:
            total += sigma2
            continue
        if mean <= cap:
            total += sigma2
            cap -= mean
        else:
            total += sigma2 * (cap / mean)
            break
    return total


def plf_config_for_instance(instance: Instance, delta_max: float = 1.0) -> PlfConfig:
    """Derive (n, sigma2_max) from an instance.

    sigma2_max is the largest fitted type variance among the surgeries;
    n is the larger of (a) the most surgeries any slot can hold under
    mean capacity (greedy count with the smallest means) and (b) the
    count needed for n * sigma2_max to dominate every slot's
    fractional-knapsack variance bound, so the x_max pre-check in
    add_plf_constraints can never reject the derived configuration.
    """
    sigma2_max = 0.0
    for s in instance.surgeries:
        sigma2_max = max(sigma2_max, instance.type_of(s).normal.sigma2)
    n = 0
    for sl in instance.slots:
        means = sorted(
            instance.type_of(s).sample_mean
            for s in instance.surgeries
            if sl.day >= s.release
        )
        cap = sl.capacity
        count = 0
        for m in means:
            if m > cap:
                break
            cap -= m
            count += 1
        n = max(n, count)
    if sigma2_max > 0.0:
        worst = max(slot_sigma2_bound(instance, sl) for sl in instance.slots)
        n = max(n, int(math.ceil(worst / sigma2_max - 1e-12)))
    return PlfConfig(delta_max=delta_max, n=max(n, 1), sigma2_max=sigma2_max)


def add_plf_constraints(base: BaseModel, bp: Breakpoints, alpha: float | None = None) -> None:
    """Attach the linearized percentile constraint to every slot.

    Raises ValueError when a slot could accumulate more variance than
    the breakpoint table covers; rebuild with a larger n or sigma2_max.
    """
    inst = base.instance
    if alpha is None:
        alpha = inst.alpha
    z = inv_norm_cdf(1.0 - alpha)
    model = base.model

    for sl in inst.sorted_slots():
        bound = slot_sigma2_bound(inst, sl)
        if bound > bp.x_max * (1.0 + 1e-12) and bound > 0.0:
            raise ValueError(
                f"slot {sl.key} can accumulate variance {bound:.1f} beyond the "
                f"breakpoint range {bp.x_max:.1f}; rebuild the table with a "
                f"larger n or sigma2_max"
            )

    for sl in inst.sorted_slots():
        pairs = base.slot_vars(sl)
        o, d = sl.key
        lams = [
            model.add_continuous(f"lam[{o},{d},{i}]", 0.0, 1.0) for i in range(bp.n_points)
        ]
        model.add_constraint(
            f"plf_lambda_sum[{o},{d}]", [(1.0, v) for v in lams], "==", 1.0
        )
        link = [(bp.xs[i], lams[i]) for i in range(bp.n_points)]
        link += [(-inst.type_of(s).normal.sigma2, v) for s, v in pairs]
        model.add_constraint(f"plf_link[{o},{d}]", link, "==", 0.0)

        overtime = [(inst.type_of(s).normal.mu, v) for s, v in pairs]
        overtime += [(z * bp.ys[i], lams[i]) for i in range(bp.n_points)]
        model.add_constraint(f"plf_overtime[{o},{d}]", overtime, "<=", sl.capacity)

        # Adjacency (SOS2): lambda support must sit on one segment,
        # otherwise the solver could mix distant breakpoints and land
        # below the curve. One binary per segment.
        if bp.n_segments >= 2:
            us = [
                model.add_binary(f"u[{o},{d},{j}]") for j in range(bp.n_segments)
            ]
            model.add_constraint(
                f"plf_segment_pick[{o},{d}]", [(1.0, u) for u in us], "==", 1.0
            )
            for i, lam in enumerate(lams):
                allowed = []
                if i > 0:
                    allowed.append(us[i - 1])
                if i < bp.n_segments:
                    allowed.append(us[i])
                model.add_constraint(
                    f"plf_adjacency[{o},{d},{i}]",
                    [(1.0, lam)] + [(-1.0, u) for u in allowed],
                    "<=",
                    0.0,
                )


def constraint_overtime_prob(schedule: Schedule, instance: Instance) -> dict[tuple[str, int], float]:
    """Normal-model overtime probability per slot at a fixed assignment."""
    by_id = {s.surgery_id: s for s in instance.surgeries}
    out = {}
    for sl in instance.slots:
        ids = schedule.assigned_to(sl.key)
        if not ids:
            out[sl.key] = 0.0
            continue
        mu = sum(instance.type_of(by_id[sid]).normal.mu for sid in ids)
        var = sum(instance.type_of(by_id[sid]).normal.sigma2 for sid in ids)
        if var <= 0.0:
            out[sl.key] = 0.0 if mu <= sl.capacity else 1.0
        else:
            out[sl.key] = float(1.0 - special.ndtr((sl.capacity - mu) / math.sqrt(var)))
    return out
