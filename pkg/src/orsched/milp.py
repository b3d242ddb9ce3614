"""Thin MILP modeling layer over scipy's HiGHS backend.

One deliberately small abstraction: models are built as lists of linear
constraints over indexed variables, solved through scipy.optimize.milp,
and every returned solution is re-checked against the original rows at
1e-6 absolute before anyone downstream sees it. Also knows how to dump
a model in LP format for debugging with external solvers.
"""

from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, sparse


class SolverError(RuntimeError):
    """Backend failure or a solution that fails the independent re-check."""


class InfeasibleError(SolverError):
    """Model proven infeasible."""


@dataclass(frozen=True)
class VarRef:
    index: int
    name: str
    kind: str  # "binary" or "continuous"
    lo: float
    hi: float


@dataclass(frozen=True)
class Constraint:
    name: str
    terms: tuple[tuple[float, int], ...]  # (coefficient, variable index)
    sense: str  # "<=", ">=", "=="
    rhs: float


@dataclass
class LinearModel:
    name: str = "model"
    variables: list[VarRef] = field(default_factory=list)
    constraints: list[Constraint] = field(default_factory=list)
    objective: dict[int, float] = field(default_factory=dict)
    maximize: bool = True

    def add_binary(self, name: str) -> VarRef:
        v = VarRef(index=len(self.variables), name=name, kind="binary", lo=0.0, hi=1.0)
        self.variables.append(v)
        return v

    def add_continuous(self, name: str, lo: float = 0.0, hi: float = math.inf) -> VarRef:
        if lo > hi:
            raise ValueError(f"variable {name!r}: lower bound {lo} exceeds upper bound {hi}")
        v = VarRef(index=len(self.variables), name=name, kind="continuous", lo=lo, hi=hi)
        self.variables.append(v)
        return v

    def add_constraint(self, name, terms, sense, rhs) -> None:
        if sense not in ("<=", ">=", "=="):
            raise ValueError(f"unknown sense {sense!r}")
        packed = tuple((float(c), v.index if isinstance(v, VarRef) else int(v)) for c, v in terms)
        self.constraints.append(Constraint(name=name, terms=packed, sense=sense, rhs=float(rhs)))

    def set_objective_term(self, var: VarRef, coefficient: float) -> None:
        self.objective[var.index] = self.objective.get(var.index, 0.0) + float(coefficient)

    def n_binaries(self) -> int:
        return sum(1 for v in self.variables if v.kind == "binary")


@dataclass
class Solution:
    status: str  # "optimal" | "feasible-at-limit"
    objective: float
    values: np.ndarray
    best_bound: float
    gap: float
    message: str = ""

    def value(self, var: VarRef) -> float:
        return float(self.values[var.index])


def constraint_activity(constraint: Constraint, values) -> float:
    return math.fsum(c * values[j] for c, j in constraint.terms)


def check_solution(model: LinearModel, values, tol: float = 1e-6) -> list[str]:
    """Independent feasibility re-check; returns humane violation messages."""
    violations = []
    for v in model.variables:
        x = values[v.index]
        if x < v.lo - tol or x > v.hi + tol:
            violations.append(f"variable {v.name}={x} outside [{v.lo}, {v.hi}]")
    for con in model.constraints:
        act = constraint_activity(con, values)
        if con.sense == "<=" and act > con.rhs + tol:
            violations.append(f"{con.name}: activity {act} > rhs {con.rhs}")
        elif con.sense == ">=" and act < con.rhs - tol:
            violations.append(f"{con.name}: activity {act} < rhs {con.rhs}")
        elif con.sense == "==" and abs(act - con.rhs) > tol:
            violations.append(f"{con.name}: activity {act} != rhs {con.rhs}")
    return violations


def solve(
    model: LinearModel,
    time_limit: float | None = None,
    rel_gap: float = 0.0,
    check_tol: float = 1e-6,
    heuristic_effort: float = 0.2,
) -> Solution:
    """Solve a model with HiGHS; raises InfeasibleError / SolverError.

    Returned binary values are rounded to exact 0/1 when within 1e-6;
    the feasibility re-check runs on the raw solver values first.
    heuristic_effort raises HiGHS's primal-heuristic share above its
    0.05 default; without it the big-M network models routinely hit
    time limits with no incumbent at all.
    """
    n = len(model.variables)
    if n == 0:
        return Solution(status="optimal", objective=0.0, values=np.zeros(0), best_bound=0.0, gap=0.0)

    sign = -1.0 if model.maximize else 1.0
    c = np.zeros(n)
    for j, coef in model.objective.items():
        c[j] = sign * coef

    integrality = np.array([1 if v.kind == "binary" else 0 for v in model.variables])
    lb = np.array([v.lo for v in model.variables])
    ub = np.array([v.hi for v in model.variables])

    constraints = []
    if model.constraints:
        rows, cols, data = [], [], []
        b_l = np.empty(len(model.constraints))
        b_u = np.empty(len(model.constraints))
        for i, con in enumerate(model.constraints):
            for coef, j in con.terms:
                rows.append(i)
                cols.append(j)
                data.append(coef)
            if con.sense == "<=":
                b_l[i], b_u[i] = -np.inf, con.rhs
            elif con.sense == ">=":
                b_l[i], b_u[i] = con.rhs, np.inf
            else:
                b_l[i], b_u[i] = con.rhs, con.rhs
        a = sparse.csc_matrix((data, (rows, cols)), shape=(len(model.constraints), n))
        constraints.append(optimize.LinearConstraint(a, b_l, b_u))

    options = {
        "presolve": True,
        "disp": False,
        "mip_rel_gap": float(rel_gap),
        "mip_heuristic_effort": float(heuristic_effort),
    }
    if time_limit is not None:
        options["time_limit"] = float(time_limit)

    with warnings.catch_warnings():
        # scipy flags pass-through HiGHS options; they are intentional
        warnings.filterwarnings("ignore", message="Unrecognized options")
        res = optimize.milp(
            c=c,
            integrality=integrality,
            bounds=optimize.Bounds(lb, ub),
            constraints=constraints,
            options=options,
        )

    if res.status == 2:
        raise InfeasibleError(f"{model.name}: model is infeasible")
    if res.status == 3:
        raise SolverError(f"{model.name}: model is unbounded")
    if res.x is None:
        raise SolverError(
            f"{model.name}: no feasible solution available (status {res.status}: {res.message})"
        )

    raw = np.asarray(res.x, dtype=float)
    violations = check_solution(model, raw, tol=check_tol)
    if violations:
        raise SolverError(
            f"{model.name}: solver solution failed feasibility re-check: "
            + "; ".join(violations[:5])
        )

    values = raw.copy()
    for v in model.variables:
        if v.kind == "binary":
            r = round(values[v.index])
            if abs(values[v.index] - r) <= 1e-6:
                values[v.index] = float(r)

    objective = math.fsum(coef * values[j] for j, coef in model.objective.items())
    bound = getattr(res, "mip_dual_bound", None)
    if bound is None or not math.isfinite(bound):
        # Pure LP relaxations carry no MIP bound; the solve itself proved
        # optimality, so the bound collapses onto the objective.
        bound = objective
    elif model.maximize:
        bound = -bound
    if objective != 0.0:
        gap = abs(bound - objective) / abs(objective)
    else:
        gap = 0.0 if bound == objective else math.inf

    status = "optimal" if res.status == 0 else "feasible-at-limit"
    return Solution(
        status=status,
        objective=objective,
        values=values,
        best_bound=bound,
        gap=gap,
        message=str(res.message),
    )


def _lp_name(name: str, index: int) -> str:
    safe = re.sub(r"[^A-Za-z0-9_]", "_", name)
    if not safe or not safe[0].isalpha():
        safe = f"v{index}_{safe}"
    return safe


def write_lp(model: LinearModel, path) -> None:
    """Write the model in CPLEX LP format."""
    names = [_lp_name(v.name, v.index) for v in model.variables]
    lines = [f"\\ {model.name}"]
    lines.append("Maximize" if model.maximize else "Minimize")
    terms = " ".join(
        f"{'+' if coef >= 0 else '-'} {abs(coef):.12g} {names[j]}"
        for j, coef in sorted(model.objective.items())
    )
    lines.append(f" obj: {terms if terms else '0 ' + (names[0] if names else 'x')}")
    lines.append("Subject To")
    sense_map = {"<=": "<=", ">=": ">=", "==": "="}
    for i, con in enumerate(model.constraints):
        body = " ".join(
            f"{'+' if coef >= 0 else '-'} {abs(coef):.12g} {names[j]}" for coef, j in con.terms
        )
        lines.append(f" c{i}_{_lp_name(con.name, i)}: {body} {sense_map[con.sense]} {con.rhs:.12g}")
    lines.append("Bounds")
    for v in model.variables:
        if v.kind == "continuous":
            hi = "+inf" if math.isinf(v.hi) else f"{v.hi:.12g}"
            lines.append(f" {v.lo:.12g} <= {names[v.index]} <= {hi}")
    binaries = [names[v.index] for v in model.variables if v.kind == "binary"]
    if binaries:
        lines.append("Binaries")
        for i in range(0, len(binaries), 8):
            lines.append(" " + " ".join(binaries[i : i + 8]))
    lines.append("End")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
