"""Networks of coupled subsystems.

A coupling (i, j) adds a vector field W_ij(x_i, x_j) to subsystem j's
dynamics.  The worst-case drift contribution of all couplings entering j
is the scalar delta_j; its sign decides which of the two inequality
systems (R1 shrinks the buffer, R2 grows it) converts j's standalone
index into one that remains valid inside the network.  Joint-grid
verification re-checks the final indices against the fully coupled
dynamics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exprs import Expression, Literal, compile_expression, free_variables, _add, _mul
from .oracle import EmptyRegionError, OracleSettings, grid_minimize, sup_h
from .resilience import (
    DEFAULT_TAU_MAX,
    Infeasible,
    ResilienceIndex,
    VerificationReport,
)
from .subsystem import ModelError, Subsystem, _is_structural_zero

GUARANTEED = "GuaranteedFeasible"
UNKNOWN = "Unknown"


class DimensionMismatchError(ModelError):
    """Coupling vector length does not match the target's state dimension."""


@dataclass
class Network:
    subsystems: tuple[Subsystem, ...]
    couplings: dict[tuple[int, int], tuple[Expression, ...]] = field(default_factory=dict)

    def __post_init__(self):
        names = [s.name for s in self.subsystems]
        if len(set(names)) != len(names):
            raise ModelError("subsystem names must be unique")
        seen_states: set[str] = set()
        for s in self.subsystems:
            overlap = seen_states & set(s.state_vars)
            if overlap:
                raise ModelError(f"state variables {sorted(overlap)} appear in "
                                 f"more than one subsystem")
            seen_states |= set(s.state_vars)
        for s in self.subsystems:
            clash = seen_states & set(s.input_vars)
            if clash:
                raise ModelError(f"{s.name}: input names {sorted(clash)} collide "
                                 f"with state variables")
        n = len(self.subsystems)
        for (i, j), w in self.couplings.items():
            if not (0 <= i < n and 0 <= j < n):
                raise ModelError(f"coupling ({i}, {j}) references unknown subsystems")
            if i == j:
                raise ModelError(f"coupling ({i}, {j}) may not be a self-loop")
            target = self.subsystems[j]
            if len(w) != target.n_states:
                raise DimensionMismatchError(
                    f"coupling ({i}, {j}) has {len(w)} components; "
                    f"{target.name} has {target.n_states} states")
            allowed = set(self.subsystems[i].state_vars) | set(target.state_vars)
            for e in w:
                extra = free_variables(e) - allowed
                if extra:
                    raise ModelError(f"coupling ({i}, {j}) uses variables "
                                     f"{sorted(extra)} outside both endpoints")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.subsystems)

    def index_of(self, name: str) -> int:
        for k, s in enumerate(self.subsystems):
            if s.name == name:
                return k
        raise KeyError(f"no subsystem named {name!r}")

    def incoming(self, j: int) -> list[tuple[int, tuple[Expression, ...]]]:
        return sorted((i, w) for (i, t), w in self.couplings.items() if t == j)


@dataclass(frozen=True)
class DeltaEstimate:
    subsystem: int
    value: float
    method: str  # 'exact_joint' or 'pairwise_sum'
    arg: tuple = ()


@dataclass(frozen=True)
class Feasibility:
    verdict: str  # GuaranteedFeasible or Unknown
    which: str    # 'R1' or 'R2'
    threshold: float
    delta: float


@dataclass(frozen=True)
class ScanPolicy:
    grid_points: int = 1000

    def __post_init__(self):
        if self.grid_points < 1:
            raise ValueError("grid_points must be positive")


# -- joint grids over several subsystems' state boxes ------------------------

class _JointGrid:
    """Axes for the needed variables of a participant set, with every other
    variable frozen at its box midpoint; safety predicates per participant."""

    def __init__(self, net: Network, participants: list[int], needed: frozenset[str]):
        self.axis_names: list[str] = []
        self.axes: list[tuple[float, float]] = []
        self.slots: dict[str, object] = {}
        for p in participants:
            s = net.subsystems[p]
            for name, (lo, hi) in zip(s.state_vars, s.state_box):
                if name in needed:
                    self.slots[name] = len(self.axes)
                    self.axis_names.append(name)
                    self.axes.append((lo, hi))
                else:
                    self.slots[name] = 0.5 * (lo + hi)
        self.participants = participants
        self.net = net

    def bind(self, name: str, bindings):
        slot = self.slots[name]
        return bindings[slot] if isinstance(slot, int) else slot

    def caller(self, expr: Expression):
        """Compile expr and return a closure over shaped bindings."""
        names = tuple(sorted(free_variables(expr)))
        fn = compile_expression(expr, names)
        return lambda b: fn(*(self.bind(n, b) for n in names))

    def h_of(self, p: int):
        s = self.net.subsystems[p]
        fn = s.compiled.h
        sv = s.state_vars
        return lambda b: fn(*(self.bind(n, b) for n in sv))

    def predicate(self, tol: float, j: int | None = None, kind: str = "safe",
                  d: float = 0.0):
        """All participants stay in their safety sets; participant j may use
        a band or buffer region instead."""
        h_fns = [(p, self.h_of(p)) for p in self.participants]

        def pred(bindings):
            out = None
            for p, fn in h_fns:
                h = fn(bindings)
                if p == j and kind == "buffer":
                    cond = h >= d - tol
                elif p == j and kind == "band":
                    cond = (h >= -tol) & (h <= d - tol)
                else:
                    cond = h >= -tol
                out = cond if out is None else (out & cond)
            return out

        return pred

    def witness(self, arg) -> tuple:
        return tuple(zip(self.axis_names, arg))


def _coupling_drift_expr(net: Network, j: int) -> Expression:
    """Symbolic grad h_j . sum of incoming couplings, with zero terms folded."""
    target = net.subsystems[j]
    grad = target.compiled.grad_exprs
    total: Expression = Literal(0.0)
    for _, w in net.incoming(j):
        for comp in range(target.n_states):
            total = _add(total, _mul(grad[comp], w[comp]))
    return total


def _needed_vars(net: Network, participants, exprs) -> frozenset[str]:
    needed: set[str] = set()
    for e in exprs:
        needed |= free_variables(e)
    for p in participants:
        needed |= free_variables(net.subsystems[p].h)
    return frozenset(needed)


def compute_delta_exact(net: Network, j: int, settings: OracleSettings | None = None
                        ) -> DeltaEstimate:
    """Minimize grad h_j . sum_i W_ij over the joint product of the
    participating safety sets.  Independent of the buffer depth d."""
    settings = settings or OracleSettings()
    inc = net.incoming(j)
    if not inc:
        return DeltaEstimate(j, 0.0, "exact_joint", ())
    obj = _coupling_drift_expr(net, j)
    participants = sorted({j} | {i for i, _ in inc})
    grid = _JointGrid(net, participants, _needed_vars(net, participants, [obj]))
    value, arg = grid_minimize(grid.caller(obj), grid.axes,
                               grid.predicate(settings.margin_tolerance), settings)
    return DeltaEstimate(j, value, "exact_joint", grid.witness(arg))


def compute_delta_pairwise(net: Network, j: int, settings: OracleSettings | None = None
                           ) -> DeltaEstimate:
    """Sum over sources i of the per-pair minimum of grad h_j . W_ij.

    Each term relaxes the shared x_j to its own minimizer, so the sum
    underapproximates the joint minimum."""
    settings = settings or OracleSettings()
    inc = net.incoming(j)
    if not inc:
        return DeltaEstimate(j, 0.0, "pairwise_sum", ())
    target = net.subsystems[j]
    grad = target.compiled.grad_exprs
    total = 0.0
    witnesses = []
    for i, w in inc:
        obj: Expression = Literal(0.0)
        for comp in range(target.n_states):
            obj = _add(obj, _mul(grad[comp], w[comp]))
        participants = [i, j]
        grid = _JointGrid(net, participants, _needed_vars(net, participants, [obj]))
        value, arg = grid_minimize(grid.caller(obj), grid.axes,
                                   grid.predicate(settings.margin_tolerance), settings)
        total += value
        witnesses.append(grid.witness(arg))
    return DeltaEstimate(j, total, "pairwise_sum", tuple(witnesses))


# -- the R1 / R2 inequality systems ------------------------------------------

def _check_rsys_args(idx: ResilienceIndex, z: float, sup: float):
    if z <= 0:
        raise ValueError("z must be positive")
    if sup < idx.d:
        raise ValueError(f"sup_h = {sup:.6g} is below the index depth d = {idx.d:.6g}")


def solve_r1(idx: ResilienceIndex, delta: float, z: float, sup: float,
             tau_max: float = DEFAULT_TAU_MAX,
             policy: ScanPolicy | None = None) -> ResilienceIndex | Infeasible:
    """Shrink the buffer: scan d' from d down to 0 and return the first depth
    whose induced bounds are consistent.  tau' and eta' sit at their upper
    bounds, phi' at its lower bound."""
    _check_rsys_args(idx, z, sup)
    policy = policy or ScanPolicy()
    d, tau, phi, eta = idx.as_tuple()
    denom = d + phi * delta
    if denom <= 0:
        return Infeasible(
            f"d + phi*delta = {denom:.6g} <= 0; no buffer shrink can absorb the coupling",
            {"delta": delta, "denom": denom})
    a = d / tau - delta
    for dp in np.linspace(d, 0.0, policy.grid_points):
        dp = float(dp)
        if a > 0:
            if dp <= 0:
                continue
            taup = min(tau_max, dp / a)
        else:
            taup = tau_max
        phip = phi if dp == 0 else phi * dp / denom
        etap = delta + min(d / phi, eta + z * (d - dp))
        if etap < 0:
            continue
        return ResilienceIndex(dp, taup, phip, etap)
    return Infeasible("no depth in [0, d] satisfies the shrink inequalities",
                      {"delta": delta, "eta_bound_at_0": delta + min(d / phi, eta + z * d)})


def solve_r2(idx: ResilienceIndex, delta: float, z: float, sup: float,
             tau_max: float = DEFAULT_TAU_MAX,
             policy: ScanPolicy | None = None) -> ResilienceIndex | Infeasible:
    """Grow the buffer: scan d' from d up to sup and return the first depth
    whose induced bounds are consistent.  The recovery-rate bound is
    independent of d'; when it is not strictly positive no finite phi' exists."""
    _check_rsys_args(idx, z, sup)
    policy = policy or ScanPolicy()
    d, tau, phi, eta = idx.as_tuple()
    rhs = delta + min(d / phi, eta - z * (sup - d))
    if rhs <= 0:
        return Infeasible(
            f"recovery-rate bound {rhs:.6g} <= 0; no finite recovery deadline exists",
            {"delta": delta, "rhs": rhs})
    a = d / tau - delta
    grid = np.linspace(d, sup, policy.grid_points) if sup > d else np.array([d])
    for dp in grid:
        dp = float(dp)
        if dp <= 0:
            continue
        taup = tau_max if a <= 0 else min(tau_max, dp / a)
        phip = dp / rhs
        etap = delta + eta + z * (dp - d)
        if etap < 0:
            continue
        return ResilienceIndex(dp, taup, phip, etap)
    return Infeasible("no depth in [d, sup_h] satisfies the grow inequalities",
                      {"delta": delta, "rhs": rhs})


def feasibility_r1(idx: ResilienceIndex, delta: float, z: float) -> Feasibility:
    """Sufficient threshold for the shrink system: delta >= max{-d/phi, -eta - z d}."""
    if z <= 0:
        raise ValueError("z must be positive")
    threshold = max(-idx.d / idx.phi, -idx.eta - z * idx.d)
    verdict = GUARANTEED if delta >= threshold else UNKNOWN
    return Feasibility(verdict, "R1", threshold, delta)


def feasibility_r2(idx: ResilienceIndex, delta: float, z: float, sup: float) -> Feasibility:
    """Sufficient threshold for the grow system: delta must strictly exceed
    max{-d/phi, -eta + z(sup - d)} so a finite recovery deadline exists."""
    _check_rsys_args(idx, z, sup)
    threshold = max(-idx.d / idx.phi, -idx.eta + z * (sup - idx.d))
    verdict = GUARANTEED if delta > threshold else UNKNOWN
    return Feasibility(verdict, "R2", threshold, delta)


def improve_by_interconnection(idx: ResilienceIndex, delta: float, z: float
                               ) -> ResilienceIndex:
    """Canonical shrink-system solution for a helpful coupling (delta >= 0):
    same depth and offline budget, tighter recovery deadline, larger margin."""
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    if z <= 0:
        raise ValueError("z must be positive")
    d, tau, phi, eta = idx.as_tuple()
    if d == 0:
        out = ResilienceIndex(d, tau, phi, delta + min(0.0, eta))
    else:
        out = ResilienceIndex(d, tau, phi * d / (d + phi * delta),
                              delta + min(d / phi, eta))
    _assert_r1_rows(idx, out, delta, z)
    if out.phi > phi:
        raise AssertionError("construction must not relax the recovery deadline")
    return out


def _assert_r1_rows(old: ResilienceIndex, new: ResilienceIndex, delta: float,
                    z: float, tol: float = 1e-12):
    d, tau, phi, eta = old.as_tuple()
    if not (-tol <= new.d <= d + tol):
        raise AssertionError("depth row violated")
    if -new.d / new.tau > -d / tau + delta + tol:
        raise AssertionError("offline-budget row violated")
    denom = d + phi * delta
    if denom > 0 and new.phi < phi * new.d / denom - tol:
        raise AssertionError("recovery row violated")
    if new.eta > delta + min(d / phi, eta + z * (d - new.d)) + tol:
        raise AssertionError("margin row violated")


# -- propagation and joint verification ---------------------------------------

@dataclass(frozen=True)
class PropagationOutcome:
    index: ResilienceIndex | None
    feasibility: Feasibility
    system: str | None  # which inequality system produced the index
    delta: DeltaEstimate
    infeasible: Infeasible | None = None

    @property
    def ok(self) -> bool:
        return self.index is not None


def propagate_indices(net: Network, indices: dict[int, ResilienceIndex], z: float,
                      tau_max: float = DEFAULT_TAU_MAX,
                      settings: OracleSettings | None = None,
                      delta_method: str = "pairwise",
                      prefer: str = "r1",
                      policy: ScanPolicy | None = None
                      ) -> dict[int, PropagationOutcome]:
    """Convert standalone indices into network-valid ones, one subsystem at a
    time.  Guaranteed-feasible dispatch is tried first; otherwise both systems
    are attempted and the verdict stays Unknown even on success."""
    settings = settings or OracleSettings()
    if delta_method not in ("pairwise", "exact"):
        raise ValueError("delta_method must be 'pairwise' or 'exact'")
    if prefer not in ("r1", "r2"):
        raise ValueError("prefer must be 'r1' or 'r2'")
    out: dict[int, PropagationOutcome] = {}
    for j in range(len(net.subsystems)):
        if j not in indices:
            raise ValueError(f"missing index for subsystem {net.subsystems[j].name!r}")
        idx = indices[j]
        if delta_method == "exact":
            dest = compute_delta_exact(net, j, settings)
        else:
            dest = compute_delta_pairwise(net, j, settings)
        if not net.incoming(j):
            # No coupling enters j: the standalone certificate stays valid as is.
            feas = feasibility_r1(idx, 0.0, z)
            out[j] = PropagationOutcome(idx, feas, "R1", dest)
            continue
        sup = sup_h(net.subsystems[j], settings)
        if idx.d > sup:
            feas = feasibility_r1(idx, dest.value, z)
            out[j] = PropagationOutcome(None, feas, None, dest,
                                        Infeasible("index depth exceeds the reach of h",
                                                   {"d": idx.d, "sup_h": sup}))
            continue
        f1 = feasibility_r1(idx, dest.value, z)
        f2 = feasibility_r2(idx, dest.value, z, sup)
        result = None
        if prefer == "r2" and f2.verdict == GUARANTEED:
            res = solve_r2(idx, dest.value, z, sup, tau_max, policy)
            if isinstance(res, ResilienceIndex):
                result = PropagationOutcome(res, f2, "R2", dest)
        elif f1.verdict == GUARANTEED:
            res = solve_r1(idx, dest.value, z, sup, tau_max, policy)
            if isinstance(res, ResilienceIndex):
                result = PropagationOutcome(res, f1, "R1", dest)
        if result is None:
            attempts = [("R1", solve_r1, f1), ("R2", solve_r2, f2)]
            if prefer == "r2":
                attempts.reverse()
            failures = []
            for name, solver, feas in attempts:
                res = solver(idx, dest.value, z, sup, tau_max, policy)
                if isinstance(res, ResilienceIndex):
                    result = PropagationOutcome(res, feas, name, dest)
                    break
                failures.append(f"{name}: {res.reason}")
            if result is None:
                result = PropagationOutcome(
                    None, f1 if prefer == "r1" else f2, None, dest,
                    Infeasible("; ".join(failures), {"delta": dest.value}))
        out[j] = result
    return out


def verify_network(net: Network, indices: dict[int, ResilienceIndex], z: float,
                   settings: OracleSettings | None = None
                   ) -> dict[int, VerificationReport]:
    """Ground-truth re-check of every index against the coupled dynamics:
    the three defining conditions are minimized over the joint grid of the
    subsystem and all its coupling sources."""
    settings = settings or OracleSettings()
    if z < 0:
        raise ValueError("z must be nonnegative")
    out = {}
    for j in range(len(net.subsystems)):
        if j not in indices or not isinstance(indices[j], ResilienceIndex):
            raise ValueError(f"subsystem {net.subsystems[j].name!r} has no valid index")
        out[j] = _verify_one(net, j, indices[j], z, settings)
    return out


def _verify_one(net: Network, j: int, idx: ResilienceIndex, z: float,
                settings: OracleSettings) -> VerificationReport:
    s = net.subsystems[j]
    comp = s.compiled
    rows = [i for i in range(s.n_states) if not _is_structural_zero(comp.grad_exprs[i])]
    base: Expression = _coupling_drift_expr(net, j)
    for i in rows:
        base = _add(base, _mul(comp.grad_exprs[i], s.f[i]))
    coefg = []
    for k in range(s.n_inputs):
        c: Expression = Literal(0.0)
        for i in rows:
            c = _add(c, _mul(comp.grad_exprs[i], s.g[i][k]))
        coefg.append(c)
    participants = sorted({j} | {i for i, _ in net.incoming(j)})
    needed = _needed_vars(net, participants, [base, *coefg, *s.mu])
    grid = _JointGrid(net, participants, needed)
    tol = settings.margin_tolerance

    base_fn = grid.caller(base)
    coefg_fns = [grid.caller(c) for c in coefg]
    mu_fns = [grid.caller(m) for m in s.mu]
    h_j = grid.h_of(j)

    def offline_obj(b):
        total = base_fn(b)
        for k, (lo, hi) in enumerate(s.input_box):
            c = np.asarray(coefg_fns[k](b))
            total = total + np.minimum(c * lo, c * hi)
        return total

    def closed_obj(b):
        u = s.clamp_mu([fn(b) for fn in mu_fns])
        total = base_fn(b)
        for k in range(s.n_inputs):
            total = total + coefg_fns[k](b) * u[k]
        return total

    def invariance_obj(b):
        return closed_obj(b) + z * (h_j(b) - idx.d)

    notes: list[str] = []
    worst: dict = {}

    value, arg = grid_minimize(offline_obj, grid.axes, grid.predicate(tol), settings)
    margin_offline = value + idx.d / idx.tau
    worst["offline"] = grid.witness(arg)

    if idx.d == 0:
        margin_recovery = math.inf
        worst["recovery"] = None
        notes.append("recovery vacuous: zero buffer depth")
    else:
        try:
            value, arg = grid_minimize(closed_obj, grid.axes,
                                       grid.predicate(tol, j, "band", idx.d), settings)
            margin_recovery = value - idx.d / idx.phi
            worst["recovery"] = grid.witness(arg)
        except EmptyRegionError:
            margin_recovery = math.inf
            worst["recovery"] = None
            notes.append("recovery band is empty at this grid resolution")

    try:
        value, arg = grid_minimize(invariance_obj, grid.axes,
                                   grid.predicate(tol, j, "buffer", idx.d), settings)
        margin_invariance = value - idx.eta
        worst["invariance"] = grid.witness(arg)
    except EmptyRegionError:
        margin_invariance = -math.inf
        worst["invariance"] = None
        notes.append("buffer region is empty: d exceeds the reach of h")

    passed = (margin_offline >= -tol and margin_recovery >= -tol
              and margin_invariance >= -tol)
    return VerificationReport(passed=passed, margin_offline=margin_offline,
                              margin_recovery=margin_recovery,
                              margin_invariance=margin_invariance,
                              worst_points=worst, notes=tuple(notes))
