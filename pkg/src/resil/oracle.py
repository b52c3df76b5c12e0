"""Dense-grid extremum oracle over box regions.

Every quantity the index computations need (worst-case drifts, band minima,
the peak of the safety function) is a minimum or maximum of a continuous
function over a box, possibly restricted by safety-function inequalities.
This module evaluates such objectives on axis-aligned grids with vectorized
numpy broadcasting, then shrinks the box around the incumbent for a fixed
number of refinement rounds.

Determinism: ties on the grid resolve to the lexicographically smallest
point in axis order, regardless of chunking or worker count.  Refinement
never loses the incumbent, so reported values improve monotonically.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .exprs import Expression, compile_expression, free_variables
from .subsystem import Region, SAFE_SET, Subsystem, _is_structural_zero

# Cap on grid points evaluated per chunk; keeps peak memory near ~200 MB.
_CHUNK_BUDGET = 4_000_000


class EmptyRegionError(Exception):
    """No grid point satisfied the region predicate."""


@dataclass(frozen=True)
class OracleSettings:
    grid_points_per_dim: int = 200
    refinement_rounds: int = 2
    margin_tolerance: float = 1e-9
    workers: int = 1

    def __post_init__(self):
        if self.grid_points_per_dim < 2:
            raise ValueError("grid_points_per_dim must be at least 2")
        if self.refinement_rounds < 0:
            raise ValueError("refinement_rounds must be nonnegative")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")


@dataclass(frozen=True)
class Extremum:
    value: float
    arg: tuple[float, ...]
    kind: str  # 'min' or 'max'
    rigor: str = "sampled"


def _shaped(values: np.ndarray, axis: int, ndim: int) -> np.ndarray:
    shape = [1] * ndim
    shape[axis] = values.size
    return values.reshape(shape)


def _scan_chunk(objective, predicate, grids, lo_index):
    """Evaluate one slab (a slice along axis 0) and return its best point."""
    ndim = len(grids)
    shape = tuple(g.size for g in grids)
    bindings = [_shaped(g, i, ndim) for i, g in enumerate(grids)]
    vals = np.asarray(objective(bindings), dtype=float)
    vals = np.broadcast_to(vals, shape)
    if np.isnan(vals).any():
        raise FloatingPointError("objective produced nan on the grid")
    if predicate is not None:
        mask = np.broadcast_to(predicate(bindings), shape)
        if not mask.any():
            return None
        vals = np.where(mask, vals, np.inf)
    flat = int(np.argmin(vals))  # C order: ties pick the lexicographically first point
    best = float(vals.flat[flat])
    if not np.isfinite(best):
        return None if predicate is not None else _raise_nonfinite(best)
    idx = np.unravel_index(flat, shape)
    coords = tuple(float(grids[i][idx[i]]) for i in range(ndim))
    return best, (lo_index + idx[0],) + idx[1:], coords


def _raise_nonfinite(v):
    raise FloatingPointError(f"objective produced {v} on the grid")


def grid_minimize(objective, axes, predicate, settings: OracleSettings):
    """Minimize objective over the box spanned by axes.

    objective and predicate receive a list of broadcast-shaped arrays, one
    per axis, in axis order.  Returns (value, arg) where arg is a tuple of
    coordinates in axis order.  Raises EmptyRegionError when the predicate
    rejects the entire initial grid.
    """
    if not axes:
        vals = np.asarray(objective([]), dtype=float).reshape(())
        return float(vals), ()
    n = settings.grid_points_per_dim
    bounds = [(float(lo), float(hi)) for lo, hi in axes]
    orig = list(bounds)
    incumbent_val = math.inf
    incumbent_arg = None
    for round_no in range(settings.refinement_rounds + 1):
        grids = [np.linspace(lo, hi, n) for lo, hi in bounds]
        best = _scan_round(objective, predicate, grids, settings)
        if best is None:
            if round_no == 0:
                raise EmptyRegionError("region contains no grid point")
        else:
            val, _, coords = best
            if val < incumbent_val or incumbent_arg is None:
                incumbent_val, incumbent_arg = val, coords
        if incumbent_arg is None:
            raise EmptyRegionError("region contains no grid point")
        bounds = _shrink(orig, bounds, incumbent_arg, n)
    return incumbent_val, incumbent_arg


def _scan_round(objective, predicate, grids, settings):
    axis0 = grids[0]
    total = math.prod(g.size for g in grids)
    per_row = max(1, total // axis0.size)
    rows_per_chunk = max(1, _CHUNK_BUDGET // per_row)
    n_chunks = math.ceil(axis0.size / rows_per_chunk)
    if settings.workers > 1:
        n_chunks = max(n_chunks, min(axis0.size, settings.workers))
        rows_per_chunk = math.ceil(axis0.size / n_chunks)
        n_chunks = math.ceil(axis0.size / rows_per_chunk)
    tasks = []
    for c in range(n_chunks):
        lo = c * rows_per_chunk
        hi = min(axis0.size, lo + rows_per_chunk)
        tasks.append(([axis0[lo:hi]] + grids[1:], lo))
    if settings.workers > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=settings.workers) as pool:
            results = list(pool.map(
                lambda t: _scan_chunk(objective, predicate, t[0], t[1]), tasks))
    else:
        results = [_scan_chunk(objective, predicate, g, lo) for g, lo in tasks]
    best = None
    for r in results:  # chunk order preserves the C-order tie-break
        if r is None:
            continue
        if best is None or r[0] < best[0]:
            best = r
    return best


def _shrink(orig, bounds, arg, n):
    new = []
    for (olo, ohi), (lo, hi), center in zip(orig, bounds, arg):
        step = (hi - lo) / (n - 1)
        half = max(2.0 * step, 1e-15 * max(1.0, abs(center)))
        nlo = max(olo, center - half)
        nhi = min(ohi, center + half)
        if nlo >= nhi:
            nlo, nhi = lo, hi
        new.append((nlo, nhi))
    return new


# -- region handling ---------------------------------------------------------

def _region_axes(s: Subsystem, region: Region):
    axes = list(zip(s.state_vars, s.state_box))
    if region.kind == "safe_times_input":
        axes += list(zip(s.input_vars, s.input_box))
    elif region.kind not in ("safe_set", "safe_minus_buffer", "buffer", "state_box"):
        raise ValueError(f"unknown region kind {region.kind!r}")
    return axes


def _region_predicate(s: Subsystem, region: Region, state_slots, tol):
    """Predicate over shaped bindings; state_slots maps state index -> axis
    position, or to a fixed float when the axis was pruned."""
    if region.kind == "state_box":
        return None
    h_fn = s.compiled.h
    d = region.d

    def h_of(bindings):
        args = [bindings[slot] if isinstance(slot, int) else slot for slot in state_slots]
        return h_fn(*args)

    if region.kind in ("safe_set", "safe_times_input"):
        return lambda b: h_of(b) >= -tol
    if region.kind == "buffer":
        return lambda b: h_of(b) >= d - tol
    if region.kind == "safe_minus_buffer":
        return lambda b: (h_of(b) >= -tol) & (h_of(b) <= d - tol)
    raise ValueError(f"unknown region kind {region.kind!r}")


def minimize(fn, region: Region, s: Subsystem, settings: OracleSettings) -> Extremum:
    """Minimize fn over the region.  fn receives one array per variable in
    (state_vars + input_vars-if-product-region) order."""
    axes = _region_axes(s, region)
    state_slots = list(range(s.n_states))
    predicate = _region_predicate(s, region, state_slots, settings.margin_tolerance)
    value, arg = grid_minimize(lambda b: fn(*b), [box for _, box in axes],
                               predicate, settings)
    return Extremum(value=value, arg=arg, kind="min")


def maximize(fn, region: Region, s: Subsystem, settings: OracleSettings) -> Extremum:
    ex = minimize(lambda *b: -np.asarray(fn(*b), dtype=float), region, s, settings)
    return Extremum(value=-ex.value, arg=ex.arg, kind="max")


# -- pruned objectives for the index computations ----------------------------

def _pruned_state_axes(s: Subsystem, used: frozenset[str]):
    """Axes for the state variables that matter; pruned variables are fixed
    at their box midpoints.  Returns (axes, slots, full_arg_builder)."""
    axes = []
    slots: list = []
    for name, (lo, hi) in zip(s.state_vars, s.state_box):
        if name in used:
            slots.append(len(axes))
            axes.append((lo, hi))
        else:
            slots.append(0.5 * (lo + hi))
    def full_arg(arg, extra=()):
        out = [arg[slot] if isinstance(slot, int) else slot for slot in slots]
        return tuple(out) + tuple(extra)
    return axes, slots, full_arg


def _bind(slots, bindings):
    return [bindings[slot] if isinstance(slot, int) else slot for slot in slots]


def _grad_terms(s: Subsystem):
    comp = s.compiled
    return [i for i in range(s.n_states) if not _is_structural_zero(comp.grad_exprs[i])]


def _used_vars(s: Subsystem, include_mu: bool, include_g: bool) -> frozenset[str]:
    used = set(free_variables(s.h))
    comp = s.compiled
    for i in _grad_terms(s):
        used |= free_variables(comp.grad_exprs[i])
        used |= free_variables(s.f[i])
        if include_g:
            for e in s.g[i]:
                used |= free_variables(e)
    if include_mu:
        for e in s.mu:
            used |= free_variables(e)
    return frozenset(used)


def sup_h(s: Subsystem, settings: OracleSettings) -> float:
    """Largest value of h over the safety set (the depth of the set)."""
    used = frozenset(free_variables(s.h))
    axes, slots, _ = _pruned_state_axes(s, used)
    h_fn = s.compiled.h
    predicate = _region_predicate(s, SAFE_SET, slots, settings.margin_tolerance)
    value, _ = grid_minimize(lambda b: -h_fn(*_bind(slots, b)), axes, predicate, settings)
    return -value


def min_offline_drift(s: Subsystem, settings: OracleSettings) -> Extremum:
    """min over the safety set and the input box of grad h . (f + g u).

    The objective is affine in u, so each input coordinate attains the
    minimum at a box endpoint; only the state grid is scanned and the
    adversarial vertex is reconstructed per grid point.
    """
    comp = s.compiled
    rows = _grad_terms(s)
    used = _used_vars(s, include_mu=False, include_g=True)
    axes, slots, full_arg = _pruned_state_axes(s, used)
    predicate = _region_predicate(s, SAFE_SET, slots, settings.margin_tolerance)

    def coef(bindings, k):
        args = _bind(slots, bindings)
        total = 0.0
        for i in rows:
            total = total + comp.grad[i](*args) * comp.g[i][k](*args)
        return total

    def objective(bindings):
        args = _bind(slots, bindings)
        total = 0.0
        for i in rows:
            total = total + comp.grad[i](*args) * comp.f[i](*args)
        for k, (lo, hi) in enumerate(s.input_box):
            c = coef(bindings, k)
            total = total + np.minimum(np.asarray(c) * lo, np.asarray(c) * hi)
        return total

    value, arg = grid_minimize(objective, axes, predicate, settings)
    point = [np.asarray(v) for v in _bind(slots, [np.asarray(a) for a in arg])]
    u_star = []
    for k, (lo, hi) in enumerate(s.input_box):
        c = 0.0
        for i in rows:
            c = c + comp.grad[i](*point) * comp.g[i][k](*point)
        c = float(np.asarray(c))
        u_star.append(lo if c * lo <= c * hi else hi)
    return Extremum(value=value, arg=full_arg(arg, u_star), kind="min")


def _closed_loop_objective(s: Subsystem, slots):
    comp = s.compiled
    rows = _grad_terms(s)

    def objective(bindings):
        args = _bind(slots, bindings)
        u = s.clamp_mu([fn(*args) for fn in comp.mu])
        total = 0.0
        for i in rows:
            row = comp.f[i](*args)
            for k in range(s.n_inputs):
                row = row + comp.g[i][k](*args) * u[k]
            total = total + comp.grad[i](*args) * row
        return total

    return objective


def min_recovery_drift(s: Subsystem, d: float, settings: OracleSettings) -> Extremum:
    """min of the closed-loop drift over the band 0 <= h < d."""
    used = _used_vars(s, include_mu=True, include_g=True)
    axes, slots, full_arg = _pruned_state_axes(s, used)
    predicate = _region_predicate(s, Region("safe_minus_buffer", float(d)), slots,
                                  settings.margin_tolerance)
    objective = _closed_loop_objective(s, slots)
    value, arg = grid_minimize(objective, axes, predicate, settings)
    return Extremum(value=value, arg=full_arg(arg), kind="min")


def argmax_h(s: Subsystem, settings: OracleSettings) -> tuple[float, ...]:
    """Grid point of the safety set where h peaks; axes h ignores sit at
    their box midpoints.  Used as the deepest-interior default start."""
    used = frozenset(free_variables(s.h))
    axes, slots, full_arg = _pruned_state_axes(s, used)
    h_fn = s.compiled.h
    predicate = _region_predicate(s, SAFE_SET, slots, settings.margin_tolerance)
    _, arg = grid_minimize(lambda b: -h_fn(*_bind(slots, b)), axes, predicate, settings)
    return full_arg(arg)


def min_invariance_margin(s: Subsystem, d: float, z: float,
                          settings: OracleSettings) -> Extremum:
    """min over h >= d of closed-loop drift + z * (h - d)."""
    used = _used_vars(s, include_mu=True, include_g=True)
    axes, slots, full_arg = _pruned_state_axes(s, used)
    predicate = _region_predicate(s, Region("buffer", float(d)), slots,
                                  settings.margin_tolerance)
    drift = _closed_loop_objective(s, slots)
    h_fn = s.compiled.h

    def objective(bindings):
        args = _bind(slots, bindings)
        return drift(bindings) + z * (h_fn(*args) - d)

    value, arg = grid_minimize(objective, axes, predicate, settings)
    return Extremum(value=value, arg=full_arg(arg), kind="min")
