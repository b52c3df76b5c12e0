"""Control-affine subsystem model with a polynomial-or-exponential safety
function and a box-bounded input.

A subsystem owns its dynamics ``x' = f(x) + g(x) u``, a safety function
``h`` whose zero superlevel set is the region that must stay forward
invariant, a feedback law ``mu`` (optionally saturated), and the state and
input boxes every analysis is restricted to.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .exprs import (
    Expression,
    Literal,
    compile_expression,
    differentiate,
    free_variables,
)


class ModelError(Exception):
    """Raised for structurally invalid subsystems, networks, or model files."""


def _is_structural_zero(e: Expression) -> bool:
    return isinstance(e, Literal) and e.value == 0.0


@dataclass(frozen=True)
class Region:
    """Analysis region tag.

    kind:
      - ``safe_set``: h(x) >= 0 within the state box
      - ``safe_minus_buffer``: 0 <= h(x) < d (the recovery band)
      - ``buffer``: h(x) >= d
      - ``state_box``: the whole box
      - ``safe_times_input``: (x, u) with h(x) >= 0 and u in the input box
    """

    kind: str
    d: float = 0.0


SAFE_SET = Region("safe_set")
STATE_BOX = Region("state_box")
SAFE_TIMES_INPUT = Region("safe_times_input")


def safe_minus_buffer(d: float) -> Region:
    return Region("safe_minus_buffer", float(d))


def buffer_region(d: float) -> Region:
    return Region("buffer", float(d))


class _Compiled:
    """Positional-argument callables for one subsystem, built once."""

    __slots__ = ("h", "grad_exprs", "grad", "f", "g", "mu", "state_vars")

    def __init__(self, s: "Subsystem"):
        sv = s.state_vars
        self.state_vars = sv
        self.h = compile_expression(s.h, sv)
        self.grad_exprs = tuple(differentiate(s.h, v) for v in sv)
        self.grad = tuple(compile_expression(e, sv) for e in self.grad_exprs)
        self.f = tuple(compile_expression(e, sv) for e in s.f)
        self.g = tuple(tuple(compile_expression(e, sv) for e in row) for row in s.g)
        self.mu = tuple(compile_expression(e, sv) for e in s.mu)


@dataclass
class Subsystem:
    name: str
    state_vars: tuple[str, ...]
    input_vars: tuple[str, ...]
    f: tuple[Expression, ...]
    g: tuple[tuple[Expression, ...], ...]  # n rows, p columns
    h: Expression
    mu: tuple[Expression, ...]
    state_box: tuple[tuple[float, float], ...]
    input_box: tuple[tuple[float, float], ...]
    mu_saturation: tuple[tuple[float, float], ...] | None = field(default=None)

    def __post_init__(self):
        n, p = len(self.state_vars), len(self.input_vars)
        if n == 0:
            raise ModelError(f"{self.name}: at least one state variable required")
        if len(set(self.state_vars) | set(self.input_vars)) != n + p:
            raise ModelError(f"{self.name}: state and input names must be distinct")
        if len(self.f) != n:
            raise ModelError(f"{self.name}: f must have {n} components, got {len(self.f)}")
        if len(self.g) != n or any(len(row) != p for row in self.g):
            raise ModelError(f"{self.name}: g must be {n}x{p}")
        if len(self.mu) != p:
            raise ModelError(f"{self.name}: mu must have {p} components, got {len(self.mu)}")
        if len(self.state_box) != n or len(self.input_box) != p:
            raise ModelError(f"{self.name}: box dimensions do not match variable counts")
        for lo, hi in (*self.state_box, *self.input_box):
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ModelError(f"{self.name}: box intervals need finite lo < hi")
        if self.mu_saturation is not None:
            if len(self.mu_saturation) != p:
                raise ModelError(f"{self.name}: mu_saturation must have {p} entries")
            for (lo, hi), (blo, bhi) in zip(self.mu_saturation, self.input_box):
                if not (blo <= lo < hi <= bhi):
                    raise ModelError(
                        f"{self.name}: saturation bounds must sit inside the input box"
                    )
        allowed = set(self.state_vars)
        for label, exprs in (("f", self.f), ("g", [e for row in self.g for e in row]),
                             ("h", [self.h]), ("mu", self.mu)):
            for e in exprs:
                extra = free_variables(e) - allowed
                if extra:
                    raise ModelError(
                        f"{self.name}: {label} uses undeclared variables {sorted(extra)}"
                    )

    @cached_property
    def compiled(self) -> _Compiled:
        return _Compiled(self)

    @property
    def n_states(self) -> int:
        return len(self.state_vars)

    @property
    def n_inputs(self) -> int:
        return len(self.input_vars)

    def clamp_mu(self, raw_values):
        """Apply the optional per-law saturation to raw feedback values."""
        if self.mu_saturation is None:
            return list(raw_values)
        return [np.clip(v, lo, hi) for v, (lo, hi) in zip(raw_values, self.mu_saturation)]

    def mu_values(self, state_cols):
        comp = self.compiled
        return self.clamp_mu([fn(*state_cols) for fn in comp.mu])


def shifted_h(s: Subsystem, d: float, x) -> float:
    """h(x) - d, the safety margin relative to the buffered boundary."""
    return float(s.compiled.h(*x)) - d


def drift_rate(s: Subsystem, x, u) -> float:
    """grad h(x) . (f(x) + g(x) u) for a concrete state and input."""
    comp = s.compiled
    total = 0.0
    for i in range(s.n_states):
        gi = comp.grad[i]
        if _is_structural_zero(comp.grad_exprs[i]):
            continue
        row = comp.f[i](*x)
        for k in range(s.n_inputs):
            row = row + comp.g[i][k](*x) * u[k]
        total += float(gi(*x)) * float(row)
    return total


def closed_loop_drift(s: Subsystem, x) -> float:
    """Drift under the subsystem's own (saturated) feedback law."""
    u = [float(v) for v in s.mu_values(tuple(x))]
    return drift_rate(s, x, u)
