"""Resilience indices for a single subsystem.

An index (d, tau, phi, eta) certifies that the subsystem tolerates any
fault or attack that keeps the input inside its box for at most tau time
units at a stretch, provided consecutive faults are separated by at least
phi: the state cannot leave the buffered region h >= d by more than the
drift budget allows while offline, the feedback law restores h >= d within
phi once back online, and the closed loop keeps the buffer invariant with
linear-rate margin eta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .oracle import (
    EmptyRegionError,
    Extremum,
    OracleSettings,
    min_invariance_margin,
    min_offline_drift,
    min_recovery_drift,
    sup_h,
)
from .subsystem import Subsystem

DEFAULT_TAU_MAX = 1e9
DEFAULT_PHI_MIN = 1e-9


@dataclass(frozen=True)
class ResilienceIndex:
    """d: buffer depth; tau: survivable offline time; phi: recovery deadline;
    eta: invariance margin rate."""

    d: float
    tau: float
    phi: float
    eta: float

    def __post_init__(self):
        if not all(map(math.isfinite, (self.d, self.phi, self.eta))):
            raise ValueError("d, phi, eta must be finite")
        if math.isnan(self.tau):
            raise ValueError("tau must not be nan")
        if self.d < 0:
            raise ValueError(f"d must be nonnegative, got {self.d}")
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.phi <= 0:
            raise ValueError(f"phi must be positive, got {self.phi}")
        if self.eta < 0:
            raise ValueError(f"eta must be nonnegative, got {self.eta}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.d, self.tau, self.phi, self.eta)


@dataclass(frozen=True)
class Infeasible:
    """Returned when no index exists under the given parameters."""

    reason: str
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __bool__(self):
        return False


@dataclass(frozen=True)
class VerificationReport:
    """Margins are slack amounts: nonnegative (up to the oracle tolerance)
    means the corresponding index condition holds on the sampled grid."""

    passed: bool
    margin_offline: float
    margin_recovery: float
    margin_invariance: float
    worst_points: dict
    notes: tuple[str, ...] = ()


def verify_index(s: Subsystem, index: ResilienceIndex, z: float,
                 settings: OracleSettings | None = None) -> VerificationReport:
    """Check the three index conditions by direct grid minimization."""
    settings = settings or OracleSettings()
    if z < 0:
        raise ValueError("z must be nonnegative")
    notes: list[str] = []
    worst: dict = {}

    off = min_offline_drift(s, settings)
    margin_offline = off.value + index.d / index.tau
    worst["offline"] = off.arg

    if index.d == 0:
        margin_recovery = math.inf
        worst["recovery"] = None
        notes.append("recovery vacuous: zero buffer depth")
    else:
        try:
            rec = min_recovery_drift(s, index.d, settings)
            margin_recovery = rec.value - index.d / index.phi
            worst["recovery"] = rec.arg
        except EmptyRegionError:
            margin_recovery = math.inf
            worst["recovery"] = None
            notes.append("recovery band is empty at this grid resolution")

    try:
        inv = min_invariance_margin(s, index.d, z, settings)
        margin_invariance = inv.value - index.eta
        worst["invariance"] = inv.arg
    except EmptyRegionError:
        margin_invariance = -math.inf
        worst["invariance"] = None
        notes.append("buffer region is empty: d exceeds the reach of h")

    tol = settings.margin_tolerance
    passed = (margin_offline >= -tol and margin_recovery >= -tol
              and margin_invariance >= -tol)
    return VerificationReport(passed=passed,
                              margin_offline=margin_offline,
                              margin_recovery=margin_recovery,
                              margin_invariance=margin_invariance,
                              worst_points=worst,
                              notes=tuple(notes))


def compute_index(s: Subsystem, z: float, eps: float = 0.1,
                  tau_max: float = DEFAULT_TAU_MAX,
                  phi_min: float = DEFAULT_PHI_MIN,
                  settings: OracleSettings | None = None,
                  maximize_tau: bool = False) -> ResilienceIndex | Infeasible:
    """Sweep buffer depths d = 0, eps, 2 eps, ... up to the depth of the
    safety set and return the first depth whose induced (tau, phi, eta)
    passes verification.  With maximize_tau the sweep continues and the
    feasible candidate with the largest tau wins.
    """
    settings = settings or OracleSettings()
    if z < 0:
        raise ValueError("z must be nonnegative")
    if eps <= 0:
        raise ValueError("eps must be positive")

    depth = sup_h(s, settings)
    off = min_offline_drift(s, settings)  # independent of d
    last_fail: dict = {"sup_h": depth, "min_offline_drift": off.value}
    best: ResilienceIndex | None = None

    k = 0
    while True:
        d = k * eps
        k += 1
        if d > depth * (1 + 1e-12):
            break
        candidate = _candidate_at(s, d, z, off, tau_max, phi_min, settings, last_fail)
        if candidate is None:
            continue
        report = verify_index(s, candidate, z, settings)
        if not report.passed:
            last_fail = {"d": d, "margins": (report.margin_offline,
                                             report.margin_recovery,
                                             report.margin_invariance)}
            continue
        if not maximize_tau:
            return candidate
        if best is None or candidate.tau > best.tau:
            best = candidate
    if best is not None:
        return best
    return Infeasible("no buffer depth in the sweep admits a valid index",
                      dict(last_fail))


def _candidate_at(s, d, z, off: Extremum, tau_max, phi_min, settings, last_fail):
    if off.value >= 0:
        tau = tau_max
    elif d == 0:
        last_fail.update(d=d, stage="offline", detail="zero depth with negative drift")
        return None
    else:
        tau = min(tau_max, d / (-off.value))

    if d == 0:
        phi = phi_min
    else:
        try:
            rec = min_recovery_drift(s, d, settings)
        except EmptyRegionError:
            last_fail.update(d=d, stage="recovery", detail="empty band")
            return None
        if rec.value <= 0:
            last_fail.update(d=d, stage="recovery", detail=rec.value)
            return None
        phi = max(phi_min, d / rec.value)

    try:
        inv = min_invariance_margin(s, d, z, settings)
    except EmptyRegionError:
        last_fail.update(d=d, stage="invariance", detail="empty buffer")
        return None
    if inv.value < 0:
        last_fail.update(d=d, stage="invariance", detail=inv.value)
        return None
    return ResilienceIndex(d=d, tau=tau, phi=phi, eta=inv.value)
