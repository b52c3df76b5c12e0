#!/usr/bin/env python3
"""
Demo 3: fault injection on a two-reactor series
===============================================

The bundled cstr_series model chains two stirred-tank reactors: each
holds temperature and concentration states, heating power is the input,
and the safety set keeps temperature between 300 K and 400 K.  Reactor 1
leaks heat into reactor 2 through the coupling.

This demo computes indices, propagates them through the coupling, draws
random fault schedules that respect the certified (tau, phi) budgets,
and drives the plant with a bang-bang adversary during every fault.  The
certificate predicts that no schedule can push a temperature outside
[300, 400], and the simulator agrees.
"""

from importlib import resources

from resil import (
    AdversaryPolicy,
    OracleSettings,
    check_trace_safety,
    compute_index,
    generate_schedule,
    load_model,
    propagate_indices,
    simulate_batch,
)

SETTINGS = OracleSettings(grid_points_per_dim=201, refinement_rounds=2)
HORIZON = 2.0  # hours
DT = 5e-4
N_SCHEDULES = 20
SEED = 42


def main():
    print("Fault injection on a two-reactor series")
    print("=" * 50)
    path = resources.files("resil") / "models" / "cstr_series.json"
    model = load_model(str(path))
    net = model.network

    print("computing standalone indices (buffer depth swept in 1000-unit")
    print("steps of h = (T - 300)(400 - T); d = 1000 keeps T roughly 11 K")
    print("clear of the 300 K / 400 K limits):")
    indices = {}
    for j, s in enumerate(net.subsystems):
        indices[j] = compute_index(s, model.alpha_z, eps=1000.0,
                                   settings=SETTINGS)
        d, tau, phi, eta = indices[j].as_tuple()
        print(f"  {s.name}: d = {d:.0f}, tau = {tau * 3600:.2f} s, "
              f"phi = {phi * 3600:.2f} s, eta = {eta:.0f}")

    print("\npropagating through the thermal coupling:")
    outcomes = propagate_indices(net, indices, model.alpha_z,
                                 settings=SETTINGS)
    updated = {}
    for j, s in enumerate(net.subsystems):
        res = outcomes[j]
        updated[j] = res.index
        d, tau, phi, eta = res.index.as_tuple()
        print(f"  {s.name}: delta = {res.delta.value:+.0f} -> "
              f"tau = {tau * 3600:.2f} s, phi = {phi * 3600:.2f} s, "
              f"eta = {eta:.0f}")

    print(f"\nsimulating {N_SCHEDULES} random admissible fault schedules "
          f"(seed {SEED}, bang-bang adversary):")
    schedules = generate_schedule(SEED, HORIZON, updated, N_SCHEDULES,
                                  align_dt=DT)
    traces = simulate_batch(net, updated, schedules,
                            AdversaryPolicy("bang-bang", seed=SEED),
                            dt=DT, horizon=HORIZON)
    safe = 0
    worst_h = float("inf")
    worst_name = ""
    for trace in traces:
        verdict = check_trace_safety(trace, net, updated)
        safe += int(verdict.safe)
        for name, value in verdict.min_h.items():
            if value < worst_h:
                worst_h, worst_name = value, name
    print(f"  safe schedules: {safe}/{N_SCHEDULES}")
    print(f"  worst h along any trace: {worst_h:.0f} ({worst_name})")
    print("  the certificate promises h >= 0; the closest any trace got")
    print(f"  to the boundary was {worst_h:.0f} units.")

    n_faults = sum(len(ivs) for s in schedules for ivs in s.intervals)
    print(f"\n({n_faults} fault intervals were injected across the batch;")
    print("rerunning with the same seed reproduces every trace exactly.)")


if __name__ == "__main__":
    main()
