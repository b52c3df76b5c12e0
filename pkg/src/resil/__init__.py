"""Resilience indices for interconnected control-affine systems.

Computes per-subsystem resilience indices (buffer depth, offline dwell
bound, recovery rate, invariance slack), propagates them through coupled
networks, and stress-tests the results with a hybrid fault-injection
simulator.
"""

from .exprs import (
    EvaluationError,
    Expression,
    ExpressionError,
    ExpressionSyntaxError,
    UndeclaredVariableError,
    compile_expression,
    differentiate,
    eval_expression,
    format_expression,
    free_variables,
    parse_expression,
)
from .hybrid_sim import (
    AdversaryPolicy,
    FaultSchedule,
    HybridTrace,
    NonFiniteStateError,
    SafetyVerdict,
    ScheduleError,
    check_trace_safety,
    export_trace_csv,
    generate_schedule,
    simulate,
    simulate_batch,
    validate_schedule,
    validate_trace,
)
from .interconnect import (
    DeltaEstimate,
    DimensionMismatchError,
    Feasibility,
    Network,
    PropagationOutcome,
    ScanPolicy,
    compute_delta_exact,
    compute_delta_pairwise,
    feasibility_r1,
    feasibility_r2,
    improve_by_interconnection,
    propagate_indices,
    solve_r1,
    solve_r2,
    verify_network,
)
from .model_io import Model, load_indices, load_model, write_indices
from .oracle import (
    EmptyRegionError,
    Extremum,
    OracleSettings,
    argmax_h,
    grid_minimize,
    maximize,
    min_invariance_margin,
    min_offline_drift,
    min_recovery_drift,
    minimize,
    sup_h,
)
from .resilience import (
    Infeasible,
    ResilienceIndex,
    VerificationReport,
    compute_index,
    verify_index,
)
from .subsystem import (
    ModelError,
    Region,
    SAFE_SET,
    SAFE_TIMES_INPUT,
    STATE_BOX,
    Subsystem,
    buffer_region,
    safe_minus_buffer,
)

__version__ = "0.1.0"

__all__ = [
    "AdversaryPolicy",
    "DeltaEstimate",
    "DimensionMismatchError",
    "EmptyRegionError",
    "EvaluationError",
    "Expression",
    "ExpressionError",
    "ExpressionSyntaxError",
    "Extremum",
    "FaultSchedule",
    "Feasibility",
    "HybridTrace",
    "Infeasible",
    "Model",
    "ModelError",
    "Network",
    "NonFiniteStateError",
    "OracleSettings",
    "PropagationOutcome",
    "Region",
    "ResilienceIndex",
    "SAFE_SET",
    "SAFE_TIMES_INPUT",
    "STATE_BOX",
    "SafetyVerdict",
    "ScanPolicy",
    "ScheduleError",
    "Subsystem",
    "UndeclaredVariableError",
    "VerificationReport",
    "argmax_h",
    "buffer_region",
    "check_trace_safety",
    "compile_expression",
    "compute_delta_exact",
    "compute_delta_pairwise",
    "compute_index",
    "differentiate",
    "eval_expression",
    "export_trace_csv",
    "feasibility_r1",
    "feasibility_r2",
    "format_expression",
    "free_variables",
    "generate_schedule",
    "grid_minimize",
    "improve_by_interconnection",
    "load_indices",
    "load_model",
    "maximize",
    "min_invariance_margin",
    "min_offline_drift",
    "min_recovery_drift",
    "minimize",
    "parse_expression",
    "propagate_indices",
    "safe_minus_buffer",
    "simulate",
    "simulate_batch",
    "solve_r1",
    "solve_r2",
    "sup_h",
    "validate_schedule",
    "validate_trace",
    "verify_index",
    "verify_network",
    "write_indices",
]
