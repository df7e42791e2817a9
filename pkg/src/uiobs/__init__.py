"""Observability analysis for control-affine systems with unknown inputs."""

from .expressions import (
    DomainError,
    Expr,
    ExprError,
    MissingVariableError,
    ParseError,
    UnknownIdentifierError,
    VarSpace,
    differentiate,
    evaluate,
    parse_expr,
    remap,
    simplify,
    to_text,
)
from .extension import (
    ComponentVerdict,
    ExtendedSystem,
    RankConditionReport,
    SystemSpec,
    extend_system,
    observability_codistribution,
    rank_condition_report,
)
from .geometry import (
    Codistribution,
    Covector,
    SamplePlan,
    SamplingExhausted,
    VectorField,
    contains,
    generic_rank,
    gradient,
    lie_bracket,
    lie_covector,
    lie_scalar,
    same_span,
)
from .single_disturbance import (
    AnalysisResult,
    CoordinateChangeSpec,
    DisturbanceData,
    analyze,
    apply_coordinate_change,
    check_bracket_identities,
    check_separation,
    disturbance_data,
    observable_codistribution,
    relative_degree,
    rescaled_bracket_sequence,
)

__version__ = "0.1.0"
