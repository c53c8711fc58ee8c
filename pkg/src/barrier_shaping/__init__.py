"""Barrier-function reward shaping for continuous control, with a NumPy TD3."""

from .barrier import (
    BarrierEval,
    BarrierKind,
    BarrierParams,
    BarrierSpec,
    BoundSpec,
    cartpole_quad_reward_closed_form,
    eval_h,
    evaluate,
    exponential,
    grad_h,
    hdot_analytic,
    hdot_finite_difference,
    quadratic,
    reward_bf,
    reward_bf_analytic,
    shape_reward,
)
from .errors import (
    BarrierShapingError,
    ConfigurationError,
    DataError,
    NumericInputError,
    UndefinedMetricError,
    UsageError,
)

__version__ = "0.1.0"
