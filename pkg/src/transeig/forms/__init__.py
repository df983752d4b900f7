from .assembly import (
    FORMS,
    Forms,
    apply_T,
    assemble,
    assemble_forms,
    coercivity_constant,
    t_matrix,
)
from .coefficients import CoefficientField, constant_field, preset, PRESET_DOMAINS
from .expr import Expr, ExprError, parse_expr
from .quadrature import DEGREE4, QuadratureRule
