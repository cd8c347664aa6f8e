"""Flow-based classification of sub-Riemannian extremals.

The package is organized in layers: an expression language for vector
fields (``srflow.dsl``), time-dependent flows with tangent and adjoint
transport (``srflow.flow``), symbolic and along-curve brackets
(``srflow.brackets``), distributions along curves (``srflow.distribution``),
the normal/abnormal tests (``srflow.extremal``), hyperplane curves and
needle cones (``srflow.contact``) and system files (``srflow.systems``).
"""

from ._backend import BACKEND
from .brackets import BracketTable, RankProfile, ad_infinity_span, bracket_along_curve, lie_bracket
from .contact import (
    HyperplaneCurve,
    NeedleCone,
    ProjectiveCovector,
    cone_contains,
    contact_lift_flow,
    contact_tangency_check,
    generating_function,
    needle_cone,
    separation_certificate,
    supporting_hyperplane,
)
from .distribution import FrameAlongCurve, InvarianceReport, invariance_check, transport_closure
from .dsl import VectorFieldExpr, parse_scalar
from .errors import (
    BlowUpError,
    DomainError,
    IntegrationError,
    ParseError,
    RankError,
    SrflowError,
)
from .extremal import (
    ABNORMAL_CERTIFIED,
    AMBIGUOUS,
    NORMAL_CERTIFIED,
    NOT_ABNORMAL,
    NOT_NORMAL,
    ControlSystem,
    ExtremalCandidate,
    ExtremalVerdict,
    abnormal_test,
    abnormal_test_smooth,
    geodesic_residual,
    integrate_normal_geodesic,
    normal_test,
    normal_test_smooth,
)
from .flow import (
    TDVF,
    PiecewiseControl,
    Trajectory,
    flow_map,
    integrate_adjoint,
    integrate_flow,
    integrate_tangent,
)
from .linalg import numerical_rank
from .systems import classify_candidate, load_corpus, load_system

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "VectorFieldExpr",
    "parse_scalar",
    "PiecewiseControl",
    "TDVF",
    "Trajectory",
    "integrate_flow",
    "integrate_tangent",
    "integrate_adjoint",
    "flow_map",
    "lie_bracket",
    "BracketTable",
    "bracket_along_curve",
    "RankProfile",
    "ad_infinity_span",
    "numerical_rank",
    "FrameAlongCurve",
    "transport_closure",
    "InvarianceReport",
    "invariance_check",
    "ControlSystem",
    "ExtremalCandidate",
    "ExtremalVerdict",
    "abnormal_test",
    "abnormal_test_smooth",
    "normal_test",
    "normal_test_smooth",
    "integrate_normal_geodesic",
    "geodesic_residual",
    "ABNORMAL_CERTIFIED",
    "NORMAL_CERTIFIED",
    "NOT_ABNORMAL",
    "NOT_NORMAL",
    "AMBIGUOUS",
    "ProjectiveCovector",
    "HyperplaneCurve",
    "contact_lift_flow",
    "contact_tangency_check",
    "generating_function",
    "NeedleCone",
    "needle_cone",
    "cone_contains",
    "separation_certificate",
    "supporting_hyperplane",
    "load_system",
    "load_corpus",
    "classify_candidate",
    "SrflowError",
    "ParseError",
    "DomainError",
    "IntegrationError",
    "BlowUpError",
    "RankError",
]
