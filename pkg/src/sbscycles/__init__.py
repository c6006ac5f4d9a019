"""Numerical detection and verification of special Bohr-Sommerfeld cycles.

Models are CP1 with O(d), the quadric CP1 x CP1 with O(1,1) and CP2 with O(2).
The potential is phi_s = -ln|s| for a holomorphic section s; its critical
points, gradient separatrices and calibration form Im rho_s drive the search.
"""
from .critical import (
    CriticalInventory,
    CriticalPoint,
    Genericity,
    LagrangeSystem,
    classify,
    detect_degenerate,
    find_critical_points,
    section_is_generic,
    solve_quadric_lagrange,
)
from .cycles import (
    FamilySpec,
    ParametrizedReport,
    SBSCycle,
    ScanReport,
    VerificationReport,
    assemble_cycles,
    count_sbs,
    cycle_distance,
    scan_moduli,
    verify_cycle,
    verify_parametrized,
)
from .errors import (
    ChartError,
    ConfigurationError,
    DivisorError,
    GeometryError,
    IntegrationError,
    InvariantViolation,
    PreconditionError,
    ReconstructionError,
    SBSError,
    StabilityError,
    UnsupportedModelError,
)
from .flow import (
    Separatrix,
    SphereMesh,
    Trajectory,
    integrate_flow,
    reconstruct_base_sphere,
    trace_separatrices,
)
from .geometry import (
    PolarizedModel,
    ProjPoint,
    TangentVector,
    cp1,
    cp2,
    enclosed_area,
    norm_sq,
    quadric,
    symplectic_density,
    transition,
)
from .potential import (
    PotentialSample,
    Section,
    fermat,
    grad_phi,
    hessian_phi,
    im_rho,
    loop_integral_im_rho,
    phi,
    random_section,
)

__version__ = "0.1.0"
