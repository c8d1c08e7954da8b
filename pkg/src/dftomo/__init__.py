"""Double fibration transforms and wave-packet singularity analysis."""

from .errors import *  # noqa: F401,F403
from .geometry import (  # noqa: F401
    BundlePoint,
    ChartGeometry,
    ExitTimes,
    FlowField,
    IntegratorOptions,
    ScalarField,
    Symbol,
    Trajectory,
    constant_direction_field,
    exit_time,
    flow_integrate,
    geodesic_hamiltonian,
    hamiltonian_vector_field,
    poisson_bracket,
    riemannian_cosphere_symbol,
)
from .rays import (  # noqa: F401
    RayFamily,
    disk_geodesic_family,
    lines_perp_axis_family,
    minkowski_chart,
    minkowski_symbol,
    null_ray_family,
    sphere_chart,
    sphere_equator_family,
)
from .fibration import (  # noqa: F401
    CanonicalPoint,
    ConormalFrame,
    Fibration,
    canonical_point,
    conormal_fiber,
    from_defining_function,
    from_ray_family,
    induced_measure,
    random_canonical_points,
    submersion_check,
)
from .phantoms import (  # noqa: F401
    annulus_indicator,
    disk_indicator,
    gaussian_bump,
    half_plane_edge,
)
from .transforms import (  # noqa: F401
    Sinogram,
    TransformSpec,
    codim_k_forward,
    euclidean_radon,
    forward,
    null_bichar_forward,
    ray_forward,
    sinogram,
)
from .bolker import (  # noqa: F401
    BolkerReport,
    bolker_report,
    conjugate_scan,
    fiber_immersion_check,
    immersion_check,
    injectivity_check,
    pseudoconvexity_check,
    pvs_membership,
    variation_field,
)
from .microlocal import (  # noqa: F401
    WavePacketFamily,
    chi_map,
    chi_right_inverse,
    critical_point_solve,
    decay_rate_estimate,
    fbi_inverse,
    fbi_transform,
    kernel_K_lambda,
    propagate_wavefront,
    wavefront_scan,
)
from .recovery import (  # noqa: F401
    Foliation,
    foliation_validate,
    layer_strip,
    tangent_ray_at,
)

__version__ = "0.1.0"
