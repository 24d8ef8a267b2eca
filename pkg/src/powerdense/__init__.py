"""Conductivity reconstruction from interior power densities.

The pipeline: solve the conductivity equation for a few boundary
illuminations, form the power densities H[i,j] = sigma grad(u_i).grad(u_j)
(directly or through modulated Fourier samples), build the pointwise
transition matrix and connection fields, and integrate the orientation
frame and log-conductivity along segments — with slab coverings and
frame transfers handling the 3D case.
"""

__version__ = "0.1.0"

from .acquisition import (  # noqa: E402
    NoiseModel,
    PowerDensityData,
    add_noise,
    coupling_zeta,
    fourier_recover_H,
    load_power_density,
    save_power_density,
    synthesize_H,
)
from .algebra import (  # noqa: E402
    connection_fields,
    connection_fields_closed_form,
    gram_schmidt_T,
    identity_report,
    log_det_sqrt,
    rotation_from_fluxes,
    transition_field,
)
from .errors import (  # noqa: E402
    AnchorError,
    ConfigError,
    CoveringError,
    DataFormatError,
    DomainError,
    IdentityFailure,
    NumericalError,
    PowerDenseError,
    SingularityError,
    SolverError,
)
from .experiments import (  # noqa: E402
    ExperimentConfig,
    Report,
    noise_sweep,
    run_pipeline,
    verify_identities,
)
from .fields import (  # noqa: E402
    MatrixField,
    ScalarField,
    VectorField,
    read_field,
    write_field,
)
from .forward import (  # noqa: E402
    Conductivity,
    Illumination,
    Solution,
    flux_field,
    solve_dirichlet,
)
from .grids import Grid, Segment  # noqa: E402
from .phantoms import make_illuminations, make_phantom  # noqa: E402
from .recon2d import reconstruct_2d, stability_probe_2d, theta_gradient  # noqa: E402
from .recon3d import (  # noqa: E402
    Covering,
    PathPlan,
    Slab,
    build_covering,
    covering_from_data,
    global_reconstruct_3d,
    plan_chain,
    stability_probe_3d,
    transfer_R,
)

__all__ = [
    "__version__",
    "Grid",
    "Segment",
    "ScalarField",
    "VectorField",
    "MatrixField",
    "read_field",
    "write_field",
    "Conductivity",
    "Illumination",
    "Solution",
    "solve_dirichlet",
    "flux_field",
    "PowerDensityData",
    "NoiseModel",
    "synthesize_H",
    "add_noise",
    "coupling_zeta",
    "fourier_recover_H",
    "save_power_density",
    "load_power_density",
    "gram_schmidt_T",
    "transition_field",
    "connection_fields",
    "connection_fields_closed_form",
    "rotation_from_fluxes",
    "log_det_sqrt",
    "identity_report",
    "theta_gradient",
    "reconstruct_2d",
    "stability_probe_2d",
    "Slab",
    "Covering",
    "PathPlan",
    "build_covering",
    "covering_from_data",
    "plan_chain",
    "transfer_R",
    "global_reconstruct_3d",
    "stability_probe_3d",
    "make_phantom",
    "make_illuminations",
    "ExperimentConfig",
    "Report",
    "run_pipeline",
    "noise_sweep",
    "verify_identities",
    "PowerDenseError",
    "ConfigError",
    "DataFormatError",
    "DomainError",
    "SolverError",
    "SingularityError",
    "CoveringError",
    "NumericalError",
    "AnchorError",
    "IdentityFailure",
]
