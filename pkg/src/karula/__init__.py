"""Personalized federated learning with transport-embedding dissimilarity constraints."""

from .clients import (
    Client,
    ClientData,
    OracleReply,
    RidgeObjective,
    SyntheticConfig,
    generate_synthetic,
    make_clients,
    ridge_exact_solve,
    ridge_gradient,
    ridge_loss,
    smoothness_constant,
)
from .geometry import (
    FeasibleSet,
    GradientMappingValue,
    ProjectionResult,
    dykstra_project,
    gradient_mapping,
    is_feasible,
    merge_zero_groups,
    pair_project,
)
from .otcore import (
    Dataset,
    Embedding,
    TransportPlan,
    barycentric_map,
    client_dissimilarity,
    dissimilarity_matrix,
    embed,
    ground_cost,
    joint_encode,
    solve_ot_exact,
    solve_ot_sinkhorn,
    wasserstein1,
    wasserstein1_1d_oracle,
)
from .server import (
    AlgoConfig,
    RoundLog,
    VRState,
    karula_init,
    karula_round,
    run_strategy,
    sample_participants,
    vr_update,
)

__version__ = "0.1.0"
