"""Cross-architecture model merging via entropic optimal transport.

Feature- and layer-level correspondences are estimated from activation
statistics with Sinkhorn-solved transport plans, then converted into
weight-space fusion operators applied through masked residual replacement.
"""

from .errors import (
    ConsistencyError,
    ContainerIntegrityError,
    CorruptionError,
    EmptySequenceError,
    FormatError,
    InfeasibilityError,
    InsufficientSamplesError,
    MissingInputError,
    NumericalFailureError,
    OtmergeError,
    UnsupportedScaleError,
    ValidationError,
)
from .fusion import (
    CoordinateMaps,
    ResidualBundle,
    ResidualLayer,
    coordinate_maps,
    fold,
    fuse_layer,
    select_topk,
    transported_operator,
    verify_representation_identity,
)
from .hierarchy import (
    FeaturePlanSet,
    LayerPlan,
    PlanKey,
    feature_plans,
    layer_costs,
    layer_plan,
    mass_curve_report,
    transport_mass_explained,
)
from .sinkhorn import (
    SolverConfig,
    TransportPlan,
    feature_defaults,
    layer_defaults,
    marginal_violation,
    solve,
    solve_auto,
    solve_log_domain,
    solve_streaming,
    transport_objective,
)
from .stats import (
    ActivationScore,
    activation_strength,
    pearson_cost,
    pearson_cost_oracle,
    pool_tokens,
)
from .tensor_store import (
    ActivationMatrix,
    ModelManifest,
    ModuleDims,
    TensorRecord,
    WeightBundle,
    make_record,
    manifest_sha256,
    read_container,
    write_container,
)
from .toylab import (
    PlantedScenario,
    ToyModelSpec,
    generate_toy,
    planted_permutation_case,
    residual_frozen_step,
    run_activations,
)

__version__ = "0.1.0"
