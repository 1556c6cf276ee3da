"""Radio-spectrum cartography through structured CP tensor decomposition."""

__version__ = "0.1.0"

from .cartography import (
    SliceErrors,
    SpectrumMap,
    aggregate_map,
    raster_queries,
    slice_error_trace,
    spectrum_map,
)
from .decomposition import (
    AlsOptions,
    DecompositionResult,
    RegWeights,
    baseline_cp_init,
    baseline_moving_avg,
    baseline_slice_lasso,
    baseline_slice_ls,
    cp_als_init,
    objective,
    structured_als,
)
from .online import (
    OnlineConfig,
    OnlineStep,
    WindowState,
    calibrate_threshold,
    online_step,
    run_online,
    window_update,
)
from .scenario import (
    ChannelModel,
    GroundTruth,
    PerturbConfig,
    PuConfig,
    ScenarioConfig,
    build_channel,
    build_scenario,
    generate_sensed,
    grid_coordinates,
    pathloss_gains,
    rayleigh_perturbation,
    substream,
    synth_factors,
)
from .solvers import (
    LassoResult,
    OmpResult,
    SolverTolerances,
    lasso,
    omp_1sparse,
    pseudo_inverse,
    rls_gamma,
    smoothed_ls,
)
from .tensor_ops import (
    FactorSet,
    cp_reconstruct,
    fold,
    frob_norm,
    khatri_rao,
    load_tensor,
    mode1_product,
    save_tensor,
    unfold,
)
