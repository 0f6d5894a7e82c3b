"""Typical operating scenario extraction for power grids.

Snapshots of node powers are normalized, encoded as Gramian angular
summation field images, pushed through a small convolutional feature
extractor, and clustered with a Gaussian mixture whose EM loop also
drives gradient updates of the network weights. The package ships the
full pipeline, quality metrics, classical baselines, a labeled synthetic
grid generator, and a CLI.
"""

__version__ = "0.1.0"

from .errors import (
    CacheMismatch,
    ConfigError,
    DataError,
    DegenerateData,
    DegenerateSnapshot,
    DtsaError,
    EmptyComponent,
    EmptyInput,
    InfeasibleConfig,
    LengthMismatch,
    NonFiniteLoss,
    NumericalError,
    OrderError,
    ParseError,
    ShapeError,
    SingleCluster,
    SingularCovariance,
    UnknownPreset,
)
from .series import (
    NormalizedSnapshot,
    ScenarioSeries,
    Snapshot,
    TypicalScenario,
    load_series,
    normalize_series,
    normalize_snapshot,
    save_series,
)
from .gasf import (
    GramMatrix,
    PolarSequence,
    ScenarioImage,
    encode_image,
    gasf_closed_form,
    gasf_matrix,
    resize_bilinear,
    to_polar,
)
from .net import (
    ConvLayerSpec,
    GmpSpec,
    NetConfig,
    NetworkState,
    PoolLayerSpec,
    ReluSpec,
    backward,
    compute_features,
    conv_forward,
    conv_out_size,
    desk_config,
    forward,
    gmp_forward,
    init_weights,
    load_weights,
    maxpool_forward,
    param_count_vgg16_head,
    pool_out_size,
    relu,
    save_weights,
    shape_chain,
    vgg13_gmp_config,
)
from .gmm import (
    EmConfig,
    GmmParams,
    e_step,
    em_fit,
    kmeans,
    kmeans_init,
    log_density,
    m_step,
    nll,
)
from .pipeline import (
    DtsaConfig,
    ScenarioCatalog,
    TrainReport,
    combined_loss,
    complexity_estimate,
    dtsa_fit,
    extract_typical_scenarios,
    select_k,
)
from .metrics import (
    PcaModel,
    adjusted_rand_index,
    aic,
    bic,
    pca_fit,
    pca_project,
    silhouette,
)
from .baselines import MetricReport, run_baseline
from .synth import GridConfig, RegimeSpec, generate, preset
