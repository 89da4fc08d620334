"""Random-feature linearization of feedforward layers and network bundling."""

from .activations import (
    Activation,
    AtomicFT,
    FourierComponent,
    FourierDecomposition,
    QuadratureNonConvergent,
    TabulatedFT,
    TaperWindow,
    UnsupportedClosedForm,
    closed_form_ft,
    decompose,
    decomposition_for,
    eval_activation,
    numeric_decomposition,
    numeric_ft,
    validate_decomposition,
)
from .bundling import (
    BundledNetwork,
    LayeredNetwork,
    SingularSystem,
    UnsupportedActivation,
    bundle_full,
    bundle_once,
    bundle_pooler_classifier,
    bundled_forward,
    closed_form_regression,
    error_propagation_bound,
    fold_following_linear,
    network,
    network_forward,
)
from .layers import (
    FflSpec,
    ReluFeatureMap,
    ShapeMismatch,
    SnnkLayer,
    TaylorSplitKernel,
    UrfFeatureMap,
    ZeroVector,
    arc_cosine_exact,
    arc_cosine_mc,
    ffl_forward,
    gated_residual_block,
    kar_karnick_estimate,
    relu_snnk_features,
    snnk_forward,
    snnk_from_ffl,
    tanh_series_coeffs,
)
from .train import (
    Dataset,
    DivergenceDetected,
    TrainConfig,
    fit_A,
    generate_blobs,
    grad_check,
)
from .urf import (
    FeatureVector,
    LayoutMismatch,
    NotAtomic,
    ProposalMismatch,
    UrfConfig,
    UrfDraws,
    kernel_estimate,
    lambda_feature,
    phi,
    psi,
    sample_draws,
)

__version__ = "0.1.0"
