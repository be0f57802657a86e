"""Parametric texture synthesis from feature-correlation statistics.

A texture is described by Gram matrices of convolutional feature maps (or
reduced statistics: PCA-compressed Gram matrices, channel means) and new
samples are generated by L-BFGS over the pixels of a white-noise image until
the statistics match.
"""

from .errors import (
    DeadFilterError,
    DimensionError,
    GramtexError,
    NumericError,
    ParseError,
    UsageError,
    ValidationError,
)
from .gram import (
    PCABasis,
    Statistic,
    TextureDescriptor,
    count_parameters,
    describe,
    export_descriptor_vector,
    gram_matrix,
    layer_loss,
    layer_loss_grad,
    load_descriptor,
    mean_statistic,
    pca_fit,
    project_features,
    save_descriptor,
    total_loss,
)
from .imageio import (
    VGG19_PREPROCESS,
    Image8,
    PreprocessSpec,
    load_ppm,
    postprocess,
    preprocess,
    save_ppm,
)
from .network import (
    ActivationSet,
    LayerSpec,
    Network,
    NetworkSpec,
    backward_to_pixels,
    build_vgg19_spec,
    forward,
    load_weights,
    measure_mean_activations,
    random_init,
    rescale_weights,
    save_weights,
)
from .optim import LbfgsOptions, OptimResult, OptimizerAbort, lbfgs_minimize
from .synth import (
    SynthesisAbort,
    SynthesisConfig,
    SynthesisTrace,
    init_white_noise,
    loss_and_pixel_grad,
    synthesize,
    write_trace_csv,
)
from .tensor import (
    ConvWeights,
    PoolContext,
    conv3x3_backward_input,
    conv3x3_forward,
    pool2x2_backward,
    pool2x2_forward,
    relu_backward,
    relu_forward,
)

__version__ = "0.1.0"
