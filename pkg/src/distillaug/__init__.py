"""distillaug: data augmentation with teacher-stabilized training.

Heavily distorted training images can lose their semantic content while
keeping their original hard label; the resulting outlier gradients destabilize
training. This package augments images online and softens that label noise by
adding a truncated KL term against a teacher's predictions on the same
augmented input, so the supervision degrades in step with the image.

Layout: ``imageops`` (transforms), ``policy`` (sampling), ``distill`` (loss),
``smallnet`` (model), ``trainer`` (loop), ``harness`` (experiments + file
formats), ``synthetic`` (glyph corpus), ``cli`` (command line). Hot kernels
live in ``_kernels`` with a compiled backend and a pure-numpy fallback.
"""

from ._kernels import BACKEND as KERNEL_BACKEND
from .distill import KDConfig, kd_loss, kd_loss_grad, softmax, top_k, truncated_kl
from .imageops import (
    DEFAULT_FILL,
    AugmentSpace,
    Image,
    TransformKind,
    TransformParam,
    apply,
    blank_fraction,
    magnitude_to_param,
)
from .policy import (
    PolicyError,
    RandAugmentPolicy,
    SubPolicyList,
    TransformInstance,
    augment,
    derive_rng,
    format_policy,
    parse_policy,
    sample,
    to_tau,
)
from .smallnet import ModelParams, init_params, load_params, save_params
from .trainer import (
    Cosine,
    Dataset,
    ExponentialEvery,
    RMSProp,
    SGDMomentum,
    TrainConfig,
    TrainHistory,
    evaluate,
    lr_at,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "KERNEL_BACKEND",
    "KDConfig",
    "kd_loss",
    "kd_loss_grad",
    "softmax",
    "top_k",
    "truncated_kl",
    "DEFAULT_FILL",
    "AugmentSpace",
    "Image",
    "TransformKind",
    "TransformParam",
    "apply",
    "blank_fraction",
    "magnitude_to_param",
    "PolicyError",
    "RandAugmentPolicy",
    "SubPolicyList",
    "TransformInstance",
    "augment",
    "derive_rng",
    "format_policy",
    "parse_policy",
    "sample",
    "to_tau",
    "ModelParams",
    "init_params",
    "load_params",
    "save_params",
    "Cosine",
    "Dataset",
    "ExponentialEvery",
    "RMSProp",
    "SGDMomentum",
    "TrainConfig",
    "TrainHistory",
    "evaluate",
    "lr_at",
    "train",
    "__version__",
]
