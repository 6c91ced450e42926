# Copyright (c) 2026 The sa2net Authors.
#
# This source code is licensed under the Apache License, Version 2.0
# found in the LICENSE file in the root directory of this source tree.

"""Spine bone segmentation with channel/spatial attention and structure-aware decoding."""

import torch  # noqa: F401  (loads libtorch before the extension)

from ._core import (  # noqa: F401
    CLASS_NAMES,
    Error,
    Averaging,
    TTAConfig,
    TrainConfig,
    Model,
    cross_entropy,
    dice_score,
    evaluate,
    generate_phantom,
    gradcheck,
    iou_score,
    load_checkpoint,
    load_dataset,
    make_folds,
    mixing_loss,
    pixel_accuracy,
    predict_image,
    train,
    tta_predict,
    vpi_project,
    write_dataset,
)

__version__ = "0.1.0"
