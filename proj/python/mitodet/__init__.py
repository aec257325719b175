# Copyright (c) 2026 The mitodet Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Multi-task mitosis detector."""

from ._core import (
    Box,
    BoxDelta,
    CheckpointError,
    ConfigError,
    DatasetError,
    ablate,
    average_precision,
    color_jitter,
    cross_entropy,
    dataset_hash,
    decode,
    default_config,
    encode,
    f1_score,
    focal_loss,
    generate_anchors,
    iou,
    nms,
    parse_config,
    predict,
    synth,
    train,
)

__version__ = "0.1.0"
