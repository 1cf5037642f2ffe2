# Copyright 2026 The BDI Authors
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

"""Python interface to the bdi core library."""

from ._bdi import (
    CollectionError,
    Dataset,
    InputError,
    Model,
    NumericalError,
    ProtocolError,
    SessionManager,
    World,
    dataset_from_fragments,
    default_config,
    evaluate_expert,
    evaluate_model,
    fit,
    reset,
    run_bdi,
)

__all__ = [
    "CollectionError",
    "Dataset",
    "InputError",
    "Model",
    "NumericalError",
    "ProtocolError",
    "SessionManager",
    "World",
    "dataset_from_fragments",
    "default_config",
    "evaluate_expert",
    "evaluate_model",
    "fit",
    "reset",
    "run_bdi",
]
__version__ = "0.1.0"
