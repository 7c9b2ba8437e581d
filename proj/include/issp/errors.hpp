// Copyright 2025 The issp Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace issp {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor / kernel geometry.
struct DimensionMismatch : Error { using Error::Error; };
struct ShapeMismatch : Error { using Error::Error; };
struct BadGeometry : Error { using Error::Error; };
struct BadRange : Error { using Error::Error; };

// Pruning state machine.
struct EmptyLayer : Error { using Error::Error; };
struct AlreadyFrozen : Error { using Error::Error; };
struct NotFrozen : Error { using Error::Error; };
struct MaskWeightDisagreement : Error { using Error::Error; };

// Configuration and data ingestion.
struct ConfigError : Error { using Error::Error; };
struct DataError : Error { using Error::Error; };

// Image decoding.
struct BadMagic : Error { using Error::Error; };
struct BadMaxval : Error { using Error::Error; };
struct Truncated : Error { using Error::Error; };
struct BadChannels : Error { using Error::Error; };
struct NonSquare : Error { using Error::Error; };
struct TooSmall : Error { using Error::Error; };
struct ImageTooSmall : Error { using Error::Error; };

// Metrics.
struct CropTooLarge : Error { using Error::Error; };

// Benchmarking.
struct CorrectnessFailure : Error { using Error::Error; };

}  // namespace issp
