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

#include "issp/checkpoint.hpp"
#include "issp/config.hpp"
#include "issp/data.hpp"
#include "issp/errors.hpp"
#include "issp/gradcheck.hpp"
#include "issp/image.hpp"
#include "issp/layers.hpp"
#include "issp/metrics.hpp"
#include "issp/model.hpp"
#include "issp/optim.hpp"
#include "issp/pruning.hpp"
#include "issp/rng.hpp"
#include "issp/serialize.hpp"
#include "issp/sparse.hpp"
#include "issp/tensor.hpp"
#include "issp/train.hpp"
