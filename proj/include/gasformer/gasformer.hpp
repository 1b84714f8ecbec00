/*
 * Copyright (c) 2026, The Gasformer C++ Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */


#pragma once

#include "gasformer/error.hpp"
#include "gasformer/tensor.hpp"
#include "gasformer/kernels.hpp"
#include "gasformer/autograd.hpp"
#include "gasformer/ops.hpp"
#include "gasformer/params.hpp"
#include "gasformer/config.hpp"
#include "gasformer/nmf.hpp"
#include "gasformer/encoder.hpp"
#include "gasformer/decoder.hpp"
#include "gasformer/network.hpp"
#include "gasformer/image.hpp"
#include "gasformer/labeler.hpp"
#include "gasformer/dataset.hpp"
#include "gasformer/metrics.hpp"
#include "gasformer/optim.hpp"
#include "gasformer/checkpoint.hpp"
#include "gasformer/train.hpp"
#include "gasformer/cli.hpp"
