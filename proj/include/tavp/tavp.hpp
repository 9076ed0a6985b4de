/* Copyright 2026 The TAVP Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#ifndef TAVP_TAVP_HPP_
#define TAVP_TAVP_HPP_

#include "tavp/autograd.hpp"
#include "tavp/backbone.hpp"
#include "tavp/cdtap.hpp"
#include "tavp/checkpoint.hpp"
#include "tavp/config.hpp"
#include "tavp/datasets.hpp"
#include "tavp/decoder.hpp"
#include "tavp/error.hpp"
#include "tavp/eval.hpp"
#include "tavp/image.hpp"
#include "tavp/losses.hpp"
#include "tavp/mff.hpp"
#include "tavp/model.hpp"
#include "tavp/nn.hpp"
#include "tavp/ops.hpp"
#include "tavp/optim.hpp"
#include "tavp/tensor.hpp"
#include "tavp/trainer.hpp"

#endif  // TAVP_TAVP_HPP_
