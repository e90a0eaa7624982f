// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "distillforge/model.hpp"
#include "distillforge/tensor.hpp"

namespace df {

struct EvalItem {
  const Tensor* feats = nullptr;
  std::vector<int32_t> labels;  // per input frame
  std::string condition;        // noise-level tag; bucket for the breakdown
};

struct EvalBucket {
  uint64_t frames = 0;
  uint64_t errors = 0;
  double ce_sum = 0.0;  // summed -log p(label), so buckets aggregate exactly

  double frame_error() const { return frames ? static_cast<double>(errors) / frames : 0.0; }
  double ce() const { return frames ? ce_sum / static_cast<double>(frames) : 0.0; }
};

struct EvalResult {
  EvalBucket overall;
  std::map<std::string, EvalBucket> by_condition;
};

// Frame error and CE under the model's lookahead alignment: logit row t is
// scored against the label of frame t - lookahead.
EvalResult evaluate_model(const ModelParams& model, const std::vector<EvalItem>& items);

}  // namespace df
