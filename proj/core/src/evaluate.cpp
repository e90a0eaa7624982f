// SPDX-License-Identifier: Apache-2.0
#include "distillforge/evaluate.hpp"

#include <cmath>

#include "distillforge/net.hpp"

namespace df {

EvalResult evaluate_model(const ModelParams& model, const std::vector<EvalItem>& items) {
  Network net = Network::from_model(model);
  const size_t la = static_cast<size_t>(model.spec.lookahead_frames);
  const size_t D = static_cast<size_t>(model.spec.num_outputs);
  EvalResult out;
  for (const EvalItem& item : items) {
    const Tensor logits = net.forward(*item.feats);
    const size_t T = logits.rows();
    EvalBucket& bucket = out.by_condition[item.condition];
    for (size_t t = la; t < T; ++t) {
      const int32_t label = item.labels[t - la];
      require_data(label >= 0 && static_cast<size_t>(label) < D,
                   "evaluate: label out of range");
      const float* z = logits.row(t);
      size_t best = 0;
      float zmax = z[0];
      for (size_t i = 1; i < D; ++i)
        if (z[i] > zmax) {
          zmax = z[i];
          best = i;
        }
      double sum = 0.0;
      for (size_t i = 0; i < D; ++i) sum += std::exp(static_cast<double>(z[i]) - zmax);
      const double nll = std::log(sum) + zmax - static_cast<double>(z[label]);
      bucket.frames += 1;
      bucket.errors += best != static_cast<size_t>(label) ? 1 : 0;
      bucket.ce_sum += nll;
    }
  }
  for (const auto& [cond, bucket] : out.by_condition) {
    out.overall.frames += bucket.frames;
    out.overall.errors += bucket.errors;
    out.overall.ce_sum += bucket.ce_sum;
  }
  return out;
}

}  // namespace df
