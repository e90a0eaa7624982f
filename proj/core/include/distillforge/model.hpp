// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "distillforge/common.hpp"

namespace df {

// Network topology. Desk-scale models are small; the reference production
// config (192 inputs, 5x768, 3183 outputs, lookahead 3) must be constructible.
struct ModelSpec {
  int input_dim = 0;
  std::vector<int> layer_sizes;  // hidden units per LSTM layer
  int num_outputs = 0;
  bool bidirectional = false;
  int lookahead_frames = 0;

  void validate() const;
  bool operator==(const ModelSpec&) const = default;
};

// One named contiguous slice of the flat parameter vector.
struct ParamSlice {
  std::string name;
  size_t offset = 0;
  size_t length = 0;
};

// Deterministic flat layout: per layer {fwd.W, fwd.R, fwd.b} and, for
// bidirectional layers, {bwd.W, bwd.R, bwd.b}; then {out.W, out.b}.
// W is (4H x in_dim) row-major, R is (4H x H), b is (4H); gate order i,f,g,o.
struct ParamLayout {
  std::vector<ParamSlice> slices;
  size_t total = 0;

  static ParamLayout build(const ModelSpec& spec);
  const ParamSlice& find(const std::string& name) const;
};

// Flat single-precision parameters plus the spec that shapes them.
struct ModelParams {
  ModelSpec spec;
  std::vector<float> params;

  static ModelParams init_random(const ModelSpec& spec, uint64_t seed);
  static ModelParams init_zero(const ModelSpec& spec);

  ParamLayout layout() const { return ParamLayout::build(spec); }

  // View of one named slice.
  std::pair<float*, size_t> slice(const std::string& name);
  std::pair<const float*, size_t> slice(const std::string& name) const;
};

// Checkpoint file: magic "DFMD", version u16, spec, raw f32 parameters.
// Round-trips bit-exactly.
void save_checkpoint(const ModelParams& model, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

void write_model(std::ostream& os, const ModelParams& model);
ModelParams read_model(std::istream& is);

// Parameter init is uniform in [-0.05, 0.05], seeded.
inline constexpr float kInitRange = 0.05f;

}  // namespace df
