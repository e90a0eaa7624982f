// SPDX-License-Identifier: Apache-2.0
#include "distillforge/model.hpp"

#include <fstream>

#include "distillforge/tensor.hpp"

namespace df {

void ModelSpec::validate() const {
  require(input_dim > 0, "ModelSpec: input_dim must be positive");
  require(!layer_sizes.empty(), "ModelSpec: at least one LSTM layer required");
  for (int h : layer_sizes) require(h > 0, "ModelSpec: layer size must be positive");
  require(num_outputs > 0, "ModelSpec: num_outputs must be positive");
  require(lookahead_frames >= 0, "ModelSpec: lookahead_frames must be >= 0");
}

ParamLayout ParamLayout::build(const ModelSpec& spec) {
  spec.validate();
  ParamLayout out;
  size_t off = 0;
  auto add = [&](const std::string& name, size_t len) {
    out.slices.push_back({name, off, len});
    off += len;
  };
  int in_dim = spec.input_dim;
  for (size_t l = 0; l < spec.layer_sizes.size(); ++l) {
    const size_t h = static_cast<size_t>(spec.layer_sizes[l]);
    const size_t gates = 4 * h;
    const std::string base = "lstm" + std::to_string(l);
    add(base + ".fwd.W", gates * static_cast<size_t>(in_dim));
    add(base + ".fwd.R", gates * h);
    add(base + ".fwd.b", gates);
    if (spec.bidirectional) {
      add(base + ".bwd.W", gates * static_cast<size_t>(in_dim));
      add(base + ".bwd.R", gates * h);
      add(base + ".bwd.b", gates);
    }
    in_dim = static_cast<int>(h) * (spec.bidirectional ? 2 : 1);
  }
  add("out.W", static_cast<size_t>(spec.num_outputs) * static_cast<size_t>(in_dim));
  add("out.b", static_cast<size_t>(spec.num_outputs));
  out.total = off;
  return out;
}

const ParamSlice& ParamLayout::find(const std::string& name) const {
  for (const auto& s : slices)
    if (s.name == name) return s;
  throw UsageError("unknown parameter slice: " + name);
}

ModelParams ModelParams::init_random(const ModelSpec& spec, uint64_t seed) {
  ModelParams m;
  m.spec = spec;
  const ParamLayout layout = ParamLayout::build(spec);
  m.params.resize(layout.total);
  Rng rng(seed);
  for (float& p : m.params)
    p = static_cast<float>(rng.uniform(-kInitRange, kInitRange));
  return m;
}

ModelParams ModelParams::init_zero(const ModelSpec& spec) {
  ModelParams m;
  m.spec = spec;
  m.params.assign(ParamLayout::build(spec).total, 0.0f);
  return m;
}

std::pair<float*, size_t> ModelParams::slice(const std::string& name) {
  const ParamSlice& s = layout().find(name);
  return {params.data() + s.offset, s.length};
}

std::pair<const float*, size_t> ModelParams::slice(const std::string& name) const {
  const ParamSlice& s = layout().find(name);
  return {params.data() + s.offset, s.length};
}

static constexpr char kModelMagic[4] = {'D', 'F', 'M', 'D'};
static constexpr uint16_t kModelVersion = 1;

void write_model(std::ostream& os, const ModelParams& model) {
  model.spec.validate();
  require(model.params.size() == ParamLayout::build(model.spec).total,
          "model parameter vector length does not match spec layout");
  io::write_magic(os, kModelMagic);
  io::write_le<uint16_t>(os, kModelVersion);
  io::write_le<uint32_t>(os, static_cast<uint32_t>(model.spec.input_dim));
  io::write_le<uint16_t>(os, static_cast<uint16_t>(model.spec.layer_sizes.size()));
  for (int h : model.spec.layer_sizes) io::write_le<uint32_t>(os, static_cast<uint32_t>(h));
  io::write_le<uint32_t>(os, static_cast<uint32_t>(model.spec.num_outputs));
  io::write_le<uint8_t>(os, model.spec.bidirectional ? 1 : 0);
  io::write_le<uint16_t>(os, static_cast<uint16_t>(model.spec.lookahead_frames));
  io::write_vec<float>(os, model.params);
}

ModelParams read_model(std::istream& is) {
  io::expect_magic(is, kModelMagic, "model checkpoint");
  const uint16_t version = io::read_le<uint16_t>(is);
  require_data(version == kModelVersion, "unsupported model checkpoint version");
  ModelParams m;
  m.spec.input_dim = static_cast<int>(io::read_le<uint32_t>(is));
  const uint16_t n_layers = io::read_le<uint16_t>(is);
  m.spec.layer_sizes.resize(n_layers);
  for (auto& h : m.spec.layer_sizes) h = static_cast<int>(io::read_le<uint32_t>(is));
  m.spec.num_outputs = static_cast<int>(io::read_le<uint32_t>(is));
  m.spec.bidirectional = io::read_le<uint8_t>(is) != 0;
  m.spec.lookahead_frames = io::read_le<uint16_t>(is);
  m.spec.validate();
  io::read_vec<float>(is, m.params, ParamLayout::build(m.spec).total);
  return m;
}

void save_checkpoint(const ModelParams& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  require_data(os.good(), "cannot open checkpoint for writing: " + path);
  write_model(os, model);
  require_data(os.good(), "write failed: " + path);
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require_data(is.good(), "cannot open checkpoint: " + path);
  return read_model(is);
}

}  // namespace df
