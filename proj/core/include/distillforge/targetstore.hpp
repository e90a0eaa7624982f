// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "distillforge/featpipe.hpp"
#include "distillforge/model.hpp"
#include "distillforge/net.hpp"

namespace df {

// The k largest logits of one frame, indices strictly ascending.
struct TopKTargetRecord {
  std::vector<uint16_t> indices;
  std::vector<float> logits;

  size_t k() const { return indices.size(); }
};

// Largest-k selection with deterministic tie-break (lower index wins).
// k > D clamps to D.
TopKTargetRecord select_topk(const float* logits, size_t dim, size_t k);
TopKTargetRecord select_topk(const std::vector<float>& logits, size_t k);

// Dense logits with non-stored positions at `fill`. The default fill is low
// enough that exp underflows to zero in single precision, so the softmax of
// the reconstruction sits entirely on the stored indices.
inline constexpr float kReconstructFill = -1.0e4f;
std::vector<float> reconstruct(const TopKTargetRecord& record, size_t dim,
                               float fill = kReconstructFill);

// Softmax over the stored logits only; equals softmax(reconstruct(...)) when
// exp(fill) underflows. This is the form the trainer consumes.
SparseProbs<float> record_to_sparse_probs(const TopKTargetRecord& record);

// Teacher posteriors for every frame of an utterance. The teacher must be the
// bidirectional model.
std::vector<TopKTargetRecord> generate_targets(const ModelParams& teacher,
                                               const FeatureSequence& features, size_t k);

// ---------------------------------------------------------------------------
// Store file. Little-endian: magic "DFTK", version u16, D u32, k u16,
// enc u8 (0 = f32), index_offset u64 (patched on close); per utterance:
// id len u16 + bytes, T u32, T x k x (u16 index + f32 value), indices
// ascending; trailer at index_offset: utterance count u32,
// (id hash u64, byte offset u64) pairs, magic "DFTE".

struct StoreHeader {
  uint32_t dim = 0;  // senone count D
  uint16_t k = 0;
  uint8_t encoding = 0;
  uint64_t index_offset = 0;

  size_t entries_per_frame() const { return std::min<size_t>(k, dim); }
};

class StoreWriter {
 public:
  StoreWriter(const std::string& path, uint32_t dim, uint16_t k);
  ~StoreWriter();

  void write_utterance(const std::string& utterance_id,
                       const std::vector<TopKTargetRecord>& frames);
  // Writes the trailer and patches the header. Further writes are invalid.
  void close();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

class StoreReader {
 public:
  explicit StoreReader(const std::string& path);
  ~StoreReader();

  const StoreHeader& header() const;
  size_t num_utterances() const;
  bool contains(const std::string& utterance_id) const;
  // Throws DataError for unknown ids. Safe to call from multiple threads.
  std::vector<TopKTargetRecord> read_utterance(const std::string& utterance_id) const;
  std::vector<std::string> utterance_ids() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Concatenates stores with identical (D, k, encoding); indices are rebased.
void merge_stores(const std::vector<std::string>& inputs, const std::string& output);

// Exact byte size a store will occupy (used to validate the format arithmetic).
size_t store_file_size(uint32_t dim, uint16_t k,
                       const std::vector<std::pair<std::string, uint32_t>>& utterances);

}  // namespace df
