// SPDX-License-Identifier: Apache-2.0
#include "distillforge/targetstore.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>

namespace df {

TopKTargetRecord select_topk(const float* logits, size_t dim, size_t k) {
  require(k >= 1, "select_topk: k must be >= 1");
  const size_t kk = std::min(k, dim);
  std::vector<uint32_t> idx(dim);
  std::iota(idx.begin(), idx.end(), 0u);
  std::partial_sort(idx.begin(), idx.begin() + kk, idx.end(), [&](uint32_t a, uint32_t b) {
    if (logits[a] != logits[b]) return logits[a] > logits[b];
    return a < b;  // deterministic tie-break
  });
  idx.resize(kk);
  std::sort(idx.begin(), idx.end());
  TopKTargetRecord rec;
  rec.indices.reserve(kk);
  rec.logits.reserve(kk);
  for (uint32_t i : idx) {
    require(i <= 0xffff, "select_topk: index does not fit u16");
    rec.indices.push_back(static_cast<uint16_t>(i));
    rec.logits.push_back(logits[i]);
  }
  return rec;
}

TopKTargetRecord select_topk(const std::vector<float>& logits, size_t k) {
  return select_topk(logits.data(), logits.size(), k);
}

std::vector<float> reconstruct(const TopKTargetRecord& record, size_t dim, float fill) {
  std::vector<float> out(dim, fill);
  for (size_t j = 0; j < record.indices.size(); ++j) {
    const size_t i = record.indices[j];
    require_data(i < dim, "reconstruct: stored index out of range");
    out[i] = record.logits[j];
  }
  return out;
}

SparseProbs<float> record_to_sparse_probs(const TopKTargetRecord& record) {
  SparseProbs<float> out;
  out.indices.assign(record.indices.begin(), record.indices.end());
  out.probs = softmax(record.logits);
  return out;
}

std::vector<TopKTargetRecord> generate_targets(const ModelParams& teacher,
                                               const FeatureSequence& features, size_t k) {
  require(teacher.spec.bidirectional, "generate_targets: teacher must be bidirectional");
  Network net = Network::from_model(teacher);
  const Tensor logits = net.forward(features.frames);
  std::vector<TopKTargetRecord> out;
  out.reserve(logits.rows());
  for (size_t t = 0; t < logits.rows(); ++t)
    out.push_back(select_topk(logits.row(t), logits.cols(), k));
  return out;
}

// ---------------------------------------------------------------------------

static constexpr char kStoreMagic[4] = {'D', 'F', 'T', 'K'};
static constexpr char kTrailerMagic[4] = {'D', 'F', 'T', 'E'};
static constexpr uint16_t kStoreVersion = 1;
// magic + version + D + k + enc + index_offset
static constexpr size_t kHeaderBytes = 4 + 2 + 4 + 2 + 1 + 8;
static constexpr size_t kIndexOffsetPos = 4 + 2 + 4 + 2 + 1;

struct StoreWriter::Impl {
  std::ofstream os;
  std::string path;
  StoreHeader header;
  std::vector<std::pair<uint64_t, uint64_t>> index;  // (id hash, byte offset)
  std::map<uint64_t, std::string> hash_to_id;
  bool closed = false;
};

StoreWriter::StoreWriter(const std::string& path, uint32_t dim, uint16_t k)
    : impl_(new Impl) {
  require(k >= 1 && static_cast<uint32_t>(k) <= dim, "store: need 1 <= k <= D");
  impl_->path = path;
  impl_->header.dim = dim;
  impl_->header.k = k;
  impl_->os.open(path, std::ios::binary);
  require_data(impl_->os.good(), "cannot open store for writing: " + path);
  io::write_magic(impl_->os, kStoreMagic);
  io::write_le<uint16_t>(impl_->os, kStoreVersion);
  io::write_le<uint32_t>(impl_->os, dim);
  io::write_le<uint16_t>(impl_->os, k);
  io::write_le<uint8_t>(impl_->os, 0);
  io::write_le<uint64_t>(impl_->os, 0);  // index offset, patched in close()
}

StoreWriter::~StoreWriter() {
  if (impl_ && !impl_->closed) close();
}

void StoreWriter::write_utterance(const std::string& utterance_id,
                                  const std::vector<TopKTargetRecord>& frames) {
  require(!impl_->closed, "store writer already closed");
  require(!utterance_id.empty(), "store: empty utterance id");
  const uint64_t hash = fnv1a64(utterance_id);
  auto it = impl_->hash_to_id.find(hash);
  require_data(it == impl_->hash_to_id.end(),
               "store: duplicate or colliding utterance id: " + utterance_id);
  impl_->hash_to_id.emplace(hash, utterance_id);

  const size_t epf = impl_->header.entries_per_frame();
  const uint64_t offset = static_cast<uint64_t>(impl_->os.tellp());
  impl_->index.emplace_back(hash, offset);
  io::write_string(impl_->os, utterance_id);
  io::write_le<uint32_t>(impl_->os, static_cast<uint32_t>(frames.size()));
  for (const TopKTargetRecord& rec : frames) {
    require(rec.indices.size() == epf, "store: record entry count must equal min(k, D)");
    uint32_t prev = 0;
    for (size_t j = 0; j < rec.indices.size(); ++j) {
      require(rec.indices[j] < impl_->header.dim, "store: index out of range");
      require(j == 0 || rec.indices[j] > prev, "store: indices must be strictly ascending");
      prev = rec.indices[j];
      io::write_le<uint16_t>(impl_->os, rec.indices[j]);
      io::write_le<float>(impl_->os, rec.logits[j]);
    }
  }
  require_data(impl_->os.good(), "store write failed");
}

void StoreWriter::close() {
  if (impl_->closed) return;
  impl_->closed = true;
  const uint64_t trailer_pos = static_cast<uint64_t>(impl_->os.tellp());
  io::write_le<uint32_t>(impl_->os, static_cast<uint32_t>(impl_->index.size()));
  for (const auto& [hash, offset] : impl_->index) {
    io::write_le<uint64_t>(impl_->os, hash);
    io::write_le<uint64_t>(impl_->os, offset);
  }
  io::write_magic(impl_->os, kTrailerMagic);
  impl_->os.seekp(kIndexOffsetPos);
  io::write_le<uint64_t>(impl_->os, trailer_pos);
  impl_->os.close();
  require_data(impl_->os.good(), "store close failed: " + impl_->path);
}

struct StoreReader::Impl {
  mutable std::ifstream is;
  mutable std::mutex mutex;
  StoreHeader header;
  std::vector<std::pair<uint64_t, uint64_t>> index;  // insertion order
  std::map<uint64_t, uint64_t> by_hash;
  std::string path;
};

StoreReader::StoreReader(const std::string& path) : impl_(new Impl) {
  impl_->path = path;
  impl_->is.open(path, std::ios::binary);
  require_data(impl_->is.good(), "cannot open store: " + path);
  io::expect_magic(impl_->is, kStoreMagic, "store " + path);
  require_data(io::read_le<uint16_t>(impl_->is) == kStoreVersion,
               "unsupported store version in " + path);
  impl_->header.dim = io::read_le<uint32_t>(impl_->is);
  impl_->header.k = io::read_le<uint16_t>(impl_->is);
  impl_->header.encoding = io::read_le<uint8_t>(impl_->is);
  require_data(impl_->header.encoding == 0, "unsupported store encoding");
  impl_->header.index_offset = io::read_le<uint64_t>(impl_->is);
  require_data(impl_->header.index_offset >= kHeaderBytes, "store has no trailer: " + path);

  impl_->is.seekg(static_cast<std::streamoff>(impl_->header.index_offset));
  const uint32_t count = io::read_le<uint32_t>(impl_->is);
  impl_->index.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    const uint64_t hash = io::read_le<uint64_t>(impl_->is);
    const uint64_t offset = io::read_le<uint64_t>(impl_->is);
    impl_->index.emplace_back(hash, offset);
    impl_->by_hash[hash] = offset;
  }
  io::expect_magic(impl_->is, kTrailerMagic, "store trailer of " + path);
  require_data(impl_->is.good(), "truncated store: " + path);
}

StoreReader::~StoreReader() = default;

const StoreHeader& StoreReader::header() const { return impl_->header; }
size_t StoreReader::num_utterances() const { return impl_->index.size(); }

bool StoreReader::contains(const std::string& utterance_id) const {
  return impl_->by_hash.count(fnv1a64(utterance_id)) != 0;
}

std::vector<std::string> StoreReader::utterance_ids() const {
  std::lock_guard<std::mutex> lock(impl_->mutex);
  std::vector<std::string> ids;
  ids.reserve(impl_->index.size());
  for (const auto& [hash, offset] : impl_->index) {
    impl_->is.clear();
    impl_->is.seekg(static_cast<std::streamoff>(offset));
    ids.push_back(io::read_string(impl_->is));
  }
  return ids;
}

std::vector<TopKTargetRecord> StoreReader::read_utterance(
    const std::string& utterance_id) const {
  auto it = impl_->by_hash.find(fnv1a64(utterance_id));
  require_data(it != impl_->by_hash.end(), "utterance not in store: " + utterance_id);

  std::lock_guard<std::mutex> lock(impl_->mutex);
  impl_->is.clear();
  impl_->is.seekg(static_cast<std::streamoff>(it->second));
  const std::string stored_id = io::read_string(impl_->is);
  require_data(stored_id == utterance_id, "store index hash collision on " + utterance_id);
  const uint32_t T = io::read_le<uint32_t>(impl_->is);
  const size_t epf = impl_->header.entries_per_frame();
  std::vector<TopKTargetRecord> out(T);
  for (uint32_t t = 0; t < T; ++t) {
    out[t].indices.resize(epf);
    out[t].logits.resize(epf);
    for (size_t j = 0; j < epf; ++j) {
      out[t].indices[j] = io::read_le<uint16_t>(impl_->is);
      out[t].logits[j] = io::read_le<float>(impl_->is);
    }
  }
  require_data(impl_->is.good(), "truncated store record in " + impl_->path);
  return out;
}

void merge_stores(const std::vector<std::string>& inputs, const std::string& output) {
  require(!inputs.empty(), "merge_stores: no inputs");
  std::vector<std::unique_ptr<StoreReader>> readers;
  for (const std::string& in : inputs) readers.push_back(std::make_unique<StoreReader>(in));
  const StoreHeader& h0 = readers[0]->header();
  for (const auto& r : readers)
    require_data(r->header().dim == h0.dim && r->header().k == h0.k &&
                     r->header().encoding == h0.encoding,
                 "merge_stores: incompatible store headers");
  StoreWriter writer(output, h0.dim, h0.k);
  for (size_t i = 0; i < readers.size(); ++i)
    for (const std::string& id : readers[i]->utterance_ids())
      writer.write_utterance(id, readers[i]->read_utterance(id));
  writer.close();
}

size_t store_file_size(uint32_t dim, uint16_t k,
                       const std::vector<std::pair<std::string, uint32_t>>& utterances) {
  const size_t epf = std::min<size_t>(k, dim);
  size_t total = kHeaderBytes;
  for (const auto& [id, frames] : utterances)
    total += 2 + id.size() + 4 + static_cast<size_t>(frames) * epf * 6;
  total += 4 + utterances.size() * 16 + 4;  // trailer
  return total;
}

}  // namespace df
