// SPDX-License-Identifier: Apache-2.0
#include "distillforge/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <thread>

namespace df {

namespace fs = std::filesystem;

std::string feature_shard_path(const std::string& dir, int offset, int shard) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "feats_off%d_shard%03d.dfft", offset, shard);
  return (fs::path(dir) / buf).string();
}

static constexpr char kPipelineStatsMagic[4] = {'D', 'F', 'P', 'S'};

void save_pipeline_stats(const PipelineStats& stats, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  require_data(os.good(), "cannot open stats file for writing: " + path);
  io::write_magic(os, kPipelineStatsMagic);
  io::write_le<uint16_t>(os, 1);
  io::write_le<uint32_t>(os, static_cast<uint32_t>(stats.cms_prior_mean.size()));
  for (double v : stats.cms_prior_mean) io::write_le<double>(os, v);
  for (double v : stats.mvn.mean) io::write_le<double>(os, v);
  for (double v : stats.mvn.variance) io::write_le<double>(os, v);
  io::write_le<uint64_t>(os, stats.mvn.frame_count);
  require_data(os.good(), "stats write failed: " + path);
}

PipelineStats load_pipeline_stats(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require_data(is.good(), "cannot open stats file: " + path);
  io::expect_magic(is, kPipelineStatsMagic, "pipeline stats " + path);
  require_data(io::read_le<uint16_t>(is) == 1, "unsupported stats version in " + path);
  const uint32_t dim = io::read_le<uint32_t>(is);
  PipelineStats s;
  io::read_vec<double>(is, s.cms_prior_mean, dim);
  io::read_vec<double>(is, s.mvn.mean, dim);
  io::read_vec<double>(is, s.mvn.variance, dim);
  s.mvn.frame_count = io::read_le<uint64_t>(is);
  return s;
}

namespace {

struct SpeakerGroup {
  std::string speaker_id;
  std::vector<const ManifestRow*> rows;  // sorted by timestamp
};

// Shard -> speakers (sorted by id) -> rows (sorted by timestamp).
std::vector<std::vector<SpeakerGroup>> group_by_shard(
    const std::vector<const ManifestRow*>& rows, int num_shards) {
  std::map<std::string, std::vector<const ManifestRow*>> by_speaker;
  for (const ManifestRow* r : rows) by_speaker[r->speaker_id].push_back(r);
  std::vector<std::vector<SpeakerGroup>> shards(num_shards);
  for (auto& [speaker, utts] : by_speaker) {
    std::stable_sort(utts.begin(), utts.end(),
                     [](const ManifestRow* a, const ManifestRow* b) {
                       return a->timestamp < b->timestamp;
                     });
    const uint32_t shard = shard_by_speaker(speaker, static_cast<uint32_t>(num_shards));
    shards[shard].push_back({speaker, std::move(utts)});
  }
  return shards;
}

Tensor utterance_logmel(const Manifest& manifest, const ManifestRow& row,
                        const LogMelConfig& cfg) {
  const std::vector<float> samples = read_wav(manifest.resolve(row.audio), cfg.sample_rate);
  return logmel(samples, cfg);
}

// Runs fn(shard_index) over shards, optionally in parallel. Shards touch
// disjoint outputs, so execution order does not matter.
void for_each_shard(int num_shards, int jobs, const std::function<void(int)>& fn) {
  if (jobs == 0)
    jobs = std::min<int>(num_shards, std::max(1u, std::thread::hardware_concurrency()));
  jobs = std::max(1, std::min(jobs, num_shards));
  if (jobs == 1) {
    for (int s = 0; s < num_shards; ++s) fn(s);
    return;
  }
  std::vector<std::exception_ptr> errors(num_shards);
  std::vector<std::thread> threads;
  for (int j = 0; j < jobs; ++j) {
    threads.emplace_back([&, j]() {
      for (int s = j; s < num_shards; s += jobs) {
        try {
          fn(s);
        } catch (...) {
          errors[s] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

PipelineStats fit_pipeline_stats(const Manifest& manifest, const ExtractOptions& opts) {
  const auto labeled = manifest.split_rows(Split::Labeled);
  require_data(!labeled.empty(),
               "cannot fit normalization stats: manifest has no labeled rows");
  const auto shards = group_by_shard(labeled, opts.num_shards);

  // pass 1: pre-subtraction mean over labeled offset-0 features
  std::vector<StatsAccumulator> pre(opts.num_shards);
  for_each_shard(opts.num_shards, opts.jobs, [&](int s) {
    for (const SpeakerGroup& g : shards[s])
      for (const ManifestRow* row : g.rows)
        pre[s].add(stack_subsample(utterance_logmel(manifest, *row, opts.logmel), 0));
  });
  StatsAccumulator pre_merged;
  for (const auto& acc : pre) pre_merged.merge(acc);
  const NormStats pre_stats = pre_merged.finalize();

  // pass 2: post-subtraction stats with the causal mean running per speaker
  std::vector<StatsAccumulator> post(opts.num_shards);
  for_each_shard(opts.num_shards, opts.jobs, [&](int s) {
    for (const SpeakerGroup& g : shards[s]) {
      CausalMeanNorm cms(pre_stats.mean, opts.prior_weight);
      for (const ManifestRow* row : g.rows) {
        Tensor feats = stack_subsample(utterance_logmel(manifest, *row, opts.logmel), 0);
        cms.apply(feats, row->timestamp);
        post[s].add(feats);
      }
    }
  });
  StatsAccumulator post_merged;
  for (const auto& acc : post) post_merged.merge(acc);

  PipelineStats out;
  out.cms_prior_mean = pre_stats.mean;
  out.mvn = post_merged.finalize();
  return out;
}

}  // namespace

void extract_features(const Manifest& manifest, const ExtractOptions& opts) {
  require(opts.num_shards >= 1, "extract: num_shards must be >= 1");
  require(opts.offset >= -1 && opts.offset < 3, "extract: offset must be 0..2 or -1 for all");
  require(!opts.out_dir.empty(), "extract: output directory required");
  manifest.validate();
  // validate inputs before creating any output
  for (const ManifestRow& r : manifest.rows)
    require_data(fs::exists(manifest.resolve(r.audio)), "missing audio file: " + r.audio);

  PipelineStats stats;
  if (!opts.stats_path.empty() && fs::exists(opts.stats_path)) {
    stats = load_pipeline_stats(opts.stats_path);
  } else {
    stats = fit_pipeline_stats(manifest, opts);
    if (!opts.stats_path.empty()) save_pipeline_stats(stats, opts.stats_path);
  }

  std::vector<int> offsets;
  if (opts.offset < 0)
    offsets = {0, 1, 2};
  else
    offsets = {opts.offset};

  fs::create_directories(opts.out_dir);
  std::vector<const ManifestRow*> all_rows;
  for (const ManifestRow& r : manifest.rows) all_rows.push_back(&r);
  const auto shards = group_by_shard(all_rows, opts.num_shards);

  for_each_shard(opts.num_shards, opts.jobs, [&](int s) {
    std::vector<std::unique_ptr<FeatureFileWriter>> writers;
    for (int o : offsets)
      writers.push_back(std::make_unique<FeatureFileWriter>(
          feature_shard_path(opts.out_dir, o, s), opts.logmel.mel_bins, 3));
    for (const SpeakerGroup& g : shards[s]) {
      std::vector<std::unique_ptr<CausalMeanNorm>> cms;
      for (size_t i = 0; i < offsets.size(); ++i)
        cms.push_back(std::make_unique<CausalMeanNorm>(stats.cms_prior_mean, opts.prior_weight));
      for (const ManifestRow* row : g.rows) {
        const Tensor mel = utterance_logmel(manifest, *row, opts.logmel);
        for (size_t oi = 0; oi < offsets.size(); ++oi) {
          FeatureSequence seq;
          seq.utterance_id = row->utterance_id;
          seq.offset = offsets[oi];
          seq.frames = stack_subsample(mel, offsets[oi]);
          cms[oi]->apply(seq.frames, row->timestamp);
          apply_mvn(seq.frames, stats.mvn);
          seq.normalized = true;
          writers[oi]->write(seq);
        }
      }
    }
    for (auto& w : writers) w->close();
  });
}

void FeatureCorpus::load_dir(const std::string& dir, const std::vector<int>& offsets) {
  require_data(fs::is_directory(dir), "not a feature directory: " + dir);
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("feats_off", 0) == 0 && name.size() > 9) {
      const int o = name[9] - '0';
      if (std::find(offsets.begin(), offsets.end(), o) != offsets.end())
        files.push_back(entry.path().string());
    }
  }
  std::sort(files.begin(), files.end());
  require_data(!files.empty(), "no feature shards for requested offsets in " + dir);
  for (const std::string& f : files)
    for (FeatureSequence& seq : read_feature_file(f)) {
      const auto key = std::make_pair(seq.utterance_id, seq.offset);
      require_data(!seqs_.count(key), "duplicate feature record: " + seq.utterance_id);
      seqs_.emplace(key, std::move(seq));
    }
}

bool FeatureCorpus::contains(const std::string& id, int offset) const {
  return seqs_.count({id, offset}) != 0;
}

const FeatureSequence& FeatureCorpus::get(const std::string& id, int offset) const {
  auto it = seqs_.find({id, offset});
  require_data(it != seqs_.end(),
               "features missing for utterance " + id + " at offset " + std::to_string(offset));
  return it->second;
}

LabelMap load_manifest_labels(const Manifest& manifest) {
  std::vector<std::string> paths;
  for (const ManifestRow& r : manifest.rows)
    if (!r.labels.empty()) paths.push_back(manifest.resolve(r.labels));
  std::sort(paths.begin(), paths.end());
  paths.erase(std::unique(paths.begin(), paths.end()), paths.end());
  LabelMap out;
  for (const std::string& p : paths)
    for (auto& [id, l] : load_labels(p))
      require_data(out.emplace(id, std::move(l)).second,
                   "utterance labeled in more than one labels file: " + id);
  return out;
}

TrainingData build_training_data(const Manifest& manifest, const FeatureCorpus& corpus,
                                 const LabelMap& labels, const StoreReader* store,
                                 const std::vector<int>& labeled_offsets,
                                 bool include_unlabeled) {
  TrainingData data;
  for (const ManifestRow* row : manifest.split_rows(Split::Labeled)) {
    auto lit = labels.find(row->utterance_id);
    require_data(lit != labels.end(), "no labels for utterance " + row->utterance_id);
    for (int o : labeled_offsets) {
      const FeatureSequence& seq = corpus.get(row->utterance_id, o);
      std::vector<int32_t> stacked = stack_labels(lit->second, o);
      require_data(stacked.size() == seq.frames.rows(),
                   "label/feature frame mismatch for " + row->utterance_id);
      data.labeled[o].push_back({&seq.frames, TargetSeq::hard(std::move(stacked))});
    }
  }
  if (include_unlabeled) {
    require(store != nullptr, "unlabeled training requires a target store");
    for (const ManifestRow* row : manifest.split_rows(Split::Unlabeled)) {
      const FeatureSequence& seq = corpus.get(row->utterance_id, 0);
      const std::vector<TopKTargetRecord> records = store->read_utterance(row->utterance_id);
      require_data(records.size() == seq.frames.rows(),
                   "store/feature frame mismatch for " + row->utterance_id);
      std::vector<SparseProbs<float>> soft;
      soft.reserve(records.size());
      for (const TopKTargetRecord& rec : records) soft.push_back(record_to_sparse_probs(rec));
      data.unlabeled.push_back({&seq.frames, TargetSeq::from_soft(std::move(soft))});
    }
  }
  return data;
}

std::vector<EvalItem> build_eval_items(const Manifest& manifest, Split split,
                                       const FeatureCorpus& corpus, const LabelMap& labels) {
  require(split != Split::Unlabeled, "evaluation requires a labeled split");
  std::vector<EvalItem> items;
  for (const ManifestRow* row : manifest.split_rows(split)) {
    auto lit = labels.find(row->utterance_id);
    require_data(lit != labels.end(), "no labels for utterance " + row->utterance_id);
    const FeatureSequence& seq = corpus.get(row->utterance_id, 0);
    EvalItem item;
    item.feats = &seq.frames;
    item.labels = stack_labels(lit->second, 0);
    require_data(item.labels.size() == seq.frames.rows(),
                 "label/feature frame mismatch for " + row->utterance_id);
    item.condition = row->condition.empty() ? "clean" : row->condition;
    items.push_back(std::move(item));
  }
  return items;
}

}  // namespace df
