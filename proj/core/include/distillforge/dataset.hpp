// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "distillforge/distopt.hpp"
#include "distillforge/evaluate.hpp"
#include "distillforge/featpipe.hpp"
#include "distillforge/manifest.hpp"
#include "distillforge/targetstore.hpp"

namespace df {

struct ExtractOptions {
  int num_shards = 1;
  int offset = -1;  // -1 extracts all three offsets
  std::string stats_path;
  std::string out_dir;
  double prior_weight = 100.0;  // causal-mean prior pseudo-frames
  int jobs = 0;                 // 0 = one thread per shard, capped by hardware
  LogMelConfig logmel;
};

// Normalization state shared by every extraction run over a corpus: the
// pre-subtraction global mean seeding the causal mean, and the post-
// subtraction global MVN stats. Fitted on the labeled split only.
struct PipelineStats {
  std::vector<double> cms_prior_mean;
  NormStats mvn;
};

void save_pipeline_stats(const PipelineStats& stats, const std::string& path);
PipelineStats load_pipeline_stats(const std::string& path);

// Full frontend over a manifest: log-mel, stacking at the requested offsets,
// causal mean subtraction over speaker streams, then global MVN. Speakers are
// hash-sharded; shard files land in out_dir as feats_off<o>_shard<i>.dfft.
// Global stats are loaded from stats_path if it exists, otherwise fitted on
// the labeled split (offset 0) and written there.
void extract_features(const Manifest& manifest, const ExtractOptions& opts);

std::string feature_shard_path(const std::string& dir, int offset, int shard);

// Extracted features held in memory, keyed by (utterance id, offset).
class FeatureCorpus {
 public:
  void load_dir(const std::string& dir, const std::vector<int>& offsets);

  bool contains(const std::string& id, int offset) const;
  const FeatureSequence& get(const std::string& id, int offset) const;
  size_t size() const { return seqs_.size(); }

 private:
  std::map<std::pair<std::string, int>, FeatureSequence> seqs_;
};

// Assembles the per-phase training sequences run_training consumes.
// Labeled offsets take hard stacked labels; unlabeled takes the teacher's
// top-k soft targets from the store.
TrainingData build_training_data(const Manifest& manifest, const FeatureCorpus& corpus,
                                 const LabelMap& labels, const StoreReader* store,
                                 const std::vector<int>& labeled_offsets,
                                 bool include_unlabeled);

// Evaluation items for a labeled split at offset 0.
std::vector<EvalItem> build_eval_items(const Manifest& manifest, Split split,
                                       const FeatureCorpus& corpus, const LabelMap& labels);

// Loads every labels file referenced by the manifest.
LabelMap load_manifest_labels(const Manifest& manifest);

}  // namespace df
