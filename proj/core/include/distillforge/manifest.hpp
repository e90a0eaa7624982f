// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "distillforge/common.hpp"

namespace df {

enum class Split { Labeled, Unlabeled, Heldout };

std::string split_name(Split s);
Split split_from_name(const std::string& name);

struct ManifestRow {
  std::string utterance_id;
  std::string speaker_id;
  int64_t timestamp = 0;
  std::string audio;      // path relative to the manifest directory
  std::string labels;     // frame-label file, empty for unlabeled rows
  Split split = Split::Unlabeled;
  std::string condition;  // noise tag, "clean" when unset
};

// Tab-separated, one row per utterance, header line required. Columns:
// utterance_id speaker_id timestamp audio labels split [condition].
// "-" marks an absent labels path.
struct Manifest {
  std::string base_dir;  // directory of the manifest file
  std::vector<ManifestRow> rows;

  void validate() const;
  std::vector<const ManifestRow*> split_rows(Split s) const;
  std::string resolve(const std::string& rel_path) const;
};

Manifest load_manifest(const std::string& path);
void save_manifest(const Manifest& manifest, const std::string& path);

// Frame labels at the 10 ms base-frame rate, keyed by utterance id. Text
// format: "utterance_id<TAB>T<TAB>l0 l1 ... l{T-1}".
using LabelMap = std::map<std::string, std::vector<int32_t>>;

LabelMap load_labels(const std::string& path);
void save_labels(const LabelMap& labels, const std::string& path);

// Label of stacked frame j is the base label at the center row 3j+offset+1.
std::vector<int32_t> stack_labels(const std::vector<int32_t>& base_labels, int offset,
                                  int stack = 3);

int num_classes(const LabelMap& labels);

}  // namespace df
