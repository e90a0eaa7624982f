// SPDX-License-Identifier: Apache-2.0
#include "distillforge/manifest.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace df {

std::string split_name(Split s) {
  switch (s) {
    case Split::Labeled: return "labeled";
    case Split::Unlabeled: return "unlabeled";
    case Split::Heldout: return "heldout";
  }
  return "?";
}

Split split_from_name(const std::string& name) {
  if (name == "labeled") return Split::Labeled;
  if (name == "unlabeled") return Split::Unlabeled;
  if (name == "heldout") return Split::Heldout;
  throw DataError("manifest: unknown split: " + name);
}

void Manifest::validate() const {
  std::set<std::string> ids;
  for (const ManifestRow& r : rows) {
    require_data(!r.utterance_id.empty() && !r.speaker_id.empty(),
                 "manifest: empty utterance or speaker id");
    require_data(ids.insert(r.utterance_id).second,
                 "manifest: duplicate utterance id: " + r.utterance_id);
    if (r.split == Split::Labeled || r.split == Split::Heldout)
      require_data(!r.labels.empty(),
                   "manifest: " + split_name(r.split) + " row lacks labels: " + r.utterance_id);
  }
}

std::vector<const ManifestRow*> Manifest::split_rows(Split s) const {
  std::vector<const ManifestRow*> out;
  for (const ManifestRow& r : rows)
    if (r.split == s) out.push_back(&r);
  return out;
}

std::string Manifest::resolve(const std::string& rel_path) const {
  const std::filesystem::path p(rel_path);
  if (p.is_absolute() || base_dir.empty()) return rel_path;
  return (std::filesystem::path(base_dir) / p).string();
}

static std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  size_t start = 0;
  while (true) {
    const size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
  return out;
}

Manifest load_manifest(const std::string& path) {
  std::ifstream is(path);
  require_data(is.good(), "cannot open manifest: " + path);
  Manifest m;
  m.base_dir = std::filesystem::path(path).parent_path().string();

  std::string line;
  require_data(static_cast<bool>(std::getline(is, line)), "manifest is empty: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> header = split_tabs(line);
  require_data(header.size() >= 6 && header[0] == "utterance_id",
               "manifest: missing or bad header line in " + path);

  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> cols = split_tabs(line);
    require_data(cols.size() >= 6, "manifest: row with fewer than 6 columns in " + path);
    ManifestRow r;
    r.utterance_id = cols[0];
    r.speaker_id = cols[1];
    try {
      r.timestamp = std::stoll(cols[2]);
    } catch (const std::exception&) {
      throw DataError("manifest: bad timestamp for " + r.utterance_id);
    }
    r.audio = cols[3];
    r.labels = cols[4] == "-" ? "" : cols[4];
    r.split = split_from_name(cols[5]);
    r.condition = cols.size() > 6 && !cols[6].empty() ? cols[6] : "clean";
    m.rows.push_back(std::move(r));
  }
  m.validate();
  return m;
}

void save_manifest(const Manifest& manifest, const std::string& path) {
  manifest.validate();
  std::ofstream os(path, std::ios::binary);
  require_data(os.good(), "cannot open manifest for writing: " + path);
  os << "utterance_id\tspeaker_id\ttimestamp\taudio\tlabels\tsplit\tcondition\n";
  for (const ManifestRow& r : manifest.rows) {
    os << r.utterance_id << '\t' << r.speaker_id << '\t' << r.timestamp << '\t' << r.audio
       << '\t' << (r.labels.empty() ? "-" : r.labels) << '\t' << split_name(r.split) << '\t'
       << (r.condition.empty() ? "clean" : r.condition) << '\n';
  }
  require_data(os.good(), "manifest write failed: " + path);
}

LabelMap load_labels(const std::string& path) {
  std::ifstream is(path);
  require_data(is.good(), "cannot open labels file: " + path);
  LabelMap out;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string id;
    size_t count = 0;
    ls >> id >> count;
    require_data(!id.empty(), "labels: bad line in " + path);
    std::vector<int32_t> labels(count);
    for (size_t i = 0; i < count; ++i) {
      require_data(static_cast<bool>(ls >> labels[i]), "labels: short row for " + id);
      require_data(labels[i] >= 0, "labels: negative label for " + id);
    }
    require_data(out.emplace(id, std::move(labels)).second, "labels: duplicate id " + id);
  }
  return out;
}

void save_labels(const LabelMap& labels, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  require_data(os.good(), "cannot open labels file for writing: " + path);
  for (const auto& [id, l] : labels) {
    os << id << '\t' << l.size() << '\t';
    for (size_t i = 0; i < l.size(); ++i) {
      if (i) os << ' ';
      os << l[i];
    }
    os << '\n';
  }
  require_data(os.good(), "labels write failed: " + path);
}

std::vector<int32_t> stack_labels(const std::vector<int32_t>& base_labels, int offset,
                                  int stack) {
  require(stack >= 1, "stack_labels: stack must be >= 1");
  require(offset >= 0 && offset < stack, "stack_labels: offset out of range");
  const size_t T = base_labels.size();
  const size_t usable = T >= static_cast<size_t>(offset) ? T - offset : 0;
  const size_t rows = usable / stack;
  std::vector<int32_t> out(rows);
  for (size_t j = 0; j < rows; ++j)
    out[j] = base_labels[j * stack + offset + stack / 2];
  return out;
}

int num_classes(const LabelMap& labels) {
  int32_t max_label = -1;
  for (const auto& [id, l] : labels)
    for (int32_t v : l) max_label = std::max(max_label, v);
  return static_cast<int>(max_label + 1);
}

}  // namespace df
