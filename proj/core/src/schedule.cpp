// SPDX-License-Identifier: Apache-2.0
#include "distillforge/schedule.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace df {

void ScheduleConfig::validate() const {
  require(num_sub_epochs >= 1, "schedule: num_sub_epochs must be >= 1");
  require(interleave_every >= 1 && interleave_every <= num_sub_epochs,
          "schedule: need 1 <= interleave_every <= num_sub_epochs");
  require(lr0 > 0, "schedule: lr0 must be positive");
  require(gamma > 0 && gamma <= 1, "schedule: gamma must be in (0, 1]");
  require(labeled_lr_multiplier >= 1, "schedule: labeled_lr_multiplier must be >= 1");
  require(chunked_until_sub_epoch >= 0 && chunked_until_sub_epoch <= num_sub_epochs,
          "schedule: chunked_until_sub_epoch must be <= num_sub_epochs");
  require(chunk_len >= 1, "schedule: chunk_len must be >= 1");
}

void TrainPlan::validate() const {
  double prev_unlabeled_lr = 0.0;
  bool seen_unlabeled = false;
  int rotation = 0;
  for (const Phase& p : phases) {
    require(p.lr > 0, "plan: phase lr must be positive");
    require(p.chunk_len >= 1, "plan: chunk_len must be >= 1");
    if (p.kind == PhaseKind::Unlabeled) {
      require(!seen_unlabeled || p.lr <= prev_unlabeled_lr,
              "plan: unlabeled lrs must be non-increasing");
      prev_unlabeled_lr = p.lr;
      seen_unlabeled = true;
    } else {
      require(p.offset == rotation % 3, "plan: labeled offsets must rotate 0,1,2");
      ++rotation;
    }
  }
}

TrainPlan build_plan(const ScheduleConfig& config) {
  config.validate();
  TrainPlan plan;
  int rotation = 0;
  for (int s = 1; s <= config.num_sub_epochs; ++s) {
    const double lr_u = config.lr0 * std::pow(config.gamma, s - 1);
    const BpttMode bptt =
        s <= config.chunked_until_sub_epoch ? BpttMode::Chunked : BpttMode::Full;
    Phase u;
    u.kind = PhaseKind::Unlabeled;
    u.lr = lr_u;
    u.frame_budget = config.unlabeled_frames;
    u.bptt = bptt;
    u.chunk_len = config.chunk_len;
    plan.phases.push_back(u);

    const bool interleave = (s % config.interleave_every) == 0;
    const bool trailing = config.trailing_labeled && s == config.num_sub_epochs;
    if (interleave || trailing) {
      Phase l;
      l.kind = PhaseKind::Labeled;
      l.lr = lr_u * config.labeled_lr_multiplier;
      l.frame_budget = config.labeled_frames;
      l.offset = rotation % 3;
      ++rotation;
      l.bptt = bptt;
      l.chunk_len = config.chunk_len;
      plan.phases.push_back(l);
    }
  }
  plan.validate();
  return plan;
}

double relative_error_reduction(double metric_baseline, double metric_model) {
  require(metric_baseline > 0, "relative_error_reduction: baseline must be positive");
  return 100.0 * (metric_baseline - metric_model) / metric_baseline;
}

// ---------------------------------------------------------------------------
// Plan file: one `phase` line per phase, canonical key order, %.17g floats so
// values survive the round trip exactly.

static std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string plan_to_string(const TrainPlan& plan) {
  std::ostringstream os;
  os << "# distillforge training plan\n";
  os << "version 1\n";
  os << "phases " << plan.phases.size() << "\n";
  for (const Phase& p : plan.phases) {
    os << "phase " << (p.kind == PhaseKind::Unlabeled ? "unlabeled" : "labeled");
    os << " lr=" << format_double(p.lr);
    os << " frames=" << p.frame_budget;
    if (p.kind == PhaseKind::Labeled) os << " offset=" << p.offset;
    os << " bptt=" << (p.bptt == BpttMode::Chunked ? "chunked" : "full");
    if (p.bptt == BpttMode::Chunked) os << " chunk_len=" << p.chunk_len;
    os << "\n";
  }
  return os.str();
}

TrainPlan plan_from_string(const std::string& text) {
  TrainPlan plan;
  std::istringstream is(text);
  std::string line;
  size_t declared = 0;
  bool have_count = false;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "version") {
      int v = 0;
      ls >> v;
      require_data(v == 1, "plan file: unsupported version");
    } else if (word == "phases") {
      ls >> declared;
      have_count = true;
    } else if (word == "phase") {
      Phase p;
      std::string kind;
      ls >> kind;
      if (kind == "unlabeled")
        p.kind = PhaseKind::Unlabeled;
      else if (kind == "labeled")
        p.kind = PhaseKind::Labeled;
      else
        throw DataError("plan file: unknown phase kind: " + kind);
      std::string kv;
      while (ls >> kv) {
        const size_t eq = kv.find('=');
        require_data(eq != std::string::npos, "plan file: expected key=value, got " + kv);
        const std::string key = kv.substr(0, eq);
        const std::string val = kv.substr(eq + 1);
        if (key == "lr")
          p.lr = std::stod(val);
        else if (key == "frames")
          p.frame_budget = std::stoull(val);
        else if (key == "offset")
          p.offset = std::stoi(val);
        else if (key == "bptt")
          p.bptt = val == "full" ? BpttMode::Full : BpttMode::Chunked;
        else if (key == "chunk_len")
          p.chunk_len = std::stoi(val);
        else
          throw DataError("plan file: unknown key: " + key);
      }
      plan.phases.push_back(p);
    } else {
      throw DataError("plan file: unknown directive: " + word);
    }
  }
  require_data(!have_count || declared == plan.phases.size(),
               "plan file: phase count mismatch");
  plan.validate();
  return plan;
}

void save_plan(const TrainPlan& plan, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  require_data(os.good(), "cannot open plan file for writing: " + path);
  os << plan_to_string(plan);
  require_data(os.good(), "plan write failed: " + path);
}

TrainPlan load_plan(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require_data(is.good(), "cannot open plan file: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return plan_from_string(ss.str());
}

}  // namespace df
