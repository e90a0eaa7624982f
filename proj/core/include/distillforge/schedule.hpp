// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "distillforge/common.hpp"

namespace df {

enum class PhaseKind { Unlabeled, Labeled };
enum class BpttMode { Chunked, Full };

struct Phase {
  PhaseKind kind = PhaseKind::Unlabeled;
  double lr = 0.0;
  uint64_t frame_budget = 0;  // 0 = exactly one pass over the phase's data
  int offset = 0;             // feature offset, labeled phases only
  BpttMode bptt = BpttMode::Chunked;
  int chunk_len = 32;

  bool operator==(const Phase&) const = default;
};

struct TrainPlan {
  std::vector<Phase> phases;

  void validate() const;
  bool operator==(const TrainPlan&) const = default;
};

struct ScheduleConfig {
  int num_sub_epochs = 4;
  int interleave_every = 1;  // labeled pass after this many unlabeled sub-epochs
  double lr0 = 0.05;
  double gamma = 0.8;  // exponential decay per sub-epoch, in (0, 1]
  double labeled_lr_multiplier = 1.5;
  int chunked_until_sub_epoch = 3;  // 1-based; later sub-epochs use full BPTT
  int chunk_len = 32;
  uint64_t unlabeled_frames = 0;
  uint64_t labeled_frames = 0;
  // A labeled pass always closes the plan after the final unlabeled sub-epoch,
  // even if the interleave counter has not elapsed.
  bool trailing_labeled = true;

  void validate() const;
};

// Unlabeled sub-epoch s (1-based) gets lr0 * gamma^(s-1); a labeled phase
// follows every `interleave_every` sub-epochs at multiplier x the preceding
// unlabeled lr, rotating feature offsets 0 -> 1 -> 2 -> 0. Sub-epochs up to
// chunked_until_sub_epoch (and their labeled passes) use chunked BPTT.
TrainPlan build_plan(const ScheduleConfig& config);

// Forward-only iteration with peek; position is serializable for resume.
class PlanCursor {
 public:
  explicit PlanCursor(const TrainPlan& plan, size_t position = 0)
      : plan_(&plan), pos_(position) {
    require(position <= plan.phases.size(), "PlanCursor: position past end");
  }

  bool done() const { return pos_ >= plan_->phases.size(); }
  const Phase& peek() const {
    require(!done(), "PlanCursor: peek past end");
    return plan_->phases[pos_];
  }
  const Phase& next() {
    require(!done(), "PlanCursor: next past end");
    return plan_->phases[pos_++];
  }
  size_t position() const { return pos_; }

 private:
  const TrainPlan* plan_;
  size_t pos_;
};

// 100 * (baseline - model) / baseline; baseline must be positive.
double relative_error_reduction(double metric_baseline, double metric_model);

// Human-readable plan file, canonical form, exact round-trip.
void save_plan(const TrainPlan& plan, const std::string& path);
TrainPlan load_plan(const std::string& path);
std::string plan_to_string(const TrainPlan& plan);
TrainPlan plan_from_string(const std::string& text);

}  // namespace df
