// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <barrier>
#include <cstdint>
#include <functional>
#include <memory>
#include <thread>
#include <vector>

#include "distillforge/evaluate.hpp"
#include "distillforge/net.hpp"
#include "distillforge/schedule.hpp"

namespace df {

enum class Protocol { Gtc, Bmuf };

struct GtcConfig {
  double tau = 0x1p-10;  // absolute threshold; 0 transmits exact values
};

struct BmufConfig {
  int block_size = 8;           // minibatches per block
  double block_momentum = -1;   // < 0 selects the 1 - 1/N default
  double block_lr = 1.0;        // zeta
  bool nesterov = true;

  double resolved_momentum(int num_workers) const {
    return block_momentum >= 0 ? block_momentum
                               : 1.0 - 1.0 / static_cast<double>(num_workers);
  }
};

struct TrainerOptions {
  Protocol protocol = Protocol::Gtc;
  int num_workers = 1;
  GtcConfig gtc;
  BmufConfig bmuf;
  int batch_sequences = 16;  // chunks (or utterances) per worker minibatch
  uint64_t seed = 1;
  bool threaded = true;        // false = single-threaded round-robin reference
  bool check_replicas = false; // bit-compare replicas at exchange boundaries
};

// ---------------------------------------------------------------------------
// Deterministic simulated worker pool. Worker bodies may only touch
// worker-local state; every reduction happens on the caller's thread in
// worker-index order, so the threaded and round-robin modes are bit-identical.

class WorkerPool {
 public:
  WorkerPool(int num_workers, bool threaded);
  ~WorkerPool();

  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;

  int size() const { return num_workers_; }
  // Runs body(w) for every worker and returns when all are done.
  void run(const std::function<void(int)>& body);

 private:
  void thread_main(int w);

  int num_workers_;
  bool threaded_;
  std::vector<std::thread> threads_;
  std::unique_ptr<std::barrier<>> start_barrier_;
  std::unique_ptr<std::barrier<>> done_barrier_;
  const std::function<void(int)>* body_ = nullptr;
  std::vector<std::exception_ptr> errors_;
  bool stop_ = false;
};

// ---------------------------------------------------------------------------
// Minibatches. One item is an independent window of an utterance (a chunk or
// the whole sequence). The batch gradient is the sum over items of the
// gradient of that item's mean-over-scored-frames CE.

template <typename Real>
struct SeqRef {
  const TensorT<Real>* feats = nullptr;
  const TargetSeqT<Real>* targets = nullptr;
  size_t begin = 0, end = 0;

  size_t frames() const { return end - begin; }
};

template <typename Real>
using Minibatch = std::vector<SeqRef<Real>>;

template <typename Real>
double batch_gradient(const NetworkT<Real>& net, const Minibatch<Real>& batch,
                      std::vector<Real>& grad, uint64_t* frames_scored = nullptr) {
  grad.assign(net.num_params(), Real(0));
  double loss_sum = 0.0;
  uint64_t frames = 0;
  for (const SeqRef<Real>& item : batch) {
    size_t f = 0;
    loss_sum += net.accumulate_window(*item.feats, *item.targets, item.begin, item.end, grad, &f);
    frames += f;
  }
  if (frames_scored) *frames_scored = frames;
  return loss_sum;
}

// ---------------------------------------------------------------------------
// Gradient threshold compression. Each worker accumulates its lr-scaled
// gradient into a residual and transmits single +-tau quanta for elements
// whose accumulated value crosses the threshold; the quantum is subtracted
// from the residual. tau == 0 degenerates to transmitting the exact
// accumulated value, which makes the protocol equal to synchronous
// summed-gradient SGD.

template <typename Real>
class GtcProtocol {
 public:
  GtcProtocol(size_t n_params, int num_workers, Real tau) : tau_(tau) {
    require(tau >= Real(0), "gtc: tau must be >= 0");
    residuals_.assign(num_workers, std::vector<Real>(n_params, Real(0)));
    messages_.resize(num_workers);
    delta_.assign(n_params, Real(0));
  }

  // Worker-local: fold lr * grad into the residual and emit messages.
  // Safe to call concurrently for distinct w.
  void compress(int w, const std::vector<Real>& grad, Real lr) {
    std::vector<Real>& res = residuals_[w];
    auto& msg = messages_[w];
    msg.clear();
    for (size_t i = 0; i < res.size(); ++i) {
      const Real acc = res[i] + lr * grad[i];
      Real sent = Real(0);
      if (tau_ == Real(0)) {
        sent = acc;
      } else if (acc >= tau_) {
        sent = tau_;
      } else if (acc <= -tau_) {
        sent = -tau_;
      }
      res[i] = acc - sent;
      if (sent != Real(0)) msg.emplace_back(static_cast<uint32_t>(i), sent);
    }
  }

  // Ordered reduction of all messages (fixed worker order). Caller's thread
  // only; the result is the summed update to subtract from every replica.
  const std::vector<Real>& exchange() {
    std::fill(delta_.begin(), delta_.end(), Real(0));
    for (const auto& msg : messages_)
      for (const auto& [i, v] : msg) delta_[i] += v;
    return delta_;
  }

  Real tau() const { return tau_; }
  const std::vector<Real>& residual(int w) const { return residuals_[w]; }
  const std::vector<std::pair<uint32_t, Real>>& messages(int w) const { return messages_[w]; }
  const std::vector<Real>& last_delta() const { return delta_; }

 private:
  Real tau_;
  std::vector<std::vector<Real>> residuals_;
  std::vector<std::vector<std::pair<uint32_t, Real>>> messages_;
  std::vector<Real> delta_;
};

// ---------------------------------------------------------------------------
// Blockwise model-update filtering. Workers run local SGD for a block from a
// shared broadcast model; the mean displacement is filtered through
// block-level momentum, optionally with a Nesterov-like lookahead broadcast.

template <typename Real>
class BmufProtocol {
 public:
  BmufProtocol(const std::vector<Real>& initial, int num_workers, const BmufConfig& cfg)
      : eta_(static_cast<Real>(cfg.resolved_momentum(num_workers))),
        zeta_(static_cast<Real>(cfg.block_lr)),
        nesterov_(cfg.nesterov),
        global_(initial),
        broadcast_(initial),
        delta_(initial.size(), Real(0)) {
    require(cfg.block_size >= 1, "bmuf: block_size must be >= 1");
    require(eta_ >= Real(0) && eta_ < Real(1), "bmuf: block momentum must be in [0, 1)");
    require(zeta_ > Real(0), "bmuf: block lr must be positive");
  }

  // Consumes the worker end-of-block models; advances global state.
  void block_update(const std::vector<std::vector<Real>>& worker_models) {
    const size_t n = global_.size();
    const int N = static_cast<int>(worker_models.size());
    std::vector<Real> mean(n, Real(0));
    for (const auto& m : worker_models)
      for (size_t i = 0; i < n; ++i) mean[i] += m[i];
    const Real inv = Real(1) / static_cast<Real>(N);
    for (size_t i = 0; i < n; ++i) mean[i] *= inv;

    if (eta_ == Real(0) && zeta_ == Real(1)) {
      // W_prev + (mean - W_start) collapses to mean when the broadcast equals
      // the global model; evaluating it directly keeps the degenerate
      // configuration bit-equal to serial SGD / plain model averaging.
      for (size_t i = 0; i < n; ++i) delta_[i] = mean[i] - broadcast_[i];
      global_ = mean;
    } else {
      for (size_t i = 0; i < n; ++i) {
        const Real g = mean[i] - broadcast_[i];
        delta_[i] = eta_ * delta_[i] + zeta_ * g;
        global_[i] += delta_[i];
      }
    }
    if (!all_finite(delta_)) throw NumericError("bmuf: non-finite block delta");
    if (nesterov_) {
      broadcast_.resize(n);
      for (size_t i = 0; i < n; ++i) broadcast_[i] = global_[i] + eta_ * delta_[i];
    } else {
      broadcast_ = global_;
    }
  }

  const std::vector<Real>& global_model() const { return global_; }
  const std::vector<Real>& broadcast_model() const { return broadcast_; }
  const std::vector<Real>& block_delta() const { return delta_; }

 private:
  Real eta_, zeta_;
  bool nesterov_;
  std::vector<Real> global_;
  std::vector<Real> broadcast_;
  std::vector<Real> delta_;
};

// ---------------------------------------------------------------------------
// One GTC round: each worker computes its minibatch gradient and compresses;
// the summed messages update every replica. Replicas must be identical at
// entry (checked under check_replicas).

template <typename Real>
void gtc_round(WorkerPool& pool, std::vector<NetworkT<Real>>& replicas,
               GtcProtocol<Real>& gtc, const std::vector<Minibatch<Real>>& batch_per_worker,
               Real lr, bool check_replicas = false) {
  const int N = pool.size();
  if (check_replicas)
    for (int w = 1; w < N; ++w)
      if (replicas[w].params() != replicas[0].params())
        throw Error("gtc: replica divergence at round start");
  std::vector<std::vector<Real>> grads(N);
  pool.run([&](int w) {
    batch_gradient(replicas[w], batch_per_worker[w], grads[w]);
    gtc.compress(w, grads[w], lr);
  });
  const std::vector<Real>& delta = gtc.exchange();
  for (int w = 0; w < N; ++w) {
    std::vector<Real>& p = replicas[w].params();
    for (size_t i = 0; i < delta.size(); ++i) p[i] -= delta[i];
  }
}

// One BMUF block: workers run local SGD from the current broadcast over their
// block of minibatches, then the protocol folds the mean displacement.
template <typename Real>
void bmuf_block(WorkerPool& pool, std::vector<NetworkT<Real>>& replicas,
                BmufProtocol<Real>& bmuf,
                const std::vector<std::vector<Minibatch<Real>>>& block_per_worker, Real lr) {
  const int N = pool.size();
  for (int w = 0; w < N; ++w) replicas[w].params() = bmuf.broadcast_model();
  pool.run([&](int w) {
    std::vector<Real> grad;
    for (const Minibatch<Real>& batch : block_per_worker[w]) {
      batch_gradient(replicas[w], batch, grad);
      sgd_step(replicas[w].params(), grad, lr);
    }
  });
  std::vector<std::vector<Real>> end_models;
  end_models.reserve(N);
  for (int w = 0; w < N; ++w) end_models.push_back(replicas[w].params());
  bmuf.block_update(end_models);
  for (int w = 0; w < N; ++w) replicas[w].params() = bmuf.global_model();
}

// ---------------------------------------------------------------------------
// Full scheduled run over a plan.

struct TrainingData {
  struct Seq {
    const Tensor* feats = nullptr;
    TargetSeq targets;
  };
  std::vector<Seq> labeled[3];  // by feature offset
  std::vector<Seq> unlabeled;   // offset 0, teacher soft targets
};

struct TrainMetricsRow {
  int sub_epoch = 0;
  uint64_t frames_seen = 0;
  double heldout_ce = 0.0;
  double heldout_frame_error = 0.0;
  double rer_vs_baseline = 0.0;
};

struct RunResult {
  ModelParams final_model;
  std::vector<TrainMetricsRow> metrics;
};

// Executes the plan phase by phase under the chosen protocol. Emits one
// metrics row initially and one after each unlabeled sub-epoch (including the
// labeled passes attached to it). baseline_error <= 0 uses the initial
// held-out frame error as the reduction baseline.
RunResult run_training(const ModelParams& init, const TrainPlan& plan,
                       const TrainingData& data, const std::vector<EvalItem>& heldout,
                       const TrainerOptions& opts, double baseline_error = 0.0);

void write_metrics_csv(const std::vector<TrainMetricsRow>& rows, const std::string& path);
std::vector<TrainMetricsRow> read_metrics_csv(const std::string& path);

}  // namespace df
