// SPDX-License-Identifier: Apache-2.0
#include "distillforge/distopt.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace df {

WorkerPool::WorkerPool(int num_workers, bool threaded)
    : num_workers_(num_workers), threaded_(threaded) {
  require(num_workers >= 1, "WorkerPool: need at least one worker");
  if (!threaded_) return;
  start_barrier_ = std::make_unique<std::barrier<>>(num_workers + 1);
  done_barrier_ = std::make_unique<std::barrier<>>(num_workers + 1);
  errors_.resize(num_workers);
  threads_.reserve(num_workers);
  for (int w = 0; w < num_workers; ++w)
    threads_.emplace_back([this, w]() { thread_main(w); });
}

WorkerPool::~WorkerPool() {
  if (!threaded_) return;
  stop_ = true;
  start_barrier_->arrive_and_wait();
  for (auto& t : threads_) t.join();
}

void WorkerPool::thread_main(int w) {
  while (true) {
    start_barrier_->arrive_and_wait();
    if (stop_) return;
    try {
      (*body_)(w);
    } catch (...) {
      errors_[w] = std::current_exception();
    }
    done_barrier_->arrive_and_wait();
  }
}

void WorkerPool::run(const std::function<void(int)>& body) {
  if (!threaded_) {
    // single-threaded reference mode: same bodies, worker-index order
    for (int w = 0; w < num_workers_; ++w) body(w);
    return;
  }
  body_ = &body;
  start_barrier_->arrive_and_wait();
  done_barrier_->arrive_and_wait();
  body_ = nullptr;
  for (auto& e : errors_) {
    if (e) {
      std::exception_ptr err = e;
      e = nullptr;
      std::rethrow_exception(err);
    }
  }
}

// ---------------------------------------------------------------------------

namespace {

struct PhaseBatches {
  // batches[w][b] is worker w's b-th minibatch; equal counts across workers
  std::vector<std::vector<Minibatch<float>>> batches;
  std::vector<uint64_t> frames_per_round;  // summed over workers per batch index

  size_t rounds_per_pass() const { return frames_per_round.size(); }
};

PhaseBatches assemble_phase(const TrainingData& data, const Phase& phase, int num_workers,
                            int batch_sequences, uint64_t shuffle_seed) {
  const std::vector<TrainingData::Seq>* seqs = nullptr;
  if (phase.kind == PhaseKind::Labeled) {
    require(phase.offset >= 0 && phase.offset < 3, "phase: bad labeled offset");
    seqs = &data.labeled[phase.offset];
  } else {
    seqs = &data.unlabeled;
  }
  require_data(!seqs->empty(), "phase has no training data");

  std::vector<SeqRef<float>> items;
  for (const TrainingData::Seq& s : *seqs) {
    const size_t T = s.feats->rows();
    if (T == 0) continue;
    if (phase.bptt == BpttMode::Chunked) {
      const size_t len = static_cast<size_t>(phase.chunk_len);
      for (size_t b = 0; b < T; b += len)
        items.push_back({s.feats, &s.targets, b, std::min(T, b + len)});
    } else {
      items.push_back({s.feats, &s.targets, 0, T});
    }
  }
  Rng rng(shuffle_seed);
  rng.shuffle(items);

  const size_t per_worker = items.size() / static_cast<size_t>(num_workers);
  require_data(per_worker >= 1, "phase data too small for the worker count");
  const size_t n_batches =
      (per_worker + static_cast<size_t>(batch_sequences) - 1) / batch_sequences;

  PhaseBatches out;
  out.batches.assign(num_workers, {});
  for (int w = 0; w < num_workers; ++w) {
    out.batches[w].resize(n_batches);
    for (size_t j = 0; j < per_worker; ++j)
      out.batches[w][j / batch_sequences].push_back(items[j * num_workers + w]);
  }
  out.frames_per_round.assign(n_batches, 0);
  for (int w = 0; w < num_workers; ++w)
    for (size_t b = 0; b < n_batches; ++b)
      for (const SeqRef<float>& item : out.batches[w][b])
        out.frames_per_round[b] += item.frames();
  return out;
}

}  // namespace

RunResult run_training(const ModelParams& init, const TrainPlan& plan,
                       const TrainingData& data, const std::vector<EvalItem>& heldout,
                       const TrainerOptions& opts, double baseline_error) {
  plan.validate();
  require(opts.num_workers >= 1, "run_training: need at least one worker");
  require(opts.batch_sequences >= 1, "run_training: batch_sequences must be >= 1");
  require(!heldout.empty(), "run_training: held-out set required for metrics");

  const int N = opts.num_workers;
  WorkerPool pool(N, opts.threaded);
  Network prototype = Network::from_model(init);
  std::vector<Network> replicas(N, prototype);

  GtcProtocol<float> gtc(prototype.num_params(), N,
                         static_cast<float>(opts.gtc.tau));
  BmufProtocol<float> bmuf(prototype.params(), N, opts.bmuf);

  RunResult result;
  uint64_t frames_seen = 0;

  auto heldout_eval = [&]() {
    return evaluate_model(replicas[0].to_model(), heldout);
  };
  EvalResult initial = heldout_eval();
  const double baseline =
      baseline_error > 0 ? baseline_error : std::max(initial.overall.frame_error(), 1e-12);
  auto emit_row = [&](int sub_epoch, const EvalResult& ev) {
    TrainMetricsRow row;
    row.sub_epoch = sub_epoch;
    row.frames_seen = frames_seen;
    row.heldout_ce = ev.overall.ce();
    row.heldout_frame_error = ev.overall.frame_error();
    row.rer_vs_baseline = relative_error_reduction(baseline, row.heldout_frame_error);
    result.metrics.push_back(row);
  };
  emit_row(0, initial);

  auto run_phase = [&](const Phase& phase, size_t phase_index) {
    const uint64_t shuffle_seed =
        opts.seed ^ (0x9e3779b97f4a7c15ull * (phase_index + 1));
    const PhaseBatches pb =
        assemble_phase(data, phase, N, opts.batch_sequences, shuffle_seed);
    const size_t B = pb.rounds_per_pass();
    const float lr = static_cast<float>(phase.lr);
    uint64_t phase_frames = 0;

    if (opts.protocol == Protocol::Gtc) {
      std::vector<Minibatch<float>> round_batches(N);
      size_t r = 0;
      while (true) {
        if (phase.frame_budget == 0 ? r >= B : phase_frames >= phase.frame_budget) break;
        const size_t b = r % B;
        for (int w = 0; w < N; ++w) round_batches[w] = pb.batches[w][b];
        gtc_round(pool, replicas, gtc, round_batches, lr, opts.check_replicas);
        phase_frames += pb.frames_per_round[b];
        ++r;
      }
    } else {
      const size_t bs = static_cast<size_t>(opts.bmuf.block_size);
      size_t r = 0;
      while (true) {
        if (phase.frame_budget == 0 ? r >= B : phase_frames >= phase.frame_budget) break;
        std::vector<std::vector<Minibatch<float>>> block(N);
        const size_t lim = phase.frame_budget == 0 ? std::min(bs, B - r) : bs;
        for (size_t t = 0; t < lim; ++t) {
          const size_t b = (r + t) % B;
          for (int w = 0; w < N; ++w) block[w].push_back(pb.batches[w][b]);
          phase_frames += pb.frames_per_round[b];
        }
        bmuf_block(pool, replicas, bmuf, block, lr);
        r += lim;
      }
    }
    frames_seen += phase_frames;
  };

  int sub_epoch = 0;
  size_t i = 0;
  while (i < plan.phases.size()) {
    run_phase(plan.phases[i], i);
    if (plan.phases[i].kind == PhaseKind::Unlabeled) {
      ++sub_epoch;
      while (i + 1 < plan.phases.size() && plan.phases[i + 1].kind == PhaseKind::Labeled) {
        ++i;
        run_phase(plan.phases[i], i);
      }
      emit_row(sub_epoch, heldout_eval());
    }
    ++i;
  }

  result.final_model = replicas[0].to_model();
  return result;
}

// ---------------------------------------------------------------------------

void write_metrics_csv(const std::vector<TrainMetricsRow>& rows, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  require_data(os.good(), "cannot open metrics csv for writing: " + path);
  os << "sub_epoch,frames_seen,heldout_ce,heldout_frame_error,"
        "relative_error_reduction_vs_baseline\n";
  char buf[160];
  for (const TrainMetricsRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%llu,%.10g,%.10g,%.10g\n", r.sub_epoch,
                  static_cast<unsigned long long>(r.frames_seen), r.heldout_ce,
                  r.heldout_frame_error, r.rer_vs_baseline);
    os << buf;
  }
  require_data(os.good(), "metrics write failed: " + path);
}

std::vector<TrainMetricsRow> read_metrics_csv(const std::string& path) {
  std::ifstream is(path);
  require_data(is.good(), "cannot open metrics csv: " + path);
  std::string line;
  require_data(static_cast<bool>(std::getline(is, line)), "metrics csv is empty: " + path);
  std::vector<TrainMetricsRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    TrainMetricsRow r;
    unsigned long long frames = 0;
    require_data(std::sscanf(line.c_str(), "%d,%llu,%lf,%lf,%lf", &r.sub_epoch, &frames,
                             &r.heldout_ce, &r.heldout_frame_error,
                             &r.rer_vs_baseline) == 5,
                 "bad metrics row: " + line);
    r.frames_seen = frames;
    rows.push_back(r);
  }
  return rows;
}

}  // namespace df
