// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "distillforge/tensor.hpp"

namespace df {

// Raw 16 kHz mono utterance plus the keys the pipeline orders/shards by.
struct Utterance {
  std::string utterance_id;
  std::string speaker_id;
  int64_t timestamp = 0;
  std::vector<float> samples;
};

// Stacked, possibly normalized features for one utterance.
struct FeatureSequence {
  std::string utterance_id;
  int offset = 0;
  Tensor frames;  // T x (stack * mel_bins)
  bool normalized = false;
};

struct LogMelConfig {
  int sample_rate = 16000;
  int window_samples = 400;  // 25 ms
  int hop_samples = 160;     // 10 ms
  int fft_size = 512;
  int mel_bins = 64;
  double fmin = 0.0;
  double fmax = 8000.0;
  double energy_floor = 1e-10;  // filter energies are floored here before log
};

// Frames at a 10 ms hop over a 25 ms Hann window: 512-point magnitude-squared
// spectrum through 64 HTK-style triangular mel filters, natural log.
// Throws DataError if the audio is shorter than one analysis window.
Tensor logmel(const std::vector<float>& samples, const LogMelConfig& cfg = {});

// Number of frames logmel() will produce.
inline size_t logmel_num_frames(size_t samples, const LogMelConfig& cfg = {}) {
  return samples < static_cast<size_t>(cfg.window_samples)
             ? 0
             : (samples - cfg.window_samples) / cfg.hop_samples + 1;
}

// Mel filter center frequencies in Hz (for geometry checks).
std::vector<double> mel_filter_centers(const LogMelConfig& cfg = {});

// Row j of the result concatenates rows 3j+offset .. 3j+offset+2 of the
// input; trailing remainder rows are dropped. offset must be in [0, stack).
Tensor stack_subsample(const Tensor& frames, int offset, int stack = 3);

// Per-dimension global statistics over stacked features.
struct NormStats {
  std::vector<double> mean;
  std::vector<double> variance;
  uint64_t frame_count = 0;
  int floored_dims = 0;  // dimensions whose variance hit the floor

  size_t dim() const { return mean.size(); }
};

// Associative accumulator so per-shard stats merge deterministically.
struct StatsAccumulator {
  std::vector<double> sum;
  std::vector<double> sum_sq;
  uint64_t count = 0;

  void add(const Tensor& frames);
  void merge(const StatsAccumulator& other);
  NormStats finalize(double variance_floor = 1e-8) const;
};

NormStats compute_global_stats(const std::vector<const Tensor*>& corpus);
void apply_mvn(Tensor& frames, const NormStats& stats);

void save_stats(const NormStats& stats, const std::string& path);
NormStats load_stats(const std::string& path);

// Running causal mean over one speaker's stream, per feature dimension.
// Frame t is reduced by the mean of all earlier frames of the speaker plus a
// prior of `prior_weight` pseudo-frames at `prior_mean`; frame t itself is
// excluded. State persists across utterances; timestamps must not decrease.
class CausalMeanNorm {
 public:
  CausalMeanNorm(std::vector<double> prior_mean, double prior_weight);

  void apply(Tensor& frames, int64_t timestamp);

 private:
  std::vector<double> running_sum_;
  double running_weight_;
  int64_t last_timestamp_;
  bool seen_any_;
};

// Stable 64-bit FNV-1a over the id bytes, modulo num_shards.
uint32_t shard_by_speaker(const std::string& speaker_id, uint32_t num_shards);

// ---------------------------------------------------------------------------
// Feature shard file. Little-endian: magic "DFFT", version u16, mel_bins u16,
// stack u8; then per utterance: id len u16 + bytes, offset u8, T u32,
// T x (stack*mel_bins) f32. Record stream runs to end of file.

class FeatureFileWriter {
 public:
  FeatureFileWriter(const std::string& path, int mel_bins = 64, int stack = 3);
  ~FeatureFileWriter();
  void write(const FeatureSequence& seq);
  void close();

 private:
  struct Impl;
  Impl* impl_;
};

std::vector<FeatureSequence> read_feature_file(const std::string& path);

// 16-bit PCM mono WAV. Good enough for the synthetic corpora.
void write_wav(const std::string& path, const std::vector<float>& samples, int sample_rate = 16000);
std::vector<float> read_wav(const std::string& path, int expect_sample_rate = 16000);

}  // namespace df
