// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "distillforge/manifest.hpp"

namespace df {

// Synthetic far-field-style corpus: a Markov chain over C classes emits
// class-conditional tone pairs into 16 kHz audio, with per-utterance additive
// noise at one of the configured SNR levels. The chain state at each frame is
// the frame label. Same seed, same corpus, byte for byte.
struct SynthSpec {
  uint64_t seed = 1;
  int num_classes = 30;
  int num_speakers = 20;
  double labeled_minutes = 5.0;
  double unlabeled_minutes = 30.0;
  double heldout_minutes = 5.0;
  double utt_min_seconds = 3.0;
  double utt_max_seconds = 6.0;
  double stay_prob = 0.9;  // per 10 ms base frame
  std::vector<double> noise_snr_db = {20.0, 10.0, 5.0};
  int sample_rate = 16000;

  void validate() const;
};

// Writes out_dir/audio/*.wav, out_dir/labels.tsv and out_dir/manifest.tsv;
// returns the manifest path.
std::string synthesize_corpus(const SynthSpec& spec, const std::string& out_dir);

}  // namespace df
