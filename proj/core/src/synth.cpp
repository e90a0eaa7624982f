// SPDX-License-Identifier: Apache-2.0
#include "distillforge/synth.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "distillforge/featpipe.hpp"

namespace df {

namespace {

constexpr double kTwoPi = 6.28318530717958647692;

struct SpeakerState {
  std::string id;
  double gain = 1.0;
  int64_t next_timestamp = 0;
};

// Two tones per class, spread over 300..7000 Hz so distinct classes light up
// distinct mel bands.
std::pair<double, double> class_tones(int c, int num_classes) {
  const double lo = 300.0, hi = 7000.0;
  const double step = (hi - lo) / (2.0 * num_classes);
  return {lo + (2 * c + 0.5) * step, lo + (2 * c + 1.5) * step};
}

}  // namespace

void SynthSpec::validate() const {
  require(num_classes >= 2 && num_classes <= 0xffff, "synth: need 2 <= classes <= 65535");
  require(num_speakers >= 1, "synth: need at least one speaker");
  require(labeled_minutes > 0 && heldout_minutes > 0, "synth: labeled/heldout must be non-empty");
  require(unlabeled_minutes >= 0, "synth: unlabeled minutes must be >= 0");
  require(utt_min_seconds > 0.05 && utt_max_seconds >= utt_min_seconds,
          "synth: bad utterance length range");
  require(stay_prob > 0 && stay_prob < 1, "synth: stay_prob must be in (0, 1)");
  require(!noise_snr_db.empty(), "synth: need at least one noise level");
  require(sample_rate == 16000, "synth: only 16 kHz supported");
}

std::string synthesize_corpus(const SynthSpec& spec, const std::string& out_dir) {
  spec.validate();
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "audio");

  Rng rng(spec.seed);
  std::vector<SpeakerState> speakers(spec.num_speakers);
  for (int s = 0; s < spec.num_speakers; ++s) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "spk%03d", s);
    speakers[s].id = buf;
    speakers[s].gain = rng.uniform(0.35, 1.0);
  }

  Manifest manifest;
  manifest.base_dir = out_dir;
  LabelMap labels;
  int utt_counter = 0;
  int speaker_cursor = 0;

  auto emit_split = [&](Split split, double minutes) {
    double remaining = minutes * 60.0;
    while (remaining > 0.0) {
      const double secs = std::min(remaining < spec.utt_min_seconds
                                       ? spec.utt_min_seconds
                                       : rng.uniform(spec.utt_min_seconds, spec.utt_max_seconds),
                                   remaining + spec.utt_min_seconds);
      remaining -= secs;
      SpeakerState& spk = speakers[speaker_cursor];
      speaker_cursor = (speaker_cursor + 1) % spec.num_speakers;

      const size_t n_samples = static_cast<size_t>(std::lround(secs * spec.sample_rate));
      const size_t hop = 160;
      const size_t n_spans = n_samples / hop + 2;

      // Markov state per 10 ms span
      std::vector<int> state(n_spans);
      state[0] = static_cast<int>(rng.next_below(spec.num_classes));
      for (size_t i = 1; i < n_spans; ++i) {
        if (rng.next_double() < spec.stay_prob) {
          state[i] = state[i - 1];
        } else {
          int next = static_cast<int>(rng.next_below(spec.num_classes - 1));
          if (next >= state[i - 1]) ++next;
          state[i] = next;
        }
      }

      const double snr_db =
          spec.noise_snr_db[rng.next_below(spec.noise_snr_db.size())];
      const double amp = 0.25 * spk.gain;
      // two equal tones of amplitude `amp`: signal rms = amp
      const double noise_rms = amp * std::pow(10.0, -snr_db / 20.0);
      const double noise_peak = noise_rms * std::sqrt(3.0);  // uniform noise

      std::vector<float> samples(n_samples);
      double phase1 = rng.uniform(0.0, kTwoPi);
      double phase2 = rng.uniform(0.0, kTwoPi);
      for (size_t n = 0; n < n_samples; ++n) {
        const int c = state[n / hop];
        const auto [f1, f2] = class_tones(c, spec.num_classes);
        phase1 += kTwoPi * f1 / spec.sample_rate;
        phase2 += kTwoPi * f2 / spec.sample_rate;
        if (phase1 > kTwoPi) phase1 -= kTwoPi;
        if (phase2 > kTwoPi) phase2 -= kTwoPi;
        const double noise = (2.0 * rng.next_double() - 1.0) * noise_peak;
        samples[n] =
            static_cast<float>(amp * (std::sin(phase1) + std::sin(phase2)) + noise);
      }

      char utt_buf[48];
      std::snprintf(utt_buf, sizeof(utt_buf), "%s_utt%05d", spk.id.c_str(), utt_counter++);
      const std::string utt_id = utt_buf;
      const std::string wav_rel = "audio/" + utt_id + ".wav";
      write_wav((fs::path(out_dir) / wav_rel).string(), samples, spec.sample_rate);

      const bool with_labels = split != Split::Unlabeled;
      if (with_labels) {
        // label per log-mel frame = chain state at the window center
        const size_t n_frames = logmel_num_frames(n_samples);
        std::vector<int32_t> frame_labels(n_frames);
        for (size_t t = 0; t < n_frames; ++t)
          frame_labels[t] = state[std::min(n_spans - 1, (t * hop + 200) / hop)];
        labels.emplace(utt_id, std::move(frame_labels));
      }

      char snr_buf[24];
      std::snprintf(snr_buf, sizeof(snr_buf), "snr%02d", static_cast<int>(snr_db));

      ManifestRow row;
      row.utterance_id = utt_id;
      row.speaker_id = spk.id;
      row.timestamp = spk.next_timestamp++;
      row.audio = wav_rel;
      row.labels = with_labels ? "labels.tsv" : "";
      row.split = split;
      row.condition = snr_buf;
      manifest.rows.push_back(std::move(row));
    }
  };

  emit_split(Split::Labeled, spec.labeled_minutes);
  if (spec.unlabeled_minutes > 0) emit_split(Split::Unlabeled, spec.unlabeled_minutes);
  emit_split(Split::Heldout, spec.heldout_minutes);

  save_labels(labels, (fs::path(out_dir) / "labels.tsv").string());
  const std::string manifest_path = (fs::path(out_dir) / "manifest.tsv").string();
  save_manifest(manifest, manifest_path);
  return manifest_path;
}

}  // namespace df
