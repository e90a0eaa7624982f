// SPDX-License-Identifier: Apache-2.0
#include "distillforge/featpipe.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "distillforge/common.hpp"

namespace df {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Iterative radix-2 complex FFT, in place. Sizes are powers of two (512 here);
// hand-rolled so results are bit-stable and dependency-free.
void fft_radix2(std::vector<double>& re, std::vector<double>& im) {
  const size_t n = re.size();
  // bit reversal
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(re[i], re[j]);
      std::swap(im[i], im[j]);
    }
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * kPi / static_cast<double>(len);
    const double wr = std::cos(ang), wi = std::sin(ang);
    for (size_t i = 0; i < n; i += len) {
      double cr = 1.0, ci = 0.0;
      for (size_t k = 0; k < len / 2; ++k) {
        const double ur = re[i + k], ui = im[i + k];
        const double vr = re[i + k + len / 2] * cr - im[i + k + len / 2] * ci;
        const double vi = re[i + k + len / 2] * ci + im[i + k + len / 2] * cr;
        re[i + k] = ur + vr;
        im[i + k] = ui + vi;
        re[i + k + len / 2] = ur - vr;
        im[i + k + len / 2] = ui - vi;
        const double ncr = cr * wr - ci * wi;
        ci = cr * wi + ci * wr;
        cr = ncr;
      }
    }
  }
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Triangular filters with HTK-style mel-domain shape.
// weights[j][b] over the first fft_size/2+1 bins.
std::vector<std::vector<double>> build_filterbank(const LogMelConfig& cfg) {
  const int bins = cfg.fft_size / 2 + 1;
  const double mel_lo = hz_to_mel(cfg.fmin);
  const double mel_hi = hz_to_mel(cfg.fmax);
  std::vector<double> pts(cfg.mel_bins + 2);
  for (int i = 0; i < cfg.mel_bins + 2; ++i)
    pts[i] = mel_lo + (mel_hi - mel_lo) * i / (cfg.mel_bins + 1);

  std::vector<std::vector<double>> w(cfg.mel_bins, std::vector<double>(bins, 0.0));
  for (int b = 0; b < bins; ++b) {
    const double hz = static_cast<double>(b) * cfg.sample_rate / cfg.fft_size;
    const double mel = hz_to_mel(hz);
    for (int j = 0; j < cfg.mel_bins; ++j) {
      const double left = pts[j], center = pts[j + 1], right = pts[j + 2];
      if (mel > left && mel < right) {
        w[j][b] = mel <= center ? (mel - left) / (center - left)
                                : (right - mel) / (right - center);
      }
    }
  }
  return w;
}

}  // namespace

std::vector<double> mel_filter_centers(const LogMelConfig& cfg) {
  const double mel_lo = hz_to_mel(cfg.fmin);
  const double mel_hi = hz_to_mel(cfg.fmax);
  std::vector<double> centers(cfg.mel_bins);
  for (int j = 0; j < cfg.mel_bins; ++j)
    centers[j] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * (j + 1) / (cfg.mel_bins + 1));
  return centers;
}

Tensor logmel(const std::vector<float>& samples, const LogMelConfig& cfg) {
  require_data(samples.size() >= static_cast<size_t>(cfg.window_samples),
               "logmel: audio shorter than one analysis window");
  const size_t n_frames = logmel_num_frames(samples.size(), cfg);
  const int bins = cfg.fft_size / 2 + 1;

  std::vector<double> window(cfg.window_samples);
  for (int i = 0; i < cfg.window_samples; ++i)
    window[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * i / (cfg.window_samples - 1));

  static thread_local std::vector<std::vector<double>> filterbank;
  static thread_local LogMelConfig fb_cfg;
  if (filterbank.empty() || fb_cfg.mel_bins != cfg.mel_bins || fb_cfg.fft_size != cfg.fft_size ||
      fb_cfg.sample_rate != cfg.sample_rate || fb_cfg.fmax != cfg.fmax || fb_cfg.fmin != cfg.fmin) {
    filterbank = build_filterbank(cfg);
    fb_cfg = cfg;
  }

  Tensor out(n_frames, static_cast<size_t>(cfg.mel_bins));
  std::vector<double> re(cfg.fft_size), im(cfg.fft_size), power(bins);
  for (size_t t = 0; t < n_frames; ++t) {
    const size_t start = t * cfg.hop_samples;
    std::fill(re.begin(), re.end(), 0.0);
    std::fill(im.begin(), im.end(), 0.0);
    for (int i = 0; i < cfg.window_samples; ++i)
      re[i] = static_cast<double>(samples[start + i]) * window[i];
    fft_radix2(re, im);
    for (int b = 0; b < bins; ++b) power[b] = re[b] * re[b] + im[b] * im[b];
    float* row = out.row(t);
    for (int j = 0; j < cfg.mel_bins; ++j) {
      const std::vector<double>& w = filterbank[j];
      double e = 0.0;
      for (int b = 0; b < bins; ++b) e += w[b] * power[b];
      row[j] = static_cast<float>(std::log(std::max(e, cfg.energy_floor)));
    }
  }
  out.ensure_finite("logmel output");
  return out;
}

Tensor stack_subsample(const Tensor& frames, int offset, int stack) {
  require(stack >= 1, "stack_subsample: stack must be >= 1");
  require(offset >= 0 && offset < stack, "stack_subsample: offset out of range");
  const size_t T = frames.rows();
  const size_t dim = frames.cols();
  const size_t usable = T >= static_cast<size_t>(offset) ? T - offset : 0;
  const size_t out_rows = usable / stack;
  Tensor out(out_rows, dim * stack);
  for (size_t j = 0; j < out_rows; ++j) {
    float* dst = out.row(j);
    for (int s = 0; s < stack; ++s) {
      const float* src = frames.row(j * stack + offset + s);
      std::copy(src, src + dim, dst + s * dim);
    }
  }
  return out;
}

void StatsAccumulator::add(const Tensor& frames) {
  const size_t dim = frames.cols();
  if (sum.empty()) {
    sum.assign(dim, 0.0);
    sum_sq.assign(dim, 0.0);
  }
  require(sum.size() == dim, "StatsAccumulator: dimension mismatch");
  for (size_t t = 0; t < frames.rows(); ++t) {
    const float* row = frames.row(t);
    for (size_t i = 0; i < dim; ++i) {
      const double v = row[i];
      sum[i] += v;
      sum_sq[i] += v * v;
    }
  }
  count += frames.rows();
}

void StatsAccumulator::merge(const StatsAccumulator& other) {
  if (other.count == 0) return;
  if (sum.empty()) {
    *this = other;
    return;
  }
  require(sum.size() == other.sum.size(), "StatsAccumulator: dimension mismatch");
  for (size_t i = 0; i < sum.size(); ++i) {
    sum[i] += other.sum[i];
    sum_sq[i] += other.sum_sq[i];
  }
  count += other.count;
}

NormStats StatsAccumulator::finalize(double variance_floor) const {
  require_data(count > 0, "stats: empty corpus");
  NormStats s;
  const size_t dim = sum.size();
  s.mean.resize(dim);
  s.variance.resize(dim);
  s.frame_count = count;
  for (size_t i = 0; i < dim; ++i) {
    s.mean[i] = sum[i] / static_cast<double>(count);
    double var = sum_sq[i] / static_cast<double>(count) - s.mean[i] * s.mean[i];
    if (var < variance_floor) {
      var = variance_floor;
      ++s.floored_dims;
    }
    s.variance[i] = var;
  }
  return s;
}

NormStats compute_global_stats(const std::vector<const Tensor*>& corpus) {
  require_data(!corpus.empty(), "compute_global_stats: empty corpus");
  StatsAccumulator acc;
  for (const Tensor* t : corpus) acc.add(*t);
  return acc.finalize();
}

void apply_mvn(Tensor& frames, const NormStats& stats) {
  const size_t dim = frames.cols();
  require(dim == stats.dim(), "apply_mvn: dimension mismatch");
  std::vector<float> mean(dim), inv_std(dim);
  for (size_t i = 0; i < dim; ++i) {
    mean[i] = static_cast<float>(stats.mean[i]);
    inv_std[i] = static_cast<float>(1.0 / std::sqrt(stats.variance[i]));
  }
  for (size_t t = 0; t < frames.rows(); ++t) {
    float* row = frames.row(t);
    for (size_t i = 0; i < dim; ++i) row[i] = (row[i] - mean[i]) * inv_std[i];
  }
}

static constexpr char kStatsMagic[4] = {'D', 'F', 'S', 'T'};

void save_stats(const NormStats& stats, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  require_data(os.good(), "cannot open stats file for writing: " + path);
  io::write_magic(os, kStatsMagic);
  io::write_le<uint16_t>(os, 1);
  io::write_le<uint32_t>(os, static_cast<uint32_t>(stats.dim()));
  for (double v : stats.mean) io::write_le<double>(os, v);
  for (double v : stats.variance) io::write_le<double>(os, v);
  io::write_le<uint64_t>(os, stats.frame_count);
  require_data(os.good(), "write failed: " + path);
}

NormStats load_stats(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require_data(is.good(), "cannot open stats file: " + path);
  io::expect_magic(is, kStatsMagic, "stats file");
  require_data(io::read_le<uint16_t>(is) == 1, "unsupported stats file version");
  const uint32_t dim = io::read_le<uint32_t>(is);
  NormStats s;
  io::read_vec<double>(is, s.mean, dim);
  io::read_vec<double>(is, s.variance, dim);
  s.frame_count = io::read_le<uint64_t>(is);
  return s;
}

CausalMeanNorm::CausalMeanNorm(std::vector<double> prior_mean, double prior_weight)
    : running_sum_(std::move(prior_mean)),
      running_weight_(prior_weight),
      last_timestamp_(0),
      seen_any_(false) {
  require(prior_weight > 0, "CausalMeanNorm: prior_weight must be positive");
  for (double& s : running_sum_) s *= prior_weight;
}

void CausalMeanNorm::apply(Tensor& frames, int64_t timestamp) {
  require_data(!seen_any_ || timestamp >= last_timestamp_,
               "CausalMeanNorm: speaker stream not sorted by timestamp");
  seen_any_ = true;
  last_timestamp_ = timestamp;
  const size_t dim = frames.cols();
  require(dim == running_sum_.size(), "CausalMeanNorm: dimension mismatch");
  for (size_t t = 0; t < frames.rows(); ++t) {
    float* row = frames.row(t);
    const double inv_w = 1.0 / running_weight_;
    for (size_t i = 0; i < dim; ++i) {
      const double x = row[i];
      row[i] = static_cast<float>(x - running_sum_[i] * inv_w);
      running_sum_[i] += x;
    }
    running_weight_ += 1.0;
  }
}

uint32_t shard_by_speaker(const std::string& speaker_id, uint32_t num_shards) {
  require(num_shards >= 1, "shard_by_speaker: num_shards must be >= 1");
  return static_cast<uint32_t>(fnv1a64(speaker_id) % num_shards);
}

// ---------------------------------------------------------------------------
// Feature shard file

static constexpr char kFeatMagic[4] = {'D', 'F', 'F', 'T'};

struct FeatureFileWriter::Impl {
  std::ofstream os;
  int mel_bins;
  int stack;
};

FeatureFileWriter::FeatureFileWriter(const std::string& path, int mel_bins, int stack)
    : impl_(new Impl{std::ofstream(path, std::ios::binary), mel_bins, stack}) {
  require_data(impl_->os.good(), "cannot open feature file for writing: " + path);
  io::write_magic(impl_->os, kFeatMagic);
  io::write_le<uint16_t>(impl_->os, 1);
  io::write_le<uint16_t>(impl_->os, static_cast<uint16_t>(mel_bins));
  io::write_le<uint8_t>(impl_->os, static_cast<uint8_t>(stack));
}

FeatureFileWriter::~FeatureFileWriter() {
  close();
  delete impl_;
}

void FeatureFileWriter::close() {
  if (impl_ && impl_->os.is_open()) impl_->os.close();
}

void FeatureFileWriter::write(const FeatureSequence& seq) {
  require(!seq.utterance_id.empty(), "feature record needs an utterance id");
  require(seq.frames.cols() == static_cast<size_t>(impl_->mel_bins * impl_->stack),
          "feature record dim does not match file header");
  io::write_string(impl_->os, seq.utterance_id);
  io::write_le<uint8_t>(impl_->os, static_cast<uint8_t>(seq.offset));
  io::write_le<uint32_t>(impl_->os, static_cast<uint32_t>(seq.frames.rows()));
  io::write_vec<float>(impl_->os, seq.frames.data());
  require_data(impl_->os.good(), "feature file write failed");
}

std::vector<FeatureSequence> read_feature_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require_data(is.good(), "cannot open feature file: " + path);
  io::expect_magic(is, kFeatMagic, "feature file " + path);
  require_data(io::read_le<uint16_t>(is) == 1, "unsupported feature file version");
  const uint16_t mel_bins = io::read_le<uint16_t>(is);
  const uint8_t stack = io::read_le<uint8_t>(is);
  const size_t dim = static_cast<size_t>(mel_bins) * stack;

  std::vector<FeatureSequence> out;
  while (is.peek() != std::char_traits<char>::eof()) {
    FeatureSequence seq;
    seq.utterance_id = io::read_string(is);
    seq.offset = io::read_le<uint8_t>(is);
    const uint32_t T = io::read_le<uint32_t>(is);
    seq.frames = Tensor(T, dim);
    io::read_vec<float>(is, seq.frames.data(), static_cast<size_t>(T) * dim);
    seq.normalized = true;
    out.push_back(std::move(seq));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Minimal RIFF/WAVE, 16-bit PCM mono

void write_wav(const std::string& path, const std::vector<float>& samples, int sample_rate) {
  std::ofstream os(path, std::ios::binary);
  require_data(os.good(), "cannot open wav for writing: " + path);
  const uint32_t data_bytes = static_cast<uint32_t>(samples.size() * 2);
  os.write("RIFF", 4);
  io::write_le<uint32_t>(os, 36 + data_bytes);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  io::write_le<uint32_t>(os, 16);
  io::write_le<uint16_t>(os, 1);  // PCM
  io::write_le<uint16_t>(os, 1);  // mono
  io::write_le<uint32_t>(os, static_cast<uint32_t>(sample_rate));
  io::write_le<uint32_t>(os, static_cast<uint32_t>(sample_rate * 2));
  io::write_le<uint16_t>(os, 2);
  io::write_le<uint16_t>(os, 16);
  os.write("data", 4);
  io::write_le<uint32_t>(os, data_bytes);
  for (float s : samples) {
    const float clamped = std::min(1.0f, std::max(-1.0f, s));
    io::write_le<int16_t>(os, static_cast<int16_t>(std::lrintf(clamped * 32767.0f)));
  }
  require_data(os.good(), "wav write failed: " + path);
}

std::vector<float> read_wav(const std::string& path, int expect_sample_rate) {
  std::ifstream is(path, std::ios::binary);
  require_data(is.good(), "cannot open wav: " + path);
  io::expect_magic(is, "RIFF", path);
  io::read_le<uint32_t>(is);
  io::expect_magic(is, "WAVE", path);

  uint16_t channels = 0, bits = 0;
  uint32_t rate = 0;
  std::vector<float> samples;
  bool got_fmt = false, got_data = false;
  while (is.peek() != std::char_traits<char>::eof()) {
    char id[4];
    is.read(id, 4);
    if (!is) break;
    const uint32_t size = io::read_le<uint32_t>(is);
    if (std::memcmp(id, "fmt ", 4) == 0) {
      const uint16_t fmt = io::read_le<uint16_t>(is);
      channels = io::read_le<uint16_t>(is);
      rate = io::read_le<uint32_t>(is);
      io::read_le<uint32_t>(is);
      io::read_le<uint16_t>(is);
      bits = io::read_le<uint16_t>(is);
      require_data(fmt == 1 && channels == 1 && bits == 16,
                   "wav must be 16-bit PCM mono: " + path);
      if (size > 16) is.seekg(size - 16, std::ios::cur);
      got_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      require_data(got_fmt, "wav data chunk before fmt: " + path);
      const size_t n = size / 2;
      samples.resize(n);
      for (size_t i = 0; i < n; ++i)
        samples[i] = static_cast<float>(io::read_le<int16_t>(is)) / 32768.0f;
      got_data = true;
    } else {
      is.seekg(size, std::ios::cur);
    }
  }
  require_data(got_data, "wav has no data chunk: " + path);
  require_data(static_cast<int>(rate) == expect_sample_rate,
               "unexpected wav sample rate in " + path);
  return samples;
}

}  // namespace df
