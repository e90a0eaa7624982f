// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "distillforge/model.hpp"
#include "distillforge/tensor.hpp"

namespace df {

// ---------------------------------------------------------------------------
// Small dense kernels. Deterministic fixed-order loops; contiguous innermost
// dimension so -O3 vectorizes them.

template <typename Real>
inline Real dot(size_t n, const Real* a, const Real* b) {
  Real s = Real(0);
  for (size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

template <typename Real>
inline void axpy(size_t n, Real alpha, const Real* x, Real* y) {
  for (size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// ---------------------------------------------------------------------------
// Softmax. Max-subtraction keeps exp in range for any finite input.

template <typename Real>
inline void softmax_inplace(Real* x, size_t n) {
  Real m = x[0];
  for (size_t i = 1; i < n; ++i) m = std::max(m, x[i]);
  Real sum = Real(0);
  for (size_t i = 0; i < n; ++i) {
    x[i] = std::exp(x[i] - m);
    sum += x[i];
  }
  const Real inv = Real(1) / sum;
  for (size_t i = 0; i < n; ++i) x[i] *= inv;
}

template <typename Real>
inline std::vector<Real> softmax(std::vector<Real> logits) {
  require(!logits.empty(), "softmax: empty input");
  softmax_inplace(logits.data(), logits.size());
  return logits;
}

// ---------------------------------------------------------------------------
// Targets. One entry per input frame. Soft targets are kept sparse (index,
// prob) so reconstructed top-k teacher distributions stay cheap at large D.

template <typename Real>
struct SparseProbs {
  std::vector<int32_t> indices;
  std::vector<Real> probs;
};

template <typename Real>
struct TargetSeqT {
  std::vector<int32_t> labels;             // hard path; empty if soft
  std::vector<SparseProbs<Real>> soft;     // soft path; empty if hard

  bool is_hard() const { return soft.empty(); }
  size_t size() const { return is_hard() ? labels.size() : soft.size(); }

  static TargetSeqT hard(std::vector<int32_t> l) {
    TargetSeqT t;
    t.labels = std::move(l);
    return t;
  }
  static TargetSeqT from_soft(std::vector<SparseProbs<Real>> s) {
    TargetSeqT t;
    t.soft = std::move(s);
    return t;
  }
  // Dense probability vector for one frame (handy for tests).
  static SparseProbs<Real> dense_frame(const std::vector<Real>& probs) {
    SparseProbs<Real> s;
    s.indices.resize(probs.size());
    for (size_t i = 0; i < probs.size(); ++i) s.indices[i] = static_cast<int32_t>(i);
    s.probs = probs;
    return s;
  }
};

using TargetSeq = TargetSeqT<float>;

// ---------------------------------------------------------------------------
// Cross entropy against hard labels or (sparse) soft distributions.
//
// Scored rows are t in [lookahead, T); row t is scored against target
// t - lookahead, so the first `lookahead` rows are unscored. loss is the mean
// over scored frames of -sum_i target_i * log softmax(logits_t)_i and
// dlogits = (softmax - target) / frames_scored on scored rows, zero elsewhere.

template <typename Real>
struct LossResult {
  double loss = 0.0;
  TensorT<Real> dlogits;
  size_t frames_scored = 0;
};

template <typename Real>
LossResult<Real> ce_loss(const TensorT<Real>& logits, const TargetSeqT<Real>& targets,
                         int lookahead = 0) {
  const size_t T = logits.rows();
  const size_t D = logits.cols();
  require(lookahead >= 0, "ce_loss: negative lookahead");
  const size_t la = static_cast<size_t>(lookahead);
  const size_t scored = T > la ? T - la : 0;
  require(targets.size() == scored,
          "ce_loss: target count does not match scored frame count");

  LossResult<Real> out;
  out.dlogits = TensorT<Real>(T, D);
  out.frames_scored = scored;
  if (scored == 0) return out;

  const Real inv_n = Real(1) / static_cast<Real>(scored);
  double loss = 0.0;
  std::vector<Real> p(D);
  for (size_t t = la; t < T; ++t) {
    const size_t ti = t - la;
    const Real* z = logits.row(t);
    // log-softmax with max subtraction
    Real m = z[0];
    for (size_t i = 1; i < D; ++i) m = std::max(m, z[i]);
    Real sum = Real(0);
    for (size_t i = 0; i < D; ++i) {
      p[i] = std::exp(z[i] - m);
      sum += p[i];
    }
    const Real inv_sum = Real(1) / sum;
    const double log_sum = std::log(static_cast<double>(sum)) + static_cast<double>(m);
    Real* dl = out.dlogits.row(t);
    for (size_t i = 0; i < D; ++i) dl[i] = p[i] * inv_sum * inv_n;

    if (targets.is_hard()) {
      const int32_t y = targets.labels[ti];
      require(y >= 0 && static_cast<size_t>(y) < D, "ce_loss: label out of range");
      loss += log_sum - static_cast<double>(z[y]);
      dl[y] -= inv_n;
    } else {
      const SparseProbs<Real>& q = targets.soft[ti];
      for (size_t j = 0; j < q.indices.size(); ++j) {
        const int32_t i = q.indices[j];
        require(i >= 0 && static_cast<size_t>(i) < D, "ce_loss: target index out of range");
        loss += static_cast<double>(q.probs[j]) * (log_sum - static_cast<double>(z[i]));
        dl[i] -= q.probs[j] * inv_n;
      }
    }
  }
  out.loss = loss / static_cast<double>(scored);
  if (!std::isfinite(out.loss)) throw NumericError("ce_loss: non-finite loss");
  return out;
}

// ---------------------------------------------------------------------------
// LSTM stack with a linear output layer. Standard cell, no peepholes or
// projection; gate order i,f,g,o. Bidirectional layers run an equal-width
// reverse pass and concatenate. Recurrent state starts at zero for every
// window, which is what makes chunked windows independent sequences.

template <typename Real>
class NetworkT {
 public:
  NetworkT(ModelSpec spec, std::vector<Real> params)
      : spec_(std::move(spec)), layout_(ParamLayout::build(spec_)), params_(std::move(params)) {
    require(params_.size() == layout_.total, "parameter vector length mismatch");
  }

  static NetworkT init_random(const ModelSpec& spec, uint64_t seed) {
    const ParamLayout layout = ParamLayout::build(spec);
    std::vector<Real> p(layout.total);
    Rng rng(seed);
    for (Real& v : p) v = static_cast<Real>(rng.uniform(-kInitRange, kInitRange));
    return NetworkT(spec, std::move(p));
  }

  static NetworkT from_model(const ModelParams& m) {
    std::vector<Real> p(m.params.begin(), m.params.end());
    return NetworkT(m.spec, std::move(p));
  }

  ModelParams to_model() const {
    ModelParams m;
    m.spec = spec_;
    m.params.assign(params_.begin(), params_.end());
    return m;
  }

  const ModelSpec& spec() const { return spec_; }
  const ParamLayout& layout() const { return layout_; }
  std::vector<Real>& params() { return params_; }
  const std::vector<Real>& params() const { return params_; }
  size_t num_params() const { return layout_.total; }

  TensorT<Real> forward(const TensorT<Real>& features) const {
    Activations acts;
    TensorT<Real> logits = forward_window(features, 0, features.rows(), &acts);
    logits.ensure_finite("forward logits");
    return logits;
  }

  struct Backward {
    std::vector<Real> grad;
    double loss = 0.0;
    size_t frames_scored = 0;
  };

  Backward backward_full(const TensorT<Real>& features, const TargetSeqT<Real>& targets) const {
    Backward out;
    out.grad.assign(layout_.total, Real(0));
    out.loss = accumulate_window(features, targets, 0, features.rows(), out.grad,
                                 &out.frames_scored);
    if (!all_finite(out.grad)) throw NumericError("backward_full: non-finite gradient");
    return out;
  }

  struct ChunkGrad {
    size_t chunk_index = 0;  // position of the chunk within the sequence
    size_t begin = 0, end = 0;
    Backward back;
  };

  // Splits [0, T) into consecutive chunks of chunk_len (last may be shorter),
  // each processed as an independent sequence with zero initial state, in a
  // seeded random order. Values do not depend on the order.
  std::vector<ChunkGrad> backward_chunked(const TensorT<Real>& features,
                                          const TargetSeqT<Real>& targets, size_t chunk_len,
                                          uint64_t rng_seed) const {
    require(chunk_len >= 1, "backward_chunked: chunk_len must be >= 1");
    const size_t T = features.rows();
    const size_t n_chunks = T == 0 ? 0 : (T + chunk_len - 1) / chunk_len;
    Rng rng(rng_seed);
    std::vector<uint32_t> order = rng.permutation(static_cast<uint32_t>(n_chunks));
    std::vector<ChunkGrad> out;
    out.reserve(n_chunks);
    for (uint32_t ci : order) {
      ChunkGrad cg;
      cg.chunk_index = ci;
      cg.begin = static_cast<size_t>(ci) * chunk_len;
      cg.end = std::min(T, cg.begin + chunk_len);
      cg.back.grad.assign(layout_.total, Real(0));
      cg.back.loss = accumulate_window(features, targets, cg.begin, cg.end, cg.back.grad,
                                       &cg.back.frames_scored);
      if (!all_finite(cg.back.grad)) throw NumericError("backward_chunked: non-finite gradient");
      out.push_back(std::move(cg));
    }
    return out;
  }

  // Sums chunk contributions in canonical chunk order, so the result is
  // bit-identical for any processing permutation.
  static Backward sum_chunks(const std::vector<ChunkGrad>& chunks, size_t n_params) {
    std::vector<const ChunkGrad*> sorted;
    sorted.reserve(chunks.size());
    for (const auto& c : chunks) sorted.push_back(&c);
    std::sort(sorted.begin(), sorted.end(),
              [](const ChunkGrad* a, const ChunkGrad* b) { return a->chunk_index < b->chunk_index; });
    Backward out;
    out.grad.assign(n_params, Real(0));
    double weighted = 0.0;
    for (const ChunkGrad* c : sorted) {
      for (size_t i = 0; i < n_params; ++i) out.grad[i] += c->back.grad[i];
      weighted += c->back.loss * static_cast<double>(c->back.frames_scored);
      out.frames_scored += c->back.frames_scored;
    }
    out.loss = out.frames_scored ? weighted / static_cast<double>(out.frames_scored) : 0.0;
    return out;
  }

  // Treats [begin, end) as an independent sequence, adds its parameter
  // gradient into grad_acc and returns the window's mean loss. Targets index
  // the full sequence: row t is scored against target t - lookahead, for
  // t - lookahead within [begin, end - lookahead).
  double accumulate_window(const TensorT<Real>& features, const TargetSeqT<Real>& targets,
                           size_t begin, size_t end, std::vector<Real>& grad_acc,
                           size_t* frames_scored) const {
    const size_t len = end - begin;
    if (len == 0) {
      if (frames_scored) *frames_scored = 0;
      return 0.0;
    }
    Activations acts;
    TensorT<Real> logits = forward_window(features, begin, end, &acts);
    logits.ensure_finite("forward logits");

    // window-local targets
    const size_t la = static_cast<size_t>(spec_.lookahead_frames);
    TargetSeqT<Real> local;
    if (targets.is_hard()) {
      require(targets.labels.size() >= (len > la ? end - la : begin),
              "targets shorter than scored window");
      if (len > la)
        local.labels.assign(targets.labels.begin() + begin, targets.labels.begin() + (end - la));
    } else {
      require(targets.soft.size() >= (len > la ? end - la : begin),
              "targets shorter than scored window");
      if (len > la)
        local.soft.assign(targets.soft.begin() + begin, targets.soft.begin() + (end - la));
      else
        local.soft = {};
    }
    LossResult<Real> lr = ce_loss(logits, local, spec_.lookahead_frames);
    if (frames_scored) *frames_scored = lr.frames_scored;
    if (lr.frames_scored > 0) backward_window(acts, lr.dlogits, grad_acc);
    return lr.loss;
  }

 private:
  struct DirState {
    TensorT<Real> gates;  // len x 4H, post-activation (i,f,g,o)
    TensorT<Real> c;      // len x H
    TensorT<Real> h;      // len x H
  };
  struct LayerActs {
    DirState fwd, bwd;
  };
  struct Activations {
    std::vector<TensorT<Real>> inputs;  // per layer: len x in_dim
    std::vector<LayerActs> layers;
    size_t len = 0;
  };

  struct LayerView {
    const Real *W, *R, *b;
    size_t in_dim, h;
  };

  LayerView layer_view(size_t l, bool backward_dir) const {
    const std::string base = "lstm" + std::to_string(l) + (backward_dir ? ".bwd" : ".fwd");
    const ParamSlice& w = layout_.find(base + ".W");
    const ParamSlice& r = layout_.find(base + ".R");
    const ParamSlice& bb = layout_.find(base + ".b");
    const size_t h = static_cast<size_t>(spec_.layer_sizes[l]);
    return {params_.data() + w.offset, params_.data() + r.offset, params_.data() + bb.offset,
            w.length / (4 * h), h};
  }

  static Real sigmoid(Real x) { return Real(1) / (Real(1) + std::exp(-x)); }

  // One direction of one layer over a window of `len` frames.
  void run_direction(const TensorT<Real>& x, const LayerView& lv, bool reverse,
                     DirState& st) const {
    const size_t len = x.rows();
    const size_t H = lv.h;
    const size_t G = 4 * H;
    st.gates = TensorT<Real>(len, G);
    st.c = TensorT<Real>(len, H);
    st.h = TensorT<Real>(len, H);

    // input contribution for all frames: gates[t][j] = b[j] + dot(W[j], x[t])
    for (size_t t = 0; t < len; ++t) {
      const Real* xt = x.row(t);
      Real* g = st.gates.row(t);
      for (size_t j = 0; j < G; ++j)
        g[j] = lv.b[j] + dot(lv.in_dim, lv.W + j * lv.in_dim, xt);
    }

    std::vector<Real> h_prev(H, Real(0)), c_prev(H, Real(0));
    for (size_t step = 0; step < len; ++step) {
      const size_t t = reverse ? len - 1 - step : step;
      Real* g = st.gates.row(t);
      if (step > 0) {
        for (size_t j = 0; j < G; ++j) g[j] += dot(H, lv.R + j * H, h_prev.data());
      }
      Real* ct = st.c.row(t);
      Real* ht = st.h.row(t);
      for (size_t k = 0; k < H; ++k) {
        const Real vi = sigmoid(g[k]);
        const Real vf = sigmoid(g[H + k]);
        const Real vg = std::tanh(g[2 * H + k]);
        const Real vo = sigmoid(g[3 * H + k]);
        g[k] = vi;
        g[H + k] = vf;
        g[2 * H + k] = vg;
        g[3 * H + k] = vo;
        ct[k] = vf * c_prev[k] + vi * vg;
        ht[k] = vo * std::tanh(ct[k]);
      }
      std::copy(ct, ct + H, c_prev.begin());
      std::copy(ht, ht + H, h_prev.begin());
    }
  }

  TensorT<Real> forward_window(const TensorT<Real>& features, size_t begin, size_t end,
                               Activations* acts) const {
    require(features.cols() == static_cast<size_t>(spec_.input_dim),
            "forward: feature dim does not match model input_dim");
    require(end <= features.rows() && begin <= end, "forward: bad window");
    const size_t len = end - begin;
    const size_t L = spec_.layer_sizes.size();
    acts->len = len;
    acts->inputs.resize(L);
    acts->layers.resize(L);

    TensorT<Real> x(len, features.cols());
    for (size_t t = 0; t < len; ++t)
      std::copy(features.row(begin + t), features.row(begin + t) + features.cols(), x.row(t));

    for (size_t l = 0; l < L; ++l) {
      acts->inputs[l] = x;
      const LayerView f = layer_view(l, false);
      run_direction(x, f, false, acts->layers[l].fwd);
      const size_t H = f.h;
      if (spec_.bidirectional) {
        const LayerView b = layer_view(l, true);
        run_direction(x, b, true, acts->layers[l].bwd);
        TensorT<Real> nx(len, 2 * H);
        for (size_t t = 0; t < len; ++t) {
          std::copy(acts->layers[l].fwd.h.row(t), acts->layers[l].fwd.h.row(t) + H, nx.row(t));
          std::copy(acts->layers[l].bwd.h.row(t), acts->layers[l].bwd.h.row(t) + H,
                    nx.row(t) + H);
        }
        x = std::move(nx);
      } else {
        x = acts->layers[l].fwd.h;
      }
    }

    // output layer
    const ParamSlice& ws = layout_.find("out.W");
    const ParamSlice& bs = layout_.find("out.b");
    const Real* W = params_.data() + ws.offset;
    const Real* b = params_.data() + bs.offset;
    const size_t D = static_cast<size_t>(spec_.num_outputs);
    const size_t in = x.cols();
    TensorT<Real> logits(len, D);
    for (size_t t = 0; t < len; ++t) {
      const Real* xt = x.row(t);
      Real* zt = logits.row(t);
      for (size_t j = 0; j < D; ++j) zt[j] = b[j] + dot(in, W + j * in, xt);
    }
    acts->inputs.push_back(std::move(x));  // inputs[L] = output-layer input
    return logits;
  }

  void backprop_direction(const TensorT<Real>& x, const LayerView& lv, bool reverse,
                          const DirState& st, const TensorT<Real>& dh_out, size_t h_col_offset,
                          Real* dW, Real* dR, Real* db, TensorT<Real>& dx) const {
    const size_t len = x.rows();
    const size_t H = lv.h;
    std::vector<Real> dh_rec(H, Real(0)), dc_rec(H, Real(0));
    std::vector<Real> dz(4 * H);
    for (size_t step = 0; step < len; ++step) {
      const size_t t = reverse ? step : len - 1 - step;  // reverse of processing order
      const bool first_step = reverse ? (t == len - 1) : (t == 0);
      const Real* g = st.gates.row(t);
      const Real* ct = st.c.row(t);
      const Real* c_prev = first_step ? nullptr : st.c.row(reverse ? t + 1 : t - 1);
      const Real* h_prev = first_step ? nullptr : st.h.row(reverse ? t + 1 : t - 1);
      for (size_t k = 0; k < H; ++k) {
        const Real vi = g[k], vf = g[H + k], vg = g[2 * H + k], vo = g[3 * H + k];
        const Real tc = std::tanh(ct[k]);
        const Real dh = dh_out.at(t, h_col_offset + k) + dh_rec[k];
        const Real dvo = dh * tc;
        const Real dc = dh * vo * (Real(1) - tc * tc) + dc_rec[k];
        const Real cp = c_prev ? c_prev[k] : Real(0);
        dz[k] = dc * vg * vi * (Real(1) - vi);                    // d z_i
        dz[H + k] = dc * cp * vf * (Real(1) - vf);                // d z_f
        dz[2 * H + k] = dc * vi * (Real(1) - vg * vg);            // d z_g
        dz[3 * H + k] = dvo * vo * (Real(1) - vo);                // d z_o
        dc_rec[k] = dc * vf;
      }
      const Real* xt = x.row(t);
      Real* dxt = dx.row(t);
      std::fill(dh_rec.begin(), dh_rec.end(), Real(0));
      for (size_t j = 0; j < 4 * H; ++j) {
        const Real a = dz[j];
        if (a == Real(0)) continue;
        axpy(lv.in_dim, a, xt, dW + j * lv.in_dim);
        if (h_prev) axpy(H, a, h_prev, dR + j * H);
        db[j] += a;
        axpy(lv.in_dim, a, lv.W + j * lv.in_dim, dxt);
        axpy(H, a, lv.R + j * H, dh_rec.data());
      }
    }
  }

  void backward_window(const Activations& acts, const TensorT<Real>& dlogits,
                       std::vector<Real>& grad) const {
    const size_t len = acts.len;
    const size_t L = spec_.layer_sizes.size();
    const size_t D = static_cast<size_t>(spec_.num_outputs);
    const TensorT<Real>& top_in = acts.inputs[L];
    const size_t top_dim = top_in.cols();

    const ParamSlice& ws = layout_.find("out.W");
    const ParamSlice& bs = layout_.find("out.b");
    const Real* W = params_.data() + ws.offset;
    Real* dW = grad.data() + ws.offset;
    Real* db = grad.data() + bs.offset;

    TensorT<Real> dx(len, top_dim);
    for (size_t t = 0; t < len; ++t) {
      const Real* dl = dlogits.row(t);
      const Real* xt = top_in.row(t);
      Real* dxt = dx.row(t);
      for (size_t j = 0; j < D; ++j) {
        const Real a = dl[j];
        if (a == Real(0)) continue;
        axpy(top_dim, a, xt, dW + j * top_dim);
        db[j] += a;
        axpy(top_dim, a, W + j * top_dim, dxt);
      }
    }

    for (size_t li = L; li-- > 0;) {
      const TensorT<Real>& x = acts.inputs[li];
      TensorT<Real> dx_below(len, x.cols());
      const LayerView f = layer_view(li, false);
      {
        const std::string base = "lstm" + std::to_string(li) + ".fwd";
        backprop_direction(x, f, false, acts.layers[li].fwd, dx, 0,
                           grad.data() + layout_.find(base + ".W").offset,
                           grad.data() + layout_.find(base + ".R").offset,
                           grad.data() + layout_.find(base + ".b").offset, dx_below);
      }
      if (spec_.bidirectional) {
        const LayerView b = layer_view(li, true);
        const std::string base = "lstm" + std::to_string(li) + ".bwd";
        backprop_direction(x, b, true, acts.layers[li].bwd, dx, f.h,
                           grad.data() + layout_.find(base + ".W").offset,
                           grad.data() + layout_.find(base + ".R").offset,
                           grad.data() + layout_.find(base + ".b").offset, dx_below);
      }
      dx = std::move(dx_below);
    }
  }

  ModelSpec spec_;
  ParamLayout layout_;
  std::vector<Real> params_;
};

using Network = NetworkT<float>;

// params <- params - lr * grad
template <typename Real>
void sgd_step(std::vector<Real>& params, const std::vector<Real>& grad, Real lr) {
  require(lr > Real(0), "sgd_step: lr must be positive");
  require(params.size() == grad.size(), "sgd_step: size mismatch");
  for (size_t i = 0; i < params.size(); ++i) params[i] -= lr * grad[i];
  if (!all_finite(params)) throw NumericError("sgd_step: non-finite parameters");
}

inline void sgd_step(ModelParams& model, const std::vector<float>& grad, float lr) {
  sgd_step(model.params, grad, lr);
}

}  // namespace df
