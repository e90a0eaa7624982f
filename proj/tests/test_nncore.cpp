// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <filesystem>
#include <sstream>

#include "distillforge/model.hpp"
#include "distillforge/net.hpp"
#include "doctest.h"

using namespace df;

namespace {

using DNet = NetworkT<double>;
using DTensor = TensorT<double>;
using DTargets = TargetSeqT<double>;

// Independent oracle: central finite differences of the mean-CE loss over
// the full sequence, probing every parameter.
std::vector<double> finite_diff_gradient(DNet& net, const DTensor& feats,
                                         const DTargets& targets, double h = 1e-5) {
  std::vector<double> g(net.num_params());
  auto loss_at = [&]() {
    std::vector<double> scratch(net.num_params(), 0.0);
    // gradient accumulation is unused; we only want the loss value
    DNet::Backward b = net.backward_full(feats, targets);
    return b.loss;
  };
  (void)loss_at;
  for (size_t i = 0; i < g.size(); ++i) {
    const double orig = net.params()[i];
    net.params()[i] = orig + h;
    const double lp = net.backward_full(feats, targets).loss;
    net.params()[i] = orig - h;
    const double lm = net.backward_full(feats, targets).loss;
    net.params()[i] = orig;
    g[i] = (lp - lm) / (2.0 * h);
  }
  return g;
}

double rel_err(double a, double b) {
  return std::fabs(a - b) / std::max(std::fabs(a) + std::fabs(b), 1e-3);
}

DTensor random_features(Rng& rng, size_t T, size_t dim, double scale = 1.0) {
  DTensor x(T, dim);
  for (double& v : x.data()) v = rng.uniform(-scale, scale);
  return x;
}

DTargets random_hard_targets(Rng& rng, size_t n, int num_classes) {
  std::vector<int32_t> labels(n);
  for (auto& l : labels) l = static_cast<int32_t>(rng.next_below(num_classes));
  return DTargets::hard(std::move(labels));
}

DTargets random_soft_targets(Rng& rng, size_t n, int num_classes) {
  std::vector<SparseProbs<double>> soft(n);
  for (auto& s : soft) {
    std::vector<double> p(num_classes);
    double sum = 0;
    for (double& v : p) {
      v = std::exp(rng.uniform(-2.0, 2.0));
      sum += v;
    }
    for (double& v : p) v /= sum;
    s = DTargets::dense_frame(p);
  }
  return DTargets::from_soft(std::move(soft));
}

}  // namespace

TEST_CASE("tensor shape/data invariant and finite check") {
  Tensor t(3, 4);
  CHECK(t.numel() == 12);
  CHECK(t.data().size() == 12);
  t.at(1, 2) = 5.0f;
  CHECK(t.row(1)[2] == 5.0f);
  CHECK(t.all_finite());
  t.at(2, 0) = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(t.ensure_finite("test"), NumericError);
}

TEST_CASE("param layout: flat length is the sum of named slices") {
  ModelSpec spec{.input_dim = 6, .layer_sizes = {8, 8}, .num_outputs = 7,
                 .bidirectional = true, .lookahead_frames = 3};
  const ParamLayout layout = ParamLayout::build(spec);
  size_t total = 0;
  for (const auto& s : layout.slices) {
    CHECK(s.offset == total);
    total += s.length;
  }
  CHECK(total == layout.total);
  // 2 dirs x (4*8*6 + 4*8*8 + 4*8) for layer 0, input of layer 1 is 16
  CHECK(layout.find("lstm0.fwd.W").length == 4 * 8 * 6);
  CHECK(layout.find("lstm1.bwd.W").length == 4 * 8 * 16);
  CHECK(layout.find("out.W").length == 7 * 16);
}

TEST_CASE("paper-scale reference config is constructible") {
  ModelSpec spec{.input_dim = 192, .layer_sizes = {768, 768, 768, 768, 768},
                 .num_outputs = 3183, .bidirectional = false, .lookahead_frames = 3};
  const ParamLayout layout = ParamLayout::build(spec);
  // ~24M parameters per the reference description
  CHECK(layout.total > 20'000'000);
  CHECK(layout.total < 30'000'000);
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  ModelSpec spec{.input_dim = 5, .layer_sizes = {4}, .num_outputs = 3,
                 .bidirectional = true, .lookahead_frames = 1};
  ModelParams m = ModelParams::init_random(spec, 42);
  std::ostringstream os(std::ios::binary);
  write_model(os, m);
  std::istringstream is(os.str(), std::ios::binary);
  ModelParams back = read_model(is);
  CHECK(back.spec == m.spec);
  REQUIRE(back.params.size() == m.params.size());
  CHECK(std::memcmp(back.params.data(), m.params.data(),
                    m.params.size() * sizeof(float)) == 0);

  SUBCASE("corrupt magic is a data error") {
    std::string bytes = os.str();
    bytes[0] = 'X';
    std::istringstream bad(bytes, std::ios::binary);
    CHECK_THROWS_AS(read_model(bad), DataError);
  }
}

TEST_CASE("softmax: symmetry, analytic two-class, shift invariance") {
  const std::vector<float> uniform = softmax(std::vector<float>{0, 0, 0, 0});
  for (float p : uniform) CHECK(p == doctest::Approx(0.25).epsilon(1e-6));

  for (double c : {0.0, -5.0, 100.0}) {
    const std::vector<double> p = softmax(std::vector<double>{c, c + std::log(2.0)});
    CHECK(p[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(p[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  }

  Rng rng(7);
  std::vector<double> z(100);
  for (double& v : z) v = rng.uniform(-10, 10);
  const std::vector<double> p1 = softmax(z);
  for (double& v : z) v += 123.5;
  const std::vector<double> p2 = softmax(z);
  double sum = 0;
  for (size_t i = 0; i < z.size(); ++i) {
    CHECK(std::fabs(p1[i] - p2[i]) < 1e-12);
    CHECK(p1[i] >= 0.0);
    sum += p1[i];
  }
  CHECK(std::fabs(sum - 1.0) < 1e-6);
}

TEST_CASE("softmax matches an extended-precision oracle on a 3183-dim vector") {
  Rng rng(11);
  const size_t D = 3183;
  std::vector<double> z(D);
  for (double& v : z) v = rng.uniform(-8, 8);
  const std::vector<double> p = softmax(z);

  // oracle in 80-bit long double, no max subtraction needed at this range
  std::vector<long double> expl(D);
  long double sum = 0;
  for (size_t i = 0; i < D; ++i) {
    expl[i] = expl[i] = std::exp(static_cast<long double>(z[i]));
    sum += expl[i];
  }
  for (size_t i = 0; i < D; ++i)
    CHECK(std::fabs(p[i] - static_cast<double>(expl[i] / sum)) < 1e-9);
}

TEST_CASE("ce_loss analytic cases") {
  SUBCASE("target equals softmax(logits): loss = entropy, gradient = 0") {
    DTensor logits(1, 5);
    Rng rng(3);
    for (double& v : logits.data()) v = rng.uniform(-2, 2);
    const std::vector<double> p = softmax(logits.data());
    DTargets t = DTargets::from_soft({DTargets::dense_frame(p)});
    const LossResult<double> r = ce_loss(logits, t);
    double entropy = 0;
    for (double q : p) entropy -= q * std::log(q);
    CHECK(r.loss == doctest::Approx(entropy).epsilon(1e-9));
    for (double g : r.dlogits.data()) CHECK(g == 0.0);
  }

  SUBCASE("one-hot target, uniform logits over D classes: loss = ln D") {
    for (size_t D : {2, 10, 100}) {
      DTensor logits(1, D);  // all zero
      DTargets t = DTargets::hard({1});
      CHECK(ce_loss(logits, t).loss == doctest::Approx(std::log(double(D))).epsilon(1e-12));
    }
  }

  SUBCASE("gradient matches finite differences on the logits") {
    Rng rng(5);
    DTensor logits(3, 6);
    for (double& v : logits.data()) v = rng.uniform(-3, 3);
    DTargets t = random_soft_targets(rng, 3, 6);
    const LossResult<double> r = ce_loss(logits, t);
    const double h = 1e-6;
    for (size_t i = 0; i < logits.data().size(); ++i) {
      const double orig = logits.data()[i];
      logits.data()[i] = orig + h;
      const double lp = ce_loss(logits, t).loss;
      logits.data()[i] = orig - h;
      const double lm = ce_loss(logits, t).loss;
      logits.data()[i] = orig;
      CHECK(rel_err((lp - lm) / (2 * h), r.dlogits.data()[i]) < 1e-4);
    }
  }

  SUBCASE("mismatched target count is rejected") {
    DTensor logits(3, 4);
    CHECK_THROWS_AS(ce_loss(logits, DTargets::hard({0, 1})), UsageError);
  }

  SUBCASE("Gibbs inequality: ce_loss(logits, q) >= entropy(q)") {
    Rng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
      DTensor logits(1, 8);
      for (double& v : logits.data()) v = rng.uniform(-4, 4);
      DTargets t = random_soft_targets(rng, 1, 8);
      double entropy = 0;
      for (double q : t.soft[0].probs) entropy -= q * std::log(q);
      CHECK(ce_loss(logits, t).loss >= entropy - 1e-12);
    }
  }
}

TEST_CASE("ce_loss lookahead alignment leaves the first rows unscored") {
  Rng rng(9);
  DTensor logits(5, 4);
  for (double& v : logits.data()) v = rng.uniform(-1, 1);
  DTargets t = random_hard_targets(rng, 3, 4);  // scores rows 2..4
  const LossResult<double> r = ce_loss(logits, t, 2);
  CHECK(r.frames_scored == 3);
  for (size_t c = 0; c < 4; ++c) {
    CHECK(r.dlogits.at(0, c) == 0.0);
    CHECK(r.dlogits.at(1, c) == 0.0);
  }
  // the scored window equals a lookahead-0 loss over rows 2..4
  DTensor tail(3, 4);
  for (size_t i = 0; i < 3; ++i)
    std::copy(logits.row(i + 2), logits.row(i + 2) + 4, tail.row(i));
  CHECK(ce_loss(tail, t).loss == doctest::Approx(r.loss).epsilon(1e-15));
}

TEST_CASE("forward: zero model gives zero logits") {
  ModelSpec spec{.input_dim = 4, .layer_sizes = {6}, .num_outputs = 5};
  ModelParams zero = ModelParams::init_zero(spec);
  Network net = Network::from_model(zero);
  Rng rng(1);
  Tensor x(7, 4);
  for (float& v : x.data()) v = static_cast<float>(rng.uniform(-1, 1));
  const Tensor logits = net.forward(x);
  for (float v : logits.data()) CHECK(v == 0.0f);
}

TEST_CASE("forward: unidirectional causality is exact") {
  ModelSpec spec{.input_dim = 3, .layer_sizes = {5, 5}, .num_outputs = 4};
  DNet net = DNet::init_random(spec, 21);
  Rng rng(2);
  DTensor x = random_features(rng, 6, 3);
  const DTensor base = net.forward(x);
  for (size_t t = 0; t < 5; ++t) {
    DTensor perturbed = x;
    perturbed.at(t + 1, 1) += 0.7;
    const DTensor out = net.forward(perturbed);
    for (size_t r = 0; r <= t; ++r)
      for (size_t c = 0; c < 4; ++c) CHECK(out.at(r, c) == base.at(r, c));
    // and the perturbed frame itself must change something
    bool changed = false;
    for (size_t c = 0; c < 4; ++c) changed |= out.at(t + 1, c) != base.at(t + 1, c);
    CHECK(changed);
  }
}

TEST_CASE("forward: bidirectional output depends on future frames") {
  ModelSpec spec{.input_dim = 3, .layer_sizes = {5}, .num_outputs = 4, .bidirectional = true};
  DNet net = DNet::init_random(spec, 22);
  Rng rng(2);
  DTensor x = random_features(rng, 6, 3);
  const DTensor base = net.forward(x);
  DTensor perturbed = x;
  perturbed.at(5, 0) += 0.5;
  const DTensor out = net.forward(perturbed);
  bool changed = false;
  for (size_t c = 0; c < 4; ++c) changed |= out.at(0, c) != base.at(0, c);
  CHECK(changed);
}

TEST_CASE("forward matches a hand-unrolled LSTM on a 2-frame sequence") {
  // 1 layer, 1 unit, scalar weights; gate order i,f,g,o
  ModelSpec spec{.input_dim = 1, .layer_sizes = {1}, .num_outputs = 1};
  const ParamLayout layout = ParamLayout::build(spec);
  std::vector<double> params(layout.total, 0.0);
  auto set = [&](const char* name, double v) { params[layout.find(name).offset] = v; };
  auto set4 = [&](const char* name, double i, double f, double g, double o) {
    const size_t off = layout.find(name).offset;
    params[off + 0] = i;
    params[off + 1] = f;
    params[off + 2] = g;
    params[off + 3] = o;
  };
  set4("lstm0.fwd.W", 0.5, -0.3, 0.8, 0.2);
  set4("lstm0.fwd.R", 0.1, 0.4, -0.2, 0.3);
  set4("lstm0.fwd.b", 0.05, -0.05, 0.1, 0.0);
  set("out.W", 1.5);
  set("out.b", -0.25);
  DNet net(spec, params);

  const double x0 = 0.7, x1 = -1.1;
  DTensor x(2, 1);
  x.at(0, 0) = x0;
  x.at(1, 0) = x1;
  const DTensor logits = net.forward(x);

  auto sigmoid = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  // t = 0 (h,c start at zero)
  double i0 = sigmoid(0.5 * x0 + 0.05);
  double f0 = sigmoid(-0.3 * x0 - 0.05);
  double g0 = std::tanh(0.8 * x0 + 0.1);
  double o0 = sigmoid(0.2 * x0 + 0.0);
  double c0 = i0 * g0;
  double h0 = o0 * std::tanh(c0);
  (void)f0;
  // t = 1
  double i1 = sigmoid(0.5 * x1 + 0.1 * h0 + 0.05);
  double f1 = sigmoid(-0.3 * x1 + 0.4 * h0 - 0.05);
  double g1 = std::tanh(0.8 * x1 - 0.2 * h0 + 0.1);
  double o1 = sigmoid(0.2 * x1 + 0.3 * h0 + 0.0);
  double c1 = f1 * c0 + i1 * g1;
  double h1 = o1 * std::tanh(c1);

  CHECK(logits.at(0, 0) == doctest::Approx(1.5 * h0 - 0.25).epsilon(1e-12));
  CHECK(logits.at(1, 0) == doctest::Approx(1.5 * h1 - 0.25).epsilon(1e-12));
}

TEST_CASE("backward_full: zero gradient at a constructed CE minimum") {
  ModelSpec spec{.input_dim = 3, .layer_sizes = {4}, .num_outputs = 5};
  DNet net = DNet::init_random(spec, 31);
  Rng rng(4);
  DTensor x = random_features(rng, 4, 3);
  const DTensor logits = net.forward(x);
  std::vector<SparseProbs<double>> soft;
  for (size_t t = 0; t < logits.rows(); ++t) {
    std::vector<double> row(logits.row(t), logits.row(t) + logits.cols());
    soft.push_back(DTargets::dense_frame(softmax(row)));
  }
  const DNet::Backward b = net.backward_full(x, DTargets::from_soft(std::move(soft)));
  for (double g : b.grad) CHECK(g == 0.0);
}

TEST_CASE("backward_full gradients match finite differences") {
  struct Case {
    ModelSpec spec;
    size_t T;
    bool soft;
  };
  const std::vector<Case> cases = {
      {{.input_dim = 4, .layer_sizes = {5}, .num_outputs = 6}, 5, false},
      {{.input_dim = 3, .layer_sizes = {4, 4}, .num_outputs = 5,
        .bidirectional = true}, 4, true},
      {{.input_dim = 3, .layer_sizes = {6}, .num_outputs = 4,
        .lookahead_frames = 2}, 6, false},
  };
  int case_idx = 0;
  for (const Case& c : cases) {
    CAPTURE(case_idx);
    DNet net = DNet::init_random(c.spec, 100 + case_idx);
    Rng rng(200 + case_idx);
    DTensor x = random_features(rng, c.T, c.spec.input_dim);
    DTargets t = c.soft ? random_soft_targets(rng, c.T, c.spec.num_outputs)
                        : random_hard_targets(rng, c.T, c.spec.num_outputs);
    const DNet::Backward analytic = net.backward_full(x, t);
    const std::vector<double> fd = finite_diff_gradient(net, x, t);
    double worst = 0;
    for (size_t i = 0; i < fd.size(); ++i)
      worst = std::max(worst, rel_err(fd[i], analytic.grad[i]));
    CHECK(worst < 1e-4);
    ++case_idx;
  }
}

TEST_CASE("backward_full is deterministic bit for bit") {
  ModelSpec spec{.input_dim = 3, .layer_sizes = {4}, .num_outputs = 5};
  Network net = Network::init_random(spec, 77);
  Rng rng(6);
  Tensor x(5, 3);
  for (float& v : x.data()) v = static_cast<float>(rng.uniform(-1, 1));
  TargetSeq t = TargetSeq::hard({0, 1, 2, 3, 4});
  const auto a = net.backward_full(x, t);
  const auto b = net.backward_full(x, t);
  CHECK(a.grad == b.grad);
  CHECK(a.loss == b.loss);
}

TEST_CASE("backward_chunked") {
  ModelSpec spec{.input_dim = 3, .layer_sizes = {8}, .num_outputs = 5};
  Network net = Network::init_random(spec, 55);
  Rng rng(8);

  SUBCASE("chunk_len >= T degenerates to backward_full, bit-exactly") {
    Tensor x(7, 3);
    for (float& v : x.data()) v = static_cast<float>(rng.uniform(-1, 1));
    TargetSeq t = TargetSeq::hard({0, 1, 2, 3, 4, 0, 1});
    const auto full = net.backward_full(x, t);
    for (size_t chunk_len : {7u, 8u, 100u}) {
      const auto chunks = net.backward_chunked(x, t, chunk_len, 999);
      REQUIRE(chunks.size() == 1);
      const auto sum = Network::sum_chunks(chunks, net.num_params());
      CHECK(sum.grad == full.grad);
    }
  }

  SUBCASE("summed chunk gradients equal the chunks trained as separate utterances") {
    const size_t T = 64, chunk_len = 32;
    Tensor x(T, 3);
    std::vector<int32_t> labels(T);
    for (float& v : x.data()) v = static_cast<float>(rng.uniform(-1, 1));
    for (auto& l : labels) l = static_cast<int32_t>(rng.next_below(5));
    TargetSeq t = TargetSeq::hard(labels);

    const auto chunks = net.backward_chunked(x, t, chunk_len, 4242);
    REQUIRE(chunks.size() == 2);
    const auto summed = Network::sum_chunks(chunks, net.num_params());

    // oracle: two separate utterances, gradients added in chunk order
    std::vector<float> expected(net.num_params(), 0.0f);
    for (size_t c = 0; c < 2; ++c) {
      Tensor sub(chunk_len, 3);
      std::vector<int32_t> sub_labels(chunk_len);
      for (size_t r = 0; r < chunk_len; ++r) {
        std::copy(x.row(c * chunk_len + r), x.row(c * chunk_len + r) + 3, sub.row(r));
        sub_labels[r] = labels[c * chunk_len + r];
      }
      const auto b = net.backward_full(sub, TargetSeq::hard(sub_labels));
      for (size_t i = 0; i < expected.size(); ++i) expected[i] += b.grad[i];
    }
    CHECK(summed.grad == expected);
  }

  SUBCASE("different seeds permute processing order but not the summed gradient") {
    Tensor x(50, 3);
    std::vector<int32_t> labels(50);
    for (float& v : x.data()) v = static_cast<float>(rng.uniform(-1, 1));
    for (auto& l : labels) l = static_cast<int32_t>(rng.next_below(5));
    TargetSeq t = TargetSeq::hard(labels);
    const auto a = Network::sum_chunks(net.backward_chunked(x, t, 8, 1), net.num_params());
    const auto b = Network::sum_chunks(net.backward_chunked(x, t, 8, 2), net.num_params());
    CHECK(a.grad == b.grad);
  }

  SUBCASE("chunk_len < 1 is rejected") {
    Tensor x(4, 3);
    TargetSeq t = TargetSeq::hard({0, 0, 0, 0});
    CHECK_THROWS_AS(net.backward_chunked(x, t, 0, 1), UsageError);
  }
}

TEST_CASE("sgd_step") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    std::vector<double> p{1.0, 2.0}, g{0.0, 0.0};
    sgd_step(p, g, 0.1);
    CHECK(p == std::vector<double>{1.0, 2.0});
  }
  SUBCASE("arithmetic example") {
    std::vector<double> p{1.0, 2.0}, g{0.5, -1.0};
    sgd_step(p, g, 0.1);
    CHECK(p[0] == doctest::Approx(0.95).epsilon(1e-15));
    CHECK(p[1] == doctest::Approx(2.1).epsilon(1e-15));
  }
  SUBCASE("lr must be positive") {
    std::vector<double> p{1.0}, g{1.0};
    CHECK_THROWS_AS(sgd_step(p, g, 0.0), UsageError);
  }
  SUBCASE("quadratic toy loss decreases monotonically over 100 steps") {
    Rng rng(12);
    std::vector<double> w(10), target(10);
    for (double& v : w) v = rng.uniform(-1, 1);
    for (double& v : target) v = rng.uniform(-1, 1);
    auto loss = [&]() {
      double s = 0;
      for (size_t i = 0; i < w.size(); ++i) s += 0.5 * (w[i] - target[i]) * (w[i] - target[i]);
      return s;
    };
    double prev = loss();
    for (int step = 0; step < 100; ++step) {
      std::vector<double> g(w.size());
      for (size_t i = 0; i < w.size(); ++i) g[i] = w[i] - target[i];
      sgd_step(w, g, 0.05);
      const double cur = loss();
      CHECK(cur <= prev);
      prev = cur;
    }
  }
}
