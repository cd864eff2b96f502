#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "promptsched/grad_check.hpp"
#include "promptsched/model.hpp"

using namespace promptsched;

namespace {

// Plain-loop reference implementation of the full forward pass; shares no
// code with the tape primitives.
namespace ref {
using Mat = std::vector<std::vector<double>>;

Mat mat(const Tensor& t) {
  const std::size_t r = t.rank() == 2 ? t.shape[0] : 1, c = t.shape.back();
  Mat m(r, std::vector<double>(c));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) m[i][j] = t.values[i * c + j];
  return m;
}
Mat mm(const Mat& a, const Mat& b) {
  Mat c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < b.size(); ++k) s += a[i][k] * b[k][j];
      c[i][j] = s;
    }
  return c;
}
std::vector<double> softmax(std::vector<double> x, double tau) {
  double mx = x[0];
  for (double v : x) mx = std::max(mx, v);
  double z = 0.0;
  for (auto& v : x) z += (v = std::exp((v - mx) / tau));
  for (auto& v : x) v /= z;
  return x;
}
void layer_norm(Mat& x, const Tensor& gain, const Tensor& bias) {
  for (auto& row : x) {
    double mu = 0.0, var = 0.0;
    for (double v : row) mu += v;
    mu /= static_cast<double>(row.size());
    for (double v : row) var += (v - mu) * (v - mu);
    var /= static_cast<double>(row.size());
    for (std::size_t j = 0; j < row.size(); ++j) row[j] = (row[j] - mu) / std::sqrt(var + 1e-5) * gain[j] + bias[j];
  }
}

std::vector<double> pooled(const ModelState& s, const std::vector<std::size_t>& tokens, std::size_t t) {
  const auto& cfg = s.encoder;
  const auto& P = s.params;
  const std::size_t d = cfg.d, m = cfg.m;
  const auto& Z = P.get(names::logits);
  std::vector<double> z(Z.values.begin() + static_cast<long>(t * s.K), Z.values.begin() + static_cast<long>((t + 1) * s.K));
  auto w = softmax(z, s.tau);
  auto e = P.get(names::embeddings).row(t);
  auto Wg = mat(P.get(names::gate));
  std::vector<double> g(d);
  for (std::size_t i = 0; i < d; ++i) {
    double a = 0.0;
    for (std::size_t j = 0; j < d; ++j) a += Wg[i][j] * e[j];
    g[i] = 1.0 / (1.0 + std::exp(-a));
  }
  Mat x;
  const auto& pool = P.get(names::pool);
  for (std::size_t slot = 0; slot < m; ++slot) {
    std::vector<double> row(d);
    for (std::size_t i = 0; i < d; ++i) {
      double c = 0.0;
      for (std::size_t k = 0; k < s.K; ++k) c += w[k] * pool.at(k, slot * d + i);
      row[i] = g[i] * c + (1.0 - g[i]) * e[i];
    }
    x.push_back(row);
  }
  const auto& E = P.get(names::token_embedding);
  for (auto tok : tokens) x.push_back(E.row(tok).values);
  if (cfg.position_encoding)
    for (std::size_t pos = 0; pos < x.size(); ++pos)
      for (std::size_t i = 0; i < d; ++i) {
        const double angle = static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
        x[pos][i] += (i % 2 ? std::cos(angle) : std::sin(angle)) / std::sqrt(static_cast<double>(d));
      }
  const std::size_t dh = d / cfg.n_heads;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    Mat attn(x.size(), std::vector<double>(d, 0.0));
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      auto q = mm(x, mat(P.get(names::attn(l, h, "wq"))));
      auto k = mm(x, mat(P.get(names::attn(l, h, "wk"))));
      auto v = mm(x, mat(P.get(names::attn(l, h, "wv"))));
      Mat o(x.size(), std::vector<double>(dh, 0.0));
      for (std::size_t i = 0; i < x.size(); ++i) {
        std::vector<double> sc(x.size());
        for (std::size_t j = 0; j < x.size(); ++j) {
          double a = 0.0;
          for (std::size_t c = 0; c < dh; ++c) a += q[i][c] * k[j][c];
          sc[j] = a / std::sqrt(static_cast<double>(dh));
        }
        auto p = softmax(sc, 1.0);
        for (std::size_t j = 0; j < x.size(); ++j)
          for (std::size_t c = 0; c < dh; ++c) o[i][c] += p[j] * v[j][c];
      }
      auto proj = mm(o, mat(P.get(names::attn(l, h, "wo"))));
      for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < d; ++j) attn[i][j] += proj[i][j];
    }
    for (std::size_t i = 0; i < x.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) x[i][j] += attn[i][j];
    layer_norm(x, P.get(names::layer(l, "ln1.gain")), P.get(names::layer(l, "ln1.bias")));
    auto hdn = mm(x, mat(P.get(names::layer(l, "ffn.w1"))));
    const auto& b1 = P.get(names::layer(l, "ffn.b1"));
    for (auto& row : hdn)
      for (std::size_t j = 0; j < row.size(); ++j) row[j] = std::max(0.0, row[j] + b1[j]);
    auto f = mm(hdn, mat(P.get(names::layer(l, "ffn.w2"))));
    const auto& b2 = P.get(names::layer(l, "ffn.b2"));
    for (std::size_t i = 0; i < x.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) x[i][j] += f[i][j] + b2[j];
    layer_norm(x, P.get(names::layer(l, "ln2.gain")), P.get(names::layer(l, "ln2.bias")));
  }
  std::vector<double> out(d, 0.0);
  const std::size_t first = cfg.pool_prompt_positions ? 0 : m;
  for (std::size_t i = first; i < x.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) out[j] += x[i][j] / static_cast<double>(x.size() - first);
  return out;
}

double loss(const ModelState& s, const Batch& b, std::size_t t) {
  const auto& H = s.params.get(names::head(t));
  double total = 0.0;
  for (std::size_t n = 0; n < b.size(); ++n) {
    auto p = pooled(s, b.tokens[n], t);
    std::vector<double> logits(H.shape[1], 0.0);
    for (std::size_t c = 0; c < H.shape[1]; ++c)
      for (std::size_t j = 0; j < p.size(); ++j) logits[c] += p[j] * H.at(j, c);
    auto pr = softmax(logits, 1.0);
    total -= std::log(pr[b.labels[n]]);
  }
  return total / static_cast<double>(b.size());
}
}  // namespace ref

EncoderConfig tiny(std::size_t d = 4, std::size_t layers = 1) {
  EncoderConfig c;
  c.vocab_size = 10;
  c.d = d;
  c.n_layers = layers;
  c.n_heads = 2;
  c.ffn_mult = 2;
  c.max_len = 12;
  c.m = 2;
  return c;
}

// Moves every parameter off its structured initial value so that zero-init
// pieces (gate, biases, logits) are exercised too.
void perturb(ModelState& s, std::uint64_t seed, double sd = 0.3) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, sd);
  for (const auto& [name, _] : s.params.items()) {
    auto t = s.params.get(name);
    for (auto& v : t.values) v += nd(rng);
    s.params.add(name, t);
  }
}

ad::Var pooled_of(const ModelState& s, const std::vector<std::vector<std::size_t>>& tokens, std::size_t t, ad::Tape& tape) {
  ForwardContext ctx(tape, s);
  return encode(ctx, tokens, fused_prompt(ctx, t));
}

}  // namespace

TEST(Encode, ZeroLayersIsMeanOfPositionedEmbeddings) {
  auto s = init_model(tiny(4, 0), 2, 1.0, {2}, 3);
  perturb(s, 1);
  ad::Tape tape;
  auto p = pooled_of(s, {{3, 1, 4}}, 0, tape).value();
  auto expected = ref::pooled(s, {3, 1, 4}, 0);
  ASSERT_EQ(p.size(), 4u);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(p[j], expected[j], 1e-14);
}

TEST(Encode, PermutationInvariantWithoutPositions) {
  auto cfg = tiny(4, 0);
  cfg.position_encoding = false;
  auto s = init_model(cfg, 2, 1.0, {2}, 3);
  ad::Tape tape;
  auto a = pooled_of(s, {{3, 1, 4, 1, 5}}, 0, tape).value();
  auto b = pooled_of(s, {{5, 1, 1, 4, 3}}, 0, tape).value();
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(a[j], b[j], 1e-15);
}

TEST(Encode, DifferentPromptsGiveDifferentPooledVectors) {
  auto s = init_model(tiny(8, 2), 3, 1.0, {2, 2}, 7);
  perturb(s, 2);
  ad::Tape tape;
  auto a = pooled_of(s, {{1, 2, 3}}, 0, tape).value();
  auto b = pooled_of(s, {{1, 2, 3}}, 1, tape).value();
  double dist = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) dist += (a[j] - b[j]) * (a[j] - b[j]);
  EXPECT_GT(std::sqrt(dist), 0.0);
}

TEST(Encode, Rejections) {
  auto s = init_model(tiny(), 2, 1.0, {2}, 0);
  ad::Tape tape;
  EXPECT_THROW(pooled_of(s, {{1, 2, 3, 4, 5, 6, 7, 8, 9, 1, 2}}, 0, tape), Error);  // 11 + 2 > 12
  EXPECT_THROW(pooled_of(s, {{1, 10}}, 0, tape), Error);
  EXPECT_THROW(pooled_of(s, {}, 0, tape), Error);
  EXPECT_THROW(pooled_of(s, {{1}}, 1, tape), Error);
}

TEST(Encode, MatchesReferenceForwardAndMixedLengths) {
  auto cfg = tiny(8, 2);
  cfg.pool_prompt_positions = false;
  auto s = init_model(cfg, 3, 0.8, {3}, 12);
  perturb(s, 3);
  ad::Tape tape;
  std::vector<std::vector<std::size_t>> toks{{1, 2, 3}, {9, 8, 7, 6, 5}, {4}};
  auto p = pooled_of(s, toks, 0, tape).value();
  for (std::size_t b = 0; b < toks.size(); ++b) {
    auto expected = ref::pooled(s, toks[b], 0);
    for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(p.at(b, j), expected[j], 1e-12);
  }
}

TEST(Predict, ZeroIdentityAndOracle) {
  ad::Tape tape;
  auto pooled = tape.constant(Tensor::matrix(1, 3, {0.5, -1.0, 2.0}));
  EXPECT_EQ(predict(pooled, tape.constant(Tensor::zeros({3, 2}))).value().values, (std::vector<double>{0.0, 0.0}));
  EXPECT_EQ(predict(pooled, tape.constant(Tensor::identity(3))).value().values, pooled.value().values);

  std::mt19937_64 rng(8);
  std::normal_distribution<double> nd;
  Tensor H = Tensor::zeros({3, 2});
  for (auto& v : H.values) v = nd(rng);
  auto logits = predict(pooled, tape.constant(H)).value();
  for (std::size_t c = 0; c < 2; ++c) {
    double dot = 0.0;
    for (std::size_t j = 0; j < 3; ++j) dot += pooled.value()[j] * H.at(j, c);
    EXPECT_NEAR(logits[c], dot, 1e-12);
  }
  EXPECT_THROW(predict(pooled, tape.constant(Tensor::zeros({4, 2}))), Error);
}

TEST(TaskLoss, UniformLogitsGiveLogC) {
  auto s = init_model(tiny(), 2, 1.0, {3}, 0);
  s.params.add(names::head(0), Tensor::zeros({4, 3}));
  ad::Tape tape;
  ForwardContext ctx(tape, s);
  auto l = task_loss(ctx, Batch{{{1, 2}, {3, 4}}, {0, 2}}, 0);
  EXPECT_EQ(l.item(), std::log(3.0));
}

TEST(TaskLoss, DuplicatedExampleMatchesSingle) {
  auto s = init_model(tiny(), 2, 1.0, {2}, 4);
  perturb(s, 5);
  ad::Tape tape;
  ForwardContext ctx(tape, s);
  const double one = task_loss(ctx, Batch{{{1, 2, 3}}, {1}}, 0).item();
  const double many = task_loss(ctx, Batch{{{1, 2, 3}, {1, 2, 3}, {1, 2, 3}, {1, 2, 3}}, {1, 1, 1, 1}}, 0).item();
  EXPECT_NEAR(one, many, 1e-14);
}

TEST(TaskLoss, MatchesIndependentForward) {
  auto s = init_model(tiny(4, 1), 3, 0.9, {2, 2}, 21);
  perturb(s, 6);
  Batch b{{{1, 2, 3, 4}, {5, 5, 0, 9}, {7, 3, 2, 2}}, {0, 1, 1}};
  for (std::size_t t = 0; t < 2; ++t) {
    ad::Tape tape;
    ForwardContext ctx(tape, s);
    EXPECT_NEAR(task_loss(ctx, b, t).item(), ref::loss(s, b, t), 1e-10);
  }
}

TEST(TaskLoss, Rejections) {
  auto s = init_model(tiny(), 2, 1.0, {2}, 0);
  ad::Tape tape;
  ForwardContext ctx(tape, s);
  EXPECT_THROW(task_loss(ctx, Batch{}, 0), Error);
  EXPECT_THROW(task_loss(ctx, Batch{{{1}}, {2}}, 0), Error);
}

TEST(TaskLoss, GradientMatchesFiniteDifferences) {
  auto cfg = tiny(8, 1);
  cfg.vocab_size = 6;
  auto s = init_model(cfg, 3, 0.9, {2, 3}, 31);
  perturb(s, 7, 0.1);
  Batch b{{{1, 2, 3}, {4, 5, 0}}, {0, 2}};
  std::vector<std::string> order;
  std::vector<Tensor> leaves;
  for (const auto& [name, t] : s.params.items())
    if (name != names::head(0)) {
      order.push_back(name);
      leaves.push_back(t);
    }
  auto res = ad::grad_check(
      [&](ad::Tape& tape, std::span<const ad::Var> x) {
        ForwardContext ctx(tape, s);
        for (std::size_t i = 0; i < order.size(); ++i) ctx.bind(order[i], x[i]);
        return task_loss(ctx, b, 1);
      },
      leaves, 1e-5);
  EXPECT_LE(res.max_rel_error, 1e-6) << order[res.worst_leaf] << "[" << res.worst_index << "] analytic "
                                     << res.worst_analytic << " numeric " << res.worst_numeric;
}

TEST(Pins, OneHotScheduleAndOpenGateYieldPoolPrompt) {
  PromptPins pins{true, true};
  auto s = init_model(tiny(), 3, 1.0, {2, 2, 2}, 2, pins);
  ad::Tape tape;
  ForwardContext ctx(tape, s);
  auto f = fused_prompt(ctx, 2).value();
  EXPECT_EQ(f.values, s.params.get(names::pool).row(2).values);
}
