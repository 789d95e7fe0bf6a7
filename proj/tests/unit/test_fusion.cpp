#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "esc/elr.hpp"
#include "esc/error.hpp"
#include "esc/fusion.hpp"
#include "test_util.hpp"

using namespace esc;
using fusion::ConfidenceMaps;

namespace {

using Vec = std::vector<double>;

Vec cell(const Tensor& t, int c) {
  Vec v(static_cast<std::size_t>(t.channels()));
  for (int i = 0; i < t.channels(); ++i) v[static_cast<std::size_t>(i)] = t[static_cast<std::size_t>(i) * t.cells() + c];
  return v;
}

Vec matvec(const Tensor& w, const Vec& x) {
  const int out = w.dim(0), in = w.dim(1);
  Vec y(static_cast<std::size_t>(out), 0.0);
  for (int o = 0; o < out; ++o) {
    for (int i = 0; i < in; ++i) y[static_cast<std::size_t>(o)] += w[static_cast<std::size_t>(o) * in + i] * x[static_cast<std::size_t>(i)];
  }
  return y;
}

Vec plus(Vec a, const Vec& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

Vec param(const nn::ParameterSet& ps, const std::string& name) {
  const auto& t = ps.find(name)->var.value();
  return Vec(t.values().begin(), t.values().end());
}

// Scalar multi-head attention with output projection, one cell.
Vec mha_oracle(const fusion::AttentionParams& a, const Vec& q, const std::vector<Vec>& keys, const std::vector<Vec>& values) {
  const Vec qp = matvec(a.w_q().weight().value(), q);
  std::vector<Vec> kp, vp;
  for (const auto& k : keys) kp.push_back(matvec(a.w_k().weight().value(), k));
  for (const auto& v : values) vp.push_back(matvec(a.w_v().weight().value(), v));
  const int d = a.head_dim();
  Vec concat(qp.size(), 0.0);
  for (int h = 0; h < a.heads(); ++h) {
    std::vector<double> s;
    for (const auto& k : kp) {
      double dot = 0;
      for (int i = h * d; i < (h + 1) * d; ++i) dot += qp[static_cast<std::size_t>(i)] * k[static_cast<std::size_t>(i)];
      s.push_back(dot / std::sqrt(static_cast<double>(d)));
    }
    double mx = s[0], z = 0;
    for (double x : s) mx = std::max(mx, x);
    for (double& x : s) z += (x = std::exp(x - mx));
    for (std::size_t j = 0; j < s.size(); ++j) {
      for (int i = h * d; i < (h + 1) * d; ++i) concat[static_cast<std::size_t>(i)] += s[j] / z * vp[j][static_cast<std::size_t>(i)];
    }
  }
  return matvec(a.w_o().weight().value(), concat);
}

void zero_param(nn::ParameterSet& ps, const std::string& name) {
  ag::Var v = ps.find(name)->var;
  v.mutable_value().fill(0.0);
}

ConfidenceMaps constant_confidence(int h, int w, double c) {
  return {Tensor({1, h, w}, c), Tensor({1, h, w}, 1.0 - c)};
}

ag::Var feat(int n, int h, int w, std::uint64_t seed) { return ag::Var(test::random_tensor({n, h, w}, seed)); }

}  // namespace

TEST(UoConfidence, UniformOneHotAndRandom) {
  const auto uni = fusion::uo_confidence({ag::Var(Tensor({128, 2, 2}, 1.0 / 128))});
  for (double c : uni.c.values()) EXPECT_DOUBLE_EQ(c, 1.0 / 128);
  for (double u : uni.u.values()) EXPECT_DOUBLE_EQ(u, 127.0 / 128);
  const auto oh = fusion::uo_confidence(elr::one_hot({1, 2, {3, 9}}, 16));
  EXPECT_EQ(oh.c[0], 1.0);
  EXPECT_EQ(oh.u[1], 0.0);
  const auto p = elr::distribution_from_logits(feat(16, 3, 3, 1));
  const auto m = fusion::uo_confidence(p);
  for (int c = 0; c < 9; ++c) {
    const Vec v = cell(p.probs.value(), c);
    EXPECT_EQ(m.c[static_cast<std::size_t>(c)], *std::max_element(v.begin(), v.end()));
  }
}

TEST(RecodedConsolidation, ZeroOutputProjectionIsBitExactPassthrough) {
  nn::ParameterSet ps;
  Rng rng = make_rng(1);
  fusion::RecodedConsolidation rc(ps, 8, 2, rng);
  zero_param(ps, "rc.attn.w_o.weight");
  const ag::Var f = feat(8, 2, 2, 2);
  EXPECT_EQ(rc.forward(f, feat(8, 2, 2, 3), feat(8, 2, 2, 4)).value(), f.value());
}

TEST(RecodedConsolidation, AttentionWeightsSumToOne) {
  nn::ParameterSet ps;
  Rng rng = make_rng(2);
  fusion::RecodedConsolidation rc(ps, 8, 4, rng);
  const Tensor w = rc.attention_weights(feat(8, 3, 2, 5), feat(8, 3, 2, 6), feat(8, 3, 2, 7));
  ASSERT_EQ(w.shape(), (std::vector<int>{4, 3, 3, 2}));
  for (int h = 0; h < 4; ++h) {
    for (int c = 0; c < 6; ++c) {
      double s = 0;
      for (int j = 0; j < 3; ++j) s += w[(static_cast<std::size_t>(h) * 3 + j) * 6 + c];
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(RecodedConsolidation, MatchesScalarOracleOnOneCell) {
  for (int heads : {1, 2}) {
    nn::ParameterSet ps;
    Rng rng = make_rng(3);
    fusion::RecodedConsolidation rc(ps, 4, heads, rng);
    const ag::Var f = feat(4, 1, 1, 8), gi = feat(4, 1, 1, 9), ge = feat(4, 1, 1, 10);
    const Vec fv = cell(f.value(), 0), nk = param(ps, "rc.noise_k"), nv = param(ps, "rc.noise_v");
    const Vec expect = plus(fv, mha_oracle(rc.attention(), fv, {plus(fv, nk), cell(gi.value(), 0), cell(ge.value(), 0)},
                                           {plus(fv, nv), cell(gi.value(), 0), cell(ge.value(), 0)}));
    const Tensor got = rc.forward(f, gi, ge).value();
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(got[static_cast<std::size_t>(i)], expect[static_cast<std::size_t>(i)], 1e-12);
  }
}

TEST(RecodedConsolidation, ZeroNoiseEqualsNoiseFreeAttention) {
  nn::ParameterSet ps;
  Rng rng = make_rng(4);
  fusion::RecodedConsolidation rc(ps, 8, 2, rng);
  zero_param(ps, "rc.noise_k");
  zero_param(ps, "rc.noise_v");
  const ag::Var f = feat(8, 2, 3, 11), gi = feat(8, 2, 3, 12), ge = feat(8, 2, 3, 13);
  const std::array<ag::Var, 3> kv{f, gi, ge};
  const Tensor plain = ag::add(f, rc.attention().attend(f, kv, kv)).value();
  EXPECT_EQ(rc.forward(f, gi, ge).value(), plain);
  EXPECT_THROW((void)rc.forward(f, feat(8, 3, 3, 1), ge), InputError);
}

TEST(UncertaintyOptimization, SymmetricConfidenceAveragesBranches) {
  nn::ParameterSet ps;
  Rng rng = make_rng(5);
  fusion::UncertaintyOptimization uo(ps, 8, 2, rng);
  const auto out = uo.forward(feat(8, 2, 2, 14), feat(8, 2, 2, 15), constant_confidence(2, 2, 0.3),
                              constant_confidence(2, 2, 0.3));
  for (std::size_t i = 0; i < out.psi.value().size(); ++i) {
    EXPECT_NEAR(out.psi.value()[i], (out.psi_img.value()[i] + out.psi_evt.value()[i]) / 2.0, 1e-9);
  }
}

TEST(UncertaintyOptimization, ZeroEventConfidenceSelectsImageBranch) {
  nn::ParameterSet ps;
  Rng rng = make_rng(6);
  fusion::UncertaintyOptimization uo(ps, 8, 2, rng);
  const auto out = uo.forward(feat(8, 2, 2, 16), feat(8, 2, 2, 17), constant_confidence(2, 2, 1.0),
                              constant_confidence(2, 2, 0.0));
  EXPECT_EQ(out.psi.value(), out.psi_img.value());
  EXPECT_THROW((void)uo.forward(feat(8, 2, 2, 16), feat(8, 2, 2, 17), constant_confidence(2, 2, 0.0),
                                constant_confidence(2, 2, 0.0)),
               ContractError);
}

TEST(UncertaintyOptimization, ConvexCombinationAndScalarOracle) {
  nn::ParameterSet ps;
  Rng rng = make_rng(7);
  fusion::UncertaintyOptimization uo(ps, 4, 1, rng);
  const ag::Var ei = feat(4, 1, 1, 18), ee = feat(4, 1, 1, 19);
  const auto ci = fusion::uo_confidence(elr::distribution_from_logits(feat(8, 1, 1, 20)));
  const auto ce = fusion::uo_confidence(elr::distribution_from_logits(feat(8, 1, 1, 21)));
  const auto out = uo.forward(ei, ee, ci, ce);
  EXPECT_GE(out.weight_img[0], 0.0);
  EXPECT_GE(out.weight_evt[0], 0.0);
  EXPECT_NEAR(out.weight_img[0] + out.weight_evt[0], 1.0, 1e-15);

  // Rebuild the same parameters to reach the per-branch attention blocks.
  nn::ParameterSet ps2;
  Rng rng2 = make_rng(7);
  fusion::AttentionParams ai(ps2, "uo.attn_img", 4, 1, rng2), ae(ps2, "uo.attn_evt", 4, 1, rng2);
  const Vec vi = cell(ei.value(), 0), ve = cell(ee.value(), 0);
  auto scaled = [](Vec v, double s) {
    for (double& x : v) x *= s;
    return v;
  };
  const Vec psi_i = plus(vi, mha_oracle(ai, vi, {plus(vi, param(ps, "uo.noise_k_img")), scaled(vi, ci.u[0])},
                                        {plus(vi, param(ps, "uo.noise_v_img")), ve}));
  const Vec psi_e = plus(ve, mha_oracle(ae, ve, {plus(ve, param(ps, "uo.noise_k_evt")), scaled(ve, ce.u[0])},
                                        {plus(ve, param(ps, "uo.noise_v_evt")), vi}));
  for (int i = 0; i < 4; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const double expect = (ci.c[0] * psi_i[k] + ce.c[0] * psi_e[k]) / (ci.c[0] + ce.c[0]);
    EXPECT_NEAR(out.psi.value()[k], expect, 1e-12);
    const double lo = std::min(psi_i[k], psi_e[k]), hi = std::max(psi_i[k], psi_e[k]);
    EXPECT_GE(out.psi.value()[k], lo - 1e-12);
    EXPECT_LE(out.psi.value()[k], hi + 1e-12);
  }
}

TEST(UncertaintyOptimization, ZeroNoiseEqualsNoiseFreeAttention) {
  nn::ParameterSet ps;
  Rng rng = make_rng(8);
  fusion::UncertaintyOptimization uo(ps, 8, 2, rng);
  for (const char* n : {"uo.noise_k_img", "uo.noise_k_evt", "uo.noise_v_img", "uo.noise_v_evt"}) zero_param(ps, n);
  nn::ParameterSet ps2;
  Rng rng2 = make_rng(8);
  fusion::AttentionParams ai(ps2, "uo.attn_img", 8, 2, rng2), ae(ps2, "uo.attn_evt", 8, 2, rng2);
  const ag::Var ei = feat(8, 2, 2, 22), ee = feat(8, 2, 2, 23);
  const auto ci = constant_confidence(2, 2, 0.7), ce = constant_confidence(2, 2, 0.2);
  const auto out = uo.forward(ei, ee, ci, ce);
  const std::array<ag::Var, 2> ki{ei, ag::mul_cells(ei, ag::Var(ci.u))}, vi{ei, ee};
  const std::array<ag::Var, 2> ke{ee, ag::mul_cells(ee, ag::Var(ce.u))}, ve{ee, ei};
  EXPECT_EQ(out.psi_img.value(), ag::add(ei, ai.attend(ei, ki, vi)).value());
  EXPECT_EQ(out.psi_evt.value(), ag::add(ee, ae.attend(ee, ke, ve)).value());
}

TEST(PredictionHead, ShapeAndZeroTieRule) {
  nn::ParameterSet ps;
  Rng rng = make_rng(9);
  fusion::PredictionHead head(ps, 8, 11, rng);
  const auto logits = head.forward(feat(8, 4, 5, 24), feat(8, 4, 5, 25), 16, 20);
  EXPECT_EQ(logits.shape(), (std::vector<int>{11, 16, 20}));
  for (auto& p : ps.params()) p.var.mutable_value().fill(0.0);
  const ag::Var z(Tensor({8, 4, 5}));
  const auto zl = head.forward(z, z, 16, 20);
  EXPECT_EQ(zl.value().max_abs(), 0.0);
  for (int k : elr::key_map(zl.value()).keys) EXPECT_EQ(k + 1, 1);
}

TEST(PredictionHead, GradientWrtPhiMatchesFiniteDifferences) {
  nn::ParameterSet ps;
  Rng rng = make_rng(10);
  fusion::PredictionHead head(ps, 4, 3, rng);
  const Tensor phi0 = test::random_tensor({4, 2, 2}, 26), psi = test::random_tensor({4, 2, 2}, 27);
  const Tensor wts = test::random_tensor({3, 8, 8}, 28);
  auto loss = [&](const ag::Var& phi) { return ag::sum(ag::mul(head.forward(phi, ag::Var(psi), 8, 8), ag::Var(wts))); };
  ag::Var phi(phi0, true);
  ag::backward(loss(phi));
  const double h = 1e-6;
  for (std::size_t i = 0; i < phi0.size(); ++i) {
    Tensor p = phi0, m = phi0;
    p[i] += h;
    m[i] -= h;
    const double fd = (loss(ag::Var(p)).item() - loss(ag::Var(m)).item()) / (2 * h);
    EXPECT_NEAR(phi.grad()[i], fd, 1e-4 * std::max(1.0, std::abs(fd)));
  }
}

TEST(TotalLoss, CrossEntropyOracleAndBetaDecomposition) {
  const Tensor logits = test::random_tensor({5, 4, 6}, 29, -2, 2);
  const events::SemanticMask mask = test::random_mask(4, 6, 5, 30, 0.2);
  double acc = 0;
  int n = 0;
  for (int c = 0; c < 24; ++c) {
    const int lbl = mask.labels[static_cast<std::size_t>(c)];
    if (lbl == events::kIgnoreLabel) continue;
    const Vec v = cell(logits, c);
    double z = 0;
    for (double x : v) z += std::exp(x);
    acc += std::log(z) - v[static_cast<std::size_t>(lbl - 1)];
    ++n;
  }
  const ag::Var edge(Tensor({1}, {2.5}));
  const auto l0 = fusion::total_loss(ag::Var(logits), mask, edge, 0.0);
  EXPECT_NEAR(l0.pred.item(), acc / n, 1e-9);
  EXPECT_EQ(l0.total.item(), l0.pred.item());
  const auto l1 = fusion::total_loss(ag::Var(logits), mask, edge, 0.1);
  EXPECT_EQ(l1.pred.item(), l0.pred.item());
  EXPECT_NEAR(l1.total.item() - l1.pred.item(), 0.25, 1e-12);
  EXPECT_THROW(fusion::total_loss(ag::Var(logits), mask, edge, -0.1), ConfigError);
}

TEST(TotalLoss, PerfectLogitsAndAllIgnored) {
  const events::SemanticMask mask = test::random_mask(3, 3, 4, 31);
  Tensor logits({4, 3, 3}, -40.0);
  for (int c = 0; c < 9; ++c) logits[static_cast<std::size_t>(mask.labels[static_cast<std::size_t>(c)] - 1) * 9 + c] = 40.0;
  const ag::Var zero(Tensor({1}));
  EXPECT_LT(fusion::total_loss(ag::Var(logits), mask, zero, 0.1).total.item(), 1e-12);
  events::SemanticMask ignored(3, 3, events::kIgnoreLabel, 4);
  EXPECT_EQ(fusion::total_loss(ag::Var(logits), ignored, zero, 0.1).pred.item(), 0.0);
}
