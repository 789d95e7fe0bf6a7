#include <gtest/gtest.h>

#include <cmath>
#include <memory>

#include "esc/dictionary.hpp"
#include "esc/elr.hpp"
#include "esc/error.hpp"
#include "test_util.hpp"

using namespace esc;

namespace {

Tensor softmax_oracle(const Tensor& logits) {
  Tensor out = logits;
  const int k = logits.channels(), cells = logits.cells();
  for (int c = 0; c < cells; ++c) {
    double mx = -1e300;
    for (int j = 0; j < k; ++j) mx = std::max(mx, logits[static_cast<std::size_t>(j) * cells + c]);
    double lse = 0;
    for (int j = 0; j < k; ++j) lse += std::exp(logits[static_cast<std::size_t>(j) * cells + c] - mx);
    lse = mx + std::log(lse);
    for (int j = 0; j < k; ++j) {
      out[static_cast<std::size_t>(j) * cells + c] = std::exp(logits[static_cast<std::size_t>(j) * cells + c] - lse);
    }
  }
  return out;
}

Tensor random_probs(int k, int h, int w, std::uint64_t seed) {
  return softmax_oracle(test::random_tensor({k, h, w}, seed, -3, 3));
}

double edge_loss_oracle(const Tensor& q, const Tensor& pi, const Tensor& pe, double eps) {
  const int k = q.channels(), cells = q.cells();
  double acc = 0;
  for (int c = 0; c < cells; ++c) {
    int star = 0;
    for (int j = 0; j < k; ++j) {
      if (q[static_cast<std::size_t>(j) * cells + c] == 1.0) star = j;
    }
    const auto at = static_cast<std::size_t>(star) * cells + c;
    acc -= std::log(std::max(pi[at], eps)) + std::log(std::max(pe[at], eps));
  }
  return acc / cells;
}

events::BoundaryMap random_boundary(int h, int w, std::uint64_t seed) {
  return events::extract_boundary(test::random_mask(h, w, 3, seed));
}

}  // namespace

TEST(EdgeLoss, UniformDistributionsGiveTwiceLogK) {
  const int k = 128;
  dict::KeyGrid keys{2, 2, {0, 5, 77, 127}};
  const auto q = elr::one_hot(keys, k);
  const Tensor uniform({k, 2, 2}, 1.0 / k);
  EXPECT_NEAR(elr::edge_loss_value(q.probs.value(), uniform, uniform), 2.0 * std::log(128.0), 1e-12);
  const ag::Var u(uniform);
  EXPECT_NEAR(elr::edge_loss(q, {u}, {u}).item(), 2.0 * std::log(128.0), 1e-12);
}

TEST(EdgeLoss, MatchingOneHotGivesZero) {
  dict::KeyGrid keys{2, 3, {1, 2, 3, 4, 5, 6}};
  const auto q = elr::one_hot(keys, 8);
  EXPECT_EQ(elr::edge_loss(q, q, q).item(), 0.0);
  // A mismatching one-hot hits the clamp: -2 log(eps) per cell.
  const auto other = elr::one_hot({2, 3, {0, 0, 0, 0, 0, 0}}, 8);
  EXPECT_NEAR(elr::edge_loss(q, other, other).item(), -2.0 * std::log(elr::kLogEps), 1e-9);
}

TEST(EdgeLoss, MatchesScalarLoopOracle) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    Rng rng = make_rng(seed);
    dict::KeyGrid keys{3, 4, {}};
    for (int i = 0; i < 12; ++i) keys.keys.push_back(uniform_int(rng, 0, 15));
    const auto q = elr::one_hot(keys, 16);
    Tensor pi = random_probs(16, 3, 4, seed + 10), pe = random_probs(16, 3, 4, seed + 20);
    pi[0] = 0.0;  // exercise the clamp
    const double oracle = edge_loss_oracle(q.probs.value(), pi, pe, elr::kLogEps);
    EXPECT_NEAR(elr::edge_loss_value(q.probs.value(), pi, pe), oracle, 1e-9);
    EXPECT_NEAR(elr::edge_loss(q, {ag::Var(pi)}, {ag::Var(pe)}).item(), oracle, 1e-9);
  }
}

TEST(EdgeLoss, PermutationInvariantAndShapeChecked) {
  dict::KeyGrid keys{2, 2, {0, 1, 2, 3}};
  const Tensor q = elr::one_hot(keys, 4).probs.value();
  const Tensor pi = random_probs(4, 2, 2, 1), pe = random_probs(4, 2, 2, 2);
  const int perm[4] = {2, 0, 3, 1};
  auto permute = [&](const Tensor& t) {
    Tensor out = t;
    for (int j = 0; j < 4; ++j) {
      for (int c = 0; c < 4; ++c) out[static_cast<std::size_t>(perm[j]) * 4 + c] = t[static_cast<std::size_t>(j) * 4 + c];
    }
    return out;
  };
  EXPECT_NEAR(elr::edge_loss_value(q, pi, pe), elr::edge_loss_value(permute(q), permute(pi), permute(pe)), 1e-12);
  EXPECT_GE(elr::edge_loss_value(q, pi, pe), 0.0);
  EXPECT_THROW(elr::edge_loss_value(q, Tensor({4, 2, 3}), pe), InputError);
}

TEST(ModalityDistribution, SoftmaxOracle) {
  const auto zero = elr::distribution_from_logits(ag::Var(Tensor({8, 2, 2})));
  for (double v : zero.probs.value().values()) EXPECT_DOUBLE_EQ(v, 1.0 / 8);
  Tensor big({8, 1, 1});
  big[3] = 80.0;
  const auto peaked = elr::distribution_from_logits(ag::Var(big));
  EXPECT_NEAR(peaked.probs.value()[3], 1.0, 1e-12);
  const Tensor logits = test::random_tensor({16, 3, 3}, 4, -5, 5);
  const auto p = elr::distribution_from_logits(ag::Var(logits));
  const Tensor oracle = softmax_oracle(logits);
  for (std::size_t i = 0; i < oracle.size(); ++i) EXPECT_NEAR(p.probs.value()[i], oracle[i], 1e-9);
  EXPECT_NO_THROW(p.validate());
  EXPECT_EQ(p.kind, elr::DistributionKind::ModalitySoftmax);
}

TEST(ModalityDistribution, HeadProducesValidDistribution) {
  nn::ParameterSet ps;
  Rng rng = make_rng(3);
  const elr::ModalityHead head(ps, "head", 8, 16, rng);
  const auto p = elr::modality_distribution(ag::Var(test::random_tensor({8, 4, 4}, 5)), head);
  EXPECT_EQ(p.probs.shape(), (std::vector<int>{16, 4, 4}));
  EXPECT_NO_THROW(p.validate());
}

TEST(KeyMap, ArgmaxWithLowestIndexTies) {
  Tensor one_hot({32, 1, 1});
  one_hot[12] = 1.0;
  EXPECT_EQ(elr::key_map(one_hot).keys, std::vector<int>{12});
  EXPECT_EQ(elr::key_map(Tensor({32, 2, 2}, 1.0 / 32)).keys, (std::vector<int>{0, 0, 0, 0}));
  const Tensor p = random_probs(16, 5, 5, 6);
  const auto keys = elr::key_map(p);
  for (int c = 0; c < 25; ++c) {
    int best = 0;
    for (int j = 1; j < 16; ++j) {
      if (p[static_cast<std::size_t>(j) * 25 + c] > p[static_cast<std::size_t>(best) * 25 + c]) best = j;
    }
    EXPECT_EQ(keys.keys[static_cast<std::size_t>(c)], best);
  }
}

TEST(Recode, LooksUpRowsWithoutGradientToDistribution) {
  const ag::Var codebook(test::random_tensor({6, 4}, 7), true);
  const auto g = elr::recode_features({2, 2, {3, 3, 3, 3}}, codebook);
  for (int c = 0; c < 4; ++c) {
    for (int i = 0; i < 4; ++i) EXPECT_EQ(g.value()[static_cast<std::size_t>(i) * 4 + c], codebook.value()[3 * 4 + static_cast<std::size_t>(i)]);
  }
  EXPECT_THROW(elr::recode_features({1, 1, {6}}, codebook), ContractError);

  // Downstream gradient reaches the codebook rows but never the head logits.
  const ag::Var logits(test::random_tensor({6, 2, 2}, 8), true);
  const auto p = elr::distribution_from_logits(logits);
  const auto recoded = elr::recode_features(elr::key_map(p), codebook);
  ag::backward(ag::sum(ag::mul(recoded, recoded)));
  EXPECT_GT(codebook.grad().max_abs(), 0.0);
  EXPECT_TRUE(logits.grad().empty() || logits.grad().max_abs() == 0.0);
}

class PriorChain : public ::testing::Test {
 protected:
  void SetUp() override {
    auto d = std::make_shared<dict::EdgeDictionary>(dict::DictConfig{32, 8, 0.25}, 17);
    d->freeze();
    dictionary = d;
  }
  std::shared_ptr<const dict::EdgeDictionary> dictionary;
};

TEST_F(PriorChain, ArgmaxOfPriorEqualsQuantizedKeys) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto b = random_boundary(32, 40, seed);
    const auto q = elr::prior_distribution(b, *dictionary);
    EXPECT_EQ(q.kind, elr::DistributionKind::PriorOneHot);
    EXPECT_NO_THROW(q.validate(0.0));
    const auto quant = dict::quantize(dictionary->tokenizer().tokenize(b), dictionary->codebook().value());
    EXPECT_EQ(elr::key_map(q), quant.keys);
    EXPECT_EQ(elr::recode_features(elr::key_map(q), dictionary->codebook()).value(), quant.values);
    // Exactly one nonzero entry per cell.
    const Tensor& pv = q.probs.value();
    for (int c = 0; c < pv.cells(); ++c) {
      int nz = 0;
      for (int j = 0; j < pv.channels(); ++j) nz += pv[static_cast<std::size_t>(j) * pv.cells() + c] != 0.0;
      EXPECT_EQ(nz, 1);
    }
  }
}

TEST_F(PriorChain, CellEqualToItemFiveGivesOneHotAtFive) {
  // An all-empty map tokenizes to a constant cell; make item 5 that cell.
  auto d = std::make_shared<dict::EdgeDictionary>(dict::DictConfig{8, 8, 0.25}, 3);
  const events::BoundaryMap empty(16, 16);
  const Tensor g = d->tokenizer().tokenize(empty);
  ag::Var cb = d->codebook();
  for (int i = 0; i < 8; ++i) cb.mutable_value()[5 * 8 + static_cast<std::size_t>(i)] = g[static_cast<std::size_t>(i) * g.cells()];
  d->freeze();
  const auto q = elr::prior_distribution(empty, *d);
  // Cells away from the zero-padded border see the same constant input.
  EXPECT_EQ(q.probs.value().at(5, 2, 2), 1.0);
}

TEST(Prior, UnfrozenDictionaryRejected) {
  const dict::EdgeDictionary d(dict::DictConfig{8, 8, 0.25}, 1);
  EXPECT_THROW(elr::prior_distribution(random_boundary(16, 16, 1), d), ContractError);
}
