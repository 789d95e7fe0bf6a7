#include "esc/elr.hpp"

#include <algorithm>
#include <cmath>

#include "esc/error.hpp"

namespace esc::elr {

void EdgeDistribution::validate(double tol) const {
  const Tensor& p = probs.value();
  if (p.rank() != 3) throw InputError("edge distribution must be {K,H,W}");
  const int k = p.channels();
  const auto cells = static_cast<std::size_t>(p.cells());
  for (std::size_t i = 0; i < cells; ++i) {
    double s = 0.0;
    for (int c = 0; c < k; ++c) {
      const double v = p[c * cells + i];
      if (!(v >= 0.0)) throw InputError("edge distribution has a negative or NaN entry");
      s += v;
    }
    if (std::abs(s - 1.0) > tol) throw InputError("edge distribution cell sums to " + std::to_string(s));
  }
}

EdgeDistribution one_hot(const dict::KeyGrid& keys, int items) {
  Tensor t({items, keys.height, keys.width});
  const auto cells = static_cast<std::size_t>(keys.height) * keys.width;
  for (std::size_t i = 0; i < cells; ++i) {
    const int k = keys.keys[i];
    if (k < 0 || k >= items) throw ContractError("one_hot: key " + std::to_string(k) + " out of range");
    t[k * cells + i] = 1.0;
  }
  return EdgeDistribution{ag::Var(std::move(t)), DistributionKind::PriorOneHot};
}

EdgeDistribution prior_distribution(const events::BoundaryMap& b, const dict::EdgeDictionary& dictionary) {
  if (!dictionary.frozen()) throw ContractError("prior_distribution: the edge dictionary must be frozen");
  const Tensor g = dictionary.tokenizer().tokenize(b);
  const dict::Quantized q = dict::quantize(g, dictionary.codebook().value());
  return one_hot(q.keys, dictionary.config().items);
}

ModalityHead::ModalityHead(nn::ParameterSet& ps, const std::string& name, int dim, int items, Rng& rng,
                           const std::string& group)
    : hidden_(ps, name + ".hidden", dim, dim, rng, group), out_(ps, name + ".out", dim, items, rng, group) {}

ag::Var ModalityHead::logits(const ag::Var& e) const { return out_.forward(ag::relu(hidden_.forward(e))); }

EdgeDistribution distribution_from_logits(const ag::Var& logits) {
  return EdgeDistribution{ag::softmax_channels(logits), DistributionKind::ModalitySoftmax};
}

EdgeDistribution modality_distribution(const ag::Var& e_encoded, const ModalityHead& head) {
  return distribution_from_logits(head.logits(e_encoded));
}

dict::KeyGrid key_map(const Tensor& p) {
  if (p.rank() != 3) throw InputError("key_map expects {K,H,W}");
  const int k = p.channels();
  const auto cells = static_cast<std::size_t>(p.cells());
  dict::KeyGrid g{p.height(), p.width(), std::vector<int>(cells, 0)};
  for (std::size_t i = 0; i < cells; ++i) {
    int best = 0;
    double best_v = p[i];
    for (int c = 1; c < k; ++c) {
      const double v = p[c * cells + i];
      if (v > best_v) {
        best_v = v;
        best = c;
      }
    }
    g.keys[i] = best;
  }
  return g;
}

dict::KeyGrid key_map(const EdgeDistribution& p) { return key_map(p.probs.value()); }

ag::Var recode_features(const dict::KeyGrid& keys, const ag::Var& codebook) {
  // Keys are integers, so nothing upstream of them is reachable from here.
  return ag::gather_rows(codebook, keys.keys, keys.height, keys.width);
}

namespace {

void check_shapes(const Tensor& q, const Tensor& a, const Tensor& b) {
  if (q.rank() != 3 || !q.same_shape(a) || !q.same_shape(b)) {
    throw InputError("edge_loss: distribution shapes differ (" + shape_string(q.shape()) + ", " +
                     shape_string(a.shape()) + ", " + shape_string(b.shape()) + ")");
  }
}

}  // namespace

ag::Var edge_loss(const EdgeDistribution& q, const EdgeDistribution& p_img, const EdgeDistribution& p_evt,
                  double eps) {
  check_shapes(q.probs.value(), p_img.probs.value(), p_evt.probs.value());
  const dict::KeyGrid k = key_map(q);
  return ag::add(ag::nll_clamped(p_img.probs, k.keys, eps), ag::nll_clamped(p_evt.probs, k.keys, eps));
}

double edge_loss_value(const Tensor& q, const Tensor& p_img, const Tensor& p_evt, double eps) {
  check_shapes(q, p_img, p_evt);
  const dict::KeyGrid k = key_map(q);
  const auto cells = static_cast<std::size_t>(q.cells());
  const double floor = std::log(eps);
  double acc = 0.0;
  for (std::size_t i = 0; i < cells; ++i) {
    const std::size_t idx = static_cast<std::size_t>(k.keys[i]) * cells + i;
    acc -= std::max(std::log(p_img[idx]), floor) + std::max(std::log(p_evt[idx]), floor);
  }
  return cells ? acc / static_cast<double>(cells) : 0.0;
}

}  // namespace esc::elr
