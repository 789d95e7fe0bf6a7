#include "esc/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>

#include "esc/dictionary.hpp"
#include "esc/elr.hpp"
#include "esc/fusion.hpp"
#include "esc/model.hpp"
#include "esc/rng.hpp"

namespace esc::harness {

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = normal(rng, 0.0, scale);
  return t;
}

ag::Var leaf(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  return ag::Var(random_tensor(std::move(shape), rng, scale), true);
}

// sum(x * r) for a fixed random r: a generic downstream scalar.
ag::Var probe(const ag::Var& x, const Tensor& r) { return ag::sum(ag::mul(x, ag::Var(r))); }

void add_params(std::vector<std::pair<std::string, ag::Var>>& out, const nn::ParameterSet& ps) {
  for (const auto& p : ps.params()) out.emplace_back(p.name, p.var);
}

void record(GradCheckReport& rep, std::vector<TensorCheck> checks) {
  for (auto& c : checks) {
    double& m = rep.max_rel_error[c.component];
    m = std::max(m, c.rel_error);
    rep.tensors.push_back(std::move(c));
  }
}

events::BoundaryMap random_boundary(int h, int w, Rng& rng) {
  events::SemanticMask m(h, w, 1, 4);
  const int cx = uniform_int(rng, 2, w - 3), cy = uniform_int(rng, 2, h - 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) m.at(y, x) = static_cast<std::uint8_t>(1 + (x >= cx) + 2 * (y >= cy));
  }
  return events::extract_boundary(m);
}

}  // namespace

std::vector<TensorCheck> check_gradients(const std::string& component, const std::function<ag::Var()>& analytic_loss,
                                         const std::function<double()>& numeric_loss,
                                         const std::vector<std::pair<std::string, ag::Var>>& tensors,
                                         const GradCheckOptions& opts) {
  for (const auto& [name, v] : tensors) {
    ag::Var copy = v;
    copy.zero_grad();
  }
  {
    const ag::Var loss = analytic_loss();
    ag::backward(loss);
  }
  std::vector<TensorCheck> out;
  Rng rng = make_rng(opts.seed, std::hash<std::string>{}(component) & 0xffff);
  for (const auto& [name, v] : tensors) {
    ag::Var var = v;
    Tensor& value = var.mutable_value();
    const Tensor analytic = var.grad().empty() ? Tensor::zeros_like(value) : var.grad();
    std::vector<std::size_t> idx(value.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (static_cast<int>(idx.size()) > opts.max_entries_per_tensor) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(static_cast<std::size_t>(opts.max_entries_per_tensor));
      std::sort(idx.begin(), idx.end());
    }
    TensorCheck c{component, name, static_cast<int>(idx.size()), 0, 0, 0, 0};
    for (std::size_t i : idx) {
      const double keep = value[i];
      auto stencil = [&](double h) {
        auto at = [&](double d) {
          value[i] = keep + d * h;
          return numeric_loss();
        };
        const double f2 = at(2.0), f1 = at(1.0), m1 = at(-1.0), m2 = at(-2.0);
        value[i] = keep;
        return (-f2 + 8.0 * f1 - 8.0 * m1 + m2) / (12.0 * h);
      };
      // Fourth-order central stencil. A ReLU kink inside the stencil shows up
      // as disagreement between steps h and h/2; shrink the step until the two
      // agree (never consulting the analytic value).
      const double f0 = std::abs(numeric_loss()) + 1.0;
      double numeric = 0.0, best_gap = std::numeric_limits<double>::infinity();
      double h = opts.step;
      for (int attempt = 0; attempt < 6; ++attempt, h *= 0.1) {
        const double d_full = stencil(h), d_half = stencil(0.5 * h);
        const double gap = std::abs(d_full - d_half);
        if (gap < best_gap) {
          best_gap = gap;
          numeric = d_half;
        }
        // Round-off of the half-step quotient.
        const double noise = 8.0 * std::numeric_limits<double>::epsilon() * f0 / (0.5 * h);
        if (gap <= 10.0 * noise + 1e-3 * opts.tolerance * std::abs(d_half)) break;
      }
      c.max_abs_analytic = std::max(c.max_abs_analytic, std::abs(analytic[i]));
      c.max_abs_numeric = std::max(c.max_abs_numeric, std::abs(numeric));
      c.max_abs_diff = std::max(c.max_abs_diff, std::abs(analytic[i] - numeric));
    }
    const double scale = std::max(c.max_abs_analytic, c.max_abs_numeric);
    // Below this both sides are rounding noise of the difference quotient.
    c.rel_error = scale > 1e-7 ? c.max_abs_diff / scale : 0.0;
    out.push_back(c);
  }
  return out;
}

bool GradCheckReport::passed() const {
  for (const auto& [k, v] : max_rel_error) {
    if (!(v < tolerance)) return false;
  }
  for (const auto& [k, ok] : contracts) {
    if (!ok) return false;
  }
  return true;
}

nlohmann::json GradCheckReport::to_json() const {
  nlohmann::json t = nlohmann::json::array();
  for (const auto& c : tensors) {
    t.push_back({{"component", c.component},
                 {"tensor", c.name},
                 {"checked", c.checked},
                 {"max_abs_analytic", c.max_abs_analytic},
                 {"max_abs_numeric", c.max_abs_numeric},
                 {"rel_error", c.rel_error}});
  }
  return {{"tolerance", tolerance},
          {"passed", passed()},
          {"max_rel_error", max_rel_error},
          {"contracts", contracts},
          {"tensors", t}};
}

GradCheckReport run_grad_check(const GradCheckOptions& opts) {
  constexpr int n = 8, k_items = 16, heads = 2, lh = 2, lw = 2;
  GradCheckReport rep;
  rep.tolerance = opts.tolerance;
  Rng rng = make_rng(opts.seed, 0x6c);

  // RC.
  {
    nn::ParameterSet ps;
    fusion::RecodedConsolidation rc(ps, n, heads, rng);
    const ag::Var f = leaf({n, lh, lw}, rng);
    const ag::Var gi(random_tensor({n, lh, lw}, rng)), ge(random_tensor({n, lh, lw}, rng));
    const Tensor r = random_tensor({n, lh, lw}, rng);
    auto loss = [&] { return probe(rc.forward(f, gi, ge), r); };
    std::vector<std::pair<std::string, ag::Var>> t{{"input.f_img", f}};
    add_params(t, ps);
    record(rep, check_gradients("rc", loss, [&] { return loss().item(); }, t, opts));
  }

  // UO.
  {
    nn::ParameterSet ps;
    fusion::UncertaintyOptimization uo(ps, n, heads, rng);
    const ag::Var ei = leaf({n, lh, lw}, rng), ee = leaf({n, lh, lw}, rng);
    const auto ci = fusion::uo_confidence(elr::distribution_from_logits(ag::Var(random_tensor({k_items, lh, lw}, rng))));
    const auto ce = fusion::uo_confidence(elr::distribution_from_logits(ag::Var(random_tensor({k_items, lh, lw}, rng))));
    const Tensor r = random_tensor({n, lh, lw}, rng);
    auto loss = [&] { return probe(uo.forward(ei, ee, ci, ce).psi, r); };
    std::vector<std::pair<std::string, ag::Var>> t{{"input.e_img", ei}, {"input.e_evt", ee}};
    add_params(t, ps);
    record(rep, check_gradients("uo", loss, [&] { return loss().item(); }, t, opts));
  }

  // L_edge through both modality heads.
  {
    nn::ParameterSet ps;
    elr::ModalityHead hi(ps, "head_img", n, k_items, rng), he(ps, "head_evt", n, k_items, rng);
    const ag::Var ei = leaf({n, lh, lw}, rng), ee = leaf({n, lh, lw}, rng);
    dict::KeyGrid keys{lh, lw, std::vector<int>(lh * lw)};
    for (auto& k : keys.keys) k = uniform_int(rng, 0, k_items - 1);
    const auto q = elr::one_hot(keys, k_items);
    auto loss = [&] {
      return elr::edge_loss(q, elr::modality_distribution(ei, hi), elr::modality_distribution(ee, he));
    };
    std::vector<std::pair<std::string, ag::Var>> t{{"input.e_img", ei}, {"input.e_evt", ee}};
    add_params(t, ps);
    record(rep, check_gradients("l_edge", loss, [&] { return loss().item(); }, t, opts));
  }

  // predict_mask + cross-entropy.
  {
    nn::ParameterSet ps;
    fusion::PredictionHead head(ps, n, events::kDefaultClasses, rng);
    const ag::Var phi = leaf({n, lh, lw}, rng), psi = leaf({n, lh, lw}, rng);
    events::SemanticMask mask(4 * lh, 4 * lw, 1);
    for (auto& l : mask.labels) l = static_cast<std::uint8_t>(uniform_int(rng, 1, events::kDefaultClasses));
    mask.labels[0] = events::kIgnoreLabel;
    auto loss = [&] {
      return fusion::total_loss(head.forward(phi, psi, mask.height, mask.width), mask, ag::Var(Tensor({1})), 0.0).total;
    };
    std::vector<std::pair<std::string, ag::Var>> t{{"input.phi", phi}, {"input.psi", psi}};
    add_params(t, ps);
    record(rep, check_gradients("predict_mask", loss, [&] { return loss().item(); }, t, opts));
  }

  // L_dict with the straight-through estimator.
  {
    dict::EdgeDictionary d({k_items, n, 0.25}, derive_seed(opts.seed, 0xd1));
    const events::BoundaryMap b = random_boundary(4 * lh, 4 * lw, rng);
    std::unique_ptr<dict::EdgeDictionary::Pass> base;
    auto analytic = [&] {
      base = std::make_unique<dict::EdgeDictionary::Pass>(d.forward(b));
      return base->loss.total;
    };
    auto numeric = [&] {
      ag::NoGradGuard g;
      return d.forward_frozen(b, *base).loss.total.item();
    };
    std::vector<std::pair<std::string, ag::Var>> t;
    add_params(t, d.params());
    record(rep, check_gradients("l_dict", analytic, numeric, t, opts));

    // Reconstruction alone must reach the tokenizer through the estimator.
    d.params().zero_grad();
    ag::backward(d.forward(b).loss.reconstruction);
    double norm = 0.0;
    for (const auto& p : d.params().params()) {
      if (p.name.rfind("tokenizer.", 0) == 0 && !p.var.grad().empty()) norm += p.var.grad().max_abs();
    }
    rep.contracts["straight_through_reaches_tokenizer"] = norm > 0.0;
  }

  // Straight-through identity Jacobian.
  {
    const ag::Var g = leaf({n, lh, lw}, rng);
    const ag::Var q(random_tensor({n, lh, lw}, rng));
    const ag::Var out = ag::straight_through(g, q);
    ag::backward(ag::sum(out));
    bool ok = out.value() == q.value();
    for (double v : g.grad().values()) ok = ok && v == 1.0;
    rep.contracts["straight_through_identity_jacobian"] = ok;
  }

  // Whole model: total loss, with key maps and confidences held at their base values.
  {
    dict::EdgeDictionary d({k_items, n, 0.25}, derive_seed(opts.seed, 0xd2));
    d.freeze();
    auto dp = std::make_shared<const dict::EdgeDictionary>(std::move(d));
    ModelConfig mc;
    mc.items = k_items;
    mc.dim = n;
    mc.heads = heads;
    mc.encoder.input_multiple = 4 * lh;
    EscModel model(mc, dp, derive_seed(opts.seed, 0x30));
    const int h = 4 * lh, w = 4 * lw;
    const Tensor image = random_tensor({3, h, w}, rng, 0.5);
    const Tensor voxels = random_tensor({mc.encoder.voxel_bins, h, w}, rng, 0.5);
    events::SemanticMask mask(h, w, 1);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) mask.at(y, x) = static_cast<std::uint8_t>(x < w / 2 ? 1 : (y < h / 2 ? 3 : 5));
    }
    const elr::EdgeDistribution prior = elr::prior_distribution(events::extract_boundary(mask), *dp);
    std::unique_ptr<ModelOutput> base;
    auto analytic = [&] {
      base = std::make_unique<ModelOutput>(model.forward(image, voxels));
      return model.loss(*base, mask, mc.beta, prior).total;
    };
    auto numeric = [&] {
      ag::NoGradGuard g;
      const ModelOutput o = model.forward_frozen(image, voxels, *base);
      return model.loss(o, mask, mc.beta, prior).total.item();
    };
    std::vector<std::pair<std::string, ag::Var>> t;
    add_params(t, model.params());
    record(rep, check_gradients("model", analytic, numeric, t, opts));

    // L_pred alone leaves the modality heads untouched (argmax lookup + constant confidences).
    model.params().zero_grad();
    const ModelOutput o = model.forward(image, voxels);
    ag::backward(model.loss(o, mask, 0.0, prior).pred);
    auto zero = [](const ag::Var& v) { return v.grad().empty() || v.grad().max_abs() == 0.0; };
    bool ok = zero(o.logits_img) && zero(o.logits_evt);
    for (const auto& p : model.params().params()) {
      if (p.name.rfind("modality_head", 0) == 0) ok = ok && zero(p.var);
    }
    rep.contracts["stop_gradient_at_key_lookup"] = ok;
  }
  return rep;
}

}  // namespace esc::harness
