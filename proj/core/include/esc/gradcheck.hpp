#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "esc/autograd.hpp"

namespace esc::harness {

struct GradCheckOptions {
  double step = 1e-3;
  int max_entries_per_tensor = 12;
  double tolerance = 1e-4;
  std::uint64_t seed = 0;
};

struct TensorCheck {
  std::string component;
  std::string name;
  int checked = 0;
  double max_abs_analytic = 0.0;
  double max_abs_numeric = 0.0;
  double max_abs_diff = 0.0;
  double rel_error = 0.0;  // max|a - n| / max(max|a|, max|n|)
};

// Central differences of `numeric_loss` against the gradient that backward()
// of `analytic_loss` leaves in each tensor. Both callables read the tensors'
// current values; the check perturbs them in place and restores them.
std::vector<TensorCheck> check_gradients(const std::string& component, const std::function<ag::Var()>& analytic_loss,
                                         const std::function<double()>& numeric_loss,
                                         const std::vector<std::pair<std::string, ag::Var>>& tensors,
                                         const GradCheckOptions& opts);

struct GradCheckReport {
  std::vector<TensorCheck> tensors;
  std::map<std::string, double> max_rel_error;  // per component
  std::map<std::string, bool> contracts;        // estimator / stop-gradient checks
  double tolerance = 1e-4;
  [[nodiscard]] bool passed() const;
  [[nodiscard]] nlohmann::json to_json() const;
};

// Double-precision fixtures with a 2x2 latent grid: RC, UO, L_edge, L_dict,
// predict_mask and the whole model's total loss, plus the straight-through
// and stop-gradient contracts.
GradCheckReport run_grad_check(const GradCheckOptions& opts);

}  // namespace esc::harness
