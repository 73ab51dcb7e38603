#pragma once

// Central finite differences against the tape's analytic gradients.

#include <algorithm>
#include <cmath>
#include <string>

#include "anameta/kdf/autodiff.hpp"
#include "anameta/kdf/model.hpp"
#include "anameta/rng.hpp"

namespace anameta::kdf {

struct GradCheckOptions {
  double eps = 1e-5;
  std::size_t per_tensor = 6;  // entries probed per parameter tensor
  double floor = 1e-8;         // denominators below this count as this
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst;  // "name[index] analytic=… numeric=…"
};

/// `loss(tape, params)` records a forward pass and returns the 1×1 loss node.
/// Relative error per entry is |a − n| / max(|a|, |n|, floor).
template <class F>
GradCheckResult grad_check(ParamSet<double>& params, F&& loss, const GradCheckOptions& opt = {}) {
  params.zero_grad();
  {
    Tape<double> t;
    const Id out = loss(t, params);
    if (!std::isfinite(t.value(out)(0, 0))) throw Error(ErrorCode::NonFiniteLoss, "grad_check: loss is not finite at the point");
    t.backward(out);
  }
  const auto eval = [&] {
    Tape<double> t(false);
    return t.value(loss(t, params))(0, 0);
  };
  GradCheckResult r;
  Rng rng(opt.seed);
  for (const std::string& name : params.order) {
    Mat<double>& v = params.values.at(name);
    const Mat<double>& g = params.grads.at(name);
    const auto size = static_cast<std::size_t>(v.size());
    if (size == 0) continue;
    std::vector<std::size_t> idx(size);
    for (std::size_t k = 0; k < size; ++k) idx[k] = k;
    if (size > opt.per_tensor) {
      for (std::size_t k = 0; k < opt.per_tensor; ++k)
        std::swap(idx[k], idx[k + static_cast<std::size_t>(rng.below(size - k))]);
      idx.resize(opt.per_tensor);
    }
    for (std::size_t k : idx) {
      const double orig = v.data()[k];
      v.data()[k] = orig + opt.eps;
      const double up = eval();
      v.data()[k] = orig - opt.eps;
      const double down = eval();
      v.data()[k] = orig;
      const double numeric = (up - down) / (2.0 * opt.eps);
      const double analytic = g.data()[k];
      const double rel =
          std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), opt.floor});
      ++r.checked;
      if (rel > r.max_rel_error || r.worst.empty()) {
        if (rel >= r.max_rel_error) {
          r.max_rel_error = rel;
          r.worst = name + "[" + std::to_string(k) + "] analytic=" + std::to_string(analytic) +
                    " numeric=" + std::to_string(numeric);
        }
      }
    }
  }
  return r;
}

}  // namespace anameta::kdf
