#ifndef RISKSEQ_TESTS_GRADCHECK_HPP
#define RISKSEQ_TESTS_GRADCHECK_HPP

// Central finite differences against tape gradients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "riskseq/autodiff.hpp"

namespace riskseq::testing {

using ScalarFn = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

struct GradCheck {
  double max_rel = 0.0;
  double max_abs = 0.0;
  std::size_t checked = 0;
};

// Relative error with a floor so gradients that are zero up to rounding do not
// divide by ~0.
inline double relative_error(double a, double n, double floor = 1e-6) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

inline double eval_scalar(const ScalarFn& f, const std::vector<Tensor>& xs) {
  ad::Tape tape;
  std::vector<ad::Var> in;
  for (const auto& x : xs) in.push_back(tape.constant(x));
  return f(tape, in).value()[0];
}

inline std::vector<Tensor> analytic_gradients(const ScalarFn& f, const std::vector<Tensor>& xs) {
  ad::Tape tape;
  std::vector<ad::Var> in;
  for (const auto& x : xs) in.push_back(tape.leaf(x));
  tape.backward(f(tape, in));
  std::vector<Tensor> out;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const Tensor* g = tape.grad_if_any(in[k].id);
    out.push_back(g ? *g : Tensor(xs[k].shape()));
  }
  return out;
}

inline GradCheck check_gradients(const ScalarFn& f, std::vector<Tensor> xs, double h = 1e-5) {
  const auto grads = analytic_gradients(f, xs);
  GradCheck r;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    for (std::size_t i = 0; i < xs[k].size(); ++i) {
      const double keep = xs[k][i];
      xs[k][i] = keep + h;
      const double up = eval_scalar(f, xs);
      xs[k][i] = keep - h;
      const double down = eval_scalar(f, xs);
      xs[k][i] = keep;
      const double numeric = (up - down) / (2 * h);
      r.max_rel = std::max(r.max_rel, relative_error(grads[k][i], numeric));
      r.max_abs = std::max(r.max_abs, std::abs(grads[k][i] - numeric));
      ++r.checked;
    }
  }
  return r;
}

}  // namespace riskseq::testing

#endif  // RISKSEQ_TESTS_GRADCHECK_HPP
