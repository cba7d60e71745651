#include <torch/torch.h>

#include <cmath>

#include "harness.hpp"
#include "oracles.hpp"
#include "uniwetok/quantizer.hpp"

using namespace uniwetok;

namespace {

void run(const acceptance::Context&, acceptance::Verdict& v) {
  // Range and symmetry over a dense sweep, in both precisions.
  for (auto dtype : {torch::kFloat32, torch::kFloat64}) {
    auto x = torch::cat({torch::linspace(-60, 60, 20001, dtype), torch::tensor({-1e4, 1e4, -1e30, 1e30}, dtype)});
    auto y = siglu(x);
    const bool finite = torch::isfinite(y).all().item<bool>();
    const double max_abs = y.abs().max().item<double>();
    v.check(finite, "non-finite siglu output");
    v.check(max_abs < 1.0, "siglu reached |u| = 1");
    if (dtype == torch::kFloat64) {
      const double odd = (y + siglu(-x)).abs().max().item<double>();
      v.check(odd <= 1e-12, "odd symmetry error " + acceptance::fmt(odd));
      v.note("odd symmetry error " + acceptance::fmt(odd, 2));
    }
  }

  // Closed-form values of (1 - e^x) / (1 + e^x).
  v.check(std::abs(siglu(std::log(3.0)) + 0.5) < 1e-15, "siglu(ln 3) = " + acceptance::fmt(siglu(std::log(3.0)), 17));
  v.check(siglu(0.0) == 0.0, "siglu(0) != 0");
  for (double x : {-3.0, -0.5, 0.25, 2.0, 7.0}) {
    const double expect = (1.0 - std::exp(x)) / (1.0 + std::exp(x));
    v.check(std::abs(siglu(x) - expect) < 1e-15, "closed form at " + acceptance::fmt(x));
  }
  v.note("siglu(ln 3) = " + acceptance::fmt(siglu(std::log(3.0)), 17));

  // Gradient stays finite where tanh saturates.
  auto big = torch::tensor({-1e4, 1e4}, torch::kFloat64).requires_grad_(true);
  siglu(big).sum().backward();
  v.check(torch::isfinite(big.grad()).all().item<bool>(), "non-finite gradient at |x| = 1e4");

  // Token entropy and commitment distance fall together as |u| grows.
  QuantizerConfig q;
  q.groups = 2;
  q.bits_per_group = 4;
  double prev_entropy = INFINITY, prev_commit = INFINITY;
  bool monotone = true;
  for (int k = 1; k <= 9; ++k) {
    for (double sign : {1.0, -1.0}) {
      auto u = torch::full({2, 4, 4, 2, 4}, sign * k / 10.0, torch::kFloat64);
      const double h = token_entropy_loss(u, q).item<double>();
      const double c = commitment_loss(u, quantize(u)).item<double>();
      const double h_oracle = oracle::token_entropy({u.data_ptr<double>(), u.data_ptr<double>() + u.numel()}, 2, 4);
      v.check(std::abs(h - h_oracle) < 1e-10, "token entropy oracle mismatch at |u| = " + acceptance::fmt(k / 10.0));
      v.check(std::abs(c - std::pow(1.0 - k / 10.0, 2)) < 1e-12, "commitment distance at |u| = " + acceptance::fmt(k / 10.0));
      if (sign > 0) {
        monotone = monotone && h < prev_entropy && c < prev_commit;
        prev_entropy = h;
        prev_commit = c;
      }
    }
  }
  v.check(monotone, "token entropy and commitment not both strictly decreasing");
  v.note("entropy/commitment strictly decreasing over |u| = 0.1..0.9");
}

acceptance::Register reg(3, "SigLu", 10.0, run);

}  // namespace
