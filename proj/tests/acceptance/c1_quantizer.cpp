#include <torch/torch.h>

#include <cmath>

#include "harness.hpp"
#include "oracles.hpp"
#include "uniwetok/quantizer.hpp"

using namespace uniwetok;

namespace {

std::vector<double> values(const torch::Tensor& t) {
  auto c = t.to(torch::kFloat64).contiguous();
  return {c.data_ptr<double>(), c.data_ptr<double>() + c.numel()};
}

void run(const acceptance::Context&, acceptance::Verdict& v) {
  // Exhaustive id <-> code round trip at d' = 8, against the oracle's id.
  QuantizerConfig q8;
  q8.groups = 1;
  q8.bits_per_group = 8;
  auto ids = torch::arange(256, torch::kInt64).view({256, 1});
  auto code = indices_to_codes(ids, q8);
  bool round_trip = torch::equal(codes_to_indices(code.signs), ids) && torch::equal(quantize(code.signs).ids, ids);
  for (int64_t i = 0; i < 256 && round_trip; ++i) round_trip = oracle::code_id(values(code.signs[i][0])) == i;
  v.check(round_trip, "id/code round trip over 256 codes");
  v.note("256/256 codes round-trip");

  // Entropies against brute-force enumeration on g=1, d'=2 toy batches.
  double worst = 0.0;
  torch::manual_seed(1);
  for (int trial = 0; trial < 20; ++trial) {
    for (bool siglu : {true, false}) {
      QuantizerConfig q;
      q.groups = 1;
      q.bits_per_group = 2;
      q.siglu = siglu;
      q.entropy_temperature = 0.5 + 0.1 * trial;
      auto u = torch::rand({2, 3, 3, 1, 2}, torch::kFloat64) * 1.96 - 0.98;
      const auto flat = values(u);
      worst = std::max(worst, std::abs(token_entropy_loss(u, q).item<double>() -
                                       oracle::token_entropy(flat, 1, 2, siglu, q.entropy_temperature)));
      worst = std::max(worst, std::abs(codebook_entropy_loss(u, q).item<double>() -
                                       oracle::codebook_entropy(flat, 1, 2, siglu, q.entropy_temperature)));
    }
  }
  v.check(worst <= 1e-10, "entropy vs enumeration max error " + acceptance::fmt(worst));
  v.note("entropy max abs error " + acceptance::fmt(worst, 3));

  // Straight-through forward equals the sign output bit for bit.
  auto u = torch::randn({8, 4, 4, 16, 8});
  u.index_put_({0, 0, 0, 0}, 0.0);
  auto c = quantize(u);
  v.check(torch::equal(straight_through(u.clone().requires_grad_(true), c), c.signs), "straight-through forward");
  v.check(c.signs.index({0, 0, 0, 0}).eq(1).all().item<bool>(), "sign(0) = +1");
  v.note("straight-through bit-exact");
}

acceptance::Register reg(1, "quantizer oracles", 10.0, run);

}  // namespace
