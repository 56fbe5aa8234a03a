#include "edt/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace edt {

GradCheckResult check_gradients(ParameterSet& params,
                                const std::function<Var(Tape&, ParameterSet&)>& loss,
                                const GradCheckOptions& opts) {
  auto eval = [&] {
    Tape tape;
    return loss(tape, params).item();
  };

  params.zero_grad();
  {
    Tape tape;
    tape.backward(loss(tape, params));
  }

  GradCheckResult result;
  std::mt19937_64 rng(opts.seed);
  for (auto& e : params.entries()) {
    if (!e.trainable) continue;
    const Matrix analytic = e.grad;
    std::vector<Index> coords(static_cast<std::size_t>(e.value.size()));
    std::iota(coords.begin(), coords.end(), Index{0});
    if (opts.coords_per_tensor > 0 && coords.size() > std::size_t(opts.coords_per_tensor)) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(static_cast<std::size_t>(opts.coords_per_tensor));
    }
    for (Index k : coords) {
      double& x = e.value.data()[k];
      const double saved = x;
      x = saved + opts.step;
      const double up = eval();
      x = saved - opts.step;
      const double down = eval();
      x = saved;
      const double numeric = (up - down) / (2.0 * opts.step);
      const double a = analytic.data()[k];
      const double diff = std::abs(a - numeric);
      ++result.checked;
      if (diff < opts.abs_floor) continue;
      const double rel = diff / std::max(std::abs(a), std::abs(numeric));
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_parameter = e.name;
      }
    }
  }
  return result;
}

}  // namespace edt
