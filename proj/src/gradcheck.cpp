#include "adpgcn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "adpgcn/rng.hpp"

namespace adpgcn {

namespace {

double evaluate(const std::function<Tensor()>& loss_fn) {
  NoGradGuard guard;
  const double v = loss_fn().item();
  if (!std::isfinite(v)) throw NonFiniteValue("loss function produced a non-finite value");
  return v;
}

}  // namespace

double finite_difference_check(const std::function<Tensor()>& loss_fn, std::vector<Tensor> params,
                               const GradCheckOptions& options) {
  if (!(options.step > 0.0)) throw Error("finite difference step must be positive");
  for (auto& p : params) p.zero_grad();
  Tensor loss = loss_fn();
  if (!std::isfinite(loss.item())) throw NonFiniteValue("loss function produced a non-finite value");
  loss.backward();

  // (param index, flat offset) of every coordinate to check.
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t p = 0; p < params.size(); ++p)
    for (std::size_t i = 0; i < params[p].numel(); ++i) coords.emplace_back(p, i);
  if (options.max_coordinates > 0 && options.max_coordinates < coords.size()) {
    Rng rng(options.seed);
    for (std::size_t i = 0; i < options.max_coordinates; ++i)
      std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);
    coords.resize(options.max_coordinates);
  }

  double worst = 0.0;
  for (auto [p, i] : coords) {
    const double ad = params[p].grad()[i];
    auto data = params[p].mutable_data();
    const double saved = data[i];
    data[i] = saved + options.step;
    const double up = evaluate(loss_fn);
    data[i] = saved - options.step;
    const double down = evaluate(loss_fn);
    data[i] = saved;
    const double fd = (up - down) / (2.0 * options.step);
    const double err = std::abs(ad - fd) / std::max({1.0, std::abs(ad), std::abs(fd)});
    worst = std::max(worst, err);
  }
  for (auto& p : params) p.zero_grad();
  return worst;
}

}  // namespace adpgcn
