#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "adpgcn/tensor.hpp"

namespace adpgcn {

struct GradCheckOptions {
  double step = 1e-5;
  /// 0 checks every coordinate; otherwise a seeded uniform sample of this many.
  std::size_t max_coordinates = 0;
  std::uint64_t seed = 0;
};

/// Compares reverse-mode gradients of the scalar `loss_fn` against central
/// differences over `params` (leaves with requires_grad). Returns the max
/// over checked coordinates of |ad - fd| / max(1, |ad|, |fd|).
///
/// `loss_fn` must be deterministic and rebuild its graph on every call.
double finite_difference_check(const std::function<Tensor()>& loss_fn, std::vector<Tensor> params,
                               const GradCheckOptions& options = {});

}  // namespace adpgcn
