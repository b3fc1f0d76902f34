#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "recog/tensor.hpp"

namespace recog {

/// Compares the taped gradient of a scalar function against central
/// differences. Returns max over coordinates of
/// |analytic - numeric| / max(1, |analytic|).
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h = 1e-5);

/// One probed coordinate: parameter index and flat offset inside it.
struct ParamCoord {
  std::size_t param;
  std::size_t offset;
};

/// Same error measure for a loss closed over several parameters, probing only
/// the listed coordinates. Parameters are restored afterwards.
double finite_diff_check(const std::function<Tensor()>& loss, std::span<const Tensor> params,
                         std::span<const ParamCoord> coords, double h = 1e-5);

}  // namespace recog
