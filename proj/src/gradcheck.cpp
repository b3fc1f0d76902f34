#include "recog/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace recog {

double finite_diff_check(const std::function<Tensor()>& loss, std::span<const Tensor> params,
                         std::span<const ParamCoord> coords, double h) {
  std::vector<Tensor> handles(params.begin(), params.end());
  std::vector<bool> flags;
  for (Tensor& p : handles) {
    flags.push_back(p.requires_grad());
    p.set_requires_grad(true);
    p.zero_grad();
  }
  {
    GradTape tape;
    tape.backward(loss());
  }
  std::vector<std::vector<double>> analytic;
  for (Tensor& p : handles) analytic.push_back(p.grad());

  double worst = 0.0;
  NoGradScope no_grad;
  for (const ParamCoord& c : coords) {
    Tensor& p = handles.at(c.param);
    double& v = p.mutable_data()[c.offset];
    const double saved = v;
    v = saved + h;
    const double up = loss().item();
    v = saved - h;
    const double down = loss().item();
    v = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double a = analytic[c.param][c.offset];
    worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
  }
  for (std::size_t i = 0; i < handles.size(); ++i) {
    handles[i].zero_grad();
    handles[i].set_requires_grad(flags[i]);
  }
  return worst;
}

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
  std::vector<ParamCoord> coords;
  for (std::size_t i = 0; i < x.numel(); ++i) coords.push_back({0, i});
  const Tensor params[] = {x};
  return finite_diff_check([&] { return f(x); }, params, coords, h);
}

}  // namespace recog
