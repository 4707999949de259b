#include "vkdlab/fdcheck.hpp"

#include <algorithm>
#include <cmath>

namespace vkdlab {

Vec fd_gradient(const std::function<double(const Vec&)>& f, Vec theta, double h) {
  if (!(h > 0.0)) throw ConfigError("fd_gradient: h must be positive");
  Vec grad(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double saved = theta[i];
    theta[i] = saved + h;
    const double fp = f(theta);
    theta[i] = saved - h;
    const double fm = f(theta);
    theta[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError("fd_gradient: non-finite objective evaluation");
    }
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

double max_rel_error(const Vec& a, const Vec& b, double floor) {
  if (a.size() != b.size()) throw ShapeError("max_rel_error: length mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::fabs(a[i]), std::fabs(b[i]), floor});
    worst = std::max(worst, std::fabs(a[i] - b[i]) / scale);
  }
  return worst;
}

}  // namespace vkdlab
