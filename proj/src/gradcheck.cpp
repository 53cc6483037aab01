#include "langdet/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace langdet {

double finite_difference_check(const std::function<Tensor()>& f, Tensor leaf, double h) {
  if (!(h >= 1e-6 && h <= 1e-3)) {
    throw std::invalid_argument("finite_difference_check: step must be in [1e-6, 1e-3]");
  }
  if (!leaf.requires_grad()) {
    throw std::invalid_argument("finite_difference_check: leaf does not require grad");
  }
  Tensor loss = f();
  if (loss.size() != 1) {
    throw std::invalid_argument("finite_difference_check: f must be scalar-valued");
  }
  leaf.zero_grad();
  loss.backward();
  const std::vector<double> analytic = leaf.grad();

  double worst = 0.0;
  std::vector<double>& x = leaf.mutable_values();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f().value();
    x[i] = saved - h;
    const double down = f().value();
    x[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double err = std::fabs(analytic[i] - numeric) / std::max(1.0, std::fabs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

double finite_difference_check_many(const std::function<Tensor()>& f, std::vector<Tensor> leaves,
                                    double h) {
  double worst = 0.0;
  for (auto& leaf : leaves) worst = std::max(worst, finite_difference_check(f, leaf, h));
  return worst;
}

}  // namespace langdet
