#pragma once

#include <functional>
#include <utility>
#include <vector>

namespace twostage {

struct ScalarExtremum {
  double x = 0.0;
  double value = 0.0;
  std::vector<std::pair<double, double>> trace;  // every (x, f(x)) evaluated
};

/// Maximum of f over the grid lo, lo+step, ..., hi. With refine set, a
/// golden-section search on [x* - step, x* + step] around the best grid
/// point follows; the reported point is the best seen overall.
ScalarExtremum grid_maximize(const std::function<double(double)>& f, double lo, double hi,
                             double step, bool refine);

ScalarExtremum grid_minimize(const std::function<double(double)>& f, double lo, double hi,
                             double step, bool refine);

/// Golden-section refinement alone, for callers that already hold grid values.
ScalarExtremum golden_maximize(const std::function<double(double)>& f, double lo, double hi,
                               double tol = 1e-5);

/// Runs body(i) for i in [0, count) on up to `threads` workers. Work is
/// handed out by index, so results written per index do not depend on the
/// worker count.
void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& body);

/// Worker count for a --threads value of 0 (meaning "hardware").
unsigned resolve_threads(unsigned requested);

}  // namespace twostage
