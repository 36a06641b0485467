#include "twostage/search.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include "twostage/config.hpp"

namespace twostage {

ScalarExtremum golden_maximize(const std::function<double(double)>& f, double lo, double hi,
                               double tol) {
  constexpr double kInvPhi = 0.6180339887498949;
  ScalarExtremum best;
  auto eval = [&](double x) {
    const double v = f(x);
    best.trace.emplace_back(x, v);
    if (best.trace.size() == 1 || v > best.value) {
      best.x = x;
      best.value = v;
    }
    return v;
  };
  double a = lo, b = hi;
  double c = b - kInvPhi * (b - a), d = a + kInvPhi * (b - a);
  double fc = eval(c), fd = eval(d);
  while (b - a > tol) {
    if (fc >= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - kInvPhi * (b - a);
      fc = eval(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + kInvPhi * (b - a);
      fd = eval(d);
    }
  }
  return best;
}

ScalarExtremum grid_maximize(const std::function<double(double)>& f, double lo, double hi,
                             double step, bool refine) {
  ScalarExtremum best;
  const auto grid = linear_grid(lo, hi, step);
  for (double x : grid) {
    const double v = f(x);
    best.trace.emplace_back(x, v);
    if (best.trace.size() == 1 || v > best.value) {
      best.x = x;
      best.value = v;
    }
  }
  if (refine && !grid.empty()) {
    const double a = std::max(lo, best.x - step), b = std::min(hi, best.x + step);
    if (b > a) {
      auto local = golden_maximize(f, a, b);
      best.trace.insert(best.trace.end(), local.trace.begin(), local.trace.end());
      if (local.value > best.value) {
        best.x = local.x;
        best.value = local.value;
      }
    }
  }
  return best;
}

ScalarExtremum grid_minimize(const std::function<double(double)>& f, double lo, double hi,
                             double step, bool refine) {
  auto r = grid_maximize([&](double x) { return -f(x); }, lo, hi, step, refine);
  r.value = -r.value;
  for (auto& t : r.trace) t.second = -t.second;
  return r;
}

unsigned resolve_threads(unsigned requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& body) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(count)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        body(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::jthread> pool;
  for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace twostage
