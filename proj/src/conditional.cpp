#include "twostage/conditional.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "twostage/errors.hpp"
#include "twostage/exact_math.hpp"

namespace twostage {

namespace {

// Weight theta^x C(n, x) kept as (order of infinity, finite part) so that
// degenerate odds ratios restrict the support instead of overflowing.
struct Graded {
  long order = std::numeric_limits<long>::min();  // min() encodes zero
  double value = 0.0;

  bool zero() const { return order == std::numeric_limits<long>::min(); }
};

Graded graded_add(Graded a, Graded b) {
  if (a.zero()) return b;
  if (b.zero()) return a;
  if (a.order != b.order) return a.order > b.order ? a : b;
  return {a.order, a.value + b.value};
}

Graded graded_mul(Graded a, Graded b) {
  if (a.zero() || b.zero()) return {};
  return {a.order + b.order, a.value * b.value};
}

// Per-arm graded weights. Finite theta are rescaled by the arm's maximum log
// weight, which cancels between numerator and denominator.
std::vector<Graded> graded_weights(int size, double theta) {
  std::vector<Graded> w(static_cast<std::size_t>(size) + 1);
  if (theta <= 0.0) {
    // 0^x: order -x, so only x = 0 survives wherever it is feasible.
    for (int x = 0; x <= size; ++x) w[x] = {-static_cast<long>(x), std::exp(log_binom_coeff(size, x))};
    return w;
  }
  if (std::isinf(theta)) {
    for (int x = 0; x <= size; ++x) w[x] = {static_cast<long>(x), std::exp(log_binom_coeff(size, x))};
    return w;
  }
  const auto v = odds_weights(size, theta);
  for (int x = 0; x <= size; ++x) w[x] = {0, v[x]};
  return w;
}

}  // namespace

StagePresence StagePresence::from_mask(int K, std::uint32_t mask) {
  StagePresence r;
  r.rho.resize(K);
  for (int k = 0; k < K; ++k) r.rho[k] = (mask >> k) & 1u;
  return r;
}

int StagePresence::count() const {
  int m = 0;
  for (int r : rho) m += r;
  return m;
}

std::uint32_t StagePresence::mask() const {
  std::uint32_t m = 0;
  for (std::size_t k = 0; k < rho.size(); ++k)
    if (rho[k]) m |= 1u << k;
  return m;
}

double conditional_pmf(std::span<const int> x, int z, const StagePresence& rho,
                       std::span<const double> theta, const StageSizes& sizes, int stage) {
  const std::size_t K = rho.rho.size();
  if (x.size() != K + 1 || theta.size() != K)
    throw validation_error("conditional_pmf: x needs K + 1 entries and theta K entries");
  const int nc = sizes.control(stage), ne = sizes.arm(stage);
  const int total = nc + ne * rho.count();
  if (z < 0 || z > total) throw validation_error("conditional_pmf: z outside the stage total");

  std::vector<std::vector<Graded>> w(K + 1);
  w[0] = graded_weights(nc, 1.0);
  for (std::size_t k = 0; k < K; ++k) w[k + 1] = graded_weights(rho.rho[k] ? ne : 0, theta[k]);

  // Numerator h(x).
  int sum = 0;
  Graded num{0, 1.0};
  for (std::size_t k = 0; k <= K; ++k) {
    const int xk = x[k];
    if (xk < 0 || xk >= static_cast<int>(w[k].size())) return 0.0;
    num = graded_mul(num, w[k][xk]);
    sum += xk;
  }
  if (sum != z || num.zero()) return 0.0;

  // Denominator by convolution over arms.
  std::vector<Graded> acc = w[0];
  for (std::size_t k = 1; k <= K; ++k) {
    std::vector<Graded> next(acc.size() + w[k].size() - 1);
    for (std::size_t i = 0; i < acc.size(); ++i) {
      if (acc[i].zero()) continue;
      for (std::size_t j = 0; j < w[k].size(); ++j)
        next[i + j] = graded_add(next[i + j], graded_mul(acc[i], w[k][j]));
    }
    acc = std::move(next);
  }
  const Graded den = acc[z];
  if (den.zero() || num.order < den.order) return 0.0;
  return num.value / den.value;
}

std::vector<double> convolve(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) return {};
  std::vector<double> out(a.size() + b.size() - 1, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == 0.0) continue;
    for (std::size_t j = 0; j < b.size(); ++j) out[i + j] += a[i] * b[j];
  }
  return out;
}

std::vector<double> g_pmf_vector(std::span<const double> p, const StagePresence& rho,
                                 const StageSizes& sizes, int stage) {
  const std::size_t K = rho.rho.size();
  if (p.size() != K + 1) throw validation_error("g_pmf: p needs K + 1 entries");
  std::vector<double> acc = binom_pmf_vector(sizes.control(stage), p[0]);
  for (std::size_t k = 0; k < K; ++k) {
    if (!rho.rho[k]) continue;  // C(0, x) = 1{x = 0}
    acc = convolve(acc, binom_pmf_vector(sizes.arm(stage), p[k + 1]));
  }
  return acc;
}

double g_pmf(int z, std::span<const double> p, const StagePresence& rho, const StageSizes& sizes,
             int stage) {
  const auto g = g_pmf_vector(p, rho, sizes, stage);
  if (z < 0 || z >= static_cast<int>(g.size())) return 0.0;
  return g[z];
}

void for_each_lattice(std::span<const int> limits,
                      const std::function<void(std::span<const int>)>& fn) {
  std::vector<int> x(limits.size(), 0);
  for (int l : limits)
    if (l < 0) return;
  while (true) {
    fn(x);
    std::size_t i = 0;
    for (; i < x.size(); ++i) {
      if (++x[i] <= limits[i]) break;
      x[i] = 0;
    }
    if (i == x.size()) return;
  }
}

StageTwoTable::StageTwoTable(std::vector<double> control_w, std::vector<std::vector<double>> capped_w,
                             std::vector<double> free_total)
    : control_(std::move(control_w)), capped_(std::move(capped_w)), free_(std::move(free_total)) {
  if (control_.empty()) throw validation_error("control weights must be non-empty");
  if (free_.empty()) free_ = {1.0};
  arm_size_ = capped_.empty() ? 0 : static_cast<int>(capped_.front().size()) - 1;
  for (const auto& w : capped_)
    if (static_cast<int>(w.size()) - 1 != arm_size_)
      throw validation_error("capped arms must share one allocation");
  const int nc = static_cast<int>(control_.size()) - 1;
  const int nf = static_cast<int>(free_.size()) - 1;
  z_max_ = nc + nf + capped() * arm_size_;
  c_lo_ = -nc;
  c_hi_ = arm_size_ + 1;

  std::vector<double> rest = free_;
  for (const auto& w : capped_) rest = convolve(rest, w);
  const auto all = convolve(control_, rest);
  totals_.assign(z_max_ + 1, 0.0);
  for (int z = 0; z <= z_max_ && z < static_cast<int>(all.size()); ++z) totals_[z] = all[z];

  if (capped_.empty()) return;

  // Level 0 is F itself; level j adds capped arm j as a running prefix sum
  // along its own coordinate.
  const std::size_t A = static_cast<std::size_t>(arm_size_) + 1;
  const std::size_t rows = static_cast<std::size_t>(z_max_) + 1;
  constexpr std::size_t kDenseLimit = 1u << 24;
  prefix_.emplace_back(rows, 0.0);
  for (int R = 0; R <= std::min(nf, z_max_); ++R) prefix_[0][R] = free_[R];
  std::size_t block = 1;  // A^(j-1)
  for (int j = 1; j <= capped(); ++j) {
    if (rows * block * A > kDenseLimit) break;
    const auto& prev = prefix_[j - 1];
    const auto& w = capped_[j - 1];
    std::vector<double> cur(rows * block * A, 0.0);
    for (std::size_t R = 0; R < rows; ++R) {
      for (std::size_t a = 0; a < A; ++a) {
        double* out = &cur[(R * A + a) * block];
        if (a > 0) {
          const double* left = &cur[(R * A + a - 1) * block];
          std::copy(left, left + block, out);
        }
        if (a <= R && w[a] != 0.0) {
          const double* src = &prev[(R - a) * block];
          for (std::size_t i = 0; i < block; ++i) out[i] += w[a] * src[i];
        }
      }
    }
    prefix_.push_back(std::move(cur));
    dense_levels_ = j;
    block *= A;
  }

  if (capped() <= 2 && dense_levels_ >= capped()) fill_dense();
}

// dense_ layout: [z2][c_2][c_1] (c_2 absent for one capped arm), so the
// innermost loop runs along a_1, which is contiguous in the prefix table.
void StageTwoTable::fill_dense() {
  const int span_c = c_hi_ - c_lo_ + 1;
  const int q = capped();
  const std::size_t per_z = q == 1 ? span_c : static_cast<std::size_t>(span_c) * span_c;
  dense_.assign(static_cast<std::size_t>(z_max_ + 1) * per_z, 0.0);
  const int nc = static_cast<int>(control_.size()) - 1;
  const std::size_t A = static_cast<std::size_t>(arm_size_) + 1;
  const auto& H = prefix_[q];
  for (int z2 = 0; z2 <= z_max_; ++z2) {
    for (int x02 = 0; x02 <= std::min(nc, z2); ++x02) {
      const double w = control_[x02];
      if (w == 0.0) continue;
      const int R = z2 - x02;
      const int c_min = std::max(c_lo_, 1 - x02);  // caps stay >= 0 from here
      // c at which the cap saturates at arm_size_.
      const int c_sat = std::min(c_hi_ + 1, arm_size_ + 1 - x02);
      auto add_row = [&](double* out, const double* h) {
        int c = c_min;
        for (; c < c_sat; ++c) out[c - c_lo_] += w * h[c - 1 + x02];
        const double tail = w * h[arm_size_];
        for (; c <= c_hi_; ++c) out[c - c_lo_] += tail;
      };
      double* zrow = &dense_[static_cast<std::size_t>(z2) * per_z];
      if (q == 1) {
        add_row(zrow, &H[static_cast<std::size_t>(R) * A]);
        continue;
      }
      for (int c2 = c_min; c2 <= c_hi_; ++c2) {
        const std::size_t a2 = static_cast<std::size_t>(std::min(c2 - 1 + x02, arm_size_));
        add_row(zrow + static_cast<std::size_t>(c2 - c_lo_) * span_c,
                &H[(static_cast<std::size_t>(R) * A + a2) * A]);
      }
    }
  }
}

// Arms beyond the dense prefix levels are summed explicitly, top down.
double StageTwoTable::nested(int R, std::span<const int> caps) const {
  if (R < 0) return 0.0;
  const int level = static_cast<int>(caps.size());
  if (level <= dense_levels_) {
    const std::size_t A = static_cast<std::size_t>(arm_size_) + 1;
    std::size_t idx = 0;
    std::size_t block = 1;
    for (int j = level - 1; j >= 0; --j) idx = idx * A + static_cast<std::size_t>(caps[j]);
    for (int j = 0; j < level; ++j) block *= A;
    return prefix_[level][static_cast<std::size_t>(R) * block + idx];
  }
  const auto sub = caps.first(caps.size() - 1);
  double s = 0.0;
  for (int x = 0; x <= std::min(caps[level - 1], R); ++x) {
    const double w = capped_[level - 1][x];
    if (w != 0.0) s += w * nested(R - x, sub);
  }
  return s;
}

double StageTwoTable::compute(int z2, std::span<const int> c) const {
  const int nc = static_cast<int>(control_.size()) - 1;
  std::vector<int> caps(c.size());
  double s = 0.0;
  for (int x02 = 0; x02 <= std::min(nc, z2); ++x02) {
    const double w = control_[x02];
    if (w == 0.0) continue;
    bool empty = false;
    for (std::size_t k = 0; k < c.size(); ++k) {
      caps[k] = std::min(c[k] - 1 + x02, arm_size_);
      if (caps[k] < 0) empty = true;
    }
    if (empty) continue;
    s += w * nested(z2 - x02, caps);
  }
  return s;
}

double StageTwoTable::total(int z2) const {
  if (z2 < 0 || z2 > z_max_) return 0.0;
  return totals_[z2];
}

double StageTwoTable::at(int z2, std::span<const int> c) const {
  if (z2 < 0 || z2 > z_max_) return 0.0;
  if (capped_.empty()) return totals_[z2];
  const int span_c = c_hi_ - c_lo_ + 1;
  auto clamp = [&](int v) { return std::clamp(v, c_lo_, c_hi_) - c_lo_; };
  if (capped() == 1 && !dense_.empty()) return dense_[static_cast<std::size_t>(z2) * span_c + clamp(c[0])];
  if (capped() == 2 && !dense_.empty())
    return dense_[(static_cast<std::size_t>(z2) * span_c + clamp(c[1])) * span_c + clamp(c[0])];
  std::uint64_t key = static_cast<std::uint64_t>(z2);
  std::vector<int> cc(c.size());
  for (std::size_t k = 0; k < c.size(); ++k) {
    cc[k] = clamp(c[k]) + c_lo_;
    key = key * static_cast<std::uint64_t>(span_c) + static_cast<std::uint64_t>(clamp(c[k]));
  }
  {
    std::lock_guard lock(memo_mutex_);
    if (auto it = memo_.find(key); it != memo_.end()) return it->second;
  }
  const double v = compute(z2, cc);
  std::lock_guard lock(memo_mutex_);
  memo_.emplace(key, v);
  return v;
}

}  // namespace twostage
