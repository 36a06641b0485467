#include "twostage/fisher_design.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "twostage/errors.hpp"
#include "twostage/exact_math.hpp"
#include "twostage/search.hpp"

namespace twostage {

namespace {

constexpr double kBoundaryTol = 1e-12;

// Strong-control odds-ratio grid per arm: 2^-6, ..., 2^6.
std::vector<double> theta_axis() {
  std::vector<double> axis;
  for (int i = -6; i <= 6; ++i) axis.push_back(std::ldexp(1.0, i));
  return axis;
}

std::uint32_t null_mask(std::span<const double> theta) {
  std::uint32_t m = 0;
  for (std::size_t k = 0; k < theta.size(); ++k)
    if (theta[k] == 1.0) m |= 1u << k;
  return m;
}

std::vector<double> clamp_unit(std::vector<double> p) {
  for (double& v : p) v = std::clamp(v, 0.0, 1.0);
  return p;
}

std::vector<double> shifted(double p, std::span<const double> delta) {
  std::vector<double> v(delta.size());
  for (std::size_t k = 0; k < delta.size(); ++k) v[k] = p + delta[k];
  return clamp_unit(std::move(v));
}

int stage_two_lo(const StageSizes& s) { return -(s.control1 + s.control2); }
int stage_two_hi(const StageSizes& s) { return s.arm1 + s.arm2 + 1; }

std::vector<double> convolve_arms(const std::vector<std::vector<double>>& arm_w, std::uint32_t mask) {
  std::vector<double> acc{1.0};
  for (std::size_t k = 0; k < arm_w.size(); ++k)
    if ((mask >> k) & 1u) acc = convolve(acc, arm_w[k]);
  return acc;
}

std::vector<std::vector<double>> pick(const std::vector<std::vector<double>>& arm_w, std::uint32_t mask) {
  std::vector<std::vector<double>> out;
  for (std::size_t k = 0; k < arm_w.size(); ++k)
    if ((mask >> k) & 1u) out.push_back(arm_w[k]);
  return out;
}

// Sum over z2 of U(z2, e2(z2) - t) for the capped arms of `capped`.
double stage_two_mass(const StageTwoTable& table, const std::vector<int>& e2v, const StageOneKey& key,
                      std::uint32_t capped) {
  std::array<int, kMaxArms> t{};
  int q = 0;
  for (int k = 0; k < kMaxArms; ++k)
    if ((capped >> k) & 1u) t[q++] = key.t[k];
  std::array<int, kMaxArms> c{};
  double s = 0.0;
  const int zmax = table.z_max();
  for (int z2 = 0; z2 <= zmax; ++z2) {
    for (int j = 0; j < q; ++j) c[j] = e2v[z2] - t[j];
    s += table.at(z2, std::span<const int>(c.data(), q));
  }
  return s;
}

}  // namespace

FisherSpec FisherSpec::from(const TrialConfig& cfg) {
  FisherSpec s;
  s.K = cfg.K;
  s.alpha = cfg.alpha;
  s.delta = cfg.delta;
  s.ratios = cfg.ratios;
  s.control = cfg.control;
  s.p_grid_step = cfg.p_grid_step;
  s.refine = cfg.refine;
  return s;
}

double FisherSpec::max_delta() const {
  double m = 0.0;
  for (std::size_t k = 1; k < delta.size(); ++k) m = std::max(m, delta[k]);
  return m;
}

void FisherSpec::validate() const {
  if (K < 1 || K > kMaxArms) throw validation_error("K must lie in 1..4");
  if (!(alpha > 0.0 && alpha < 1.0)) throw validation_error("alpha must lie in (0, 1)");
  if (static_cast<int>(delta.size()) != K + 1) throw validation_error("delta needs K + 1 entries");
  for (int k = 1; k <= K; ++k)
    if (!(delta[k] > 0.0 && delta[k] < 1.0)) throw validation_error("delta_k must lie in (0, 1)");
  if (!(p_grid_step > 0.0 && p_grid_step <= 0.05)) throw validation_error("p_grid_step must lie in (0, 0.05]");
  ratios.validate();
}

void FisherBoundaries::validate(int K, const StageSizes& s) const {
  const int z1_max = s.stage_one_total(K);
  if (static_cast<int>(e1.size()) != z1_max + 1) throw validation_error("e1 must have one entry per z1");
  for (int z1 = 0; z1 <= z1_max; ++z1)
    if (e1[z1] <= f1 + 1) throw validation_error("e1[z1] must exceed f1 + 1");
  if (static_cast<int>(e2.size()) != K) throw validation_error("e2 must have one block per m");
  for (int m = 1; m <= K; ++m) {
    if (static_cast<int>(e2[m - 1].size()) != z1_max + 1)
      throw validation_error("e2 blocks must have one row per z1");
    for (const auto& row : e2[m - 1])
      if (static_cast<int>(row.size()) != s.stage_two_total(m) + 1)
        throw validation_error("e2 rows must have one entry per z2");
  }
}

// ---------------------------------------------------------------------------

StageOneLattice StageOneLattice::build(int K, const StageSizes& sizes) {
  StageOneLattice lat;
  lat.K = K;
  lat.sizes = sizes;
  std::vector<int> limits(K + 1, sizes.arm1);
  limits[0] = sizes.control1;
  std::size_t total = 1;
  for (int l : limits) total *= static_cast<std::size_t>(l) + 1;
  lat.x.reserve(total);
  lat.z1.reserve(total);
  for_each_lattice(limits, [&](std::span<const int> x) {
    std::array<std::int16_t, kMaxArms + 1> v{};
    int z = 0;
    for (int k = 0; k <= K; ++k) {
      v[k] = static_cast<std::int16_t>(x[k]);
      z += x[k];
    }
    lat.x.push_back(v);
    lat.z1.push_back(z);
  });
  return lat;
}

FisherPlan::FisherPlan(const StageOneLattice& lattice, int f1, std::span<const int> e1)
    : lattice_(&lattice) {
  const int K = lattice.K;
  const int off = lattice.sizes.control1;
  const std::size_t N = lattice.size();
  cls_.assign(N, 0);
  std::vector<std::uint64_t> packed(N, 0);
  std::vector<std::uint64_t> distinct;
  for (std::size_t i = 0; i < N; ++i) {
    const int z1 = lattice.z1[i];
    const int e = e1[z1];
    std::uint32_t R = 0, S = 0;
    for (int k = 0; k < K; ++k) {
      const int t = lattice.t(i, k);
      if (t >= e)
        R |= 1u << k;
      else if (t > f1)
        S |= 1u << k;
    }
    if (R || !S) {
      cls_[i] = -1 - static_cast<std::int32_t>(R);
      continue;
    }
    std::uint64_t key = static_cast<std::uint64_t>(std::popcount(S));
    key = (key << 16) | static_cast<std::uint64_t>(z1);
    key = (key << 4) | S;
    std::uint64_t ts = 0;
    for (int k = 0; k < K; ++k)
      if ((S >> k) & 1u) ts |= static_cast<std::uint64_t>(lattice.t(i, k) + off) << (10 * k);
    key = (key << 40) | ts;
    packed[i] = key;
    distinct.push_back(key);
  }
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  keys_.resize(distinct.size());
  for (std::size_t j = 0; j < distinct.size(); ++j) {
    const std::uint64_t key = distinct[j];
    StageOneKey& k = keys_[j];
    k.S = static_cast<std::uint32_t>((key >> 40) & 0xF);
    k.z1 = static_cast<int>((key >> 44) & 0xFFFF);
    k.m = static_cast<int>(key >> 60);
    for (int a = 0; a < K; ++a)
      if ((k.S >> a) & 1u) k.t[a] = static_cast<int>((key >> (10 * a)) & 0x3FF) - off;
  }
  for (std::size_t i = 0; i < N; ++i) {
    if (cls_[i] < 0) continue;
    cls_[i] = static_cast<std::int32_t>(std::lower_bound(distinct.begin(), distinct.end(), packed[i]) -
                                        distinct.begin());
  }
}

FisherPlan::Mass FisherPlan::accumulate(std::span<const double> weights) const {
  Mass m;
  m.stop.assign(std::size_t{1} << lattice_->K, 0.0);
  m.key.assign(keys_.size(), 0.0);
  for (std::size_t i = 0; i < cls_.size(); ++i) {
    const std::int32_t c = cls_[i];
    if (c >= 0)
      m.key[c] += weights[i];
    else
      m.stop[-1 - c] += weights[i];
  }
  return m;
}

FisherPoint::FisherPoint(const StageOneLattice& lattice, std::span<const double> p)
    : K_(lattice.K), sizes_(lattice.sizes), p_(clamp_unit({p.begin(), p.end()})) {
  if (static_cast<int>(p_.size()) != K_ + 1) throw validation_error("p needs K + 1 entries");
  std::vector<std::vector<double>> b(K_ + 1);
  b[0] = binom_pmf_vector(sizes_.control1, p_[0]);
  for (int k = 1; k <= K_; ++k) b[k] = binom_pmf_vector(sizes_.arm1, p_[k]);
  prob_.resize(lattice.size());
  for (std::size_t i = 0; i < lattice.size(); ++i) {
    double v = 1.0;
    for (int k = 0; k <= K_; ++k) v *= b[k][lattice.x[i][k]];
    prob_[i] = v;
  }
}

const StageTwoTable& FisherPoint::table(std::uint32_t capped, std::uint32_t free) const {
  const std::size_t slot = capped | (free << 4);
  if (const StageTwoTable* t = by_mask_[slot].load(std::memory_order_acquire)) return *t;
  std::vector<double> key;
  for (int k = 0; k < K_; ++k)
    if ((capped >> k) & 1u) key.push_back(p_[k + 1]);
  key.push_back(-1.0);
  std::vector<double> fp;
  for (int k = 0; k < K_; ++k)
    if ((free >> k) & 1u) fp.push_back(p_[k + 1]);
  std::sort(fp.begin(), fp.end());
  key.insert(key.end(), fp.begin(), fp.end());

  std::lock_guard lock(mutex_);
  if (const StageTwoTable* t = by_mask_[slot].load(std::memory_order_acquire)) return *t;
  auto it = tables_.find(key);
  if (it == tables_.end()) {
    std::vector<std::vector<double>> arm_w(K_);
    for (int k = 0; k < K_; ++k) arm_w[k] = binom_pmf_vector(sizes_.arm2, p_[k + 1]);
    auto table = std::make_unique<StageTwoTable>(binom_pmf_vector(sizes_.control2, p_[0]),
                                                 pick(arm_w, capped), convolve_arms(arm_w, free));
    it = tables_.emplace(key, std::move(table)).first;
  }
  by_mask_[slot].store(it->second.get(), std::memory_order_release);
  return *it->second;
}

double fisher_no_rejection(const FisherPlan& plan, const FisherPlan::Mass& mass,
                           const FisherBoundaries& b, const FisherPoint& pt, std::uint32_t capped) {
  CompensatedSum total;
  for (std::size_t R = 0; R < mass.stop.size(); ++R)
    if ((R & capped) == 0) total += mass.stop[R];
  const auto& keys = plan.keys();
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const double w = mass.key[i];
    if (w == 0.0) continue;
    const StageOneKey& key = keys[i];
    const std::uint32_t V = key.S & capped;
    if (!V) {
      total += w;
      continue;
    }
    const auto& table = pt.table(V, key.S & ~V);
    total += w * stage_two_mass(table, b.e2[key.m - 1][key.z1], key, V);
  }
  return total.value();
}

double fisher_no_rejection(const FisherPlan& plan, const FisherBoundaries& b, const FisherPoint& pt,
                           std::uint32_t capped) {
  return fisher_no_rejection(plan, plan.accumulate(pt.stage_one()), b, pt, capped);
}

double fisher_ess(const FisherPlan& plan, const FisherPoint& pt) {
  const auto mass = plan.accumulate(pt.stage_one());
  const StageSizes& s = plan.lattice().sizes;
  CompensatedSum ess;
  ess += s.stage_one_total(plan.lattice().K);
  for (std::size_t i = 0; i < plan.keys().size(); ++i)
    ess += mass.key[i] * s.stage_two_total(plan.keys()[i].m);
  return ess.value();
}

double fisher_ess(const FisherPlan& plan, const FisherPoint& pt, FisherEss convention) {
  if (convention == FisherEss::exact) return fisher_ess(plan, pt);
  const StageOneLattice& lat = plan.lattice();
  const int K = lat.K;
  const StageSizes& s = lat.sizes;
  const int z1_max = s.stage_one_total(K);
  std::vector<double> g(z1_max + 1, 0.0), Z(z1_max + 1, 0.0);
  std::vector<double> w(lat.size());
  const auto w0 = odds_weights(s.control1, 1.0), wa = odds_weights(s.arm1, 1.0);
  for (std::size_t i = 0; i < lat.size(); ++i) {
    double v = w0[lat.x[i][0]];
    for (int k = 1; k <= K; ++k) v *= wa[lat.x[i][k]];
    w[i] = v;
    Z[lat.z1[i]] += v;
    g[lat.z1[i]] += pt.stage_one()[i];
  }
  for (std::size_t i = 0; i < lat.size(); ++i) w[i] = w[i] / Z[lat.z1[i]] * g[lat.z1[i]];
  const auto mass = plan.accumulate(w);
  CompensatedSum ess;
  ess += s.stage_one_total(K);
  for (std::size_t i = 0; i < plan.keys().size(); ++i) ess += mass.key[i] * s.stage_two_total(plan.keys()[i].m);
  return ess.value();
}

std::vector<double> fisher_outcome_distribution(const FisherPlan& plan, const FisherBoundaries& b,
                                                const FisherPoint& pt) {
  const int K = plan.lattice().K;
  const OutcomeSpace space(K);
  std::vector<double> dist(space.size(), 0.0);
  const auto mass = plan.accumulate(pt.stage_one());
  for (std::size_t R = 0; R < mass.stop.size(); ++R)
    dist[space.index_of({K, static_cast<std::uint32_t>(R), 0u})] += mass.stop[R];

  std::vector<double> none_rejected(std::size_t{1} << K);
  for (std::size_t i = 0; i < plan.keys().size(); ++i) {
    const double w = mass.key[i];
    if (w == 0.0) continue;
    const StageOneKey& key = plan.keys()[i];
    const auto& e2v = b.e2[key.m - 1][key.z1];
    // N(V) = P(no arm of V rejected) for every V within S.
    for (std::uint32_t V = key.S;; V = (V - 1) & key.S) {
      none_rejected[V] = V ? stage_two_mass(pt.table(V, key.S & ~V), e2v, key, V) : 1.0;
      if (V == 0) break;
    }
    // Exactly the arms of W escape rejection: inclusion-exclusion over V within S.
    for (std::uint32_t W = key.S;; W = (W - 1) & key.S) {
      double p = 0.0;
      const std::uint32_t rest = key.S & ~W;
      for (std::uint32_t extra = rest;; extra = (extra - 1) & rest) {
        const double sign = (std::popcount(extra) % 2) ? -1.0 : 1.0;
        p += sign * none_rejected[W | extra];
        if (extra == 0) break;
      }
      dist[space.index_of({K, key.S & ~W, key.S})] += w * p;
      if (W == 0) break;
    }
  }
  return dist;
}

// ---------------------------------------------------------------------------

FisherContext::FisherContext(const FisherSpec& spec, int n)
    : spec_(spec), n_(n), sizes_(StageSizes::from(n, spec.ratios)),
      lattice_(StageOneLattice::build(spec.K, sizes_)) {
  spec_.validate();
  const int K = spec_.K;
  if (spec_.control == Control::weak) {
    thetas_.push_back(std::vector<double>(K, 1.0));
  } else if (K <= 2) {
    const auto axis = theta_axis();
    std::vector<int> limits(K, static_cast<int>(axis.size()) - 1);
    for_each_lattice(limits, [&](std::span<const int> idx) {
      std::vector<double> th(K);
      for (int k = 0; k < K; ++k) th[k] = axis[idx[k]];
      if (null_mask(th)) thetas_.push_back(th);
    });
  } else {
    // Coordinate-wise ascent of the summed stage-one error per null pattern,
    // probed at the weak boundaries for alpha_1 = alpha / 2.
    const auto axis = theta_axis();
    const ThetaData ones = make_theta(std::vector<double>(K, 1.0));
    std::vector<int> probe(ones.curve.size());
    for (std::size_t z1 = 0; z1 < probe.size(); ++z1) {
      int e = e_lo();
      while (e < e_hi() && ones.curve[z1][e - e_lo()] > spec_.alpha / 2 + kBoundaryTol) ++e;
      probe[z1] = e;
    }
    auto score = [&](const std::vector<double>& th) {
      const ThetaData td = make_theta(th);
      CompensatedSum s;
      for (std::size_t z1 = 0; z1 < probe.size(); ++z1) s += td.curve[z1][probe[z1] - e_lo()];
      return s.value();
    };
    for (std::uint32_t nulls = 1; nulls < (1u << K); ++nulls) {
      std::vector<double> th(K, 1.0);
      for (int k = 0; k < K; ++k)
        if (!((nulls >> k) & 1u)) th[k] = axis.front();
      double best = score(th);
      for (int sweep = 0; sweep < 5; ++sweep) {
        bool moved = false;
        for (int k = 0; k < K; ++k) {
          if ((nulls >> k) & 1u) continue;
          for (double v : axis) {
            if (v == 1.0 || v == th[k]) continue;
            auto trial = th;
            trial[k] = v;
            const double s = score(trial);
            if (s > best + 1e-15) {
              best = s;
              th = trial;
              moved = true;
            }
          }
        }
        if (!moved) break;
      }
      thetas_.push_back(th);
    }
  }
  theta_data_.reserve(thetas_.size());
  for (const auto& th : thetas_) theta_data_.push_back(make_theta(th));
}

FisherContext::ThetaData FisherContext::make_theta(const std::vector<double>& theta) const {
  const int K = spec_.K;
  ThetaData td;
  td.theta = theta;
  td.nulls = null_mask(theta);
  std::vector<std::vector<double>> w(K + 1);
  w[0] = odds_weights(sizes_.control1, 1.0);
  for (int k = 1; k <= K; ++k) w[k] = odds_weights(sizes_.arm1, theta[k - 1]);
  const int z1_max = sizes_.stage_one_total(K);
  std::vector<double> Z(z1_max + 1, 0.0);
  td.weights.resize(lattice_.size());
  for (std::size_t i = 0; i < lattice_.size(); ++i) {
    double v = 1.0;
    for (int k = 0; k <= K; ++k) v *= w[k][lattice_.x[i][k]];
    td.weights[i] = v;
    Z[lattice_.z1[i]] += v;
  }
  const int width = e_hi() - e_lo() + 1;
  td.curve.assign(z1_max + 1, std::vector<double>(width, 0.0));
  for (std::size_t i = 0; i < lattice_.size(); ++i) {
    const int z1 = lattice_.z1[i];
    td.weights[i] = Z[z1] > 0.0 ? td.weights[i] / Z[z1] : 0.0;
    if (!td.nulls) continue;
    int top = e_lo() - 1;
    for (int k = 0; k < K; ++k)
      if ((td.nulls >> k) & 1u) top = std::max(top, lattice_.t(i, k));
    td.curve[z1][top - e_lo()] += td.weights[i];
  }
  // Histogram of the largest null statistic -> survival function.
  for (auto& row : td.curve) {
    double s = 0.0;
    for (int j = width - 1; j >= 0; --j) {
      s += row[j];
      row[j] = s;
    }
    row[width - 1] = 0.0;  // e = r_E1 n + 1 is never reached
  }
  return td;
}

std::vector<int> FisherContext::e1_for(double alpha1) const {
  const int z1_max = sizes_.stage_one_total(spec_.K);
  std::vector<int> e1(z1_max + 1, e_lo());
  for (int z1 = 0; z1 <= z1_max; ++z1) {
    int e = e_lo();
    auto worst = [&](int ee) {
      double v = 0.0;
      for (const auto& td : theta_data_) v = std::max(v, td.curve[z1][ee - e_lo()]);
      return v;
    };
    while (e < e_hi() && worst(e) > alpha1 + kBoundaryTol) ++e;
    e1[z1] = e;
  }
  return e1;
}

const std::vector<double>& FisherContext::beta_curve() const {
  std::call_once(beta_once_, [&] {
    const int c1 = sizes_.control1, a1 = sizes_.arm1;
    const double d1 = spec_.delta[1];
    const double hi = 1.0 - spec_.max_delta();
    auto cdf_at = [&](double p, int f) {
      const auto b0 = binom_pmf_vector(c1, p);
      const auto cdf1 = cumulative(binom_pmf_vector(a1, std::min(1.0, p + d1)));
      CompensatedSum s;
      for (int x0 = 0; x0 <= c1; ++x0) {
        const int cap = std::min(x0 + f, a1);
        if (cap >= 0) s += b0[x0] * cdf1[cap];
      }
      return s.value();
    };
    const int width = c1 + a1 + 2;
    beta_curve_.assign(width, 0.0);
    for (int j = 1; j < width; ++j) {
      const int f = j - c1 - 1;
      if (f >= a1) {
        beta_curve_[j] = 1.0;
        continue;
      }
      beta_curve_[j] =
          grid_maximize([&](double p) { return cdf_at(p, f); }, 0.0, hi, spec_.p_grid_step, spec_.refine).value;
    }
  });
  return beta_curve_;
}

int FisherContext::f1_for(double beta1) const {
  const auto& curve = beta_curve();
  int best = 0;
  for (int j = 0; j < static_cast<int>(curve.size()); ++j)
    if (curve[j] <= beta1 + kBoundaryTol) best = j;
  return best - sizes_.control1 - 1;
}

std::vector<double> FisherContext::alpha1_spent(std::span<const int> e1) const {
  std::vector<double> spent(e1.size(), 0.0);
  for (std::size_t z1 = 0; z1 < e1.size(); ++z1) {
    const int e = std::clamp(e1[z1], e_lo(), e_hi());
    for (const auto& td : theta_data_) spent[z1] = std::max(spent[z1], td.curve[z1][e - e_lo()]);
  }
  return spent;
}

std::vector<std::vector<std::vector<int>>> FisherContext::e2_for_theta(
    const ThetaData& td, const FisherPlan& plan, std::span<const double> spent) const {
  const int K = spec_.K;
  const int z1_max = sizes_.stage_one_total(K);
  const int lo = stage_two_lo(sizes_), hi = stage_two_hi(sizes_);
  std::vector<std::vector<std::vector<int>>> e2(K);
  for (int m = 1; m <= K; ++m)
    e2[m - 1].assign(z1_max + 1, std::vector<int>(sizes_.stage_two_total(m) + 1, lo));

  const auto mass = plan.accumulate(td.weights);
  std::vector<std::vector<double>> arm_w(K);
  for (int k = 0; k < K; ++k) arm_w[k] = odds_weights(sizes_.arm2, td.theta[k]);
  const auto control_w = odds_weights(sizes_.control2, 1.0);
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::unique_ptr<StageTwoTable>> tables;
  auto table_for = [&](std::uint32_t capped, std::uint32_t free) -> const StageTwoTable& {
    auto& slot = tables[{capped, free}];
    if (!slot)
      slot = std::make_unique<StageTwoTable>(control_w, pick(arm_w, capped), convolve_arms(arm_w, free));
    return *slot;
  };

  struct Term {
    double w;
    const StageTwoTable* table;
    std::array<int, kMaxArms> t;
    int q;
  };
  const auto& keys = plan.keys();
  std::size_t i = 0;
  std::vector<Term> terms;
  while (i < keys.size()) {
    const int m = keys[i].m, z1 = keys[i].z1;
    terms.clear();
    for (; i < keys.size() && keys[i].m == m && keys[i].z1 == z1; ++i) {
      const std::uint32_t V = keys[i].S & td.nulls;
      if (!V || mass.key[i] == 0.0) continue;
      Term term{mass.key[i], &table_for(V, keys[i].S & ~V), {}, 0};
      for (int k = 0; k < K; ++k)
        if ((V >> k) & 1u) term.t[term.q++] = keys[i].t[k];
      terms.push_back(term);
    }
    const double budget = (spec_.alpha - spent[z1]) / K;
    auto& row = e2[m - 1][z1];
    std::array<int, kMaxArms> c{};
    for (int z2 = 0; z2 < static_cast<int>(row.size()); ++z2) {
      auto error = [&](int e) {
        CompensatedSum s;
        for (const Term& term : terms) {
          const double total = term.table->total(z2);
          if (total <= 0.0) continue;
          for (int j = 0; j < term.q; ++j) c[j] = e - term.t[j];
          const double keep = term.table->at(z2, std::span<const int>(c.data(), term.q)) / total;
          s += term.w * (1.0 - keep);
        }
        return s.value();
      };
      if (budget < 0.0) {
        row[z2] = hi;
        continue;
      }
      int a = lo, b = hi;  // error(b) <= budget holds at b = hi
      while (a < b) {
        const int mid = a + (b - a) / 2;
        if (error(mid) <= budget + kBoundaryTol)
          b = mid;
        else
          a = mid + 1;
      }
      row[z2] = a;
    }
  }
  return e2;
}

std::vector<std::vector<std::vector<int>>> FisherContext::e2_for(int f1, std::span<const int> e1,
                                                                 std::span<const double> spent) const {
  const FisherPlan plan(lattice_, f1, e1);
  auto e2 = e2_for_theta(theta_data_.front(), plan, spent);
  for (std::size_t j = 1; j < theta_data_.size(); ++j) {
    const auto other = e2_for_theta(theta_data_[j], plan, spent);
    for (std::size_t m = 0; m < e2.size(); ++m)
      for (std::size_t z1 = 0; z1 < e2[m].size(); ++z1)
        for (std::size_t z2 = 0; z2 < e2[m][z1].size(); ++z2)
          e2[m][z1][z2] = std::max(e2[m][z1][z2], other[m][z1][z2]);
  }
  return e2;
}

FisherBoundaries FisherContext::stage_one(double alpha1, double beta1) const {
  FisherBoundaries b;
  b.f1 = f1_for(beta1);
  b.e1 = e1_for(alpha1);
  for (int& e : b.e1) e = std::max(e, b.f1 + 2);
  return b;
}

FisherDesign FisherContext::complete(double alpha1, double beta1, FisherBoundaries stage_one) const {
  FisherDesign d;
  d.spec = spec_;
  d.n = n_;
  d.alpha1 = alpha1;
  d.beta1 = beta1;
  d.boundaries = std::move(stage_one);
  auto& b = d.boundaries;
  b.e2 = e2_for(b.f1, b.e1, alpha1_spent(b.e1));
  return d;
}

FisherDesign FisherContext::build(double alpha1, double beta1) const {
  return complete(alpha1, beta1, stage_one(alpha1, beta1));
}

FisherDesign FisherContext::build_imposed(const ImposedStageOne& imposed) const {
  if (imposed.e1 <= imposed.f1 + 1) throw validation_error("imposed e1 must exceed f1 + 1");
  FisherDesign d;
  d.spec = spec_;
  d.n = n_;
  d.imposed = imposed;
  auto& b = d.boundaries;
  b.f1 = imposed.f1;
  b.e1.assign(sizes_.stage_one_total(spec_.K) + 1, imposed.e1);
  b.e2 = e2_for(b.f1, b.e1, alpha1_spent(b.e1));
  return d;
}

// ---------------------------------------------------------------------------

namespace {

struct StageOneWeights {
  std::vector<double> control;
  std::vector<std::vector<double>> arms;
};

StageOneWeights stage_one_weights(const StageSizes& s, std::span<const double> theta) {
  StageOneWeights w;
  w.control = odds_weights(s.control1, 1.0);
  for (double th : theta) w.arms.push_back(odds_weights(s.arm1, th));
  return w;
}

double total_weight(const StageOneWeights& w, int z1) {
  std::vector<double> acc = w.control;
  for (const auto& a : w.arms) acc = convolve(acc, a);
  return z1 >= 0 && z1 < static_cast<int>(acc.size()) ? acc[z1] : 0.0;
}

}  // namespace

double alpha_I1(const FisherSpec& spec, int n, int z1, int e1z1, std::span<const double> theta) {
  const StageSizes s = StageSizes::from(n, spec.ratios);
  const auto w = stage_one_weights(s, theta);
  const double Z = total_weight(w, z1);
  if (Z <= 0.0) return 0.0;
  // Complement: every true-null arm stays below e, i.e. x_k <= x_0 + e - 1.
  CompensatedSum keep;
  for (int x0 = 0; x0 <= std::min(s.control1, z1); ++x0) {
    std::vector<double> acc{1.0};
    for (std::size_t k = 0; k < w.arms.size(); ++k) {
      std::vector<double> a = w.arms[k];
      if (theta[k] == 1.0)
        for (int x = 0; x < static_cast<int>(a.size()); ++x)
          if (x > x0 + e1z1 - 1) a[x] = 0.0;
      acc = convolve(acc, a);
    }
    const int rest = z1 - x0;
    if (rest < static_cast<int>(acc.size())) keep += w.control[x0] * acc[rest];
  }
  return std::clamp(1.0 - keep.value() / Z, 0.0, 1.0);
}

double beta_II1(const FisherSpec& spec, int n, int z1, int f1, std::span<const double> theta) {
  const StageSizes s = StageSizes::from(n, spec.ratios);
  const auto w = stage_one_weights(s, theta);
  const double Z = total_weight(w, z1);
  if (Z <= 0.0) return 0.0;
  std::vector<double> others{1.0};
  for (std::size_t k = 1; k < w.arms.size(); ++k) others = convolve(others, w.arms[k]);
  CompensatedSum acc;
  for (int x0 = 0; x0 <= std::min(s.control1, z1); ++x0)
    for (int x1 = 0; x1 <= std::min(s.arm1, x0 + f1); ++x1) {
      const int rest = z1 - x0 - x1;
      if (rest >= 0 && rest < static_cast<int>(others.size()))
        acc += w.control[x0] * w.arms[0][x1] * others[rest];
    }
  return acc.value() / Z;
}

double alpha_I2(const FisherSpec& spec, int n, int m, int z2, int z1, int e2, int f1,
                std::span<const int> e1, std::span<const double> theta) {
  const StageSizes s = StageSizes::from(n, spec.ratios);
  const int K = spec.K;
  const auto w = stage_one_weights(s, theta);
  const double Z = total_weight(w, z1);
  if (Z <= 0.0) return 0.0;
  const std::uint32_t nulls = null_mask(theta);
  std::vector<std::vector<double>> arm_w(K);
  for (int k = 0; k < K; ++k) arm_w[k] = odds_weights(s.arm2, theta[k]);
  const auto control_w = odds_weights(s.control2, 1.0);
  std::map<std::uint32_t, std::unique_ptr<StageTwoTable>> tables;

  CompensatedSum acc;
  std::vector<int> limits(K, s.arm1);
  for_each_lattice(limits, [&](std::span<const int> xk) {
    int x0 = z1;
    double v = 1.0;
    for (int k = 0; k < K; ++k) {
      x0 -= xk[k];
      v *= w.arms[k][xk[k]];
    }
    if (x0 < 0 || x0 > s.control1) return;
    v *= w.control[x0];
    std::uint32_t S = 0;
    std::array<int, kMaxArms> t{};
    for (int k = 0; k < K; ++k) {
      t[k] = xk[k] - x0;
      if (t[k] >= e1[z1]) return;
      if (t[k] > f1) S |= 1u << k;
    }
    if (std::popcount(S) != m) return;
    const std::uint32_t V = S & nulls;
    if (!V) return;
    auto& table = tables[S];
    if (!table)
      table = std::make_unique<StageTwoTable>(control_w, pick(arm_w, V), convolve_arms(arm_w, S & ~V));
    const double total = table->total(z2);
    if (total <= 0.0) return;
    std::vector<int> c;
    for (int k = 0; k < K; ++k)
      if ((V >> k) & 1u) c.push_back(e2 - t[k]);
    acc += v * (1.0 - table->at(z2, c) / total);
  });
  return acc.value() / Z;
}

std::vector<int> determine_e1(const FisherSpec& spec, int n, double alpha1) {
  return FisherContext(spec, n).e1_for(alpha1);
}

int determine_f1(const FisherSpec& spec, int n, double beta1) {
  return FisherContext(spec, n).f1_for(beta1);
}

std::vector<std::vector<std::vector<int>>> determine_e2(const FisherSpec& spec, int n, int f1,
                                                        std::span<const int> e1,
                                                        std::span<const double> alpha1_spent) {
  return FisherContext(spec, n).e2_for(f1, e1, alpha1_spent);
}

// ---------------------------------------------------------------------------

Band band_F1(int k, int z1, const OutcomePair& o, const FisherBoundaries& b) {
  const int e = b.e1_at(z1);
  if (o.omega(k) == 2) return Band::open(b.f1, e);
  if (o.psi(k) == 1) return Band::at_least(e);
  if (o.max_omega() == 2) return Band::at_most(b.f1);
  if (o.any_rejected()) return Band::at_most(e - 1);
  return Band::at_most(b.f1);
}

Band band_F2(int k, int z1, int z2, const StagePresence& rho2, const OutcomePair& o,
             const FisherBoundaries& b) {
  if (o.omega(k) == 1) return Band::all();
  const int m = rho2.count();
  const int e = b.e2_at(m, z2, z1);
  if (o.psi(k) == 1) return Band::at_least(e);
  return Band::at_most(e - 1);
}

namespace {

struct Evaluation {
  StageOneLattice lattice;
  FisherPlan plan;
  FisherPoint point;

  Evaluation(const FisherDesign& d, std::span<const double> p)
      : lattice(StageOneLattice::build(d.K(), d.sizes())),
        plan(lattice, d.boundaries.f1, d.boundaries.e1),
        point(lattice, p) {}
};

void check_p(const FisherDesign& d, std::span<const double> p) {
  if (static_cast<int>(p.size()) != d.K() + 1) throw validation_error("p needs K + 1 entries");
  for (double v : p)
    if (!(v >= 0.0 && v <= 1.0)) throw validation_error("p entries must lie in [0, 1]");
}

}  // namespace

std::vector<double> outcome_distribution_fisher(const FisherDesign& d, std::span<const double> p) {
  check_p(d, p);
  const Evaluation ev(d, p);
  return fisher_outcome_distribution(ev.plan, d.boundaries, ev.point);
}

double outcome_prob_fisher(const FisherDesign& d, std::span<const double> p, const OutcomePair& o) {
  const auto dist = outcome_distribution_fisher(d, p);
  return dist[OutcomeSpace(d.K()).index_of(o)];
}

double fisher_fwer(const FisherDesign& d, std::span<const double> p) {
  check_p(d, p);
  const std::uint32_t nulls = true_null_mask(p);
  if (!nulls) return 0.0;
  const Evaluation ev(d, p);
  return 1.0 - fisher_no_rejection(ev.plan, d.boundaries, ev.point, nulls);
}

double fisher_fwp(const FisherDesign& d, std::span<const double> p) {
  check_p(d, p);
  const Evaluation ev(d, p);
  return 1.0 - fisher_no_rejection(ev.plan, d.boundaries, ev.point, (1u << d.K()) - 1u);
}

double fisher_ess(const FisherDesign& d, std::span<const double> p, FisherEss convention) {
  check_p(d, p);
  const Evaluation ev(d, p);
  return fisher_ess(ev.plan, ev.point, convention);
}

PowerCheck fisher_min_fwp(const FisherDesign& d) {
  const auto lattice = StageOneLattice::build(d.K(), d.sizes());
  const FisherPlan plan(lattice, d.boundaries.f1, d.boundaries.e1);
  const std::uint32_t all = (1u << d.K()) - 1u;
  auto fwp = [&](double p) {
    const FisherPoint pt(lattice, shifted(p, d.spec.delta));
    return 1.0 - fisher_no_rejection(plan, d.boundaries, pt, all);
  };
  const auto r = grid_minimize(fwp, 0.0, 1.0 - d.spec.max_delta(), d.spec.p_grid_step, d.spec.refine);
  return {r.x, r.value};
}

namespace {

template <class Build>
FisherDesign search_n(const TrialConfig& cfg, Build&& build) {
  cfg.validate();
  const FisherSpec spec = FisherSpec::from(cfg);
  const int lo = std::max(cfg.n_min + 1, 1);
  const int hi = cfg.n_max.value_or(kDefaultFisherNMax);
  for (int n = lo; n <= hi; ++n) {
    if (!cfg.ratios.integral_for(n)) continue;
    const FisherContext ctx(spec, n);
    FisherDesign d = build(ctx);
    if (fisher_min_fwp(d).fwp >= 1.0 - cfg.beta - kBoundaryTol) return d;
  }
  throw infeasible_error("no n in (" + std::to_string(cfg.n_min) + ", " + std::to_string(hi) +
                         "] attains the required power");
}

}  // namespace

FisherDesign find_min_n(const TrialConfig& cfg, double alpha1, double beta1) {
  return search_n(cfg, [&](const FisherContext& ctx) { return ctx.build(alpha1, beta1); });
}

FisherDesign find_min_n_imposed(const TrialConfig& cfg,
                                const std::function<ImposedStageOne(int n)>& rule) {
  return search_n(cfg, [&](const FisherContext& ctx) { return ctx.build_imposed(rule(ctx.n())); });
}

ImposedStageOne baseline_stage_one_rule(int n, double delta1) {
  // Guard against n * delta landing a hair above an integer.
  const int e = static_cast<int>(std::ceil(n * delta1 - 1e-9)) + 1;
  return {-1, e};
}

OutcomePair conduct_fisher(const FisherDesign& d, const TrialData& data) {
  const int K = d.K();
  const StageSizes s = d.sizes();
  if (static_cast<int>(data.stage1.size()) != K + 1)
    throw validation_error("stage-one data needs K + 1 counts");
  if (data.stage1[0] < 0 || data.stage1[0] > s.control1)
    throw validation_error("stage-one control count outside its support");
  for (int k = 1; k <= K; ++k)
    if (data.stage1[k] < 0 || data.stage1[k] > s.arm1)
      throw validation_error("stage-one arm count outside its support");

  const auto& b = d.boundaries;
  int z1 = 0;
  for (int x : data.stage1) z1 += x;
  const auto T1 = test_statistics(data, 1);
  OutcomePair o{K, 0u, 0u};
  std::uint32_t S = 0;
  for (int k = 0; k < K; ++k) {
    if (T1[k] >= b.e1_at(z1))
      o.rejected |= 1u << k;
    else if (T1[k] > b.f1)
      S |= 1u << k;
  }
  if (o.rejected || !S) return o;

  if (static_cast<int>(data.stage2.size()) != K + 1)
    throw validation_error("stage-two data needs K + 1 counts");
  if (data.stage2[0] < 0 || data.stage2[0] > s.control2)
    throw validation_error("stage-two control count outside its support");
  int z2 = data.stage2[0];
  for (int k = 0; k < K; ++k) {
    if (!((S >> k) & 1u)) continue;
    if (data.stage2[k + 1] < 0 || data.stage2[k + 1] > s.arm2)
      throw validation_error("stage-two arm count outside its support");
    z2 += data.stage2[k + 1];
  }
  const int m = std::popcount(S);
  const int e2 = b.e2_at(m, z2, z1);
  o.second_stage = S;
  for (int k = 0; k < K; ++k) {
    if (!((S >> k) & 1u)) continue;
    const int T2 = T1[k] + data.stage2[k + 1] - data.stage2[0];
    if (T2 >= e2) o.rejected |= 1u << k;
  }
  return o;
}

}  // namespace twostage
