#include "twostage/outcome_space.hpp"

#include <algorithm>

#include "twostage/errors.hpp"

namespace twostage {

OutcomePair OutcomePair::from_vectors(std::span<const int> psi, std::span<const int> omega) {
  if (psi.size() != omega.size() || psi.empty() || psi.size() > kMaxArms)
    throw validation_error("outcome vectors must have equal length in 1..4");
  OutcomePair o;
  o.K = static_cast<int>(psi.size());
  for (int k = 0; k < o.K; ++k) {
    if (psi[k] != 0 && psi[k] != 1) throw validation_error("psi entries must be 0 or 1");
    if (omega[k] != 1 && omega[k] != 2) throw validation_error("omega entries must be 1 or 2");
    if (psi[k]) o.rejected |= 1u << k;
    if (omega[k] == 2) o.second_stage |= 1u << k;
  }
  return o;
}

std::string OutcomePair::to_string() const {
  std::string s = "psi=(";
  for (int k = 1; k <= K; ++k) s += (k > 1 ? "," : "") + std::to_string(psi(k));
  s += ") omega=(";
  for (int k = 1; k <= K; ++k) s += (k > 1 ? "," : "") + std::to_string(omega(k));
  return s + ")";
}

bool is_valid_outcome(const OutcomePair& o) {
  const std::uint32_t stage_one_rejections = o.rejected & ~o.second_stage;
  return !(stage_one_rejections != 0 && o.second_stage != 0);
}

OutcomeSpace::OutcomeSpace(int K) : K_(K) {
  if (K < 1 || K > kMaxArms) throw validation_error("K must lie in 1..4");
  const std::uint32_t full = 1u << K;
  // Lexicographic in omega (arm 1 most significant), then psi.
  auto lex_key = [K](std::uint32_t mask) {
    std::uint32_t key = 0;
    for (int k = 0; k < K; ++k) key = (key << 1) | ((mask >> k) & 1u);
    return key;
  };
  std::vector<std::uint32_t> order(full);
  for (std::uint32_t i = 0; i < full; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::uint32_t a, std::uint32_t b) { return lex_key(a) < lex_key(b); });
  lookup_.assign(static_cast<std::size_t>(full) * full, -1);
  for (std::uint32_t omega : order) {
    for (std::uint32_t psi : order) {
      OutcomePair o{K, psi, omega};
      if (!is_valid_outcome(o)) continue;
      lookup_[(omega << K) | psi] = static_cast<int>(outcomes_.size());
      outcomes_.push_back(o);
    }
  }
}

std::size_t OutcomeSpace::index_of(const OutcomePair& o) const {
  if (o.K != K_) throw validation_error("outcome arm count does not match space");
  const int idx = lookup_[(o.second_stage << K_) | o.rejected];
  if (idx < 0) throw validation_error("outcome " + o.to_string() + " is not in the sample space");
  return static_cast<std::size_t>(idx);
}

OutcomeSpace enumerate_outcomes(int K) { return OutcomeSpace(K); }

bool in_xi_ind(const OutcomePair& o, int k) { return o.psi(k) == 1; }

bool in_xi_rej(const OutcomePair& o) { return o.rejected != 0; }

std::uint32_t true_null_mask(std::span<const double> p) {
  std::uint32_t mask = 0;
  for (std::size_t k = 1; k < p.size(); ++k)
    if (p[k] == p[0]) mask |= 1u << (k - 1);
  return mask;
}

bool in_xi_fwer(const OutcomePair& o, std::span<const double> p) {
  return (o.rejected & true_null_mask(p)) != 0;
}

}  // namespace twostage
