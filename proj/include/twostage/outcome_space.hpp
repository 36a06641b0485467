#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace twostage {

inline constexpr int kMaxArms = 4;

/// Terminal study outcome (psi, omega). Arms are 1-based in the accessors to
/// match the usual k = 1..K indexing; bit k-1 of each mask holds arm k.
struct OutcomePair {
  int K = 0;
  std::uint32_t rejected = 0;      // psi_k == 1
  std::uint32_t second_stage = 0;  // omega_k == 2

  int psi(int k) const { return (rejected >> (k - 1)) & 1u; }
  int omega(int k) const { return ((second_stage >> (k - 1)) & 1u) ? 2 : 1; }
  int max_omega() const { return second_stage ? 2 : 1; }
  bool any_rejected() const { return rejected != 0; }

  static OutcomePair from_vectors(std::span<const int> psi, std::span<const int> omega);
  std::string to_string() const;

  friend bool operator==(const OutcomePair&, const OutcomePair&) = default;
};

/// True when the pair respects the stage-one termination rule.
bool is_valid_outcome(const OutcomePair& o);

class OutcomeSpace {
 public:
  explicit OutcomeSpace(int K);

  int arms() const { return K_; }
  std::size_t size() const { return outcomes_.size(); }
  const std::vector<OutcomePair>& outcomes() const { return outcomes_; }
  const OutcomePair& operator[](std::size_t i) const { return outcomes_[i]; }

  /// Position of o in canonical order; throws if o is not in the space.
  std::size_t index_of(const OutcomePair& o) const;

 private:
  int K_;
  std::vector<OutcomePair> outcomes_;
  std::vector<int> lookup_;  // (second_stage << K | rejected) -> index or -1
};

/// Every valid pair for K arms, lexicographic in (omega, psi).
OutcomeSpace enumerate_outcomes(int K);

bool in_xi_ind(const OutcomePair& o, int k);
bool in_xi_rej(const OutcomePair& o);
/// p has length K + 1; arm k is a true null iff p[k] == p[0] exactly.
bool in_xi_fwer(const OutcomePair& o, std::span<const double> p);

/// Bit mask of arms whose null hypothesis holds under p.
std::uint32_t true_null_mask(std::span<const double> p);

}  // namespace twostage
