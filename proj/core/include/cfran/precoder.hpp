#pragma once

// Downlink precoding under per-O-RU power budgets: SINR/rate evaluation,
// WMMSE block updates, utility-derived priority weights and projected dual
// ascent on the minimum-rate multipliers.

#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cfran/net_model.hpp"

namespace cfran {

enum class UtilityKind { SumRate, SumLogRate, EnergySaving };

std::string_view to_string(UtilityKind kind);
UtilityKind utility_kind_from_string(std::string_view text);

struct UtilitySpec {
  UtilityKind kind = UtilityKind::SumRate;
  std::vector<double> r_min_mbps;  ///< per user, >= 0
  double p_max_w = 1.0;            ///< per O-RU budget
  std::vector<double> dual_step;   ///< zeta_k, per Mbps of shortfall

  static UtilitySpec uniform(UtilityKind kind, int num_users, double r_min_mbps, double p_max_w,
                             double dual_step = 0.05);
  void validate(int num_users) const;
};

/// Which users' interference terms enter the per-O-RU precoder update.
/// AllUsers makes each O-RU update an exact block minimization of the
/// weighted MSE; ServedUsers restricts the sums to users served by the O-RU.
enum class InterferenceScope { AllUsers, ServedUsers };

struct SolverConfig {
  double rate_tol_mbps = 1e-3;
  int patience = 5;
  int max_iters = 500;
  double bisection_rel_tol = 1e-6;
  int bisection_max_iters = 60;
  int bracket_max_expansions = 64;
  double r_floor = 1e-6;  ///< bit/s/Hz, used in 1/r
  double alpha_floor = 1e-3;
  double alpha_cap = 1e3;
  InterferenceScope scope = InterferenceScope::AllUsers;
};

struct PrecodingState {
  int num_users = 0;
  int num_orus = 0;
  AntennaConfig antennas;

  std::vector<CMatrix> V;  ///< (k, l) row-major, n_t x n_s; zero unless l serves k
  std::vector<CMatrix> U;  ///< per user, n_r x n_s
  std::vector<CMatrix> W;  ///< per user, n_s x n_s
  std::vector<double> mu;
  std::vector<double> alpha;
  std::vector<double> rates;       ///< bit/s/Hz
  std::vector<double> rates_mbps;

  int iterations = 0;
  int stable_iterations = 0;
  bool converged = false;

  const CMatrix& v(int k, int l) const { return V[static_cast<std::size_t>(k * num_orus + l)]; }
  CMatrix& v(int k, int l) { return V[static_cast<std::size_t>(k * num_orus + l)]; }
};

/// Psi_{k,i} = sum_{l in L_i} H_{k,l} V_{i,l}; stored at index k * K + i.
using EffectiveMatrices = std::vector<CMatrix>;

EffectiveMatrices effective_matrices(const ChannelSet& channels, const Association& assoc,
                                     const std::vector<CMatrix>& V);

struct SinrResult {
  std::vector<CMatrix> gamma;  ///< per user, n_r x n_r
  std::vector<double> rates;   ///< bit/s/Hz
};

SinrResult sinr_and_rate(const EffectiveMatrices& psi, int num_users, double noise_variance);

/// Rates only; same values as sinr_and_rate().rates.
std::vector<double> user_rates(const EffectiveMatrices& psi, int num_users, double noise_variance);

/// Per-O-RU transmit power sum_k tr(V_{k,l} V_{k,l}^H).
std::vector<double> oru_powers(const PrecodingState& state);

double weighted_rate_sum(const std::vector<double>& alpha, const std::vector<double>& rates);

/// Dominant right-singular-vector precoders with an equal power split among
/// the users each active O-RU serves. mu = 0, alpha = 1.
PrecodingState initialize_state(const ChannelSet& channels, const Association& assoc,
                                const ActivationVector& z, double p_max_w);

/// One U -> W -> V pass with alpha held fixed. O-RUs are swept in index order
/// and each sweep step solves its own power-constrained subproblem exactly.
PrecodingState wmmse_iteration(const PrecodingState& state, const ChannelSet& channels,
                               const Association& assoc, const ActivationVector& z,
                               const UtilitySpec& spec, const SolverConfig& config = {});

/// alpha_k = U'_k(r_k) + mu_k, clamped to [alpha_floor, alpha_cap].
std::vector<double> priority_weights(const std::vector<double>& rates, const std::vector<double>& mu,
                                     const UtilitySpec& spec, const SolverConfig& config = {});

/// mu_k <- max(0, mu_k + zeta_k (R_min_k - r_k)), rates in Mbps.
std::vector<double> dual_ascent_update(const std::vector<double>& mu,
                                       const std::vector<double>& rates_mbps,
                                       const UtilitySpec& spec);

struct SolveTrace {
  int iteration = 0;
  std::vector<double> rates_mbps;
  std::vector<double> powers_w;
  std::vector<double> mu;
};

struct SolveOptions {
  /// When set, weights stay fixed at these values and no dual updates run.
  std::optional<std::vector<double>> fixed_alpha;
  std::function<void(const SolveTrace&)> trace;
};

/// Alternates wmmse_iteration with weight and dual updates until the per-user
/// rates move less than rate_tol for `patience` consecutive passes (and, with
/// adaptive weights, every minimum rate is met within rate_tol) or max_iters.
PrecodingState solve(const ChannelSet& channels, const Association& assoc, const UtilitySpec& spec,
                     const ActivationVector& z, const SolverConfig& config = {},
                     const PrecodingState* warm_start = nullptr, const SolveOptions& options = {});

}  // namespace cfran
