#include "cfran/precoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "cfran/error.hpp"

namespace cfran {

namespace {

constexpr double kLn2 = 0.69314718055994530942;

double log_det_hpd(const CMatrix& m) {
  Eigen::LLT<CMatrix> llt(m);
  if (llt.info() != Eigen::Success) throw NumericError("matrix is not Hermitian positive definite");
  const CMatrix& l = llt.matrixLLT();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < l.rows(); ++i) acc += std::log(l(i, i).real());
  return 2.0 * acc;
}

bool all_finite(const CMatrix& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i)
    if (!std::isfinite(m.data()[i].real()) || !std::isfinite(m.data()[i].imag())) return false;
  return true;
}

CMatrix hermitian_part(const CMatrix& m) { return 0.5 * (m + m.adjoint()); }

void check_dimensions(const ChannelSet& channels, const Association& assoc) {
  require(assoc.num_users() == channels.num_users && assoc.num_orus() == channels.num_orus,
          "association dimensions do not match the channel set");
}

/// Per-O-RU power as a function of the dual variable xi, given the
/// eigendecomposition of the (PSD) quadratic term.
struct PowerCurve {
  Eigen::VectorXd eigenvalues;
  Eigen::VectorXd row_mass;  ///< sum_c |C_{j,c}|^2
  double zero_threshold = 0.0;

  double operator()(double xi) const {
    double p = 0.0;
    for (Eigen::Index j = 0; j < eigenvalues.size(); ++j) {
      if (row_mass[j] == 0.0) continue;
      const double denom = eigenvalues[j] + xi;
      if (denom <= zero_threshold) return std::numeric_limits<double>::infinity();
      p += row_mass[j] / (denom * denom);
    }
    return p;
  }
};

}  // namespace

std::string_view to_string(UtilityKind kind) {
  switch (kind) {
    case UtilityKind::SumRate: return "sum_rate";
    case UtilityKind::SumLogRate: return "sum_log_rate";
    case UtilityKind::EnergySaving: return "energy_saving";
  }
  return "sum_rate";
}

UtilityKind utility_kind_from_string(std::string_view text) {
  if (text == "sum_rate") return UtilityKind::SumRate;
  if (text == "sum_log_rate") return UtilityKind::SumLogRate;
  if (text == "energy_saving") return UtilityKind::EnergySaving;
  throw InvalidArgument("unknown utility kind '" + std::string(text) + "'");
}

UtilitySpec UtilitySpec::uniform(UtilityKind kind, int num_users, double r_min_mbps, double p_max_w,
                                 double dual_step) {
  UtilitySpec spec;
  spec.kind = kind;
  spec.r_min_mbps.assign(static_cast<std::size_t>(num_users), r_min_mbps);
  spec.p_max_w = p_max_w;
  spec.dual_step.assign(static_cast<std::size_t>(num_users), dual_step);
  return spec;
}

void UtilitySpec::validate(int num_users) const {
  require(static_cast<int>(r_min_mbps.size()) == num_users, "R_min must have one entry per user");
  require(static_cast<int>(dual_step.size()) == num_users, "dual step sizes must have one entry per user");
  require(p_max_w > 0.0 && std::isfinite(p_max_w), "P_max must be positive");
  for (double r : r_min_mbps) require(r >= 0.0 && std::isfinite(r), "R_min must be >= 0");
  for (double z : dual_step) require(z > 0.0 && std::isfinite(z), "dual step sizes must be > 0");
}

EffectiveMatrices effective_matrices(const ChannelSet& channels, const Association& assoc,
                                     const std::vector<CMatrix>& V) {
  check_dimensions(channels, assoc);
  const int K = channels.num_users;
  const int L = channels.num_orus;
  const auto& ant = channels.antennas;
  require(static_cast<int>(V.size()) == K * L, "precoder array must hold K*L matrices");

  EffectiveMatrices psi(static_cast<std::size_t>(K * K), CMatrix::Zero(ant.n_r, ant.n_s));
  for (int i = 0; i < K; ++i) {
    for (int l : assoc.serving[static_cast<std::size_t>(i)]) {
      const CMatrix& v = V[static_cast<std::size_t>(i * L + l)];
      require(v.rows() == ant.n_t && v.cols() == ant.n_s, "precoder has wrong dimensions");
      for (int k = 0; k < K; ++k) psi[static_cast<std::size_t>(k * K + i)].noalias() += channels.h(k, l) * v;
    }
  }
  return psi;
}

std::vector<double> user_rates(const EffectiveMatrices& psi, int num_users, double noise_variance) {
  require(noise_variance > 0.0, "noise variance must be positive");
  require(static_cast<int>(psi.size()) == num_users * num_users, "effective matrix array must be K*K");
  const int K = num_users;
  const Eigen::Index n_r = psi.front().rows();
  std::vector<double> rates(static_cast<std::size_t>(K), 0.0);
  for (int k = 0; k < K; ++k) {
    const CMatrix& own = psi[static_cast<std::size_t>(k * K + k)];
    if (!all_finite(own)) throw NumericError("non-finite effective channel");
    if (own.squaredNorm() == 0.0) continue;
    CMatrix interference = CMatrix::Identity(n_r, n_r);
    for (int i = 0; i < K; ++i) {
      if (i == k) continue;
      const CMatrix& p = psi[static_cast<std::size_t>(k * K + i)];
      interference.noalias() += (p * p.adjoint()) / noise_variance;
    }
    CMatrix total = interference;
    total.noalias() += (own * own.adjoint()) / noise_variance;
    const double r = (log_det_hpd(hermitian_part(total)) - log_det_hpd(hermitian_part(interference))) / kLn2;
    if (!std::isfinite(r)) throw NumericError("non-finite rate");
    rates[static_cast<std::size_t>(k)] = std::max(r, 0.0);
  }
  return rates;
}

SinrResult sinr_and_rate(const EffectiveMatrices& psi, int num_users, double noise_variance) {
  require(noise_variance > 0.0, "noise variance must be positive");
  require(static_cast<int>(psi.size()) == num_users * num_users, "effective matrix array must be K*K");
  const int K = num_users;
  const Eigen::Index n_r = psi.front().rows();
  SinrResult out;
  out.gamma.reserve(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    const CMatrix& own = psi[static_cast<std::size_t>(k * K + k)];
    CMatrix interference = CMatrix::Identity(n_r, n_r);
    for (int i = 0; i < K; ++i) {
      if (i == k) continue;
      const CMatrix& p = psi[static_cast<std::size_t>(k * K + i)];
      interference.noalias() += (p * p.adjoint()) / noise_variance;
    }
    // Gamma_k = Psi_kk Psi_kk^H (sigma^2 * interference)^{-1}
    CMatrix gamma = (own * own.adjoint()) / noise_variance;
    gamma = interference.adjoint().ldlt().solve(gamma.adjoint()).adjoint();
    if (!all_finite(gamma)) throw NumericError("non-finite SINR matrix");
    out.gamma.push_back(std::move(gamma));
  }
  out.rates = user_rates(psi, num_users, noise_variance);
  return out;
}

std::vector<double> oru_powers(const PrecodingState& state) {
  std::vector<double> p(static_cast<std::size_t>(state.num_orus), 0.0);
  for (int k = 0; k < state.num_users; ++k)
    for (int l = 0; l < state.num_orus; ++l) p[static_cast<std::size_t>(l)] += state.v(k, l).squaredNorm();
  return p;
}

double weighted_rate_sum(const std::vector<double>& alpha, const std::vector<double>& rates) {
  require(alpha.size() == rates.size(), "alpha and rates differ in length");
  double s = 0.0;
  for (std::size_t k = 0; k < rates.size(); ++k) s += alpha[k] * rates[k];
  return s;
}

namespace {

void fill_rates(PrecodingState& state, const ChannelSet& channels, const Association& assoc) {
  const auto psi = effective_matrices(channels, assoc, state.V);
  state.rates = user_rates(psi, channels.num_users, channels.noise_variance);
  state.rates_mbps.resize(state.rates.size());
  for (std::size_t k = 0; k < state.rates.size(); ++k) state.rates_mbps[k] = channels.to_mbps(state.rates[k]);
}

void init_precoders(PrecodingState& state, const ChannelSet& channels, const Association& assoc,
                    const ActivationVector& z, double p_max_w) {
  const auto& ant = channels.antennas;
  for (auto& v : state.V) v = CMatrix::Zero(ant.n_t, ant.n_s);
  for (int l = 0; l < channels.num_orus; ++l) {
    const auto& users = assoc.served[static_cast<std::size_t>(l)];
    if (users.empty() || z[static_cast<std::size_t>(l)] == 0) continue;
    const double per_user = p_max_w / static_cast<double>(users.size());
    for (int k : users) {
      Eigen::JacobiSVD<CMatrix> svd(channels.h(k, l), Eigen::ComputeFullV);
      CMatrix dirs = svd.matrixV().leftCols(ant.n_s);
      state.v(k, l) = std::sqrt(per_user / static_cast<double>(ant.n_s)) * dirs;
    }
  }
}

bool precoders_match_association(const PrecodingState& state, const Association& assoc) {
  for (int k = 0; k < state.num_users; ++k)
    for (int l = 0; l < state.num_orus; ++l) {
      const bool nonzero = state.v(k, l).squaredNorm() > 0.0;
      if (nonzero != assoc.serves(k, l)) return false;
    }
  return true;
}

}  // namespace

PrecodingState initialize_state(const ChannelSet& channels, const Association& assoc,
                                const ActivationVector& z, double p_max_w) {
  check_dimensions(channels, assoc);
  require(static_cast<int>(z.size()) == channels.num_orus, "activation vector length must equal L");
  require(p_max_w > 0.0, "P_max must be positive");
  const int K = channels.num_users;
  const auto& ant = channels.antennas;

  PrecodingState state;
  state.num_users = K;
  state.num_orus = channels.num_orus;
  state.antennas = ant;
  state.V.assign(static_cast<std::size_t>(K * channels.num_orus), CMatrix::Zero(ant.n_t, ant.n_s));
  state.U.assign(static_cast<std::size_t>(K), CMatrix::Zero(ant.n_r, ant.n_s));
  state.W.assign(static_cast<std::size_t>(K), CMatrix::Identity(ant.n_s, ant.n_s));
  state.mu.assign(static_cast<std::size_t>(K), 0.0);
  state.alpha.assign(static_cast<std::size_t>(K), 1.0);
  init_precoders(state, channels, assoc, z, p_max_w);
  fill_rates(state, channels, assoc);
  return state;
}

PrecodingState wmmse_iteration(const PrecodingState& state, const ChannelSet& channels,
                               const Association& assoc, const ActivationVector& z,
                               const UtilitySpec& spec, const SolverConfig& config) {
  check_dimensions(channels, assoc);
  const int K = channels.num_users;
  const int L = channels.num_orus;
  const auto& ant = channels.antennas;
  const double sigma2 = channels.noise_variance;
  require(state.num_users == K && state.num_orus == L, "state dimensions do not match the channel set");
  require(static_cast<int>(z.size()) == L, "activation vector length must equal L");
  require(static_cast<int>(state.alpha.size()) == K, "alpha must have one entry per user");
  spec.validate(K);

  PrecodingState next = state;
  EffectiveMatrices psi = effective_matrices(channels, assoc, state.V);

  // Receive filters, then MSE weights.
  std::vector<CMatrix> X(static_cast<std::size_t>(K));
  std::vector<CMatrix> Yh(static_cast<std::size_t>(K));  // Y_k^H = U_k W_k^H
  for (int k = 0; k < K; ++k) {
    CMatrix J = sigma2 * CMatrix::Identity(ant.n_r, ant.n_r);
    for (int i = 0; i < K; ++i) {
      const CMatrix& p = psi[static_cast<std::size_t>(k * K + i)];
      J.noalias() += p * p.adjoint();
    }
    const CMatrix& own = psi[static_cast<std::size_t>(k * K + k)];
    CMatrix u = hermitian_part(J).ldlt().solve(own);
    CMatrix e = CMatrix::Identity(ant.n_s, ant.n_s) - u.adjoint() * own;
    CMatrix w = hermitian_part(e).inverse();
    w = hermitian_part(w);
    if (!all_finite(u) || !all_finite(w)) throw NumericError("non-finite receive filter or weight matrix");
    X[static_cast<std::size_t>(k)] = u * w * u.adjoint();
    Yh[static_cast<std::size_t>(k)] = u * w.adjoint();
    next.U[static_cast<std::size_t>(k)] = std::move(u);
    next.W[static_cast<std::size_t>(k)] = std::move(w);
  }

  // Precoders, one O-RU at a time.
  std::vector<int> all_users(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) all_users[static_cast<std::size_t>(k)] = k;

  for (int l = 0; l < L; ++l) {
    const auto& served = assoc.served[static_cast<std::size_t>(l)];
    if (z[static_cast<std::size_t>(l)] == 0 || served.empty()) {
      for (int k = 0; k < K; ++k) next.v(k, l).setZero();
      continue;
    }
    const auto& sum_users = config.scope == InterferenceScope::AllUsers ? all_users : served;
    const double budget = spec.p_max_w;

    CMatrix M = CMatrix::Zero(ant.n_t, ant.n_t);
    std::vector<CMatrix> HX(sum_users.size());  // alpha_i H_il^H X_i
    for (std::size_t s = 0; s < sum_users.size(); ++s) {
      const int i = sum_users[s];
      const CMatrix& h = channels.h(i, l);
      HX[s] = state.alpha[static_cast<std::size_t>(i)] * (h.adjoint() * X[static_cast<std::size_t>(i)]);
      M.noalias() += HX[s] * h;
    }
    M = hermitian_part(M);

    const Eigen::Index cols = static_cast<Eigen::Index>(served.size()) * ant.n_s;
    CMatrix B(ant.n_t, cols);
    for (std::size_t j = 0; j < served.size(); ++j) {
      const int k = served[j];
      CMatrix b = state.alpha[static_cast<std::size_t>(k)] * (channels.h(k, l).adjoint() * Yh[static_cast<std::size_t>(k)]);
      for (std::size_t s = 0; s < sum_users.size(); ++s) {
        const int i = sum_users[s];
        CMatrix zikl = psi[static_cast<std::size_t>(i * K + k)] - channels.h(i, l) * next.v(k, l);
        b.noalias() -= HX[s] * zikl;
      }
      B.middleCols(static_cast<Eigen::Index>(j) * ant.n_s, ant.n_s) = b;
    }

    Eigen::SelfAdjointEigenSolver<CMatrix> eig(M);
    if (eig.info() != Eigen::Success) throw NumericError("eigendecomposition failed at O-RU " + std::to_string(l));
    PowerCurve curve;
    curve.eigenvalues = eig.eigenvalues().cwiseMax(0.0);
    const CMatrix C = eig.eigenvectors().adjoint() * B;
    curve.row_mass = C.rowwise().squaredNorm();
    curve.zero_threshold = 1e-12 * std::max(curve.eigenvalues.maxCoeff(), 0.0);
    const double total_mass = curve.row_mass.sum();
    if (!std::isfinite(total_mass)) throw NumericError("non-finite precoder right-hand side at O-RU " + std::to_string(l));
    // Directions with no right-hand-side mass stay at zero.
    for (Eigen::Index j = 0; j < curve.row_mass.size(); ++j)
      if (curve.row_mass[j] <= 1e-30 * total_mass) curve.row_mass[j] = 0.0;

    double xi = 0.0;
    if (total_mass > 0.0 && curve(0.0) > budget) {
      double hi = std::sqrt(total_mass / budget) / 256.0;
      double lo = 0.0;
      int expansions = 0;
      while (curve(hi) > budget) {
        lo = hi;
        hi *= 2.0;
        if (++expansions > config.bracket_max_expansions) {
          std::ostringstream os;
          os << "power bisection failed to bracket at O-RU " << l << " (budget " << budget << " W, rhs mass "
             << total_mass << ", last xi " << hi << ", power " << curve(hi) << ")";
          throw NumericError(os.str());
        }
      }
      for (int it = 0; it < config.bisection_max_iters; ++it) {
        if (budget - curve(hi) <= config.bisection_rel_tol * budget) break;
        const double mid = 0.5 * (lo + hi);
        if (curve(mid) > budget)
          lo = mid;
        else
          hi = mid;
      }
      xi = hi;
    }

    Eigen::VectorXd scale(curve.eigenvalues.size());
    for (Eigen::Index j = 0; j < scale.size(); ++j) {
      const double denom = curve.eigenvalues[j] + xi;
      scale[j] = (curve.row_mass[j] == 0.0 || denom <= curve.zero_threshold) ? 0.0 : 1.0 / denom;
    }
    CMatrix Vl = eig.eigenvectors() * (scale.asDiagonal() * C);
    if (!all_finite(Vl)) throw NumericError("non-finite precoder at O-RU " + std::to_string(l));

    for (std::size_t j = 0; j < served.size(); ++j) {
      const int k = served[j];
      CMatrix v_new = Vl.middleCols(static_cast<Eigen::Index>(j) * ant.n_s, ant.n_s);
      const CMatrix delta = v_new - next.v(k, l);
      for (int i = 0; i < K; ++i) psi[static_cast<std::size_t>(i * K + k)].noalias() += channels.h(i, l) * delta;
      next.v(k, l) = std::move(v_new);
    }
  }

  fill_rates(next, channels, assoc);
  next.iterations = state.iterations + 1;
  return next;
}

std::vector<double> priority_weights(const std::vector<double>& rates, const std::vector<double>& mu,
                                     const UtilitySpec& spec, const SolverConfig& config) {
  require(rates.size() == mu.size(), "rates and mu differ in length");
  std::vector<double> alpha(rates.size());
  for (std::size_t k = 0; k < rates.size(); ++k) {
    double derivative = 0.0;
    switch (spec.kind) {
      case UtilityKind::SumRate: derivative = 1.0; break;
      case UtilityKind::SumLogRate: derivative = 1.0 / std::max(rates[k], config.r_floor); break;
      case UtilityKind::EnergySaving: derivative = 0.0; break;
    }
    alpha[k] = std::clamp(derivative + mu[k], config.alpha_floor, config.alpha_cap);
  }
  return alpha;
}

std::vector<double> dual_ascent_update(const std::vector<double>& mu, const std::vector<double>& rates_mbps,
                                       const UtilitySpec& spec) {
  require(mu.size() == rates_mbps.size(), "mu and rates differ in length");
  require(spec.r_min_mbps.size() == mu.size() && spec.dual_step.size() == mu.size(),
          "utility spec does not match the number of users");
  std::vector<double> out(mu.size());
  for (std::size_t k = 0; k < mu.size(); ++k)
    out[k] = std::max(0.0, mu[k] + spec.dual_step[k] * (spec.r_min_mbps[k] - rates_mbps[k]));
  return out;
}

PrecodingState solve(const ChannelSet& channels, const Association& assoc, const UtilitySpec& spec,
                     const ActivationVector& z, const SolverConfig& config, const PrecodingState* warm_start,
                     const SolveOptions& options) {
  check_dimensions(channels, assoc);
  const int K = channels.num_users;
  spec.validate(K);
  require(static_cast<int>(z.size()) == channels.num_orus, "activation vector length must equal L");
  require(config.patience >= 1 && config.max_iters >= 1, "solver patience and max_iters must be >= 1");

  PrecodingState state;
  if (warm_start != nullptr) {
    require(warm_start->num_users == K && warm_start->num_orus == channels.num_orus,
            "warm start dimensions do not match the channel set");
    state = *warm_start;
    if (!precoders_match_association(state, assoc)) {
      init_precoders(state, channels, assoc, z, spec.p_max_w);
      state.stable_iterations = 0;
    }
    // Budgets may have shrunk since the warm start was produced.
    const auto powers = oru_powers(state);
    for (int l = 0; l < channels.num_orus; ++l) {
      const double p = powers[static_cast<std::size_t>(l)];
      if (p > spec.p_max_w) {
        const double s = std::sqrt(spec.p_max_w / p);
        for (int k = 0; k < K; ++k) state.v(k, l) *= s;
      }
    }
    fill_rates(state, channels, assoc);
  } else {
    state = initialize_state(channels, assoc, z, spec.p_max_w);
  }
  state.iterations = 0;
  state.converged = false;

  const bool adaptive = !options.fixed_alpha.has_value();
  if (!adaptive) {
    require(static_cast<int>(options.fixed_alpha->size()) == K, "fixed alpha must have one entry per user");
    state.alpha = *options.fixed_alpha;
  } else if (warm_start == nullptr) {
    state.alpha = priority_weights(state.rates, state.mu, spec, config);
  }

  auto feasible = [&](const PrecodingState& s) {
    for (int k = 0; k < K; ++k)
      if (s.rates_mbps[static_cast<std::size_t>(k)] < spec.r_min_mbps[static_cast<std::size_t>(k)] - config.rate_tol_mbps)
        return false;
    return true;
  };

  for (int it = 0; it < config.max_iters; ++it) {
    PrecodingState next = wmmse_iteration(state, channels, assoc, z, spec, config);
    if (adaptive) {
      next.mu = dual_ascent_update(state.mu, next.rates_mbps, spec);
      next.alpha = priority_weights(next.rates, next.mu, spec, config);
    }
    double change = 0.0;
    for (int k = 0; k < K; ++k)
      change = std::max(change, std::abs(next.rates_mbps[static_cast<std::size_t>(k)] -
                                         state.rates_mbps[static_cast<std::size_t>(k)]));
    next.stable_iterations = change < config.rate_tol_mbps ? state.stable_iterations + 1 : 0;
    next.iterations = it + 1;
    state = std::move(next);

    if (options.trace) options.trace(SolveTrace{state.iterations, state.rates_mbps, oru_powers(state), state.mu});

    if (state.stable_iterations >= config.patience && (!adaptive || feasible(state))) {
      state.converged = true;
      break;
    }
  }
  return state;
}

}  // namespace cfran
