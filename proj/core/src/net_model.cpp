#include "cfran/net_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "cfran/error.hpp"

namespace cfran {

double distance(const Point2& a, const Point2& b) { return std::hypot(a.x - b.x, a.y - b.y); }

void AntennaConfig::validate() const {
  require(n_t >= 1, "antennas.n_t must be >= 1");
  require(n_r >= 1, "antennas.n_r must be >= 1");
  require(n_s >= 1, "antennas.n_s must be >= 1");
  require(n_s <= std::min(n_t, n_r), "antennas.n_s must be <= min(n_t, n_r)");
}

void Topology::validate() const {
  require(num_orus() >= 1, "topology needs at least one O-RU");
  require(num_users() >= 1, "topology needs at least one user");
  require(area_side > 0.0, "area_side must be positive");
  antennas.validate();
  auto inside = [this](const Point2& p) {
    return p.x >= 0.0 && p.x <= area_side && p.y >= 0.0 && p.y <= area_side;
  };
  for (std::size_t i = 0; i < oru_positions.size(); ++i)
    require(inside(oru_positions[i]), "O-RU " + std::to_string(i) + " lies outside the area");
  for (std::size_t i = 0; i < user_positions.size(); ++i)
    require(inside(user_positions[i]), "user " + std::to_string(i) + " lies outside the area");
}

Topology generate_topology(std::uint64_t seed, int num_orus, int num_users, double area_side,
                           AntennaConfig antennas) {
  require(num_orus >= 1, "L must be >= 1");
  require(num_users >= 1, "K must be >= 1");
  require(area_side > 0.0 && std::isfinite(area_side), "area_side must be positive");
  antennas.validate();

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> coord(0.0, area_side);
  Topology topo;
  topo.area_side = area_side;
  topo.antennas = antennas;
  topo.oru_positions.resize(static_cast<std::size_t>(num_orus));
  topo.user_positions.resize(static_cast<std::size_t>(num_users));
  for (auto& p : topo.oru_positions) {
    p.x = coord(rng);
    p.y = coord(rng);
  }
  for (auto& p : topo.user_positions) {
    p.x = coord(rng);
    p.y = coord(rng);
  }
  return topo;
}

void PathLossParams::validate() const {
  require(d0_m > 0.0, "pathloss.d0_m must be positive");
  require(d_min_m > 0.0, "pathloss.d_min_m must be positive");
  require(exponent > 0.0, "pathloss.exponent must be positive");
  require(std::isfinite(pl0_db), "pathloss.pl0_db must be finite");
  require(!shadowing || shadowing_std_db >= 0.0, "pathloss.shadowing_std_db must be >= 0");
}

double path_loss_db(double distance_m, const PathLossParams& params) {
  const double d = std::max(distance_m, params.d_min_m);
  return params.pl0_db + 10.0 * params.exponent * std::log10(d / params.d0_m);
}

void LargeScaleFading::validate() const {
  require(beta.rows() >= 1 && beta.cols() >= 1, "fading matrix is empty");
  for (Eigen::Index k = 0; k < beta.rows(); ++k)
    for (Eigen::Index l = 0; l < beta.cols(); ++l)
      require(std::isfinite(beta(k, l)) && beta(k, l) > 0.0,
              "beta(" + std::to_string(k) + "," + std::to_string(l) + ") must be positive and finite");
}

LargeScaleFading compute_large_scale_fading(const Topology& topology, const PathLossParams& params) {
  topology.validate();
  params.validate();
  const int K = topology.num_users();
  const int L = topology.num_orus();

  std::mt19937_64 rng(params.shadowing_seed);
  std::normal_distribution<double> shadow(0.0, params.shadowing_std_db);

  LargeScaleFading out;
  out.beta.resize(K, L);
  for (int k = 0; k < K; ++k) {
    for (int l = 0; l < L; ++l) {
      double pl = path_loss_db(distance(topology.user_positions[k], topology.oru_positions[l]), params);
      if (params.shadowing) pl += shadow(rng);
      out.beta(k, l) = std::pow(10.0, -pl / 10.0);
    }
  }
  return out;
}

double dbm_to_watts(double dbm) { return std::pow(10.0, (dbm - 30.0) / 10.0); }

double NoiseParams::variance_watts() const {
  return dbm_to_watts(density_dbm_per_hz + noise_figure_db + 10.0 * std::log10(bandwidth_hz));
}

ChannelSet draw_channels(const LargeScaleFading& fading, const AntennaConfig& antennas,
                         const NoiseParams& noise, std::uint64_t seed) {
  fading.validate();
  antennas.validate();
  require(noise.bandwidth_hz > 0.0, "bandwidth_hz must be positive");

  ChannelSet cs;
  cs.num_users = fading.num_users();
  cs.num_orus = fading.num_orus();
  cs.antennas = antennas;
  cs.noise_variance = noise.variance_watts();
  cs.bandwidth_hz = noise.bandwidth_hz;
  cs.H.reserve(static_cast<std::size_t>(cs.num_users * cs.num_orus));

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, std::sqrt(0.5));
  for (int k = 0; k < cs.num_users; ++k) {
    for (int l = 0; l < cs.num_orus; ++l) {
      const double amp = std::sqrt(fading.beta(k, l));
      CMatrix h(antennas.n_r, antennas.n_t);
      for (int i = 0; i < antennas.n_r; ++i)
        for (int j = 0; j < antennas.n_t; ++j) {
          const double re = gauss(rng);
          const double im = gauss(rng);
          h(i, j) = amp * std::complex<double>(re, im);
        }
      cs.H.push_back(std::move(h));
    }
  }
  return cs;
}

bool Association::serves(int k, int l) const {
  const auto& s = serving[static_cast<std::size_t>(k)];
  return std::find(s.begin(), s.end(), l) != s.end();
}

Association associate_users(const LargeScaleFading& fading, const ActivationVector& z, int l_max) {
  const int K = fading.num_users();
  const int L = fading.num_orus();
  require(static_cast<int>(z.size()) == L, "activation vector length must equal L");
  require(l_max >= 1, "L_max must be >= 1");

  Association assoc;
  assoc.l_max = l_max;
  assoc.serving.assign(static_cast<std::size_t>(K), {});
  assoc.served.assign(static_cast<std::size_t>(L), {});

  std::vector<int> active;
  for (int l = 0; l < L; ++l)
    if (z[static_cast<std::size_t>(l)] != 0) active.push_back(l);

  for (int k = 0; k < K; ++k) {
    std::vector<int> order = active;
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return fading.beta(k, a) > fading.beta(k, b); });
    if (static_cast<int>(order.size()) > l_max) order.resize(static_cast<std::size_t>(l_max));
    for (int l : order) assoc.served[static_cast<std::size_t>(l)].push_back(k);
    assoc.serving[static_cast<std::size_t>(k)] = std::move(order);
  }
  return assoc;
}

int count_active(const ActivationVector& z) {
  return static_cast<int>(std::count_if(z.begin(), z.end(), [](int v) { return v != 0; }));
}

}  // namespace cfran
