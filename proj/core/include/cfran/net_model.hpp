#pragma once

// Network geometry, large-scale fading, MIMO channels and the
// user-centric O-RU association of a cell-free deployment.

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace cfran {

using CMatrix = Eigen::MatrixXcd;

/// 0/1 per O-RU; index l is O-RU l.
using ActivationVector = std::vector<int>;

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

double distance(const Point2& a, const Point2& b);

struct AntennaConfig {
  int n_t = 4;  ///< transmit antennas per O-RU
  int n_r = 2;  ///< receive antennas per user
  int n_s = 2;  ///< data streams per user, <= min(n_t, n_r)

  void validate() const;
};

struct Topology {
  std::vector<Point2> oru_positions;
  std::vector<Point2> user_positions;
  double area_side = 0.0;  ///< meters; square [0, area_side]^2
  AntennaConfig antennas;

  int num_orus() const { return static_cast<int>(oru_positions.size()); }
  int num_users() const { return static_cast<int>(user_positions.size()); }

  /// Throws InvalidArgument naming the first broken invariant.
  void validate() const;
};

/// Uniform i.i.d. placement in the square; deterministic per seed.
Topology generate_topology(std::uint64_t seed, int num_orus, int num_users, double area_side,
                           AntennaConfig antennas = {});

/// Log-distance path loss PL(d) = pl0 + 10 n log10(max(d, d_min) / d0) [dB],
/// optionally with log-normal shadowing.
struct PathLossParams {
  double pl0_db = 30.0;
  double d0_m = 1.0;
  double exponent = 3.8;
  double d_min_m = 1.0;
  bool shadowing = false;
  double shadowing_std_db = 8.0;
  std::uint64_t shadowing_seed = 0;

  void validate() const;
};

double path_loss_db(double distance_m, const PathLossParams& params);

struct LargeScaleFading {
  Eigen::MatrixXd beta;  ///< K x L linear path gains

  int num_users() const { return static_cast<int>(beta.rows()); }
  int num_orus() const { return static_cast<int>(beta.cols()); }
  void validate() const;
};

LargeScaleFading compute_large_scale_fading(const Topology& topology, const PathLossParams& params);

struct NoiseParams {
  double density_dbm_per_hz = -174.0;
  double noise_figure_db = 9.0;
  double bandwidth_hz = 20e6;

  double variance_watts() const;
};

double dbm_to_watts(double dbm);

struct ChannelSet {
  int num_users = 0;
  int num_orus = 0;
  AntennaConfig antennas;
  std::vector<CMatrix> H;  ///< row-major over (k, l); each n_r x n_t
  double noise_variance = 0.0;
  double bandwidth_hz = 20e6;

  const CMatrix& h(int k, int l) const { return H[static_cast<std::size_t>(k * num_orus + l)]; }
  CMatrix& h(int k, int l) { return H[static_cast<std::size_t>(k * num_orus + l)]; }

  /// bit/s/Hz -> Mbps
  double to_mbps(double bits_per_hz) const { return bits_per_hz * bandwidth_hz * 1e-6; }
  double to_bits_per_hz(double mbps) const { return mbps * 1e6 / bandwidth_hz; }
};

/// H_{k,l} = sqrt(beta_{k,l}) G with G i.i.d. CN(0, 1); deterministic per seed.
ChannelSet draw_channels(const LargeScaleFading& fading, const AntennaConfig& antennas,
                         const NoiseParams& noise, std::uint64_t seed);

struct Association {
  std::vector<std::vector<int>> serving;  ///< per user: serving O-RUs, strongest first
  std::vector<std::vector<int>> served;   ///< per O-RU: users in ascending order
  int l_max = 1;

  int num_users() const { return static_cast<int>(serving.size()); }
  int num_orus() const { return static_cast<int>(served.size()); }
  bool serves(int k, int l) const;
};

/// Each user is served by up to l_max active O-RUs with the largest beta;
/// ties go to the lower O-RU index.
Association associate_users(const LargeScaleFading& fading, const ActivationVector& z, int l_max);

int count_active(const ActivationVector& z);

}  // namespace cfran
