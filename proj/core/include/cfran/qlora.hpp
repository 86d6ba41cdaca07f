#pragma once

// 4-bit NormalFloat block quantization, the quantized-backbone-plus-adapter
// forward pass, and memory accounting for separate vs shared deployments of
// the agent models.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace cfran {

/// The 16 NF4 levels, ascending, including -1, 0 and 1.
const std::array<double, 16>& nf4_codebook();
constexpr std::uint8_t kNf4ZeroCode = 7;

/// Largest distance between neighbouring NF4 levels.
double nf4_max_gap();

/// Index of the level nearest to v (v in [-1, 1]); ties go to the lower level.
std::uint8_t nf4_nearest(double v);

struct QuantizedMatrix {
  int rows = 0;
  int cols = 0;
  int block_size = 64;
  std::vector<std::uint8_t> codes;  ///< row-major, one per element
  std::vector<double> scales;       ///< one per block of block_size consecutive codes

  int num_blocks() const { return static_cast<int>(scales.size()); }
  void validate() const;
};

/// Blocks run over the row-major element order; the last one may be short.
/// An all-zero block gets scale 1 and zero codes.
QuantizedMatrix nf4_quantize(const Eigen::MatrixXd& weights, int block_size = 64);
Eigen::MatrixXd nf4_dequantize(const QuantizedMatrix& q);

struct Adapter {
  Eigen::MatrixXd A;  ///< d_out x d_r
  Eigen::MatrixXd B;  ///< d_r x d_in
  double eta = 1.0;

  int rank() const { return static_cast<int>(A.cols()); }
  /// Shapes agree, d_r <= min(d_in, d_out) / 4, entries finite.
  void validate() const;
};

/// y = deq(q) x + (eta / d_r) A (B x). AB is never formed.
Eigen::VectorXd adapter_forward(const QuantizedMatrix& q, const Adapter& adapter, const Eigen::VectorXd& x);

// ---------------------------------------------------------------------------

struct MatrixShape {
  std::string name;
  long long d_out = 0;
  long long d_in = 0;

  long long params() const { return d_out * d_in; }
};

/// One model size: its linear layers per decoder block and where adapters go.
struct ModelManifest {
  std::string name;
  double effective_params = 0.0;  ///< backbone count used for the totals
  int num_layers = 0;
  std::vector<MatrixShape> per_layer;
  std::vector<MatrixShape> other;  ///< embeddings and output head
  std::vector<std::string> adapter_targets;
  int adapter_rank = 0;

  /// Sum of the listed matrices (biases and norms are not listed).
  double listed_params() const;
  /// Parameters of one adapter set: rank (d_out + d_in) per targeted matrix.
  double adapter_params() const;
  void validate() const;
};

/// Reads {"schema": "cfran.layer_manifest.v1", "models": [...]}.
std::vector<ModelManifest> load_manifests(const std::string& path);
std::vector<ModelManifest> manifests_from_json(const nlohmann::json& j);
/// Path of the manifest shipped with the library sources.
std::string default_manifest_path();

enum class WeightPrecision { FP16, NF4 };

struct Deployment {
  WeightPrecision precision = WeightPrecision::FP16;
  bool shared = false;  ///< one backbone plus one adapter set per agent
  int agents = 3;
};

struct AccountingOptions {
  int block_size = 64;
  double scale_bytes = 2.0;
  bool include_block_scales = false;
  double adapter_bytes = 2.0;
};

double bytes_per_param(WeightPrecision p, const AccountingOptions& opt);
double memory_bytes(const ModelManifest& m, const Deployment& d, const AccountingOptions& opt = {});

struct AccountingRow {
  std::string model;
  /// separate FP16, shared FP16 + adapters, separate 4-bit, shared 4-bit + adapters, in GB (1e9 bytes).
  std::array<double, 4> gb{};
  double reduction_pct = 0.0;  ///< shared 4-bit + adapters vs separate FP16
};

std::vector<AccountingRow> accounting_table(const std::vector<ModelManifest>& models, int agents = 3,
                                            const AccountingOptions& opt = {});
/// Fixed-width text table, one row per model.
std::string format_accounting(const std::vector<AccountingRow>& rows);
nlohmann::json accounting_to_json(const std::vector<AccountingRow>& rows);

}  // namespace cfran
