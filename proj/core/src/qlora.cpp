#include "cfran/qlora.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "cfran/error.hpp"

namespace cfran {

const std::array<double, 16>& nf4_codebook() {
  static const std::array<double, 16> levels{
      -1.0,
      -0.6961928009986877,
      -0.5250730514526367,
      -0.39491748809814453,
      -0.28444138169288635,
      -0.18477343022823334,
      -0.09105003625154495,
      0.0,
      0.07958029955625534,
      0.16093020141124725,
      0.24611230194568634,
      0.33791524171829224,
      0.44070982933044434,
      0.5626170039176941,
      0.7229568362236023,
      1.0,
  };
  return levels;
}

double nf4_max_gap() {
  const auto& c = nf4_codebook();
  double g = 0.0;
  for (std::size_t i = 1; i < c.size(); ++i) g = std::max(g, c[i] - c[i - 1]);
  return g;
}

std::uint8_t nf4_nearest(double v) {
  static const auto mids = [] {
    const auto& c = nf4_codebook();
    std::array<double, 15> m{};
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = 0.5 * (c[i] + c[i + 1]);
    return m;
  }();
  // values on a midpoint stay with the lower level
  return static_cast<std::uint8_t>(std::lower_bound(mids.begin(), mids.end(), v) - mids.begin());
}

void QuantizedMatrix::validate() const {
  require(rows >= 0 && cols >= 0 && block_size >= 1, "invalid quantized matrix shape");
  const std::size_t n = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
  require(codes.size() == n, "code count does not match the shape");
  require(scales.size() == (n + block_size - 1) / static_cast<std::size_t>(block_size), "wrong number of block scales");
  for (auto c : codes) require(c < 16, "NF4 code out of range");
  for (double s : scales) require(std::isfinite(s) && s > 0.0, "block scales must be positive");
}

QuantizedMatrix nf4_quantize(const Eigen::MatrixXd& weights, int block_size) {
  require(block_size >= 1, "block size must be >= 1");
  require(weights.allFinite(), "weights must be finite");
  QuantizedMatrix q;
  q.rows = static_cast<int>(weights.rows());
  q.cols = static_cast<int>(weights.cols());
  q.block_size = block_size;
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> w = weights;
  const std::size_t n = static_cast<std::size_t>(w.size());
  q.codes.resize(n);
  for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(block_size)) {
    const std::size_t end = std::min(n, start + static_cast<std::size_t>(block_size));
    double scale = 0.0;
    for (std::size_t i = start; i < end; ++i) scale = std::max(scale, std::abs(w.data()[i]));
    if (scale == 0.0) scale = 1.0;
    q.scales.push_back(scale);
    for (std::size_t i = start; i < end; ++i) q.codes[i] = nf4_nearest(w.data()[i] / scale);
  }
  return q;
}

Eigen::MatrixXd nf4_dequantize(const QuantizedMatrix& q) {
  q.validate();
  const auto& c = nf4_codebook();
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> w(q.rows, q.cols);
  for (std::size_t i = 0; i < q.codes.size(); ++i)
    w.data()[i] = c[q.codes[i]] * q.scales[i / static_cast<std::size_t>(q.block_size)];
  return w;
}

void Adapter::validate() const {
  require(A.cols() == B.rows(), "adapter A and B disagree on the rank");
  require(A.cols() >= 1, "adapter rank must be >= 1");
  require(4 * A.cols() <= std::min(A.rows(), B.cols()), "adapter rank must be at most min(d_in, d_out) / 4");
  require(A.allFinite() && B.allFinite() && std::isfinite(eta), "adapter entries must be finite");
}

Eigen::VectorXd adapter_forward(const QuantizedMatrix& q, const Adapter& adapter, const Eigen::VectorXd& x) {
  adapter.validate();
  require(adapter.A.rows() == q.rows && adapter.B.cols() == q.cols, "adapter shape does not match the backbone");
  require(x.size() == q.cols, "input length does not match the backbone");
  const Eigen::VectorXd bx = adapter.B * x;
  return nf4_dequantize(q) * x + (adapter.eta / adapter.rank()) * (adapter.A * bx);
}

// ---------------------------------------------------------------------------

double ModelManifest::listed_params() const {
  double n = 0.0;
  for (const auto& m : per_layer) n += static_cast<double>(m.params());
  n *= num_layers;
  for (const auto& m : other) n += static_cast<double>(m.params());
  return n;
}

double ModelManifest::adapter_params() const {
  double n = 0.0;
  for (const auto& t : adapter_targets) {
    const auto it = std::find_if(per_layer.begin(), per_layer.end(), [&](const MatrixShape& m) { return m.name == t; });
    require(it != per_layer.end(), "adapter target " + t + " is not a layer matrix");
    n += static_cast<double>(adapter_rank) * static_cast<double>(it->d_out + it->d_in);
  }
  return n * num_layers;
}

void ModelManifest::validate() const {
  require(!name.empty(), "model name is empty");
  require(effective_params > 0.0, name + ": effective_params must be positive");
  require(num_layers >= 1, name + ": num_layers must be >= 1");
  require(adapter_rank >= 1, name + ": adapter_rank must be >= 1");
  for (const auto& m : per_layer) require(m.d_out > 0 && m.d_in > 0, name + ": matrix " + m.name + " has no size");
  for (const auto& m : other) require(m.d_out > 0 && m.d_in > 0, name + ": matrix " + m.name + " has no size");
  adapter_params();
}

namespace {

MatrixShape shape_from_json(const nlohmann::json& j, const std::string& model) {
  MatrixShape s;
  try {
    s.name = j.at("name").get<std::string>();
    s.d_out = j.at("d_out").get<long long>();
    s.d_in = j.at("d_in").get<long long>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(model + ": bad matrix entry: " + e.what());
  }
  return s;
}

}  // namespace

std::vector<ModelManifest> manifests_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.value("schema", "") != "cfran.layer_manifest.v1")
    throw FormatError("layer manifest: expected schema cfran.layer_manifest.v1");
  if (!j.contains("models") || !j["models"].is_array()) throw FormatError("layer manifest: missing models array");
  std::vector<ModelManifest> out;
  for (const auto& jm : j["models"]) {
    ModelManifest m;
    try {
      m.name = jm.at("name").get<std::string>();
      m.effective_params = jm.at("effective_params").get<double>();
      m.num_layers = jm.at("num_layers").get<int>();
      m.adapter_rank = jm.at("adapter_rank").get<int>();
      m.adapter_targets = jm.at("adapter_targets").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("layer manifest: " + std::string(e.what()));
    }
    for (const auto& s : jm.value("per_layer", nlohmann::json::array())) m.per_layer.push_back(shape_from_json(s, m.name));
    for (const auto& s : jm.value("other", nlohmann::json::array())) m.other.push_back(shape_from_json(s, m.name));
    try {
      m.validate();
    } catch (const InvalidArgument& e) {
      throw FormatError(std::string("layer manifest: ") + e.what());
    }
    out.push_back(std::move(m));
  }
  return out;
}

std::vector<ModelManifest> load_manifests(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open layer manifest " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  return manifests_from_json(j);
}

std::string default_manifest_path() { return std::string(CFRAN_DATA_DIR) + "/layer_manifest.json"; }

double bytes_per_param(WeightPrecision p, const AccountingOptions& opt) {
  if (p == WeightPrecision::FP16) return 2.0;
  double b = 0.5;
  if (opt.include_block_scales) b += opt.scale_bytes / opt.block_size;
  return b;
}

double memory_bytes(const ModelManifest& m, const Deployment& d, const AccountingOptions& opt) {
  require(d.agents >= 1, "deployment needs at least one agent");
  const double backbone = m.effective_params * bytes_per_param(d.precision, opt);
  if (!d.shared) return d.agents * backbone;
  return backbone + d.agents * m.adapter_params() * opt.adapter_bytes;
}

std::vector<AccountingRow> accounting_table(const std::vector<ModelManifest>& models, int agents,
                                            const AccountingOptions& opt) {
  std::vector<AccountingRow> rows;
  for (const auto& m : models) {
    AccountingRow r;
    r.model = m.name;
    const Deployment cells[4] = {{WeightPrecision::FP16, false, agents},
                                 {WeightPrecision::FP16, true, agents},
                                 {WeightPrecision::NF4, false, agents},
                                 {WeightPrecision::NF4, true, agents}};
    for (int i = 0; i < 4; ++i) r.gb[i] = memory_bytes(m, cells[i], opt) / 1e9;
    r.reduction_pct = 100.0 * (1.0 - r.gb[3] / r.gb[0]);
    rows.push_back(r);
  }
  return rows;
}

std::string format_accounting(const std::vector<AccountingRow>& rows) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-14s %12s %16s %12s %16s %10s\n", "model", "FP16 x n", "FP16 + adapters",
                "4-bit x n", "4-bit + adapters", "reduction");
  std::string s = buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-14s %9.1f GB %13.1f GB %9.1f GB %13.1f GB %9.1f%%\n", r.model.c_str(), r.gb[0],
                  r.gb[1], r.gb[2], r.gb[3], r.reduction_pct);
    s += buf;
  }
  return s;
}

nlohmann::json accounting_to_json(const std::vector<AccountingRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows)
    out.push_back({{"model", r.model},
                   {"fp16_separate_gb", r.gb[0]},
                   {"fp16_shared_gb", r.gb[1]},
                   {"nf4_separate_gb", r.gb[2]},
                   {"nf4_shared_gb", r.gb[3]},
                   {"reduction_pct", r.reduction_pct}});
  return out;
}

}  // namespace cfran
