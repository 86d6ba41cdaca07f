#pragma once

// Retrieval memory for converged coefficients. Environment features
// (large-scale fading and minimum rates) are embedded by a linear
// autoencoder, stored with the converged [alpha, lambda], and looked up by
// cosine similarity.

#include <cstdint>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfran/intent.hpp"
#include "cfran/net_model.hpp"
#include "cfran/nn.hpp"

namespace cfran {

struct MemoryConfig {
  int d_emb = 32;
  double sim_threshold = 0.95;
  double dedup_tol = 0.999;
  double reference_rate_mbps = 100.0;  ///< R_min is divided by this

  void validate() const;
};

/// Flattened user-major layout: for each user k, [log10 beta_{k,0..L-1}, R_min_k].
/// No scaling beyond the log.
VectorXd raw_features(const LargeScaleFading& fading, const std::vector<double>& r_min_mbps);

double cosine_similarity(const VectorXd& a, const VectorXd& b);

class Autoencoder {
 public:
  Autoencoder() = default;
  /// Untrained model with Glorot weights and identity standardization.
  Autoencoder(int num_users, int num_orus, int d_emb, double reference_rate_mbps, std::uint64_t seed);

  int num_users() const { return num_users_; }
  int num_orus() const { return num_orus_; }
  int input_size() const { return num_users_ * (num_orus_ + 1); }
  int d_emb() const { return d_emb_; }
  double reference_rate_mbps() const { return reference_rate_; }

  /// Standardizes the log-fading entries and scales the rate entries.
  VectorXd preprocess(const VectorXd& raw) const;
  VectorXd embed(const VectorXd& raw) const;
  VectorXd embed(const LargeScaleFading& fading, const std::vector<double>& r_min_mbps) const;
  VectorXd reconstruct(const VectorXd& raw) const;  ///< in preprocessed coordinates

  /// Fits the per-feature statistics of the log-fading entries.
  void fit_scaler(const std::vector<VectorXd>& raw_corpus);
  /// Mean squared reconstruction error per element on preprocessed inputs.
  double reconstruction_error(const std::vector<VectorXd>& raw_corpus) const;

  Mlp& network() { return net_; }
  const Mlp& network() const { return net_; }
  VectorXd& feature_mean() { return mean_; }
  VectorXd& feature_scale() { return scale_; }

  nlohmann::json to_json() const;
  static Autoencoder from_json(const nlohmann::json& j);

 private:
  int num_users_ = 0;
  int num_orus_ = 0;
  int d_emb_ = 0;
  double reference_rate_ = 100.0;
  Mlp net_;        ///< [input, d_emb, input], linear
  VectorXd mean_;  ///< per input feature; rate entries stay 0
  VectorXd scale_; ///< per input feature; rate entries hold the reference rate
};

struct AutoencoderTraining {
  Autoencoder model;
  std::vector<double> loss_history;  ///< per epoch, before the update; last entry is after training
  double final_error = 0.0;
};

/// Full-batch gradient descent on the mean squared reconstruction error
/// with a fixed step.
AutoencoderTraining train_autoencoder(const std::vector<VectorXd>& raw_corpus, int num_users, int num_orus,
                                      int d_emb, int epochs, double step = 1.0, std::uint64_t seed = 1,
                                      double reference_rate_mbps = 100.0);

struct Experience {
  VectorXd key;
  std::vector<double> alpha;
  std::vector<double> lambda;
  IntentKind kind = IntentKind::UtilityMaximization;
  int loops_to_converge = 0;
  std::uint64_t stamp = 0;  ///< insertion order, assigned by the store
};

struct RetrievalHit {
  Experience experience;
  double similarity = 0.0;
  std::size_t index = 0;
};

class MemoryStore {
 public:
  explicit MemoryStore(MemoryConfig config = {});
  MemoryStore(const MemoryStore& other);
  MemoryStore& operator=(const MemoryStore& other);

  const MemoryConfig& config() const { return config_; }

  /// Appends, or overwrites the value of an entry of the same kind whose key
  /// has cosine similarity above dedup_tol. Returns the entry index.
  std::size_t store(Experience experience);

  /// Best entry at or above sim_threshold; ties go to the most recent.
  /// With `kind`, only entries of that intent kind are considered.
  std::optional<RetrievalHit> retrieve(const VectorXd& query, std::optional<IntentKind> kind = std::nullopt) const;

  std::size_t size() const;
  std::vector<Experience> entries() const;
  void clear();

  nlohmann::json to_json() const;
  static MemoryStore from_json(const nlohmann::json& j);

 private:
  MemoryConfig config_;
  mutable std::shared_mutex mutex_;
  std::vector<Experience> entries_;
  std::uint64_t next_stamp_ = 1;
};

/// Store plus its autoencoder in one versioned JSON file.
void save_memory(const std::string& path, const MemoryStore& store, const Autoencoder& encoder);
std::pair<MemoryStore, Autoencoder> load_memory(const std::string& path);

}  // namespace cfran
