#include "cfran/memory.hpp"

#include <cmath>
#include <fstream>
#include <mutex>

#include "cfran/error.hpp"

namespace cfran {

namespace {

constexpr const char* kMemoryFormat = "cfran.memory.v1";

nlohmann::json vec_json(const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

VectorXd json_vec(const nlohmann::json& j, const char* what) {
  if (!j.is_array()) throw FormatError(std::string(what) + " must be an array");
  VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw FormatError(std::string(what) + " must hold numbers");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

}  // namespace

void MemoryConfig::validate() const {
  require(d_emb >= 1, "d_emb must be >= 1");
  require(sim_threshold >= -1.0 && sim_threshold <= 1.0, "sim_threshold must lie in [-1, 1]");
  require(dedup_tol >= -1.0 && dedup_tol <= 1.0, "dedup_tol must lie in [-1, 1]");
  require(reference_rate_mbps > 0.0, "reference rate must be positive");
}

VectorXd raw_features(const LargeScaleFading& fading, const std::vector<double>& r_min_mbps) {
  const int K = fading.num_users();
  const int L = fading.num_orus();
  require(static_cast<int>(r_min_mbps.size()) == K, "one minimum rate per user is required");
  VectorXd x(K * (L + 1));
  for (int k = 0; k < K; ++k) {
    for (int l = 0; l < L; ++l) {
      const double b = fading.beta(k, l);
      require(b > 0.0 && std::isfinite(b), "large-scale fading must be positive");
      x[k * (L + 1) + l] = std::log10(b);
    }
    x[k * (L + 1) + L] = r_min_mbps[static_cast<std::size_t>(k)];
  }
  return x;
}

double cosine_similarity(const VectorXd& a, const VectorXd& b) {
  require(a.size() == b.size(), "cosine similarity needs equal lengths");
  const double na = a.norm();
  const double nb = b.norm();
  require(na > 0.0 && nb > 0.0, "cosine similarity of a zero vector");
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

// ---------------------------------------------------------------------------

Autoencoder::Autoencoder(int num_users, int num_orus, int d_emb, double reference_rate_mbps, std::uint64_t seed)
    : num_users_(num_users), num_orus_(num_orus), d_emb_(d_emb), reference_rate_(reference_rate_mbps) {
  require(num_users >= 1 && num_orus >= 1, "autoencoder needs K, L >= 1");
  require(d_emb >= 1 && d_emb <= input_size(), "d_emb must lie in [1, input size]");
  require(reference_rate_mbps > 0.0, "reference rate must be positive");
  net_ = Mlp({input_size(), d_emb, input_size()}, seed, Activation::Identity);
  mean_ = VectorXd::Zero(input_size());
  scale_ = VectorXd::Ones(input_size());
  for (int k = 0; k < num_users; ++k) scale_[k * (num_orus + 1) + num_orus] = reference_rate_mbps;
}

VectorXd Autoencoder::preprocess(const VectorXd& raw) const {
  require(raw.size() == input_size(), "feature vector has the wrong length");
  return ((raw - mean_).array() / scale_.array()).matrix();
}

VectorXd Autoencoder::embed(const VectorXd& raw) const {
  const VectorXd x = preprocess(raw);
  return net_.weight(0) * x + net_.bias(0);
}

VectorXd Autoencoder::embed(const LargeScaleFading& fading, const std::vector<double>& r_min_mbps) const {
  require(fading.num_users() == num_users_ && fading.num_orus() == num_orus_, "fading does not match the encoder");
  return embed(raw_features(fading, r_min_mbps));
}

VectorXd Autoencoder::reconstruct(const VectorXd& raw) const { return net_.forward(preprocess(raw)); }

void Autoencoder::fit_scaler(const std::vector<VectorXd>& raw_corpus) {
  require(!raw_corpus.empty(), "cannot fit statistics on an empty corpus");
  const double n = static_cast<double>(raw_corpus.size());
  VectorXd mean = VectorXd::Zero(input_size());
  for (const auto& x : raw_corpus) {
    require(x.size() == input_size(), "corpus vector has the wrong length");
    mean += x / n;
  }
  VectorXd var = VectorXd::Zero(input_size());
  for (const auto& x : raw_corpus) var += (x - mean).cwiseAbs2() / n;
  for (int k = 0; k < num_users_; ++k)
    for (int l = 0; l < num_orus_; ++l) {
      const int i = k * (num_orus_ + 1) + l;
      mean_[i] = mean[i];
      const double sd = std::sqrt(var[i]);
      scale_[i] = sd > 1e-12 ? sd : 1.0;
    }
}

double Autoencoder::reconstruction_error(const std::vector<VectorXd>& raw_corpus) const {
  require(!raw_corpus.empty(), "empty corpus");
  double err = 0.0;
  for (const auto& raw : raw_corpus) {
    const VectorXd x = preprocess(raw);
    err += (net_.forward(x) - x).squaredNorm();
  }
  return err / (static_cast<double>(raw_corpus.size()) * input_size());
}

nlohmann::json Autoencoder::to_json() const {
  return {{"num_users", num_users_}, {"num_orus", num_orus_}, {"d_emb", d_emb_},
          {"reference_rate_mbps", reference_rate_}, {"feature_mean", vec_json(mean_)},
          {"feature_scale", vec_json(scale_)}, {"params", vec_json(net_.params())}};
}

Autoencoder Autoencoder::from_json(const nlohmann::json& j) {
  try {
    Autoencoder a(j.at("num_users").get<int>(), j.at("num_orus").get<int>(), j.at("d_emb").get<int>(),
                  j.at("reference_rate_mbps").get<double>(), 0);
    a.mean_ = json_vec(j.at("feature_mean"), "feature_mean");
    a.scale_ = json_vec(j.at("feature_scale"), "feature_scale");
    const VectorXd p = json_vec(j.at("params"), "params");
    if (a.mean_.size() != a.input_size() || a.scale_.size() != a.input_size() || p.size() != a.net_.num_params())
      throw FormatError("autoencoder arrays do not match its shape");
    a.net_.params() = p;
    return a;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("autoencoder: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("autoencoder: ") + e.what());
  }
}

AutoencoderTraining train_autoencoder(const std::vector<VectorXd>& raw_corpus, int num_users, int num_orus,
                                      int d_emb, int epochs, double step, std::uint64_t seed,
                                      double reference_rate_mbps) {
  const int in = num_users * (num_orus + 1);
  require(d_emb >= 1 && d_emb < in, "d_emb must be smaller than the input dimension");
  require(static_cast<int>(raw_corpus.size()) >= d_emb, "corpus must hold at least d_emb samples");
  require(epochs >= 0 && step > 0.0, "epochs must be >= 0 and the step positive");

  AutoencoderTraining out;
  out.model = Autoencoder(num_users, num_orus, d_emb, reference_rate_mbps, seed);
  out.model.fit_scaler(raw_corpus);
  // start with a small map so the first steps are well inside the stable region
  out.model.network().params() *= 0.1;

  std::vector<VectorXd> xs;
  xs.reserve(raw_corpus.size());
  for (const auto& r : raw_corpus) xs.push_back(out.model.preprocess(r));
  const double norm = 1.0 / (static_cast<double>(xs.size()) * in);

  Mlp& net = out.model.network();
  Mlp::Tape tape;
  for (int e = 0; e <= epochs; ++e) {
    VectorXd grad = VectorXd::Zero(net.num_params());
    double loss = 0.0;
    for (const auto& x : xs) {
      const VectorXd diff = net.forward(x, tape) - x;
      loss += diff.squaredNorm() * norm;
      if (e < epochs) net.backward(tape, 2.0 * norm * diff, grad);
    }
    out.loss_history.push_back(loss);
    if (e < epochs) net.params() -= step * grad;
  }
  out.final_error = out.loss_history.back();
  return out;
}

// ---------------------------------------------------------------------------

MemoryStore::MemoryStore(MemoryConfig config) : config_(config) { config_.validate(); }

MemoryStore::MemoryStore(const MemoryStore& other) {
  std::shared_lock lock(other.mutex_);
  config_ = other.config_;
  entries_ = other.entries_;
  next_stamp_ = other.next_stamp_;
}

MemoryStore& MemoryStore::operator=(const MemoryStore& other) {
  if (this == &other) return *this;
  std::unique_lock mine(mutex_, std::defer_lock);
  std::shared_lock theirs(other.mutex_, std::defer_lock);
  std::lock(mine, theirs);
  config_ = other.config_;
  entries_ = other.entries_;
  next_stamp_ = other.next_stamp_;
  return *this;
}

std::size_t MemoryStore::store(Experience experience) {
  require(experience.key.size() > 0 && experience.key.norm() > 0.0, "experience key must be non-zero");
  require(experience.key.allFinite(), "experience key must be finite");
  for (double a : experience.alpha) require(std::isfinite(a), "experience alpha must be finite");
  for (double l : experience.lambda) require(std::isfinite(l), "experience lambda must be finite");

  std::unique_lock lock(mutex_);
  experience.stamp = next_stamp_++;
  std::optional<std::size_t> dup;
  double best = -2.0;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].kind != experience.kind || entries_[i].key.size() != experience.key.size()) continue;
    const double s = cosine_similarity(entries_[i].key, experience.key);
    if (s > config_.dedup_tol && s >= best) {
      best = s;
      dup = i;
    }
  }
  if (dup) {
    entries_[*dup] = std::move(experience);
    return *dup;
  }
  entries_.push_back(std::move(experience));
  return entries_.size() - 1;
}

std::optional<RetrievalHit> MemoryStore::retrieve(const VectorXd& query, std::optional<IntentKind> kind) const {
  require(query.size() > 0 && query.norm() > 0.0, "query must be non-zero");
  std::shared_lock lock(mutex_);
  std::optional<RetrievalHit> hit;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& e = entries_[i];
    if (kind && e.kind != *kind) continue;
    if (e.key.size() != query.size()) continue;
    const double s = cosine_similarity(e.key, query);
    if (s < config_.sim_threshold) continue;
    // later entries win ties
    if (!hit || s >= hit->similarity) hit = RetrievalHit{e, s, i};
  }
  return hit;
}

std::size_t MemoryStore::size() const {
  std::shared_lock lock(mutex_);
  return entries_.size();
}

std::vector<Experience> MemoryStore::entries() const {
  std::shared_lock lock(mutex_);
  return entries_;
}

void MemoryStore::clear() {
  std::unique_lock lock(mutex_);
  entries_.clear();
}

nlohmann::json MemoryStore::to_json() const {
  std::shared_lock lock(mutex_);
  nlohmann::json records = nlohmann::json::array();
  for (const auto& e : entries_)
    records.push_back({{"key", vec_json(e.key)},
                       {"alpha", e.alpha},
                       {"lambda", e.lambda},
                       {"kind", std::string(to_string(e.kind))},
                       {"loops_to_converge", e.loops_to_converge},
                       {"stamp", e.stamp}});
  return {{"d_emb", config_.d_emb},
          {"sim_threshold", config_.sim_threshold},
          {"dedup_tol", config_.dedup_tol},
          {"reference_rate_mbps", config_.reference_rate_mbps},
          {"next_stamp", next_stamp_},
          {"records", records}};
}

MemoryStore MemoryStore::from_json(const nlohmann::json& j) {
  try {
    MemoryConfig c;
    c.d_emb = j.at("d_emb").get<int>();
    c.sim_threshold = j.at("sim_threshold").get<double>();
    c.dedup_tol = j.at("dedup_tol").get<double>();
    c.reference_rate_mbps = j.at("reference_rate_mbps").get<double>();
    MemoryStore s(c);
    for (const auto& r : j.at("records")) {
      Experience e;
      e.key = json_vec(r.at("key"), "key");
      if (e.key.size() != c.d_emb) throw FormatError("record key length differs from d_emb");
      e.alpha = r.at("alpha").get<std::vector<double>>();
      e.lambda = r.at("lambda").get<std::vector<double>>();
      const auto kind = r.at("kind").get<std::string>();
      if (kind == "energy_saving") {
        e.kind = IntentKind::EnergySaving;
      } else if (kind == "utility_maximization") {
        e.kind = IntentKind::UtilityMaximization;
      } else {
        throw FormatError("record has unknown kind '" + kind + "'");
      }
      e.loops_to_converge = r.at("loops_to_converge").get<int>();
      e.stamp = r.at("stamp").get<std::uint64_t>();
      s.entries_.push_back(std::move(e));
    }
    s.next_stamp_ = j.at("next_stamp").get<std::uint64_t>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("memory store: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("memory store: ") + e.what());
  }
}

void save_memory(const std::string& path, const MemoryStore& store, const Autoencoder& encoder) {
  const nlohmann::json j{{"format", kMemoryFormat},
                         {"num_users", encoder.num_users()},
                         {"num_orus", encoder.num_orus()},
                         {"store", store.to_json()},
                         {"autoencoder", encoder.to_json()}};
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  out << j.dump(1) << '\n';
}

std::pair<MemoryStore, Autoencoder> load_memory(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open memory file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("memory file " + path + ": " + e.what());
  }
  if (!j.is_object() || j.value("format", "") != kMemoryFormat)
    throw FormatError("memory file " + path + " is not " + std::string(kMemoryFormat));
  auto enc = Autoencoder::from_json(j.at("autoencoder"));
  auto store = MemoryStore::from_json(j.at("store"));
  if (store.config().d_emb != enc.d_emb()) throw FormatError("memory store and autoencoder disagree on d_emb");
  return {std::move(store), std::move(enc)};
}

}  // namespace cfran
