#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "cfran/activation_env.hpp"
#include "cfran/error.hpp"
#include "cfran/mappo.hpp"
#include "mappo_oracles.hpp"
#include "toy_env.hpp"

using namespace cfran;

namespace {

LargeScaleFading two_by_two() {
  LargeScaleFading f;
  f.beta.resize(2, 2);
  f.beta << 1e-6, 1e-8, 2e-7, 5e-9;
  return f;
}

}  // namespace

TEST_CASE("observations") {
  const auto f = two_by_two();
  SUBCASE("no violations gives zero pressure terms") {
    const auto o = build_observations(f, {0.0, 0.0}, {3.0, 7.0}, {1, 0});
    REQUIRE(o.size() == 2);
    CHECK(o[0].size() == 5);
    CHECK(o[0][1] == 0.0);
    CHECK(o[0][3] == 0.0);
    CHECK(o[0][4] == 1.0);
    CHECK(o[1][4] == 0.0);
  }
  SUBCASE("hand instance") {
    const auto o = build_observations(f, {0.5, 0.1}, {2.0, 1.0}, {0, 1});
    CHECK(o[1][0] == doctest::Approx(std::log(1e-8)).epsilon(1e-14));
    CHECK(o[1][1] == doctest::Approx(std::tanh(1.0)).epsilon(1e-14));
    CHECK(o[1][2] == doctest::Approx(std::log(5e-9)).epsilon(1e-14));
    CHECK(o[1][3] == doctest::Approx(std::tanh(0.1)).epsilon(1e-14));
    CHECK(o[1][4] == 1.0);
  }
  SUBCASE("large pressure saturates below one") {
    const auto o = build_observations(f, {1.0, 0.0}, {50.0, 1.0}, {1, 1});
    CHECK(o[0][1] > 0.999);
    CHECK(o[0][1] <= 1.0);
  }
  SUBCASE("bad inputs") {
    LargeScaleFading bad = f;
    bad.beta(0, 0) = 0.0;
    CHECK_THROWS_AS(build_observations(bad, {0.0, 0.0}, {1.0, 1.0}, {1, 1}), InvalidArgument);
    CHECK_THROWS_AS(build_observations(f, {-0.1, 0.0}, {1.0, 1.0}, {1, 1}), InvalidArgument);
    CHECK_THROWS_AS(build_observations(f, {0.0}, {1.0, 1.0}, {1, 1}), InvalidArgument);
  }
  const auto j = joint_observation(build_observations(f, {0.0, 0.0}, {1.0, 1.0}, {1, 0}));
  CHECK(j.size() == 10);
  CHECK(j[9] == 0.0);
}

TEST_CASE("normalized violations") {
  const auto v = normalized_violations({5.0, 12.0, 3.0}, {10.0, 10.0, 0.0});
  CHECK(v[0] == doctest::Approx(0.5));
  CHECK(v[1] == 0.0);
  CHECK(v[2] == 0.0);
}

TEST_CASE("reward") {
  CHECK(compute_reward({0, 0}, {0, 0}, {0.0}, {1.0}) == 0.0);
  CHECK(compute_reward({1, 0}, {0, 0}, {0.0}, {1.0}) == doctest::Approx(-1.0));
  CHECK(compute_reward({1, 1, 1}, {1, 1, 1}, {0.0, 0.0}, {4.0, 4.0}) == doctest::Approx(-1.0));
  CHECK(compute_reward({0, 1}, {1, 1}, {0.5, 0.0}, {2.0, 9.0}) == doctest::Approx(-0.5 - 0.5 - 0.5));

  // bounds with v in [0, 1] and lambda <= lambda_max
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double lambda_max = 100.0;
  for (int i = 0; i < 500; ++i) {
    ActivationVector z(6), zp(6);
    for (int l = 0; l < 6; ++l) {
      z[l] = static_cast<int>(rng() % 2);
      zp[l] = static_cast<int>(rng() % 2);
    }
    std::vector<double> v(4), lam(4);
    for (int k = 0; k < 4; ++k) {
      v[k] = u(rng);
      lam[k] = lambda_max * u(rng);
    }
    const double r = compute_reward(z, zp, v, lam);
    CHECK(r <= 0.0);
    CHECK(r >= -(2.0 + lambda_max));
  }
}

TEST_CASE("advantages") {
  SUBCASE("single step") {
    const auto a = compute_advantages({-0.7}, {0.3, -1.1}, 0.9);
    CHECK(a.advantages[0] == doctest::Approx(-0.7 + 0.9 * -1.1 - 0.3).epsilon(1e-15));
    CHECK(a.returns[0] == doctest::Approx(-0.7));
  }
  SUBCASE("zero critic gives the return") {
    const std::vector<double> r{-1.0, -0.5, -0.2, -0.9};
    const auto a = compute_advantages(r, std::vector<double>(5, 0.0), 0.9);
    for (int t = 0; t < 4; ++t) CHECK(a.advantages[t] == doctest::Approx(a.returns[t]).epsilon(1e-15));
  }
  SUBCASE("matches the double sum") {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> n(0.0, 1.0);
    for (double gamma : {0.0, 0.5, 0.9})
      for (int T = 1; T <= 10; ++T)
        for (int rep = 0; rep < 5; ++rep) {
          std::vector<double> r(T), v(T + 1);
          for (auto& x : r) x = n(rng);
          for (auto& x : v) x = n(rng);
          const auto got = compute_advantages(r, v, gamma);
          const auto want = cfran::testing::brute_force_advantages(r, v, gamma);
          for (int t = 0; t < T; ++t) {
            CHECK(std::abs(got.advantages[t] - want.advantages[t]) <= 1e-12 * std::max(1.0, std::abs(want.advantages[t])));
            CHECK(std::abs(got.returns[t] - want.returns[t]) <= 1e-12 * std::max(1.0, std::abs(want.returns[t])));
          }
        }
  }
  CHECK_THROWS_AS(compute_advantages({1.0, 2.0}, {0.0, 0.0}, 0.9), InvalidArgument);

  const auto s = standardize({1.0, 2.0, 3.0, 6.0});
  double mean = 0.0, var = 0.0;
  for (double x : s) mean += x / 4.0;
  for (double x : s) var += (x - mean) * (x - mean) / 4.0;
  CHECK(std::abs(mean) < 1e-12);
  CHECK(var == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(standardize({4.2})[0] == 0.0);
}

TEST_CASE("PPO losses") {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n(0.0, 1.0);
  Mlp policy({5, 8, 8, 2}, 1);
  Mlp critic({10, 6, 6, 1}, 2);

  std::vector<PolicySample> batch;
  std::vector<VectorXd> joint;
  std::vector<double> returns;
  for (int i = 0; i < 16; ++i) {
    VectorXd x(5);
    for (int j = 0; j < 5; ++j) x[j] = n(rng);
    const int a = static_cast<int>(rng() % 2);
    batch.push_back({x, a, log_softmax(policy.forward(x))[a], n(rng)});
    VectorXd jo(10);
    for (int j = 0; j < 10; ++j) jo[j] = n(rng);
    joint.push_back(jo);
    returns.push_back(n(rng));
  }

  SUBCASE("unit ratio gives the mean advantage") {
    double mean_a = 0.0;
    for (const auto& s : batch) mean_a += s.advantage / 16.0;
    CHECK(policy_losses(policy, batch, 0.2).clip == doctest::Approx(mean_a).epsilon(1e-12));
  }
  SUBCASE("uniform policy has entropy ln 2") {
    Mlp flat = policy;
    flat.params().setZero();
    CHECK(policy_losses(flat, batch, 0.2).entropy == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  }
  SUBCASE("perfect critic has zero value loss") {
    Mlp zero = critic;
    zero.params().setZero();
    const auto v = value_loss(zero, joint, std::vector<double>(16, 0.0));
    CHECK(v.value == 0.0);
    CHECK(v.grad.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("combined loss") {
    MappoHyper h;
    const auto l = ppo_losses(policy, batch, critic, joint, returns, h);
    CHECK(l.total == doctest::Approx(-l.clip - h.c1 * l.entropy + h.c2 * l.value).epsilon(1e-14));
  }
  SUBCASE("per-sample clipping matches the min-of-two formula") {
    Mlp moved = policy;
    for (Eigen::Index i = 0; i < moved.params().size(); ++i) moved.params()[i] += 0.3 * n(rng);
    double brute = 0.0, ent_min = 1e9, ent_max = -1e9;
    for (const auto& s : batch) {
      const VectorXd lp = log_softmax(moved.forward(s.observation));
      const double rho = std::exp(lp[s.action] - s.old_log_prob);
      const double lo = std::min(rho * s.advantage, (1.0 - 0.2) * s.advantage);
      const double hi = std::min(rho * s.advantage, (1.0 + 0.2) * s.advantage);
      const double term = rho < 0.8 ? lo : (rho > 1.2 ? hi : rho * s.advantage);
      brute += term / 16.0;
      const double h = -(lp.array().exp() * lp.array()).sum();
      ent_min = std::min(ent_min, h);
      ent_max = std::max(ent_max, h);
    }
    CHECK(policy_losses(moved, batch, 0.2).clip == doctest::Approx(brute).epsilon(1e-13));
    CHECK(ent_min >= 0.0);
    CHECK(ent_max <= std::log(2.0) + 1e-15);
  }
}

TEST_CASE("PPO gradients match central differences") {
  int clipped = 0;
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    const auto e = cfran::testing::check_ppo_gradients(seed);
    CHECK(e.clip < 1e-4);
    CHECK(e.entropy < 1e-4);
    CHECK(e.value < 1e-4);
    clipped += e.clipped_samples;
  }
  CHECK(clipped > 0);  // the clipped branch was exercised
}

TEST_CASE("inference") {
  Mlp p({3, 2}, 1, Activation::Identity);
  p.params().setZero();
  p.bias(0) << 2.0, -1.0;
  const VectorXd x = VectorXd::Zero(3);
  CHECK(argmax_action(p.forward(x)) == 0);
  p.bias(0) << 0.5, 0.5;
  CHECK(argmax_action(p.forward(x)) == 0);
  p.bias(0) << -0.5, 0.5;
  CHECK(argmax_action(p.forward(x)) == 1);

  std::vector<Mlp> nets;
  std::vector<VectorXd> obs;
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int l = 0; l < 7; ++l) {
    nets.emplace_back(std::vector<int>{3, 4, 2}, rng());
    VectorXd o(3);
    for (int j = 0; j < 3; ++j) o[j] = n(rng);
    obs.push_back(o);
  }
  const auto z = infer_activations(nets, obs);
  for (int l = 0; l < 7; ++l) CHECK(z[l] == argmax_action(nets[l].forward(obs[l])));
}

TEST_CASE("activation environment") {
  const auto p = cfran::testing::toy_problem();
  ActivationEnv env = cfran::testing::toy_env(p);
  std::mt19937_64 rng(1);
  const auto o = env.reset(rng);
  CHECK(o.size() == 2);
  CHECK(o[0].size() == 5);

  const auto& r10 = env.evaluate({1, 0});
  CHECK(r10[0] >= 100.0 - 1e-2);
  CHECK(r10[1] >= 100.0 - 1e-2);
  for (double r : env.evaluate({0, 0})) CHECK(r == 0.0);
  const std::size_t solves = env.solves();
  env.evaluate({1, 0});
  CHECK(env.solves() == solves);

  const ActivationVector before = env.previous_activation();
  const auto s = env.step({0, 0});
  const std::vector<double> v{1.0, 1.0};
  CHECK(s.reward == doctest::Approx(compute_reward({0, 0}, before, v, env.lambda())));
  CHECK(s.active == 0);
  CHECK(s.violation_sum == doctest::Approx(2.0));
  CHECK(s.observations[0][1] == doctest::Approx(std::tanh(5.0)));
}

TEST_CASE("training") {
  const auto p = cfran::testing::toy_problem();
  SUBCASE("zero learning rates leave parameters unchanged") {
    MappoHyper h;
    h.lr_policy = 0.0;
    h.lr_critic = 0.0;
    MappoController ctl(2, 2, p.fading, h, 3);
    const VectorXd p0 = ctl.policies()[0].params();
    const VectorXd c0 = ctl.critic().params();
    ActivationEnv env = cfran::testing::toy_env(p);
    std::mt19937_64 rng(3);
    for (int i = 0; i < 3; ++i) CHECK_FALSE(ctl.train_iteration(env, rng).aborted);
    CHECK(ctl.policies()[0].params() == p0);
    CHECK(ctl.critic().params() == c0);
  }
  SUBCASE("toy problem is learned") {
    MappoHyper h;
    h.lr_policy = 3e-4;
    h.lr_critic = 3e-4;
    for (std::uint64_t seed : {1, 2, 3}) {
      const auto r = cfran::testing::run_smoke(seed, 500, h);
      INFO("seed " << seed << " z = " << r.z[0] << r.z[1]);
      CHECK(r.satisfied);
      CHECK(r.active <= 1);
    }
  }
}

TEST_CASE("checkpoint round trip") {
  const auto p = cfran::testing::toy_problem();
  MappoController ctl(2, 2, p.fading, MappoHyper{}, 5);
  ActivationEnv env = cfran::testing::toy_env(p);
  std::mt19937_64 rng(5);
  ctl.train_iteration(env, rng);

  std::stringstream buf;
  ctl.write(buf);
  const MappoController back = MappoController::read(buf);
  CHECK(back.num_users() == 2);
  CHECK(back.num_orus() == 2);
  CHECK(back.critic().params() == ctl.critic().params());
  for (int l = 0; l < 2; ++l) CHECK(back.policies()[l].params() == ctl.policies()[l].params());

  const auto obs = build_observations(p.fading, {0.3, 0.0}, {1.0, 1.0}, {1, 0});
  CHECK(back.infer(obs) == ctl.infer(obs));
  CHECK(back.value(obs) == ctl.value(obs));

  std::stringstream junk("not a checkpoint at all");
  CHECK_THROWS_AS(MappoController::read(junk), FormatError);
  const std::string bytes = buf.str();
  std::stringstream cut(bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(MappoController::read(cut), FormatError);
}
