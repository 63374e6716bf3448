#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "gridlens/maddpg.h"
#include "gridlens/training.h"

using namespace gridlens;

namespace {

Eigen::MatrixXd random_matrix(int rows, int cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) m(r, c) = lo + (hi - lo) * rng.uniform();
  }
  return m;
}

std::vector<double> flatten(const MlpGrad& g) {
  std::vector<double> out;
  for (std::size_t k = 0; k < g.w.size(); ++k) {
    for (Eigen::Index i = 0; i < g.w[k].size(); ++i) out.push_back(g.w[k].data()[i]);
    for (Eigen::Index i = 0; i < g.b[k].size(); ++i) out.push_back(g.b[k].data()[i]);
  }
  return out;
}

// Largest |analytic - numeric| / max(1, |analytic|, |numeric|) over all parameters.
template <typename LossFn>
double gradient_error(Mlp& net, const std::vector<double>& analytic, LossFn loss) {
  const std::vector<double> theta = net.flatten();
  REQUIRE(theta.size() == analytic.size());
  const double h = 1e-6;
  double worst = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    std::vector<double> p = theta;
    p[i] = theta[i] + h;
    net.unflatten(p);
    const double up = loss();
    p[i] = theta[i] - h;
    net.unflatten(p);
    const double down = loss();
    const double numeric = (up - down) / (2.0 * h);
    const double scale = std::max({1.0, std::abs(numeric), std::abs(analytic[i])});
    worst = std::max(worst, std::abs(numeric - analytic[i]) / scale);
  }
  net.unflatten(theta);
  return worst;
}

Transition constant_transition(std::size_t agents, double reward) {
  Transition t;
  for (std::size_t a = 0; a < agents; ++a) {
    for (int k = 0; k < LocalObservation::kDim; ++k) {
      t.obs.push_back(k < 4 ? 3.0 : 0.0);
      t.next_obs.push_back(k < 4 ? 2.0 : 1.0);
    }
    t.actions.insert(t.actions.end(), {1.0, 0.0});
    t.rewards.push_back(reward);
  }
  return t;
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.hidden = {8};
  cfg.batch_size = 4;
  cfg.buffer_capacity = 64;
  return cfg;
}

}  // namespace

TEST_CASE("rng is reproducible and uniform draws stay inside (0, 1)") {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 1000; ++i) {
    const double u = a.uniform();
    CHECK(u == b.uniform());
    CHECK(u > 0.0);
    CHECK(u < 1.0);
    differs = differs || u != c.uniform();
  }
  CHECK(differs);
  Rng r(7);
  for (int i = 0; i < 1000; ++i) CHECK(r.index(5) < 5u);
}

TEST_CASE("softmax rows are valid distributions") {
  Rng rng(1);
  const Eigen::MatrixXd logits = random_matrix(200, 2, rng, -50.0, 50.0);
  const Eigen::MatrixXd p = softmax_rows(logits);
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    CHECK(p(r, 0) >= 0.0);
    CHECK(p(r, 1) >= 0.0);
    CHECK(std::abs(p.row(r).sum() - 1.0) <= 1e-9);
  }
  Eigen::MatrixXd moderate(1, 2);
  moderate << 3.0, -2.0;
  const Eigen::MatrixXd q = softmax_rows(moderate);
  CHECK(q(0, 0) > 0.0);
  CHECK(q(0, 0) < 1.0);
  CHECK(q(0, 0) == doctest::Approx(std::exp(5.0) / (1.0 + std::exp(5.0))));
}

TEST_CASE("actor outputs") {
  Maddpg model(4, TrainConfig{});
  Rng rng(3);

  SUBCASE("zero output layer gives an even split") {
    Mlp& actor = model.agents()[0].actor;
    actor.weights.back().setZero();
    actor.biases.back().setZero();
    for (int i = 0; i < 20; ++i) {
      LocalObservation o;
      o.queues = {rng.uniform() * 10, rng.uniform() * 10, rng.uniform() * 10, rng.uniform() * 10};
      o.phase = i % 2;
      const auto p = actor_probs(actor, o);
      CHECK(p[0] == 0.5);
      CHECK(p[1] == 0.5);
    }
  }

  SUBCASE("probabilities sum to one for random observations") {
    for (int i = 0; i < 100; ++i) {
      LocalObservation o;
      o.queues = {rng.uniform() * 40, rng.uniform() * 40, rng.uniform() * 40, rng.uniform() * 40};
      o.phase = static_cast<int>(rng.index(2));
      o.last_action = static_cast<int>(rng.index(2));
      const auto p = model.actor_probs(static_cast<std::size_t>(i % 4), o);
      CHECK(p[0] > 0.0);
      CHECK(p[1] > 0.0);
      CHECK(std::abs(p[0] + p[1] - 1.0) <= 1e-9);
    }
  }

  SUBCASE("dimension mismatch throws") {
    CHECK_THROWS(actor_probs_batch(model.agents()[0].actor, Eigen::MatrixXd::Zero(2, 5)));
  }
}

TEST_CASE("critic outputs") {
  Maddpg model(4, TrainConfig{});
  Rng rng(5);
  CHECK(model.critic_input_dim() == 40);

  SUBCASE("zero weights give zero") {
    Mlp& critic = model.agents()[1].critic;
    for (auto& w : critic.weights) w.setZero();
    for (auto& b : critic.biases) b.setZero();
    const Eigen::MatrixXd x = random_matrix(10, 40, rng, -10.0, 10.0);
    CHECK(critic_values_batch(critic, x).cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("finite for random inputs") {
    const Eigen::MatrixXd x = random_matrix(100, 40, rng, 0.0, 40.0);
    const Eigen::VectorXd q = model.critic_values_batch(0, x);
    CHECK(q.allFinite());
  }

  SUBCASE("dimension mismatch throws") {
    CHECK_THROWS(model.critic_values_batch(0, Eigen::MatrixXd::Zero(1, 39)));
  }
}

TEST_CASE("gumbel sampling") {
  SUBCASE("low temperature concentrates on the likely action") {
    const std::array<double, 2> p{0.99, 0.01};
    int zeros = 0;
    for (std::uint64_t s = 0; s < 1000; ++s) zeros += gumbel_sample(p, 0.1, s).action == 0 ? 1 : 0;
    CHECK(zeros >= 950);
  }

  SUBCASE("uniform probabilities give balanced actions") {
    const std::array<double, 2> p{0.5, 0.5};
    Rng rng(11);
    int ones = 0;
    for (int i = 0; i < 10000; ++i) ones += gumbel_sample(p, 1.0, rng).action;
    CHECK(std::abs(ones / 10000.0 - 0.5) <= 0.05);
  }

  SUBCASE("fixed seed repeats") {
    const std::array<double, 2> p{0.3, 0.7};
    for (std::uint64_t s = 0; s < 50; ++s) {
      const GumbelSample a = gumbel_sample(p, 0.5, s);
      const GumbelSample b = gumbel_sample(p, 0.5, s);
      CHECK(a.action == b.action);
      CHECK(a.relaxed == b.relaxed);
    }
  }

  SUBCASE("hard action agrees with the relaxation") {
    const std::array<double, 2> p{0.4, 0.6};
    for (std::uint64_t s = 0; s < 200; ++s) {
      const GumbelSample g = gumbel_sample(p, 0.7, s);
      CHECK(std::abs(g.relaxed[0] + g.relaxed[1] - 1.0) <= 1e-12);
      CHECK(g.action == (g.relaxed[1] > g.relaxed[0] ? 1 : 0));
    }
  }

  SUBCASE("invalid inputs") {
    const std::array<double, 2> good{0.5, 0.5};
    CHECK_THROWS_AS(gumbel_sample(good, 0.0, 1), std::invalid_argument);
    CHECK_THROWS_AS(gumbel_sample(good, -1.0, 1), std::invalid_argument);
    const std::array<double, 2> bad_sum{0.5, 0.6};
    CHECK_THROWS_AS(gumbel_sample(bad_sum, 1.0, 1), std::invalid_argument);
    const std::array<double, 2> negative{-0.1, 1.1};
    CHECK_THROWS_AS(gumbel_sample(negative, 1.0, 1), std::invalid_argument);
    const std::array<double, 3> three{0.2, 0.3, 0.5};
    CHECK_THROWS_AS(gumbel_sample(three, 1.0, 1), std::invalid_argument);
  }
}

TEST_CASE("analytic gradients match central differences") {
  Rng rng(2024);
  const int batch = 4;
  const int agents = 2;
  const int dim = agents * (LocalObservation::kDim + 2);

  Mlp critic({dim, 6, 1}, rng);
  Mlp actor({LocalObservation::kDim, 6, 2}, rng);
  const Eigen::MatrixXd x = random_matrix(batch, dim, rng);
  const Eigen::MatrixXd local = x.leftCols(LocalObservation::kDim);
  const Eigen::VectorXd targets = random_matrix(batch, 1, rng).col(0);
  Eigen::MatrixXd noise(batch, 2);
  for (int r = 0; r < batch; ++r) {
    noise(r, 0) = rng.gumbel();
    noise(r, 1) = rng.gumbel();
  }
  const int offset = agents * LocalObservation::kDim;

  SUBCASE("critic loss") {
    const LossResult res = critic_loss(critic, x, targets);
    const double err = gradient_error(critic, flatten(res.grad), [&] { return critic_loss(critic, x, targets).loss; });
    CHECK(err <= 1e-4);
  }

  SUBCASE("actor loss through the relaxed action") {
    const LossResult res = actor_loss(actor, critic, local, x, offset, noise, 0.8, false, 1e-3);
    const double err = gradient_error(actor, flatten(res.grad), [&] {
      return actor_loss(actor, critic, local, x, offset, noise, 0.8, false, 1e-3).loss;
    });
    CHECK(err <= 1e-4);
  }

  SUBCASE("scaled inputs") {
    Eigen::RowVectorXd scale = Eigen::RowVectorXd::Constant(dim, 0.1);
    critic.set_input_scale(scale);
    const LossResult res = critic_loss(critic, x, targets);
    const double err = gradient_error(critic, flatten(res.grad), [&] { return critic_loss(critic, x, targets).loss; });
    CHECK(err <= 1e-4);
  }
}

TEST_CASE("td targets and critic fitting") {
  SUBCASE("gamma zero makes the target the reward") {
    const Eigen::VectorXd r = Eigen::VectorXd::Constant(6, -1.75);
    const Eigen::VectorXd q_next = Eigen::VectorXd::LinSpaced(6, -1e300, 1e300);
    const Eigen::VectorXd live = Eigen::VectorXd::Ones(6);
    CHECK(td_targets(r, q_next, live, 0.0) == r);
    const Eigen::VectorXd y = td_targets(r, Eigen::VectorXd::Constant(6, 2.0), live, 0.5);
    CHECK(y(0) == -0.75);
    CHECK(td_targets(r, Eigen::VectorXd::Constant(6, 2.0), Eigen::VectorXd::Zero(6), 0.5) == r);
    CHECK_THROWS(td_targets(r, Eigen::VectorXd::Zero(5), live, 0.5));
  }

  SUBCASE("repeated zero-reward transition with gamma zero") {
    TrainConfig cfg = small_config();
    cfg.gamma = 0.0;
    cfg.learning_rate = 0.01;
    Maddpg model(1, cfg);
    ReplayBuffer buffer(8);
    const Transition t = constant_transition(1, 0.0);
    for (int i = 0; i < 8; ++i) buffer.push(t);
    Rng rng(9);
    std::vector<double> x(t.obs);
    x.insert(x.end(), t.actions.begin(), t.actions.end());
    const double before = std::abs(model.critic_value(0, x));
    for (int i = 0; i < 600; ++i) model.train_step(buffer, rng);
    const double after = std::abs(model.critic_value(0, x));
    CHECK(after < 0.05);
    CHECK(after <= before + 1e-12);
  }

  SUBCASE("zero reward with a terminal transition drives predictions to zero") {
    TrainConfig cfg = small_config();
    cfg.learning_rate = 0.01;
    Maddpg model(1, cfg);
    ReplayBuffer buffer(8);
    Transition t = constant_transition(1, 0.0);
    t.done = true;
    for (int i = 0; i < 8; ++i) buffer.push(t);
    Rng rng(9);
    std::vector<double> x(t.obs);
    x.insert(x.end(), t.actions.begin(), t.actions.end());
    const double before = std::abs(model.critic_value(0, x));
    for (int i = 0; i < 600; ++i) model.train_step(buffer, rng);
    const double after = std::abs(model.critic_value(0, x));
    CHECK(after < 0.05);
    CHECK(after <= before + 1e-12);
  }

  SUBCASE("fixed batch loss is non-increasing") {
    Rng rng(77);
    Mlp critic({20, 8, 1}, rng);
    const Eigen::MatrixXd x = random_matrix(16, 20, rng);
    const Eigen::VectorXd y = random_matrix(16, 1, rng).col(0);
    double prev = critic_loss(critic, x, y).loss;
    for (int i = 0; i < 50; ++i) {
      const LossResult res = critic_loss(critic, x, y);
      critic.apply_sgd(res.grad, 0.01);
      const double now = critic_loss(critic, x, y).loss;
      CHECK(now <= prev + 1e-12);
      prev = now;
    }
  }

  SUBCASE("empty or short buffer rejected") {
    Maddpg model(1, small_config());
    Rng rng(1);
    ReplayBuffer empty(8);
    CHECK_THROWS_AS(model.train_step(empty, rng), std::invalid_argument);
    ReplayBuffer short_buffer(8);
    short_buffer.push(constant_transition(1, 0.0));
    CHECK_THROWS_AS(model.train_step(short_buffer, rng), std::invalid_argument);
  }
}

TEST_CASE("replay buffer evicts oldest first") {
  ReplayBuffer buffer(5);
  CHECK_THROWS(ReplayBuffer(0));
  for (int i = 0; i < 12; ++i) {
    buffer.push(constant_transition(1, static_cast<double>(i)));
    CHECK(buffer.size() <= buffer.capacity());
    const int oldest = std::max(0, i - 4);
    CHECK(buffer.at(0).rewards[0] == oldest);
    CHECK(buffer.at(buffer.size() - 1).rewards[0] == i);
  }
  for (std::size_t k = 0; k < buffer.size(); ++k) CHECK(buffer.at(k).rewards[0] == 7.0 + static_cast<double>(k));
  CHECK_THROWS_AS(buffer.at(5), std::out_of_range);
}

TEST_CASE("target networks are hard copies on the update period") {
  TrainConfig cfg = small_config();
  cfg.learning_rate = 0.05;
  Maddpg model(2, cfg);
  ReplayBuffer buffer(8);
  for (int i = 0; i < 8; ++i) buffer.push(constant_transition(2, -1.0 * i));
  Rng rng(4);

  SUBCASE("copy count over 0..50") {
    int copies = 0;
    std::set<int> at;
    for (int e = 0; e <= 50; ++e) {
      if (model.update_targets(e)) {
        ++copies;
        at.insert(e);
      }
    }
    CHECK(copies == 6);
    CHECK(at == std::set<int>{0, 10, 20, 30, 40, 50});
  }

  SUBCASE("episode 7 leaves targets alone, episode 10 copies exactly") {
    const std::vector<AgentNets> initial = model.targets();
    model.train_step(buffer, rng);
    CHECK_FALSE(model.agents() == initial);
    CHECK_FALSE(model.update_targets(7));
    CHECK(model.targets() == initial);
    CHECK(model.update_targets(10));
    CHECK(model.targets() == model.agents());
    for (std::size_t a = 0; a < 2; ++a) {
      CHECK(model.targets()[a].actor.flatten() == model.agents()[a].actor.flatten());
      CHECK(model.targets()[a].critic.flatten() == model.agents()[a].critic.flatten());
    }
  }
}

TEST_CASE("temperature schedule and config validation") {
  TrainConfig cfg;
  CHECK(cfg.temperature(0) == 1.0);
  CHECK(cfg.temperature(49) == doctest::Approx(0.1));
  CHECK(cfg.temperature(60) == doctest::Approx(0.1));
  CHECK(cfg.temperature(0) > cfg.temperature(1));

  nlohmann::json j = cfg;
  CHECK(j.get<TrainConfig>() == cfg);
  CHECK(j.at("optimizer") == "adam");

  auto invalid = [](auto mutate) {
    TrainConfig c;
    mutate(c);
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  };
  invalid([](TrainConfig& c) { c.gamma = 1.0; });
  invalid([](TrainConfig& c) { c.gamma = -0.1; });
  invalid([](TrainConfig& c) { c.batch_size = 0; });
  invalid([](TrainConfig& c) { c.buffer_capacity = 10; });
  invalid([](TrainConfig& c) { c.learning_rate = 0.0; });
  invalid([](TrainConfig& c) { c.target_update_every = 0; });
  invalid([](TrainConfig& c) { c.temperature_end = 0.0; });
  invalid([](TrainConfig& c) { c.hidden = {4, 0}; });
}

TEST_CASE("checkpoint round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "gridlens_test_checkpoint";
  std::filesystem::create_directories(dir);
  Maddpg model(4, TrainConfig{});
  model.save(dir / "ck.bin");
  const std::vector<AgentNets> loaded = Maddpg::load(dir / "ck.bin");
  CHECK(loaded == model.agents());

  {
    std::ofstream bad(dir / "bad.bin", std::ios::binary);
    bad << "not a checkpoint";
  }
  CHECK_THROWS(Maddpg::load(dir / "bad.bin"));
  CHECK_THROWS(Maddpg::load(dir / "missing.bin"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("training is a pure function of its configuration") {
  const RoadNetwork net = RoadNetwork::build_grid(2, 2);
  SimConfig sim;
  sim.episode_steps = 200;
  sim.stages = {{100, 600.0, 0.0}, {100, 0.0, 600.0}};
  TrainConfig cfg;
  cfg.episodes = 2;
  cfg.batch_size = 8;
  cfg.buffer_capacity = 64;
  cfg.hidden = {16, 16};

  const TrainingResult a = run_training(cfg, sim, net);
  const TrainingResult b = run_training(cfg, sim, net);
  REQUIRE(a.episodes.size() == 3);
  CHECK(a.episodes.back().kind == EpisodeKind::Test);
  CHECK(a.target_copies == 1);
  CHECK(a.final_nets == b.final_nets);
  for (std::size_t e = 0; e < a.episodes.size(); ++e) {
    CHECK(nlohmann::json(a.episodes[e]).dump() == nlohmann::json(b.episodes[e]).dump());
  }
  CHECK(a.stats[1].train_steps > 0);

  cfg.seed = 1;
  const TrainingResult c = run_training(cfg, sim, net);
  CHECK_FALSE(c.final_nets == a.final_nets);
}
