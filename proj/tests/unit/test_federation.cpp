#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <type_traits>

#include "helpers.hpp"
#include "tripsim/errors.hpp"
#include "tripsim/federation.hpp"

using namespace tripsim;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.experts = 2;
  cfg.prompt_tokens = 2;
  cfg.dims = 16;
  cfg.rounds = 2;
  cfg.batch_size = 4;
  cfg.generator.classes = 3;
  cfg.generator.regions = 2;
  cfg.generator.tokens = 5;
  cfg.generator.samples_per_class = 4;
  return cfg;
}

ExpertUpload upload_of(std::size_t id, std::size_t count, double value) {
  return ExpertUpload{id, ExpertSet{Mat(1, 2, value), Mat(1, 2, -value)}, count};
}

ExpertSet experts_like(const ExpertSet& e) {
  ExpertSet out;
  for (const Mat& m : e) out.emplace_back(m.rows(), m.cols());
  return out;
}

}  // namespace

TEST_CASE("fedavg worked examples") {
  const ExpertSet one = aggregate(std::vector<ExpertUpload>{upload_of(0, 7, 0.3)});
  CHECK(one[0](0, 0) == 0.3);
  CHECK(one[1](0, 1) == -0.3);

  const ExpertSet eq = aggregate(std::vector<ExpertUpload>{upload_of(0, 5, 1.0), upload_of(1, 5, 3.0)});
  CHECK(eq[0](0, 0) == doctest::Approx(2.0).epsilon(1e-15));

  const ExpertSet w = aggregate(std::vector<ExpertUpload>{upload_of(0, 1, 1.0), upload_of(1, 3, 5.0)});
  CHECK(std::abs(w[0](0, 0) - (0.25 * 1.0 + 0.75 * 5.0)) < 1e-12);
  CHECK(std::abs(w[1](0, 0) + 4.0) < 1e-12);
}

TEST_CASE("fedavg matches the weighted mean and ignores client order") {
  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    const std::size_t k = 1 + rng.below(5);
    std::vector<ExpertUpload> ups;
    for (std::size_t c = 0; c < k; ++c) {
      ups.push_back(ExpertUpload{c, ExpertSet{testutil::random_mat(3, 4, rng), testutil::random_mat(3, 4, rng)},
                                 1 + rng.below(100)});
    }
    std::size_t total = 0;
    for (const auto& u : ups) total += u.sample_count;
    const ExpertSet avg = aggregate(ups);
    for (std::size_t m = 0; m < 2; ++m)
      for (std::size_t i = 0; i < 12; ++i) {
        double want = 0.0;
        for (const auto& u : ups) want += static_cast<double>(u.sample_count) / total * u.experts[m].flat()[i];
        CHECK(std::abs(avg[m].flat()[i] - want) < 1e-12);
      }
    std::reverse(ups.begin(), ups.end());
    const ExpertSet rev = aggregate(ups);
    CHECK(rev == avg);
  }
}

TEST_CASE("fedavg errors") {
  CHECK_THROWS_AS(aggregate(std::vector<ExpertUpload>{}), ConfigError);
  CHECK_THROWS_AS(aggregate(std::vector<ExpertUpload>{upload_of(0, 0, 1.0)}), ConfigError);
  auto odd = upload_of(1, 2, 1.0);
  odd.experts.pop_back();
  CHECK_THROWS_AS(aggregate(std::vector<ExpertUpload>{upload_of(0, 2, 1.0), odd}), StructuralError);
  auto wide = upload_of(1, 2, 1.0);
  wide.experts = {Mat(1, 3), Mat(1, 3)};
  CHECK_THROWS_AS(aggregate(std::vector<ExpertUpload>{upload_of(0, 2, 1.0), wide}), StructuralError);
}

TEST_CASE("client messages carry experts only") {
  static_assert(std::variant_size_v<ClientMessage> == 1);
  static_assert(std::is_same_v<std::variant_alternative_t<0, ClientMessage>, ExpertUpload>);
  ClientState c;
  c.id = 4;
  c.train.resize(3);
  c.receive(ExpertBroadcast{1, ExpertSet{Mat(2, 5, 1.0), Mat(2, 5, 2.0)}});
  const ClientMessage up = c.upload();
  const auto& u = std::get<ExpertUpload>(up);
  CHECK(u.client_id == 4);
  CHECK(u.sample_count == 3);
  CHECK(parameter_count(up) == 20);
  CHECK_FALSE(c.keys.has_value());
  Rng rng(2);
  c.receive(KeyBroadcast{init_keys(2, 5, KeyStrategy::orthogonal, rng)});
  REQUIRE(c.keys.has_value());
  CHECK(parameter_count(ServerMessage{KeyBroadcast{*c.keys}}) == 10);
  CHECK_THROWS(c.receive(ExpertBroadcast{2, ExpertSet{}}));
}

TEST_CASE("ledger tallies per round") {
  RoundLedger ledger;
  Rng rng(3);
  const ServerMessage keys = KeyBroadcast{init_keys(4, 8, KeyStrategy::normal, rng)};
  const ServerMessage experts = ExpertBroadcast{1, ExpertSet(4, Mat(3, 8))};
  const ClientMessage up = ExpertUpload{0, ExpertSet(4, Mat(3, 8)), 10};
  for (int c = 0; c < 3; ++c) {
    ledger.record_downlink(1, keys);
    ledger.record_downlink(1, experts);
    ledger.record_uplink(1, up);
    ledger.record_downlink(2, experts);
    ledger.record_uplink(2, up);
  }
  REQUIRE(ledger.entries().size() == 2);
  CHECK(ledger.entries()[0].downlink_params == 3 * (96 + 32));
  CHECK(ledger.entries()[0].key_params == 96);
  CHECK(ledger.entries()[0].uplink_params == 3 * 96);
  CHECK(ledger.entries()[1].downlink_params == 3 * 96);
  CHECK(ledger.entries()[1].key_params == 0);
  CHECK(ledger.key_broadcast_rounds() == 1);
}

TEST_CASE("local training with no epochs or zero rate leaves experts alone") {
  const auto cfg = tiny_config();
  World w = build_world(cfg);
  ClientState c;
  c.train = w.split.clients[0].train;
  c.experts = w.initial_experts;
  TrainSettings s;
  s.head = &w.head;
  s.router = cfg.router_options(cfg.alpha_train);
  s.batch_size = 4;
  const auto r0 = local_train(c, w.keys, s, 0);
  CHECK(c.experts == w.initial_experts);
  CHECK(r0.routed_images == 0);

  s.optimizer.lr = 0.0;
  s.optimizer.weight_decay = 0.0;
  const auto r1 = local_train(c, w.keys, s, 2);
  CHECK(c.experts == w.initial_experts);
  CHECK(r1.routed_images == 2 * c.train.size());
}

TEST_CASE("one local epoch lowers the loss on a small set") {
  auto cfg = tiny_config();
  World w = build_world(cfg);
  ClientState c;
  c.train.assign(w.split.clients[0].train.begin(), w.split.clients[0].train.begin() + 4);
  c.experts = w.initial_experts;
  TrainSettings s;
  s.head = &w.head;
  s.router = cfg.router_options(cfg.alpha_train);
  s.batch_size = 4;
  EvalSettings e;
  e.head = &w.head;
  e.router = s.router;
  e.beta = s.beta;
  auto mean_loss = [&] {
    const DomainMetrics m = evaluate(c.experts, w.keys, c.train, e);
    return m.ce + e.beta * m.kl;
  };
  const double before = mean_loss();
  std::size_t seen = 0;
  s.observer = [&](const RoutedPrompt& r, const ExpertSet&) {
    ++seen;
    double sum = 0.0;
    for (double p : r.weights) sum += p;
    CHECK(std::abs(sum - 1.0) < 1e-12);
  };
  const auto res = local_train(c, w.keys, s, 1);
  CHECK(seen == 4);
  CHECK(res.routed_images == 4);
  CHECK(mean_loss() < before);
  CHECK(c.optimizer.step == 1);
}

TEST_CASE("local training errors") {
  const auto cfg = tiny_config();
  World w = build_world(cfg);
  ClientState c;
  c.experts = w.initial_experts;
  TrainSettings s;
  s.head = &w.head;
  CHECK_THROWS_AS(local_train(c, w.keys, s, 1), ConfigError);
  c.train = w.split.clients[0].train;
  s.head = nullptr;
  CHECK_THROWS_AS(local_train(c, w.keys, s, 1), ConfigError);
  s.head = &w.head;
  s.batch_size = 0;
  CHECK_THROWS_AS(local_train(c, w.keys, s, 1), ConfigError);
}

TEST_CASE("evaluation is perfect when images sit on their anchors") {
  Rng rng(4);
  const Mat anchors = orthonormal_rows(4, 8, rng);
  const FrozenTextHead head(anchors, 3, 9);
  std::vector<Sample> samples;
  for (std::size_t c = 0; c < 4; ++c)
    for (int r = 0; r < 3; ++r) {
      Mat tokens(6, 8);
      for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 8; ++j) tokens(i, j) = anchors(c, j);
      samples.push_back(Sample{tokens, c, 0});
    }
  const ExpertSet zero(2, Mat(3, 8));
  const StaticKeySet keys = init_keys(2, 8, KeyStrategy::orthogonal, rng);
  EvalSettings e;
  e.head = &head;
  const DomainMetrics m = evaluate(zero, keys, samples, e);
  CHECK(m.accuracy == 1.0);
  CHECK(m.samples == 12);
  CHECK(m.kl == doctest::Approx(0.0).epsilon(1e-12));
  for (double a : m.per_class_accuracy) CHECK(a == 1.0);
  const DomainMetrics z = evaluate_zero_shot(head, samples, 0.07);
  CHECK(z.accuracy == 1.0);
  CHECK(z.kl == 0.0);
  CHECK(z.dropped_rate == 0.0);
  CHECK(z.ce == doctest::Approx(m.ce));

  samples.front().label = 9;
  CHECK_THROWS_AS(evaluate(zero, keys, samples, e), StructuralError);
}

TEST_CASE("ties go to the lowest class") {
  // two identical anchors: the image matches both equally
  const FrozenTextHead head(Mat(2, 2, std::vector<double>{1, 0, 1, 0}), 1, 3);
  const std::vector<Sample> s{Sample{Mat(3, 2, std::vector<double>{1, 0, 1, 0, 1, 0}), 0, 0},
                              Sample{Mat(3, 2, std::vector<double>{1, 0, 1, 0, 1, 0}), 1, 0}};
  const DomainMetrics z = evaluate_zero_shot(head, s, 0.07);
  CHECK(z.accuracy == 0.5);
  CHECK(z.per_class_accuracy == std::vector<double>{1.0, 0.0});
}

TEST_CASE("a short run: ledger, ordering and communication totals") {
  auto cfg = tiny_config();
  cfg.rounds = 3;
  std::size_t hook_rounds = 0;
  RunHooks hooks;
  hooks.on_round = [&](std::size_t round, const StaticKeySet& keys, const ExpertSet& experts) {
    ++hook_rounds;
    CHECK(round == hook_rounds);
    CHECK(keys.count() == 2);
    CHECK(experts.size() == 2);
  };
  const RunResult r = run(cfg, hooks);
  const RunReport& rep = r.report;
  CHECK(hook_rounds == 3);
  REQUIRE(rep.rounds.size() == 3);
  const std::size_t clients = 3, payload = 2 * 2 * 16, keys = 2 * 16;
  CHECK(rep.comm.clients == clients);
  CHECK(rep.comm.params_per_client_round == payload);
  CHECK(rep.comm.key_params_per_client == keys);
  CHECK(rep.comm.key_broadcast_rounds == 1);
  CHECK(rep.rounds[0].downlink_params == clients * (payload + keys));
  CHECK(rep.rounds[0].key_params == clients * keys);
  for (std::size_t t = 0; t < 3; ++t) {
    const auto& rr = rep.rounds[t];
    CHECK(rr.round == t + 1);
    CHECK(rr.uplink_params == clients * payload);
    if (t > 0) {
      CHECK(rr.downlink_params == clients * payload);
      CHECK(rr.key_params == 0);
    }
    REQUIRE(rr.eval.size() == 4);
    CHECK(rr.eval[0].role == "target");
    CHECK(rr.eval[0].domain == 3);
    for (std::size_t k = 1; k < 4; ++k) {
      CHECK(rr.eval[k].role == "source");
      CHECK(rr.eval[k].domain == k - 1);
    }
    double util = 0.0;
    for (double u : rr.expert_utilization) util += u;
    CHECK(util == doctest::Approx(1.0));
  }
  CHECK(rep.comm.total_uplink == 3 * clients * payload);
  CHECK(rep.comm.total_downlink == 3 * clients * payload + clients * keys);
  CHECK(rep.final_target_accuracy == rep.rounds.back().eval[0].accuracy);
  CHECK(rep.zero_shot_target_accuracy == rep.zero_shot[0].accuracy);
}

TEST_CASE("zero rounds reports zero-shot only") {
  auto cfg = tiny_config();
  cfg.rounds = 0;
  const RunResult r = run(cfg);
  CHECK(r.report.rounds.empty());
  CHECK(r.report.zero_shot.size() == 4);
  CHECK(r.report.final_target_accuracy == r.report.zero_shot_target_accuracy);
  CHECK(r.report.comm.total_uplink == 0);
  CHECK(r.report.comm.key_broadcast_rounds == 0);
  CHECK(r.global_experts == build_world(cfg).initial_experts);
}

TEST_CASE("runs are deterministic under fixed seeds") {
  const auto cfg = tiny_config();
  const RunResult a = run(cfg);
  const RunResult b = run(cfg);
  CHECK(a.report == b.report);
  CHECK(a.global_experts == b.global_experts);
  auto other = cfg;
  other.seeds.clustering = 99;
  other.ablation.random_assignment = true;
  CHECK_FALSE(run(other).global_experts == a.global_experts);
}

TEST_CASE("world construction checks the dataset against the config") {
  auto cfg = tiny_config();
  Dataset d = generate(cfg.generator_config());
  auto wrong_dims = cfg;
  wrong_dims.dims = 32;
  wrong_dims.generator.classes = 3;
  CHECK_THROWS_AS(build_world(wrong_dims, d), ConfigError);
  Dataset two = d;
  two.domains = {0, 1};
  std::erase_if(two.samples, [](const Sample& s) { return s.domain > 1; });
  CHECK_THROWS_AS(build_world(cfg, two), ConfigError);
  auto t1 = cfg;
  t1.target_domain = 1;
  const World w = build_world(t1, two);
  CHECK(w.split.clients.size() == 1);
  CHECK(w.split.target_domain == 1);
  CHECK(w.initial_experts.size() == 2);
  CHECK(w.keys.count() == 2);
}
