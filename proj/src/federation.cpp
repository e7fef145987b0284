#include "tripsim/federation.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "tripsim/errors.hpp"
#include "tripsim/parallel.hpp"

namespace tripsim {

namespace {

// stream tags so training, evaluation and world construction never share draws
constexpr std::uint64_t kTrainStream = 0;
constexpr std::uint64_t kEvalStream = 1;
constexpr std::uint64_t kHeadStream = 11;
constexpr std::uint64_t kKeyStream = 12;
constexpr std::uint64_t kExpertStream = 13;

std::size_t expert_params(const ExpertSet& experts) {
  std::size_t n = 0;
  for (const Mat& e : experts) n += e.size();
  return n;
}

std::size_t argmax_lowest(const std::vector<double>& p) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < p.size(); ++c)
    if (p[c] > p[best]) best = c;
  return best;
}

struct ImageOutcome {
  double ce = 0.0;
  double kl = 0.0;
  double total = 0.0;
  std::size_t dropped = 0;
  std::size_t tokens = 0;
  bool correct = false;
  std::size_t label = 0;
};

void check_head(const FrozenTextHead* head, const char* who) {
  if (head == nullptr) throw ConfigError(std::string(who) + ": text head is not set");
}

}  // namespace

std::size_t parameter_count(const ServerMessage& msg) {
  return std::visit(
      [](const auto& m) -> std::size_t {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, KeyBroadcast>) {
          return m.keys.parameter_count();
        } else {
          return expert_params(m.experts);
        }
      },
      msg);
}

std::size_t parameter_count(const ClientMessage& msg) {
  return std::visit([](const auto& m) { return expert_params(m.experts); }, msg);
}

LedgerEntry& RoundLedger::entry(std::size_t round) {
  for (auto& e : entries_)
    if (e.round == round) return e;
  entries_.push_back(LedgerEntry{round, 0, 0, 0});
  return entries_.back();
}

void RoundLedger::record_downlink(std::size_t round, const ServerMessage& msg) {
  const std::size_t n = parameter_count(msg);
  LedgerEntry& e = entry(round);
  e.downlink_params += n;
  if (std::holds_alternative<KeyBroadcast>(msg)) e.key_params += n;
}

void RoundLedger::record_uplink(std::size_t round, const ClientMessage& msg) {
  entry(round).uplink_params += parameter_count(msg);
}

std::size_t RoundLedger::key_broadcast_rounds() const {
  return static_cast<std::size_t>(
      std::count_if(entries_.begin(), entries_.end(), [](const LedgerEntry& e) { return e.key_params > 0; }));
}

void ClientState::receive(const ServerMessage& msg) {
  if (const auto* k = std::get_if<KeyBroadcast>(&msg)) {
    keys = k->keys;
    return;
  }
  const auto& b = std::get<ExpertBroadcast>(msg);
  validate_experts(b.experts);
  experts = b.experts;
}

ClientMessage ClientState::upload() const { return ExpertUpload{id, experts, sample_count()}; }

LocalTrainResult local_train(ClientState& client, const StaticKeySet& keys, const TrainSettings& settings,
                             std::size_t epochs) {
  check_head(settings.head, "local_train");
  if (client.train.empty()) {
    throw ConfigError("local_train: client " + std::to_string(client.id) + " has no training samples");
  }
  if (settings.batch_size == 0) throw ConfigError("local_train: batch_size must be positive");
  validate_experts(client.experts);
  const FrozenTextHead& head = *settings.head;
  head.check_prompt(client.experts.front());

  const std::size_t M = client.experts.size();
  client.optimizer = AdamWState::zeros_like(client.experts);

  LocalTrainResult result;
  result.utilization_sum.assign(M, 0.0);
  double ce_sum = 0.0, kl_sum = 0.0, total_sum = 0.0;
  std::size_t dropped = 0, tokens = 0;

  const Rng order_root(settings.model_seed);
  const Rng route_root(settings.clustering_seed);
  const std::size_t n = client.train.size();

  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle = order_root.derive({kTrainStream, settings.round, client.id, epoch});
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    for (std::size_t start = 0; start < n; start += settings.batch_size) {
      const std::size_t count = std::min(settings.batch_size, n - start);
      std::vector<RoutedPrompt> routed(count);
      std::vector<PromptEvaluation> evals(count);
      parallel_for(count, [&](std::size_t b) {
        const std::size_t pos = start + b;
        const Sample& s = client.train[order[pos]];
        Rng rng = route_root.derive({kTrainStream, settings.round, client.id, epoch, pos});
        routed[b] = route(s.tokens, client.experts, keys, settings.router, rng);
        const Vec f = image_feature(s.tokens);
        evals[b] = evaluate_prompt(routed[b].prompt, head, f, s.label, settings.beta, settings.tau);
      });

      ExpertSet grads;
      for (const Mat& e : client.experts) grads.emplace_back(e.rows(), e.cols());
      const double scale = 1.0 / static_cast<double>(count);
      for (std::size_t b = 0; b < count; ++b) {
        for (std::size_t m = 0; m < M; ++m) {
          const double w = routed[b].weights[m];
          if (w != 0.0) axpy(w * scale, evals[b].grad_prompt.flat(), grads[m].flat());
          result.utilization_sum[m] += w;
        }
        ce_sum += evals[b].loss.ce;
        kl_sum += evals[b].loss.kl;
        total_sum += evals[b].loss.total;
        dropped += routed[b].clusters.dropped_count;
        tokens += routed[b].clusters.assignment.size();
        ++result.routed_images;
      }
      if (settings.observer) {
        for (const auto& r : routed) settings.observer(r, client.experts);
      }
      AdamWConfig opt = settings.optimizer;
      adamw_step(client.experts, grads, client.optimizer, opt);
    }
  }

  if (result.routed_images > 0) {
    const double k = static_cast<double>(result.routed_images);
    result.metrics = {ce_sum / k, kl_sum / k, total_sum / k,
                      tokens ? static_cast<double>(dropped) / static_cast<double>(tokens) : 0.0};
  }
  return result;
}

ExpertSet aggregate(const std::vector<ExpertUpload>& uploads) {
  if (uploads.empty()) throw ConfigError("aggregate: no client uploads");
  std::size_t total = 0;
  for (const auto& u : uploads) {
    validate_experts(u.experts);
    if (u.experts.size() != uploads.front().experts.size() ||
        !u.experts.front().same_shape(uploads.front().experts.front())) {
      throw StructuralError("aggregate: client " + std::to_string(u.client_id) +
                            " uploaded experts of a different shape");
    }
    total += u.sample_count;
  }
  if (total == 0) throw ConfigError("aggregate: clients report zero samples in total");
  // sum in client-id order so arrival order cannot change the bits
  std::vector<const ExpertUpload*> sorted;
  for (const auto& u : uploads) sorted.push_back(&u);
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const ExpertUpload* a, const ExpertUpload* b) { return a->client_id < b->client_id; });
  ExpertSet out;
  for (const Mat& e : uploads.front().experts) out.emplace_back(e.rows(), e.cols());
  for (const ExpertUpload* p : sorted) {
    const ExpertUpload& u = *p;
    const double w = static_cast<double>(u.sample_count) / static_cast<double>(total);
    for (std::size_t m = 0; m < out.size(); ++m) axpy(w, u.experts[m].flat(), out[m].flat());
  }
  return out;
}

ExpertSet aggregate(const std::vector<ClientState>& clients) {
  std::vector<ExpertUpload> uploads;
  uploads.reserve(clients.size());
  for (const auto& c : clients) uploads.push_back(std::get<ExpertUpload>(c.upload()));
  return aggregate(uploads);
}

namespace {

DomainMetrics summarise(const std::vector<ImageOutcome>& out, std::size_t classes) {
  DomainMetrics m;
  m.samples = out.size();
  m.per_class_accuracy.assign(classes, 0.0);
  if (out.empty()) return m;
  std::vector<std::size_t> seen(classes, 0), hit(classes, 0);
  std::size_t correct = 0, dropped = 0, tokens = 0;
  for (const auto& o : out) {
    m.ce += o.ce;
    m.kl += o.kl;
    dropped += o.dropped;
    tokens += o.tokens;
    ++seen[o.label];
    if (o.correct) {
      ++correct;
      ++hit[o.label];
    }
  }
  const double k = static_cast<double>(out.size());
  m.accuracy = static_cast<double>(correct) / k;
  m.ce /= k;
  m.kl /= k;
  m.dropped_rate = tokens ? static_cast<double>(dropped) / static_cast<double>(tokens) : 0.0;
  for (std::size_t c = 0; c < classes; ++c)
    if (seen[c]) m.per_class_accuracy[c] = static_cast<double>(hit[c]) / static_cast<double>(seen[c]);
  return m;
}

void check_labels(const std::vector<Sample>& samples, std::size_t classes) {
  for (const auto& s : samples)
    if (s.label >= classes) {
      throw StructuralError("sample label " + std::to_string(s.label) + " outside " +
                            std::to_string(classes) + " classes");
    }
}

}  // namespace

DomainMetrics evaluate(const ExpertSet& experts, const StaticKeySet& keys, const std::vector<Sample>& samples,
                       const EvalSettings& settings) {
  check_head(settings.head, "evaluate");
  validate_experts(experts);
  const FrozenTextHead& head = *settings.head;
  head.check_prompt(experts.front());
  check_labels(samples, head.classes());
  std::vector<ImageOutcome> out(samples.size());
  const Rng root(settings.clustering_seed);
  parallel_for(samples.size(), [&](std::size_t i) {
    const Sample& s = samples[i];
    Rng rng = root.derive({kEvalStream, i});
    const RoutedPrompt r = route(s.tokens, experts, keys, settings.router, rng);
    const Vec f = image_feature(s.tokens);
    const auto p = predict(r.prompt, head, f, settings.tau);
    const auto ref = zero_shot_reference(head, f, settings.tau);
    const LossBreakdown l = loss(p, ref, s.label, settings.beta);
    out[i] = {l.ce, l.kl, l.total, r.clusters.dropped_count, r.clusters.assignment.size(),
              argmax_lowest(p) == s.label, s.label};
  });
  return summarise(out, head.classes());
}

DomainMetrics evaluate_zero_shot(const FrozenTextHead& head, const std::vector<Sample>& samples, double tau) {
  check_labels(samples, head.classes());
  std::vector<ImageOutcome> out(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    const Sample& s = samples[i];
    const Vec f = image_feature(s.tokens);
    const auto p = zero_shot_reference(head, f, tau);
    const LossBreakdown l = loss(p, p, s.label, 0.0);
    out[i] = {l.ce, 0.0, l.ce, 0, s.tokens.rows(), argmax_lowest(p) == s.label, s.label};
  });
  DomainMetrics m = summarise(out, head.classes());
  m.dropped_rate = 0.0;
  return m;
}

World build_world(const ExperimentConfig& cfg) {
  cfg.validate();
  Dataset data = cfg.fixture.empty() ? generate(cfg.generator_config()) : load_fixture(cfg.fixture);
  return build_world(cfg, std::move(data));
}

World build_world(const ExperimentConfig& cfg, Dataset data) {
  cfg.validate();
  if (data.dims != cfg.dims) {
    throw ConfigError("config.dims: " + std::to_string(cfg.dims) + " does not match dataset dims " +
                      std::to_string(data.dims));
  }
  if (std::find(data.domains.begin(), data.domains.end(), cfg.target_domain) == data.domains.end()) {
    throw ConfigError("config.target_domain: domain " + std::to_string(cfg.target_domain) +
                      " is not in the dataset");
  }
  if (data.domains.size() < 2) throw ConfigError("dataset needs at least two domains for leave-one-out");
  FederatedSplit split = leave_one_out(data, cfg.target_domain, cfg.train_fraction, cfg.seeds.data);

  const Rng model(cfg.seeds.model);
  FrozenTextHead head(data.anchors, cfg.prompt_tokens, model.derive({kHeadStream}).next_u64());
  Rng key_rng = model.derive({kKeyStream});
  StaticKeySet keys = init_keys(cfg.experts, cfg.dims, cfg.key_strategy, key_rng);

  Rng init = model.derive({kExpertStream});
  ExpertSet experts;
  for (std::size_t m = 0; m < cfg.experts; ++m) {
    Mat e(cfg.prompt_tokens, cfg.dims);
    for (double& v : e.flat()) v = cfg.expert_init_std * init.normal();
    experts.push_back(std::move(e));
  }
  return World{std::move(data), std::move(split), std::move(head), std::move(keys), std::move(experts)};
}

RunResult run(const ExperimentConfig& cfg, const RunHooks& hooks) { return run(cfg, build_world(cfg), hooks); }

RunResult run(const ExperimentConfig& cfg, World world, const RunHooks& hooks) {
  cfg.validate();
  const FederatedSplit& split = world.split;
  if (split.clients.empty()) throw ConfigError("run: no source clients");

  std::vector<ClientState> clients;
  for (std::size_t k = 0; k < split.clients.size(); ++k) {
    ClientState c;
    c.id = k;
    c.domain = split.clients[k].domain;
    c.train = split.clients[k].train;
    c.eval = split.clients[k].eval;
    if (c.train.empty()) {
      throw ConfigError("run: client for domain " + std::to_string(c.domain) + " has no training samples");
    }
    clients.push_back(std::move(c));
  }

  const double beta = cfg.effective_beta();
  EvalSettings eval;
  eval.head = &world.head;
  eval.router = cfg.router_options(cfg.alpha_infer);
  eval.beta = beta;
  eval.tau = cfg.tau;
  eval.clustering_seed = cfg.seeds.clustering;

  auto evaluate_all = [&](const ExpertSet* experts) {
    std::vector<DomainMetrics> rows;
    auto one = [&](const std::vector<Sample>& samples, std::size_t domain, const char* role) {
      DomainMetrics m = experts ? evaluate(*experts, world.keys, samples, eval)
                                : evaluate_zero_shot(world.head, samples, cfg.tau);
      m.domain = domain;
      m.role = role;
      rows.push_back(std::move(m));
    };
    one(split.target, split.target_domain, "target");
    for (const auto& c : clients) one(c.eval, c.domain, "source");
    return rows;
  };

  RunResult result;
  result.keys = world.keys;
  RunReport& report = result.report;
  report.config = cfg;
  report.zero_shot = evaluate_all(nullptr);
  report.zero_shot_target_accuracy = report.zero_shot.front().accuracy;

  TrainSettings train;
  train.head = &world.head;
  train.router = cfg.router_options(cfg.alpha_train);
  train.optimizer.lr = cfg.lr;
  train.optimizer.weight_decay = cfg.weight_decay;
  train.beta = beta;
  train.tau = cfg.tau;
  train.batch_size = cfg.batch_size;
  train.model_seed = cfg.seeds.model;
  train.clustering_seed = cfg.seeds.clustering;
  train.observer = hooks.on_route;

  RoundLedger ledger;
  ExpertSet global = world.initial_experts;
  for (std::size_t round = 1; round <= cfg.rounds; ++round) {
    if (round == 1) {
      const ServerMessage msg = KeyBroadcast{world.keys};
      for (auto& c : clients) {
        c.receive(msg);
        ledger.record_downlink(round, msg);
      }
    }
    const ServerMessage broadcast = ExpertBroadcast{round, global};
    for (auto& c : clients) {
      c.receive(broadcast);
      ledger.record_downlink(round, broadcast);
    }

    train.round = round;
    TrainMetrics tm;
    std::vector<double> util(cfg.experts, 0.0);
    std::size_t routed = 0;
    std::vector<ExpertUpload> uploads;
    for (auto& c : clients) {
      if (!c.keys) throw InvariantViolation("run: client trained before receiving keys");
      const LocalTrainResult lr = local_train(c, *c.keys, train, cfg.local_epochs);
      const double w = static_cast<double>(lr.routed_images);
      tm.ce += lr.metrics.ce * w;
      tm.kl += lr.metrics.kl * w;
      tm.total += lr.metrics.total * w;
      tm.dropped_rate += lr.metrics.dropped_rate * w;
      for (std::size_t m = 0; m < util.size(); ++m) util[m] += lr.utilization_sum[m];
      routed += lr.routed_images;
      const ClientMessage up = c.upload();
      ledger.record_uplink(round, up);
      uploads.push_back(std::get<ExpertUpload>(up));
    }
    global = aggregate(uploads);
    if (hooks.on_round) hooks.on_round(round, world.keys, global);

    RoundRecord rec;
    rec.round = round;
    if (routed > 0) {
      const double k = static_cast<double>(routed);
      tm.ce /= k;
      tm.kl /= k;
      tm.total /= k;
      tm.dropped_rate /= k;
      for (double& u : util) u /= k;
    }
    rec.train = tm;
    rec.expert_utilization = util;
    rec.eval = evaluate_all(&global);
    const LedgerEntry& e = ledger.entries().back();
    rec.uplink_params = e.uplink_params;
    rec.downlink_params = e.downlink_params;
    rec.key_params = e.key_params;
    report.rounds.push_back(std::move(rec));
  }

  report.final_target_accuracy =
      report.rounds.empty() ? report.zero_shot_target_accuracy : report.rounds.back().eval.front().accuracy;
  CommSummary& comm = report.comm;
  comm.clients = clients.size();
  comm.params_per_client_round = cfg.expert_payload();
  comm.key_params_per_client = cfg.key_payload();
  comm.key_broadcast_rounds = ledger.key_broadcast_rounds();
  for (const auto& e : ledger.entries()) {
    comm.total_uplink += e.uplink_params;
    comm.total_downlink += e.downlink_params;
  }
  result.global_experts = std::move(global);
  return result;
}

}  // namespace tripsim
