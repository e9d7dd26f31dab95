// Acceptance runner: one line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "feedbench/feedbench.hpp"
#include "oracles.hpp"

using namespace feedbench;
namespace fs = std::filesystem;

namespace {

struct Unmet : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require(bool ok, const std::string& what) {
  if (!ok) throw Unmet(what);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

const fs::path kFixtures = FIXTURE_DIR;

ScoreDistribution reference_distribution() {
  ScoreDistribution::Masses m{};
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = oracle::kReferenceScorePercent[i] / 100.0;
  return ScoreDistribution::from_masses(m);
}

GeneralSigmoidModel calibrated() {
  return calibrate_sigmoid(reference_distribution(), GlobalTargets::from_globals(0.0559, 0.0091));
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  throw Unmet("expected an error, none was raised");
}

std::shared_ptr<MockTransport> fixture_transport() {
  std::ifstream in(kFixtures / "mock_script.json");
  return std::make_shared<MockTransport>(mock_script_from_json(nlohmann::json::parse(in)));
}

GatewayProfile role_profile() {
  GatewayProfile p;
  p.bindings = {{Role::system, "backbone"}, {Role::simulator, "simulator"}, {Role::judge, "judge"},
                {Role::embedder, "embedder"}};
  p.retry.base_backoff = std::chrono::milliseconds(0);
  return p;
}

const std::vector<std::string> kVocab = {"alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta", "iota", "kappa"};

std::string random_text(SeedState& rng, std::size_t max_words) {
  const auto n = 1 + rng.below(max_words);
  std::string out;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) out.push_back(' ');
    out += kVocab[rng.below(kVocab.size())];
  }
  return out;
}

// ---------------------------------------------------------------------------
// AC1-AC6: action model

std::string ac1_table() {
  const auto m = calibrated();
  double worst = 0.0;
  for (int s = 1; s <= 10; ++s) {
    const double pl = m.p_like(s), pd = m.p_dislike(s);
    const auto& ref = oracle::kReferenceActionTable[static_cast<std::size_t>(s - 1)];
    for (auto [got, want] : {std::pair{pl, ref[0]}, {pd, ref[1]}, {1.0 - pl - pd, ref[2]}}) {
      const double d = std::abs(got - want / 100.0);
      worst = std::max(worst, d);
      require(d <= 0.001, "S=" + std::to_string(s) + " off by " + fmt("%.6f", d));
    }
  }
  return "30 cells, max |diff| " + fmt("%.2e", worst);
}

std::string ac2_identity() {
  const auto m = calibrated();
  double like = 0.0, dislike = 0.0;
  for (int s = 1; s <= 10; ++s) {
    const double p = oracle::kReferenceScorePercent[static_cast<std::size_t>(s - 1)] / 100.0;
    like += p * m.p_like(s);
    dislike += p * m.p_dislike(s);
  }
  require(std::abs(like - 0.0559) <= 5e-4, "like mass " + fmt("%.6f", like));
  require(std::abs(dislike - 0.0091) <= 5e-4, "dislike mass " + fmt("%.6f", dislike));
  return "like " + fmt("%.6f", like) + ", dislike " + fmt("%.6f", dislike);
}

std::string ac3_targets() {
  const auto t = GlobalTargets::reference();
  require(std::abs(t.p_like_global() - 0.0559) <= 1e-4, "like target " + fmt("%.6f", t.p_like_global()));
  require(std::abs(t.p_dislike_global() - 0.0091) <= 1e-4, "dislike target " + fmt("%.6f", t.p_dislike_global()));
  return fmt("(%.4f, ", t.p_like_global()) + fmt("%.4f)", t.p_dislike_global());
}

std::string ac4_oracle() {
  const auto m = calibrated();
  std::array<double, 10> dist{};
  for (std::size_t i = 0; i < 10; ++i) dist[i] = oracle::kReferenceScorePercent[i] / 100.0;
  const double gl = oracle::grid_search_scale(dist, 0.0559, 1.5, 7.5, +1.0);
  const double gd = oracle::grid_search_scale(dist, 0.0091, 1.5, 4.5, -1.0);
  require(std::abs(gl - m.c_like()) <= 2e-6, "c_like " + fmt("%.9f", m.c_like()) + " vs grid " + fmt("%.9f", gl));
  require(std::abs(gd - m.c_dislike()) <= 2e-6,
          "c_dislike " + fmt("%.9f", m.c_dislike()) + " vs grid " + fmt("%.9f", gd));
  return "c_like " + fmt("%.9f", m.c_like()) + ", c_dislike " + fmt("%.9f", m.c_dislike());
}

std::string ac5_mappings() {
  const std::vector<std::pair<double, int>> anchors = {{1.0, 10}, {0.9, 10}, {0.8999, 9}, {0.8, 9},
                                                       {0.7999, 8}, {0.5, 6}, {0.4999, 5}, {0.0, 1}};
  for (auto [f1, want] : anchors) {
    require(f1_to_satisfaction(f1).value() == want, "F1 " + fmt("%.4f", f1) + " maps to " +
                                                        std::to_string(f1_to_satisfaction(f1).value()));
  }
  require(binary_satisfaction(true).value() == 9 && binary_satisfaction(false).value() == 3, "binary anchors");
  int prev = 0;
  for (int i = 0; i <= 1000; ++i) {
    const int s = f1_to_satisfaction(i / 1000.0).value();
    require(s >= prev, "not monotone at F1=" + std::to_string(i / 1000.0));
    prev = s;
  }
  return "anchors exact, monotone over 1001 grid points";
}

std::string ac6_sampler() {
  const auto models = ActionModelSet::calibrate({});
  const std::size_t n = 100000;
  double worst_sigma = 0.0;
  auto within = [&](std::size_t count, double p, const std::string& what) {
    const double mean = static_cast<double>(n) * p;
    const double sd = std::sqrt(static_cast<double>(n) * p * (1.0 - p));
    const double dev = std::abs(static_cast<double>(count) - mean);
    if (sd == 0.0) {
      require(dev == 0.0, what + " drew outside a zero-probability outcome");
      return;
    }
    worst_sigma = std::max(worst_sigma, dev / sd);
    require(dev <= 4.0 * sd, what + fmt(" off by %.2f sigma", dev / sd));
  };
  for (const ActionModel* model : {&models.general, &models.binary}) {
    for (int s = 1; s <= 10; ++s) {
      for (TaskFormat f : {TaskFormat::LiLo, TaskFormat::SiSo}) {
        const auto probs = model->probabilities(SatisfactionScore(s), f);
        auto rng = derive_seed(606, std::string(to_string(model->kind())) + std::to_string(s) + std::string(to_string(f)));
        std::size_t like = 0, dislike = 0, none = 0, copy = 0;
        for (std::size_t i = 0; i < n; ++i) {
          const auto a = sample_action(probs, rng);
          like += a.primary == PrimaryAction::like;
          dislike += a.primary == PrimaryAction::dislike;
          none += a.primary == PrimaryAction::none;
          copy += a.copied;
        }
        const std::string tag = std::string(to_string(model->kind())) + " S=" + std::to_string(s);
        within(like, probs.p_like, tag + " like");
        within(dislike, probs.p_dislike, tag + " dislike");
        within(none, probs.p_none, tag + " none");
        within(copy, is_long_output(f) ? std::min(1.0, 4.0 * probs.p_like) : 0.0, tag + " copy");
      }
    }
  }
  return "40 cells x 1e5 draws, worst " + fmt("%.2f sigma", worst_sigma);
}

// ---------------------------------------------------------------------------
// AC7: session state machine

struct SuiteStats {
  std::string digest;
  std::size_t ends = 0, limits = 0, errors = 0;
};

SuiteStats run_session_suite(std::uint64_t action_seed) {
  auto script = std::make_shared<MockScript>();
  auto transport = std::make_shared<MockTransport>(script);
  Gateway gateway(role_profile(), transport);
  gateway.set_sleeper([](std::chrono::milliseconds) {});
  const auto registry = DatasetRegistry::builtin();
  const auto models = ActionModelSet::calibrate({});

  SeedState script_rng(0);
  script->set_default([&](const nlohmann::json& req) -> std::string {
    const auto model = req.value("model", "");
    if (model == "simulator") {
      const auto r = script_rng.below(20);
      if (r < 9) return nlohmann::json{{"reasoning", "fine"}, {"behavior", "end_conversation"}, {"response", nullptr}}.dump();
      if (r < 18) {
        return nlohmann::json{{"reasoning", "more"}, {"behavior", "continue_conversation"},
                              {"response", "please expand on " + random_text(script_rng, 3)}}.dump();
      }
      return "not json at all";
    }
    if (script_rng.below(25) == 0) return "no score here";
    return nlohmann::json{{"score", 1 + script_rng.below(10)}}.dump();
  });

  struct Kind {
    std::string dataset, metric, gold;
    TaskFormat format;
  };
  const std::vector<Kind> kinds = {{"locomo", "f1", "in the blue album", TaskFormat::LiSo},
                                   {"dialsim-friends", "accuracy", "Joey", TaskFormat::LiSo},
                                   {"nfcats", "judge", "because of scattering", TaskFormat::SiSo},
                                   {"writingprompts", "meteor", "once upon a time", TaskFormat::SiLo},
                                   {"scitechnews", "judge", "researchers found", TaskFormat::LiLo}};

  SuiteStats stats;
  std::string all;
  for (std::size_t i = 0; i < 1000; ++i) {
    auto rng = derive_seed(77, "session" + std::to_string(i));
    const auto& k = kinds[rng.below(kinds.size())];
    TaskCase c;
    c.case_id = "case-" + std::to_string(i);
    c.dataset_id = k.dataset;
    c.query = "question " + random_text(rng, 5);
    c.eval.metric = k.metric;
    c.eval.gold = k.gold;
    c.format = k.format;
    SimulatorConfig cfg;
    cfg.max_turns = 1 + rng.below(3);
    script_rng = derive_seed(78, c.case_id);

    SeedState answer_rng = derive_seed(79, c.case_id);
    class Scripted : public MemorySystem {
     public:
      Scripted(SeedState& r, std::string gold) : r_(r), gold_(std::move(gold)) {}
      std::string name() const override { return "Scripted"; }
      std::size_t ingest_corpus(const TaskCase&) override { return 0; }
      std::size_t ingest_sessions(const std::vector<FeedbackSession>&) override { return 0; }
      std::size_t entry_count() const override { return 0; }
      bool uses_memory() const override { return false; }
      std::string respond(const TaskCase&, const Dialog&, SessionState&) override {
        switch (r_.below(3)) {
          case 0: return gold_;
          case 1: return "maybe " + gold_ + " " + random_text(r_, 6);
          default: return random_text(r_, 8);
        }
      }

     private:
      SeedState& r_;
      std::string gold_;
    } system(answer_rng, k.gold);

    const auto path = route_case(c, registry);
    const auto r = simulate_session_detailed(c, system, gateway, registry, models, cfg, action_seed);
    const auto& s = r.session;
    const auto n = s.assistant_turns();
    const std::string id = c.case_id + " (" + k.dataset + ")";

    s.validate(cfg.max_turns);
    require(n <= cfg.max_turns && n <= 3, id + ": turn limit exceeded");
    require(s.satisfaction.size() == n && s.actions.size() == n, id + ": scores/actions misaligned");
    for (std::size_t t = 0; t < s.turns.size(); ++t) {
      require(s.turns[t].role == (t % 2 == 0 ? TurnRole::user : TurnRole::assistant), id + ": roles do not alternate");
      require(s.turns[t].ordinal == static_cast<std::int64_t>(t), id + ": ordinals not dense");
    }
    for (std::size_t t = 0; t < n; ++t) {
      if (!is_long_output(c.format)) require(!s.actions[t].copied, id + ": copy on a short-output format");
    }
    switch (s.terminated_by) {
      case Termination::turn_limit:
        ++stats.limits;
        require(n == cfg.max_turns, id + ": turn_limit before the limit");
        require(!r.error, id + ": turn_limit with an error");
        if (path.kind == PathKind::metric_direct) {
          for (const auto& sc : s.satisfaction) require(sc.value() < 6, id + ": satisfied but not ended");
        }
        break;
      case Termination::simulator_end:
        ++stats.ends;
        require(!r.error, id + ": simulator_end with an error");
        if (path.kind == PathKind::metric_direct) {
          require(s.satisfaction.back().value() >= 6, id + ": ended while unsatisfied");
          for (std::size_t t = 0; t + 1 < n; ++t) require(s.satisfaction[t].value() < 6, id + ": late end");
        } else {
          require(n < cfg.max_turns, id + ": verdict requested on the final turn");
        }
        break;
      case Termination::error:
        ++stats.errors;
        require(r.error.has_value(), id + ": error termination without a code");
        require(path.kind == PathKind::llm_simulated, id + ": error on the metric path");
        require(s.turns.back().role == TurnRole::user, id + ": unscored assistant turn kept");
        break;
    }
    if (path.kind == PathKind::metric_direct) {
      require(s.turns.back().role == TurnRole::user, id + ": metric path must close with templated feedback");
    }
    all += serialize_session(s);
    all.push_back('\n');
  }
  stats.digest = text::sha256_hex(all);
  return stats;
}

std::string ac7_sessions() {
  const auto a = run_session_suite(5);
  const auto b = run_session_suite(5);
  require(a.digest == b.digest, "replay under a fixed seed is not byte-identical");
  const auto c = run_session_suite(6);
  require(c.digest != a.digest, "action seed has no effect on the log");
  require(a.ends > 0 && a.limits > 0 && a.errors > 0, "randomized suite did not exercise every termination");
  return "1000 sessions: " + std::to_string(a.ends) + " simulator_end, " + std::to_string(a.limits) +
         " turn_limit, " + std::to_string(a.errors) + " error; replay digest " + a.digest.substr(0, 12);
}

// ---------------------------------------------------------------------------
// AC8-AC11: memory and metrics

std::string ac8_memory() {
  auto script = std::make_shared<MockScript>();
  Gateway gateway(role_profile(), std::make_shared<MockTransport>(script));
  SeedState rng(808);
  for (int trial = 0; trial < 100; ++trial) {
    TaskCase c;
    c.case_id = "c" + std::to_string(trial);
    c.dataset_id = "d";
    c.query = "q";
    std::size_t messages = 0;
    const auto sessions = 1 + rng.below(6);
    for (std::size_t s = 0; s < sessions; ++s) {
      ContextSession cs{"s" + std::to_string(s), {}};
      for (auto m = 1 + rng.below(5); m > 0; --m, ++messages) cs.messages.push_back(random_text(rng, 5));
      c.context.push_back(cs);
    }
    std::vector<FeedbackSession> log;
    std::size_t turns = 0;
    for (auto k = 1 + rng.below(4); k > 0; --k) {
      FeedbackSession s;
      s.case_id = "x" + std::to_string(k);
      std::int64_t ord = 0;
      s.turns.push_back({TurnRole::user, random_text(rng, 6), ord++});
      for (auto t = 1 + rng.below(3); t > 0; --t) {
        s.turns.push_back({TurnRole::assistant, random_text(rng, 6), ord++});
        s.turns.push_back({TurnRole::user, random_text(rng, 6), ord++});
        s.satisfaction.emplace_back(5);
        s.actions.push_back({});
      }
      s.terminated_by = Termination::turn_limit;
      turns += s.turns.size();
      log.push_back(std::move(s));
    }
    RetrievalConfig sc, mc;
    mc.granularity = Granularity::message;
    RetrievalMemory by_session(gateway, sc), by_message(gateway, mc);
    require(by_session.ingest_corpus(c) == sessions, "session-granular corpus count");
    require(by_message.ingest_corpus(c) == messages, "message-granular corpus count");
    require(by_session.ingest_sessions(log) == log.size(), "session-granular log count");
    require(by_message.ingest_sessions(log) == turns, "message-granular log count");
    require(by_session.entry_count() == sessions + log.size() && by_message.entry_count() == messages + turns,
            "entry totals");
  }

  double worst = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    const auto n_docs = 1 + rng.below(20);
    std::vector<std::vector<std::string>> toks;
    Bm25Index idx;
    for (std::size_t d = 0; d < n_docs; ++d) {
      const auto doc = random_text(rng, 12);
      toks.push_back(text::index_terms(doc));
      idx.add(doc);
    }
    const auto query = random_text(rng, 4);
    const auto expected = oracle::bm25(toks, text::index_terms(query));
    std::vector<std::size_t> order;
    for (std::size_t d = 0; d < n_docs; ++d) {
      if (expected[d] > 0.0) order.push_back(d);
    }
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return expected[a] > expected[b]; });
    const auto hits = idx.search(query, n_docs);
    require(hits.size() == order.size(), "BM25 hit count differs from oracle");
    for (std::size_t i = 0; i < hits.size(); ++i) {
      const double d = std::abs(hits[i].score - expected[hits[i].index]);
      worst = std::max(worst, d);
      require(d <= 1e-9, "BM25 score differs from oracle");
      require(std::abs(hits[i].score - expected[order[i]]) <= 1e-9, "BM25 ranking differs from oracle");
    }
  }
  return "100 granularity fixtures, 500 BM25 corpora, max |diff| " + fmt("%.1e", worst);
}

std::string ac9_backoff() {
  SeedState rng(909);
  const auto count = whitespace_token_counter();
  std::size_t trimmed = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<MemoryEntry> cands;
    for (auto n = rng.below(9); n > 0; --n) cands.push_back({"", random_text(rng, 30), EntrySource::corpus, {}, {}, ""});
    const auto query = random_text(rng, 10);
    const std::size_t top_k = 1 + rng.below(8);
    const std::size_t budget = count(assemble_prompt({}, query)) + rng.below(120);
    std::size_t best = 0;
    for (std::size_t k = 0; k <= std::min(top_k, cands.size()); ++k) {
      const std::vector<MemoryEntry> head(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(k));
      if (count(assemble_prompt(head, query)) <= budget) best = k;
    }
    const auto got = fit_memories(cands, query, top_k, budget, count);
    require(got == best, "trial " + std::to_string(trial) + ": fit " + std::to_string(got) + ", brute force " +
                             std::to_string(best));
    trimmed += got < std::min(top_k, cands.size());
  }
  return "200 fixtures, " + std::to_string(trimmed) + " needed backoff";
}

std::string ac10_metrics() {
  SeedState rng(1010);
  const std::vector<std::string> alphabet = {"a", "b", "c", "d", "e"};
  for (int trial = 0; trial < 1000; ++trial) {
    std::string p, g;
    for (auto n = rng.below(120); n > 0; --n) p += alphabet[rng.below(alphabet.size())] + " ";
    for (auto n = rng.below(120); n > 0; --n) g += alphabet[rng.below(alphabet.size())] + " ";
    const auto pt = text::tokenize(p), gt = text::tokenize(g);
    const double l = static_cast<double>(oracle::lcs_dp(pt, gt));
    double want = pt.empty() && gt.empty() ? 1.0 : 0.0;
    if (l > 0) {
      const double prec = l / static_cast<double>(pt.size()), rec = l / static_cast<double>(gt.size());
      want = 2 * prec * rec / (prec + rec);
    }
    const double got = rouge_l(p, g);
    require(std::abs(got - want) <= 1e-12, "rouge_l differs from DP oracle on trial " + std::to_string(trial));
    for (double v : {got, token_f1(p, g), meteor_simplified(p, g)}) require(v >= 0.0 && v <= 1.0, "metric outside [0,1]");
  }
  const std::vector<std::tuple<std::string, std::string, double>> f1 = {
      {"the cat sat", "the cat sat on the mat", 2.0 / 3.0}, {"a a b", "a b b", 2.0 / 3.0},
      {"The Cat!", "the cat", 1.0},                          {"dog", "cat", 0.0}};
  for (const auto& [p, g, want] : f1) require(token_f1(p, g) == want, "token_f1 fixture '" + p + "'");
  const std::vector<std::tuple<std::string, std::string, double>> meteor = {
      {"the cat sat on the mat", "the cat sat on the mat", 431.0 / 432.0},
      {"the cat sat", "the cat sat on the mat", 265.0 / 513.0},
      {"mat the on", "the cat sat on the mat", 5.0 / 19.0},
      {"the mat the cat", "the cat sat on the mat", 10.0 / 29.0}};
  for (const auto& [p, g, want] : meteor) require(meteor_simplified(p, g) == want, "meteor fixture '" + p + "'");
  return "1000 LCS pairs match DP; 8 hand-derived fixtures exact";
}

std::string ac11_aggregation() {
  SeedState rng(1111);
  for (int i = 0; i < 10000; ++i) {
    const double lo = rng.uniform() * 10 - 5, hi = lo + rng.uniform() * 3;
    const double x = rng.uniform() * 20 - 10;
    for (auto dir : {Direction::higher_better, Direction::lower_better}) {
      const double v = min_max_normalize(x, {lo, hi}, dir);
      require(v >= 0.0 && v <= 1.0, "min-max output outside [0,1]");
    }
  }

  const auto dir = fs::temp_directory_path() / "feedbench_acceptance_anchors";
  fs::remove_all(dir);
  fs::create_directories(dir);
  NormalizationAnchors a;
  a.set("locomo", {0.125, 0.875});
  a.set("nfcats", {1.0 / 3.0, 4.75});
  a.save((dir / "anchors.json").string());
  std::string first_hash;
  std::vector<double> first_values;
  for (int restart = 0; restart < 3; ++restart) {
    const auto loaded = NormalizationAnchors::load((dir / "anchors.json").string());
    std::vector<double> values;
    for (double x : {0.0, 0.3, 0.7, 1.0}) values.push_back(min_max_normalize(x, loaded.at("locomo")));
    for (double x : {1.0, 2.2, 4.75}) values.push_back(min_max_normalize(x, loaded.at("nfcats")));
    if (restart == 0) {
      first_hash = loaded.hash();
      first_values = values;
      loaded.save((dir / "anchors.json").string());
    }
    require(loaded.hash() == first_hash && loaded.hash() == a.hash(), "anchor hash changed across restarts");
    require(values == first_values, "normalized values changed across restarts");
  }
  fs::remove_all(dir);

  double worst = 0.0;
  for (int g = 0; g < 500; ++g) {
    std::vector<double> v(2 + rng.below(60));
    for (auto& x : v) x = rng.uniform() * 100 - 50;
    const auto z = z_scores(v);
    double mean = 0.0, var = 0.0;
    for (double x : z) mean += x;
    mean /= static_cast<double>(z.size());
    for (double x : z) var += (x - mean) * (x - mean);
    const double sd = std::sqrt(var / static_cast<double>(z.size()));
    worst = std::max({worst, std::abs(mean), std::abs(sd - 1.0)});
    require(std::abs(mean) <= 1e-9 && std::abs(sd - 1.0) <= 1e-9, "z-score group is not standardized");
  }
  const auto z = z_scores({1, 2, 3});
  require(std::abs(z[0] + 1.2247) <= 1e-4 && std::abs(z[1]) <= 1e-4 && std::abs(z[2] - 1.2247) <= 1e-4,
          "z of {1,2,3} is " + fmt("%.6f", z[0]) + fmt(", %.6f", z[1]) + fmt(", %.6f", z[2]));
  return "z{1,2,3} = " + fmt("%.4f", z[0]) + fmt(", %.4f", z[1]) + fmt(", %.4f", z[2]) + "; 500 groups within " +
         fmt("%.1e", worst) + "; anchors stable over 3 reloads";
}

// ---------------------------------------------------------------------------
// AC12-AC13: protocols and the end-to-end run

std::string ac12_protocols() {
  auto spec = load_experiment_spec((kFixtures / "experiment.json").string());
  const auto off = run_experiment(spec, fixture_transport());
  spec.protocol = Protocol::stepwise_off_policy;
  spec.batch_size = off.result.sessions.size();
  const auto step = run_experiment(spec, fixture_transport());
  require(step.result.steps.size() == 1, "stepwise run did not use a single batch");
  require(off.final_report().hash() == step.final_report().hash(), "single-batch stepwise report hash differs");

  require(code_of([] {
            run_experiment(load_experiment_spec((kFixtures / "experiment_leak.json").string()), fixture_transport());
          }) == ErrorCode::test_leak,
          "leak fixture did not abort with TestLeak");

  const auto cases = load_cases((kFixtures / "cases.jsonl").string());
  const auto split = build_partition(cases, spec.partition);
  std::vector<FeedbackSession> valid = off.result.sessions;
  SeedState rng(1212);
  for (int trial = 0; trial < 100; ++trial) {
    auto log = valid;
    FeedbackSession leak = log[rng.below(log.size())];
    leak.case_id = split.test[rng.below(split.test.size())].case_id;
    log.insert(log.begin() + static_cast<std::ptrdiff_t>(rng.below(log.size() + 1)), leak);
    require(code_of([&] { import_feedback_log(log, split); }) == ErrorCode::test_leak, "randomized leak not caught");
  }
  return "report hash " + off.final_report().hash().substr(0, 16) + " for both; 101 leaked logs rejected";
}

std::string ac13_end_to_end() {
  auto spec = load_experiment_spec((kFixtures / "experiment.json").string());
  const auto a = run_experiment(spec, fixture_transport());
  const auto b = run_experiment(spec, fixture_transport());
  require(a.final_report().hash() == b.final_report().hash(), "report hash is not deterministic");

  const auto& stats = a.partition.at("datasets");
  require(stats.size() == 5, "partition does not cover 5 datasets");
  for (const auto& d : stats) {
    const auto sampled = d.at("sampled").get<std::size_t>();
    require(sampled == std::min<std::size_t>(10, d.at("available").get<std::size_t>()), "cap not honored");
    require(d.at("test").get<std::size_t>() == 2 && d.at("train").get<std::size_t>() == 8, "split is not 4:1");
  }
  require(a.result.timing.size() > 0 && a.manifest.timing.avg_memory_time, "BM25 run has no memory timing");

  spec.system = "Vanilla";
  const auto v = run_experiment(spec, fixture_transport());
  for (const auto& t : v.result.timing) {
    require(!t.memory_time, "Vanilla has a memory_time record");
    require(t.predict_time.has_value(), "Vanilla lacks predict_time");
  }
  require(!v.manifest.timing.avg_memory_time && v.manifest.timing.predict_samples == 10, "Vanilla timing summary");
  const auto& sys = a.final_report().systems.front();
  return "hash " + a.final_report().hash().substr(0, 16) + ", " + sys.system + fmt(" minmax %.4f", sys.overall_minmax) +
         fmt(", mem %.2es", *a.manifest.timing.avg_memory_time) + fmt(", predict %.2es", *a.manifest.timing.avg_predict_time) +
         "; Vanilla memory time absent";
}

struct Criterion {
  const char* id;
  const char* name;
  double limit_s;
  std::function<std::string()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {"AC1", "probability table reproduction", 1, ac1_table},
      {"AC2", "global-rate identity", 1, ac2_identity},
      {"AC3", "target derivation", 1, ac3_targets},
      {"AC4", "calibration oracle", 10, ac4_oracle},
      {"AC5", "F1/binary mappings", 1, ac5_mappings},
      {"AC6", "sampler statistics", 30, ac6_sampler},
      {"AC7", "session state machine", 60, ac7_sessions},
      {"AC8", "memory granularity and BM25", 30, ac8_memory},
      {"AC9", "backoff correctness", 10, ac9_backoff},
      {"AC10", "metrics", 30, ac10_metrics},
      {"AC11", "aggregation", 5, ac11_aggregation},
      {"AC12", "protocol equivalence and leakage", 30, ac12_protocols},
      {"AC13", "end-to-end mock run", 60, ac13_end_to_end},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    std::string detail;
    bool ok = true;
    try {
      detail = c.run();
    } catch (const std::exception& e) {
      ok = false;
      detail = e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (ok && secs > c.limit_s) {
      ok = false;
      detail += fmt("; runtime over the %.0fs limit", c.limit_s);
    }
    failed += ok ? 0 : 1;
    std::cout << (ok ? "[PASS] " : "[FAIL] ") << c.id << " " << c.name << ": " << detail << fmt(" (%.3fs)", secs)
              << std::endl;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria met"
            << std::endl;
  return failed == 0 ? 0 : 1;
}
