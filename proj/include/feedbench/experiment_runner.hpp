#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <unordered_set>
#include <vector>

#include "feedbench/action_model.hpp"
#include "feedbench/errors.hpp"
#include "feedbench/evaluation.hpp"
#include "feedbench/llm_gateway.hpp"
#include "feedbench/memory_systems.hpp"
#include "feedbench/session.hpp"
#include "feedbench/task_provider.hpp"
#include "feedbench/user_simulator.hpp"
#include "json.hpp"

namespace feedbench {

enum class Protocol { off_policy, on_policy, stepwise_off_policy };

inline std::string_view to_string(Protocol p) {
  switch (p) {
    case Protocol::off_policy: return "off_policy";
    case Protocol::on_policy: return "on_policy";
    case Protocol::stepwise_off_policy: return "stepwise_off_policy";
  }
  return "off_policy";
}

inline std::optional<Protocol> parse_protocol(std::string_view s) {
  if (s == "off_policy") return Protocol::off_policy;
  if (s == "on_policy") return Protocol::on_policy;
  if (s == "stepwise_off_policy") return Protocol::stepwise_off_policy;
  return std::nullopt;
}

struct Seeds {
  std::uint64_t split = 42;
  std::uint64_t shuffle = 42;
  std::uint64_t action = 42;
};

struct ExperimentSpec {
  Protocol protocol = Protocol::off_policy;
  Partition partition;
  std::string system = "Vanilla";
  std::string cases_path;
  std::string feedback_log_path;  // empty: generate with the backbone
  std::string anchors_path;       // empty or missing file: derive from this run
  std::string output_dir;
  std::size_t batch_size = 100;
  std::size_t max_turns = 3;
  std::optional<std::size_t> steps;
  std::size_t parallelism = 1;
  Seeds seeds;
  RetrievalConfig retrieval;
  GatewayProfile gateway;
  nlohmann::json action_model = nlohmann::json::object();
  nlohmann::json datasets = nlohmann::json::object();
  nlohmann::json raw = nlohmann::json::object();

  void validate() const {
    if (batch_size < 1) fail(ErrorCode::config_error, "batch_size must be >= 1");
    if (max_turns < 1) fail(ErrorCode::config_error, "max_turns must be >= 1");
    if (parallelism < 1) fail(ErrorCode::config_error, "parallelism must be >= 1");
    if (steps && *steps < 1) fail(ErrorCode::config_error, "steps must be >= 1");
    retrieval.validate();
  }
};

/// Parses an experiment spec. Relative paths resolve against `base_dir`.
inline ExperimentSpec experiment_spec_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  ExperimentSpec s;
  s.raw = j;
  auto path_of = [&](const std::string& key) -> std::string {
    if (!j.contains(key)) return "";
    std::filesystem::path p = j[key].get<std::string>();
    if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
    return p.string();
  };
  try {
    const auto protocol = parse_protocol(j.value("protocol", std::string("off_policy")));
    if (!protocol) fail(ErrorCode::config_error, "protocol must be off_policy, on_policy or stepwise_off_policy");
    s.protocol = *protocol;
    if (j.contains("seeds")) {
      const auto& sj = j["seeds"];
      s.seeds.split = sj.value("split", s.seeds.split);
      s.seeds.shuffle = sj.value("shuffle", s.seeds.shuffle);
      s.seeds.action = sj.value("action", s.seeds.action);
    }
    const auto& pj = j.at("partition");
    if (pj.is_string()) {
      s.partition = partition_preset(pj.get<std::string>(), s.seeds.split);
    } else {
      s.partition.name = pj.at("name").get<std::string>();
      s.partition.datasets = pj.at("datasets").get<std::vector<std::string>>();
      s.partition.cap = pj.value("cap", s.partition.cap);
      s.partition.test_fraction = pj.value("test_fraction", s.partition.test_fraction);
      s.partition.seed = s.seeds.split;
    }
    s.system = j.value("system", s.system);
    s.cases_path = path_of("cases");
    if (s.cases_path.empty()) fail(ErrorCode::config_error, "spec needs a 'cases' path");
    s.feedback_log_path = path_of("feedback_log");
    s.anchors_path = path_of("anchors");
    s.output_dir = path_of("output_dir");
    s.batch_size = j.value("batch_size", s.batch_size);
    s.max_turns = j.value("max_turns", s.max_turns);
    if (j.contains("steps") && !j["steps"].is_null()) s.steps = j["steps"].get<std::size_t>();
    s.parallelism = j.value("parallelism", s.parallelism);
    if (j.contains("retrieval")) {
      s.retrieval.top_k = j["retrieval"].value("top_k", s.retrieval.top_k);
      s.retrieval.context_token_budget = j["retrieval"].value("context_token_budget", s.retrieval.context_token_budget);
    }
    s.gateway = gateway_profile_from_json(j.value("gateway", nlohmann::json::object()));
    s.action_model = j.value("action_model", nlohmann::json::object());
    s.datasets = j.value("datasets", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::config_error, std::string("experiment spec: ") + e.what());
  }
  s.validate();
  return s;
}

inline ExperimentSpec load_experiment_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::config_error, "cannot open spec " + path);
  auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) fail(ErrorCode::config_error, "spec is not valid JSON: " + path);
  return experiment_spec_from_json(j, std::filesystem::path(path).parent_path());
}

// ---------------------------------------------------------------------------
// Timing

struct TimingRecord {
  std::string case_id;
  std::optional<double> memory_time;   // seconds; absent for systems without memory
  std::optional<double> predict_time;  // seconds
};

struct TimedSection {
  std::string label;
  double seconds = 0.0;
};

template <typename F>
TimedSection time_section(std::string label, F&& thunk) {
  const auto start = std::chrono::steady_clock::now();
  std::forward<F>(thunk)();
  const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
  return {std::move(label), elapsed.count()};
}

struct TimingSummary {
  std::optional<double> avg_memory_time;
  std::optional<double> avg_predict_time;
  std::size_t memory_samples = 0;
  std::size_t predict_samples = 0;
};

inline TimingSummary summarize_timing(const std::vector<TimingRecord>& records) {
  TimingSummary s;
  double mem = 0.0, pred = 0.0;
  for (const auto& r : records) {
    if (r.memory_time) {
      mem += *r.memory_time;
      ++s.memory_samples;
    }
    if (r.predict_time) {
      pred += *r.predict_time;
      ++s.predict_samples;
    }
  }
  if (s.memory_samples) s.avg_memory_time = mem / static_cast<double>(s.memory_samples);
  if (s.predict_samples) s.avg_predict_time = pred / static_cast<double>(s.predict_samples);
  return s;
}

inline nlohmann::ordered_json to_json(const TimingRecord& r) {
  nlohmann::ordered_json j;
  j["case_id"] = r.case_id;
  j["memory_time"] = r.memory_time ? nlohmann::ordered_json(*r.memory_time) : nlohmann::ordered_json(nullptr);
  j["predict_time"] = r.predict_time ? nlohmann::ordered_json(*r.predict_time) : nlohmann::ordered_json(nullptr);
  return j;
}

// ---------------------------------------------------------------------------
// Execution context

struct RunContext {
  Gateway& gateway;
  const DatasetRegistry& registry;
  const ActionModelSet& models;
  SimulatorConfig simulator;
  ScoringServices scoring;
  std::size_t parallelism = 1;
  std::uint64_t action_seed = 42;
};

/// Runs fn(i) for i in [0, n) on up to `parallelism` threads.
inline void parallel_for(std::size_t n, std::size_t parallelism, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(std::max<std::size_t>(parallelism, 1), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

struct CaseFailure {
  std::string case_id;
  ErrorCode code = ErrorCode::system_failure;
  std::string message;
};

struct EvaluationPass {
  std::vector<MetricScore> scores;
  std::vector<TimingRecord> timing;
  std::vector<CaseFailure> failures;
  std::size_t entries_before = 0;
  std::size_t entries_after = 0;
};

/// Answers and scores every test case. A failing case is flagged and keeps
/// the run going. Entry counts must not change during the pass.
inline EvaluationPass evaluate_test_set(MemorySystem& system, const std::vector<TaskCase>& test, RunContext& ctx) {
  EvaluationPass pass;
  pass.entries_before = system.entry_count();
  pass.scores.resize(test.size());
  pass.timing.resize(test.size());
  std::vector<std::optional<CaseFailure>> failures(test.size());
  parallel_for(test.size(), ctx.parallelism, [&](std::size_t i) {
    const auto& c = test[i];
    std::string response;
    try {
      const auto t = time_section("predict", [&] { response = system.answer(c); });
      pass.timing[i] = {c.case_id, std::nullopt, t.seconds};
      pass.scores[i] = score_case(c, response, ctx.scoring);
    } catch (const Error& e) {
      pass.timing[i].case_id = c.case_id;
      pass.scores[i] = {c.case_id, c.dataset_id, c.eval.metric, 0.0,
                        c.eval.lower_better ? Direction::lower_better : Direction::higher_better, true};
      failures[i] = CaseFailure{c.case_id, e.code(), e.what()};
    }
  });
  for (auto& f : failures) {
    if (f) pass.failures.push_back(std::move(*f));
  }
  pass.entries_after = system.entry_count();
  if (pass.entries_after != pass.entries_before) {
    fail(ErrorCode::system_failure, "memory entry count changed during evaluation");
  }
  return pass;
}

/// Ingests the declarative context of `cases`, once per distinct context.
/// Returns per-case memory timing (empty for systems without memory).
inline std::vector<TimingRecord> ingest_corpora(MemorySystem& system, const std::vector<TaskCase>& cases,
                                                std::unordered_set<std::string>& seen) {
  std::vector<TimingRecord> out;
  if (!system.uses_memory()) return out;
  for (const auto& c : cases) {
    if (c.context.empty()) continue;
    if (!seen.insert(c.context_hash()).second) continue;
    const auto t = time_section("memory", [&] { system.ingest_corpus(c); });
    out.push_back({c.case_id, t.seconds, std::nullopt});
  }
  return out;
}

/// Ingests one batch of sessions; error-terminated sessions are skipped.
/// The batch time is split evenly over the ingested sessions.
inline std::vector<TimingRecord> ingest_batch(MemorySystem& system, const std::vector<FeedbackSession>& batch) {
  std::vector<FeedbackSession> usable;
  for (const auto& s : batch) {
    if (s.terminated_by != Termination::error) usable.push_back(s);
  }
  std::vector<TimingRecord> out;
  if (usable.empty() || !system.uses_memory()) return out;
  const auto t = time_section("memory", [&] { system.ingest_sessions(usable); });
  const double each = t.seconds / static_cast<double>(usable.size());
  for (const auto& s : usable) out.push_back({s.case_id, each, std::nullopt});
  return out;
}

struct StepRecord {
  std::size_t step = 0;
  std::size_t ingested_sessions = 0;
  std::size_t entry_count = 0;
  std::vector<MetricScore> scores;
};

struct ProtocolResult {
  std::string system;
  std::string partition;
  std::optional<StepRecord> baseline;  // evaluation before any session was ingested
  std::vector<StepRecord> steps;
  std::vector<TimingRecord> timing;
  std::vector<CaseFailure> failures;
  std::vector<FeedbackSession> sessions;  // live-generated sessions, if any
};

namespace detail {

inline void absorb(ProtocolResult& r, EvaluationPass&& pass, StepRecord& step) {
  step.scores = std::move(pass.scores);
  for (auto& t : pass.timing) r.timing.push_back(std::move(t));
  for (auto& f : pass.failures) r.failures.push_back(std::move(f));
}

inline std::vector<TaskCase> corpus_cases(const Split& split) {
  std::vector<TaskCase> all = split.train;
  all.insert(all.end(), split.test.begin(), split.test.end());
  return all;
}

}  // namespace detail

/// Simulates one session per case with the given system, in case order.
/// Error sessions are kept in the output and flagged in `failures`.
inline std::vector<FeedbackSession> generate_feedback_log(const std::vector<TaskCase>& cases, MemorySystem& system,
                                                          RunContext& ctx, std::vector<CaseFailure>* failures = nullptr) {
  std::vector<FeedbackSession> out(cases.size());
  std::vector<std::optional<CaseFailure>> errs(cases.size());
  parallel_for(cases.size(), ctx.parallelism, [&](std::size_t i) {
    const auto& c = cases[i];
    try {
      auto r = simulate_session_detailed(c, system, ctx.gateway, ctx.registry, ctx.models, ctx.simulator,
                                         ctx.action_seed);
      if (r.error) errs[i] = CaseFailure{c.case_id, *r.error, r.error_message};
      out[i] = std::move(r.session);
    } catch (const Error& e) {
      out[i].case_id = c.case_id;
      out[i].dataset = c.dataset_id;
      out[i].turns = {{TurnRole::user, c.query, 0}};
      out[i].terminated_by = Termination::error;
      errs[i] = CaseFailure{c.case_id, e.code(), e.what()};
    }
  });
  if (failures) {
    for (auto& e : errs) {
      if (e) failures->push_back(std::move(*e));
    }
  }
  return out;
}

/// Corpus, then every training session, then one evaluation of the test set.
inline ProtocolResult run_off_policy(const Split& split, const std::vector<FeedbackSession>& log, MemorySystem& system,
                                     RunContext& ctx, const std::string& partition_name) {
  check_log_against_split(log, split.train, split.test);
  ProtocolResult r{system.name(), partition_name, std::nullopt, {}, {}, {}, {}};
  std::unordered_set<std::string> seen;
  for (auto& t : ingest_corpora(system, detail::corpus_cases(split), seen)) r.timing.push_back(std::move(t));
  StepRecord step;
  step.step = 1;
  for (auto& t : ingest_batch(system, log)) r.timing.push_back(std::move(t));
  step.ingested_sessions = log.size();
  step.entry_count = system.entry_count();
  detail::absorb(r, evaluate_test_set(system, split.test, ctx), step);
  r.steps.push_back(std::move(step));
  return r;
}

/// Replays the log in order, `batch_size` sessions per step, evaluating the
/// full test set after each. An empty log gives zero steps and a baseline.
inline ProtocolResult run_stepwise_off_policy(const Split& split, const std::vector<FeedbackSession>& log,
                                              MemorySystem& system, RunContext& ctx, const std::string& partition_name,
                                              std::size_t batch_size) {
  if (batch_size < 1) fail(ErrorCode::config_error, "batch_size must be >= 1");
  check_log_against_split(log, split.train, split.test);
  ProtocolResult r{system.name(), partition_name, std::nullopt, {}, {}, {}, {}};
  std::unordered_set<std::string> seen;
  for (auto& t : ingest_corpora(system, detail::corpus_cases(split), seen)) r.timing.push_back(std::move(t));
  if (log.empty()) {
    StepRecord base;
    base.entry_count = system.entry_count();
    detail::absorb(r, evaluate_test_set(system, split.test, ctx), base);
    r.baseline = std::move(base);
    return r;
  }
  for (std::size_t i = 0, step = 1; i < log.size(); i += batch_size, ++step) {
    const std::vector<FeedbackSession> batch(log.begin() + static_cast<std::ptrdiff_t>(i),
                                             log.begin() + static_cast<std::ptrdiff_t>(std::min(log.size(), i + batch_size)));
    StepRecord rec;
    rec.step = step;
    for (auto& t : ingest_batch(system, batch)) r.timing.push_back(std::move(t));
    rec.ingested_sessions = batch.size();
    rec.entry_count = system.entry_count();
    detail::absorb(r, evaluate_test_set(system, split.test, ctx), rec);
    r.steps.push_back(std::move(rec));
  }
  return r;
}

/// Per step: simulate a shuffled batch of training cases live, ingest the
/// successful sessions, evaluate the full test set.
inline ProtocolResult run_on_policy(const Split& split, MemorySystem& system, RunContext& ctx,
                                    const std::string& partition_name, std::size_t batch_size,
                                    std::optional<std::size_t> max_steps, std::uint64_t shuffle_seed) {
  ProtocolResult r{system.name(), partition_name, std::nullopt, {}, {}, {}, {}};
  std::unordered_set<std::string> seen;
  for (auto& t : ingest_corpora(system, detail::corpus_cases(split), seen)) r.timing.push_back(std::move(t));
  const auto batches = training_batches(split.train, batch_size, shuffle_seed);
  const std::size_t n_steps = max_steps ? std::min(*max_steps, batches.size()) : batches.size();
  for (std::size_t step = 0; step < n_steps; ++step) {
    auto sessions = generate_feedback_log(batches[step], system, ctx, &r.failures);
    StepRecord rec;
    rec.step = step + 1;
    for (auto& t : ingest_batch(system, sessions)) r.timing.push_back(std::move(t));
    rec.ingested_sessions = static_cast<std::size_t>(std::count_if(
        sessions.begin(), sessions.end(), [](const FeedbackSession& s) { return s.terminated_by != Termination::error; }));
    rec.entry_count = system.entry_count();
    detail::absorb(r, evaluate_test_set(system, split.test, ctx), rec);
    r.steps.push_back(std::move(rec));
    for (auto& s : sessions) r.sessions.push_back(std::move(s));
  }
  return r;
}

/// Reports for the baseline (if any) and each step, normalized with `anchors`.
inline std::vector<AggregateReport> step_reports(const ProtocolResult& r, const std::vector<TaskCase>& test,
                                                 const NormalizationAnchors& anchors) {
  std::vector<AggregateReport> out;
  auto one = [&](const StepRecord& s) {
    return aggregate(r.partition, {{r.system, s.scores}}, test, anchors);
  };
  if (r.baseline) out.push_back(one(*r.baseline));
  for (const auto& s : r.steps) out.push_back(one(s));
  return out;
}

/// Anchors from every non-failed score in the run.
inline NormalizationAnchors anchors_from_result(const ProtocolResult& r) {
  std::vector<MetricScore> all;
  if (r.baseline) all.insert(all.end(), r.baseline->scores.begin(), r.baseline->scores.end());
  for (const auto& s : r.steps) all.insert(all.end(), s.scores.begin(), s.scores.end());
  return NormalizationAnchors::from_scores(all);
}

/// Adds anchors for datasets present in `extra` but missing from `base`.
inline NormalizationAnchors complete_anchors(NormalizationAnchors base, const NormalizationAnchors& extra) {
  for (const auto& [d, a] : extra.all()) {
    if (!base.contains(d)) base.set(d, a);
  }
  return base;
}

// ---------------------------------------------------------------------------
// Manifest and persistence

struct RunManifest {
  nlohmann::json spec;
  std::string partition_hash;
  std::string anchors_hash;
  std::vector<nlohmann::ordered_json> step_scores;
  TimingSummary timing;
  std::vector<std::string> report_hashes;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["schema"] = "feedbench.run/1";
    j["spec"] = spec;
    j["partition_hash"] = partition_hash;
    j["anchors_hash"] = anchors_hash;
    j["steps"] = step_scores;
    nlohmann::ordered_json t;
    t["avg_memory_time"] = timing.avg_memory_time ? nlohmann::ordered_json(*timing.avg_memory_time) : nlohmann::ordered_json(nullptr);
    t["avg_predict_time"] = timing.avg_predict_time ? nlohmann::ordered_json(*timing.avg_predict_time) : nlohmann::ordered_json(nullptr);
    t["memory_samples"] = timing.memory_samples;
    t["predict_samples"] = timing.predict_samples;
    t["note"] = "wall-clock averages are indicative when cases run in parallel";
    j["timing"] = t;
    j["report_hashes"] = report_hashes;
    return j;
  }
};

struct ExperimentOutcome {
  ProtocolResult result;
  std::vector<AggregateReport> reports;  // baseline first when present, then one per step
  NormalizationAnchors anchors;
  RunManifest manifest;
  nlohmann::ordered_json partition;

  const AggregateReport& final_report() const {
    if (reports.empty()) fail(ErrorCode::invalid_argument, "run produced no report");
    return reports.back();
  }
};

inline RunManifest build_manifest(const ExperimentSpec& spec, const nlohmann::ordered_json& partition,
                                  const NormalizationAnchors& anchors, const ProtocolResult& r,
                                  const std::vector<AggregateReport>& reports) {
  RunManifest m;
  m.spec = spec.raw;
  m.partition_hash = partition.at("hash").get<std::string>();
  m.anchors_hash = anchors.hash();
  std::size_t idx = 0;
  auto add = [&](const StepRecord& s, const AggregateReport& rep) {
    nlohmann::ordered_json e;
    e["step"] = s.step;
    e["ingested_sessions"] = s.ingested_sessions;
    e["entry_count"] = s.entry_count;
    e["overall_minmax"] = rep.systems.front().overall_minmax;
    e["overall_z"] = rep.systems.front().overall_z;
    m.step_scores.push_back(std::move(e));
  };
  if (r.baseline) add(*r.baseline, reports[idx++]);
  for (const auto& s : r.steps) add(s, reports[idx++]);
  m.timing = summarize_timing(r.timing);
  for (const auto& rep : reports) m.report_hashes.push_back(rep.hash());
  return m;
}

/// Runs a full experiment from a spec: load cases, split, obtain the log,
/// run the protocol, normalize and aggregate.
inline ExperimentOutcome run_experiment(const ExperimentSpec& spec, std::shared_ptr<Transport> transport) {
  spec.validate();
  const auto cases = load_cases(spec.cases_path);
  const auto split = build_partition(cases, spec.partition);
  const auto partition = partition_manifest(spec.partition, split);

  GatewayProfile profile = spec.gateway;
  Gateway gateway(profile, std::move(transport));
  DatasetRegistry registry = DatasetRegistry::builtin();
  registry.merge_json(spec.datasets);
  const auto models = ActionModelSet::calibrate(action_model_config_from_json(spec.action_model));
  SimulatorConfig sim;
  sim.max_turns = spec.max_turns;
  RunContext ctx{gateway, registry, models, sim, ScoringServices{&gateway, 2}, spec.parallelism, spec.seeds.action};

  std::vector<FeedbackSession> log;
  std::vector<CaseFailure> generation_failures;
  if (spec.protocol != Protocol::on_policy) {
    if (!spec.feedback_log_path.empty()) {
      log = import_feedback_log(spec.feedback_log_path, split).sessions;
    } else {
      VanillaSystem backbone(gateway, spec.retrieval.context_token_budget);
      log = generate_feedback_log(split.train, backbone, ctx, &generation_failures);
    }
  }

  auto system = make_system(spec.system, gateway, spec.retrieval);
  ProtocolResult result;
  switch (spec.protocol) {
    case Protocol::off_policy:
      result = run_off_policy(split, log, *system, ctx, spec.partition.name);
      break;
    case Protocol::stepwise_off_policy:
      result = run_stepwise_off_policy(split, log, *system, ctx, spec.partition.name, spec.batch_size);
      break;
    case Protocol::on_policy:
      result = run_on_policy(split, *system, ctx, spec.partition.name, spec.batch_size, spec.steps, spec.seeds.shuffle);
      break;
  }
  if (spec.protocol != Protocol::on_policy && spec.feedback_log_path.empty()) result.sessions = log;
  for (auto& f : generation_failures) result.failures.push_back(std::move(f));

  NormalizationAnchors anchors;
  if (!spec.anchors_path.empty() && std::filesystem::exists(spec.anchors_path)) {
    anchors = NormalizationAnchors::load(spec.anchors_path);
  } else {
    anchors = anchors_from_result(result);
    // datasets whose every case failed still need an anchor
    for (const auto& c : split.test) {
      if (!anchors.contains(c.dataset_id)) anchors.set(c.dataset_id, {0.0, 1.0});
    }
  }
  auto reports = step_reports(result, split.test, anchors);
  auto manifest = build_manifest(spec, partition, anchors, result, reports);
  return ExperimentOutcome{std::move(result), std::move(reports), std::move(anchors), std::move(manifest), partition};
}

/// Writes manifest.json, partition.json, anchors.json, report.json (final),
/// steps.json, report.txt, timing.jsonl and sessions.jsonl (when sessions
/// were generated) into `dir`.
inline void persist_outcome(const ExperimentOutcome& o, const ExperimentSpec& spec, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto write = [&](const std::string& name, const std::string& body) {
    std::ofstream out(dir / name, std::ios::trunc);
    if (!out) fail(ErrorCode::config_error, "cannot write " + (dir / name).string());
    out << body;
  };
  write("manifest.json", o.manifest.to_json().dump(2) + "\n");
  write("partition.json", o.partition.dump(2) + "\n");
  write("anchors.json", o.anchors.to_json().dump(2) + "\n");
  if (!spec.anchors_path.empty() && !std::filesystem::exists(spec.anchors_path)) o.anchors.save(spec.anchors_path);
  write("report.json", o.final_report().to_json().dump(2) + "\n");
  nlohmann::ordered_json steps = nlohmann::ordered_json::array();
  for (const auto& r : o.reports) steps.push_back(r.to_json());
  write("steps.json", steps.dump(2) + "\n");
  write("report.txt", render_partition_table(o.final_report()));
  std::string timing;
  for (const auto& t : o.result.timing) timing += to_json(t).dump() + "\n";
  write("timing.jsonl", timing);
  if (!o.result.sessions.empty()) write_sessions_jsonl((dir / "sessions.jsonl").string(), o.result.sessions);
  if (!o.result.failures.empty()) {
    std::string f;
    for (const auto& x : o.result.failures) {
      f += nlohmann::ordered_json{{"case_id", x.case_id}, {"code", to_string(x.code)}, {"message", x.message}}.dump() + "\n";
    }
    write("failures.jsonl", f);
  }
}

}  // namespace feedbench
