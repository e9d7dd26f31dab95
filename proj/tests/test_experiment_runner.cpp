#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "mocks.hpp"

using namespace feedbench;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = FIXTURE_DIR;

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::invalid_argument;
}

std::shared_ptr<MockTransport> fixture_transport() {
  std::ifstream in(kFixtures / "mock_script.json");
  return std::make_shared<MockTransport>(mock_script_from_json(nlohmann::json::parse(in)));
}

ExperimentSpec fixture_spec(const std::string& file = "experiment.json") {
  return load_experiment_spec((kFixtures / file).string());
}

/// Gateway, registry and models bundled for the lower-level runners.
struct Harness {
  std::shared_ptr<MockTransport> transport = fixture_transport();
  Gateway gateway{testkit::role_profile(), transport};
  DatasetRegistry registry = DatasetRegistry::builtin();
  ActionModelSet models = ActionModelSet::calibrate({});
  RunContext ctx{gateway, registry, models, SimulatorConfig{}, ScoringServices{&gateway, 2}, 2, 7};

  Split split() const {
    Partition p{"synthetic", {"locomo", "dialsim-friends", "nfcats", "writingprompts", "scitechnews"}, 10, 0.2, 11};
    return build_partition(load_cases((kFixtures / "cases.jsonl").string()), p);
  }
};

std::string echo_query(const TaskCase& c, const Dialog&) { return "about " + c.query; }

}  // namespace

TEST(parallel_for, visits_every_index_once_and_rethrows) {
  for (std::size_t workers : {1u, 3u, 16u}) {
    std::vector<int> hits(50, 0);
    parallel_for(hits.size(), workers, [&](std::size_t i) { ++hits[i]; });
    EXPECT_EQ(std::count(hits.begin(), hits.end(), 1), 50);
  }
  EXPECT_THROW(parallel_for(10, 4, [](std::size_t i) {
                 if (i == 7) throw std::runtime_error("x");
               }),
               std::runtime_error);
  parallel_for(0, 4, [](std::size_t) { FAIL(); });
}

TEST(spec, fixture_parses_with_resolved_paths) {
  const auto s = fixture_spec();
  EXPECT_EQ(s.protocol, Protocol::off_policy);
  EXPECT_EQ(s.system, "BM25-S");
  EXPECT_EQ(s.partition.cap, 10u);
  EXPECT_EQ(s.partition.seed, 11u);
  EXPECT_EQ(s.seeds.action, 13u);
  EXPECT_EQ(fs::path(s.cases_path), kFixtures / "cases.jsonl");
  EXPECT_EQ(s.gateway.bindings.at(Role::judge), "judge");
  EXPECT_EQ(s.gateway.retry.max_attempts, 2);
}

TEST(spec, presets_and_errors) {
  auto j = nlohmann::json::parse(R"({"partition": "siso", "cases": "c.jsonl", "gateway": {"model": "m"},
                                    "protocol": "on_policy", "steps": 2, "seeds": {"split": 5}})");
  const auto s = experiment_spec_from_json(j, "/data");
  EXPECT_EQ(s.partition.datasets, partition_presets().at("siso"));
  EXPECT_EQ(s.partition.seed, 5u);
  EXPECT_EQ(s.cases_path, "/data/c.jsonl");
  EXPECT_EQ(*s.steps, 2u);

  auto bad = j;
  bad["protocol"] = "sideways";
  EXPECT_EQ(code_of([&] { experiment_spec_from_json(bad); }), ErrorCode::config_error);
  bad = j;
  bad.erase("cases");
  EXPECT_EQ(code_of([&] { experiment_spec_from_json(bad); }), ErrorCode::config_error);
  bad = j;
  bad["batch_size"] = 0;
  EXPECT_EQ(code_of([&] { experiment_spec_from_json(bad); }), ErrorCode::config_error);
  bad = j;
  bad["gateway"] = nlohmann::json::object();
  EXPECT_EQ(code_of([&] { experiment_spec_from_json(bad); }), ErrorCode::config_error);
  EXPECT_EQ(code_of([] { load_experiment_spec("/nonexistent/spec.json"); }), ErrorCode::config_error);
}

TEST(timing, summary_skips_absent_values) {
  const auto s = summarize_timing({{"a", std::nullopt, 2.0}, {"b", 1.0, std::nullopt}, {"c", 3.0, 4.0}});
  EXPECT_DOUBLE_EQ(*s.avg_memory_time, 2.0);
  EXPECT_DOUBLE_EQ(*s.avg_predict_time, 3.0);
  EXPECT_EQ(s.memory_samples, 2u);
  const auto none = summarize_timing({{"a", std::nullopt, 1.0}});
  EXPECT_FALSE(none.avg_memory_time);
  EXPECT_FALSE(to_json(TimingRecord{"a", std::nullopt, 1.0}).contains("memory_time") &&
               !to_json(TimingRecord{"a", std::nullopt, 1.0})["memory_time"].is_null());
}

TEST(evaluation_pass, failing_case_is_isolated) {
  Harness h;
  const auto split = h.split();
  const auto victim = split.test[3].case_id;
  testkit::ScriptedSystem sys([&](const TaskCase& c, const Dialog& d) -> std::string {
    if (c.case_id == victim) fail(ErrorCode::system_failure, "boom");
    return echo_query(c, d);
  });
  const auto pass = evaluate_test_set(sys, split.test, h.ctx);
  ASSERT_EQ(pass.failures.size(), 1u);
  EXPECT_EQ(pass.failures[0].case_id, victim);
  EXPECT_EQ(pass.failures[0].code, ErrorCode::system_failure);
  std::size_t failed = 0;
  for (const auto& s : pass.scores) {
    failed += s.failed;
    EXPECT_FALSE(s.case_id.empty());
  }
  EXPECT_EQ(failed, 1u);
  EXPECT_EQ(pass.scores.size(), split.test.size());
  EXPECT_EQ(sys.calls(), split.test.size());
}

TEST(evaluation_pass, memory_writes_during_evaluation_are_rejected) {
  Harness h;
  const auto split = h.split();
  testkit::ScriptedSystem* self = nullptr;
  testkit::ScriptedSystem sys([&](const TaskCase& c, const Dialog& d) {
    self->ingest_sessions({FeedbackSession{}});
    return echo_query(c, d);
  });
  self = &sys;
  h.ctx.parallelism = 1;
  EXPECT_EQ(code_of([&] { evaluate_test_set(sys, split.test, h.ctx); }), ErrorCode::system_failure);
}

TEST(protocols, off_policy_ingests_corpus_then_log_once) {
  Harness h;
  const auto split = h.split();
  testkit::ScriptedSystem backbone(echo_query, false);
  const auto log = generate_feedback_log(split.train, backbone, h.ctx);
  ASSERT_EQ(log.size(), split.train.size());
  testkit::ScriptedSystem sys(echo_query);
  const auto r = run_off_policy(split, log, sys, h.ctx, "synthetic");
  ASSERT_EQ(r.steps.size(), 1u);
  EXPECT_FALSE(r.baseline);
  EXPECT_EQ(r.steps[0].ingested_sessions, log.size());
  EXPECT_EQ(sys.ingested().size(), log.size());
  EXPECT_EQ(r.steps[0].scores.size(), split.test.size());
  EXPECT_EQ(r.system, "Scripted");
}

TEST(protocols, single_batch_stepwise_equals_off_policy) {
  Harness h;
  const auto split = h.split();
  testkit::ScriptedSystem backbone(echo_query, false);
  const auto log = generate_feedback_log(split.train, backbone, h.ctx);

  testkit::ScriptedSystem a(echo_query), b(echo_query);
  const auto off = run_off_policy(split, log, a, h.ctx, "synthetic");
  const auto step = run_stepwise_off_policy(split, log, b, h.ctx, "synthetic", log.size());
  const auto anchors = anchors_from_result(off);
  EXPECT_EQ(step_reports(off, split.test, anchors).back().hash(), step_reports(step, split.test, anchors).back().hash());

  testkit::ScriptedSystem c(echo_query);
  const auto many = run_stepwise_off_policy(split, log, c, h.ctx, "synthetic", 7);
  EXPECT_EQ(many.steps.size(), (log.size() + 6) / 7);
  EXPECT_EQ(many.steps.back().ingested_sessions, log.size() - 7 * (many.steps.size() - 1));
  EXPECT_EQ(step_reports(many, split.test, anchors).size(), many.steps.size());
}

TEST(protocols, empty_log_gives_only_a_baseline) {
  Harness h;
  testkit::ScriptedSystem sys(echo_query);
  const auto r = run_stepwise_off_policy(h.split(), {}, sys, h.ctx, "synthetic", 4);
  EXPECT_TRUE(r.baseline);
  EXPECT_TRUE(r.steps.empty());
  EXPECT_EQ(code_of([&] { run_stepwise_off_policy(h.split(), {}, sys, h.ctx, "synthetic", 0); }),
            ErrorCode::config_error);
}

TEST(protocols, leaked_log_aborts_before_any_work) {
  Harness h;
  const auto split = h.split();
  FeedbackSession leak;
  leak.case_id = split.test.front().case_id;
  leak.dataset = split.test.front().dataset_id;
  testkit::ScriptedSystem sys(echo_query);
  EXPECT_EQ(code_of([&] { run_off_policy(split, {leak}, sys, h.ctx, "synthetic"); }), ErrorCode::test_leak);
  EXPECT_EQ(code_of([&] { run_stepwise_off_policy(split, {leak}, sys, h.ctx, "synthetic", 1); }),
            ErrorCode::test_leak);
  EXPECT_EQ(sys.entry_count(), 0u);
  EXPECT_EQ(sys.calls(), 0u);
}

TEST(protocols, error_sessions_are_not_ingested) {
  FeedbackSession ok, bad;
  ok.case_id = "a";
  ok.terminated_by = Termination::simulator_end;
  bad.case_id = "b";
  bad.terminated_by = Termination::error;
  testkit::ScriptedSystem sys(echo_query);
  const auto t = ingest_batch(sys, {ok, bad});
  ASSERT_EQ(t.size(), 1u);
  EXPECT_EQ(t[0].case_id, "a");
  EXPECT_TRUE(t[0].memory_time);
  testkit::ScriptedSystem vanilla(echo_query, false);
  EXPECT_TRUE(ingest_batch(vanilla, {ok}).empty());
}

TEST(protocols, on_policy_steps_over_shuffled_batches) {
  Harness h;
  const auto split = h.split();
  testkit::ScriptedSystem sys(echo_query);
  const auto r = run_on_policy(split, sys, h.ctx, "synthetic", 16, 2, 12);
  ASSERT_EQ(r.steps.size(), 2u);
  EXPECT_EQ(r.sessions.size(), 32u);
  std::set<std::string> ids;
  for (const auto& s : r.sessions) ids.insert(s.case_id);
  EXPECT_EQ(ids.size(), 32u);
  const auto batches = training_batches(split.train, 16, 12);
  EXPECT_EQ(r.sessions.front().case_id, batches[0].front().case_id);
  EXPECT_EQ(sys.ingested().size(), r.steps[0].ingested_sessions + r.steps[1].ingested_sessions);
  EXPECT_LT(r.steps[0].entry_count, r.steps[1].entry_count);

  testkit::ScriptedSystem all(echo_query);
  EXPECT_EQ(run_on_policy(split, all, h.ctx, "synthetic", 16, std::nullopt, 12).steps.size(), 3u);
}

TEST(run_experiment, fixture_run_is_deterministic) {
  const auto spec = fixture_spec();
  const auto a = run_experiment(spec, fixture_transport());
  const auto b = run_experiment(spec, fixture_transport());
  EXPECT_EQ(a.final_report().hash(), b.final_report().hash());
  EXPECT_EQ(a.manifest.report_hashes, b.manifest.report_hashes);
  EXPECT_EQ(a.result.sessions.size(), 40u);
  EXPECT_EQ(a.final_report().systems.front().cases, 10u);
  EXPECT_EQ(a.final_report().systems.front().system, "BM25-S");
  EXPECT_EQ(a.partition.at("hash"), b.partition.at("hash"));
  for (const auto& [d, raw] : a.final_report().systems.front().dataset_raw_mean) EXPECT_TRUE(std::isfinite(raw));
  EXPECT_TRUE(a.manifest.timing.avg_memory_time);
  EXPECT_EQ(a.manifest.timing.predict_samples, 10u);
}

TEST(run_experiment, vanilla_has_no_memory_time) {
  auto spec = fixture_spec();
  spec.system = "Vanilla";
  const auto o = run_experiment(spec, fixture_transport());
  EXPECT_FALSE(o.manifest.timing.avg_memory_time);
  ASSERT_EQ(o.result.timing.size(), 10u);
  for (const auto& t : o.result.timing) {
    EXPECT_FALSE(t.memory_time);
    EXPECT_TRUE(t.predict_time);
  }
}

TEST(run_experiment, stepwise_single_batch_matches_off_policy_end_to_end) {
  auto spec = fixture_spec();
  const auto off = run_experiment(spec, fixture_transport());
  spec.protocol = Protocol::stepwise_off_policy;
  spec.batch_size = 1000;
  const auto step = run_experiment(spec, fixture_transport());
  EXPECT_EQ(off.final_report().hash(), step.final_report().hash());
}

TEST(run_experiment, leak_fixture_aborts) {
  EXPECT_EQ(code_of([] { run_experiment(fixture_spec("experiment_leak.json"), fixture_transport()); }),
            ErrorCode::test_leak);
}

TEST(run_experiment, anchors_file_fixes_the_scale) {
  const auto dir = fs::temp_directory_path() / "feedbench_anchor_test";
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto spec = fixture_spec();
  spec.anchors_path = (dir / "anchors.json").string();
  const auto first = run_experiment(spec, fixture_transport());
  persist_outcome(first, spec, dir / "run1");
  ASSERT_TRUE(fs::exists(spec.anchors_path));
  const auto second = run_experiment(spec, fixture_transport());
  EXPECT_EQ(first.anchors.hash(), second.anchors.hash());
  EXPECT_EQ(first.final_report().hash(), second.final_report().hash());

  for (const char* f : {"manifest.json", "partition.json", "anchors.json", "report.json", "steps.json", "report.txt",
                        "timing.jsonl", "sessions.jsonl"}) {
    EXPECT_TRUE(fs::exists(dir / "run1" / f)) << f;
  }
  std::ifstream report(dir / "run1" / "report.json");
  EXPECT_EQ(AggregateReport::from_json(nlohmann::json::parse(report)).hash(), first.final_report().hash());
  EXPECT_EQ(read_sessions_jsonl((dir / "run1" / "sessions.jsonl").string()).size(), 40u);
  fs::remove_all(dir);
}
