#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "feedbench/feedbench.hpp"
#include "feedbench/http_transport.hpp"

namespace fb = feedbench;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitLeak = 3;
constexpr int kExitGateway = 4;

int exit_code_for(fb::ErrorCode code) {
  switch (code) {
    case fb::ErrorCode::test_leak: return kExitLeak;
    case fb::ErrorCode::gateway_exhausted:
    case fb::ErrorCode::auth_failure:
    case fb::ErrorCode::transport_error: return kExitGateway;
    case fb::ErrorCode::config_error:
    case fb::ErrorCode::invalid_argument:
    case fb::ErrorCode::schema_violation:
    case fb::ErrorCode::unknown_dataset:
    case fb::ErrorCode::unknown_case:
    case fb::ErrorCode::empty_dataset:
    case fb::ErrorCode::missing_anchor:
    case fb::ErrorCode::missing_slot:
    case fb::ErrorCode::incomplete_coverage:
    case fb::ErrorCode::infeasible_calibration: return kExitConfig;
    default: return kExitFailure;
  }
}

fb::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) fb::fail(fb::ErrorCode::config_error, "cannot open " + path);
  auto j = fb::json::parse(in, nullptr, false);
  if (j.is_discarded()) fb::fail(fb::ErrorCode::config_error, path + " is not valid JSON");
  return j;
}

std::shared_ptr<fb::Transport> make_transport(const fb::GatewayProfile& profile, const std::string& mock_script) {
  if (!mock_script.empty()) return std::make_shared<fb::MockTransport>(fb::mock_script_from_json(read_json(mock_script)));
  if (profile.endpoint.empty()) fb::fail(fb::ErrorCode::config_error, "gateway profile has no endpoint");
  return std::make_shared<fb::HttpTransport>(profile);
}

/// Gateway failures recorded per case still signal exhaustion on exit.
int outcome_exit_code(const std::vector<fb::CaseFailure>& failures) {
  for (const auto& f : failures) {
    if (exit_code_for(f.code) == kExitGateway) return kExitGateway;
  }
  return kExitOk;
}

int cmd_run(const std::string& spec_path, const std::string& mock_script, const std::string& out_override) {
  auto spec = fb::load_experiment_spec(spec_path);
  if (!out_override.empty()) spec.output_dir = out_override;
  auto outcome = fb::run_experiment(spec, make_transport(spec.gateway, mock_script));
  if (!spec.output_dir.empty()) fb::persist_outcome(outcome, spec, spec.output_dir);
  std::cout << fb::render_partition_table(outcome.final_report());
  const auto timing = outcome.manifest.timing;
  std::cout << "memory_time_avg: ";
  if (timing.avg_memory_time) std::cout << *timing.avg_memory_time; else std::cout << "-";
  std::cout << "\npredict_time_avg: ";
  if (timing.avg_predict_time) std::cout << *timing.avg_predict_time; else std::cout << "-";
  std::cout << "\nreport_hash: " << outcome.final_report().hash() << '\n';
  for (const auto& f : outcome.result.failures) {
    std::cerr << "case " << f.case_id << " failed: " << f.message << '\n';
  }
  return outcome_exit_code(outcome.result.failures);
}

int cmd_simulate(const std::string& spec_path, const std::string& mock_script, const std::string& out_path,
                 const std::string& system_name) {
  const auto spec = fb::load_experiment_spec(spec_path);
  const auto cases = fb::load_cases(spec.cases_path);
  const auto split = fb::build_partition(cases, spec.partition);
  fb::Gateway gateway(spec.gateway, make_transport(spec.gateway, mock_script));
  auto registry = fb::DatasetRegistry::builtin();
  registry.merge_json(spec.datasets);
  const auto models = fb::ActionModelSet::calibrate(fb::action_model_config_from_json(spec.action_model));
  fb::SimulatorConfig sim;
  sim.max_turns = spec.max_turns;
  fb::RunContext ctx{gateway, registry, models, sim, fb::ScoringServices{&gateway, 2}, spec.parallelism,
                     spec.seeds.action};
  auto system = fb::make_system(system_name.empty() ? "Vanilla" : system_name, gateway, spec.retrieval);
  std::vector<fb::CaseFailure> failures;
  const auto sessions = fb::generate_feedback_log(split.train, *system, ctx, &failures);
  fb::write_sessions_jsonl(out_path, sessions);
  std::cout << "wrote " << sessions.size() << " session(s) to " << out_path << '\n';
  for (const auto& f : failures) std::cerr << "case " << f.case_id << " failed: " << f.message << '\n';
  return outcome_exit_code(failures);
}

int cmd_evaluate(const std::string& cases_path, const std::string& responses_path, const std::string& anchors_path,
                 const std::string& system_name, const std::string& partition_name, const std::string& gateway_path,
                 const std::string& mock_script, const std::string& out_path) {
  const auto cases = fb::load_cases(cases_path);
  std::map<std::string, std::string> responses;
  {
    std::ifstream in(responses_path);
    if (!in) fb::fail(fb::ErrorCode::config_error, "cannot open " + responses_path);
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (fb::text::trim(line).empty()) continue;
      auto j = fb::json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.contains("case_id") || !j.contains("response")) {
        throw fb::SchemaViolation(n, "response lines need case_id and response");
      }
      responses[j["case_id"].get<std::string>()] = j["response"].get<std::string>();
    }
  }
  std::unique_ptr<fb::Gateway> gateway;
  if (!gateway_path.empty() || !mock_script.empty()) {
    auto profile = gateway_path.empty() ? fb::GatewayProfile::single_model("mock")
                                        : fb::gateway_profile_from_json(read_json(gateway_path));
    gateway = std::make_unique<fb::Gateway>(profile, make_transport(profile, mock_script));
  }
  fb::ScoringServices services{gateway.get(), 2};
  std::vector<fb::MetricScore> scores;
  std::vector<fb::CaseFailure> failures;
  for (const auto& c : cases) {
    const auto it = responses.find(c.case_id);
    if (it == responses.end()) continue;
    try {
      scores.push_back(fb::score_case(c, it->second, services));
    } catch (const fb::Error& e) {
      scores.push_back({c.case_id, c.dataset_id, c.eval.metric, 0.0,
                        c.eval.lower_better ? fb::Direction::lower_better : fb::Direction::higher_better, true});
      failures.push_back({c.case_id, e.code(), e.what()});
    }
  }
  fb::NormalizationAnchors anchors;
  if (!anchors_path.empty() && std::filesystem::exists(anchors_path)) {
    anchors = fb::NormalizationAnchors::load(anchors_path);
  } else {
    anchors = fb::NormalizationAnchors::from_scores(scores);
    for (const auto& c : cases) {
      if (!anchors.contains(c.dataset_id)) anchors.set(c.dataset_id, {0.0, 1.0});
    }
    if (!anchors_path.empty()) anchors.save(anchors_path);
  }
  const auto report = fb::aggregate(partition_name, {{system_name, scores}}, cases, anchors);
  if (!out_path.empty()) {
    std::ofstream out(out_path, std::ios::trunc);
    out << report.to_json().dump(2) << '\n';
  }
  std::cout << fb::render_partition_table(report);
  for (const auto& f : failures) std::cerr << "case " << f.case_id << " failed: " << f.message << '\n';
  return outcome_exit_code(failures);
}

int cmd_report(const std::vector<std::string>& paths, bool use_z) {
  std::vector<fb::AggregateReport> reports;
  for (const auto& p : paths) {
    auto j = read_json(p);
    if (j.is_array()) {
      // steps.json: the last entry is the final state
      if (j.empty()) fb::fail(fb::ErrorCode::config_error, p + " holds no reports");
      j = j.back();
    }
    reports.push_back(fb::AggregateReport::from_json(j));
  }
  for (const auto& r : reports) std::cout << fb::render_partition_table(r) << '\n';
  std::cout << fb::render_summary_table(reports, use_z);
  return kExitOk;
}

int cmd_calibrate(const std::string& config_path, bool as_json) {
  const auto cfg = fb::action_model_config_from_json(config_path.empty() ? fb::json::object() : read_json(config_path));
  const auto models = fb::ActionModelSet::calibrate(cfg);
  const auto* sig = models.general.sigmoid();
  const auto* bin = models.binary.binary();
  const auto targets = cfg.targets();
  if (as_json) {
    fb::ordered_json j;
    j["target_like"] = targets.p_like_global();
    j["target_dislike"] = targets.p_dislike_global();
    j["c_like"] = sig->c_like();
    j["c_dislike"] = sig->c_dislike();
    j["binary"] = {{"p_like_given_high", bin->p_like_given_high()}, {"p_dislike_given_low", bin->p_dislike_given_low()}};
    std::cout << j.dump(2) << '\n';
    return kExitOk;
  }
  std::cout << "targets: P(L)=" << targets.p_like_global() << " P(D)=" << targets.p_dislike_global() << '\n';
  std::cout << "c_like=" << sig->c_like() << " c_dislike=" << sig->c_dislike() << "\n\n";
  std::cout << fb::format_probability_table(models.general);
  std::cout << "\nbinary: P(L|S=9)=" << bin->p_like_given_high() << " P(D|S=3)=" << bin->p_dislike_given_low() << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"feedbench: continual-learning benchmark harness for memory-augmented LLM systems"};
  app.require_subcommand(1);

  std::string spec_path, mock_script, out_dir;
  auto* run = app.add_subcommand("run", "Run an experiment spec");
  run->add_option("--spec", spec_path, "Experiment spec (JSON)")->required();
  run->add_option("--mock-script", mock_script, "Serve model calls from a scripted mock (JSON)");
  run->add_option("--out", out_dir, "Output directory (overrides the spec)");

  std::string sim_spec, sim_mock, sim_out, sim_system;
  auto* simulate = app.add_subcommand("simulate", "Generate a feedback log for the training split");
  simulate->add_option("--spec", sim_spec, "Experiment spec (JSON)")->required();
  simulate->add_option("--mock-script", sim_mock, "Serve model calls from a scripted mock (JSON)");
  simulate->add_option("--out", sim_out, "Output JSONL path")->required();
  simulate->add_option("--system", sim_system, "System answering the simulated user (default Vanilla)");

  std::string ev_cases, ev_responses, ev_anchors, ev_system = "system", ev_partition = "custom", ev_gateway, ev_mock,
                                                   ev_out;
  auto* evaluate = app.add_subcommand("evaluate", "Score responses and aggregate");
  evaluate->add_option("--cases", ev_cases, "Task cases (JSONL)")->required();
  evaluate->add_option("--responses", ev_responses, "Responses (JSONL of {case_id, response})")->required();
  evaluate->add_option("--anchors", ev_anchors, "Anchor file; created from these scores when missing");
  evaluate->add_option("--system", ev_system, "System label in the report");
  evaluate->add_option("--partition", ev_partition, "Partition label in the report");
  evaluate->add_option("--gateway", ev_gateway, "Gateway profile for judge-backed metrics");
  evaluate->add_option("--mock-script", ev_mock, "Serve judge calls from a scripted mock (JSON)");
  evaluate->add_option("--out", ev_out, "Write the report JSON here");

  std::vector<std::string> report_paths;
  bool use_z = false;
  auto* report = app.add_subcommand("report", "Render report tables");
  report->add_option("reports", report_paths, "report.json or steps.json files")->required();
  report->add_flag("--z", use_z, "Summarize z-scores instead of min-max");

  std::string cal_config;
  bool cal_json = false;
  auto* calibrate = app.add_subcommand("calibrate", "Calibrate the action models and print P(action|score)");
  calibrate->add_option("--config", cal_config, "Action model config (JSON)");
  calibrate->add_flag("--json", cal_json, "Emit JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run) return cmd_run(spec_path, mock_script, out_dir);
    if (*simulate) return cmd_simulate(sim_spec, sim_mock, sim_out, sim_system);
    if (*evaluate) {
      return cmd_evaluate(ev_cases, ev_responses, ev_anchors, ev_system, ev_partition, ev_gateway, ev_mock, ev_out);
    }
    if (*report) return cmd_report(report_paths, use_z);
    if (*calibrate) return cmd_calibrate(cal_config, cal_json);
  } catch (const fb::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}
