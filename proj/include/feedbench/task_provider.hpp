#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "feedbench/action_model.hpp"
#include "feedbench/errors.hpp"
#include "feedbench/random.hpp"
#include "feedbench/session.hpp"
#include "feedbench/text.hpp"
#include "json.hpp"

namespace feedbench {

inline constexpr std::string_view kCaseSchema = "feedbench.case/1";
inline constexpr std::string_view kPartitionSchema = "feedbench.partition/1";

enum class Domain { open, legal, academic };

inline std::string_view to_string(Domain d) {
  switch (d) {
    case Domain::open: return "open";
    case Domain::legal: return "legal";
    case Domain::academic: return "academic";
  }
  return "open";
}

inline std::optional<Domain> parse_domain(std::string_view s) {
  if (s == "open") return Domain::open;
  if (s == "legal") return Domain::legal;
  if (s == "academic") return Domain::academic;
  return std::nullopt;
}

/// Metrics a case may name as its primary metric.
inline const std::vector<std::string>& registered_metrics() {
  static const std::vector<std::string> names = {"f1", "accuracy", "rouge_l", "meteor", "judge"};
  return names;
}

/// One static-knowledge unit of a case's context: a conversation session or
/// a single text passage (one message).
struct ContextSession {
  std::string session_id;
  std::vector<std::string> messages;

  std::string text() const {
    std::string out;
    for (const auto& m : messages) {
      if (!out.empty()) out.push_back('\n');
      out += m;
    }
    return out;
  }
};

struct EvalMetadata {
  std::string metric;
  std::optional<std::string> gold;
  std::vector<std::string> criteria;
  std::string judge_template;                 // required when metric == "judge"
  std::map<std::string, std::string> slots;   // pass-through judge-template values
  std::string evaluation_context;             // shown to simulator and scorer
  std::string task_description;               // "The user is {task_description}."
  bool lower_better = false;
};

/// One benchmark item (q, v, c) plus dataset/domain/format tags.
struct TaskCase {
  std::string case_id;
  std::string dataset_id;
  std::string query;
  EvalMetadata eval;
  std::vector<ContextSession> context;
  Domain domain = Domain::open;
  TaskFormat format = TaskFormat::SiSo;
  std::string language = "en";

  /// Evaluation context text; derived from gold answer and criteria when the
  /// case does not carry one explicitly.
  std::string evaluation_context() const {
    if (!eval.evaluation_context.empty()) return eval.evaluation_context;
    std::string out;
    if (eval.gold) out += "Reference answer: " + *eval.gold;
    if (!eval.criteria.empty()) {
      if (!out.empty()) out += "\n";
      out += "Evaluation criteria:";
      for (const auto& c : eval.criteria) out += "\n- " + c;
    }
    return out;
  }

  std::string task_description() const {
    return eval.task_description.empty() ? "seeking help with the following request" : eval.task_description;
  }

  /// Stable hash of the context corpus; identical corpora share one ingestion.
  std::string context_hash() const {
    std::string blob;
    for (const auto& s : context) {
      blob += s.session_id;
      blob.push_back('\x1f');
      for (const auto& m : s.messages) {
        blob += m;
        blob.push_back('\x1e');
      }
      blob.push_back('\x1d');
    }
    return text::sha256_hex(blob);
  }
};

inline TaskCase case_from_json(const nlohmann::json& j, std::size_t line = 0) {
  auto violation = [line](const std::string& why) { return SchemaViolation(line, why); };
  if (!j.is_object()) throw violation("case record must be a JSON object");
  TaskCase c;
  try {
    if (j.contains("schema") && j["schema"].get<std::string>() != kCaseSchema) {
      throw violation("unsupported schema '" + j["schema"].get<std::string>() + "'");
    }
    auto required_string = [&](const char* key) {
      if (!j.contains(key) || !j[key].is_string() || j[key].get<std::string>().empty()) {
        throw violation(std::string("missing or empty field '") + key + "'");
      }
      return j[key].get<std::string>();
    };
    c.case_id = required_string("case_id");
    c.dataset_id = required_string("dataset");
    c.query = required_string("query");

    if (!j.contains("eval") || !j["eval"].is_object()) throw violation("missing object field 'eval'");
    const auto& v = j["eval"];
    c.eval.metric = v.value("metric", "");
    const auto& metrics = registered_metrics();
    if (std::find(metrics.begin(), metrics.end(), c.eval.metric) == metrics.end()) {
      throw violation("eval.metric '" + c.eval.metric + "' is not a registered metric");
    }
    if (v.contains("gold") && !v["gold"].is_null()) c.eval.gold = v["gold"].get<std::string>();
    c.eval.criteria = v.value("criteria", std::vector<std::string>{});
    c.eval.judge_template = v.value("judge_template", "");
    if (c.eval.metric == "judge" && c.eval.judge_template.empty()) {
      throw violation("metric 'judge' requires eval.judge_template");
    }
    if ((c.eval.metric == "f1" || c.eval.metric == "accuracy" || c.eval.metric == "rouge_l" ||
         c.eval.metric == "meteor") &&
        !c.eval.gold) {
      throw violation("metric '" + c.eval.metric + "' requires eval.gold");
    }
    if (v.contains("slots")) {
      for (const auto& [k, val] : v["slots"].items()) {
        c.eval.slots[k] = val.is_string() ? val.get<std::string>() : val.dump();
      }
    }
    c.eval.evaluation_context = v.value("evaluation_context", "");
    c.eval.task_description = v.value("task_description", "");
    const auto direction = v.value("direction", "higher_better");
    if (direction != "higher_better" && direction != "lower_better") {
      throw violation("eval.direction must be higher_better or lower_better");
    }
    c.eval.lower_better = direction == "lower_better";

    if (j.contains("context") && !j["context"].is_null()) {
      std::size_t idx = 0;
      for (const auto& s : j["context"]) {
        ContextSession cs;
        if (s.is_string()) {
          cs.session_id = "p" + std::to_string(idx);
          cs.messages.push_back(s.get<std::string>());
        } else {
          cs.session_id = s.value("session_id", "s" + std::to_string(idx));
          cs.messages = s.at("messages").get<std::vector<std::string>>();
        }
        c.context.push_back(std::move(cs));
        ++idx;
      }
    }
    const auto domain = parse_domain(j.value("domain", "open"));
    if (!domain) throw violation("domain must be open, legal or academic");
    c.domain = *domain;
    const auto format = parse_task_format(j.value("format", ""));
    if (!format) throw violation("format must be one of LiSo, SiLo, LiLo, SiSo");
    c.format = *format;
    c.language = j.value("language", "en");
  } catch (const nlohmann::json::exception& e) {
    throw violation(e.what());
  }
  return c;
}

inline nlohmann::ordered_json to_json(const TaskCase& c) {
  nlohmann::ordered_json j;
  j["schema"] = kCaseSchema;
  j["case_id"] = c.case_id;
  j["dataset"] = c.dataset_id;
  j["query"] = c.query;
  nlohmann::ordered_json v;
  v["metric"] = c.eval.metric;
  if (c.eval.gold) v["gold"] = *c.eval.gold;
  if (!c.eval.criteria.empty()) v["criteria"] = c.eval.criteria;
  if (!c.eval.judge_template.empty()) v["judge_template"] = c.eval.judge_template;
  if (!c.eval.slots.empty()) v["slots"] = c.eval.slots;
  if (!c.eval.evaluation_context.empty()) v["evaluation_context"] = c.eval.evaluation_context;
  if (!c.eval.task_description.empty()) v["task_description"] = c.eval.task_description;
  if (c.eval.lower_better) v["direction"] = "lower_better";
  j["eval"] = v;
  if (!c.context.empty()) {
    j["context"] = nlohmann::ordered_json::array();
    for (const auto& s : c.context) j["context"].push_back({{"session_id", s.session_id}, {"messages", s.messages}});
  }
  j["domain"] = to_string(c.domain);
  j["format"] = to_string(c.format);
  j["language"] = c.language;
  return j;
}

/// Parses case JSONL; blank lines are skipped, errors carry 1-based line numbers.
inline std::vector<TaskCase> parse_cases(std::istream& in) {
  std::vector<TaskCase> cases;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw SchemaViolation(number, "invalid JSON");
    auto c = case_from_json(j, number);
    if (!seen.insert(c.case_id).second) throw SchemaViolation(number, "duplicate case_id '" + c.case_id + "'");
    cases.push_back(std::move(c));
  }
  return cases;
}

inline std::vector<TaskCase> load_cases(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::config_error, "cannot open case file " + path);
  return parse_cases(in);
}

// ---------------------------------------------------------------------------
// Partitions

struct Partition {
  std::string name;
  std::vector<std::string> datasets;
  std::size_t cap = 250;
  double test_fraction = 0.2;  // 4:1 split
  std::uint64_t seed = 42;
};

/// Dataset membership of the seven benchmark partitions (three domains, four
/// task formats). Data itself is user-supplied under these dataset ids.
inline const std::map<std::string, std::vector<std::string>>& partition_presets() {
  static const std::map<std::string, std::vector<std::string>> presets = {
      {"open",
       {"locomo", "dialsim-friends", "dialsim-bigbang", "dialsim-theoffice", "hellobench-cd", "writingprompts",
        "writingbench-cd", "nfcats"}},
      {"legal", {"judge", "lexeval-summarization", "lexeval-judge", "lexeval-qa", "writingbench-pl"}},
      {"academic",
       {"hellobench-ak-qa", "hellobench-ak-writing", "ideabench", "jre-l", "limitgen-syn", "writingbench-ae"}},
      {"liso",
       {"locomo", "dialsim-friends", "dialsim-bigbang", "dialsim-theoffice", "lexeval-summarization", "ideabench",
        "limitgen-syn"}},
      {"silo", {"judge", "hellobench-ak-qa", "writingprompts"}},
      {"lilo",
       {"lexeval-judge", "writingbench-pl", "hellobench-ak-writing", "writingbench-ae", "hellobench-cd",
        "writingbench-cd"}},
      {"siso", {"lexeval-qa", "jre-l", "nfcats"}},
  };
  return presets;
}

inline Partition partition_preset(const std::string& name, std::uint64_t seed = 42) {
  const auto& presets = partition_presets();
  const auto it = presets.find(name);
  if (it == presets.end()) fail(ErrorCode::config_error, "unknown partition preset '" + name + "'");
  return Partition{name, it->second, 250, 0.2, seed};
}

struct DatasetSplitStats {
  std::string dataset;
  std::size_t available = 0;
  std::size_t sampled = 0;
  std::size_t train = 0;
  std::size_t test = 0;
};

struct Split {
  std::vector<TaskCase> train;
  std::vector<TaskCase> test;
  std::vector<DatasetSplitStats> stats;
};

/// test = round(fraction * sampled), train = sampled - test.
inline std::size_t test_count(std::size_t sampled, double test_fraction) {
  return static_cast<std::size_t>(std::llround(static_cast<double>(sampled) * test_fraction));
}

/// Per dataset: seeded sample of min(cap, n) cases, split into test/train,
/// then merged across datasets in partition order.
inline Split build_partition(const std::vector<TaskCase>& cases, const Partition& spec) {
  if (spec.datasets.empty()) fail(ErrorCode::config_error, "partition '" + spec.name + "' lists no datasets");
  if (!(spec.test_fraction >= 0.0 && spec.test_fraction <= 1.0)) {
    fail(ErrorCode::config_error, "test_fraction must lie in [0,1]");
  }
  Split split;
  for (const auto& dataset : spec.datasets) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < cases.size(); ++i) {
      if (cases[i].dataset_id == dataset) members.push_back(i);
    }
    if (members.empty()) fail(ErrorCode::empty_dataset, "dataset '" + dataset + "' has no cases");
    const std::size_t available = members.size();
    auto rng = derive_seed(spec.seed, dataset);
    seeded_shuffle(members, rng);
    const std::size_t sampled = std::min(spec.cap, available);
    members.resize(sampled);
    const std::size_t n_test = test_count(sampled, spec.test_fraction);
    for (std::size_t k = 0; k < sampled; ++k) {
      (k < n_test ? split.test : split.train).push_back(cases[members[k]]);
    }
    split.stats.push_back({dataset, available, sampled, sampled - n_test, n_test});
  }
  return split;
}

namespace detail {
inline std::string id_list_hash(const std::vector<TaskCase>& cases) {
  std::string blob;
  for (const auto& c : cases) {
    blob += c.case_id;
    blob.push_back('\n');
  }
  return text::sha256_hex(blob);
}
}  // namespace detail

/// Reproducibility record of a split: seed, membership and hashes.
inline nlohmann::ordered_json partition_manifest(const Partition& spec, const Split& split) {
  nlohmann::ordered_json m;
  m["schema"] = kPartitionSchema;
  m["name"] = spec.name;
  m["seed"] = spec.seed;
  m["cap"] = spec.cap;
  m["test_fraction"] = spec.test_fraction;
  m["rounding"] = "test = round(test_fraction * sampled), half away from zero";
  m["datasets"] = nlohmann::ordered_json::array();
  for (const auto& s : split.stats) {
    m["datasets"].push_back(
        {{"dataset", s.dataset}, {"available", s.available}, {"sampled", s.sampled}, {"train", s.train}, {"test", s.test}});
  }
  auto ids = [](const std::vector<TaskCase>& cs) {
    std::vector<std::string> out;
    for (const auto& c : cs) out.push_back(c.case_id);
    return out;
  };
  m["train_ids"] = ids(split.train);
  m["test_ids"] = ids(split.test);
  m["train_hash"] = detail::id_list_hash(split.train);
  m["test_hash"] = detail::id_list_hash(split.test);
  m["hash"] = text::sha256_hex(m.dump());
  return m;
}

/// Seeded shuffle then chunking into batches of `batch_size`; the last batch
/// may be short.
template <typename T>
std::vector<std::vector<T>> training_batches(std::vector<T> items, std::size_t batch_size, std::uint64_t seed) {
  if (batch_size == 0) fail(ErrorCode::invalid_argument, "batch_size must be >= 1");
  SeedState rng = derive_seed(seed, "training_batches");
  seeded_shuffle(items, rng);
  std::vector<std::vector<T>> batches;
  for (std::size_t i = 0; i < items.size(); i += batch_size) {
    const auto end = std::min(items.size(), i + batch_size);
    batches.emplace_back(std::make_move_iterator(items.begin() + static_cast<std::ptrdiff_t>(i)),
                         std::make_move_iterator(items.begin() + static_cast<std::ptrdiff_t>(end)));
  }
  return batches;
}

// ---------------------------------------------------------------------------
// Feedback logs

enum class LogProvenance { generated, imported };

struct FeedbackLog {
  std::vector<FeedbackSession> sessions;
  LogProvenance provenance = LogProvenance::generated;
};

/// Every session must reference a training case. A test case id anywhere in
/// the log is a hard TestLeak failure, checked before unknown ids.
inline void check_log_against_split(const std::vector<FeedbackSession>& sessions, const std::vector<TaskCase>& train,
                                    const std::vector<TaskCase>& test) {
  std::unordered_set<std::string> train_ids;
  std::unordered_set<std::string> test_ids;
  for (const auto& c : train) train_ids.insert(c.case_id);
  for (const auto& c : test) test_ids.insert(c.case_id);
  for (const auto& s : sessions) {
    if (test_ids.count(s.case_id)) {
      fail(ErrorCode::test_leak, "feedback log references test case '" + s.case_id + "'");
    }
  }
  for (const auto& s : sessions) {
    if (!train_ids.count(s.case_id)) {
      fail(ErrorCode::unknown_case, "feedback log references unknown case '" + s.case_id + "'");
    }
  }
}

inline FeedbackLog import_feedback_log(std::vector<FeedbackSession> sessions, const Split& split) {
  check_log_against_split(sessions, split.train, split.test);
  return FeedbackLog{std::move(sessions), LogProvenance::imported};
}

inline FeedbackLog import_feedback_log(const std::string& path, const Split& split) {
  return import_feedback_log(read_sessions_jsonl(path), split);
}

}  // namespace feedbench
