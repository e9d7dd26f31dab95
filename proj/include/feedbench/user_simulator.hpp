#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "feedbench/action_model.hpp"
#include "feedbench/errors.hpp"
#include "feedbench/evaluation.hpp"
#include "feedbench/llm_gateway.hpp"
#include "feedbench/memory_systems.hpp"
#include "feedbench/random.hpp"
#include "feedbench/session.hpp"
#include "feedbench/task_provider.hpp"
#include "feedbench/text.hpp"
#include "json.hpp"

namespace feedbench {

struct UserPersona {
  std::string persona_text;
  std::string domain_expertise_text;
  std::vector<std::string> evaluation_criteria;
  std::string additional_context_text;

  void validate() const {
    if (persona_text.empty()) fail(ErrorCode::invalid_argument, "persona_text must be non-empty");
  }
};

enum class Behavior { continue_conversation, end_conversation };

inline std::string_view to_string(Behavior b) {
  return b == Behavior::continue_conversation ? "continue_conversation" : "end_conversation";
}

struct SimulatorVerdict {
  std::string reasoning;
  Behavior behavior = Behavior::end_conversation;
  std::optional<std::string> response;

  friend bool operator==(const SimulatorVerdict&, const SimulatorVerdict&) = default;
};

enum class PathKind { metric_direct, llm_simulated };

struct SimulationPath {
  PathKind kind = PathKind::llm_simulated;
  std::string metric_name;  // "f1" or "accuracy" on the metric path

  friend bool operator==(const SimulationPath&, const SimulationPath&) = default;
};

// ---------------------------------------------------------------------------
// Prompt templates

namespace templates {

inline constexpr std::string_view kProfile = R"tmpl({user_persona}

{domain_expertise}

CRITICAL: Always focus on the initial prompt/request as the primary context for evaluation. The conversation should stay aligned with the original user intent.

IMPORTANT: DO NOT REPEAT QUESTIONS OR REQUESTS that have already been asked in the conversation. Avoid asking the same question multiple times.

IMPORTANT: Always start your reasoning process first, then provide the other feedback elements.

Your response should include:
1. Reasoning: Detailed analysis of the assistant's response quality and accuracy (always consider how well it addresses the initial prompt)
2. Behavior decision: Whether to continue or end the conversation
3. Response: What the user would say (only if continuing the conversation)

Consider factors like:
{evaluation_criteria}

{additional_context})tmpl";

inline constexpr std::string_view kTest = R"tmpl(Analyze this conversation and predict the user's response:

The user is {task_description}. CRITICAL: Focus on the initial request as the core topic that should be the primary focus throughout this entire conversation. All responses should be evaluated based on how well they address this original user intent.

Conversation History:
{conversation_history}

EVALUATION CONTEXT:
{evaluation_context}

IMPORTANT: If you provide a response (when behavior is continue_conversation), it must be in {language}.

Please provide a realistic user response in strict JSON format:
{
  "reasoning": "Detailed analysis of the assistant's response quality and accuracy (MUST evaluate how well it addresses the initial request)",
  "behavior": "continue_conversation" | "end_conversation",
  "response": "What the user would say next (string or null if ending)"
}

Requirements:
- reasoning: Always provide detailed analysis first. CRITICAL: Always assess how well the assistant's response addresses the initial request and stays focused on the original user intent.
- behavior: Must be exactly: continue_conversation or end_conversation.
- response: Text if continuing, null if ending conversation. Must match the conversation language. IMPORTANT: Do not repeat questions or requests that have already been made in the conversation.

Respond with valid JSON only.)tmpl";

inline constexpr std::string_view kReinstruction =
    "Your previous reply could not be parsed. Reply with one JSON object containing \"reasoning\", \"behavior\" "
    "(continue_conversation or end_conversation) and \"response\" (null when ending), and nothing else.";

}  // namespace templates

inline std::string build_profile_prompt(const UserPersona& persona) {
  persona.validate();
  std::string criteria;
  for (std::size_t i = 0; i < persona.evaluation_criteria.size(); ++i) {
    if (i) criteria.push_back('\n');
    criteria += "- " + persona.evaluation_criteria[i];
  }
  return text::fill_slots(templates::kProfile, {{"user_persona", persona.persona_text},
                                                {"domain_expertise", persona.domain_expertise_text},
                                                {"evaluation_criteria", criteria},
                                                {"additional_context", persona.additional_context_text}});
}

inline std::string build_test_prompt(const Dialog& history, const std::string& task_description,
                                     const std::string& evaluation_context, const std::string& language_tag) {
  if (history.empty()) fail(ErrorCode::invalid_argument, "test prompt needs a non-empty history");
  return text::fill_slots(templates::kTest, {{"task_description", task_description},
                                             {"conversation_history", render_dialog(history)},
                                             {"evaluation_context", evaluation_context},
                                             {"language", text::language_name(language_tag)}});
}

inline std::string build_scoring_prompt(const Dialog& history, const std::string& evaluation_context) {
  return text::fill_slots(templates::kScoringUser,
                          {{"conversation_history", render_dialog(history)}, {"evaluation_context", evaluation_context}});
}

// ---------------------------------------------------------------------------
// Parsing

/// Reads the first JSON object in the reply. Unknown fields are rejected; a
/// response attached to end_conversation is dropped.
inline SimulatorVerdict parse_verdict(std::string_view raw) {
  const auto obj = text::extract_json_object(raw);
  if (!obj) fail(ErrorCode::malformed_verdict, "no JSON object in simulator output");
  for (const auto& [key, _] : obj->items()) {
    if (key != "reasoning" && key != "behavior" && key != "response") {
      fail(ErrorCode::malformed_verdict, "unexpected verdict field '" + key + "'");
    }
  }
  if (!obj->contains("behavior") || !(*obj)["behavior"].is_string()) {
    fail(ErrorCode::malformed_verdict, "verdict lacks a behavior string");
  }
  SimulatorVerdict v;
  if (obj->contains("reasoning")) {
    const auto& r = (*obj)["reasoning"];
    if (!r.is_string() && !r.is_null()) fail(ErrorCode::malformed_verdict, "reasoning must be a string");
    if (r.is_string()) v.reasoning = r.get<std::string>();
  }
  const auto behavior = (*obj)["behavior"].get<std::string>();
  if (behavior == "continue_conversation") {
    v.behavior = Behavior::continue_conversation;
  } else if (behavior == "end_conversation") {
    v.behavior = Behavior::end_conversation;
  } else {
    fail(ErrorCode::invalid_behavior, "behavior '" + behavior + "' is not continue_conversation or end_conversation");
  }
  if (v.behavior == Behavior::continue_conversation) {
    const auto it = obj->find("response");
    if (it == obj->end() || !it->is_string() || text::trim(it->get<std::string>()).empty()) {
      fail(ErrorCode::missing_response, "continue_conversation without a response");
    }
    v.response = it->get<std::string>();
  } else if (obj->contains("response") && !(*obj)["response"].is_null() && !(*obj)["response"].is_string()) {
    fail(ErrorCode::malformed_verdict, "response must be a string or null");
  }
  return v;
}

/// Judge-scored satisfaction for the latest assistant turn.
inline SatisfactionScore score_satisfaction(const Dialog& history, const std::string& evaluation_context,
                                            Gateway& judge, int retries = 2) {
  bool has_assistant = false;
  for (const auto& t : history) has_assistant = has_assistant || t.role == TurnRole::assistant;
  if (!has_assistant) fail(ErrorCode::invalid_argument, "satisfaction scoring needs an assistant turn");
  const auto prompt = build_scoring_prompt(history, evaluation_context);
  std::string last;
  for (int attempt = 0; attempt <= retries; ++attempt) {
    try {
      last = judge.complete(Role::judge, prompt, std::string(templates::kScoringSystem));
    } catch (const Error& e) {
      fail(ErrorCode::judge_unavailable, e.what());
    }
    const auto obj = text::extract_json_object(last);
    if (!obj || !obj->contains("score")) continue;
    const auto& s = (*obj)["score"];
    if (!s.is_number_integer()) continue;
    const auto v = s.get<long long>();
    if (v < kMinScore || v > kMaxScore) continue;
    return SatisfactionScore(static_cast<int>(v));
  }
  fail(ErrorCode::unparseable_score, "judge reply has no score in 1-10: " + last.substr(0, 200));
}

// ---------------------------------------------------------------------------
// Dataset registry

struct DatasetProfile {
  SimulationPath path;
  UserPersona persona;
  std::string task_description;  // empty: use the case's own
};

namespace detail {

inline UserPersona generic_persona(std::string_view domain_phrase) {
  UserPersona p;
  p.persona_text = "You are simulating a user who asked an AI assistant for help with " + std::string(domain_phrase) + ".";
  p.domain_expertise_text =
      "You know what a correct and useful answer to your request looks like and judge the assistant against it.";
  p.evaluation_criteria = {"Correctness with respect to the reference", "Completeness", "Relevance to the request",
                           "Clarity"};
  return p;
}

inline UserPersona scitech_persona() {
  UserPersona p;
  p.persona_text =
      "You are simulating a science journalist or editor who requested AI assistance to write journalistic reports "
      "of scientific papers for general audiences.";
  p.domain_expertise_text =
      "You have expertise in science journalism across diverse fields including computer science, cybersecurity, "
      "privacy research, mobile computing, cloud services, encryption technologies, biomedical research, "
      "environmental science, and other technical domains. You understand what makes scientific writing accessible "
      "to the general public while maintaining accuracy.";
  p.evaluation_criteria = {
      "Accessible and readable for general audiences without technical background",
      "Accurate to the original scientific work without oversimplification",
      "Engaging and newsworthy in its presentation style",
      "Well-structured with appropriate journalistic elements (headlines, lead paragraphs, context)",
      "Properly balancing technical detail with readability",
      "Readability for lay audiences",
      "Journalistic style and structure",
      "Engagement factor and clarity of technical concepts",
  };
  p.additional_context_text =
      "Your evaluation focuses on the journalistic transformation of academic content rather than the underlying "
      "research quality. Consider: readability for lay audiences, accuracy to source material, journalistic style "
      "and structure, engagement factor, and clarity of technical concepts.";
  return p;
}

}  // namespace detail

/// Maps dataset tags to a simulation path and persona.
class DatasetRegistry {
 public:
  void add(const std::string& tag, DatasetProfile profile) {
    if (profile.path.kind == PathKind::metric_direct && profile.path.metric_name != "f1" &&
        profile.path.metric_name != "accuracy") {
      fail(ErrorCode::config_error, "metric path for '" + tag + "' must use f1 or accuracy");
    }
    profile.persona.validate();
    profiles_[tag] = std::move(profile);
  }

  bool contains(const std::string& tag) const { return profiles_.count(tag) != 0; }

  const DatasetProfile& resolve(const std::string& tag) const {
    const auto it = profiles_.find(tag);
    if (it == profiles_.end()) fail(ErrorCode::unknown_dataset, "dataset '" + tag + "' is not registered");
    return it->second;
  }

  std::vector<std::string> tags() const {
    std::vector<std::string> out;
    for (const auto& [t, _] : profiles_) out.push_back(t);
    return out;
  }

  static DatasetRegistry builtin() {
    DatasetRegistry r;
    const auto dialog = detail::generic_persona("questions about earlier conversations");
    r.add("locomo", {{PathKind::metric_direct, "f1"}, dialog, ""});
    for (const char* tag : {"dialsim-friends", "dialsim-bigbang", "dialsim-theoffice"}) {
      r.add(tag, {{PathKind::metric_direct, "accuracy"}, dialog, ""});
    }
    const auto open = detail::generic_persona("an open-domain writing or question-answering task");
    for (const char* tag : {"hellobench-cd", "writingprompts", "writingbench-cd", "nfcats"}) {
      r.add(tag, {{PathKind::llm_simulated, ""}, open, ""});
    }
    const auto legal = detail::generic_persona("a legal task");
    for (const char* tag : {"judge", "lexeval-summarization", "lexeval-judge", "lexeval-qa", "writingbench-pl"}) {
      r.add(tag, {{PathKind::llm_simulated, ""}, legal, ""});
    }
    const auto academic = detail::generic_persona("an academic research or writing task");
    for (const char* tag : {"hellobench-ak-qa", "hellobench-ak-writing", "ideabench", "jre-l", "limitgen-syn",
                            "writingbench-ae"}) {
      r.add(tag, {{PathKind::llm_simulated, ""}, academic, ""});
    }
    r.add("scitechnews",
          {{PathKind::llm_simulated, ""},
           detail::scitech_persona(),
           "seeking to transform scientific papers into accessible journalistic reports for general audiences"});
    return r;
  }

  /// {"tag": {"path": "metric_direct"|"llm_simulated", "metric": "f1"|"accuracy",
  ///          "persona": {...}, "task_description": "..."}}
  void merge_json(const nlohmann::json& j) {
    try {
      for (const auto& [tag, v] : j.items()) {
        DatasetProfile p;
        const auto path = v.value("path", std::string("llm_simulated"));
        if (path == "metric_direct") {
          p.path = {PathKind::metric_direct, v.at("metric").get<std::string>()};
        } else if (path != "llm_simulated") {
          fail(ErrorCode::config_error, "unknown path '" + path + "' for dataset " + tag);
        }
        if (v.contains("persona")) {
          const auto& pj = v["persona"];
          p.persona.persona_text = pj.at("persona_text").get<std::string>();
          p.persona.domain_expertise_text = pj.value("domain_expertise_text", "");
          p.persona.evaluation_criteria = pj.value("evaluation_criteria", std::vector<std::string>{});
          p.persona.additional_context_text = pj.value("additional_context_text", "");
        } else {
          p.persona = detail::generic_persona("a task");
        }
        p.task_description = v.value("task_description", "");
        add(tag, std::move(p));
      }
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::config_error, std::string("dataset registry: ") + e.what());
    }
  }

 private:
  std::map<std::string, DatasetProfile> profiles_;
};

inline SimulationPath route_case(const TaskCase& c, const DatasetRegistry& registry) {
  const auto& profile = registry.resolve(c.dataset_id);
  if (profile.path.kind == PathKind::metric_direct && !c.eval.gold) {
    fail(ErrorCode::invalid_argument, "case " + c.case_id + " routes to the metric path but has no gold answer");
  }
  return profile.path;
}

// ---------------------------------------------------------------------------
// Session state machine

struct FeedbackTemplates {
  std::string positive = "Thanks, that answers my question.";
  std::string negative = "That does not look right. Please check again and give me the correct answer.";
};

struct SimulatorConfig {
  std::size_t max_turns = 3;
  int judge_retries = 2;
  FeedbackTemplates feedback;
};

struct SimulationResult {
  FeedbackSession session;
  std::optional<ErrorCode> error;
  std::string error_message;
};

namespace detail {

inline SimulatorVerdict request_verdict(Gateway& gateway, const std::string& profile_prompt,
                                        const std::string& test_prompt) {
  std::string prompt = test_prompt;
  for (int attempt = 0;; ++attempt) {
    const auto raw = gateway.complete(Role::simulator, prompt, profile_prompt);
    try {
      return parse_verdict(raw);
    } catch (const Error& e) {
      const auto code = e.code();
      const bool parse_error = code == ErrorCode::malformed_verdict || code == ErrorCode::invalid_behavior ||
                               code == ErrorCode::missing_response;
      if (!parse_error || attempt >= 1) throw;
      prompt = test_prompt + "\n\n" + std::string(templates::kReinstruction);
    }
  }
}

}  // namespace detail

/// Runs one dialog between the simulated user and `system`. The memory
/// system failing raises SystemFailure; simulator or judge failures end the
/// session with terminated_by=error and the unscored assistant turn removed.
inline SimulationResult simulate_session_detailed(const TaskCase& c, MemorySystem& system, Gateway& gateway,
                                                  const DatasetRegistry& registry, const ActionModelSet& models,
                                                  const SimulatorConfig& config, std::uint64_t seed) {
  if (config.max_turns < 1) fail(ErrorCode::config_error, "max_turns must be >= 1");
  const auto path = route_case(c, registry);
  const auto& profile = registry.resolve(c.dataset_id);
  auto rng = derive_seed(seed, c.case_id);

  SimulationResult result;
  auto& s = result.session;
  s.case_id = c.case_id;
  s.dataset = c.dataset_id;
  std::int64_t ordinal = 0;
  s.turns.push_back({TurnRole::user, c.query, ordinal++});

  const std::string profile_prompt = path.kind == PathKind::llm_simulated ? build_profile_prompt(profile.persona) : "";
  const std::string task_description = profile.task_description.empty() ? c.task_description() : profile.task_description;
  const std::string evaluation_context = c.evaluation_context();
  const ActionModel& action_model = path.kind == PathKind::llm_simulated ? models.general
                                    : path.metric_name == "f1"           ? models.f1
                                                                         : models.binary;
  SessionState state;

  for (std::size_t turn = 1; turn <= config.max_turns; ++turn) {
    std::string response;
    try {
      response = system.respond(c, s.turns, state);
    } catch (const Error& e) {
      fail(ErrorCode::system_failure, system.name() + " failed on " + c.case_id + ": " + e.what());
    } catch (const std::exception& e) {
      fail(ErrorCode::system_failure, system.name() + " failed on " + c.case_id + ": " + e.what());
    }
    if (response.empty()) response = " ";
    s.turns.push_back({TurnRole::assistant, response, ordinal++});
    const bool last_turn = turn == config.max_turns;

    std::optional<SatisfactionScore> score;
    std::optional<std::string> next_user;
    bool end = false;
    try {
      if (path.kind == PathKind::metric_direct) {
        const auto& gold = *c.eval.gold;
        score = path.metric_name == "f1" ? f1_to_satisfaction(token_f1(response, gold))
                                         : binary_satisfaction(lenient_match(response, gold));
        const bool satisfied = score->value() >= 6;
        next_user = satisfied ? config.feedback.positive : config.feedback.negative;
        end = satisfied;
      } else {
        if (!last_turn) {
          const auto verdict = detail::request_verdict(
              gateway, profile_prompt, build_test_prompt(s.turns, task_description, evaluation_context, c.language));
          end = verdict.behavior == Behavior::end_conversation;
          if (!end) next_user = verdict.response;
        }
        score = score_satisfaction(s.turns, evaluation_context, gateway, config.judge_retries);
      }
    } catch (const Error& e) {
      s.turns.pop_back();
      s.terminated_by = Termination::error;
      result.error = e.code();
      result.error_message = e.what();
      return result;
    }

    s.satisfaction.push_back(*score);
    s.actions.push_back(sample_action(action_model.probabilities(*score, c.format), rng));

    if (end || last_turn) {
      // the metric path closes with its templated feedback
      if (path.kind == PathKind::metric_direct && next_user) s.turns.push_back({TurnRole::user, *next_user, ordinal++});
      s.terminated_by = end ? Termination::simulator_end : Termination::turn_limit;
      return result;
    }
    s.turns.push_back({TurnRole::user, *next_user, ordinal++});
  }
  s.terminated_by = Termination::turn_limit;
  return result;
}

inline FeedbackSession simulate_session(const TaskCase& c, MemorySystem& system, Gateway& gateway,
                                        const DatasetRegistry& registry, const ActionModelSet& models,
                                        const SimulatorConfig& config, std::uint64_t seed) {
  return simulate_session_detailed(c, system, gateway, registry, models, config, seed).session;
}

}  // namespace feedbench
