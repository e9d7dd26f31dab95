#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "feedbench/action_model.hpp"
#include "feedbench/errors.hpp"
#include "json.hpp"

namespace feedbench {

enum class TurnRole { user, assistant };

inline std::string_view to_string(TurnRole r) { return r == TurnRole::user ? "user" : "assistant"; }

inline std::optional<TurnRole> parse_turn_role(std::string_view s) {
  if (s == "user") return TurnRole::user;
  if (s == "assistant") return TurnRole::assistant;
  return std::nullopt;
}

struct DialogTurn {
  TurnRole role = TurnRole::user;
  std::string content;
  std::int64_t ordinal = 0;

  friend bool operator==(const DialogTurn&, const DialogTurn&) = default;
};

using Dialog = std::vector<DialogTurn>;

/// "User: ...\nAssistant: ..." rendering shared by prompts and memory entries.
inline std::string render_dialog(const Dialog& turns) {
  std::string out;
  for (const auto& t : turns) {
    if (!out.empty()) out.push_back('\n');
    out += t.role == TurnRole::user ? "User: " : "Assistant: ";
    out += t.content;
  }
  return out;
}

enum class Termination { simulator_end, turn_limit, error };

inline std::string_view to_string(Termination t) {
  switch (t) {
    case Termination::simulator_end: return "simulator_end";
    case Termination::turn_limit: return "turn_limit";
    case Termination::error: return "error";
  }
  return "error";
}

inline std::optional<Termination> parse_termination(std::string_view s) {
  if (s == "simulator_end") return Termination::simulator_end;
  if (s == "turn_limit") return Termination::turn_limit;
  if (s == "error") return Termination::error;
  return std::nullopt;
}

/// One simulated dialog: the unit of procedural memory.
struct FeedbackSession {
  std::string case_id;
  std::string dataset;
  Dialog turns;
  std::vector<SatisfactionScore> satisfaction;  // one per assistant turn
  std::vector<UserAction> actions;              // one per assistant turn
  Termination terminated_by = Termination::error;

  std::size_t assistant_turns() const {
    std::size_t n = 0;
    for (const auto& t : turns) n += t.role == TurnRole::assistant ? 1 : 0;
    return n;
  }

  /// The originating task query (first user turn).
  const std::string& question() const {
    static const std::string empty;
    return turns.empty() ? empty : turns.front().content;
  }

  /// Structural invariants; throws invalid_argument describing the first
  /// violation.
  void validate(std::size_t max_turns) const {
    auto bad = [&](const std::string& why) { fail(ErrorCode::invalid_argument, "session " + case_id + ": " + why); };
    if (turns.empty() || turns.front().role != TurnRole::user) bad("first turn must be the user's query");
    for (std::size_t i = 0; i < turns.size(); ++i) {
      if (turns[i].content.empty()) bad("empty turn content");
      if (i > 0 && turns[i].ordinal <= turns[i - 1].ordinal) bad("turn ordinals not increasing");
    }
    const auto n = assistant_turns();
    if (n > max_turns) bad("more assistant turns than the limit");
    if (satisfaction.size() != n || actions.size() != n) bad("scores/actions not aligned with assistant turns");
    if (terminated_by != Termination::error && n == 0) bad("no assistant turn");
  }
};

inline nlohmann::ordered_json to_json(const FeedbackSession& s) {
  nlohmann::ordered_json j;
  j["case_id"] = s.case_id;
  j["dataset"] = s.dataset;
  j["turns"] = nlohmann::ordered_json::array();
  for (const auto& t : s.turns) {
    nlohmann::ordered_json turn;
    turn["role"] = to_string(t.role);
    turn["content"] = t.content;
    j["turns"].push_back(std::move(turn));
  }
  j["satisfaction"] = nlohmann::ordered_json::array();
  for (const auto& sc : s.satisfaction) j["satisfaction"].push_back(sc.value());
  j["actions"] = nlohmann::ordered_json::array();
  for (const auto& a : s.actions) {
    nlohmann::ordered_json action;
    action["primary"] = to_string(a.primary);
    action["copied"] = a.copied;
    j["actions"].push_back(std::move(action));
  }
  j["terminated_by"] = to_string(s.terminated_by);
  return j;
}

/// One JSONL line (without the newline).
inline std::string serialize_session(const FeedbackSession& s) { return to_json(s).dump(); }

inline FeedbackSession session_from_json(const nlohmann::json& j, std::size_t line = 0) {
  auto violation = [line](const std::string& why) -> SchemaViolation { return SchemaViolation(line, why); };
  if (!j.is_object()) throw violation("session record must be a JSON object");
  static const std::vector<std::string> fields = {"case_id", "dataset", "turns", "satisfaction", "actions",
                                                  "terminated_by"};
  for (const auto& f : fields) {
    if (!j.contains(f)) throw violation("missing field '" + f + "'");
  }
  for (const auto& [key, _] : j.items()) {
    if (std::find(fields.begin(), fields.end(), key) == fields.end()) throw violation("unexpected field '" + key + "'");
  }
  FeedbackSession s;
  try {
    s.case_id = j.at("case_id").get<std::string>();
    s.dataset = j.at("dataset").get<std::string>();
    std::int64_t ordinal = 0;
    for (const auto& t : j.at("turns")) {
      const auto role = parse_turn_role(t.at("role").get<std::string>());
      if (!role) throw violation("turn role must be user or assistant");
      s.turns.push_back({*role, t.at("content").get<std::string>(), ordinal++});
    }
    for (const auto& v : j.at("satisfaction")) {
      const int score = v.get<int>();
      if (score < kMinScore || score > kMaxScore) throw violation("satisfaction score out of range");
      s.satisfaction.emplace_back(score);
    }
    for (const auto& a : j.at("actions")) {
      const auto primary = parse_primary_action(a.at("primary").get<std::string>());
      if (!primary) throw violation("action primary must be like, dislike or none");
      s.actions.push_back({*primary, a.at("copied").get<bool>()});
    }
    const auto term = parse_termination(j.at("terminated_by").get<std::string>());
    if (!term) throw violation("unknown terminated_by value");
    s.terminated_by = *term;
  } catch (const nlohmann::json::exception& e) {
    throw violation(e.what());
  }
  if (s.satisfaction.size() != s.assistant_turns() || s.actions.size() != s.assistant_turns()) {
    throw violation("satisfaction/actions must have one entry per assistant turn");
  }
  return s;
}

inline std::vector<FeedbackSession> parse_sessions_jsonl(std::istream& in) {
  std::vector<FeedbackSession> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw SchemaViolation(number, "invalid JSON");
    out.push_back(session_from_json(j, number));
  }
  return out;
}

inline std::vector<FeedbackSession> read_sessions_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::config_error, "cannot open feedback log " + path);
  return parse_sessions_jsonl(in);
}

inline void write_sessions_jsonl(const std::string& path, const std::vector<FeedbackSession>& sessions) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::config_error, "cannot write " + path);
  for (const auto& s : sessions) out << serialize_session(s) << '\n';
}

}  // namespace feedbench
