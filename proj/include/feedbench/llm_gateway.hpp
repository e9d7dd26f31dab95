#pragma once

#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "feedbench/errors.hpp"
#include "feedbench/random.hpp"
#include "feedbench/text.hpp"
#include "json.hpp"

namespace feedbench {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

/// The four model roles a gateway serves; they may bind the same model.
enum class Role { system, simulator, judge, embedder };

inline std::string_view to_string(Role r) {
  switch (r) {
    case Role::system: return "system";
    case Role::simulator: return "simulator";
    case Role::judge: return "judge";
    case Role::embedder: return "embedder";
  }
  return "?";
}

inline std::optional<Role> parse_role(std::string_view s) {
  if (s == "system") return Role::system;
  if (s == "simulator") return Role::simulator;
  if (s == "judge") return Role::judge;
  if (s == "embedder") return Role::embedder;
  return std::nullopt;
}

struct ChatMessage {
  std::string role;  // "system" | "user" | "assistant"
  std::string content;
};

struct ChatRequest {
  std::string model;  // filled from the role binding when empty
  std::vector<ChatMessage> messages;
  double temperature = 0.1;
  double top_p = 0.1;
  std::optional<int> top_k = 1;
  int max_tokens = 2048;
};

/// OpenAI-compatible chat-completion body. `top_k` is only emitted when the
/// endpoint advertises support for it.
inline ordered_json to_wire(const ChatRequest& req, bool send_top_k) {
  ordered_json body;
  body["model"] = req.model;
  body["messages"] = ordered_json::array();
  for (const auto& m : req.messages) body["messages"].push_back({{"role", m.role}, {"content", m.content}});
  body["temperature"] = req.temperature;
  body["top_p"] = req.top_p;
  if (send_top_k && req.top_k) body["top_k"] = *req.top_k;
  body["max_tokens"] = req.max_tokens;
  return body;
}

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds base_backoff{1000};
};

struct GatewayProfile {
  std::string endpoint = "http://127.0.0.1:8000";
  std::string credentials_env = "FEEDBENCH_API_KEY";
  std::map<Role, std::string> bindings;
  RetryPolicy retry{};
  int parallelism = 4;
  bool send_top_k = false;
  double chars_per_token = 4.0;
  std::string transcript_path;  // empty: no transcript

  void validate() const {
    for (Role r : {Role::system, Role::simulator, Role::judge, Role::embedder}) {
      const auto it = bindings.find(r);
      if (it == bindings.end() || it->second.empty()) {
        fail(ErrorCode::config_error, "gateway role '" + std::string(to_string(r)) + "' is not bound");
      }
    }
    if (retry.max_attempts < 1) fail(ErrorCode::config_error, "retry.max_attempts must be >= 1");
    if (parallelism < 1) fail(ErrorCode::config_error, "parallelism must be >= 1");
    if (!(chars_per_token > 0.0)) fail(ErrorCode::config_error, "chars_per_token must be > 0");
  }

  /// Same model for every role; convenient for tests and single-model setups.
  static GatewayProfile single_model(const std::string& model) {
    GatewayProfile p;
    for (Role r : {Role::system, Role::simulator, Role::judge, Role::embedder}) p.bindings[r] = model;
    return p;
  }
};

inline GatewayProfile gateway_profile_from_json(const json& j) {
  GatewayProfile p;
  try {
    p.endpoint = j.value("endpoint", p.endpoint);
    p.credentials_env = j.value("credentials_env", p.credentials_env);
    if (j.contains("model")) {
      for (Role r : {Role::system, Role::simulator, Role::judge, Role::embedder}) {
        p.bindings[r] = j["model"].get<std::string>();
      }
    }
    if (j.contains("roles")) {
      for (const auto& [name, model] : j["roles"].items()) {
        const auto role = parse_role(name);
        if (!role) fail(ErrorCode::config_error, "unknown gateway role '" + name + "'");
        p.bindings[*role] = model.get<std::string>();
      }
    }
    if (j.contains("retry")) {
      p.retry.max_attempts = j["retry"].value("max_attempts", p.retry.max_attempts);
      p.retry.base_backoff = std::chrono::milliseconds(j["retry"].value("base_backoff_ms", 1000));
    }
    p.parallelism = j.value("parallelism", p.parallelism);
    p.send_top_k = j.value("send_top_k", p.send_top_k);
    p.chars_per_token = j.value("chars_per_token", p.chars_per_token);
    p.transcript_path = j.value("transcript", p.transcript_path);
  } catch (const json::exception& e) {
    fail(ErrorCode::config_error, std::string("gateway profile: ") + e.what());
  }
  p.validate();
  return p;
}

// ---------------------------------------------------------------------------
// Transport

/// Wire boundary. Implementations throw Error{transport_error} for retryable
/// failures and Error{auth_failure} for rejected credentials.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual json post(const std::string& path, const json& body) = 0;
  /// Server-side token count when the endpoint exposes a tokenizer.
  virtual std::optional<std::size_t> count_tokens(const std::string& /*model*/, const std::string& /*text*/) {
    return std::nullopt;
  }
};

inline constexpr std::string_view kChatPath = "/v1/chat/completions";
inline constexpr std::string_view kEmbeddingsPath = "/v1/embeddings";

inline json chat_response_body(const std::string& text) {
  return {{"choices", json::array({{{"index", 0}, {"message", {{"role", "assistant"}, {"content", text}}}}})}};
}

/// Deterministic bag-of-words embedding: each token hashed into one of `dim`
/// buckets, then L2-normalized. Texts sharing words get positive cosine.
inline std::vector<float> hashed_embedding(std::string_view s, std::size_t dim = 8) {
  std::vector<float> v(dim, 0.0f);
  for (const auto& tok : text::tokenize(s)) {
    const auto h = fnv1a64(tok);
    v[h % dim] += (h >> 63) ? 1.0f : 0.5f;
  }
  double norm = 0.0;
  for (float x : v) norm += static_cast<double>(x) * x;
  if (norm == 0.0) {
    v[0] = 1.0f;
    return v;
  }
  for (auto& x : v) x = static_cast<float>(x / std::sqrt(norm));
  return v;
}

/// Ordered (matcher, response) pairs consumed at most once each; unmatched
/// calls fall back to the default responder or fail as exhausted.
class MockScript {
 public:
  using Matcher = std::function<bool(const json& request)>;
  using Responder = std::function<std::string(const json& request)>;

  MockScript& add(Matcher matcher, std::string response) {
    entries_.push_back({std::move(matcher), std::move(response), false});
    return *this;
  }

  /// Matches the content of the last message of a chat request.
  static Matcher last_message_contains(std::string needle) {
    return [needle = std::move(needle)](const json& req) {
      if (!req.contains("messages") || req["messages"].empty()) return false;
      return req["messages"].back().value("content", "").find(needle) != std::string::npos;
    };
  }

  /// Matches requests addressed to the given model id.
  static Matcher model_is(std::string model) {
    return [model = std::move(model)](const json& req) { return req.value("model", "") == model; };
  }

  static Matcher any() {
    return [](const json&) { return true; };
  }

  MockScript& set_default(Responder responder) {
    default_ = std::move(responder);
    return *this;
  }

  MockScript& set_default(std::string text) {
    default_ = [text = std::move(text)](const json&) { return text; };
    return *this;
  }

  std::string respond(const json& request) {
    std::lock_guard lock(mutex_);
    ++calls_;
    for (auto& e : entries_) {
      if (!e.used && e.matcher(request)) {
        e.used = true;
        return e.response;
      }
    }
    if (default_) return default_(request);
    fail(ErrorCode::gateway_exhausted, "mock script exhausted after " + std::to_string(calls_) + " call(s)");
  }

  std::size_t calls() const {
    std::lock_guard lock(mutex_);
    return calls_;
  }

 private:
  struct Entry {
    Matcher matcher;
    std::string response;
    bool used;
  };
  std::vector<Entry> entries_;
  Responder default_;
  std::size_t calls_ = 0;
  mutable std::mutex mutex_;
};

/// Builds a script from JSON:
///   {"once": [rule...], "rules": [rule...], "default": "text"}
/// where rule = {"model"?, "contains"?, "system_contains"?, "response"}.
/// "once" rules are consumed in order; "rules" match repeatedly, first hit wins.
inline std::shared_ptr<MockScript> mock_script_from_json(const json& j) {
  struct Rule {
    std::string model, contains, system_contains, response;
  };
  auto read_rule = [](const json& r) {
    return Rule{r.value("model", ""), r.value("contains", ""), r.value("system_contains", ""),
                r.at("response").get<std::string>()};
  };
  auto matches = [](const Rule& r, const json& req) {
    if (!r.model.empty() && req.value("model", "") != r.model) return false;
    const auto& msgs = req.contains("messages") ? req["messages"] : json::array();
    if (!r.contains.empty() &&
        (msgs.empty() || msgs.back().value("content", "").find(r.contains) == std::string::npos)) {
      return false;
    }
    if (!r.system_contains.empty()) {
      if (msgs.empty() || msgs.front().value("role", "") != "system" ||
          msgs.front().value("content", "").find(r.system_contains) == std::string::npos) {
        return false;
      }
    }
    return true;
  };
  auto script = std::make_shared<MockScript>();
  try {
    for (const auto& r : j.value("once", json::array())) {
      auto rule = read_rule(r);
      script->add([rule, matches](const json& req) { return matches(rule, req); }, rule.response);
    }
    std::vector<Rule> rules;
    for (const auto& r : j.value("rules", json::array())) rules.push_back(read_rule(r));
    const bool has_default = j.contains("default");
    const std::string fallback = j.value("default", "");
    if (!rules.empty() || has_default) {
      script->set_default([rules, matches, has_default, fallback](const json& req) -> std::string {
        for (const auto& r : rules) {
          if (matches(r, req)) return r.response;
        }
        if (!has_default) fail(ErrorCode::gateway_exhausted, "no mock rule matched the request");
        return fallback;
      });
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::config_error, std::string("mock script: ") + e.what());
  }
  return script;
}

/// In-process transport backed by MockScript for chat and a deterministic
/// embedder. Captures every request for parameter-fidelity checks.
class MockTransport : public Transport {
 public:
  using EmbedFn = std::function<std::vector<float>(const std::string&)>;

  explicit MockTransport(std::shared_ptr<MockScript> script = std::make_shared<MockScript>())
      : script_(std::move(script)), embed_([](const std::string& s) { return hashed_embedding(s, 8); }) {}

  json post(const std::string& path, const json& body) override {
    {
      std::lock_guard lock(mutex_);
      requests_.push_back({path, body});
      if (failures_remaining_ > 0) {
        --failures_remaining_;
        fail(ErrorCode::transport_error, "injected transport failure");
      }
    }
    if (path == kEmbeddingsPath) {
      json data = json::array();
      const auto& input = body.at("input");
      for (std::size_t i = 0; i < input.size(); ++i) {
        data.push_back({{"index", i}, {"embedding", embed_(input[i].get<std::string>())}});
      }
      return {{"data", data}};
    }
    return chat_response_body(script_->respond(body));
  }

  void fail_next(int n) {
    std::lock_guard lock(mutex_);
    failures_remaining_ = n;
  }
  void set_embedder(EmbedFn fn) { embed_ = std::move(fn); }

  MockScript& script() { return *script_; }

  std::vector<std::pair<std::string, json>> requests() const {
    std::lock_guard lock(mutex_);
    return requests_;
  }

 private:
  std::shared_ptr<MockScript> script_;
  EmbedFn embed_;
  std::vector<std::pair<std::string, json>> requests_;
  int failures_remaining_ = 0;
  mutable std::mutex mutex_;
};

// ---------------------------------------------------------------------------
// Gateway

/// Single boundary for model calls. Thread-safe; concurrency is capped at
/// the profile's parallelism.
class Gateway {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  Gateway(GatewayProfile profile, std::shared_ptr<Transport> transport)
      : profile_(std::move(profile)),
        transport_(std::move(transport)),
        slots_(profile_.parallelism),
        sleep_([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }) {
    profile_.validate();
    if (!profile_.transcript_path.empty()) {
      transcript_ = std::make_unique<std::ofstream>(profile_.transcript_path, std::ios::app);
    }
  }

  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  const GatewayProfile& profile() const noexcept { return profile_; }
  void set_sleeper(Sleeper s) { sleep_ = std::move(s); }

  std::string chat(Role role, ChatRequest request) {
    if (request.model.empty()) request.model = model_for(role);
    const auto body = to_wire(request, profile_.send_top_k);
    ++calls_[static_cast<int>(role)];
    const json response = post_with_retry(std::string(kChatPath), json(body), role);
    try {
      return response.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
      fail(ErrorCode::transport_error, std::string("malformed chat response: ") + e.what());
    }
  }

  /// Convenience: a single user message, optionally preceded by a system one.
  std::string complete(Role role, const std::string& user, const std::string& system = {}) {
    ChatRequest req;
    if (!system.empty()) req.messages.push_back({"system", system});
    req.messages.push_back({"user", user});
    return chat(role, std::move(req));
  }

  std::vector<std::vector<float>> embed(const std::vector<std::string>& texts) {
    if (texts.empty()) return {};
    ++calls_[static_cast<int>(Role::embedder)];
    ordered_json body;
    body["model"] = model_for(Role::embedder);
    body["input"] = texts;
    const json response = post_with_retry(std::string(kEmbeddingsPath), json(body), Role::embedder);
    std::vector<std::vector<float>> out(texts.size());
    try {
      const auto& data = response.at("data");
      if (data.size() != texts.size()) {
        fail(ErrorCode::dimension_mismatch, "embedding count does not match input count");
      }
      for (std::size_t i = 0; i < data.size(); ++i) {
        const auto idx = data[i].value("index", i);
        if (idx >= out.size()) fail(ErrorCode::transport_error, "embedding index out of range");
        out[idx] = data[i].at("embedding").get<std::vector<float>>();
      }
    } catch (const json::exception& e) {
      fail(ErrorCode::transport_error, std::string("malformed embedding response: ") + e.what());
    }
    const std::size_t dim = out.front().size();
    for (const auto& v : out) {
      if (v.size() != dim || dim == 0) fail(ErrorCode::dimension_mismatch, "embedding dimensions disagree");
    }
    return out;
  }

  /// Server tokenizer count when available, else ceil(codepoints / chars_per_token).
  std::size_t count_tokens(const std::string& s) const {
    if (s.empty()) return 0;
    if (auto n = transport_->count_tokens(profile_.bindings.at(Role::system), s)) return *n;
    return estimate_tokens(s, profile_.chars_per_token);
  }

  static std::size_t estimate_tokens(std::string_view s, double chars_per_token) {
    return static_cast<std::size_t>(std::ceil(static_cast<double>(text::codepoint_count(s)) / chars_per_token));
  }

  std::size_t calls(Role role) const { return calls_[static_cast<int>(role)].load(); }

 private:
  const std::string& model_for(Role role) const {
    const auto it = profile_.bindings.find(role);
    if (it == profile_.bindings.end()) fail(ErrorCode::config_error, "role not bound");
    return it->second;
  }

  json post_with_retry(const std::string& path, const json& body, Role role) {
    slots_.acquire();
    struct Release {
      std::counting_semaphore<>& s;
      ~Release() { s.release(); }
    } release{slots_};

    std::string last_error;
    for (int attempt = 0; attempt < profile_.retry.max_attempts; ++attempt) {
      if (attempt > 0) sleep_(profile_.retry.base_backoff * (1 << (attempt - 1)));
      try {
        json response = transport_->post(path, body);
        log_transcript(role, body, &response, {});
        return response;
      } catch (const Error& e) {
        log_transcript(role, body, nullptr, e.what());
        if (e.code() != ErrorCode::transport_error) throw;
        last_error = e.what();
      }
    }
    fail(ErrorCode::gateway_exhausted, std::to_string(profile_.retry.max_attempts) +
                                           " attempt(s) failed; last error: " + last_error);
  }

  void log_transcript(Role role, const json& request, const json* response, const std::string& error) {
    if (!transcript_) return;
    ordered_json line;
    line["role"] = to_string(role);
    line["request"] = request;
    if (response) line["response"] = *response;
    if (!error.empty()) line["error"] = error;
    std::lock_guard lock(transcript_mutex_);
    *transcript_ << line.dump() << '\n';
    transcript_->flush();
  }

  GatewayProfile profile_;
  std::shared_ptr<Transport> transport_;
  std::counting_semaphore<> slots_;
  Sleeper sleep_;
  std::array<std::atomic<std::size_t>, 4> calls_{};
  std::unique_ptr<std::ofstream> transcript_;
  std::mutex transcript_mutex_;
};

/// Credential lookup for HTTP transports: the profile names the variable.
inline std::string read_credentials(const GatewayProfile& profile) {
  const char* v = std::getenv(profile.credentials_env.c_str());
  return v ? std::string(v) : std::string();
}

}  // namespace feedbench
