#pragma once

#include <atomic>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "feedbench/feedbench.hpp"

namespace testkit {

using namespace feedbench;

/// Distinct model ids per role so scripts can match on the request model.
inline GatewayProfile role_profile() {
  GatewayProfile p;
  p.bindings[Role::system] = "backbone";
  p.bindings[Role::simulator] = "simulator";
  p.bindings[Role::judge] = "judge";
  p.bindings[Role::embedder] = "embedder";
  p.retry.base_backoff = std::chrono::milliseconds(0);
  return p;
}

struct MockEnv {
  std::shared_ptr<MockScript> script = std::make_shared<MockScript>();
  std::shared_ptr<MockTransport> transport = std::make_shared<MockTransport>(script);
  Gateway gateway;

  explicit MockEnv(GatewayProfile profile = role_profile()) : gateway(std::move(profile), transport) {
    gateway.set_sleeper([](std::chrono::milliseconds) {});
  }
};

inline std::string end_verdict(const std::string& reasoning = "done") {
  return nlohmann::json{{"reasoning", reasoning}, {"behavior", "end_conversation"}, {"response", nullptr}}.dump();
}

inline std::string continue_verdict(const std::string& response, const std::string& reasoning = "needs more") {
  return nlohmann::json{{"reasoning", reasoning}, {"behavior", "continue_conversation"}, {"response", response}}.dump();
}

inline std::string score_reply(int s) { return nlohmann::json{{"score", s}}.dump(); }

/// Memory system whose answers come from a callback.
class ScriptedSystem : public MemorySystem {
 public:
  using Responder = std::function<std::string(const TaskCase&, const Dialog&)>;

  explicit ScriptedSystem(Responder r, bool memory = true) : responder_(std::move(r)), memory_(memory) {}

  std::string name() const override { return "Scripted"; }
  std::size_t ingest_corpus(const TaskCase& c) override {
    const auto n = c.context.size();
    entries_ += n;
    return n;
  }
  std::size_t ingest_sessions(const std::vector<FeedbackSession>& s) override {
    entries_ += s.size();
    ingested_.insert(ingested_.end(), s.begin(), s.end());
    return s.size();
  }
  std::string respond(const TaskCase& c, const Dialog& history, SessionState& state) override {
    ++calls_;
    state.started = true;
    return responder_(c, history);
  }
  std::size_t entry_count() const override { return entries_; }
  bool uses_memory() const override { return memory_; }

  std::size_t calls() const { return calls_; }
  const std::vector<FeedbackSession>& ingested() const { return ingested_; }

 private:
  Responder responder_;
  bool memory_;
  std::atomic<std::size_t> calls_{0};
  std::size_t entries_ = 0;
  std::vector<FeedbackSession> ingested_;
};

inline TaskCase make_case(const std::string& id, const std::string& dataset, const std::string& query,
                          const std::string& metric = "f1", const std::string& gold = "gold answer",
                          TaskFormat format = TaskFormat::SiSo) {
  TaskCase c;
  c.case_id = id;
  c.dataset_id = dataset;
  c.query = query;
  c.eval.metric = metric;
  c.eval.gold = gold;
  if (metric == "judge") c.eval.judge_template = "rubric";
  c.format = format;
  return c;
}

}  // namespace testkit
