#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "feedbench/errors.hpp"
#include "feedbench/llm_gateway.hpp"
#include "feedbench/session.hpp"
#include "feedbench/task_provider.hpp"
#include "feedbench/text.hpp"
#include "json.hpp"

namespace feedbench {

enum class EntrySource { corpus, feedback_log };

inline std::string_view to_string(EntrySource s) { return s == EntrySource::corpus ? "corpus" : "feedback_log"; }

inline std::optional<EntrySource> parse_entry_source(std::string_view s) {
  if (s == "corpus") return EntrySource::corpus;
  if (s == "feedback_log") return EntrySource::feedback_log;
  return std::nullopt;
}

struct MemoryEntry {
  std::string entry_id;
  std::string text;
  EntrySource source = EntrySource::corpus;
  std::optional<std::string> session_ref;
  std::optional<std::size_t> position;
  std::string index_key;

  friend bool operator==(const MemoryEntry&, const MemoryEntry&) = default;
};

inline nlohmann::ordered_json to_json(const MemoryEntry& e) {
  nlohmann::ordered_json j;
  j["entry_id"] = e.entry_id;
  j["text"] = e.text;
  j["source"] = to_string(e.source);
  j["session_ref"] = e.session_ref ? nlohmann::ordered_json(*e.session_ref) : nlohmann::ordered_json(nullptr);
  j["position"] = e.position ? nlohmann::ordered_json(*e.position) : nlohmann::ordered_json(nullptr);
  j["index_key"] = e.index_key;
  return j;
}

inline MemoryEntry memory_entry_from_json(const nlohmann::json& j) {
  MemoryEntry e;
  try {
    e.entry_id = j.at("entry_id").get<std::string>();
    e.text = j.at("text").get<std::string>();
    const auto src = parse_entry_source(j.at("source").get<std::string>());
    if (!src) fail(ErrorCode::config_error, "unknown entry source");
    e.source = *src;
    if (j.contains("session_ref") && !j["session_ref"].is_null()) e.session_ref = j["session_ref"].get<std::string>();
    if (j.contains("position") && !j["position"].is_null()) e.position = j["position"].get<std::size_t>();
    e.index_key = j.at("index_key").get<std::string>();
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorCode::config_error, std::string("memory entry: ") + ex.what());
  }
  return e;
}

enum class Granularity { message, session };
enum class Scorer { lexical, embedding };

inline std::string_view to_string(Granularity g) { return g == Granularity::message ? "message" : "session"; }
inline std::string_view to_string(Scorer s) { return s == Scorer::lexical ? "lexical" : "embedding"; }

inline std::optional<Granularity> parse_granularity(std::string_view s) {
  if (s == "message") return Granularity::message;
  if (s == "session") return Granularity::session;
  return std::nullopt;
}

inline std::optional<Scorer> parse_scorer(std::string_view s) {
  if (s == "lexical") return Scorer::lexical;
  if (s == "embedding") return Scorer::embedding;
  return std::nullopt;
}

struct RetrievalConfig {
  std::size_t top_k = 5;
  std::size_t context_token_budget = 32768;
  Granularity granularity = Granularity::session;
  Scorer scorer = Scorer::lexical;

  void validate() const {
    if (top_k < 1) fail(ErrorCode::config_error, "top_k must be >= 1");
    if (context_token_budget == 0) fail(ErrorCode::config_error, "context_token_budget must be > 0");
  }
};

// ---------------------------------------------------------------------------
// Entry construction

/// Entries for a case's declarative context.
inline std::vector<MemoryEntry> corpus_entries(const TaskCase& c, Granularity g) {
  std::vector<MemoryEntry> out;
  for (std::size_t s = 0; s < c.context.size(); ++s) {
    const auto& session = c.context[s];
    const std::string ref = session.session_id.empty() ? c.case_id + "#" + std::to_string(s) : session.session_id;
    if (g == Granularity::session) {
      const auto body = session.text();
      if (body.empty()) continue;
      out.push_back({"", body, EntrySource::corpus, ref, std::nullopt, body});
    } else {
      for (std::size_t p = 0; p < session.messages.size(); ++p) {
        if (session.messages[p].empty()) continue;
        out.push_back({"", session.messages[p], EntrySource::corpus, ref, p, session.messages[p]});
      }
    }
  }
  return out;
}

/// Entries for feedback sessions. Session granularity indexes the whole
/// dialog by its originating question; message granularity gives one entry
/// per turn with its position.
inline std::vector<MemoryEntry> session_entries(const std::vector<FeedbackSession>& sessions, Granularity g) {
  std::vector<MemoryEntry> out;
  for (const auto& s : sessions) {
    if (g == Granularity::session) {
      out.push_back({"", render_dialog(s.turns), EntrySource::feedback_log, s.case_id, std::nullopt, s.question()});
    } else {
      for (std::size_t p = 0; p < s.turns.size(); ++p) {
        const auto& t = s.turns[p];
        out.push_back({"", render_dialog({t}), EntrySource::feedback_log, s.case_id, p, t.content});
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Lexical index

struct ScoredEntry {
  std::size_t index = 0;
  double score = 0.0;
};

/// Top-k by descending score; equal scores keep insertion order.
inline std::vector<ScoredEntry> top_k_stable(std::vector<ScoredEntry> scored, std::size_t k) {
  std::stable_sort(scored.begin(), scored.end(),
                   [](const ScoredEntry& a, const ScoredEntry& b) { return a.score > b.score; });
  if (scored.size() > k) scored.resize(k);
  return scored;
}

/// Incremental Okapi BM25 with idf = ln(1 + (N - n + 0.5) / (n + 0.5)).
/// Query terms are deduplicated.
class Bm25Index {
 public:
  explicit Bm25Index(double k1 = 1.2, double b = 0.75) : k1_(k1), b_(b) {}

  void add(std::string_view key) {
    const auto terms = text::index_terms(key);
    const std::size_t doc = lengths_.size();
    lengths_.push_back(terms.size());
    total_length_ += terms.size();
    std::unordered_map<std::string, std::uint32_t> tf;
    for (const auto& t : terms) ++tf[t];
    // deterministic posting order regardless of hash layout
    std::vector<std::pair<std::string, std::uint32_t>> sorted(tf.begin(), tf.end());
    std::sort(sorted.begin(), sorted.end());
    for (auto& [term, n] : sorted) postings_[term].push_back({doc, n});
  }

  std::size_t size() const noexcept { return lengths_.size(); }
  double k1() const noexcept { return k1_; }
  double b() const noexcept { return b_; }

  double idf(const std::string& term) const {
    const auto it = postings_.find(term);
    const double n = it == postings_.end() ? 0.0 : static_cast<double>(it->second.size());
    const double N = static_cast<double>(lengths_.size());
    return std::log(1.0 + (N - n + 0.5) / (n + 0.5));
  }

  /// Score of every document with positive score, in document order.
  std::vector<ScoredEntry> score_all(std::string_view query) const {
    std::vector<double> scores(lengths_.size(), 0.0);
    if (lengths_.empty()) return {};
    const double avgdl = static_cast<double>(total_length_) / static_cast<double>(lengths_.size());
    auto terms = text::index_terms(query);
    std::sort(terms.begin(), terms.end());
    terms.erase(std::unique(terms.begin(), terms.end()), terms.end());
    for (const auto& term : terms) {
      const auto it = postings_.find(term);
      if (it == postings_.end()) continue;
      const double w = idf(term);
      for (const auto& [doc, tf] : it->second) {
        const double f = static_cast<double>(tf);
        const double dl = static_cast<double>(lengths_[doc]);
        const double norm = avgdl > 0.0 ? dl / avgdl : 0.0;
        scores[doc] += w * f * (k1_ + 1.0) / (f + k1_ * (1.0 - b_ + b_ * norm));
      }
    }
    std::vector<ScoredEntry> out;
    for (std::size_t d = 0; d < scores.size(); ++d) {
      if (scores[d] > 0.0) out.push_back({d, scores[d]});
    }
    return out;
  }

  std::vector<ScoredEntry> search(std::string_view query, std::size_t k) const { return top_k_stable(score_all(query), k); }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["k1"] = k1_;
    j["b"] = b_;
    j["doc_lengths"] = lengths_;
    std::vector<std::string> terms;
    for (const auto& [t, _] : postings_) terms.push_back(t);
    std::sort(terms.begin(), terms.end());
    j["postings"] = nlohmann::ordered_json::object();
    for (const auto& t : terms) {
      auto arr = nlohmann::ordered_json::array();
      for (const auto& [doc, tf] : postings_.at(t)) arr.push_back({doc, tf});
      j["postings"][t] = std::move(arr);
    }
    return j;
  }

  static Bm25Index from_json(const nlohmann::json& j) {
    Bm25Index idx(j.at("k1").get<double>(), j.at("b").get<double>());
    idx.lengths_ = j.at("doc_lengths").get<std::vector<std::size_t>>();
    idx.total_length_ = std::accumulate(idx.lengths_.begin(), idx.lengths_.end(), std::size_t{0});
    for (const auto& [term, list] : j.at("postings").items()) {
      auto& p = idx.postings_[term];
      for (const auto& pair : list) p.push_back({pair.at(0).get<std::size_t>(), pair.at(1).get<std::uint32_t>()});
    }
    return idx;
  }

 private:
  double k1_;
  double b_;
  std::vector<std::size_t> lengths_;
  std::size_t total_length_ = 0;
  std::unordered_map<std::string, std::vector<std::pair<std::size_t, std::uint32_t>>> postings_;
};

// ---------------------------------------------------------------------------
// Embedding index

inline double cosine(const std::vector<float>& a, const std::vector<float>& b) {
  if (a.size() != b.size()) fail(ErrorCode::dimension_mismatch, "vectors differ in dimension");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

using EmbedFn = std::function<std::vector<std::vector<float>>(const std::vector<std::string>&)>;

/// Dense vectors with an embedding cache keyed by the SHA-256 of the text.
class EmbeddingIndex {
 public:
  explicit EmbeddingIndex(EmbedFn embed) : embed_(std::move(embed)) {}

  void add_batch(const std::vector<std::string>& keys) {
    std::vector<std::string> missing;
    {
      std::lock_guard lock(cache_mutex_);
      for (const auto& k : keys) {
        const auto h = text::sha256_hex(k);
        if (!cache_.count(h) && std::find(missing.begin(), missing.end(), k) == missing.end()) missing.push_back(k);
      }
    }
    if (!missing.empty()) {
      const auto vecs = embed_(missing);
      if (vecs.size() != missing.size()) fail(ErrorCode::dimension_mismatch, "embedder returned wrong row count");
      std::lock_guard lock(cache_mutex_);
      for (std::size_t i = 0; i < missing.size(); ++i) cache_[text::sha256_hex(missing[i])] = vecs[i];
    }
    std::lock_guard lock(cache_mutex_);
    for (const auto& k : keys) {
      const auto& v = cache_.at(text::sha256_hex(k));
      if (dimension_ == 0) dimension_ = v.size();
      if (v.size() != dimension_) fail(ErrorCode::dimension_mismatch, "embedding dimension changed");
      rows_.push_back(v);
    }
  }

  std::size_t size() const noexcept { return rows_.size(); }
  std::size_t dimension() const noexcept { return dimension_; }
  const std::vector<std::vector<float>>& rows() const noexcept { return rows_; }
  std::size_t cache_size() const {
    std::lock_guard lock(cache_mutex_);
    return cache_.size();
  }

  std::vector<ScoredEntry> search(std::string_view query, std::size_t k) const {
    if (rows_.empty()) return {};
    const auto q = embed_({std::string(query)});
    if (q.size() != 1) fail(ErrorCode::dimension_mismatch, "embedder returned wrong row count");
    std::vector<ScoredEntry> scored;
    for (std::size_t i = 0; i < rows_.size(); ++i) scored.push_back({i, cosine(q[0], rows_[i])});
    return top_k_stable(std::move(scored), k);
  }

  /// uint32 dimension, uint64 row count, then row-major float32 values, all
  /// little-endian.
  void write_vectors(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::config_error, "cannot write " + path);
    put_le(out, static_cast<std::uint32_t>(dimension_));
    put_le(out, static_cast<std::uint64_t>(rows_.size()));
    for (const auto& r : rows_) {
      for (float f : r) {
        std::uint32_t bits;
        std::memcpy(&bits, &f, sizeof bits);
        put_le(out, bits);
      }
    }
  }

  void read_vectors(const std::string& path, const std::vector<std::string>& keys) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::config_error, "cannot open " + path);
    const auto dim = get_le<std::uint32_t>(in);
    const auto rows = get_le<std::uint64_t>(in);
    if (!in || rows != keys.size()) fail(ErrorCode::config_error, "vector sidecar does not match entries");
    rows_.assign(rows, std::vector<float>(dim));
    for (auto& r : rows_) {
      for (auto& f : r) {
        const auto bits = get_le<std::uint32_t>(in);
        std::memcpy(&f, &bits, sizeof f);
      }
    }
    if (!in) fail(ErrorCode::config_error, "truncated vector sidecar " + path);
    dimension_ = dim;
    std::lock_guard lock(cache_mutex_);
    for (std::size_t i = 0; i < keys.size(); ++i) cache_[text::sha256_hex(keys[i])] = rows_[i];
  }

 private:
  template <typename T>
  static void put_le(std::ostream& out, T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xFF));
  }

  template <typename T>
  static T get_le(std::istream& in) {
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      const int c = in.get();
      if (c == EOF) return 0;
      v |= static_cast<T>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return v;
  }

  EmbedFn embed_;
  std::vector<std::vector<float>> rows_;
  std::size_t dimension_ = 0;
  mutable std::mutex cache_mutex_;
  std::unordered_map<std::string, std::vector<float>> cache_;
};

// ---------------------------------------------------------------------------
// Prompt assembly and backoff

inline constexpr std::string_view kMemoryPrompt =
    "User Memories:\n\n{memories}\n\nUser input:\n\n{query}\n\n"
    "Based on the memories provided, respond naturally and appropriately to the user's input above.";

/// Memories are numbered "[1] text", one per line.
inline std::string assemble_prompt(const std::vector<MemoryEntry>& memories, const std::string& query) {
  std::string block;
  for (std::size_t i = 0; i < memories.size(); ++i) {
    if (i) block.push_back('\n');
    block += "[" + std::to_string(i + 1) + "] " + memories[i].text;
  }
  return text::fill_slots(kMemoryPrompt, {{"memories", block}, {"query", query}});
}

using TokenCounter = std::function<std::size_t(const std::string&)>;

inline TokenCounter whitespace_token_counter() {
  return [](const std::string& s) {
    std::size_t n = 0;
    bool in_word = false;
    for (unsigned char ch : s) {
      const bool space = std::isspace(ch) != 0;
      if (!space && !in_word) ++n;
      in_word = !space;
    }
    return n;
  };
}

inline TokenCounter gateway_token_counter(const Gateway& gateway) {
  return [&gateway](const std::string& s) { return gateway.count_tokens(s); };
}

/// Largest k <= min(top_k, candidates) whose prompt fits the budget, tried
/// from the top down. Throws BudgetUnsatisfiable when the bare query does not fit.
inline std::size_t fit_memories(const std::vector<MemoryEntry>& candidates, const std::string& query,
                                std::size_t top_k, std::size_t budget, const TokenCounter& count) {
  std::size_t k = std::min(top_k, candidates.size());
  for (;; --k) {
    const std::vector<MemoryEntry> head(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k));
    if (count(assemble_prompt(head, query)) <= budget) return k;
    if (k == 0) break;
  }
  fail(ErrorCode::budget_unsatisfiable, "query alone exceeds the context budget");
}

/// Prompt for the no-memory baseline: the first n context sessions that fit,
/// followed by the query. A session that does not fit ends the prefix.
inline std::string vanilla_prompt(const std::string& query, const std::vector<ContextSession>& context,
                                  std::size_t budget, const TokenCounter& count) {
  if (count(query) > budget) fail(ErrorCode::budget_unsatisfiable, "query alone exceeds the context budget");
  std::string prefix;
  std::string best = query;
  for (const auto& s : context) {
    std::string next = prefix.empty() ? s.text() : prefix + "\n\n" + s.text();
    std::string candidate = next + "\n\n" + query;
    if (count(candidate) > budget) break;
    prefix = std::move(next);
    best = std::move(candidate);
  }
  return best;
}

inline std::string vanilla_answer(const std::string& query, const std::vector<ContextSession>& context,
                                  Gateway& gateway, std::size_t budget) {
  return gateway.complete(Role::system, vanilla_prompt(query, context, budget, gateway_token_counter(gateway)));
}

/// Sends the first-turn prompt followed by the remaining dialog as chat
/// messages.
inline std::string chat_with_history(Gateway& gateway, const std::string& first_prompt, const Dialog& history) {
  ChatRequest req;
  req.messages.push_back({"user", first_prompt});
  for (std::size_t i = 1; i < history.size(); ++i) {
    req.messages.push_back({history[i].role == TurnRole::user ? "user" : "assistant", history[i].content});
  }
  return gateway.chat(Role::system, std::move(req));
}

// ---------------------------------------------------------------------------
// Memory systems

/// Per-dialog state. Memory is consulted on the first turn only; later turns
/// reuse that prompt.
struct SessionState {
  bool started = false;
  std::string first_prompt;
  std::vector<MemoryEntry> retrieved;
};

class MemorySystem {
 public:
  virtual ~MemorySystem() = default;
  virtual std::string name() const = 0;
  virtual std::size_t ingest_corpus(const TaskCase& c) = 0;
  virtual std::size_t ingest_sessions(const std::vector<FeedbackSession>& sessions) = 0;
  /// `history` ends with the user turn to answer; its first turn is the query.
  virtual std::string respond(const TaskCase& c, const Dialog& history, SessionState& state) = 0;
  virtual std::size_t entry_count() const = 0;
  virtual bool uses_memory() const = 0;

  std::string answer(const TaskCase& c) {
    SessionState state;
    return respond(c, Dialog{{TurnRole::user, c.query, 0}}, state);
  }
};

class VanillaSystem : public MemorySystem {
 public:
  VanillaSystem(Gateway& gateway, std::size_t budget) : gateway_(gateway), budget_(budget) {}

  std::string name() const override { return "Vanilla"; }
  std::size_t ingest_corpus(const TaskCase&) override { return 0; }
  std::size_t ingest_sessions(const std::vector<FeedbackSession>&) override { return 0; }
  std::size_t entry_count() const override { return 0; }
  bool uses_memory() const override { return false; }

  std::string respond(const TaskCase& c, const Dialog& history, SessionState& state) override {
    if (history.empty()) fail(ErrorCode::invalid_argument, "empty dialog history");
    if (!state.started) {
      state.first_prompt = vanilla_prompt(history.front().content, c.context, budget_, gateway_token_counter(gateway_));
      state.started = true;
    }
    return chat_with_history(gateway_, state.first_prompt, history);
  }

 private:
  Gateway& gateway_;
  std::size_t budget_;
};

inline constexpr std::string_view kIndexSchema = "feedbench.index/1";

/// Retrieval-augmented generation over one index holding both corpus and
/// feedback entries.
class RetrievalMemory : public MemorySystem {
 public:
  RetrievalMemory(Gateway& gateway, RetrievalConfig config, std::string name = {})
      : gateway_(gateway),
        config_(config),
        name_(name.empty() ? default_name(config) : std::move(name)),
        embeddings_([&gateway](const std::vector<std::string>& t) { return gateway.embed(t); }) {
    config_.validate();
  }

  static std::string default_name(const RetrievalConfig& c) {
    return std::string(c.scorer == Scorer::lexical ? "BM25" : "Embed") + (c.granularity == Granularity::message ? "-M" : "-S");
  }

  std::string name() const override { return name_; }
  bool uses_memory() const override { return true; }
  const RetrievalConfig& config() const noexcept { return config_; }

  std::size_t entry_count() const override {
    std::shared_lock lock(mutex_);
    return entries_.size();
  }

  std::vector<MemoryEntry> entries() const {
    std::shared_lock lock(mutex_);
    return entries_;
  }

  std::size_t ingest_corpus(const TaskCase& c) override { return add(corpus_entries(c, config_.granularity)); }

  std::size_t ingest_sessions(const std::vector<FeedbackSession>& sessions) override {
    return add(session_entries(sessions, config_.granularity));
  }

  /// Adds prepared entries; ids are assigned in insertion order.
  std::size_t add(std::vector<MemoryEntry> batch) {
    std::unique_lock lock(mutex_);
    std::vector<std::string> keys;
    for (auto& e : batch) {
      e.entry_id = "e" + std::to_string(entries_.size() + keys.size());
      keys.push_back(e.index_key);
    }
    if (config_.scorer == Scorer::embedding) {
      if (!keys.empty()) embeddings_.add_batch(keys);
    } else {
      for (const auto& k : keys) bm25_.add(k);
    }
    for (auto& e : batch) entries_.push_back(std::move(e));
    return batch.size();
  }

  std::vector<MemoryEntry> retrieve(const std::string& query) const { return retrieve(query, config_.top_k); }

  std::vector<MemoryEntry> retrieve(const std::string& query, std::size_t k) const {
    std::shared_lock lock(mutex_);
    const auto hits = config_.scorer == Scorer::lexical ? bm25_.search(query, k) : embeddings_.search(query, k);
    std::vector<MemoryEntry> out;
    for (const auto& h : hits) out.push_back(entries_[h.index]);
    return out;
  }

  std::vector<ScoredEntry> scores(const std::string& query) const {
    std::shared_lock lock(mutex_);
    return config_.scorer == Scorer::lexical ? bm25_.search(query, entries_.size())
                                             : embeddings_.search(query, entries_.size());
  }

  std::string respond(const TaskCase&, const Dialog& history, SessionState& state) override {
    if (history.empty()) fail(ErrorCode::invalid_argument, "empty dialog history");
    if (!state.started) {
      const auto& query = history.front().content;
      auto candidates = retrieve(query);
      const auto k = fit_memories(candidates, query, config_.top_k, config_.context_token_budget,
                                  gateway_token_counter(gateway_));
      candidates.resize(k);
      state.first_prompt = assemble_prompt(candidates, query);
      state.retrieved = std::move(candidates);
      state.started = true;
    }
    return chat_with_history(gateway_, state.first_prompt, history);
  }

  /// Retrieves, backs off to the budget, and calls the backbone once.
  std::string answer_with_backoff(const std::string& query) {
    TaskCase c;
    c.query = query;
    SessionState state;
    return respond(c, Dialog{{TurnRole::user, query, 0}}, state);
  }

  /// Writes manifest.json, entries.jsonl and postings.json or vectors.bin.
  void save(const std::filesystem::path& dir) const {
    std::shared_lock lock(mutex_);
    std::filesystem::create_directories(dir);
    nlohmann::ordered_json manifest;
    manifest["schema"] = kIndexSchema;
    manifest["name"] = name_;
    manifest["granularity"] = to_string(config_.granularity);
    manifest["scorer"] = to_string(config_.scorer);
    manifest["top_k"] = config_.top_k;
    manifest["context_token_budget"] = config_.context_token_budget;
    manifest["entry_count"] = entries_.size();
    manifest["sidecar"] = config_.scorer == Scorer::lexical ? "postings.json" : "vectors.bin";
    std::ofstream(dir / "manifest.json", std::ios::trunc) << manifest.dump(2) << '\n';
    std::ofstream entries(dir / "entries.jsonl", std::ios::trunc);
    for (const auto& e : entries_) entries << to_json(e).dump() << '\n';
    if (config_.scorer == Scorer::lexical) {
      std::ofstream(dir / "postings.json", std::ios::trunc) << bm25_.to_json().dump() << '\n';
    } else {
      embeddings_.write_vectors((dir / "vectors.bin").string());
    }
  }

  static std::unique_ptr<RetrievalMemory> load(const std::filesystem::path& dir, Gateway& gateway) {
    std::ifstream mf(dir / "manifest.json");
    if (!mf) fail(ErrorCode::config_error, "no index manifest in " + dir.string());
    auto manifest = nlohmann::json::parse(mf, nullptr, false);
    if (manifest.is_discarded() || manifest.value("schema", "") != kIndexSchema) {
      fail(ErrorCode::config_error, "unsupported index manifest in " + dir.string());
    }
    RetrievalConfig cfg;
    const auto g = parse_granularity(manifest.value("granularity", ""));
    const auto s = parse_scorer(manifest.value("scorer", ""));
    if (!g || !s) fail(ErrorCode::config_error, "index manifest has unknown granularity or scorer");
    cfg.granularity = *g;
    cfg.scorer = *s;
    cfg.top_k = manifest.value("top_k", std::size_t{5});
    cfg.context_token_budget = manifest.value("context_token_budget", std::size_t{32768});
    auto mem = std::make_unique<RetrievalMemory>(gateway, cfg, manifest.value("name", ""));
    std::ifstream ef(dir / "entries.jsonl");
    std::string line;
    std::vector<std::string> keys;
    while (std::getline(ef, line)) {
      if (line.empty()) continue;
      auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded()) fail(ErrorCode::config_error, "corrupt entries.jsonl");
      mem->entries_.push_back(memory_entry_from_json(j));
      keys.push_back(mem->entries_.back().index_key);
    }
    if (mem->entries_.size() != manifest.value("entry_count", std::size_t{0})) {
      fail(ErrorCode::config_error, "entry count does not match manifest");
    }
    if (cfg.scorer == Scorer::lexical) {
      std::ifstream pf(dir / "postings.json");
      auto pj = nlohmann::json::parse(pf, nullptr, false);
      if (pj.is_discarded()) fail(ErrorCode::config_error, "corrupt postings.json");
      mem->bm25_ = Bm25Index::from_json(pj);
      if (mem->bm25_.size() != keys.size()) fail(ErrorCode::config_error, "postings do not match entries");
    } else {
      mem->embeddings_.read_vectors((dir / "vectors.bin").string(), keys);
    }
    return mem;
  }

 private:
  Gateway& gateway_;
  RetrievalConfig config_;
  std::string name_;
  mutable std::shared_mutex mutex_;
  std::vector<MemoryEntry> entries_;
  Bm25Index bm25_;
  EmbeddingIndex embeddings_;
};

/// Bridges a memory system running in another process. The service exposes
/// POST /memory/ingest {entries} -> {count}, POST /memory/respond
/// {case_id, dataset, history} -> {response}, and POST /memory/count -> {count}.
class ExternalMemoryAdapter : public MemorySystem {
 public:
  ExternalMemoryAdapter(std::string name, std::shared_ptr<Transport> transport, Granularity granularity)
      : name_(std::move(name)), transport_(std::move(transport)), granularity_(granularity) {}

  std::string name() const override { return name_; }
  bool uses_memory() const override { return true; }

  std::size_t ingest_corpus(const TaskCase& c) override { return push(corpus_entries(c, granularity_)); }

  std::size_t ingest_sessions(const std::vector<FeedbackSession>& sessions) override {
    return push(session_entries(sessions, granularity_));
  }

  std::string respond(const TaskCase& c, const Dialog& history, SessionState&) override {
    json body;
    body["case_id"] = c.case_id;
    body["dataset"] = c.dataset_id;
    body["history"] = json::array();
    for (const auto& t : history) body["history"].push_back({{"role", to_string(t.role)}, {"content", t.content}});
    const auto res = transport_->post("/memory/respond", body);
    if (!res.contains("response") || !res["response"].is_string()) {
      fail(ErrorCode::system_failure, "memory service returned no response");
    }
    return res["response"].get<std::string>();
  }

  std::size_t entry_count() const override {
    const auto res = transport_->post("/memory/count", json::object());
    return res.value("count", std::size_t{0});
  }

 private:
  std::size_t push(const std::vector<MemoryEntry>& entries) {
    if (entries.empty()) return 0;
    json body;
    body["entries"] = json::array();
    for (const auto& e : entries) body["entries"].push_back(json::parse(to_json(e).dump()));
    const auto res = transport_->post("/memory/ingest", body);
    return res.value("count", entries.size());
  }

  std::string name_;
  std::shared_ptr<Transport> transport_;
  Granularity granularity_;
};

/// Builds a baseline by name: Vanilla, BM25-M, BM25-S, Embed-M, Embed-S.
inline std::unique_ptr<MemorySystem> make_system(const std::string& name, Gateway& gateway, RetrievalConfig base) {
  if (name == "Vanilla" || name == "vanilla") {
    return std::make_unique<VanillaSystem>(gateway, base.context_token_budget);
  }
  std::string lower;
  for (char ch : name) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  if (lower == "bm25-m" || lower == "bm25-s" || lower == "embed-m" || lower == "embed-s") {
    base.scorer = lower.rfind("bm25", 0) == 0 ? Scorer::lexical : Scorer::embedding;
    base.granularity = lower.back() == 'm' ? Granularity::message : Granularity::session;
    return std::make_unique<RetrievalMemory>(gateway, base);
  }
  fail(ErrorCode::config_error, "unknown memory system '" + name + "'");
}

}  // namespace feedbench
