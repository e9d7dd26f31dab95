#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "feedbench/errors.hpp"
#include "feedbench/llm_gateway.hpp"
#include "feedbench/task_provider.hpp"
#include "feedbench/text.hpp"
#include "json.hpp"

namespace feedbench {

// ---------------------------------------------------------------------------
// Text metrics

/// Bag-of-tokens F1. Both empty -> 1, exactly one empty -> 0.
inline double token_f1(std::string_view prediction, std::string_view gold) {
  const auto pred = text::tokenize(prediction);
  const auto ref = text::tokenize(gold);
  if (pred.empty() && ref.empty()) return 1.0;
  if (pred.empty() || ref.empty()) return 0.0;
  std::unordered_map<std::string, int> counts;
  for (const auto& t : ref) ++counts[t];
  std::size_t common = 0;
  for (const auto& t : pred) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double p = static_cast<double>(common) / static_cast<double>(pred.size());
  const double r = static_cast<double>(common) / static_cast<double>(ref.size());
  return 2.0 * p * r / (p + r);
}

/// Length of the longest common subsequence of two token sequences
/// (bit-parallel, O(n * ceil(m / 64))).
inline std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  if (a.empty() || b.empty()) return 0;
  const std::size_t words = (a.size() + 63) / 64;
  std::unordered_map<std::string_view, std::vector<std::uint64_t>> match;
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto& mask = match[a[i]];
    if (mask.empty()) mask.assign(words, 0);
    mask[i / 64] |= std::uint64_t{1} << (i % 64);
  }
  std::vector<std::uint64_t> v(words, ~std::uint64_t{0});
  for (const auto& tok : b) {
    const auto it = match.find(tok);
    if (it == match.end()) continue;
    const auto& m = it->second;
    std::uint64_t carry = 0;
    for (std::size_t w = 0; w < words; ++w) {
      const std::uint64_t u = v[w] & m[w];
      const std::uint64_t sum = v[w] + u;
      const std::uint64_t with_carry = sum + carry;
      const std::uint64_t next_carry = (sum < v[w]) || (with_carry < sum) ? 1 : 0;
      v[w] = with_carry | (v[w] & ~u);
      carry = next_carry;
    }
  }
  std::size_t zeros = 0;
  for (std::size_t w = 0; w < words; ++w) {
    const std::size_t bits = (w + 1 == words && a.size() % 64) ? a.size() % 64 : 64;
    const std::uint64_t mask = bits == 64 ? ~std::uint64_t{0} : ((std::uint64_t{1} << bits) - 1);
    zeros += bits - static_cast<std::size_t>(__builtin_popcountll(v[w] & mask));
  }
  return zeros;
}

/// ROUGE-L F-measure over tokens, F = 2PR / (P + R).
inline double rouge_l(std::string_view prediction, std::string_view gold) {
  const auto pred = text::tokenize(prediction);
  const auto ref = text::tokenize(gold);
  if (pred.empty() && ref.empty()) return 1.0;
  const auto lcs = lcs_length(pred, ref);
  if (lcs == 0) return 0.0;
  const double p = static_cast<double>(lcs) / static_cast<double>(pred.size());
  const double r = static_cast<double>(lcs) / static_cast<double>(ref.size());
  return 2.0 * p * r / (p + r);
}

struct MeteorAlignment {
  std::size_t matches = 0;
  std::size_t chunks = 0;
};

/// Exact-unigram alignment. Each prediction token takes the reference
/// position that extends the current chunk when possible, else the earliest
/// unused one.
inline MeteorAlignment meteor_align(const std::vector<std::string>& pred, const std::vector<std::string>& ref) {
  std::unordered_map<std::string_view, std::vector<std::size_t>> positions;
  for (std::size_t j = 0; j < ref.size(); ++j) positions[ref[j]].push_back(j);
  std::vector<bool> used(ref.size(), false);
  MeteorAlignment out;
  std::optional<std::size_t> prev_ref;
  bool prev_matched = false;
  for (const auto& tok : pred) {
    const auto it = positions.find(tok);
    std::optional<std::size_t> chosen;
    if (it != positions.end()) {
      if (prev_matched && prev_ref && *prev_ref + 1 < ref.size() && !used[*prev_ref + 1] &&
          ref[*prev_ref + 1] == tok) {
        chosen = *prev_ref + 1;
      } else {
        for (auto j : it->second) {
          if (!used[j]) {
            chosen = j;
            break;
          }
        }
      }
    }
    if (!chosen) {
      prev_matched = false;
      continue;
    }
    used[*chosen] = true;
    ++out.matches;
    const bool continues = prev_matched && prev_ref && *chosen == *prev_ref + 1;
    if (!continues) ++out.chunks;
    prev_ref = chosen;
    prev_matched = true;
  }
  return out;
}

/// METEOR without stemming or synonymy: F_mean = 10PR / (R + 9P),
/// penalty = 0.5 (chunks / matches)^3, score = F_mean (1 - penalty).
/// Equivalently 10m (2m^3 - c^3) / (2m^3 (|pred| + 9|ref|)), evaluated as one
/// integer ratio whenever both sides are exact in a double.
inline double meteor_simplified(std::string_view prediction, std::string_view gold) {
  const auto pred = text::tokenize(prediction);
  const auto ref = text::tokenize(gold);
  if (pred.empty() || ref.empty()) return 0.0;
  const auto a = meteor_align(pred, ref);
  if (a.matches == 0) return 0.0;
  constexpr std::uint64_t kExact = std::uint64_t{1} << 53;
  const std::uint64_t m = a.matches, c = a.chunks, len = pred.size() + 9 * ref.size();
  if (m < 2000 && len < 4096) {
    const std::uint64_t m3 = m * m * m;
    const std::uint64_t num = 10 * m * (2 * m3 - c * c * c);
    const std::uint64_t den = 2 * m3 * len;
    if (num < kExact && den < kExact) return static_cast<double>(num) / static_cast<double>(den);
  }
  const double p = static_cast<double>(a.matches) / static_cast<double>(pred.size());
  const double r = static_cast<double>(a.matches) / static_cast<double>(ref.size());
  const double f_mean = 10.0 * p * r / (r + 9.0 * p);
  const double frag = static_cast<double>(a.chunks) / static_cast<double>(a.matches);
  const double penalty = 0.5 * frag * frag * frag;
  return f_mean * (1.0 - penalty);
}

/// Normalized equality, or the normalized gold answer appearing as a
/// contiguous token run inside the prediction. Never calls a model.
inline bool lenient_match(std::string_view prediction, std::string_view gold) {
  const auto pred = text::tokenize(prediction);
  const auto ref = text::tokenize(gold);
  if (ref.empty()) return pred.empty();
  if (ref.size() > pred.size()) return false;
  return std::search(pred.begin(), pred.end(), ref.begin(), ref.end()) != pred.end();
}

/// Decides whether two answers are equivalent when exact matching fails.
using EquivalenceJudge = std::function<bool(const std::string& prediction, const std::string& gold)>;

/// Normalized exact match first; the judge is consulted only on mismatch.
inline bool exact_match_with_fallback(const std::string& prediction, const std::string& gold,
                                      const EquivalenceJudge& judge) {
  if (text::normalize_answer(prediction) == text::normalize_answer(gold)) return true;
  if (!judge) fail(ErrorCode::judge_unavailable, "exact match failed and no judge is configured");
  return judge(prediction, gold);
}

inline constexpr std::string_view kEquivalencePrompt =
    "Determine whether the predicted answer means the same as the golden answer for the question being "
    "evaluated. Minor differences in wording, formatting or detail are acceptable if the core answer is the "
    "same.\n\nGolden answer: {gold}\n\nPredicted answer: {prediction}\n\nRespond with only \"yes\" or \"no\".";

inline EquivalenceJudge gateway_equivalence_judge(Gateway& gateway) {
  return [&gateway](const std::string& prediction, const std::string& gold) {
    std::string reply;
    try {
      reply = gateway.complete(Role::judge,
                               text::fill_slots(kEquivalencePrompt, {{"gold", gold}, {"prediction", prediction}}));
    } catch (const Error& e) {
      fail(ErrorCode::judge_unavailable, e.what());
    }
    const auto tokens = text::tokenize(reply);
    return !tokens.empty() && (tokens.front() == "yes" || tokens.front() == "true");
  };
}

// ---------------------------------------------------------------------------
// Judge templates

/// Prompt that folds several metrics into one integer score.
struct JudgeTemplate {
  std::string id;
  std::string system_prompt;  // optional
  std::string text;
  std::string input_slot;      // filled with the case query
  std::string output_slot;     // filled with the system response
  std::string reference_slot;  // filled with the gold answer
  int min_score = 1;
  int max_score = 10;
};

namespace templates {

inline constexpr std::string_view kJudgeMerge = R"tmpl(You are an expert legal AI assistant. Your task is to evaluate the quality of an automatically generated legal judgment document based on the provided context and a set of pre-calculated metrics.

## Case Factual Description (Input)

{INPUT_FACTS}

## Generated Judgment Document (Output)

{GENERATED_JUDGMENT}

## Ground Truth Judgment Document (Reference)

{GOLDEN_JUDGMENT}

## Evaluation Metrics

Below are the calculated metrics comparing the 'Generated Judgment' to the 'Ground Truth'. A score of 1.00 indicates a perfect match for that specific metric, while 0.00 indicates a complete mismatch.

1. Penalty Accuracy (Scores range from 0.00 to 1.00)

time_score: {time_score} (Measures the accuracy of the prison sentence duration.)

amount_score: {amount_score} (Measures the accuracy of the monetary fine amount.)

2. Convicting Accuracy (Scores range from 0.00 to 1.00)

crime_recall: {crime_recall} (The proportion of actual charges that the system correctly identifies.)

crime_precision: {crime_precision} (The proportion of predicted charges that are accurate.)

3. Referencing Accuracy (Scores range from 0.00 to 1.00)

penalcode_index_recall: {penalcode_index_recall} (The proportion of correctly cited ground-truth statutes among all relevant statutes.)

penalcode_index_precision: {penalcode_index_precision} (The proportion of correctly cited statutes among all citations in the generated judgment.)

reasoning_meteor: {reasoning_meteor} (Semantic similarity of the 'Judicial Reasoning' section based on METEOR score.)

reasoning_bert_score: {reasoning_bert_score} (Semantic similarity of the 'Judicial Reasoning' section based on BERTScore.)

judge_meteor: {judge_meteor} (Semantic similarity of the 'Judgment Result' section based on METEOR score.)

judge_bert_score: {judge_bert_score} (Semantic similarity of the 'Judgment Result' section based on BERTScore.)

## Task

Based on a holistic review of the input, output, ground truth, and all the metrics provided above, provide a single integer score from 1 to 10 to represent the overall quality of the generated judgment document.

- 1: Represents extremely poor quality (e.g., completely irrelevant, factually incorrect, nonsensical).

- 10: Represents excellent quality (e.g., legally sound, factually accurate, well-reasoned, and structurally perfect, nearly indistinguishable from the ground truth).Your response should be only a single integer.

## Final Score)tmpl";

inline constexpr std::string_view kIdeaMerge = R"tmpl(You are an expert scientific researcher and AI assistant. Your task is to evaluate the overall quality of an automatically generated research idea based on the provided context and a set of pre-calculated metrics.

## Background Knowledge (Input)

{INPUT_CONTEXT}

## Generated Research Idea (Output)

{GENERATED_IDEA}

## Ground Truth Research Idea (Reference)

{GOLDEN_IDEA}

## Evaluation Metrics

Below are the calculated metrics comparing the 'Generated Research Idea' to the 'Ground Truth'. Please use them to inform your overall score.

1. Semantic Similarity (bert_score): Measures the semantic similarity between the 'Generated Research Idea' and the 'Ground Truth Research Idea'. Scores range from 0.00 (no similarity) to 1.00 (perfect semantic match).

bert_score: {bert_score}

2. Idea Overlap (llm_rating_score): An LLM-based rating of the idea overlap between the 'Generated Research Idea' and the 'Ground Truth'. Scores range from 1 (minimal overlap) to 10 (perfect overlap).

llm_rating_score: {llm_rating_score}

3. Novelty Insight Score (llm_novelty_ranking_score): Quantifies the novelty of the 'Generated Research Idea' relative to the 'Ground Truth'. This score is derived by ranking the generated idea(s) against the ground truth idea. Scores range from 0.00 to 1.00.

    * A score near **0.00** means the generated idea is significantly less novel than the ground truth.

    * A score near **0.50** suggests comparable novelty.

    * A score near **1.00** means the generated idea is significantly more novel than the ground truth.

llm_novelty_ranking_score: {llm_novelty_ranking_score}

4. Feasibility Insight Score (llm_feasibility_ranking_score): Quantifies the feasibility of the 'Generated Research Idea' relative to the 'Ground Truth', using the same ranking methodology as the Novelty Insight Score. Scores range from 0.00 to 1.00.

    * A score near **0.00** means the generated idea is significantly less feasible than the ground truth.

    * A score near **0.50** suggests comparable feasibility.

    * A score near **1.00** means the generated idea is significantly more feasible than the ground truth.

llm_feasibility_ranking_score: {llm_feasibility_ranking_score}

## Task

Based on a holistic review of the input, output, ground truth, and all the metrics provided above, provide a single integer score from 1 to 10 to represent the overall quality of the generated research idea.

- 1: Represents extremely poor quality (e.g., incoherent, irrelevant, factually incorrect).

- 10: Represents excellent quality (e.g., coherent, insightful, novel, feasible, and well-aligned with the background knowledge, nearly indistinguishable from an idea proposed by a human expert).

Your response should be only a single integer.

## Final Score)tmpl";

inline constexpr std::string_view kSciTechMerge = R"tmpl(You are an expert in science communication and text evaluation. Your task is to evaluate the quality of an automatically generated popular science article based on the provided source document, a reference article, and a set of pre-calculated metrics.

## Source Document (Input)

{INPUT_TEXT}

## Generated Popular Science Article (Output)

{GENERATED_ARTICLE}

## Abstract of Reference Popular Science Article (Golden Passage)

{GOLDEN_PASSAGE}

## Evaluation Metrics

Below are the calculated metrics comparing the 'Generated Article' to the 'Reference Article' or analyzing its intrinsic qualities.

Rouge-L (Score range: 0.00 to 1.00)

Score: {ROUGE_L}

Meaning: Measures the overlap of the longest common word sequence between the generated and reference articles. A higher score indicates better factual consistency and content preservation.

BERTScore-F1 (Score range: 0.00 to 1.00)

Score: {BERTSCORE_F1}

Meaning: Measures the semantic similarity between the generated and reference articles using contextual language models. A higher score indicates that the core meaning is better captured, even with different wording.

CLI (Coleman-Liau Index)

Score: {CLI}

Meaning: Estimates the U.S. grade level required to understand the text. For popular science, a lower score (e.g., 8-12) is generally desirable, indicating better readability and accessibility for a general audience.

FKGL (Flesch-Kincaid Grade Level)

Score: {FKGL}

Meaning: Similar to CLI, this metric also estimates the required U.S. grade level for comprehension. Lower scores suggest the text is easier to read. A score between 8 and 12 means standard readability for a general audience.

DCRS (Dale-Chall Readability Score)

Score: {DCRS}

Meaning: Estimates readability based on a list of 3000 common words. A lower score indicates the text is easier to understand. A score of 4.9 or lower indicates that the passage is very easy to read for fourth-grade students. A score between 9.0 and 9.9 indicates that the passage is at a college readability level.

## Task

Based on a holistic review of the input, output, golden passage, and all the metrics provided above, provide a single integer score from 1 to 10 to represent the overall quality of the generated popular science article. Consider its accuracy, readability, coherence, and faithfulness to the source material.

- 1: Represents extremely poor quality (e.g., completely irrelevant, factually incorrect, nonsensical, or unreadable).

- 10: Represents excellent quality (e.g., accurate, easy to understand for a layperson, well-structured, engaging, and highly faithful to the source, nearly indistinguishable from the reference).

Your response should be only a single integer.

## Final Score)tmpl";

inline constexpr std::string_view kNonFactoid = R"tmpl(###Task: Evaluate the answer of a given question. Directly output an integer between 1 and 5 to indicate the score of this answer:

- 1 means the answer is irrelevant to the question,

- 2 means the answer is related to the question, but does not solve the question,

- 3 means the answer only solves a part of the question,

- 4 means the answer solve majority aspects of the question, but not perfect,

- 5 means the answer is perfect to solve the question

###Question: {Question}

###Answer: {Output}

###Score of the answer:)tmpl";

inline constexpr std::string_view kScoringSystem = R"tmpl(You are an expert evaluator tasked with scoring assistant responses against specific quality standards.

SCORING SCALE (1-10):
1-2: Completely inadequate - Wrong, irrelevant, or harmful
3-4: Unsatisfactory - Major errors, misses key points, or unhelpful
5-6: Below expectations - Addresses basics but has significant gaps, inaccuracies, or omissions
7-8: Meets expectations - Solid response with minor issues or missing elements
9-10: Exceeds expectations - Comprehensive, accurate, and fully satisfies all requirements

EVALUATION APPROACH:
- Use the provided evaluation context and ground truth as your primary standards
- Score against what the response should contain, not just what it does contain
- Consider both correctness and completeness

Provide only a numerical score from 1-10.)tmpl";

inline constexpr std::string_view kScoringUser = R"tmpl(Evaluate the assistant's response by comparing it against the provided standards and ground truth:

FULL CONVERSATION:
{conversation_history}

EVALUATION CONTEXT (contains ground truth and quality criteria):
{evaluation_context}

EVALUATION TASK:
Compare the assistant's final response against the evaluation context above. The evaluation context contains the ground truth and quality standards that define what a good response should include.

Respond in this JSON format:
{
  "score": <integer from 1-10>
})tmpl";

}  // namespace templates

inline const std::map<std::string, JudgeTemplate>& judge_templates() {
  static const std::map<std::string, JudgeTemplate> registry = [] {
    std::map<std::string, JudgeTemplate> r;
    r["judge"] = {"judge", "", std::string(templates::kJudgeMerge), "INPUT_FACTS", "GENERATED_JUDGMENT",
                  "GOLDEN_JUDGMENT", 1, 10};
    r["ideabench"] = {"ideabench", "", std::string(templates::kIdeaMerge), "INPUT_CONTEXT", "GENERATED_IDEA",
                      "GOLDEN_IDEA", 1, 10};
    r["scitechnews"] = {"scitechnews", "", std::string(templates::kSciTechMerge), "INPUT_TEXT", "GENERATED_ARTICLE",
                        "GOLDEN_PASSAGE", 1, 10};
    r["nfcats"] = {"nfcats", "", std::string(templates::kNonFactoid), "Question", "Output", "", 1, 5};
    // Generic rubric scoring: the satisfaction-scoring prompt pair applied to
    // a single-turn conversation.
    r["rubric"] = {"rubric", std::string(templates::kScoringSystem), std::string(templates::kScoringUser), "", "",
                   "", 1, 10};
    return r;
  }();
  return registry;
}

/// Parses a judge reply: a {"score": n} object, or the first integer in the
/// text. Returns nullopt when nothing in [lo, hi] is found.
inline std::optional<int> parse_judge_score(std::string_view reply, int lo, int hi) {
  std::optional<long long> value;
  if (auto obj = text::extract_json_object(reply); obj && obj->contains("score")) {
    const auto& s = (*obj)["score"];
    if (s.is_number_integer()) {
      value = s.get<long long>();
    } else if (s.is_number_float() && std::floor(s.get<double>()) == s.get<double>()) {
      value = static_cast<long long>(s.get<double>());
    } else {
      return std::nullopt;
    }
  } else {
    std::size_t i = 0;
    while (i < reply.size() && !std::isdigit(static_cast<unsigned char>(reply[i]))) ++i;
    if (i == reply.size()) return std::nullopt;
    if (i > 0 && reply[i - 1] == '-') return std::nullopt;
    std::size_t j = i;
    while (j < reply.size() && std::isdigit(static_cast<unsigned char>(reply[j])) && j - i < 9) ++j;
    if (j < reply.size() && reply[j] == '.' && j + 1 < reply.size() &&
        std::isdigit(static_cast<unsigned char>(reply[j + 1]))) {
      return std::nullopt;  // fractional scores are not integers
    }
    value = std::stoll(std::string(reply.substr(i, j - i)));
  }
  if (!value || *value < lo || *value > hi) return std::nullopt;
  return static_cast<int>(*value);
}

/// Fills the template slots and returns the prompt. Slot values come from
/// `extra` first, then the case's pass-through slots; ROUGE_L is computed
/// when absent. Throws MissingSlot for anything unresolved.
inline std::string render_judge_prompt(const JudgeTemplate& tmpl, const TaskCase& c, const std::string& response,
                                       const std::map<std::string, std::string>& extra = {}) {
  std::map<std::string, std::string> slots = c.eval.slots;
  for (const auto& [k, v] : extra) slots[k] = v;
  if (!tmpl.input_slot.empty()) slots[tmpl.input_slot] = c.query;
  if (!tmpl.output_slot.empty()) slots[tmpl.output_slot] = response;
  if (!tmpl.reference_slot.empty() && c.eval.gold) slots[tmpl.reference_slot] = *c.eval.gold;
  if (!slots.count("ROUGE_L") && c.eval.gold) {
    std::ostringstream r;
    r << std::fixed << std::setprecision(2) << rouge_l(response, *c.eval.gold);
    slots["ROUGE_L"] = r.str();
  }
  if (!slots.count("conversation_history")) slots["conversation_history"] = "User: " + c.query + "\nAssistant: " + response;
  if (!slots.count("evaluation_context")) slots["evaluation_context"] = c.evaluation_context();
  for (const auto& name : text::slot_names(tmpl.text)) {
    if (!slots.count(name)) fail(ErrorCode::missing_slot, "judge template '" + tmpl.id + "' needs slot '" + name + "'");
  }
  return text::fill_slots(tmpl.text, slots);
}

/// Queries the judge with a registered template and parses one integer in
/// the template's range, retrying unparseable replies.
inline int judge_rubric_score(const TaskCase& c, const std::string& response, Gateway& gateway,
                              const std::string& template_id, const std::map<std::string, std::string>& extra = {},
                              int retries = 2) {
  const auto& reg = judge_templates();
  const auto it = reg.find(template_id);
  if (it == reg.end()) fail(ErrorCode::config_error, "unregistered judge template '" + template_id + "'");
  const auto& tmpl = it->second;
  const auto prompt = render_judge_prompt(tmpl, c, response, extra);
  std::string last;
  for (int attempt = 0; attempt <= retries; ++attempt) {
    try {
      last = gateway.complete(Role::judge, prompt, tmpl.system_prompt);
    } catch (const Error& e) {
      fail(ErrorCode::judge_unavailable, e.what());
    }
    if (auto score = parse_judge_score(last, tmpl.min_score, tmpl.max_score)) return *score;
  }
  fail(ErrorCode::unparseable_score, "judge reply not an integer in range: " + last.substr(0, 200));
}

// ---------------------------------------------------------------------------
// Per-case scoring

enum class Direction { higher_better, lower_better };

struct MetricScore {
  std::string case_id;
  std::string dataset;
  std::string metric;
  double raw = 0.0;
  Direction direction = Direction::higher_better;
  bool failed = false;
};

struct ScoringServices {
  Gateway* judge = nullptr;  // required for accuracy fallback and judge metrics
  int judge_retries = 2;
};

/// Scores one response with the case's primary metric.
inline MetricScore score_case(const TaskCase& c, const std::string& response, const ScoringServices& services) {
  MetricScore s{c.case_id, c.dataset_id, c.eval.metric, 0.0,
                c.eval.lower_better ? Direction::lower_better : Direction::higher_better, false};
  const std::string gold = c.eval.gold.value_or("");
  if (c.eval.metric == "f1") {
    s.raw = token_f1(response, gold);
  } else if (c.eval.metric == "rouge_l") {
    s.raw = rouge_l(response, gold);
  } else if (c.eval.metric == "meteor") {
    s.raw = meteor_simplified(response, gold);
  } else if (c.eval.metric == "accuracy") {
    EquivalenceJudge judge;
    if (services.judge) judge = gateway_equivalence_judge(*services.judge);
    s.raw = exact_match_with_fallback(response, gold, judge) ? 1.0 : 0.0;
  } else if (c.eval.metric == "judge") {
    if (!services.judge) fail(ErrorCode::judge_unavailable, "judge metric needs a gateway");
    s.raw = judge_rubric_score(c, response, *services.judge, c.eval.judge_template, {}, services.judge_retries);
  } else {
    fail(ErrorCode::config_error, "unregistered metric '" + c.eval.metric + "'");
  }
  return s;
}

// ---------------------------------------------------------------------------
// Normalization

struct Anchor {
  double min = 0.0;
  double max = 1.0;
};

/// Per-dataset min/max, persisted once and reused across experiments.
class NormalizationAnchors {
 public:
  void set(const std::string& dataset, Anchor a) {
    if (!(a.max >= a.min)) fail(ErrorCode::invalid_argument, "anchor max < min for " + dataset);
    anchors_[dataset] = a;
  }

  const Anchor& at(const std::string& dataset) const {
    const auto it = anchors_.find(dataset);
    if (it == anchors_.end()) fail(ErrorCode::missing_anchor, "no anchor for dataset '" + dataset + "'");
    return it->second;
  }

  bool contains(const std::string& dataset) const { return anchors_.count(dataset) != 0; }
  const std::map<std::string, Anchor>& all() const noexcept { return anchors_; }

  /// Observed min/max of non-failed raw scores per dataset.
  static NormalizationAnchors from_scores(const std::vector<MetricScore>& scores) {
    NormalizationAnchors a;
    for (const auto& s : scores) {
      if (s.failed) continue;
      auto it = a.anchors_.find(s.dataset);
      if (it == a.anchors_.end()) {
        a.anchors_[s.dataset] = {s.raw, s.raw};
      } else {
        it->second.min = std::min(it->second.min, s.raw);
        it->second.max = std::max(it->second.max, s.raw);
      }
    }
    return a;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& [d, a] : anchors_) j[d] = {{"min", a.min}, {"max", a.max}};
    return j;
  }

  static NormalizationAnchors from_json(const nlohmann::json& j) {
    NormalizationAnchors a;
    try {
      for (const auto& [d, v] : j.items()) a.set(d, {v.at("min").get<double>(), v.at("max").get<double>()});
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::config_error, std::string("anchor file: ") + e.what());
    }
    return a;
  }

  std::string hash() const { return text::sha256_hex(to_json().dump()); }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorCode::config_error, "cannot write anchor file " + path);
    out << to_json().dump(2) << '\n';
  }

  static NormalizationAnchors load(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::config_error, "cannot open anchor file " + path);
    auto j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) fail(ErrorCode::config_error, "anchor file is not JSON: " + path);
    return from_json(j);
  }

 private:
  std::map<std::string, Anchor> anchors_;
};

/// (x - min) / (max - min) clipped to [0,1]; lower_better flips after scaling;
/// a degenerate anchor maps everything to 0.5.
inline double min_max_normalize(double x, const Anchor& anchor, Direction direction = Direction::higher_better) {
  double v = 0.5;
  if (anchor.max > anchor.min) v = std::clamp((x - anchor.min) / (anchor.max - anchor.min), 0.0, 1.0);
  return direction == Direction::lower_better ? 1.0 - v : v;
}

/// Population z-scores; fewer than two values or zero variance gives zeros.
inline std::vector<double> z_scores(const std::vector<double>& values) {
  std::vector<double> out(values.size(), 0.0);
  if (values.size() < 2) return out;
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(values.size());
  if (!(var > 0.0)) return out;
  const double sd = std::sqrt(var);
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - mean) / sd;
  return out;
}

// ---------------------------------------------------------------------------
// Aggregation

struct SystemSummary {
  std::string system;
  std::size_t cases = 0;
  double overall_minmax = 0.0;  // unweighted mean over test cases
  double overall_z = 0.0;
  std::map<std::string, double> dataset_raw_mean;
  std::map<std::string, double> dataset_minmax_mean;
  std::map<std::string, double> dataset_z_mean;
  std::vector<std::string> failed_cases;
};

struct AggregateReport {
  std::string partition;
  std::vector<SystemSummary> systems;

  const SystemSummary& system(const std::string& name) const {
    for (const auto& s : systems) {
      if (s.system == name) return s;
    }
    fail(ErrorCode::invalid_argument, "report has no system '" + name + "'");
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["schema"] = "feedbench.report/1";
    j["partition"] = partition;
    j["systems"] = nlohmann::ordered_json::array();
    for (const auto& s : systems) {
      nlohmann::ordered_json e;
      e["system"] = s.system;
      e["cases"] = s.cases;
      e["overall_minmax"] = s.overall_minmax;
      e["overall_z"] = s.overall_z;
      e["datasets"] = nlohmann::ordered_json::object();
      for (const auto& [d, raw] : s.dataset_raw_mean) {
        e["datasets"][d] = {{"raw_mean", raw},
                            {"minmax_mean", s.dataset_minmax_mean.at(d)},
                            {"z_mean", s.dataset_z_mean.at(d)}};
      }
      e["failed_cases"] = s.failed_cases;
      j["systems"].push_back(std::move(e));
    }
    return j;
  }

  static AggregateReport from_json(const nlohmann::json& j) {
    AggregateReport r;
    try {
      r.partition = j.at("partition").get<std::string>();
      for (const auto& e : j.at("systems")) {
        SystemSummary s;
        s.system = e.at("system").get<std::string>();
        s.cases = e.at("cases").get<std::size_t>();
        s.overall_minmax = e.at("overall_minmax").get<double>();
        s.overall_z = e.at("overall_z").get<double>();
        for (const auto& [d, v] : e.at("datasets").items()) {
          s.dataset_raw_mean[d] = v.at("raw_mean").get<double>();
          s.dataset_minmax_mean[d] = v.at("minmax_mean").get<double>();
          s.dataset_z_mean[d] = v.at("z_mean").get<double>();
        }
        s.failed_cases = e.value("failed_cases", std::vector<std::string>{});
        r.systems.push_back(std::move(s));
      }
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::config_error, std::string("report file: ") + e.what());
    }
    return r;
  }

  /// Content hash of the machine-readable report.
  std::string hash() const { return text::sha256_hex(to_json().dump()); }
};

/// Builds the report for one partition from per-case scores of one or more
/// systems. Failed cases take the worst anchor value. z-scores pool every
/// system's cases within each dataset.
inline AggregateReport aggregate(const std::string& partition,
                                 const std::map<std::string, std::vector<MetricScore>>& scores_by_system,
                                 const std::vector<TaskCase>& test_cases, const NormalizationAnchors& anchors) {
  struct Row {
    std::string dataset;
    double raw;
    double norm;
    double oriented;
    bool failed;
    std::string case_id;
  };
  std::map<std::string, std::vector<Row>> rows;
  for (const auto& [system, scores] : scores_by_system) {
    std::unordered_map<std::string, const MetricScore*> by_case;
    for (const auto& s : scores) by_case[s.case_id] = &s;
    std::vector<std::string> missing;
    for (const auto& c : test_cases) {
      if (!by_case.count(c.case_id)) missing.push_back(c.case_id);
    }
    if (!missing.empty()) throw IncompleteCoverage(std::move(missing));
    auto& out = rows[system];
    for (const auto& c : test_cases) {
      const auto& s = *by_case.at(c.case_id);
      const auto& anchor = anchors.at(c.dataset_id);
      double raw = s.raw;
      if (s.failed) raw = s.direction == Direction::lower_better ? anchor.max : anchor.min;
      const double norm = min_max_normalize(raw, anchor, s.direction);
      out.push_back({c.dataset_id, raw, norm, s.direction == Direction::lower_better ? -raw : raw, s.failed,
                     c.case_id});
    }
  }

  // z over all (system, case) pairs within each dataset
  std::map<std::string, std::vector<std::pair<std::string, std::size_t>>> members;
  for (const auto& [system, rs] : rows) {
    for (std::size_t i = 0; i < rs.size(); ++i) members[rs[i].dataset].emplace_back(system, i);
  }
  std::map<std::string, std::vector<double>> z_by_system;
  for (const auto& [system, rs] : rows) z_by_system[system].assign(rs.size(), 0.0);
  for (const auto& [dataset, refs] : members) {
    std::vector<double> values;
    for (const auto& [system, i] : refs) values.push_back(rows[system][i].oriented);
    const auto z = z_scores(values);
    for (std::size_t k = 0; k < refs.size(); ++k) z_by_system[refs[k].first][refs[k].second] = z[k];
  }

  AggregateReport report;
  report.partition = partition;
  for (const auto& [system, rs] : rows) {
    SystemSummary s;
    s.system = system;
    s.cases = rs.size();
    std::map<std::string, std::size_t> counts;
    const auto& z = z_by_system[system];
    double norm_sum = 0.0;
    double z_sum = 0.0;
    for (std::size_t i = 0; i < rs.size(); ++i) {
      const auto& r = rs[i];
      ++counts[r.dataset];
      s.dataset_raw_mean[r.dataset] += r.raw;
      s.dataset_minmax_mean[r.dataset] += r.norm;
      s.dataset_z_mean[r.dataset] += z[i];
      norm_sum += r.norm;
      z_sum += z[i];
      if (r.failed) s.failed_cases.push_back(r.case_id);
    }
    for (const auto& [d, n] : counts) {
      s.dataset_raw_mean[d] /= static_cast<double>(n);
      s.dataset_minmax_mean[d] /= static_cast<double>(n);
      s.dataset_z_mean[d] /= static_cast<double>(n);
    }
    if (!rs.empty()) {
      s.overall_minmax = norm_sum / static_cast<double>(rs.size());
      s.overall_z = z_sum / static_cast<double>(rs.size());
    }
    report.systems.push_back(std::move(s));
  }
  return report;
}

namespace detail {
inline std::string fixed4(double v) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(4) << v;
  auto out = o.str();
  if (out == "-0.0000") out.erase(0, 1);
  return out;
}
}  // namespace detail

/// Fixed-width table of one partition: one row per system, one column per
/// dataset (min-max means) plus the overall min-max and z columns.
inline std::string render_partition_table(const AggregateReport& report) {
  std::vector<std::string> datasets;
  for (const auto& s : report.systems) {
    for (const auto& [d, _] : s.dataset_raw_mean) {
      if (std::find(datasets.begin(), datasets.end(), d) == datasets.end()) datasets.push_back(d);
    }
  }
  std::size_t name_w = 8;
  for (const auto& s : report.systems) name_w = std::max(name_w, s.system.size() + 2);
  std::ostringstream out;
  out << "Partition: " << report.partition << '\n';
  out << std::left << std::setw(static_cast<int>(name_w)) << "LLMsys";
  for (const auto& d : datasets) out << std::right << std::setw(static_cast<int>(std::max<std::size_t>(d.size(), 6) + 2)) << d;
  out << std::right << std::setw(10) << "Min-Max" << std::setw(10) << "Z-score" << '\n';
  for (const auto& s : report.systems) {
    out << std::left << std::setw(static_cast<int>(name_w)) << s.system;
    for (const auto& d : datasets) {
      const auto it = s.dataset_minmax_mean.find(d);
      out << std::right << std::setw(static_cast<int>(std::max<std::size_t>(d.size(), 6) + 2))
          << (it == s.dataset_minmax_mean.end() ? std::string("-") : detail::fixed4(it->second));
    }
    out << std::right << std::setw(10) << detail::fixed4(s.overall_minmax) << std::setw(10)
        << detail::fixed4(s.overall_z) << '\n';
  }
  return out.str();
}

/// Cross-partition table: rows are systems, columns partitions, cells the
/// overall min-max (or z) score. Systems missing from a partition show "-".
inline std::string render_summary_table(const std::vector<AggregateReport>& reports, bool use_z = false) {
  std::vector<std::string> systems;
  for (const auto& r : reports) {
    for (const auto& s : r.systems) {
      if (std::find(systems.begin(), systems.end(), s.system) == systems.end()) systems.push_back(s.system);
    }
  }
  std::size_t name_w = 8;
  for (const auto& s : systems) name_w = std::max(name_w, s.size() + 2);
  std::ostringstream out;
  out << (use_z ? "Z-score" : "Min-max normalized") << '\n';
  out << std::left << std::setw(static_cast<int>(name_w)) << "LLMsys";
  for (const auto& r : reports) out << std::right << std::setw(static_cast<int>(std::max<std::size_t>(r.partition.size(), 7) + 2)) << r.partition;
  out << '\n';
  for (const auto& name : systems) {
    out << std::left << std::setw(static_cast<int>(name_w)) << name;
    for (const auto& r : reports) {
      std::string cell = "-";
      for (const auto& s : r.systems) {
        if (s.system == name) cell = detail::fixed4(use_z ? s.overall_z : s.overall_minmax);
      }
      out << std::right << std::setw(static_cast<int>(std::max<std::size_t>(r.partition.size(), 7) + 2)) << cell;
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace feedbench
