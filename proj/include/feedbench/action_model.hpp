#pragma once

#include <array>
#include <cmath>
#include <compare>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>

#include "feedbench/errors.hpp"
#include "feedbench/random.hpp"
#include "json.hpp"

namespace feedbench {

// ---------------------------------------------------------------------------
// Task formats

/// Long/short input x long/short output (600-token threshold).
enum class TaskFormat { LiSo, SiLo, LiLo, SiSo };

inline bool is_long_output(TaskFormat f) { return f == TaskFormat::SiLo || f == TaskFormat::LiLo; }

inline std::string_view to_string(TaskFormat f) {
  switch (f) {
    case TaskFormat::LiSo: return "LiSo";
    case TaskFormat::SiLo: return "SiLo";
    case TaskFormat::LiLo: return "LiLo";
    case TaskFormat::SiSo: return "SiSo";
  }
  return "?";
}

inline std::optional<TaskFormat> parse_task_format(std::string_view s) {
  if (s == "LiSo") return TaskFormat::LiSo;
  if (s == "SiLo") return TaskFormat::SiLo;
  if (s == "LiLo") return TaskFormat::LiLo;
  if (s == "SiSo") return TaskFormat::SiSo;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Scores and distributions

inline constexpr int kMinScore = 1;
inline constexpr int kMaxScore = 10;
inline constexpr int kScoreLevels = kMaxScore - kMinScore + 1;

class SatisfactionScore {
 public:
  explicit SatisfactionScore(int value) : value_(value) {
    if (value < kMinScore || value > kMaxScore) {
      fail(ErrorCode::invalid_argument, "satisfaction score out of range: " + std::to_string(value));
    }
  }

  int value() const noexcept { return value_; }

  friend auto operator<=>(const SatisfactionScore&, const SatisfactionScore&) = default;

 private:
  int value_;
};

/// Probability mass over scores 1..10.
class ScoreDistribution {
 public:
  using Masses = std::array<double, kScoreLevels>;

  static ScoreDistribution from_masses(const Masses& masses) {
    double total = 0.0;
    for (double m : masses) {
      if (!(m >= 0.0) || !std::isfinite(m)) fail(ErrorCode::invalid_argument, "negative or non-finite score mass");
      total += m;
    }
    if (std::abs(total - 1.0) > 1e-9) {
      fail(ErrorCode::invalid_argument, "score masses sum to " + std::to_string(total) + ", expected 1");
    }
    return ScoreDistribution(masses);
  }

  /// Empirical distribution from observed score counts.
  static ScoreDistribution from_counts(const std::array<std::uint64_t, kScoreLevels>& counts) {
    std::uint64_t total = 0;
    for (auto c : counts) total += c;
    if (total == 0) fail(ErrorCode::invalid_argument, "no observed scores");
    Masses m{};
    for (int i = 0; i < kScoreLevels; ++i) m[i] = static_cast<double>(counts[i]) / static_cast<double>(total);
    // Re-normalize the last bucket away from rounding drift.
    double sum = 0.0;
    for (int i = 0; i < kScoreLevels - 1; ++i) sum += m[i];
    m[kScoreLevels - 1] = std::max(0.0, 1.0 - sum);
    return from_masses(m);
  }

  /// Score distribution of LLM-judged satisfaction observed on the reference
  /// benchmark logs.
  static ScoreDistribution reference_llm_scored() {
    return from_masses({0.0002, 0.0093, 0.0306, 0.0193, 0.0040, 0.0256, 0.175, 0.3212, 0.4105, 0.0043});
  }

  double at(int score) const { return masses_.at(static_cast<std::size_t>(score - kMinScore)); }
  double operator()(SatisfactionScore s) const { return at(s.value()); }
  const Masses& masses() const noexcept { return masses_; }

 private:
  explicit ScoreDistribution(const Masses& m) : masses_(m) {}
  Masses masses_;
};

// ---------------------------------------------------------------------------
// Targets

/// Global like/dislike rates the calibrated models must reproduce.
class GlobalTargets {
 public:
  static GlobalTargets from_rates(double feedback_rate, double like_share) {
    check_probability(feedback_rate, "feedback_rate");
    check_probability(like_share, "like_share");
    return GlobalTargets(feedback_rate, like_share);
  }

  /// From the two global probabilities directly.
  static GlobalTargets from_globals(double p_like, double p_dislike) {
    check_probability(p_like, "p_like_global");
    check_probability(p_dislike, "p_dislike_global");
    const double rate = p_like + p_dislike;
    check_probability(rate, "feedback_rate");
    return GlobalTargets(rate, rate > 0.0 ? p_like / rate : 0.0, p_like, p_dislike);
  }

  /// 6.5% of users give explicit feedback, split 86% likes / 14% dislikes.
  static GlobalTargets reference() { return from_rates(0.065, 0.86); }

  double feedback_rate() const noexcept { return feedback_rate_; }
  double like_share() const noexcept { return like_share_; }
  double p_like_global() const noexcept { return p_like_; }
  double p_dislike_global() const noexcept { return p_dislike_; }

 private:
  GlobalTargets(double rate, double share)
      : GlobalTargets(rate, share, rate * share, rate * (1.0 - share)) {}
  GlobalTargets(double rate, double share, double pl, double pd)
      : feedback_rate_(rate), like_share_(share), p_like_(pl), p_dislike_(pd) {}

  static void check_probability(double p, const char* what) {
    if (!(p >= 0.0 && p <= 1.0)) fail(ErrorCode::invalid_argument, std::string(what) + " must be in [0,1]");
  }

  double feedback_rate_;
  double like_share_;
  double p_like_;
  double p_dislike_;
};

// ---------------------------------------------------------------------------
// Actions

enum class PrimaryAction { like, dislike, none };

inline std::string_view to_string(PrimaryAction a) {
  switch (a) {
    case PrimaryAction::like: return "like";
    case PrimaryAction::dislike: return "dislike";
    case PrimaryAction::none: return "none";
  }
  return "none";
}

inline std::optional<PrimaryAction> parse_primary_action(std::string_view s) {
  if (s == "like") return PrimaryAction::like;
  if (s == "dislike") return PrimaryAction::dislike;
  if (s == "none") return PrimaryAction::none;
  return std::nullopt;
}

/// Like/dislike/none is one exclusive draw; copy is an independent side-action.
struct UserAction {
  PrimaryAction primary = PrimaryAction::none;
  bool copied = false;

  friend bool operator==(const UserAction&, const UserAction&) = default;
};

struct ActionProbabilities {
  double p_like = 0.0;
  double p_dislike = 0.0;
  double p_copy = 0.0;
  double p_none = 1.0;

  static ActionProbabilities make(double p_like, double p_dislike, double p_copy) {
    ActionProbabilities p{p_like, p_dislike, p_copy, 1.0 - p_like - p_dislike};
    p.validate();
    return p;
  }

  void validate() const {
    for (double v : {p_like, p_dislike, p_copy, p_none}) {
      if (!(v >= -1e-12 && v <= 1.0 + 1e-12)) fail(ErrorCode::invalid_argument, "action probability outside [0,1]");
    }
    if (std::abs(p_like + p_dislike + p_none - 1.0) > 1e-9) {
      fail(ErrorCode::invalid_argument, "like/dislike/none probabilities do not sum to 1");
    }
  }
};

inline double copy_probability(double p_like, TaskFormat format) {
  return is_long_output(format) ? std::min(1.0, 4.0 * p_like) : 0.0;
}

/// Draws one action. Always consumes exactly two values from `rng`.
inline UserAction sample_action(const ActionProbabilities& probs, SeedState& rng) {
  const double u_primary = rng.uniform();
  const double u_copy = rng.uniform();
  UserAction action;
  if (u_primary < probs.p_like) {
    action.primary = PrimaryAction::like;
  } else if (u_primary < probs.p_like + probs.p_dislike) {
    action.primary = PrimaryAction::dislike;
  }
  action.copied = u_copy < probs.p_copy;
  return action;
}

// ---------------------------------------------------------------------------
// Sigmoid model

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct SigmoidShape {
  double k_like = 1.5;
  double s0_like = 7.5;
  double k_dislike = 1.5;
  double s0_dislike = 4.5;

  void validate() const {
    if (!(k_like > 0.0) || !(k_dislike > 0.0)) fail(ErrorCode::invalid_argument, "sigmoid steepness must be > 0");
    for (double s0 : {s0_like, s0_dislike}) {
      if (!(s0 >= kMinScore && s0 <= kMaxScore)) fail(ErrorCode::invalid_argument, "sigmoid midpoint must lie in [1,10]");
    }
  }
};

/// P(L|S) = c_like * sigmoid(k_like (S - s0_like)),
/// P(D|S) = c_dislike * sigmoid(-k_dislike (S - s0_dislike)).
class GeneralSigmoidModel {
 public:
  static GeneralSigmoidModel make(const SigmoidShape& shape, double c_like, double c_dislike) {
    shape.validate();
    for (double c : {c_like, c_dislike}) {
      if (!(c >= 0.0 && c <= 1.0)) fail(ErrorCode::invalid_argument, "scaling constant must lie in [0,1]");
    }
    GeneralSigmoidModel m(shape, c_like, c_dislike);
    for (int s = kMinScore; s <= kMaxScore; ++s) {
      if (m.p_like(s) + m.p_dislike(s) > 1.0 + 1e-12) {
        fail(ErrorCode::infeasible_calibration, "P(L|S)+P(D|S) exceeds 1 at S=" + std::to_string(s));
      }
    }
    return m;
  }

  double like_shape(int s) const { return sigmoid(shape_.k_like * (s - shape_.s0_like)); }
  double dislike_shape(int s) const { return sigmoid(-shape_.k_dislike * (s - shape_.s0_dislike)); }
  double p_like(int s) const { return c_like_ * like_shape(s); }
  double p_dislike(int s) const { return c_dislike_ * dislike_shape(s); }

  const SigmoidShape& shape() const noexcept { return shape_; }
  double c_like() const noexcept { return c_like_; }
  double c_dislike() const noexcept { return c_dislike_; }

 private:
  GeneralSigmoidModel(const SigmoidShape& shape, double cl, double cd) : shape_(shape), c_like_(cl), c_dislike_(cd) {}

  SigmoidShape shape_;
  double c_like_;
  double c_dislike_;
};

/// Solves c = target / sum_S P(S) sigmoid(+-k (S - s0)) for both curves.
inline GeneralSigmoidModel calibrate_sigmoid(const ScoreDistribution& dist, const GlobalTargets& targets,
                                             const SigmoidShape& shape = {}) {
  shape.validate();
  double like_mass = 0.0;
  double dislike_mass = 0.0;
  for (int s = kMinScore; s <= kMaxScore; ++s) {
    like_mass += dist.at(s) * sigmoid(shape.k_like * (s - shape.s0_like));
    dislike_mass += dist.at(s) * sigmoid(-shape.k_dislike * (s - shape.s0_dislike));
  }
  auto solve = [](double target, double mass, const char* which) {
    if (target == 0.0) return 0.0;
    if (mass < 1e-12) {
      fail(ErrorCode::infeasible_calibration, std::string(which) + " denominator underflows");
    }
    const double c = target / mass;
    if (c > 1.0) {
      fail(ErrorCode::infeasible_calibration,
           std::string(which) + " scaling constant " + std::to_string(c) + " exceeds 1");
    }
    return c;
  };
  const double c_like = solve(targets.p_like_global(), like_mass, "like");
  const double c_dislike = solve(targets.p_dislike_global(), dislike_mass, "dislike");
  return GeneralSigmoidModel::make(shape, c_like, c_dislike);
}

inline ActionProbabilities sigmoid_probabilities(const GeneralSigmoidModel& model, SatisfactionScore s,
                                                 TaskFormat format) {
  const double pl = model.p_like(s.value());
  const double pd = model.p_dislike(s.value());
  return ActionProbabilities::make(pl, pd, copy_probability(pl, format));
}

// ---------------------------------------------------------------------------
// Binary model

/// Two-score model: only S=9 can be liked and only S=3 disliked.
class BinaryActionModel {
 public:
  static constexpr int kHighScore = 9;
  static constexpr int kLowScore = 3;

  static BinaryActionModel make(double p_like_given_high, double p_dislike_given_low) {
    for (double p : {p_like_given_high, p_dislike_given_low}) {
      if (!(p >= 0.0 && p <= 1.0)) fail(ErrorCode::invalid_argument, "binary action probability outside [0,1]");
    }
    return BinaryActionModel(p_like_given_high, p_dislike_given_low);
  }

  /// Values derived from the reference benchmark's own two-score logs
  /// (like 9.9% on correct, dislike 2.1% on incorrect); recalibrate from
  /// harness logs with calibrate_binary().
  static BinaryActionModel reference() { return make(0.099, 0.021); }

  double p_like_given_high() const noexcept { return p_like_high_; }
  double p_dislike_given_low() const noexcept { return p_dislike_low_; }

  double p_like(int s) const { return s == kHighScore ? p_like_high_ : 0.0; }
  double p_dislike(int s) const { return s == kLowScore ? p_dislike_low_ : 0.0; }

 private:
  BinaryActionModel(double pl, double pd) : p_like_high_(pl), p_dislike_low_(pd) {}
  double p_like_high_;
  double p_dislike_low_;
};

inline BinaryActionModel calibrate_binary(const ScoreDistribution& dist, const GlobalTargets& targets) {
  auto ratio = [](double target, double mass, int score) {
    if (target == 0.0) return 0.0;
    if (mass <= 0.0) {
      fail(ErrorCode::infeasible_calibration, "no probability mass at S=" + std::to_string(score));
    }
    const double p = target / mass;
    if (p > 1.0) {
      fail(ErrorCode::infeasible_calibration,
           "conditional probability " + std::to_string(p) + " at S=" + std::to_string(score) + " exceeds 1");
    }
    return p;
  };
  return BinaryActionModel::make(
      ratio(targets.p_like_global(), dist.at(BinaryActionModel::kHighScore), BinaryActionModel::kHighScore),
      ratio(targets.p_dislike_global(), dist.at(BinaryActionModel::kLowScore), BinaryActionModel::kLowScore));
}

inline ActionProbabilities binary_probabilities(const BinaryActionModel& model, SatisfactionScore s,
                                                TaskFormat format) {
  const double pl = model.p_like(s.value());
  return ActionProbabilities::make(pl, model.p_dislike(s.value()), copy_probability(pl, format));
}

// ---------------------------------------------------------------------------
// Deterministic score mappings

/// 0.1-wide F1 bands: >=0.9 -> 10, >=0.8 -> 9, ..., >=0.5 -> 6, ..., <0.1 -> 1.
inline SatisfactionScore f1_to_satisfaction(double f1) {
  if (!(f1 >= 0.0 && f1 <= 1.0)) fail(ErrorCode::invalid_argument, "F1 must lie in [0,1]");
  static constexpr std::array<std::pair<double, int>, 9> bands = {{
      {0.9, 10}, {0.8, 9}, {0.7, 8}, {0.6, 7}, {0.5, 6}, {0.4, 5}, {0.3, 4}, {0.2, 3}, {0.1, 2},
  }};
  for (const auto& [threshold, score] : bands) {
    if (f1 >= threshold - 1e-12) return SatisfactionScore(score);
  }
  return SatisfactionScore(kMinScore);
}

inline SatisfactionScore binary_satisfaction(bool correct) {
  return SatisfactionScore(correct ? BinaryActionModel::kHighScore : BinaryActionModel::kLowScore);
}

// ---------------------------------------------------------------------------
// Model set

enum class ActionModelKind { general_sigmoid, binary, deterministic_f1 };

inline std::string_view to_string(ActionModelKind k) {
  switch (k) {
    case ActionModelKind::general_sigmoid: return "general_sigmoid";
    case ActionModelKind::binary: return "binary";
    case ActionModelKind::deterministic_f1: return "deterministic_f1";
  }
  return "?";
}

class ActionModel {
 public:
  ActionModel(ActionModelKind kind, GeneralSigmoidModel m) : kind_(kind), model_(std::move(m)) {
    if (kind == ActionModelKind::binary) fail(ErrorCode::invalid_argument, "binary kind needs a BinaryActionModel");
  }
  explicit ActionModel(BinaryActionModel m) : kind_(ActionModelKind::binary), model_(m) {}

  ActionModelKind kind() const noexcept { return kind_; }

  ActionProbabilities probabilities(SatisfactionScore s, TaskFormat format) const {
    if (const auto* sig = std::get_if<GeneralSigmoidModel>(&model_)) return sigmoid_probabilities(*sig, s, format);
    return binary_probabilities(std::get<BinaryActionModel>(model_), s, format);
  }

  const GeneralSigmoidModel* sigmoid() const { return std::get_if<GeneralSigmoidModel>(&model_); }
  const BinaryActionModel* binary() const { return std::get_if<BinaryActionModel>(&model_); }

 private:
  ActionModelKind kind_;
  std::variant<GeneralSigmoidModel, BinaryActionModel> model_;
};

/// Calibration inputs, overridable from the harness config.
struct ActionModelConfig {
  SigmoidShape shape{};
  double feedback_rate = 0.065;
  double like_share = 0.86;
  std::optional<ScoreDistribution> llm_distribution;  // default: reference distribution
  std::optional<ScoreDistribution> f1_distribution;   // default: same as llm_distribution
  std::optional<ScoreDistribution> binary_distribution;
  std::optional<std::pair<double, double>> binary_probabilities;  // overrides calibration

  GlobalTargets targets() const { return GlobalTargets::from_rates(feedback_rate, like_share); }
};

struct ActionModelSet {
  ActionModel general;
  ActionModel binary;
  ActionModel f1;

  static ActionModelSet calibrate(const ActionModelConfig& cfg) {
    const auto targets = cfg.targets();
    const auto llm = cfg.llm_distribution.value_or(ScoreDistribution::reference_llm_scored());
    const auto f1 = cfg.f1_distribution.value_or(llm);
    BinaryActionModel binary = BinaryActionModel::reference();
    if (cfg.binary_probabilities) {
      binary = BinaryActionModel::make(cfg.binary_probabilities->first, cfg.binary_probabilities->second);
    } else if (cfg.binary_distribution) {
      binary = calibrate_binary(*cfg.binary_distribution, targets);
    }
    return ActionModelSet{
        ActionModel(ActionModelKind::general_sigmoid, calibrate_sigmoid(llm, targets, cfg.shape)),
        ActionModel(binary),
        ActionModel(ActionModelKind::deterministic_f1, calibrate_sigmoid(f1, targets, cfg.shape)),
    };
  }

  const ActionModel& for_kind(ActionModelKind k) const {
    switch (k) {
      case ActionModelKind::binary: return binary;
      case ActionModelKind::deterministic_f1: return f1;
      case ActionModelKind::general_sigmoid: break;
    }
    return general;
  }
};

namespace detail {
inline ScoreDistribution distribution_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != kScoreLevels) {
    fail(ErrorCode::config_error, "score distribution must be an array of 10 numbers");
  }
  ScoreDistribution::Masses m{};
  for (int i = 0; i < kScoreLevels; ++i) m[i] = j.at(i).get<double>();
  return ScoreDistribution::from_masses(m);
}
}  // namespace detail

/// Reads {"k_like", "s0_like", "k_dislike", "s0_dislike", "feedback_rate",
/// "like_share", "distribution", "f1_distribution", "binary_distribution",
/// "binary": {"p_like_given_high", "p_dislike_given_low"}}; all optional.
inline ActionModelConfig action_model_config_from_json(const nlohmann::json& j) {
  ActionModelConfig cfg;
  try {
    cfg.shape.k_like = j.value("k_like", cfg.shape.k_like);
    cfg.shape.s0_like = j.value("s0_like", cfg.shape.s0_like);
    cfg.shape.k_dislike = j.value("k_dislike", cfg.shape.k_dislike);
    cfg.shape.s0_dislike = j.value("s0_dislike", cfg.shape.s0_dislike);
    cfg.feedback_rate = j.value("feedback_rate", cfg.feedback_rate);
    cfg.like_share = j.value("like_share", cfg.like_share);
    if (j.contains("distribution")) cfg.llm_distribution = detail::distribution_from_json(j["distribution"]);
    if (j.contains("f1_distribution")) cfg.f1_distribution = detail::distribution_from_json(j["f1_distribution"]);
    if (j.contains("binary_distribution")) {
      cfg.binary_distribution = detail::distribution_from_json(j["binary_distribution"]);
    }
    if (j.contains("binary")) {
      const auto& b = j["binary"];
      cfg.binary_probabilities = std::make_pair(b.at("p_like_given_high").get<double>(),
                                                b.at("p_dislike_given_low").get<double>());
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::config_error, std::string("action model config: ") + e.what());
  }
  return cfg;
}

/// Conditional probability table, one row per score, percentages with three
/// decimals.
inline std::string format_probability_table(const ActionModel& model) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(3);
  out << std::left << std::setw(7) << "Score" << std::right << std::setw(20) << "Like P(L|S)" << std::setw(22)
      << "Dislike P(D|S)" << std::setw(24) << "No Action P(N|S)" << '\n';
  for (int s = kMinScore; s <= kMaxScore; ++s) {
    const auto p = model.probabilities(SatisfactionScore(s), TaskFormat::SiSo);
    auto pct = [](double v) {
      std::ostringstream o;
      o << std::fixed << std::setprecision(3) << v * 100.0 << '%';
      return o.str();
    };
    out << std::left << std::setw(7) << s << std::right << std::setw(20) << pct(p.p_like) << std::setw(22)
        << pct(p.p_dislike) << std::setw(24) << pct(p.p_none) << '\n';
  }
  return out.str();
}

}  // namespace feedbench
