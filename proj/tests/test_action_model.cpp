#include <gtest/gtest.h>

#include <cmath>

#include "feedbench/feedbench.hpp"
#include "oracles.hpp"

using namespace feedbench;

namespace {

std::array<double, 10> reference_fractions() {
  std::array<double, 10> d{};
  for (int i = 0; i < 10; ++i) d[i] = oracle::kReferenceScorePercent[i] / 100.0;
  return d;
}

GeneralSigmoidModel reference_model() {
  return calibrate_sigmoid(ScoreDistribution::reference_llm_scored(), GlobalTargets::reference());
}

}  // namespace

TEST(global_targets, derived_from_feedback_rate_and_split) {
  const auto t = GlobalTargets::reference();
  EXPECT_NEAR(t.p_like_global(), 0.0559, 1e-12);
  EXPECT_NEAR(t.p_dislike_global(), 0.0091, 1e-12);
  const auto g = GlobalTargets::from_globals(0.0559, 0.0091);
  EXPECT_NEAR(g.feedback_rate(), 0.065, 1e-12);
  EXPECT_NEAR(g.like_share(), 0.86, 1e-12);
  EXPECT_THROW(GlobalTargets::from_rates(1.5, 0.5), Error);
}

TEST(score_distribution, matches_reference_percentages) {
  const auto d = ScoreDistribution::reference_llm_scored();
  const auto ref = reference_fractions();
  for (int s = 1; s <= 10; ++s) EXPECT_DOUBLE_EQ(d.at(s), ref[s - 1]);
  EXPECT_THROW(ScoreDistribution::from_masses({0.5, 0.6, 0, 0, 0, 0, 0, 0, 0, 0}), Error);
  const auto counts = ScoreDistribution::from_counts({1, 1, 0, 0, 0, 0, 0, 0, 0, 2});
  EXPECT_DOUBLE_EQ(counts.at(10), 0.5);
}

TEST(general_sigmoid, reproduces_reference_probability_table) {
  const auto m = reference_model();
  for (int s = 1; s <= 10; ++s) {
    const auto& row = oracle::kReferenceActionTable[s - 1];
    EXPECT_NEAR(m.p_like(s), row[0] / 100.0, 0.001) << "S=" << s;
    EXPECT_NEAR(m.p_dislike(s), row[1] / 100.0, 0.001) << "S=" << s;
    EXPECT_NEAR(1.0 - m.p_like(s) - m.p_dislike(s), row[2] / 100.0, 0.001) << "S=" << s;
  }
}

TEST(general_sigmoid, expected_rates_equal_targets) {
  const auto m = reference_model();
  const auto d = ScoreDistribution::reference_llm_scored();
  double like = 0.0, dislike = 0.0;
  for (int s = 1; s <= 10; ++s) {
    like += d.at(s) * m.p_like(s);
    dislike += d.at(s) * m.p_dislike(s);
  }
  EXPECT_NEAR(like, 0.0559, 1e-12);
  EXPECT_NEAR(dislike, 0.0091, 1e-12);
}

TEST(general_sigmoid, scale_constants_agree_with_grid_search) {
  const auto m = reference_model();
  const auto d = reference_fractions();
  EXPECT_NEAR(m.c_like(), oracle::grid_search_scale(d, 0.0559, 1.5, 7.5, +1.0), 2e-6);
  EXPECT_NEAR(m.c_dislike(), oracle::grid_search_scale(d, 0.0091, 1.5, 4.5, -1.0), 2e-6);
}

TEST(general_sigmoid, curves_are_monotone) {
  const auto m = reference_model();
  for (int s = 1; s < 10; ++s) {
    EXPECT_LT(m.p_like(s), m.p_like(s + 1));
    EXPECT_GT(m.p_dislike(s), m.p_dislike(s + 1));
  }
}

TEST(general_sigmoid, infeasible_targets_are_rejected) {
  const auto low = ScoreDistribution::from_masses({1, 0, 0, 0, 0, 0, 0, 0, 0, 0});
  try {
    calibrate_sigmoid(low, GlobalTargets::from_rates(0.5, 0.9));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::infeasible_calibration);
  }
  const auto zero = calibrate_sigmoid(low, GlobalTargets::from_rates(0.0, 0.5));
  EXPECT_EQ(zero.c_like(), 0.0);
  EXPECT_THROW(calibrate_sigmoid(low, GlobalTargets::reference(), SigmoidShape{0.0, 7.5, 1.5, 4.5}), Error);
}

TEST(binary_model, reference_and_calibration) {
  const auto ref = BinaryActionModel::reference();
  EXPECT_DOUBLE_EQ(ref.p_like(9), 0.099);
  EXPECT_DOUBLE_EQ(ref.p_dislike(3), 0.021);
  EXPECT_EQ(ref.p_like(10), 0.0);
  EXPECT_EQ(ref.p_dislike(9), 0.0);

  const auto d = ScoreDistribution::from_masses({0, 0, 0.3, 0, 0, 0, 0, 0, 0.7, 0});
  const auto cal = calibrate_binary(d, GlobalTargets::reference());
  EXPECT_NEAR(cal.p_like_given_high() * 0.7, 0.0559, 1e-12);
  EXPECT_NEAR(cal.p_dislike_given_low() * 0.3, 0.0091, 1e-12);
}

TEST(score_mappings, f1_band_anchors) {
  EXPECT_EQ(f1_to_satisfaction(1.0).value(), 10);
  EXPECT_EQ(f1_to_satisfaction(0.9).value(), 10);
  EXPECT_EQ(f1_to_satisfaction(0.8999).value(), 9);
  EXPECT_EQ(f1_to_satisfaction(0.8).value(), 9);
  EXPECT_EQ(f1_to_satisfaction(0.5).value(), 6);
  EXPECT_EQ(f1_to_satisfaction(0.4999).value(), 5);
  EXPECT_EQ(f1_to_satisfaction(0.0).value(), 1);
  EXPECT_EQ(binary_satisfaction(true).value(), 9);
  EXPECT_EQ(binary_satisfaction(false).value(), 3);
  EXPECT_THROW(f1_to_satisfaction(1.01), Error);
  EXPECT_THROW(SatisfactionScore(0), Error);
}

TEST(score_mappings, f1_mapping_is_monotone) {
  int prev = 0;
  for (int i = 0; i <= 1000; ++i) {
    const int s = f1_to_satisfaction(i / 1000.0).value();
    ASSERT_GE(s, prev) << i;
    prev = s;
  }
}

TEST(actions, copy_probability_follows_output_length) {
  const auto m = reference_model();
  const ActionModel am(ActionModelKind::general_sigmoid, m);
  for (int s = 1; s <= 10; ++s) {
    const auto lo = am.probabilities(SatisfactionScore(s), TaskFormat::SiLo);
    EXPECT_DOUBLE_EQ(lo.p_copy, 4.0 * lo.p_like);
    EXPECT_DOUBLE_EQ(am.probabilities(SatisfactionScore(s), TaskFormat::SiSo).p_copy, 0.0);
    EXPECT_NEAR(lo.p_like + lo.p_dislike + lo.p_none, 1.0, 1e-12);
  }
}

TEST(actions, sampler_frequencies_match_probabilities) {
  const auto probs = ActionProbabilities::make(0.2, 0.1, 0.5);
  SeedState rng(99);
  const int n = 20000;
  int like = 0, dislike = 0, copy = 0;
  for (int i = 0; i < n; ++i) {
    const auto a = sample_action(probs, rng);
    like += a.primary == PrimaryAction::like;
    dislike += a.primary == PrimaryAction::dislike;
    copy += a.copied;
  }
  auto within = [n](int k, double p) { return std::abs(k - n * p) <= 4.0 * std::sqrt(n * p * (1 - p)); };
  EXPECT_TRUE(within(like, 0.2));
  EXPECT_TRUE(within(dislike, 0.1));
  EXPECT_TRUE(within(copy, 0.5));
}

TEST(actions, sampling_is_reproducible) {
  const auto probs = ActionProbabilities::make(0.3, 0.3, 0.3);
  SeedState a(5), b(5);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_action(probs, a), sample_action(probs, b));
}

TEST(config, overrides_and_table_rendering) {
  const auto cfg = action_model_config_from_json(
      nlohmann::json::parse(R"({"feedback_rate": 0.065, "like_share": 0.86, "binary": {"p_like_given_high": 0.2,
      "p_dislike_given_low": 0.05}})"));
  const auto set = ActionModelSet::calibrate(cfg);
  EXPECT_DOUBLE_EQ(set.binary.binary()->p_like_given_high(), 0.2);
  ASSERT_NE(set.general.sigmoid(), nullptr);
  EXPECT_NEAR(set.general.sigmoid()->c_like(), reference_model().c_like(), 1e-15);
  const auto table = format_probability_table(set.general);
  EXPECT_NE(table.find("15.09"), std::string::npos);
  EXPECT_NE(table.find("8.37"), std::string::npos);
  EXPECT_THROW(action_model_config_from_json(nlohmann::json::parse(R"({"distribution": [1, 2]})")), Error);
}
