#include <doctest.h>

#include <stdexcept>

#include <cmath>
#include <vector>

#include "drcvr/evaluation.hpp"

using namespace drcvr;

namespace {

std::vector<ScoredRow> two_user_rows() {
  // User 0: scores rank the positive first; user 1: positive ranked second.
  return {
      {0, 0, 1, 2.0}, {0, 1, 0, 1.0}, {0, 2, 0, 0.5},
      {1, 0, 0, 3.0}, {1, 1, 1, 2.5}, {1, 2, 0, 0.1},
  };
}

std::vector<ScoredRow> zip_rows(const std::vector<int>& labels,
                                const std::vector<double>& scores) {
  std::vector<ScoredRow> rows;
  for (size_t i = 0; i < labels.size(); ++i)
    rows.push_back({0, int(i), labels[i], scores[i]});
  return rows;
}

double logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace

TEST_CASE("dcg of a single positive at rank two is 1/log2(3)") {
  std::vector<ScoredRow> rows = {{0, 0, 0, 5.0}, {0, 1, 1, 4.0}, {0, 2, 0, 3.0}};
  CHECK(user_dcg_at_k(rows, 2) == doctest::Approx(1.0 / std::log2(3.0)).epsilon(1e-15));
  CHECK(user_dcg_at_k(rows, 2) == doctest::Approx(0.63092975357145753).epsilon(1e-15));
  // Rank 1 would be 1/log2(2) = 1; the positive is outside the top-1 cut.
  CHECK(user_dcg_at_k(rows, 1) == 0.0);
  CHECK(user_dcg_at_k(rows, 3) == doctest::Approx(1.0 / std::log2(3.0)).epsilon(1e-15));
}

TEST_CASE("dcg accumulates all positives inside the cut") {
  std::vector<ScoredRow> rows = {{0, 0, 1, 5.0}, {0, 1, 1, 4.0}, {0, 2, 0, 3.0}};
  CHECK(user_dcg_at_k(rows, 2) ==
        doctest::Approx(1.0 + 1.0 / std::log2(3.0)).epsilon(1e-15));
}

TEST_CASE("recall counts hits inside the cut; classic variant normalizes") {
  std::vector<ScoredRow> rows = {
      {0, 0, 1, 5.0}, {0, 1, 0, 4.0}, {0, 2, 1, 3.0}, {0, 3, 1, 2.0}};
  // Top-2 contains one of the three positives.
  CHECK(user_recall_at_k(rows, 2) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(user_recall_at_k(rows, 2, true) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(user_recall_at_k(rows, 4) == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(user_recall_at_k(rows, 4, true) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("auc on the documented tie example is one half") {
  // One positive and one negative with equal scores.
  CHECK(auc(zip_rows({1, 0}, {0.7, 0.7})) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("auc matches hand-counted pair orderings") {
  // positives: 0.9, 0.4; negatives: 0.8, 0.3. Pairs won: (0.9 vs both) = 2,
  // (0.4 vs 0.8) = 0, (0.4 vs 0.3) = 1 -> 3/4.
  CHECK(auc(zip_rows({1, 1, 0, 0}, {0.9, 0.4, 0.8, 0.3})) ==
        doctest::Approx(0.75).epsilon(1e-15));
  // Frozen value for a slightly bigger example.
  // With a tie across classes (1.5 vs 1.5): 8.5 of 16 pairs -> 0.53125.
  CHECK(auc(zip_rows({1, 0, 1, 0, 1, 0, 0, 1},
                     {2.0, 1.9, 1.5, 1.5, 0.7, 0.4, 0.2, 0.1})) ==
        doctest::Approx(0.53125).epsilon(1e-15));
}

TEST_CASE("auc requires both classes") {
  CHECK_THROWS_AS(auc(zip_rows({1, 1}, {0.1, 0.2})), std::runtime_error);
  CHECK_THROWS_AS(auc({}), std::invalid_argument);
}

TEST_CASE("log loss applies the sigmoid and matches a hand computation") {
  // Scores are logits; sigmoid recovers probabilities 0.8 and 0.3.
  double expect = -(std::log(0.8) + std::log(0.7)) / 2.0;
  CHECK(log_loss(zip_rows({1, 0}, {logit(0.8), logit(0.3)})) ==
        doctest::Approx(expect).epsilon(1e-12));
  // Extreme scores stay finite thanks to the probability clip.
  CHECK(std::isfinite(log_loss(zip_rows({1}, {-1e9}))));
}

TEST_CASE("evaluate_rows averages per-user metrics and names them") {
  MetricRequest req;
  req.dcg_k = {1, 2};
  req.recall_k = {2};
  req.with_auc = true;
  req.with_logloss = false;
  auto m = evaluate_rows(two_user_rows(), req);
  // User 0 has dcg@1 = 1, user 1 has dcg@1 = 0.
  CHECK(m.at("dcg@1") == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(m.at("dcg@2") ==
        doctest::Approx((1.0 + 1.0 / std::log2(3.0)) / 2.0).epsilon(1e-14));
  CHECK(m.at("recall@2") == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(m.count("auc") == 1);
  CHECK(m.count("logloss") == 0);
  // Pooled over users: positives {2.0, 2.5} win 6 of 8 cross pairs.
  CHECK(m.at("auc") == doctest::Approx(0.75).epsilon(1e-14));
}

TEST_CASE("paired t-test on a hand-checked difference") {
  // diffs = {1,1,1,1,1,2}: mean 7/6, sd sqrt(1/6), t = (7/6)/sqrt(1/36) = 7.
  std::vector<double> a = {2, 2, 2, 2, 2, 3};
  std::vector<double> b = {1, 1, 1, 1, 1, 1};
  TTestResult r = paired_t_test(a, b);
  CHECK(r.t == doctest::Approx(7.0).epsilon(1e-12));
  CHECK(r.df == 5);
  // Reference value from an independent implementation (scipy.stats.ttest_rel).
  CHECK(r.p == doctest::Approx(0.0009167475143984045).epsilon(1e-6));
}

TEST_CASE("paired t-test conventions for degenerate inputs") {
  std::vector<double> a = {1, 2, 3};
  CHECK(paired_t_test(a, a).p == 1.0);  // identical samples
  std::vector<double> b = {2, 3, 4};    // constant nonzero difference
  CHECK(paired_t_test(b, a).p == 0.0);
  CHECK_THROWS_AS(paired_t_test(a, std::vector<double>{1.0}), std::invalid_argument);
}

TEST_CASE("aggregate mean and sample standard deviation") {
  Aggregate agg = aggregate({1.0, 2.0, 3.0, 4.0});
  CHECK(agg.mean == doctest::Approx(2.5).epsilon(1e-15));
  CHECK(agg.stddev == doctest::Approx(std::sqrt(5.0 / 3.0)).epsilon(1e-14));
  CHECK(agg.per_seed == std::vector<double>{1.0, 2.0, 3.0, 4.0});
  Aggregate one = aggregate({7.0});
  CHECK(one.mean == 7.0);
  CHECK(one.stddev == 0.0);
}

TEST_CASE("report json round-trips and is deterministic") {
  ExperimentReport rep;
  rep.estimator = "drmse";
  rep.dataset = "dump:/tmp/x";
  rep.seeds = {1, 2, 3};
  rep.config_hash = "deadbeef";
  rep.metrics["auc"] = {0.6, 0.61, 0.59};
  rep.metrics["dcg@2"] = {0.7, 0.71, 0.69};
  rep.significance["vs naive:auc"] = 0.03;
  auto j1 = rep.to_json();
  auto j2 = rep.to_json();
  CHECK(j1.dump() == j2.dump());
  ExperimentReport back = report_from_json(j1);
  CHECK(back.estimator == rep.estimator);
  CHECK(back.seeds == rep.seeds);
  CHECK(back.metrics.at("auc") == rep.metrics.at("auc"));
  CHECK(back.significance.at("vs naive:auc") == doctest::Approx(0.03));
  CHECK(j1.at("metrics").at("auc").at("mean").get<double>() ==
        doctest::Approx(0.6).epsilon(1e-12));
}
