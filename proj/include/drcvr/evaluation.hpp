#pragma once
// Ranking and probability metrics. Per-user rankings order items by
// (score descending, item id ascending), so results do not depend on input
// order. DCG@K is the unnormalized sum rel_k / log2(k+1) averaged over users;
// recall@K defaults to the hit-count convention (number of relevant items in
// the top K, averaged over users, so values above 1 are expected) with the
// classic hits/|relevant| form behind a flag. AUC uses the rank-sum statistic
// with average ranks for ties, pooled over all rows.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "drcvr/data.hpp"

namespace drcvr {

struct ScoredRow {
  int user = 0;
  int item = 0;
  int label = 0;
  double score = 0.0;  // raw model score; sigmoid is applied where needed
};

// Per-user list metrics (rows must all belong to one user).
double user_dcg_at_k(std::vector<ScoredRow> rows, int k);
double user_recall_at_k(std::vector<ScoredRow> rows, int k, bool classic = false);

double auc(const std::vector<ScoredRow>& rows);       // errors if labels are single-class
double log_loss(const std::vector<ScoredRow>& rows);  // mean CE of sigmoid(score) vs label

struct MetricRequest {
  std::vector<int> dcg_k = {2, 4, 6};
  std::vector<int> recall_k = {2, 4, 6};
  bool classic_recall = false;
  bool with_auc = true;
  bool with_logloss = true;
};

// User-averaged list metrics plus pooled AUC / log-loss, keyed "dcg@2",
// "recall@4", "auc", "logloss".
std::map<std::string, double> evaluate_rows(const std::vector<ScoredRow>& rows,
                                            const MetricRequest& req);

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  int df = 0;
};

// Two-sided paired t-test. Identical vectors give p = 1; zero-variance
// nonzero differences give p = 0.
TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

struct Aggregate {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation (n-1)
  std::vector<double> per_seed;
};

Aggregate aggregate(const std::vector<double>& per_seed);

struct ExperimentReport {
  std::string estimator;
  std::string dataset;
  std::vector<uint64_t> seeds;
  // metric name -> per-seed values (aggregated on serialization)
  std::map<std::string, std::vector<double>> metrics;
  // baseline estimator name -> p-value of the paired t-test on the primary metric
  std::map<std::string, double> significance;
  std::string config_hash;

  nlohmann::json to_json() const;  // deterministic: no volatile fields
};

ExperimentReport report_from_json(const nlohmann::json& j);

}  // namespace drcvr
