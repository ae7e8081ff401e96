#include "drcvr/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "drcvr/estimators.hpp"
#include "drcvr/fm.hpp"

namespace drcvr {

namespace {

void rank_rows(std::vector<ScoredRow>& rows) {
  std::sort(rows.begin(), rows.end(), [](const ScoredRow& a, const ScoredRow& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.item < b.item;
  });
}

// Regularized incomplete beta I_x(a,b) by continued fraction (Lentz).
double betacf(double a, double b, double x) {
  const int kMaxIter = 300;
  const double kEps = 3e-16, kFpMin = 1e-300;
  double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0, d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return h;
}

double reg_inc_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  double ln_beta = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b);
  double front = std::exp(ln_beta + a * std::log(x) + b * std::log(1.0 - x));
  if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
  return 1.0 - std::exp(ln_beta + b * std::log(1.0 - x) + a * std::log(x)) * betacf(b, a, 1.0 - x) / b;
}

double student_t_two_sided_p(double t, int df) {
  double x = double(df) / (double(df) + t * t);
  return reg_inc_beta(double(df) / 2.0, 0.5, x);
}

}  // namespace

double user_dcg_at_k(std::vector<ScoredRow> rows, int k) {
  if (k <= 0) throw std::invalid_argument("dcg: k must be > 0");
  rank_rows(rows);
  double dcg = 0.0;
  int top = std::min<int>(k, int(rows.size()));
  for (int pos = 0; pos < top; ++pos)
    dcg += double(rows[size_t(pos)].label) / std::log2(double(pos) + 2.0);
  return dcg;
}

double user_recall_at_k(std::vector<ScoredRow> rows, int k, bool classic) {
  if (k <= 0) throw std::invalid_argument("recall: k must be > 0");
  rank_rows(rows);
  int hits = 0, relevant = 0;
  for (size_t pos = 0; pos < rows.size(); ++pos) {
    relevant += rows[pos].label;
    if (int(pos) < k) hits += rows[pos].label;
  }
  if (!classic) return double(hits);
  if (relevant == 0) return 0.0;
  return double(hits) / double(relevant);
}

double auc(const std::vector<ScoredRow>& rows) {
  size_t n = rows.size();
  if (n == 0) throw std::invalid_argument("auc: no rows");
  std::vector<size_t> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(),
            [&](size_t a, size_t b) { return rows[a].score < rows[b].score; });
  double rank_sum_pos = 0.0;
  size_t n_pos = 0;
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j < n && rows[idx[j]].score == rows[idx[i]].score) ++j;
    double avg_rank = (double(i + 1) + double(j)) / 2.0;  // 1-based average rank of the tie group
    for (size_t k = i; k < j; ++k)
      if (rows[idx[k]].label == 1) {
        rank_sum_pos += avg_rank;
        ++n_pos;
      }
    i = j;
  }
  size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw std::runtime_error("auc: labels are single-class, AUC undefined");
  return (rank_sum_pos - double(n_pos) * double(n_pos + 1) / 2.0) /
         (double(n_pos) * double(n_neg));
}

double log_loss(const std::vector<ScoredRow>& rows) {
  if (rows.empty()) throw std::invalid_argument("log_loss: no rows");
  double sum = 0.0;
  for (const auto& r : rows)
    sum += cross_entropy_error(double(r.label), sigmoid(r.score));
  return sum / double(rows.size());
}

std::map<std::string, double> evaluate_rows(const std::vector<ScoredRow>& rows,
                                            const MetricRequest& req) {
  if (rows.empty()) throw std::invalid_argument("evaluate_rows: no rows");
  // Group by user; users arrive in arbitrary order so sort indices first.
  std::vector<size_t> idx(rows.size());
  for (size_t i = 0; i < rows.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
    if (rows[a].user != rows[b].user) return rows[a].user < rows[b].user;
    return rows[a].item < rows[b].item;
  });

  std::map<std::string, double> out;
  std::map<int, double> dcg_sums, recall_sums;
  size_t num_users = 0;
  size_t i = 0;
  std::vector<ScoredRow> group;
  while (i < rows.size()) {
    size_t j = i;
    group.clear();
    while (j < rows.size() && rows[idx[j]].user == rows[idx[i]].user)
      group.push_back(rows[idx[j++]]);
    ++num_users;
    for (int k : req.dcg_k) dcg_sums[k] += user_dcg_at_k(group, k);
    for (int k : req.recall_k) recall_sums[k] += user_recall_at_k(group, k, req.classic_recall);
    i = j;
  }
  for (int k : req.dcg_k) out["dcg@" + std::to_string(k)] = dcg_sums[k] / double(num_users);
  for (int k : req.recall_k)
    out["recall@" + std::to_string(k)] = recall_sums[k] / double(num_users);
  if (req.with_auc) out["auc"] = auc(rows);
  if (req.with_logloss) out["logloss"] = log_loss(rows);
  return out;
}

TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("paired_t_test: length mismatch");
  if (a.size() < 2) throw std::invalid_argument("paired_t_test: need at least 2 pairs");
  size_t n = a.size();
  double mean = 0.0;
  for (size_t i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= double(n);
  double ss = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double d = (a[i] - b[i]) - mean;
    ss += d * d;
  }
  double sd = std::sqrt(ss / double(n - 1));
  TTestResult res;
  res.df = int(n - 1);
  if (sd == 0.0) {
    res.t = mean == 0.0 ? 0.0 : (mean > 0 ? HUGE_VAL : -HUGE_VAL);
    res.p = mean == 0.0 ? 1.0 : 0.0;
    return res;
  }
  res.t = mean / (sd / std::sqrt(double(n)));
  res.p = student_t_two_sided_p(res.t, res.df);
  return res;
}

Aggregate aggregate(const std::vector<double>& per_seed) {
  if (per_seed.empty()) throw std::invalid_argument("aggregate: no values");
  Aggregate agg;
  agg.per_seed = per_seed;
  for (double v : per_seed) agg.mean += v;
  agg.mean /= double(per_seed.size());
  if (per_seed.size() > 1) {
    double ss = 0.0;
    for (double v : per_seed) ss += (v - agg.mean) * (v - agg.mean);
    agg.stddev = std::sqrt(ss / double(per_seed.size() - 1));
  }
  return agg;
}

nlohmann::json ExperimentReport::to_json() const {
  nlohmann::json j;
  j["estimator"] = estimator;
  j["dataset"] = dataset;
  j["seeds"] = seeds;
  j["config_hash"] = config_hash;
  nlohmann::json jm = nlohmann::json::object();
  for (const auto& [name, values] : metrics) {
    Aggregate agg = aggregate(values);
    jm[name] = {{"mean", agg.mean}, {"std", agg.stddev}, {"per_seed", values}};
  }
  j["metrics"] = jm;
  j["significance"] = significance.empty() ? nlohmann::json::object() : nlohmann::json(significance);
  return j;
}

ExperimentReport report_from_json(const nlohmann::json& j) {
  ExperimentReport r;
  r.estimator = j.at("estimator").get<std::string>();
  r.dataset = j.at("dataset").get<std::string>();
  r.seeds = j.at("seeds").get<std::vector<uint64_t>>();
  r.config_hash = j.value("config_hash", "");
  for (const auto& [name, val] : j.at("metrics").items())
    r.metrics[name] = val.at("per_seed").get<std::vector<double>>();
  if (j.contains("significance"))
    for (const auto& [name, val] : j.at("significance").items())
      r.significance[name] = val.get<double>();
  return r;
}

}  // namespace drcvr
