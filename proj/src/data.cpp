#include "drcvr/data.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "drcvr/rng.hpp"

namespace drcvr {

namespace {

[[noreturn]] void parse_fail(const std::string& path, size_t line, const std::string& what) {
  throw std::runtime_error(path + ":" + std::to_string(line) + ": " + what);
}

void check_rating(int rating, const std::string& path, size_t line) {
  if (rating < 1 || rating > 5)
    parse_fail(path, line, "rating " + std::to_string(rating) + " outside 1..5");
}

}  // namespace

RatingTable load_ratings_tsv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open ratings file: " + path);
  struct RawTriple {
    long long user, item;
    int rating;
  };
  std::vector<RawTriple> raw;
  std::string line;
  size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    long long u, i;
    long long r;
    if (!(ss >> u >> i >> r)) parse_fail(path, lineno, "expected 'user item rating'");
    check_rating(int(r), path, lineno);
    raw.push_back({u, i, int(r)});
  }
  if (raw.empty()) throw std::runtime_error(path + ": no ratings found");

  std::vector<long long> users, items;
  users.reserve(raw.size());
  items.reserve(raw.size());
  for (const auto& t : raw) {
    users.push_back(t.user);
    items.push_back(t.item);
  }
  auto uniq = [](std::vector<long long>& v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  };
  uniq(users);
  uniq(items);
  auto index_of = [](const std::vector<long long>& v, long long x) {
    return int(std::lower_bound(v.begin(), v.end(), x) - v.begin());
  };

  RatingTable table;
  table.num_users = int(users.size());
  table.num_items = int(items.size());
  table.orig_user_ids = users;
  table.orig_item_ids = items;
  table.triples.reserve(raw.size());
  for (const auto& t : raw)
    table.triples.push_back({index_of(users, t.user), index_of(items, t.item), t.rating});
  return table;
}

RatingTable load_ratings_dense(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open ratings file: " + path);
  RatingTable table;
  std::string line;
  size_t lineno = 0;
  int cols = -1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    std::istringstream ss(line);
    int value, col = 0;
    int row = table.num_users;
    while (ss >> value) {
      if (value != 0) {
        check_rating(value, path, lineno);
        table.triples.push_back({row, col, value});
      }
      ++col;
    }
    if (!ss.eof()) parse_fail(path, lineno, "non-integer entry");
    if (cols == -1) cols = col;
    if (col != cols)
      parse_fail(path, lineno,
                 "row has " + std::to_string(col) + " columns, expected " + std::to_string(cols));
    ++table.num_users;
  }
  if (table.num_users == 0) throw std::runtime_error(path + ": empty matrix");
  table.num_items = cols;
  table.orig_user_ids.resize(size_t(table.num_users));
  table.orig_item_ids.resize(size_t(table.num_items));
  for (int u = 0; u < table.num_users; ++u) table.orig_user_ids[size_t(u)] = u;
  for (int i = 0; i < table.num_items; ++i) table.orig_item_ids[size_t(i)] = i;
  return table;
}

ClickSplit binarize_mnar(const RatingTable& ratings, double val_fraction, uint64_t seed,
                         int positive_threshold) {
  if (ratings.triples.empty()) throw std::invalid_argument("binarize_mnar: no ratings");
  if (!(val_fraction >= 0.0) || !(val_fraction < 1.0))
    throw std::invalid_argument("val_fraction must lie in [0,1)");
  std::set<std::pair<int, int>> seen;
  std::vector<Interaction> all;
  all.reserve(ratings.triples.size());
  for (const auto& t : ratings.triples) {
    if (!seen.insert({t.user, t.item}).second)
      throw std::invalid_argument("binarize_mnar: duplicate rating for user " +
                                  std::to_string(t.user) + ", item " + std::to_string(t.item));
    all.push_back({t.user, t.item, t.rating >= positive_threshold ? 1 : 0});
  }
  Rng rng = Rng(seed).split("mnar-split");
  rng.shuffle(all);
  size_t n_val = size_t(val_fraction * double(all.size()));
  ClickSplit out;
  out.validation.assign(all.end() - long(n_val), all.end());
  out.train.assign(all.begin(), all.end() - long(n_val));
  return out;
}

size_t restrict_test_users(InteractionDataset& ds) {
  std::set<int> keep;
  for (const auto& t : ds.test)
    if (t.label == 1) keep.insert(t.user);
  size_t before = ds.test.size();
  std::vector<Interaction> kept;
  kept.reserve(before);
  for (const auto& t : ds.test)
    if (keep.count(t.user)) kept.push_back(t);
  ds.test = std::move(kept);
  if (ds.test.empty())
    std::fprintf(stderr,
                 "warning: restrict_test_users removed every test row "
                 "(no user has a positive test conversion)\n");
  return before - ds.test.size();
}

InteractionDataset build_real_dataset(const RatingTable& mnar, const RatingTable& mar,
                                      double val_fraction, uint64_t seed) {
  InteractionDataset ds;
  ds.num_users = std::max(mnar.num_users, mar.num_users);
  ds.num_items = std::max(mnar.num_items, mar.num_items);
  ds.seed = seed;
  ClickSplit split = binarize_mnar(mnar, val_fraction, seed);
  ds.train = std::move(split.train);
  ds.validation = std::move(split.validation);
  ds.test.reserve(mar.triples.size());
  for (const auto& t : mar.triples) ds.test.push_back({t.user, t.item, t.rating >= 4 ? 1 : 0});
  restrict_test_users(ds);
  return ds;
}

namespace {

void write_interactions(const std::string& path, const std::vector<const Interaction*>& rows) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path);
  for (const Interaction* t : rows)
    f << t->user << '\t' << t->item << '\t' << t->label << '\n';
  if (!f) throw std::runtime_error("write failed: " + path);
}

std::vector<Interaction> read_interactions(const std::string& path, size_t expected) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::vector<Interaction> rows;
  rows.reserve(expected);
  std::string line;
  size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    Interaction t;
    if (!(ss >> t.user >> t.item >> t.label) || (t.label != 0 && t.label != 1))
      parse_fail(path, lineno, "expected 'user item {0|1}'");
    rows.push_back(t);
  }
  if (rows.size() != expected)
    throw std::runtime_error(path + ": expected " + std::to_string(expected) + " rows, found " +
                             std::to_string(rows.size()));
  return rows;
}

}  // namespace

void dump_dataset(const InteractionDataset& ds, const std::string& dir,
                  const std::string& config_hash) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "drcvr-dataset";
  manifest["version"] = 1;
  manifest["num_users"] = ds.num_users;
  manifest["num_items"] = ds.num_items;
  manifest["num_train"] = ds.train.size();
  manifest["num_validation"] = ds.validation.size();
  manifest["num_test"] = ds.test.size();
  manifest["seed"] = ds.seed;
  manifest["config_hash"] = config_hash;
  manifest["extra"] = ds.extra;
  {
    std::ofstream f(dir + "/manifest.json", std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write manifest in " + dir);
    f << manifest.dump(2) << '\n';
  }
  std::vector<const Interaction*> clicks;
  clicks.reserve(ds.train.size() + ds.validation.size());
  for (const auto& t : ds.train) clicks.push_back(&t);
  for (const auto& t : ds.validation) clicks.push_back(&t);
  write_interactions(dir + "/clicks.tsv", clicks);
  std::vector<const Interaction*> test;
  test.reserve(ds.test.size());
  for (const auto& t : ds.test) test.push_back(&t);
  write_interactions(dir + "/test.tsv", test);
}

InteractionDataset load_dataset_dump(const std::string& dir) {
  std::ifstream f(dir + "/manifest.json");
  if (!f) throw std::runtime_error("cannot open " + dir + "/manifest.json");
  nlohmann::json manifest = nlohmann::json::parse(f);
  if (manifest.value("format", "") != "drcvr-dataset")
    throw std::runtime_error(dir + ": not a dataset dump (bad manifest format tag)");

  InteractionDataset ds;
  ds.num_users = manifest.at("num_users").get<int>();
  ds.num_items = manifest.at("num_items").get<int>();
  ds.seed = manifest.at("seed").get<uint64_t>();
  ds.extra = manifest.value("extra", nlohmann::json::object());
  size_t n_train = manifest.at("num_train").get<size_t>();
  size_t n_val = manifest.at("num_validation").get<size_t>();
  size_t n_test = manifest.at("num_test").get<size_t>();

  std::vector<Interaction> clicks = read_interactions(dir + "/clicks.tsv", n_train + n_val);
  ds.train.assign(clicks.begin(), clicks.begin() + long(n_train));
  ds.validation.assign(clicks.begin() + long(n_train), clicks.end());
  ds.test = read_interactions(dir + "/test.tsv", n_test);
  for (const auto& t : ds.test)
    if (t.user < 0 || t.user >= ds.num_users || t.item < 0 || t.item >= ds.num_items)
      throw std::runtime_error(dir + "/test.tsv: id outside manifest bounds");
  return ds;
}

}  // namespace drcvr
