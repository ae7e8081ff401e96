#pragma once
// Dataset handling. Explicit-rating sources (TSV triples or a dense matrix
// with 0 = unrated) are binarized into click/conversion interactions:
// a rating's existence is the click (o = 1) and rating >= 4 is a positive
// conversion. MNAR ratings become the 90/10 train/validation splits and MAR
// ratings become the test split, restricted to users with at least one
// positive test conversion.
//
// The canonical on-disk dump of a dataset is a directory holding
//   manifest.json  counts, seed, config hash
//   clicks.tsv     user<TAB>item<TAB>converted, train rows then validation rows
//   test.tsv       user<TAB>item<TAB>label
// Row order is deterministic, so a dump is byte-identical for a given seed.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace drcvr {

struct RatingTriple {
  int user = 0;
  int item = 0;
  int rating = 0;
};

struct RatingTable {
  int num_users = 0;
  int num_items = 0;
  std::vector<RatingTriple> triples;
  // Original ids in sorted order; triple ids index into these. Dense sources
  // use the identity mapping.
  std::vector<long long> orig_user_ids, orig_item_ids;
};

// whitespace-separated "user item rating [extra...]" lines, arbitrary ids,
// reindexed to contiguous 0-based ids by sorted original id.
RatingTable load_ratings_tsv(const std::string& path);

// Dense integer matrix, one user per row, 0 = unrated, values 1..5.
RatingTable load_ratings_dense(const std::string& path);

struct Interaction {
  int user = 0;
  int item = 0;
  int label = 0;
};

struct InteractionDataset {
  int num_users = 0;
  int num_items = 0;
  std::vector<Interaction> train;       // clicked events
  std::vector<Interaction> validation;  // clicked events
  std::vector<Interaction> test;        // MAR or sampled-unclicked pairs
  uint64_t seed = 0;
  nlohmann::json extra = nlohmann::json::object();
};

struct ClickSplit {
  std::vector<Interaction> train, validation;
};

// One interaction per rating triple; deterministic shuffled split.
ClickSplit binarize_mnar(const RatingTable& ratings, double val_fraction, uint64_t seed,
                         int positive_threshold = 4);

// Drops test rows of users without any positive test label. Returns the
// number of rows removed; warns on an empty result.
size_t restrict_test_users(InteractionDataset& ds);

// MNAR ratings -> train/validation, MAR ratings -> test, then restriction.
InteractionDataset build_real_dataset(const RatingTable& mnar, const RatingTable& mar,
                                      double val_fraction, uint64_t seed);

void dump_dataset(const InteractionDataset& ds, const std::string& dir,
                  const std::string& config_hash);
InteractionDataset load_dataset_dump(const std::string& dir);

}  // namespace drcvr
