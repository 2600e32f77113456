#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mmkp/data.hpp"

namespace mmkp::eval {

// Porter (1980), original rule set. Tokens that are not lowercase
// alphabetic come back unchanged.
std::string porter_stem(std::string_view token);
data::Tokens stem_tokens(const data::Tokens& tokens);

// Equal stemmed token sequences.
bool match(std::string_view prediction, std::string_view gold);

// Number of the first `k` predictions matched to a distinct gold; each gold
// absorbs at most one prediction, assigned greedily in rank order.
std::size_t count_matches(const std::vector<std::string>& predictions, const std::vector<std::string>& golds,
                          std::size_t k);

// P = matches / min(k, |predictions|), R = matches / |golds|.
double f1_at_k(const std::vector<std::string>& predictions, const std::vector<std::string>& golds, std::size_t k);

// Sum of precision@r over ranks r <= 5 that add a match, / min(5, |golds|).
double average_precision_at_5(const std::vector<std::string>& predictions, const std::vector<std::string>& golds);

struct PresentAbsent {
  std::vector<std::string> present, absent;
};

// Present when the stemmed keyphrase occurs contiguously in the stemmed text.
PresentAbsent split_present_absent(const data::Tokens& text, const std::vector<std::string>& golds);

double recall_at_k(const std::vector<std::string>& predictions, const std::vector<std::string>& golds, std::size_t k);

struct PostResult {
  std::string id;
  data::Tokens text;
  std::vector<std::string> golds;
  std::vector<std::string> predictions;  // ranked
};

struct Bucket {
  std::string range;
  std::size_t posts = 0;
  std::optional<double> f1_at_1;  // absent when the bucket is empty
};

struct EvalReport {
  std::size_t posts = 0;           // posts with at least one gold
  std::size_t excluded_posts = 0;  // posts without golds
  double f1_at_1 = 0, f1_at_3 = 0, map_at_5 = 0;
  std::optional<double> present_f1_at_1;     // over posts with present golds
  std::optional<double> absent_recall_at_5;  // over posts with absent golds
  std::vector<Bucket> frequency_buckets;     // by training count of the gold keyphrase
  std::vector<Bucket> length_buckets;        // by text length
};

inline constexpr std::size_t kFrequencyEdges[] = {10, 100, 1000};

// `training_counts` maps keyphrase strings to their training occurrences.
EvalReport evaluate(const std::vector<PostResult>& results, const std::map<std::string, std::size_t>& training_counts);

std::map<std::string, std::size_t> keyphrase_counts(const std::vector<data::Post>& posts);

std::string report_json(const EvalReport& report, int indent = 2);
std::string report_table(const EvalReport& report);

}  // namespace mmkp::eval
