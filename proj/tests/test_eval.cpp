#include <algorithm>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "mmkp/eval.hpp"
#include "mmkp/random.hpp"

using namespace mmkp;
using namespace mmkp::eval;

namespace {

std::vector<std::pair<std::string, std::string>> read_pairs(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::vector<std::pair<std::string, std::string>> out;
  std::string word, stem;
  while (in >> word >> stem) out.emplace_back(word, stem);
  return out;
}

std::vector<PostResult> fixture_results(nlohmann::json& j) {
  std::ifstream in("fixtures/metric_posts.json");
  REQUIRE(in.good());
  in >> j;
  std::vector<PostResult> out;
  for (const auto& p : j["posts"]) {
    out.push_back({p["id"], p["text"].get<data::Tokens>(), p["golds"].get<std::vector<std::string>>(),
                   p["predictions"].get<std::vector<std::string>>()});
  }
  return out;
}

}  // namespace

TEST_CASE("porter examples") {
  CHECK(porter_stem("caresses") == "caress");
  CHECK(porter_stem("ponies") == "poni");
  CHECK(porter_stem("cat") == "cat");
  CHECK(porter_stem("relational") == "relat");
  CHECK(porter_stem("generalizations") == "gener");
  CHECK(porter_stem("hopping") == "hop");
  CHECK(porter_stem("filing") == "file");
}

TEST_CASE("porter leaves non-alphabetic tokens alone") {
  CHECK(porter_stem("<url>") == "<url>");
  CHECK(porter_stem("2020s") == "2020s");
  CHECK(porter_stem("Cats") == "Cats");
  CHECK(porter_stem("") == "");
}

TEST_CASE("porter agrees with the reference fixture") {
  const auto pairs = read_pairs("fixtures/porter_reference.tsv");
  REQUIRE(pairs.size() >= 100);
  std::size_t agree = 0;
  for (const auto& [word, stem] : pairs) {
    CHECK_MESSAGE(porter_stem(word) == stem, word);
    agree += porter_stem(word) == stem;
  }
  CHECK(agree == pairs.size());
}

TEST_CASE("keyphrase match examples") {
  CHECK(match("cats", "cat"));
  CHECK(match("world oceans day", "world ocean day"));
  CHECK_FALSE(match("cat", "dog"));
  CHECK_FALSE(match("nba", "nba finals"));
}

TEST_CASE("f1 examples") {
  CHECK(f1_at_k({"a"}, {"a", "b"}, 1) == doctest::Approx(2.0 / 3.0));
  CHECK(f1_at_k({"a", "b", "c"}, {"a", "b", "c"}, 3) == 1.0);
  CHECK(f1_at_k({"x", "y"}, {"a"}, 3) == 0.0);
  CHECK(f1_at_k({}, {"a"}, 1) == 0.0);
  // short list: precision over the predictions that exist
  CHECK(f1_at_k({"a"}, {"a"}, 3) == 1.0);
}

TEST_CASE("average precision examples") {
  CHECK(average_precision_at_5({"x", "a", "y"}, {"a"}) == 0.5);
  CHECK(average_precision_at_5({"a"}, {"a"}) == 1.0);
  CHECK(average_precision_at_5({"x", "y", "z", "u", "v", "a"}, {"a"}) == 0.0);
  CHECK(average_precision_at_5({"a", "x", "b"}, {"a", "b"}) == doctest::Approx((1.0 + 2.0 / 3.0) / 2.0));
}

TEST_CASE("present and absent split") {
  auto s = split_present_absent({"i", "love", "my", "cat"}, {"cats"});
  CHECK(s.present == std::vector<std::string>{"cats"});
  s = split_present_absent({"halftime", "score"}, {"nba finals"});
  CHECK(s.absent == std::vector<std::string>{"nba finals"});
  s = split_present_absent({"love", "my", "cat"}, {"love cat"});
  CHECK(s.absent == std::vector<std::string>{"love cat"});
  CHECK(recall_at_k({"a", "x", "b"}, {"b", "c"}, 5) == 0.5);
}

TEST_CASE("metric fixture matches hand-computed values") {
  nlohmann::json j;
  const auto results = fixture_results(j);
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& p = j["posts"][i];
    if (!p.contains("expected")) continue;
    CAPTURE(results[i].id);
    CHECK(std::abs(f1_at_k(results[i].predictions, results[i].golds, 1) - p["expected"]["f1_at_1"].get<double>()) < 1e-9);
    CHECK(std::abs(f1_at_k(results[i].predictions, results[i].golds, 3) - p["expected"]["f1_at_3"].get<double>()) < 1e-9);
    CHECK(std::abs(average_precision_at_5(results[i].predictions, results[i].golds) -
                   p["expected"]["ap_at_5"].get<double>()) < 1e-9);
  }
  const auto report = evaluate(results, {});
  const auto& e = j["expected"];
  CHECK(report.posts == e["posts"].get<std::size_t>());
  CHECK(report.excluded_posts == e["excluded_posts"].get<std::size_t>());
  CHECK(std::abs(report.f1_at_1 - e["f1_at_1"].get<double>()) < 1e-9);
  CHECK(std::abs(report.f1_at_3 - e["f1_at_3"].get<double>()) < 1e-9);
  CHECK(std::abs(report.map_at_5 - e["map_at_5"].get<double>()) < 1e-9);
  REQUIRE(report.present_f1_at_1);
  REQUIRE(report.absent_recall_at_5);
  CHECK(std::abs(*report.present_f1_at_1 - e["present_f1_at_1"].get<double>()) < 1e-9);
  CHECK(std::abs(*report.absent_recall_at_5 - e["absent_recall_at_5"].get<double>()) < 1e-9);
}

TEST_CASE("metrics ignore post order and gold order") {
  nlohmann::json j;
  auto results = fixture_results(j);
  const auto base = evaluate(results, {});
  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    rng.shuffle(results.begin(), results.end());
    for (auto& r : results) rng.shuffle(r.golds.begin(), r.golds.end());
    const auto r = evaluate(results, {});
    CHECK(r.f1_at_1 == doctest::Approx(base.f1_at_1).epsilon(1e-12));
    CHECK(r.f1_at_3 == doctest::Approx(base.f1_at_3).epsilon(1e-12));
    CHECK(r.map_at_5 == doctest::Approx(base.map_at_5).epsilon(1e-12));
    CHECK(*r.absent_recall_at_5 == doctest::Approx(*base.absent_recall_at_5).epsilon(1e-12));
  }
}

TEST_CASE("adding a match within the top K never lowers F1") {
  Rng rng(5);
  const std::vector<std::string> pool = {"a", "b", "c", "d", "e", "f", "g"};
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::string> golds, preds;
    for (int i = 0; i < 1 + static_cast<int>(rng.below(3)); ++i) golds.push_back(pool[rng.below(pool.size())]);
    for (int i = 0; i < 1 + static_cast<int>(rng.below(4)); ++i) preds.push_back(pool[rng.below(pool.size())]);
    const std::size_t k = 1 + rng.below(3);
    const double before = f1_at_k(preds, golds, k);
    // replace a non-matching slot in the top K by an unmatched gold
    const std::size_t slots = std::min(k, preds.size());
    std::vector<std::string> unmatched = golds;
    for (std::size_t i = 0; i < slots; ++i) {
      auto it = std::find(unmatched.begin(), unmatched.end(), preds[i]);
      if (it != unmatched.end()) unmatched.erase(it);
    }
    for (std::size_t i = 0; i < slots && !unmatched.empty(); ++i) {
      if (count_matches({preds[i]}, golds, 1) == 0) {
        preds[i] = unmatched.front();
        CHECK(f1_at_k(preds, golds, k) >= before);
        break;
      }
    }
  }
}

TEST_CASE("length buckets") {
  std::vector<PostResult> results;
  for (int i = 0; i < 4; ++i) results.push_back({"p", data::Tokens(20, "w"), {"a"}, {i % 2 ? "a" : "b"}});
  const auto r = evaluate(results, {});
  REQUIRE(r.length_buckets.size() == 3);
  CHECK_FALSE(r.length_buckets[0].f1_at_1);
  CHECK(r.length_buckets[0].posts == 0);
  CHECK(r.length_buckets[1].posts == 4);
  CHECK(*r.length_buckets[1].f1_at_1 == 0.5);
  CHECK_FALSE(r.length_buckets[2].f1_at_1);

  results = {{"s", data::Tokens(14, "w"), {"a"}, {"a"}},
             {"m", data::Tokens(15, "w"), {"a"}, {"a"}},
             {"m", data::Tokens(35, "w"), {"a"}, {"a"}},
             {"l", data::Tokens(36, "w"), {"a"}, {"a"}}};
  const auto edges = evaluate(results, {});
  CHECK(edges.length_buckets[0].posts == 1);
  CHECK(edges.length_buckets[1].posts == 2);
  CHECK(edges.length_buckets[2].posts == 1);
}

TEST_CASE("frequency buckets follow training counts") {
  const std::map<std::string, std::size_t> counts = {{"rare", 9}, {"ten", 10}, {"common", 150}, {"huge", 1000}};
  std::vector<PostResult> results = {
      {"1", {"x"}, {"rare", "common"}, {"common"}},
      {"2", {"x"}, {"ten"}, {"ten"}},
      {"3", {"x"}, {"huge"}, {"nope"}},
      {"4", {"x"}, {"unseen"}, {"unseen"}},
  };
  const auto r = evaluate(results, counts);
  REQUIRE(r.frequency_buckets.size() == 4);
  CHECK(r.frequency_buckets[0].range == "[0,10)");
  CHECK(r.frequency_buckets[3].range == "[1000,inf)");
  // post 1 in [0,10) via "rare" (miss) and [100,1000) via "common" (hit); post 4 in [0,10)
  CHECK(r.frequency_buckets[0].posts == 2);
  CHECK(*r.frequency_buckets[0].f1_at_1 == 0.5);
  CHECK(r.frequency_buckets[1].posts == 1);
  CHECK(*r.frequency_buckets[1].f1_at_1 == 1.0);
  CHECK(*r.frequency_buckets[2].f1_at_1 == 1.0);
  CHECK(*r.frequency_buckets[3].f1_at_1 == 0.0);
}

TEST_CASE("keyphrase counts over a training split") {
  std::vector<data::Post> posts(3);
  posts[0].keyphrases = {"a", "b"};
  posts[1].keyphrases = {"a"};
  const auto c = keyphrase_counts(posts);
  CHECK(c.at("a") == 2);
  CHECK(c.at("b") == 1);
  CHECK(c.size() == 2);
}

TEST_CASE("report renders as json and table") {
  nlohmann::json j;
  const auto report = evaluate(fixture_results(j), {});
  auto parsed = nlohmann::json::parse(report_json(report));
  for (const char* key : {"posts", "excluded_posts", "f1_at_1", "f1_at_3", "map_at_5", "present_f1_at_1",
                          "absent_recall_at_5", "frequency_buckets", "length_buckets"}) {
    CHECK_MESSAGE(parsed.contains(key), key);
  }
  CHECK(parsed["length_buckets"].size() == 3);
  for (const char* key : {"f1_at_1", "f1_at_3", "map_at_5"}) {
    CHECK(parsed[key].get<double>() >= 0.0);
    CHECK(parsed[key].get<double>() <= 1.0);
  }
  const auto table = report_table(report);
  CHECK(table.find("MAP@5") != std::string::npos);
  CHECK(table.find("0.5000") != std::string::npos);

  const auto empty = evaluate({}, {});
  CHECK(nlohmann::json::parse(report_json(empty))["present_f1_at_1"].is_null());
}
