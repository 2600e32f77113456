#include "mmkp/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "json.hpp"

namespace mmkp::eval {

namespace {

data::Tokens stemmed(std::string_view keyphrase) { return stem_tokens(data::split_keyphrase(keyphrase)); }

double f1(double p, double r) { return p + r == 0 ? 0.0 : 2 * p * r / (p + r); }

double mean(const std::vector<double>& xs) {
  double s = 0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

std::optional<double> mean_or_absent(const std::vector<double>& xs) {
  if (xs.empty()) return std::nullopt;
  return mean(xs);
}

// Greedy assignment: match flags per prediction within the first `k`.
std::vector<bool> assign(const std::vector<std::string>& predictions, const std::vector<std::string>& golds,
                         std::size_t k) {
  std::vector<data::Tokens> gold_stems;
  for (const auto& g : golds) gold_stems.push_back(stemmed(g));
  std::vector<bool> used(golds.size(), false);
  std::vector<bool> hit;
  for (std::size_t i = 0; i < std::min(k, predictions.size()); ++i) {
    const auto p = stemmed(predictions[i]);
    bool matched = false;
    for (std::size_t g = 0; g < golds.size(); ++g) {
      if (!used[g] && gold_stems[g] == p) {
        used[g] = true;
        matched = true;
        break;
      }
    }
    hit.push_back(matched);
  }
  return hit;
}

}  // namespace

bool match(std::string_view prediction, std::string_view gold) { return stemmed(prediction) == stemmed(gold); }

std::size_t count_matches(const std::vector<std::string>& predictions, const std::vector<std::string>& golds,
                          std::size_t k) {
  auto hit = assign(predictions, golds, k);
  return static_cast<std::size_t>(std::count(hit.begin(), hit.end(), true));
}

double f1_at_k(const std::vector<std::string>& predictions, const std::vector<std::string>& golds, std::size_t k) {
  if (golds.empty() || predictions.empty() || k == 0) return 0.0;
  const double m = static_cast<double>(count_matches(predictions, golds, k));
  const double p = m / static_cast<double>(std::min(k, predictions.size()));
  const double r = m / static_cast<double>(golds.size());
  return f1(p, r);
}

double average_precision_at_5(const std::vector<std::string>& predictions, const std::vector<std::string>& golds) {
  if (golds.empty()) return 0.0;
  auto hit = assign(predictions, golds, 5);
  double sum = 0;
  std::size_t matched = 0;
  for (std::size_t r = 0; r < hit.size(); ++r) {
    if (!hit[r]) continue;
    ++matched;
    sum += static_cast<double>(matched) / static_cast<double>(r + 1);
  }
  return sum / static_cast<double>(std::min<std::size_t>(5, golds.size()));
}

PresentAbsent split_present_absent(const data::Tokens& text, const std::vector<std::string>& golds) {
  const auto stext = stem_tokens(text);
  PresentAbsent out;
  for (const auto& g : golds) {
    const auto sg = stemmed(g);
    const bool present = !sg.empty() && std::search(stext.begin(), stext.end(), sg.begin(), sg.end()) != stext.end();
    (present ? out.present : out.absent).push_back(g);
  }
  return out;
}

double recall_at_k(const std::vector<std::string>& predictions, const std::vector<std::string>& golds, std::size_t k) {
  if (golds.empty()) return 0.0;
  return static_cast<double>(count_matches(predictions, golds, k)) / static_cast<double>(golds.size());
}

std::map<std::string, std::size_t> keyphrase_counts(const std::vector<data::Post>& posts) {
  std::map<std::string, std::size_t> counts;
  for (const auto& p : posts)
    for (const auto& k : p.keyphrases) ++counts[k];
  return counts;
}

EvalReport evaluate(const std::vector<PostResult>& results, const std::map<std::string, std::size_t>& training_counts) {
  EvalReport report;
  std::vector<double> f1_1, f1_3, ap, present_f1, absent_recall;

  constexpr std::size_t kFreqBuckets = std::size(kFrequencyEdges) + 1;
  std::vector<std::vector<double>> freq(kFreqBuckets), len(3);
  auto freq_bucket = [&](const std::string& gold) {
    auto it = training_counts.find(gold);
    const std::size_t c = it == training_counts.end() ? 0 : it->second;
    std::size_t b = 0;
    while (b < std::size(kFrequencyEdges) && c >= kFrequencyEdges[b]) ++b;
    return b;
  };

  for (const auto& r : results) {
    if (r.golds.empty()) {
      ++report.excluded_posts;
      continue;
    }
    ++report.posts;
    const double s1 = f1_at_k(r.predictions, r.golds, 1);
    f1_1.push_back(s1);
    f1_3.push_back(f1_at_k(r.predictions, r.golds, 3));
    ap.push_back(average_precision_at_5(r.predictions, r.golds));

    auto split = split_present_absent(r.text, r.golds);
    if (!split.present.empty()) present_f1.push_back(f1_at_k(r.predictions, split.present, 1));
    if (!split.absent.empty()) absent_recall.push_back(recall_at_k(r.predictions, split.absent, 5));

    std::vector<std::vector<std::string>> by_bucket(kFreqBuckets);
    for (const auto& g : r.golds) by_bucket[freq_bucket(g)].push_back(g);
    for (std::size_t b = 0; b < kFreqBuckets; ++b)
      if (!by_bucket[b].empty()) freq[b].push_back(f1_at_k(r.predictions, by_bucket[b], 1));

    const std::size_t n = r.text.size();
    len[n < 15 ? 0 : (n <= 35 ? 1 : 2)].push_back(s1);
  }

  if (report.posts > 0) {
    report.f1_at_1 = mean(f1_1);
    report.f1_at_3 = mean(f1_3);
    report.map_at_5 = mean(ap);
  }
  report.present_f1_at_1 = mean_or_absent(present_f1);
  report.absent_recall_at_5 = mean_or_absent(absent_recall);

  for (std::size_t b = 0; b < kFreqBuckets; ++b) {
    std::string range = "[" + std::to_string(b == 0 ? 0 : kFrequencyEdges[b - 1]) + "," +
                        (b < std::size(kFrequencyEdges) ? std::to_string(kFrequencyEdges[b]) + ")" : "inf)");
    report.frequency_buckets.push_back({range, freq[b].size(), mean_or_absent(freq[b])});
  }
  const char* len_ranges[] = {"<15", "15-35", ">35"};
  for (std::size_t b = 0; b < 3; ++b) report.length_buckets.push_back({len_ranges[b], len[b].size(), mean_or_absent(len[b])});
  return report;
}

namespace {

nlohmann::ordered_json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

nlohmann::ordered_json buckets_json(const std::vector<Bucket>& buckets) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& b : buckets) {
    nlohmann::ordered_json j;
    j["range"] = b.range;
    j["posts"] = b.posts;
    j["f1_at_1"] = optional_json(b.f1_at_1);
    arr.push_back(j);
  }
  return arr;
}

std::string fmt(const std::optional<double>& v) {
  if (!v) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", *v);
  return buf;
}

}  // namespace

std::string report_json(const EvalReport& report, int indent) {
  nlohmann::ordered_json j;
  j["posts"] = report.posts;
  j["excluded_posts"] = report.excluded_posts;
  j["f1_at_1"] = report.f1_at_1;
  j["f1_at_3"] = report.f1_at_3;
  j["map_at_5"] = report.map_at_5;
  j["present_f1_at_1"] = optional_json(report.present_f1_at_1);
  j["absent_recall_at_5"] = optional_json(report.absent_recall_at_5);
  j["frequency_buckets"] = buckets_json(report.frequency_buckets);
  j["length_buckets"] = buckets_json(report.length_buckets);
  return j.dump(indent);
}

std::string report_table(const EvalReport& report) {
  std::ostringstream out;
  char line[128];
  auto row = [&](const char* name, const std::optional<double>& v) {
    std::snprintf(line, sizeof line, "%-22s %10s\n", name, fmt(v).c_str());
    out << line;
  };
  out << "posts " << report.posts << " (excluded " << report.excluded_posts << ")\n";
  row("F1@1", report.f1_at_1);
  row("F1@3", report.f1_at_3);
  row("MAP@5", report.map_at_5);
  row("present F1@1", report.present_f1_at_1);
  row("absent recall@5", report.absent_recall_at_5);
  auto table = [&](const char* title, const std::vector<Bucket>& buckets) {
    out << "\n" << title << "\n";
    for (const auto& b : buckets) {
      std::snprintf(line, sizeof line, "  %-12s posts %6zu  F1@1 %10s\n", b.range.c_str(), b.posts, fmt(b.f1_at_1).c_str());
      out << line;
    }
  };
  table("keyphrase training frequency", report.frequency_buckets);
  table("post length", report.length_buckets);
  return out.str();
}

}  // namespace mmkp::eval
