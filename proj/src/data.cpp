#include "mmkp/data.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "mmkp/errors.hpp"
#include "mmkp/random.hpp"

namespace mmkp::data {
namespace {

using nlohmann::json;

bool is_placeholder(std::string_view tok) {
  return tok == kUrl || tok == kMention || tok == kNumber;
}

bool all_alpha(std::string_view tok) {
  return !tok.empty() && std::all_of(tok.begin(), tok.end(), [](unsigned char c) { return std::isalpha(c) != 0; });
}

bool all_digit(std::string_view tok) {
  return !tok.empty() && std::all_of(tok.begin(), tok.end(), [](unsigned char c) { return std::isdigit(c) != 0; });
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

Tokens string_list(const json& j, const char* field, std::size_t line) {
  if (!j.is_array()) throw ParseError(std::string("field \"") + field + "\" must be an array of strings", line);
  Tokens out;
  for (const auto& e : j) {
    if (!e.is_string()) throw ParseError(std::string("field \"") + field + "\" must contain only strings", line);
    out.push_back(e.get<std::string>());
  }
  return out;
}

std::string normalize_keyphrase(std::string_view kp) { return join_tokens(normalize_tokens(split_keyphrase(kp))); }

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw ValidationError("visual sidecar truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

Tokens split_keyphrase(std::string_view keyphrase) {
  Tokens out;
  std::istringstream in{std::string(keyphrase)};
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

std::string join_tokens(const Tokens& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

Tokens normalize_tokens(const Tokens& raw) {
  Tokens out;
  out.reserve(raw.size());
  for (const auto& tok : raw) {
    if (is_placeholder(tok)) {
      out.push_back(tok);
      continue;
    }
    const std::string low = lower(tok);
    if (low.starts_with("http://") || low.starts_with("https://") || low.starts_with("www.")) {
      out.emplace_back(kUrl);
    } else if (low.size() > 1 && low[0] == '@') {
      out.emplace_back(kMention);
    } else if (all_digit(low)) {
      out.emplace_back(kNumber);
    } else if (all_alpha(low)) {
      out.push_back(low);
    }
  }
  return out;
}

void validate_post(const Post& post, const LoadOptions& options) {
  auto fail = [&](const std::string& field, const std::string& why) {
    throw ValidationError("post \"" + post.id + "\": field \"" + field + "\" " + why);
  };
  if (post.text.empty()) fail("text", "has no tokens");
  if (post.attributes.size() > kMaxAttributes) {
    fail("attributes", "has " + std::to_string(post.attributes.size()) + " entries, at most 5 allowed");
  }
  if (post.keyphrases.empty()) fail("keyphrases", "is empty");
  for (const auto& kp : post.keyphrases) {
    if (split_keyphrase(kp).empty()) fail("keyphrases", "contains an empty keyphrase");
  }
  if (post.visual) {
    const Tensor& v = *post.visual;
    if (v.rank() != 2) fail("visual_features", "must be a matrix");
    if (options.visual_rows && v.shape()[0] != *options.visual_rows) {
      fail("visual_features", "has " + std::to_string(v.shape()[0]) + " rows, expected " + std::to_string(*options.visual_rows));
    }
    if (options.visual_dim && v.shape()[1] != *options.visual_dim) {
      fail("visual_features", "has width " + std::to_string(v.shape()[1]) + ", expected " + std::to_string(*options.visual_dim));
    }
    for (double x : v.values()) {
      if (!std::isfinite(x)) fail("visual_features", "contains a non-finite value");
    }
  }
}

std::vector<Post> load_dataset(const std::filesystem::path& path, const LoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset " + path.string());
  static const std::set<std::string> kRequired = {"id", "text", "ocr", "attributes", "keyphrases"};
  std::vector<Post> posts;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("malformed JSON: ") + e.what(), lineno);
    }
    if (!j.is_object()) throw ParseError("expected a JSON object", lineno);
    for (const auto& key : kRequired) {
      if (!j.contains(key)) throw ParseError("missing field \"" + key + "\"", lineno);
    }
    for (const auto& [key, _] : j.items()) {
      if (!kRequired.count(key) && key != "visual_features") throw ParseError("unknown field \"" + key + "\"", lineno);
    }
    Post post;
    if (!j["id"].is_string()) throw ParseError("field \"id\" must be a string", lineno);
    post.id = j["id"].get<std::string>();
    post.text = string_list(j["text"], "text", lineno);
    post.ocr = string_list(j["ocr"], "ocr", lineno);
    post.attributes = string_list(j["attributes"], "attributes", lineno);
    post.keyphrases = string_list(j["keyphrases"], "keyphrases", lineno);
    if (j.contains("visual_features") && !j["visual_features"].is_null()) {
      const json& vf = j["visual_features"];
      if (!vf.is_array() || vf.empty() || !vf[0].is_array() || vf[0].empty()) {
        throw ParseError("field \"visual_features\" must be a non-empty matrix", lineno);
      }
      const std::size_t rows = vf.size(), cols = vf[0].size();
      std::vector<double> vals;
      vals.reserve(rows * cols);
      for (const auto& r : vf) {
        if (!r.is_array() || r.size() != cols) throw ParseError("ragged \"visual_features\" matrix", lineno);
        for (const auto& x : r) {
          if (!x.is_number()) throw ParseError("non-numeric entry in \"visual_features\"", lineno);
          vals.push_back(x.get<double>());
        }
      }
      post.visual = Tensor::matrix(rows, cols, std::move(vals));
    }
    if (options.normalize) {
      post.text = normalize_tokens(post.text);
      post.ocr = normalize_tokens(post.ocr);
      post.attributes = normalize_tokens(post.attributes);
      for (auto& kp : post.keyphrases) kp = normalize_keyphrase(kp);
    }
    posts.push_back(std::move(post));
  }
  if (options.visual_sidecar) {
    auto features = read_visual_sidecar(*options.visual_sidecar);
    if (features.size() != posts.size()) {
      throw ValidationError("visual sidecar holds " + std::to_string(features.size()) + " matrices for " +
                            std::to_string(posts.size()) + " posts");
    }
    for (std::size_t i = 0; i < posts.size(); ++i) {
      if (posts[i].visual) throw ValidationError("post \"" + posts[i].id + "\" has both inline and sidecar visual features");
      posts[i].visual = std::move(features[i]);
    }
  }
  for (const auto& p : posts) validate_post(p, options);
  return posts;
}

void save_dataset(const std::filesystem::path& path, const std::vector<Post>& posts) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write dataset " + path.string());
  for (const auto& p : posts) {
    json j = json::object();
    j["id"] = p.id;
    j["text"] = p.text;
    j["ocr"] = p.ocr;
    j["attributes"] = p.attributes;
    if (p.visual) {
      json rows = json::array();
      for (std::size_t r = 0; r < p.visual->rows(); ++r) {
        auto row = p.visual->row(r);
        rows.push_back(std::vector<double>(row.begin(), row.end()));
      }
      j["visual_features"] = std::move(rows);
    }
    j["keyphrases"] = p.keyphrases;
    out << j.dump() << '\n';
  }
}

std::vector<Tensor> read_visual_sidecar(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open visual sidecar " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "MMKP", 4) != 0) throw ValidationError("visual sidecar: bad magic");
  const std::uint32_t version = read_u32(in);
  if (version != 1) throw ValidationError("visual sidecar: unsupported version " + std::to_string(version));
  const std::uint32_t count = read_u32(in), rows = read_u32(in), cols = read_u32(in);
  std::vector<Tensor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Tensor t({rows, cols});
    for (auto& v : t.values()) v = static_cast<double>(std::bit_cast<float>(read_u32(in)));
    out.push_back(std::move(t));
  }
  return out;
}

void write_visual_sidecar(const std::filesystem::path& path, const std::vector<Tensor>& features) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write visual sidecar " + path.string());
  const std::size_t rows = features.empty() ? 0 : features[0].shape()[0];
  const std::size_t cols = features.empty() ? 0 : features[0].shape()[1];
  out.write("MMKP", 4);
  write_u32(out, 1);
  write_u32(out, static_cast<std::uint32_t>(features.size()));
  write_u32(out, static_cast<std::uint32_t>(rows));
  write_u32(out, static_cast<std::uint32_t>(cols));
  for (const auto& f : features) {
    if (f.rank() != 2 || f.shape()[0] != rows || f.shape()[1] != cols) {
      throw DimensionError("visual sidecar matrices must share one shape");
    }
    for (double v : f.values()) write_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
}

std::size_t TokenVocab::add(const std::string& token) {
  auto it = ids_.find(token);
  if (it != ids_.end()) return it->second;
  ids_.emplace(token, tokens_.size());
  tokens_.push_back(token);
  return tokens_.size() - 1;
}

std::optional<std::size_t> TokenVocab::find(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

std::size_t TokenVocab::id_or_unk(std::string_view token) const { return find(token).value_or(kUnkId); }

std::uint64_t TokenVocab::hash() const {
  // FNV-1a over the tokens in id order, NUL-separated.
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& t : tokens_) {
    for (unsigned char c : t) h = (h ^ c) * 1099511628211ULL;
    h = (h ^ 0u) * 1099511628211ULL;
  }
  return h;
}

std::vector<std::size_t> encode(const Tokens& tokens, const TokenVocab& vocab) {
  std::vector<std::size_t> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(vocab.id_or_unk(t));
  return ids;
}

Tokens decode(const std::vector<std::size_t>& ids, const TokenVocab& vocab) {
  Tokens out;
  out.reserve(ids.size());
  for (auto id : ids) out.push_back(vocab.token(id));
  return out;
}

std::size_t Vocabulary::label_of(std::string_view keyphrase) const { return cls.find(keyphrase).value_or(kUnseenLabel); }

Vocabulary build_vocab(const std::vector<Post>& train, const VocabOptions& options) {
  if (train.empty()) throw ValidationError("cannot build a vocabulary from an empty corpus");
  if (options.gen_cap < kReservedCount) {
    throw ValidationError("gen_cap " + std::to_string(options.gen_cap) + " leaves no room for the reserved tokens");
  }
  std::map<std::string, std::size_t> counts;
  auto count = [&](const Tokens& toks) {
    for (const auto& t : toks) ++counts[t];
  };
  for (const auto& p : train) {
    count(p.text);
    count(p.ocr);
    count(p.attributes);
    for (const auto& kp : p.keyphrases) count(split_keyphrase(kp));
  }
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (const auto& [tok, c] : counts) {
    if (c < options.min_count) continue;
    if (std::find(std::begin(kReservedTokens), std::end(kReservedTokens), tok) != std::end(kReservedTokens)) continue;
    ranked.emplace_back(tok, c);
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocabulary v;
  for (auto tok : kReservedTokens) v.gen.add(std::string(tok));
  for (const auto& [tok, _] : ranked) {
    if (v.gen.size() >= options.gen_cap) break;
    v.gen.add(tok);
  }
  for (const auto& p : train) {
    for (const auto& kp : p.keyphrases) v.cls.add(kp);
  }
  return v;
}

void save_vocab(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write vocabulary " + path.string());
  json j;
  j["gen"] = vocab.gen.tokens();
  j["cls"] = vocab.cls.tokens();
  out << j.dump(1) << '\n';
}

Vocabulary load_vocab(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocabulary " + path.string());
  json j = json::parse(in);
  Vocabulary v;
  for (const auto& t : j.at("gen")) v.gen.add(t.get<std::string>());
  for (const auto& t : j.at("cls")) v.cls.add(t.get<std::string>());
  for (std::size_t i = 0; i < kReservedCount; ++i) {
    if (v.gen.size() <= i || v.gen.token(i) != kReservedTokens[i]) {
      throw ValidationError("vocabulary " + path.string() + " lacks reserved token " + std::string(kReservedTokens[i]));
    }
  }
  return v;
}

std::vector<Post> filter_rare_keyphrases(const std::vector<Post>& posts, std::size_t min_occurrences) {
  std::map<std::string, std::size_t> freq;
  for (const auto& p : posts) {
    for (const auto& kp : p.keyphrases) ++freq[kp];
  }
  std::vector<Post> out;
  for (const auto& p : posts) {
    Post q = p;
    std::erase_if(q.keyphrases, [&](const std::string& kp) { return freq[kp] < min_occurrences; });
    if (!q.keyphrases.empty()) out.push_back(std::move(q));
  }
  return out;
}

Tokens append_ocr(const Tokens& text, const Tokens& ocr, const TokenVocab& gen) {
  Tokens out = text;
  Tokens kept;
  for (const auto& t : ocr) {
    if (gen.contains(t)) kept.push_back(t);
  }
  if (kept.empty()) return out;
  out.emplace_back(kSep);
  out.insert(out.end(), kept.begin(), kept.end());
  return out;
}

std::vector<TrainingInstance> replicate_instances(const std::vector<Post>& posts, const Vocabulary& vocab, bool training) {
  std::vector<TrainingInstance> out;
  for (std::size_t i = 0; i < posts.size(); ++i) {
    for (const auto& kp : posts[i].keyphrases) {
      const std::size_t label = vocab.label_of(kp);
      if (training && label == kUnseenLabel) {
        throw ValidationError("post \"" + posts[i].id + "\": keyphrase \"" + kp + "\" is not in the label vocabulary");
      }
      out.push_back({i, split_keyphrase(kp), label});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

namespace {

constexpr std::string_view kConsonants = "bcdfghjklmnprstvwz";
constexpr std::string_view kVowels = "aeiou";
constexpr std::size_t kSyllables = kConsonants.size() * kVowels.size();

std::string syllable(std::size_t i) {
  i %= kSyllables;
  return {kConsonants[i / kVowels.size()], kVowels[i % kVowels.size()]};
}

// Two regular syllables; distinct for i < kSyllables^2.
std::string pseudo_word(std::size_t i) { return syllable(i / kSyllables) + syllable(i); }

constexpr std::array<std::string_view, 8> kNoiseAttributes = {"man",   "shirt",  "woman",  "sign",
                                                              "white", "people", "street", "table"};
constexpr std::size_t kTriggerKinds = 3;

// Deals filler words from reshuffled decks so every word appears about
// equally often.
class Deck {
 public:
  Deck(std::size_t n, Rng& rng) : rng_(rng) {
    for (std::size_t i = 0; i < n; ++i) words_.push_back(pseudo_word(i + 7));
  }
  const std::string& word(std::size_t i) const { return words_[i]; }
  const std::string& deal() {
    if (pos_ == order_.size()) {
      order_.resize(words_.size());
      for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
      rng_.shuffle(order_.begin(), order_.end());
      pos_ = 0;
    }
    return words_[order_[pos_++]];
  }

 private:
  Rng& rng_;
  std::vector<std::string> words_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

}  // namespace

SynthPopulation synth_population(std::size_t post_index) {
  switch (post_index % 3) {
    case 0: return SynthPopulation::kTextTrigger;
    case 1: return SynthPopulation::kAttributeTrigger;
    default: return SynthPopulation::kOcrTrigger;
  }
}

std::vector<Post> synth_corpus(const SynthOptions& options) {
  if (options.n_posts == 0) throw ValidationError("synth_corpus needs at least one post");
  if (options.vocab_size < kTriggerKinds + 1) throw ValidationError("synth_corpus needs vocab_size >= 4");
  Rng rng(options.seed);
  Deck deck(options.vocab_size, rng);
  auto noise_attributes = [&](Tokens& attrs, std::size_t n) {
    for (std::size_t k = 0; k < n; ++k) attrs.emplace_back(kNoiseAttributes[rng.below(kNoiseAttributes.size())]);
  };

  std::vector<Post> posts;
  for (std::size_t i = 0; i < options.n_posts; ++i) {
    Post p;
    char id[32];
    std::snprintf(id, sizeof id, "synth-%04zu", i);
    p.id = id;
    const std::size_t len = 4 + rng.below(5);
    for (std::size_t k = 0; k < len; ++k) p.text.push_back(deck.deal());
    const std::size_t kind = (i / 3) % kTriggerKinds;
    switch (synth_population(i)) {
      case SynthPopulation::kTextTrigger: {
        // A one-off word planted in the text is the keyphrase itself.
        const std::string rare = "xo" + pseudo_word(i);
        p.text.insert(p.text.begin() + static_cast<std::ptrdiff_t>(rng.below(p.text.size() + 1)), rare);
        noise_attributes(p.attributes, 2);
        if (rng.below(2)) p.ocr.push_back(deck.deal());
        p.keyphrases.push_back(rare);
        break;
      }
      case SynthPopulation::kAttributeTrigger: {
        // Trigger attributes reuse the first filler words; the label never
        // appears in the post.
        p.attributes.push_back(deck.word(kind));
        noise_attributes(p.attributes, 2);
        std::swap(p.attributes[0], p.attributes[rng.below(p.attributes.size())]);
        p.keyphrases.push_back("qu" + pseudo_word(kind * 31 + 5));
        break;
      }
      case SynthPopulation::kOcrTrigger: {
        const std::string trigger = "ye" + pseudo_word(kind * 17 + 3);
        p.ocr.push_back(deck.deal());
        p.ocr.insert(p.ocr.begin() + static_cast<std::ptrdiff_t>(rng.below(2)), trigger);
        noise_attributes(p.attributes, 2);
        p.keyphrases.push_back(trigger);
        break;
      }
    }
    Tensor vis({options.visual_rows, options.visual_dim});
    for (auto& v : vis.values()) v = std::round((rng.unit() * 2.0 - 1.0) * 1000.0) / 1000.0;
    p.visual = std::move(vis);
    posts.push_back(std::move(p));
  }
  return posts;
}

}  // namespace mmkp::data
