#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mmkp/tensor.hpp"

namespace mmkp::data {

inline constexpr std::string_view kPad = "<pad>";
inline constexpr std::string_view kBos = "<bos>";
inline constexpr std::string_view kEos = "<eos>";
inline constexpr std::string_view kUnk = "<unk>";
inline constexpr std::string_view kSep = "<sep>";
inline constexpr std::string_view kUrl = "<url>";
inline constexpr std::string_view kMention = "<mention>";
inline constexpr std::string_view kNumber = "<number>";

// Reserved generation-vocabulary entries, in id order.
inline constexpr std::string_view kReservedTokens[] = {kPad, kBos, kEos, kUnk, kSep, kUrl, kMention, kNumber};
inline constexpr std::size_t kPadId = 0, kBosId = 1, kEosId = 2, kUnkId = 3, kSepId = 4;
inline constexpr std::size_t kReservedCount = std::size(kReservedTokens);
inline constexpr std::size_t kMaxAttributes = 5;

// Label id for validation/test keyphrases the classifier has never seen.
inline constexpr std::size_t kUnseenLabel = std::numeric_limits<std::size_t>::max();

using Tokens = std::vector<std::string>;

struct Post {
  std::string id;
  Tokens text;
  Tokens ocr;
  Tokens attributes;
  std::optional<Tensor> visual;  // [l_v x d_v]
  std::vector<std::string> keyphrases;
};

// Space-separated tokens of a keyphrase string.
Tokens split_keyphrase(std::string_view keyphrase);
std::string join_tokens(const Tokens& tokens);

Tokens normalize_tokens(const Tokens& raw);

struct LoadOptions {
  // Expected visual rows / feature width; unchecked when unset.
  std::optional<std::size_t> visual_rows;
  std::optional<std::size_t> visual_dim;
  // Binary sidecar with one feature matrix per line, replacing inline features.
  std::optional<std::filesystem::path> visual_sidecar;
  bool normalize = true;
};

std::vector<Post> load_dataset(const std::filesystem::path& path, const LoadOptions& options = {});
void save_dataset(const std::filesystem::path& path, const std::vector<Post>& posts);
void validate_post(const Post& post, const LoadOptions& options = {});

// "MMKP" sidecar: magic, u32 version=1, u32 count, u32 l_v, u32 d_v, then
// count*l_v*d_v little-endian float32 values.
std::vector<Tensor> read_visual_sidecar(const std::filesystem::path& path);
void write_visual_sidecar(const std::filesystem::path& path, const std::vector<Tensor>& features);

// Token <-> id map. Lookups of unknown tokens return std::nullopt.
class TokenVocab {
 public:
  std::size_t add(const std::string& token);
  std::optional<std::size_t> find(std::string_view token) const;
  std::size_t id_or_unk(std::string_view token) const;
  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  std::size_t size() const { return tokens_.size(); }
  bool contains(std::string_view token) const { return find(token).has_value(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::uint64_t hash() const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> ids_;
};

std::vector<std::size_t> encode(const Tokens& tokens, const TokenVocab& vocab);
Tokens decode(const std::vector<std::size_t>& ids, const TokenVocab& vocab);

struct Vocabulary {
  TokenVocab gen;  // reserved tokens occupy ids [0, kReservedCount)
  TokenVocab cls;  // keyphrase string -> label id

  std::size_t label_of(std::string_view keyphrase) const;  // kUnseenLabel when absent
};

struct VocabOptions {
  // Upper bound on |gen| including the reserved tokens.
  std::size_t gen_cap = 45000;
  std::size_t min_count = 1;
};

Vocabulary build_vocab(const std::vector<Post>& train, const VocabOptions& options = {});
void save_vocab(const std::filesystem::path& path, const Vocabulary& vocab);
Vocabulary load_vocab(const std::filesystem::path& path);

// Drops keyphrases seen fewer than `min_occurrences` times across `posts`,
// then drops posts left without keyphrases.
std::vector<Post> filter_rare_keyphrases(const std::vector<Post>& posts, std::size_t min_occurrences);

// text ++ <sep> ++ (ocr tokens present in gen) when any OCR token survives.
Tokens append_ocr(const Tokens& text, const Tokens& ocr, const TokenVocab& gen);

struct TrainingInstance {
  std::size_t post_index;
  Tokens target;      // keyphrase tokens, without the end marker
  std::size_t label;  // cls id or kUnseenLabel
};

// One instance per (post, keyphrase). With `training`, a keyphrase missing
// from the label vocabulary is a ValidationError; otherwise it maps to kUnseenLabel.
std::vector<TrainingInstance> replicate_instances(const std::vector<Post>& posts, const Vocabulary& vocab,
                                                  bool training);

struct SynthOptions {
  std::size_t n_posts = 50;
  std::size_t vocab_size = 30;  // filler words
  std::uint64_t seed = 7;
  std::size_t visual_rows = 4;
  std::size_t visual_dim = 16;
};

// Which planted signal determines a synthetic post's keyphrase.
enum class SynthPopulation { kTextTrigger, kAttributeTrigger, kOcrTrigger };
SynthPopulation synth_population(std::size_t post_index);

std::vector<Post> synth_corpus(const SynthOptions& options);

}  // namespace mmkp::data
