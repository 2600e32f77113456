#pragma once

#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mmkp/autograd.hpp"
#include "mmkp/config.hpp"
#include "mmkp/data.hpp"
#include "mmkp/encoders.hpp"
#include "mmkp/random.hpp"

namespace mmkp {

struct ClassifierParams {
  Parameter *w1 = nullptr, *b1 = nullptr;  // [d x d], [d]
  Parameter *w2 = nullptr, *b2 = nullptr;  // [d x |V_cls|], [|V_cls|]

  static ClassifierParams create(ParamStore& store, std::size_t dim, std::size_t labels, Rng& rng);
};

struct ClassifierOutput {
  Var logits;
  Var probs;
  std::vector<std::size_t> top_k;  // highest logit first
};

// Indices of the k largest values, ties to the lower index.
std::vector<std::size_t> top_k_indices(std::span<const double> values, std::size_t k);

ClassifierOutput classify(Var c_fuse, const ClassifierParams& params, std::size_t k);

struct BetaResult {
  data::Tokens words;  // token sequences of the retrieved labels, in rank order
  Var beta;            // [words.size()]
};

// Softmax over the logits of `labels` only, each label's probability
// repeated over its tokens, then renormalized.
BetaResult build_beta(Var logits, std::span<const std::size_t> labels, const std::vector<data::Tokens>& label_tokens);

// gen_vocab followed by per-instance slots for copyable tokens outside it.
class ExtendedVocab {
 public:
  explicit ExtendedVocab(const data::TokenVocab& gen) : gen_(&gen) {}

  std::size_t add(const std::string& token);
  std::vector<std::size_t> add_all(const data::Tokens& tokens);
  std::optional<std::size_t> find(const std::string& token) const;
  // Generation id, else extended slot, else unk.
  std::size_t target_id(const std::string& token) const;
  const std::string& token(std::size_t id) const;
  std::size_t gen_size() const { return gen_->size(); }
  std::size_t size() const { return gen_->size() + extra_.size(); }
  // Decoder input id: extended slots feed the unk embedding.
  std::size_t input_id(std::size_t id) const { return id < gen_size() ? id : data::kUnkId; }

 private:
  const data::TokenVocab* gen_;
  std::vector<std::string> extra_;
  std::unordered_map<std::string, std::size_t> extra_ids_;
};

struct DecoderParams {
  GruParams gru;                                  // input d_e, hidden d
  Parameter *w_alpha_s = nullptr, *w_alpha_h = nullptr;  // [d x d] each, W_alpha split over [s ; h]
  Parameter *b_alpha = nullptr, *v_alpha = nullptr;      // [d], [d]
  Parameter *w_g1 = nullptr, *b_g1 = nullptr;     // [(d_e + 2d) x d], [d]
  Parameter *w_g = nullptr, *b_g = nullptr;       // [d x |V_gen|], [|V_gen|]
  Parameter *w_lambda = nullptr, *b_lambda = nullptr;  // [d_e + 2d], [1]

  static DecoderParams create(ParamStore& store, const ModelConfig& cfg, std::size_t gen_size, Rng& rng);
};

// Per-post quantities shared by every decoding step.
struct DecoderContext {
  Var memory;       // M_text [l_x x d]
  Var memory_proj;  // M_text W_alpha_h
  Var c_fuse;
  Parameter* embedding = nullptr;
};

DecoderContext prepare_decoder(const MemoryBank& text, Var c_fuse, Parameter& embedding, const DecoderParams& params);

// s_0 = h_{l_x}.
inline Var init_decoder(Var last_state) { return last_state; }

struct StepOutput {
  Var state;   // s_t
  Var alpha;   // [l_x]
  Var c_text;  // [d]
  Var p_gen;   // [|V_gen|]
  Var lambda;  // [1]
};

// `prev_token` is a gen_vocab id (use ExtendedVocab::input_id).
StepOutput decode_step(std::size_t prev_token, Var prev_state, const DecoderContext& ctx, const DecoderParams& params);

struct Aggregation {
  double a = 1.0;
  double b = 0.0;
};

// P_unf over `ext_size` slots: lambda P_gen + (1 - lambda)(a alpha + b beta),
// with alpha and beta scattered onto their tokens' extended ids. An invalid
// `beta` contributes nothing.
Var unify(Var p_gen, Var lambda, Var alpha, std::span<const std::size_t> source_ext, Var beta,
          std::span<const std::size_t> words_ext, Aggregation agg, std::size_t ext_size);

// -sum_t log P_unf_t(target_t).
Var sequence_loss(std::span<const Var> p_unf, std::span<const std::size_t> target_ext);

}  // namespace mmkp
