#include "mmkp/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mmkp/errors.hpp"
#include "mmkp/ops.hpp"

namespace mmkp {

namespace {

Var gather(Var v, std::span<const std::size_t> ids) {
  const std::size_t n = v.shape()[0];
  return ops::reshape(ops::gather_rows(ops::reshape(v, {n, 1}), ids), {ids.size()});
}

}  // namespace

ClassifierParams ClassifierParams::create(ParamStore& store, std::size_t dim, std::size_t labels, Rng& rng) {
  if (labels == 0) throw DimensionError("classifier needs at least one label");
  ClassifierParams p;
  p.w1 = &store.add("classifier.w1", xavier_uniform(rng, dim, dim));
  p.b1 = &store.add("classifier.b1", Tensor({dim}));
  p.w2 = &store.add("classifier.w2", xavier_uniform(rng, dim, labels));
  p.b2 = &store.add("classifier.b2", Tensor({labels}));
  return p;
}

std::vector<std::size_t> top_k_indices(std::span<const double> values, std::size_t k) {
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), 0);
  k = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) { return values[a] > values[b] || (values[a] == values[b] && a < b); });
  idx.resize(k);
  return idx;
}

ClassifierOutput classify(Var c_fuse, const ClassifierParams& params, std::size_t k) {
  Tape& tape = *c_fuse.tape();
  Var hidden = ops::tanh(ops::add(ops::matmul(c_fuse, tape.param(*params.w1)), tape.param(*params.b1)));
  ClassifierOutput out;
  out.logits = ops::add(ops::matmul(hidden, tape.param(*params.w2)), tape.param(*params.b2));
  out.probs = ops::softmax(out.logits);
  out.top_k = top_k_indices(out.logits.value().values(), k);
  return out;
}

BetaResult build_beta(Var logits, std::span<const std::size_t> labels, const std::vector<data::Tokens>& label_tokens) {
  if (labels.empty()) throw ContractError("build_beta needs at least one label");
  if (label_tokens.size() != labels.size()) throw DimensionError("build_beta: one token list per label required");
  BetaResult result;
  std::vector<std::size_t> parent;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (const auto& tok : label_tokens[i]) {
      result.words.push_back(tok);
      parent.push_back(i);
    }
  }
  if (parent.empty()) throw ContractError("build_beta: labels have no tokens");
  Var p = ops::softmax(gather(logits, labels));
  Var repeated = gather(p, parent);
  result.beta = ops::mul(repeated, ops::reciprocal(ops::sum(repeated)));
  return result;
}

std::size_t ExtendedVocab::add(const std::string& token) {
  if (auto id = gen_->find(token)) return *id;
  auto [it, inserted] = extra_ids_.emplace(token, gen_->size() + extra_.size());
  if (inserted) extra_.push_back(token);
  return it->second;
}

std::vector<std::size_t> ExtendedVocab::add_all(const data::Tokens& tokens) {
  std::vector<std::size_t> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(add(t));
  return ids;
}

std::optional<std::size_t> ExtendedVocab::find(const std::string& token) const {
  if (auto id = gen_->find(token)) return id;
  auto it = extra_ids_.find(token);
  if (it == extra_ids_.end()) return std::nullopt;
  return it->second;
}

std::size_t ExtendedVocab::target_id(const std::string& token) const { return find(token).value_or(data::kUnkId); }

const std::string& ExtendedVocab::token(std::size_t id) const {
  return id < gen_->size() ? gen_->token(id) : extra_.at(id - gen_->size());
}

DecoderParams DecoderParams::create(ParamStore& store, const ModelConfig& cfg, std::size_t gen_size, Rng& rng) {
  const std::size_t d = cfg.model_dim, ctx = cfg.embed_dim + 2 * d;
  DecoderParams p;
  p.gru = GruParams::create(store, "decoder.gru", cfg.embed_dim, d, rng);
  p.w_alpha_s = &store.add("decoder.attn.w_s", xavier_uniform(rng, d, d));
  p.w_alpha_h = &store.add("decoder.attn.w_h", xavier_uniform(rng, d, d));
  p.b_alpha = &store.add("decoder.attn.b", Tensor({d}));
  p.v_alpha = &store.add("decoder.attn.v", uniform_tensor(rng, {d}, std::sqrt(3.0 / static_cast<double>(d))));
  p.w_g1 = &store.add("decoder.gen.w1", xavier_uniform(rng, ctx, d));
  p.b_g1 = &store.add("decoder.gen.b1", Tensor({d}));
  p.w_g = &store.add("decoder.gen.w2", xavier_uniform(rng, d, gen_size));
  p.b_g = &store.add("decoder.gen.b2", Tensor({gen_size}));
  p.w_lambda = &store.add("decoder.switch.w", uniform_tensor(rng, {ctx}, std::sqrt(3.0 / static_cast<double>(ctx))));
  p.b_lambda = &store.add("decoder.switch.b", Tensor({1}));
  return p;
}

DecoderContext prepare_decoder(const MemoryBank& text, Var c_fuse, Parameter& embedding, const DecoderParams& params) {
  if (!text.present) throw ContractError("decoder needs the text memory bank");
  Tape& tape = *text.matrix.tape();
  return {text.matrix, ops::matmul(text.matrix, tape.param(*params.w_alpha_h)), c_fuse, &embedding};
}

StepOutput decode_step(std::size_t prev_token, Var prev_state, const DecoderContext& ctx, const DecoderParams& params) {
  if (!prev_state.valid() || !ctx.memory.valid() || ctx.embedding == nullptr) {
    throw ContractError("decode_step called before init_decoder/prepare_decoder");
  }
  Tape& tape = *ctx.memory.tape();
  const std::size_t ids[1] = {prev_token};
  Var u = ops::reshape(ops::gather_rows(tape.param(*ctx.embedding), ids), {ctx.embedding->value.shape()[1]});

  GruVars gru(tape, params.gru);
  StepOutput out;
  out.state = gru.step(ops::add(ops::matmul(u, gru.w_input), gru.bias), prev_state);

  Var query = ops::add(ops::matmul(out.state, tape.param(*params.w_alpha_s)), tape.param(*params.b_alpha));
  Var scores = ops::matmul(ops::tanh(ops::add(ctx.memory_proj, query)), tape.param(*params.v_alpha));
  out.alpha = ops::softmax(scores);
  out.c_text = ops::matmul(out.alpha, ctx.memory);

  Var c_t = ops::concat({u, out.state, ops::add(out.c_text, ctx.c_fuse)});
  Var hidden = ops::tanh(ops::add(ops::matmul(c_t, tape.param(*params.w_g1)), tape.param(*params.b_g1)));
  out.p_gen = ops::softmax(ops::add(ops::matmul(hidden, tape.param(*params.w_g)), tape.param(*params.b_g)));
  out.lambda = ops::sigmoid(ops::add(ops::matmul(c_t, tape.param(*params.w_lambda)), tape.param(*params.b_lambda)));
  return out;
}

Var unify(Var p_gen, Var lambda, Var alpha, std::span<const std::size_t> source_ext, Var beta,
          std::span<const std::size_t> words_ext, Aggregation agg, std::size_t ext_size) {
  if (std::abs(agg.a + agg.b - 1.0) > 1e-12 || agg.a < 0 || agg.b < 0) {
    throw ContractError("aggregation coefficients must be nonnegative and sum to 1 (a=" + std::to_string(agg.a) +
                        ", b=" + std::to_string(agg.b) + ")");
  }
  const std::size_t gen = p_gen.shape()[0];
  if (ext_size < gen) throw DimensionError("extended vocabulary smaller than gen_vocab");
  std::vector<std::size_t> iota(gen);
  std::iota(iota.begin(), iota.end(), 0);
  Var generated = ops::mul(lambda, gen == ext_size ? p_gen : ops::scatter_add(p_gen, iota, ext_size));
  Var copied = ops::scale(ops::scatter_add(alpha, source_ext, ext_size), agg.a);
  if (beta.valid() && agg.b > 0) copied = ops::add(copied, ops::scale(ops::scatter_add(beta, words_ext, ext_size), agg.b));
  return ops::add(generated, ops::mul(ops::one_minus(lambda), copied));
}

Var sequence_loss(std::span<const Var> p_unf, std::span<const std::size_t> target_ext) {
  if (p_unf.size() != target_ext.size()) throw DimensionError("one distribution per target step required");
  if (p_unf.empty()) throw ContractError("sequence_loss needs at least one step");
  std::optional<Var> total;
  for (std::size_t t = 0; t < p_unf.size(); ++t) {
    Var nll = ops::scale(ops::log(ops::pick(p_unf[t], target_ext[t])), -1.0);
    total = total ? ops::add(*total, nll) : nll;
  }
  return *total;
}

}  // namespace mmkp
