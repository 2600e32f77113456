#include "mmkp/encoders.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "mmkp/errors.hpp"
#include "mmkp/ops.hpp"

namespace mmkp {

Tensor xavier_uniform(Rng& rng, std::size_t rows, std::size_t cols) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Tensor t({rows, cols});
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform(-bound, bound));
  return t;
}

Tensor uniform_tensor(Rng& rng, Shape shape, double bound) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform(-bound, bound));
  return t;
}

Tensor constant_tensor(Shape shape, double value) {
  Tensor t(std::move(shape));
  t.fill(value);
  return t;
}

GruParams GruParams::create(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t hidden, Rng& rng) {
  GruParams p;
  p.hidden = hidden;
  p.w_input = &store.add(prefix + ".w_input", xavier_uniform(rng, in, 3 * hidden));
  p.w_gates = &store.add(prefix + ".w_gates", xavier_uniform(rng, hidden, 2 * hidden));
  p.w_cand = &store.add(prefix + ".w_cand", xavier_uniform(rng, hidden, hidden));
  p.bias = &store.add(prefix + ".bias", Tensor({3 * hidden}));
  return p;
}

GruVars::GruVars(Tape& tape, const GruParams& p)
    : w_input(tape.param(*p.w_input)),
      w_gates(tape.param(*p.w_gates)),
      w_cand(tape.param(*p.w_cand)),
      bias(tape.param(*p.bias)),
      hidden(p.hidden) {}

Var GruVars::project_inputs(Var inputs) const { return ops::add(ops::matmul(inputs, w_input), bias); }

Var GruVars::step(Var projected_input, Var h) const {
  const std::size_t n = hidden;
  Var gates = ops::add(ops::slice_cols(projected_input, 0, 2 * n), ops::matmul(h, w_gates));
  Var zr = ops::sigmoid(gates);
  Var z = ops::slice_cols(zr, 0, n);
  Var r = ops::slice_cols(zr, n, n);
  Var cand = ops::tanh(ops::add(ops::slice_cols(projected_input, 2 * n, n), ops::matmul(ops::mul(r, h), w_cand)));
  return ops::add(ops::mul(ops::one_minus(z), cand), ops::mul(z, h));
}

const char* modality_name(Modality m) {
  switch (m) {
    case Modality::kText: return "text";
    case Modality::kVision: return "vision";
    case Modality::kAttribute: return "attribute";
  }
  return "?";
}

EncoderParams EncoderParams::create(ParamStore& store, const ModelConfig& cfg, std::size_t vocab_size, Rng& rng) {
  if (cfg.model_dim % 2 != 0) throw DimensionError("model_dim must be even to split across two GRU directions");
  if (cfg.encoder_layers == 0) throw DimensionError("encoder needs at least one layer");
  EncoderParams p;
  p.embedding = &store.add("embedding", uniform_tensor(rng, {vocab_size, cfg.embed_dim}, cfg.embed_init));
  const std::size_t half = cfg.model_dim / 2;
  for (std::size_t l = 0; l < cfg.encoder_layers; ++l) {
    const std::size_t in = l == 0 ? cfg.embed_dim : cfg.model_dim;
    const std::string prefix = "encoder.layer" + std::to_string(l);
    Layer layer;
    layer.forward = GruParams::create(store, prefix + ".fwd", in, half, rng);
    layer.backward = GruParams::create(store, prefix + ".bwd", in, half, rng);
    p.layers.push_back(layer);
  }
  p.visual_w = &store.add("visual.w", xavier_uniform(rng, cfg.visual_dim, cfg.model_dim));
  p.visual_b = &store.add("visual.b", Tensor({cfg.model_dim}));
  p.attr_w = &store.add("attribute.w", xavier_uniform(rng, cfg.embed_dim, cfg.model_dim));
  p.attr_b = &store.add("attribute.b", Tensor({cfg.model_dim}));
  return p;
}

namespace {

// Runs one direction over pre-projected inputs; returns per-position states
// in sequence order.
std::vector<Var> run_direction(const GruVars& gru, Var projected, std::size_t len, bool reverse, Tape& tape) {
  std::vector<Var> states(len);
  Var h = tape.constant(Tensor({gru.hidden}));
  for (std::size_t k = 0; k < len; ++k) {
    const std::size_t i = reverse ? len - 1 - k : k;
    h = gru.step(ops::row(projected, i), h);
    states[i] = h;
  }
  return states;
}

}  // namespace

TextEncoding encode_text(Tape& tape, std::span<const std::size_t> token_ids, const EncoderParams& params) {
  if (token_ids.empty()) throw ContractError("encode_text needs at least one token");
  const std::size_t len = token_ids.size();
  Var inputs = ops::gather_rows(tape.param(*params.embedding), token_ids);
  for (const auto& layer : params.layers) {
    GruVars fwd(tape, layer.forward), bwd(tape, layer.backward);
    auto f = run_direction(fwd, fwd.project_inputs(inputs), len, false, tape);
    auto b = run_direction(bwd, bwd.project_inputs(inputs), len, true, tape);
    std::vector<Var> rows;
    rows.reserve(len);
    for (std::size_t i = 0; i < len; ++i) rows.push_back(ops::concat({f[i], b[i]}));
    inputs = ops::stack_rows(rows);
  }
  TextEncoding enc;
  enc.bank = {Modality::kText, inputs, true};
  enc.last_state = ops::row(inputs, len - 1);
  return enc;
}

MemoryBank project_visual(Tape& tape, const Tensor& features, const EncoderParams& params) {
  const std::size_t d_v = params.visual_w->value.shape()[0];
  if (features.rank() != 2 || features.shape()[1] != d_v) {
    throw DimensionError("visual features " + shape_str(features.shape()) + " do not match d_v=" + std::to_string(d_v));
  }
  Var x = tape.constant(features);
  return {Modality::kVision, ops::add(ops::matmul(x, tape.param(*params.visual_w)), tape.param(*params.visual_b)), true};
}

MemoryBank project_attributes(Tape& tape, std::span<const std::size_t> attribute_ids, const EncoderParams& params) {
  if (attribute_ids.empty()) return MemoryBank::absent(Modality::kAttribute);
  Var emb = ops::gather_rows(tape.param(*params.embedding), attribute_ids);
  return {Modality::kAttribute, ops::add(ops::matmul(emb, tape.param(*params.attr_w)), tape.param(*params.attr_b)), true};
}

std::size_t load_embeddings(const std::filesystem::path& path, const data::TokenVocab& vocab, Parameter& embedding) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open embedding file " + path.string());
  const std::size_t dim = embedding.value.shape()[1];
  std::size_t replaced = 0, lineno = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::string word;
    if (!(ss >> word)) continue;
    std::vector<double> vec;
    double v;
    while (ss >> v) vec.push_back(v);
    if (vec.size() != dim) {
      throw DimensionError("embedding file line " + std::to_string(lineno) + ": expected " + std::to_string(dim) +
                           " values, got " + std::to_string(vec.size()));
    }
    if (auto id = vocab.find(word)) {
      for (std::size_t j = 0; j < dim; ++j) embedding.value.at(*id, j) = static_cast<float>(vec[j]);
      ++replaced;
    }
  }
  return replaced;
}

}  // namespace mmkp
