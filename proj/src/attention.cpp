#include "mmkp/attention.hpp"

#include <algorithm>
#include <cmath>

#include "mmkp/errors.hpp"
#include "mmkp/ops.hpp"

namespace mmkp {

ScaledDotResult scaled_dot_attention(Var query, Var key, Var value) {
  const Shape& qs = query.shape();
  const Shape& ks = key.shape();
  const Shape& vs = value.shape();
  if (qs.size() != 2 || ks.size() != 2 || vs.size() != 2) throw DimensionError("scaled_dot_attention expects matrices");
  if (ks[0] == 0) throw EmptyBankError("attention over an empty memory bank");
  if (qs[1] != ks[1] || ks[0] != vs[0]) {
    throw DimensionError("scaled_dot_attention: Q " + shape_str(qs) + ", K " + shape_str(ks) + ", V " + shape_str(vs));
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(qs[1]));
  Var scores = ops::scale(ops::matmul(query, ops::transpose(key)), scale);
  Var weights = ops::softmax(scores, -1);
  return {ops::matmul(weights, value), weights};
}

MultiHeadParams MultiHeadParams::create(ParamStore& store, const std::string& prefix, std::size_t dim, std::size_t heads,
                                        std::size_t head_dim, Rng& rng) {
  if (heads == 0 || head_dim == 0) throw DimensionError("multi-head attention needs heads >= 1 and head_dim >= 1");
  MultiHeadParams p;
  p.heads = heads;
  p.head_dim = head_dim;
  const std::size_t width = heads * head_dim;
  p.w_query = &store.add(prefix + ".w_query", xavier_uniform(rng, dim, width));
  p.w_key = &store.add(prefix + ".w_key", xavier_uniform(rng, dim, width));
  p.w_value = &store.add(prefix + ".w_value", xavier_uniform(rng, dim, width));
  p.w_output = &store.add(prefix + ".w_output", xavier_uniform(rng, width, dim));
  return p;
}

MultiHeadResult multi_head(Var query, Var key, Var value, const MultiHeadParams& params) {
  Tape& tape = *query.tape();
  const std::size_t width = params.heads * params.head_dim;
  const Shape& wq = params.w_query->value.shape();
  if (wq[1] != width || params.w_output->value.shape()[0] != width) {
    throw DimensionError("multi-head parameters do not match heads x head_dim = " + std::to_string(width));
  }
  Var q = ops::matmul(query, tape.param(*params.w_query));
  Var k = ops::matmul(key, tape.param(*params.w_key));
  Var v = ops::matmul(value, tape.param(*params.w_value));
  MultiHeadResult result;
  std::vector<Var> heads;
  for (std::size_t h = 0; h < params.heads; ++h) {
    const std::size_t off = h * params.head_dim;
    auto r = scaled_dot_attention(ops::slice_cols(q, off, params.head_dim), ops::slice_cols(k, off, params.head_dim),
                                  ops::slice_cols(v, off, params.head_dim));
    heads.push_back(r.output);
    result.head_weights.push_back(r.weights);
  }
  Var joined = heads.size() == 1 ? heads[0] : ops::concat(heads);
  result.output = ops::matmul(joined, tape.param(*params.w_output));
  return result;
}

const char* direction_name(Direction d) {
  switch (d) {
    case Direction::kTextToVision: return "text->vision";
    case Direction::kTextToAttribute: return "text->attribute";
    case Direction::kVisionToText: return "vision->text";
    case Direction::kAttributeToText: return "attribute->text";
  }
  return "?";
}

Modality query_modality(Direction d) {
  switch (d) {
    case Direction::kTextToVision:
    case Direction::kTextToAttribute: return Modality::kText;
    case Direction::kVisionToText: return Modality::kVision;
    case Direction::kAttributeToText: return Modality::kAttribute;
  }
  return Modality::kText;
}

Modality memory_modality(Direction d) {
  switch (d) {
    case Direction::kTextToVision: return Modality::kVision;
    case Direction::kTextToAttribute: return Modality::kAttribute;
    case Direction::kVisionToText:
    case Direction::kAttributeToText: return Modality::kText;
  }
  return Modality::kText;
}

StackParams StackParams::create(ParamStore& store, Direction direction, std::size_t layers, const ModelConfig& cfg, Rng& rng) {
  static const char* kKeys[] = {"t2v", "t2a", "v2t", "a2t"};
  const std::size_t d = cfg.model_dim, ffn = cfg.ffn_dim();
  StackParams p;
  p.direction = direction;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::string prefix = std::string("m3h.") + kKeys[static_cast<int>(direction)] + ".layer" + std::to_string(l);
    CoAttentionLayerParams layer;
    layer.attention = MultiHeadParams::create(store, prefix + ".mha", d, cfg.attention.heads, cfg.attention.head_dim, rng);
    layer.norm1_gain = &store.add(prefix + ".norm1.gain", constant_tensor({d}, 1.0));
    layer.norm1_bias = &store.add(prefix + ".norm1.bias", Tensor({d}));
    layer.ffn_w1 = &store.add(prefix + ".ffn.w1", xavier_uniform(rng, d, ffn));
    layer.ffn_b1 = &store.add(prefix + ".ffn.b1", Tensor({ffn}));
    layer.ffn_w2 = &store.add(prefix + ".ffn.w2", xavier_uniform(rng, ffn, d));
    layer.ffn_b2 = &store.add(prefix + ".ffn.b2", Tensor({d}));
    layer.norm2_gain = &store.add(prefix + ".norm2.gain", constant_tensor({d}, 1.0));
    layer.norm2_bias = &store.add(prefix + ".norm2.bias", Tensor({d}));
    p.layers.push_back(layer);
  }
  return p;
}

Var pool_query(const MemoryBank& bank) {
  if (!bank.present) throw EmptyBankError(std::string("cannot pool absent ") + modality_name(bank.modality) + " bank");
  return ops::pool(bank.matrix, bank.modality == Modality::kText ? ops::PoolMode::kMax : ops::PoolMode::kAvg);
}

std::optional<StackResult> co_attention_stack(const MemoryBank& query_bank, const MemoryBank& memory,
                                              const StackParams& params) {
  if (!query_bank.present || !memory.present) return std::nullopt;
  Tape& tape = *query_bank.matrix.tape();
  StackResult result;
  Var q = pool_query(query_bank);
  const std::size_t d = q.shape()[0];
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    auto mh = multi_head(ops::reshape(q, {1, d}), memory.matrix, memory.matrix, layer.attention);
    for (std::size_t h = 0; h < mh.head_weights.size(); ++h) {
      auto w = mh.head_weights[h].value().values();
      result.records.push_back({params.direction, l, h, std::vector<double>(w.begin(), w.end())});
    }
    q = ops::layer_norm(ops::add(q, ops::reshape(mh.output, {d})), tape.param(*layer.norm1_gain),
                        tape.param(*layer.norm1_bias));
    Var hidden = ops::relu(ops::add(ops::matmul(q, tape.param(*layer.ffn_w1)), tape.param(*layer.ffn_b1)));
    Var ffn = ops::add(ops::matmul(hidden, tape.param(*layer.ffn_w2)), tape.param(*layer.ffn_b2));
    q = ops::layer_norm(ops::add(q, ffn), tape.param(*layer.norm2_gain), tape.param(*layer.norm2_bias));
  }
  result.query = q;
  return result;
}

FusionParams FusionParams::create(ParamStore& store, std::size_t dim, Rng& rng) {
  return {&store.add("m3h.fusion.w", xavier_uniform(rng, dim, dim)), &store.add("m3h.fusion.b", Tensor({dim}))};
}

Var fuse(std::span<const std::optional<Var>> stack_outputs, Var fallback, const FusionParams& params) {
  Tape& tape = *fallback.tape();
  std::optional<Var> total;
  for (const auto& s : stack_outputs) {
    if (!s) continue;
    total = total ? ops::add(*total, *s) : *s;
  }
  Var summed = total ? *total : fallback;
  return ops::add(ops::matmul(summed, tape.param(*params.weight)), tape.param(*params.bias));
}

M3hParams M3hParams::create(ParamStore& store, const ModelConfig& cfg, Rng& rng) {
  M3hParams p;
  for (std::size_t i = 0; i < kDirections.size(); ++i) {
    const Direction dir = kDirections[i];
    std::size_t layers = cfg.attention.text_layers;
    if (dir == Direction::kVisionToText) layers = cfg.attention.vision_layers;
    if (dir == Direction::kAttributeToText) layers = cfg.attention.attribute_layers;
    p.stacks[i] = StackParams::create(store, dir, layers, cfg, rng);
  }
  p.fusion = FusionParams::create(store, cfg.model_dim, rng);
  return p;
}

FusedContext m3h_attention(const MemoryBank& text, const MemoryBank& vision, const MemoryBank& attribute,
                           const M3hParams& params) {
  if (!text.present) throw EmptyBankError("M3H attention needs a text memory bank");
  auto bank_for = [&](Modality m) -> const MemoryBank& {
    switch (m) {
      case Modality::kVision: return vision;
      case Modality::kAttribute: return attribute;
      default: return text;
    }
  };
  FusedContext ctx;
  std::array<std::optional<Var>, 4> outputs;
  for (std::size_t i = 0; i < kDirections.size(); ++i) {
    const Direction dir = kDirections[i];
    auto r = co_attention_stack(bank_for(query_modality(dir)), bank_for(memory_modality(dir)), params.stacks[i]);
    if (!r) continue;
    outputs[i] = r->query;
    ctx.records.insert(ctx.records.end(), r->records.begin(), r->records.end());
  }
  auto first = std::find_if(outputs.begin(), outputs.end(), [](const auto& o) { return o.has_value(); });
  Var fallback = first != outputs.end() ? **first : pool_query(text);
  ctx.c_fuse = fuse(outputs, fallback, params.fusion);
  return ctx;
}

}  // namespace mmkp
