#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "mmkp/autograd.hpp"
#include "mmkp/config.hpp"
#include "mmkp/encoders.hpp"
#include "mmkp/random.hpp"

namespace mmkp {

struct ScaledDotResult {
  Var output;   // [n_q x d_v]
  Var weights;  // [n_q x n_k]
};

// softmax(Q K^T / sqrt(d_K)) V
ScaledDotResult scaled_dot_attention(Var query, Var key, Var value);

struct MultiHeadParams {
  // Per-head projections packed side by side: head h owns columns
  // [h * head_dim, (h + 1) * head_dim).
  Parameter* w_query = nullptr;   // [d x H*d_H]
  Parameter* w_key = nullptr;     // [d x H*d_H]
  Parameter* w_value = nullptr;   // [d x H*d_H]
  Parameter* w_output = nullptr;  // [H*d_H x d]
  std::size_t heads = 0;
  std::size_t head_dim = 0;

  static MultiHeadParams create(ParamStore& store, const std::string& prefix, std::size_t dim, std::size_t heads,
                                std::size_t head_dim, Rng& rng);
};

struct MultiHeadResult {
  Var output;                       // [n_q x d]
  std::vector<Var> head_weights;    // H entries of [n_q x n_k]
};

MultiHeadResult multi_head(Var query, Var key, Var value, const MultiHeadParams& params);

struct CoAttentionLayerParams {
  MultiHeadParams attention;
  Parameter *norm1_gain = nullptr, *norm1_bias = nullptr;
  Parameter *ffn_w1 = nullptr, *ffn_b1 = nullptr;  // [d x ffn], [ffn]
  Parameter *ffn_w2 = nullptr, *ffn_b2 = nullptr;  // [ffn x d], [d]
  Parameter *norm2_gain = nullptr, *norm2_bias = nullptr;
};

// The four pairwise co-attention directions, named query -> key/value.
enum class Direction { kTextToVision, kTextToAttribute, kVisionToText, kAttributeToText };
inline constexpr std::array<Direction, 4> kDirections = {Direction::kTextToVision, Direction::kTextToAttribute,
                                                         Direction::kVisionToText, Direction::kAttributeToText};
const char* direction_name(Direction d);
Modality query_modality(Direction d);
Modality memory_modality(Direction d);

struct StackParams {
  Direction direction = Direction::kTextToVision;
  std::vector<CoAttentionLayerParams> layers;

  static StackParams create(ParamStore& store, Direction direction, std::size_t layers, const ModelConfig& cfg, Rng& rng);
};

// Attention weights of one head in one layer over the memory-bank rows.
struct WeightRecord {
  Direction direction;
  std::size_t layer;
  std::size_t head;
  std::vector<double> weights;
};

struct StackResult {
  Var query;  // refined query vector [d]
  std::vector<WeightRecord> records;
};

// Pools the query bank (max for text, average otherwise), then applies each
// layer: q <- LN(q + MultiHead(q, M, M)); q <- LN(q + FFN(q)). Returns
// std::nullopt when either bank is absent.
std::optional<StackResult> co_attention_stack(const MemoryBank& query_bank, const MemoryBank& memory,
                                              const StackParams& params);

Var pool_query(const MemoryBank& bank);

struct FusionParams {
  Parameter* weight = nullptr;  // [d x d]
  Parameter* bias = nullptr;    // [d]

  static FusionParams create(ParamStore& store, std::size_t dim, Rng& rng);
};

// c_fuse = (sum of present stack outputs) W_f + b_f. When no stack is
// present `fallback` (the pooled text query) stands in for the sum.
Var fuse(std::span<const std::optional<Var>> stack_outputs, Var fallback, const FusionParams& params);

struct M3hParams {
  std::array<StackParams, 4> stacks;  // indexed like kDirections
  FusionParams fusion;

  static M3hParams create(ParamStore& store, const ModelConfig& cfg, Rng& rng);
};

struct FusedContext {
  Var c_fuse;  // [d]
  std::vector<WeightRecord> records;
};

FusedContext m3h_attention(const MemoryBank& text, const MemoryBank& vision, const MemoryBank& attribute,
                           const M3hParams& params);

}  // namespace mmkp
