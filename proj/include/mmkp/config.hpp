#pragma once

#include <cstddef>

namespace mmkp {

struct AttentionConfig {
  std::size_t heads = 4;
  std::size_t head_dim = 64;
  std::size_t text_layers = 4;       // stacks whose query is the text
  std::size_t vision_layers = 1;     // vision-query stack
  std::size_t attribute_layers = 1;  // attribute-query stack
  std::size_t ffn_dim = 0;           // 0 -> 2 * model_dim
};

struct ModelConfig {
  std::size_t model_dim = 300;  // d; each encoder direction has d/2 units
  std::size_t embed_dim = 200;  // d_e
  std::size_t encoder_layers = 2;
  std::size_t visual_dim = 512;  // d_v
  std::size_t visual_rows = 49;  // l_v expected in datasets
  AttentionConfig attention;
  std::size_t top_k = 5;           // classifier labels fed to aggregation
  std::size_t max_decode_len = 6;  // generated tokens, end marker included
  double embed_init = 0.1;         // embeddings ~ U(-embed_init, embed_init)

  std::size_t ffn_dim() const { return attention.ffn_dim ? attention.ffn_dim : 2 * model_dim; }
};

}  // namespace mmkp
