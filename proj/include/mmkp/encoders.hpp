#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mmkp/autograd.hpp"
#include "mmkp/config.hpp"
#include "mmkp/data.hpp"
#include "mmkp/random.hpp"

namespace mmkp {

// Parameter initialisers. Values are rounded to float32 so that a 32-bit
// checkpoint reproduces them exactly.
Tensor xavier_uniform(Rng& rng, std::size_t rows, std::size_t cols);
Tensor uniform_tensor(Rng& rng, Shape shape, double bound);
Tensor constant_tensor(Shape shape, double value);

// GRU cell, gates laid out [update | reset | candidate]:
//   z = sigmoid(x Wxz + h Whz + bz), r = sigmoid(x Wxr + h Whr + br)
//   n = tanh(x Wxn + (r * h) Whn + bn), h' = (1 - z) * n + z * h
struct GruParams {
  Parameter* w_input = nullptr;   // [in x 3h]
  Parameter* w_gates = nullptr;   // [h x 2h], update and reset
  Parameter* w_cand = nullptr;    // [h x h]
  Parameter* bias = nullptr;      // [3h]
  std::size_t hidden = 0;

  static GruParams create(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t hidden, Rng& rng);
};

// Bound GRU weights on one tape.
struct GruVars {
  Var w_input, w_gates, w_cand, bias;
  std::size_t hidden;

  GruVars(Tape& tape, const GruParams& p);
  // x W_input + bias for every row of `inputs` at once.
  Var project_inputs(Var inputs) const;
  Var step(Var projected_input, Var h) const;
};

enum class Modality { kText, kVision, kAttribute };
const char* modality_name(Modality m);

// L x d matrix of contextual vectors; `present` is false for modalities a
// post lacks, in which case `matrix` is unbound.
struct MemoryBank {
  Modality modality = Modality::kText;
  Var matrix;
  bool present = false;

  std::size_t rows() const { return present ? matrix.shape()[0] : 0; }
  static MemoryBank absent(Modality m) { return {m, Var(), false}; }
};

struct EncoderParams {
  Parameter* embedding = nullptr;  // [|V_gen| x d_e], shared with the decoder
  struct Layer {
    GruParams forward, backward;
  };
  std::vector<Layer> layers;
  Parameter* visual_w = nullptr;  // [d_v x d]
  Parameter* visual_b = nullptr;
  Parameter* attr_w = nullptr;  // [d_e x d]
  Parameter* attr_b = nullptr;

  static EncoderParams create(ParamStore& store, const ModelConfig& cfg, std::size_t vocab_size, Rng& rng);
};

struct TextEncoding {
  MemoryBank bank;  // [l_x x d], row i = [forward_i ; backward_i] of the top layer
  Var last_state;   // final row of the bank
};

TextEncoding encode_text(Tape& tape, std::span<const std::size_t> token_ids, const EncoderParams& params);
MemoryBank project_visual(Tape& tape, const Tensor& features, const EncoderParams& params);
// Empty ids yield an absent bank.
MemoryBank project_attributes(Tape& tape, std::span<const std::size_t> attribute_ids, const EncoderParams& params);

// Overwrites embedding rows for words found in a "word v1 ... v_de" text
// file. Returns the number of rows replaced.
std::size_t load_embeddings(const std::filesystem::path& path, const data::TokenVocab& vocab, Parameter& embedding);

}  // namespace mmkp
