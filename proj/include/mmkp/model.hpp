#pragma once

#include <optional>
#include <vector>

#include "mmkp/attention.hpp"
#include "mmkp/config.hpp"
#include "mmkp/data.hpp"
#include "mmkp/encoders.hpp"
#include "mmkp/predictor.hpp"

namespace mmkp {

class Model {
 public:
  Model(const ModelConfig& config, std::size_t gen_size, std::size_t cls_size, std::uint64_t seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  std::size_t gen_size() const { return gen_size_; }
  std::size_t cls_size() const { return cls_size_; }

  EncoderParams encoder;
  M3hParams m3h;
  ClassifierParams classifier;
  DecoderParams decoder;

 private:
  ModelConfig config_;
  ParamStore store_;
  std::size_t gen_size_, cls_size_;
};

// A post mapped onto vocabulary ids.
struct EncodedPost {
  data::Tokens source;                  // text, then <sep> and in-vocabulary OCR tokens
  std::vector<std::size_t> source_ids;  // encoder input, unk for out-of-vocabulary tokens
  std::vector<std::size_t> attribute_ids;
  std::optional<Tensor> visual;
  std::size_t text_length = 0;          // tokens before OCR
};

EncodedPost encode_post(const data::Post& post, const data::Vocabulary& vocab);

// Everything computed once per post: memory banks, c_fuse, classifier
// output, beta and the extended vocabulary.
struct PostForward {
  explicit PostForward(const data::TokenVocab& gen) : ext(gen) {}

  TextEncoding text;
  MemoryBank vision, attribute;
  FusedContext fused;
  ClassifierOutput cls;
  std::optional<BetaResult> beta;  // only when b > 0
  ExtendedVocab ext;
  std::vector<std::size_t> source_ext, words_ext;
  DecoderContext decoder;
  Aggregation agg;
};

PostForward forward_post(Tape& tape, Model& model, const EncodedPost& post, const data::Vocabulary& vocab,
                         Aggregation agg);

// P_unf after feeding `prev_ext` (an extended id) with decoder state `state`.
struct UnifiedStep {
  StepOutput step;
  Var p_unf;
};
UnifiedStep unified_step(const PostForward& fwd, Model& model, std::size_t prev_ext, Var state);

// Teacher-forced P_unf for target ++ <eos>, inputs <bos> ++ target.
struct TeacherForced {
  std::vector<UnifiedStep> steps;
  std::vector<std::size_t> target_ext;
};
TeacherForced teacher_force(const PostForward& fwd, Model& model, const data::Tokens& target);

// -log P_cls(label) (skipped for unseen labels) + gamma * sequence loss.
Var instance_loss(const PostForward& fwd, Model& model, const data::TrainingInstance& instance, double gamma);

}  // namespace mmkp
