#include "mmkp/model.hpp"

#include "mmkp/errors.hpp"
#include "mmkp/ops.hpp"

namespace mmkp {

Model::Model(const ModelConfig& config, std::size_t gen_size, std::size_t cls_size, std::uint64_t seed)
    : config_(config), gen_size_(gen_size), cls_size_(cls_size) {
  if (gen_size <= data::kReservedCount) throw DimensionError("gen_vocab must extend past the reserved tokens");
  Rng rng(seed);
  encoder = EncoderParams::create(store_, config_, gen_size, rng);
  m3h = M3hParams::create(store_, config_, rng);
  classifier = ClassifierParams::create(store_, config_.model_dim, cls_size, rng);
  decoder = DecoderParams::create(store_, config_, gen_size, rng);
}

EncodedPost encode_post(const data::Post& post, const data::Vocabulary& vocab) {
  if (post.text.empty()) throw ValidationError("post " + post.id + " has no text tokens");
  EncodedPost out;
  out.text_length = post.text.size();
  out.source = data::append_ocr(post.text, post.ocr, vocab.gen);
  out.source_ids = data::encode(out.source, vocab.gen);
  out.attribute_ids = data::encode(post.attributes, vocab.gen);
  out.visual = post.visual;
  return out;
}

PostForward forward_post(Tape& tape, Model& model, const EncodedPost& post, const data::Vocabulary& vocab,
                         Aggregation agg) {
  PostForward f(vocab.gen);
  f.agg = agg;
  f.text = encode_text(tape, post.source_ids, model.encoder);
  f.vision = post.visual ? project_visual(tape, *post.visual, model.encoder) : MemoryBank::absent(Modality::kVision);
  f.attribute = project_attributes(tape, post.attribute_ids, model.encoder);
  f.fused = m3h_attention(f.text.bank, f.vision, f.attribute, model.m3h);
  f.cls = classify(f.fused.c_fuse, model.classifier, model.config().top_k);
  f.source_ext = f.ext.add_all(post.source);
  if (agg.b > 0) {
    std::vector<data::Tokens> label_tokens;
    for (std::size_t label : f.cls.top_k) label_tokens.push_back(data::split_keyphrase(vocab.cls.token(label)));
    f.beta = build_beta(f.cls.logits, f.cls.top_k, label_tokens);
    f.words_ext = f.ext.add_all(f.beta->words);
  }
  f.decoder = prepare_decoder(f.text.bank, f.fused.c_fuse, *model.encoder.embedding, model.decoder);
  return f;
}

UnifiedStep unified_step(const PostForward& fwd, Model& model, std::size_t prev_ext, Var state) {
  UnifiedStep out;
  out.step = decode_step(fwd.ext.input_id(prev_ext), state, fwd.decoder, model.decoder);
  out.p_unf = unify(out.step.p_gen, out.step.lambda, out.step.alpha, fwd.source_ext, fwd.beta ? fwd.beta->beta : Var(),
                    fwd.words_ext, fwd.agg, fwd.ext.size());
  return out;
}

TeacherForced teacher_force(const PostForward& fwd, Model& model, const data::Tokens& target) {
  TeacherForced tf;
  for (const auto& tok : target) tf.target_ext.push_back(fwd.ext.target_id(tok));
  tf.target_ext.push_back(data::kEosId);
  Var state = init_decoder(fwd.text.last_state);
  std::size_t prev = data::kBosId;
  for (std::size_t t = 0; t < tf.target_ext.size(); ++t) {
    tf.steps.push_back(unified_step(fwd, model, prev, state));
    state = tf.steps.back().step.state;
    prev = tf.target_ext[t];
  }
  return tf;
}

Var instance_loss(const PostForward& fwd, Model& model, const data::TrainingInstance& instance, double gamma) {
  auto tf = teacher_force(fwd, model, instance.target);
  std::vector<Var> dists;
  for (const auto& s : tf.steps) dists.push_back(s.p_unf);
  Var loss = ops::scale(sequence_loss(dists, tf.target_ext), gamma);
  if (instance.label != data::kUnseenLabel) {
    if (instance.label >= model.cls_size()) throw ValidationError("label id outside the classifier vocabulary");
    Var cls = ops::scale(ops::log(ops::pick(fwd.cls.probs, instance.label)), -1.0);
    loss = ops::add(cls, loss);
  }
  return loss;
}

}  // namespace mmkp
