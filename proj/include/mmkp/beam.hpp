#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "mmkp/autograd.hpp"
#include "mmkp/model.hpp"

namespace mmkp {

// Next-token distributions over a fixed token set. States are opaque handles
// handed out by start() and advance().
class DecodeSession {
 public:
  virtual ~DecodeSession() = default;
  virtual std::size_t vocab_size() const = 0;
  virtual std::size_t start() = 0;
  virtual std::vector<double> log_probs(std::size_t state) = 0;
  virtual std::size_t advance(std::size_t state, std::size_t token) = 0;
};

struct BeamOptions {
  std::size_t beam = 10;
  std::size_t max_len = 6;  // tokens per hypothesis, end marker included
  std::size_t eos = data::kEosId;
  std::vector<std::size_t> banned = {data::kPadId, data::kBosId};
};

struct Hypothesis {
  std::vector<std::size_t> tokens;  // without the end marker
  double log_prob = 0;              // summed over tokens, end marker included
  double score = 0;                 // log_prob / length
  bool ended = false;               // reached the end marker before max_len
};

// Finished hypotheses, best score first (ties: lexicographically smaller
// token sequence first).
std::vector<Hypothesis> beam_search(DecodeSession& session, const BeamOptions& options);
Hypothesis greedy_decode(DecodeSession& session, const BeamOptions& options);

// Decoding over P_unf of one post; tokens are extended-vocabulary ids.
class ModelSession : public DecodeSession {
 public:
  ModelSession(Model& model, const EncodedPost& post, const data::Vocabulary& vocab, Aggregation agg);

  std::size_t vocab_size() const override { return fwd_.ext.size(); }
  std::size_t start() override;
  std::vector<double> log_probs(std::size_t state) override;
  std::size_t advance(std::size_t state, std::size_t token) override;

  const PostForward& forward() const { return fwd_; }

 private:
  struct State {
    std::size_t prev;
    Var hidden;
    std::optional<UnifiedStep> step;
  };
  const UnifiedStep& step_for(std::size_t state);

  Model& model_;
  std::unique_ptr<Tape> tape_;
  PostForward fwd_;
  std::vector<State> states_;
};

struct PredictionList {
  std::string id;
  std::vector<std::string> keyphrases;
  std::vector<double> scores;
};

struct PredictOptions {
  std::size_t beam = 10;
  std::size_t top_k = 10;  // list length cap
  std::size_t max_len = 6;
  Aggregation agg{0.5, 0.5};
};

// Beam hypotheses rendered as keyphrases: stem-deduplicated keeping the
// best-scoring form, with empty phrases and phrases holding <unk> or <sep>
// dropped, capped at min(beam, top_k).
PredictionList to_prediction_list(const std::string& id, const std::vector<Hypothesis>& hyps, const ExtendedVocab& ext,
                                   std::size_t cap);

PredictionList predict_post(Model& model, const data::Post& post, const data::Vocabulary& vocab,
                            const PredictOptions& options);

std::string prediction_json(const PredictionList& list);
void write_predictions(const std::filesystem::path& path, const std::vector<PredictionList>& lists);
std::vector<PredictionList> read_predictions(const std::filesystem::path& path);

}  // namespace mmkp
