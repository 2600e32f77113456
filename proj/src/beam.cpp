#include "mmkp/beam.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <tuple>

#include "json.hpp"

#include "mmkp/errors.hpp"
#include "mmkp/eval.hpp"

namespace mmkp {

namespace {

void check_options(const DecodeSession& session, const BeamOptions& options) {
  if (options.beam == 0) throw ContractError("beam size must be positive");
  if (options.max_len == 0) throw ContractError("max_len must be positive");
  if (options.eos >= session.vocab_size()) throw ContractError("end marker outside the vocabulary");
}

bool banned(const BeamOptions& options, std::size_t token) {
  return std::find(options.banned.begin(), options.banned.end(), token) != options.banned.end();
}

Hypothesis finish(std::vector<std::size_t> tokens, double log_prob, bool ended) {
  const double len = static_cast<double>(tokens.size() + (ended ? 1 : 0));
  return {std::move(tokens), log_prob, log_prob / len, ended};
}

bool better(const Hypothesis& x, const Hypothesis& y) {
  if (x.score != y.score) return x.score > y.score;
  return x.tokens < y.tokens;
}

}  // namespace

std::vector<Hypothesis> beam_search(DecodeSession& session, const BeamOptions& options) {
  check_options(session, options);
  struct Live {
    std::vector<std::size_t> tokens;
    double log_prob;
    std::size_t state;
  };
  struct Candidate {
    std::size_t parent, token;
    double log_prob;
  };
  std::vector<Live> live{{{}, 0.0, session.start()}};
  std::vector<Hypothesis> finished;

  while (!live.empty()) {
    std::vector<Candidate> cands;
    for (std::size_t i = 0; i < live.size(); ++i) {
      const auto lp = session.log_probs(live[i].state);
      for (std::size_t t = 0; t < lp.size(); ++t) {
        if (banned(options, t) || !std::isfinite(lp[t])) continue;
        cands.push_back({i, t, live[i].log_prob + lp[t]});
      }
    }
    const std::size_t keep = std::min(options.beam, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      [](const Candidate& x, const Candidate& y) {
                        return std::tie(y.log_prob, x.parent, x.token) < std::tie(x.log_prob, y.parent, y.token);
                      });
    std::vector<Live> next;
    for (std::size_t c = 0; c < keep; ++c) {
      const auto& cand = cands[c];
      const auto& parent = live[cand.parent];
      if (cand.token == options.eos) {
        finished.push_back(finish(parent.tokens, cand.log_prob, true));
        continue;
      }
      auto tokens = parent.tokens;
      tokens.push_back(cand.token);
      if (tokens.size() == options.max_len) {
        finished.push_back(finish(std::move(tokens), cand.log_prob, false));
      } else {
        next.push_back({std::move(tokens), cand.log_prob, session.advance(parent.state, cand.token)});
      }
    }
    live = std::move(next);
  }
  std::sort(finished.begin(), finished.end(), better);
  return finished;
}

Hypothesis greedy_decode(DecodeSession& session, const BeamOptions& options) {
  check_options(session, options);
  std::vector<std::size_t> tokens;
  double log_prob = 0;
  std::size_t state = session.start();
  while (true) {
    const auto lp = session.log_probs(state);
    std::size_t best = lp.size();
    for (std::size_t t = 0; t < lp.size(); ++t) {
      if (banned(options, t) || !std::isfinite(lp[t])) continue;
      if (best == lp.size() || lp[t] > lp[best]) best = t;
    }
    if (best == lp.size()) throw ContractError("no token with nonzero probability");
    log_prob += lp[best];
    if (best == options.eos) return finish(std::move(tokens), log_prob, true);
    tokens.push_back(best);
    if (tokens.size() == options.max_len) return finish(std::move(tokens), log_prob, false);
    state = session.advance(state, best);
  }
}

ModelSession::ModelSession(Model& model, const EncodedPost& post, const data::Vocabulary& vocab, Aggregation agg)
    : model_(model), tape_(std::make_unique<Tape>()), fwd_(forward_post(*tape_, model, post, vocab, agg)) {}

std::size_t ModelSession::start() {
  states_.push_back({data::kBosId, init_decoder(fwd_.text.last_state), std::nullopt});
  return states_.size() - 1;
}

const UnifiedStep& ModelSession::step_for(std::size_t state) {
  auto& s = states_.at(state);
  if (!s.step) s.step = unified_step(fwd_, model_, s.prev, s.hidden);
  return *s.step;
}

std::vector<double> ModelSession::log_probs(std::size_t state) {
  const auto p = step_for(state).p_unf.value().values();
  std::vector<double> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = std::log(p[i]);
  return out;
}

std::size_t ModelSession::advance(std::size_t state, std::size_t token) {
  if (token >= vocab_size()) throw ContractError("token outside the extended vocabulary");
  Var hidden = step_for(state).step.state;
  states_.push_back({token, hidden, std::nullopt});
  return states_.size() - 1;
}

PredictionList to_prediction_list(const std::string& id, const std::vector<Hypothesis>& hyps, const ExtendedVocab& ext,
                                  std::size_t cap) {
  PredictionList out{id, {}, {}};
  std::set<data::Tokens> seen;
  for (const auto& h : hyps) {
    if (out.keyphrases.size() >= cap) break;
    if (h.tokens.empty()) continue;
    data::Tokens words;
    bool usable = true;
    for (std::size_t t : h.tokens) {
      if (t == data::kUnkId || t == data::kSepId) usable = false;
      words.push_back(ext.token(t));
    }
    if (!usable || !seen.insert(eval::stem_tokens(words)).second) continue;
    out.keyphrases.push_back(data::join_tokens(words));
    out.scores.push_back(h.score);
  }
  return out;
}

PredictionList predict_post(Model& model, const data::Post& post, const data::Vocabulary& vocab,
                            const PredictOptions& options) {
  const EncodedPost encoded = encode_post(post, vocab);
  ModelSession session(model, encoded, vocab, options.agg);
  BeamOptions beam;
  beam.beam = options.beam;
  beam.max_len = options.max_len;
  return to_prediction_list(post.id, beam_search(session, beam), session.forward().ext,
                            std::min(options.beam, options.top_k));
}

std::string prediction_json(const PredictionList& list) {
  nlohmann::ordered_json j;
  j["id"] = list.id;
  j["keyphrases"] = list.keyphrases;
  j["scores"] = list.scores;
  return j.dump();
}

void write_predictions(const std::filesystem::path& path, const std::vector<PredictionList>& lists) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write predictions " + path.string());
  for (const auto& l : lists) out << prediction_json(l) << '\n';
}

std::vector<PredictionList> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open predictions " + path.string());
  std::vector<PredictionList> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      PredictionList p;
      p.id = j.at("id").get<std::string>();
      p.keyphrases = j.at("keyphrases").get<std::vector<std::string>>();
      p.scores = j.value("scores", std::vector<double>{});
      out.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace mmkp
