#include "commands.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <memory>

#include "CLI11.hpp"
#include "json.hpp"

#include "cli_error.hpp"
#include "mmkp/beam.hpp"
#include "mmkp/errors.hpp"
#include "mmkp/eval.hpp"
#include "mmkp/trainer.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;

namespace mmkp::cli {

namespace {

constexpr const char* kCheckpointFile = "model.ckpt";
constexpr const char* kConfigFile = "config.yaml";
constexpr const char* kVocabFile = "vocab.json";
constexpr const char* kEpochLogFile = "epochs.jsonl";
constexpr const char* kCountsFile = "keyphrase_counts.json";

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text)) throw std::runtime_error("cannot write " + path.string());
}

data::LoadOptions load_options(const RunConfig& cfg) {
  data::LoadOptions o;
  o.visual_rows = cfg.model.visual_rows;
  o.visual_dim = cfg.model.visual_dim;
  o.normalize = cfg.data.normalize;
  return o;
}

std::vector<data::Post> load_nonempty(const fs::path& path, const data::LoadOptions& options) {
  auto posts = data::load_dataset(path, options);
  if (posts.empty()) throw ValidationError(path.string() + " holds no posts");
  return posts;
}

RunConfig resolve(const std::string& config_path, const std::vector<std::string>& overrides) {
  RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
  for (const auto& o : overrides) apply_override(cfg, o);
  return cfg;
}

// A trained run: the artifacts `train` leaves next to the checkpoint.
struct TrainedRun {
  RunConfig config;
  data::Vocabulary vocab;
  std::unique_ptr<Model> model;
  std::map<std::string, std::size_t> counts;
};

// `where` is a checkpoint file or the run directory holding model.ckpt.
TrainedRun load_run(const fs::path& where, const std::vector<std::string>& overrides) {
  const fs::path checkpoint = fs::is_directory(where) ? where / kCheckpointFile : where;
  const fs::path dir = checkpoint.parent_path().empty() ? fs::path(".") : checkpoint.parent_path();
  if (!fs::exists(checkpoint)) throw std::runtime_error("checkpoint " + checkpoint.string() + " does not exist");
  TrainedRun run;
  run.config = resolve((dir / kConfigFile).string(), overrides);
  run.vocab = data::load_vocab(dir / kVocabFile);
  run.model = std::make_unique<Model>(run.config.model, run.vocab.gen.size(), run.vocab.cls.size(), run.config.seed);
  load_checkpoint(checkpoint, run.model->params(), run.vocab);
  if (fs::exists(dir / kCountsFile)) {
    std::ifstream in(dir / kCountsFile);
    run.counts = nlohmann::json::parse(in).get<std::map<std::string, std::size_t>>();
  }
  return run;
}

PredictOptions predict_options(const RunConfig& cfg, std::size_t beam, std::size_t top_k) {
  PredictOptions o;
  o.beam = beam ? beam : cfg.inference.beam;
  o.top_k = top_k ? top_k : cfg.inference.top_k;
  o.max_len = cfg.model.max_decode_len;
  o.agg = {cfg.inference.a, cfg.inference.b};
  return o;
}

// --- train ---------------------------------------------------------------

struct TrainArgs {
  std::string config, train, val, out;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err) {
  RunConfig cfg = resolve(args.config, args.overrides);
  if (!args.train.empty()) cfg.data.train = args.train;
  if (!args.val.empty()) cfg.data.val = args.val;
  if (args.seed) cfg.seed = *args.seed;
  if (cfg.data.train.empty()) throw ConfigError("no training data: pass --train or set data.train");
  cfg.train.seed = cfg.seed;

  const auto lo = load_options(cfg);
  auto train_posts = load_nonempty(cfg.data.train, lo);
  if (cfg.data.min_keyphrase_count > 1) {
    train_posts = data::filter_rare_keyphrases(train_posts, cfg.data.min_keyphrase_count);
    if (train_posts.empty()) throw ValidationError("no training posts left after the keyphrase frequency filter");
  }
  const auto vocab = data::build_vocab(train_posts, {cfg.data.gen_cap, cfg.data.min_count});
  Model model(cfg.model, vocab.gen.size(), vocab.cls.size(), cfg.seed);
  if (!cfg.data.embeddings.empty()) {
    const auto n = load_embeddings(cfg.data.embeddings, vocab.gen, model.params().get("embedding"));
    err << "loaded " << n << " pretrained embedding rows\n";
  }
  const auto encoded = encode_posts(train_posts, vocab);
  const auto train = make_examples(encoded, data::replicate_instances(train_posts, vocab, true));

  std::vector<data::Post> val_posts;
  std::vector<EncodedPost> val_encoded;
  std::vector<Example> val;
  if (!cfg.data.val.empty()) {
    val_posts = load_nonempty(cfg.data.val, lo);
    val_encoded = encode_posts(val_posts, vocab);
    val = make_examples(val_encoded, data::replicate_instances(val_posts, vocab, false));
  }

  const fs::path dir = args.out;
  fs::create_directories(dir);
  write_text(dir / kConfigFile, dump_config(cfg));
  data::save_vocab(dir / kVocabFile, vocab);
  write_text(dir / kCountsFile, nlohmann::ordered_json(eval::keyphrase_counts(train_posts)).dump(1) + "\n");

  std::ofstream log(dir / kEpochLogFile, std::ios::binary);
  if (!log) throw std::runtime_error("cannot write " + (dir / kEpochLogFile).string());
  err << "train: " << train_posts.size() << " posts, " << train.size() << " instances, |gen| " << vocab.gen.size()
      << ", |cls| " << vocab.cls.size() << ", " << model.params().scalar_count() << " parameters\n";
  const auto result = fit(model, train, val, vocab, cfg.train, [&](const EpochLog& e) {
    log << to_json_line(e) << '\n';
    log.flush();
    err << to_json_line(e) << '\n';
  });
  save_checkpoint(dir / kCheckpointFile, model.params(), vocab);

  nlohmann::ordered_json summary;
  summary["checkpoint"] = (dir / kCheckpointFile).string();
  summary["epochs"] = result.log.size();
  summary["best_epoch"] = result.best_epoch;
  summary["best_val_loss"] = result.best_val_loss;
  summary["stopped_early"] = result.stopped_early;
  out << summary.dump() << '\n';
  return 0;
}

// --- eval ----------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, predictions, data, train, out;
  std::vector<std::string> overrides;
  std::size_t beam = 0, top_k = 0;
};

int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err) {
  if (args.checkpoint.empty() == args.predictions.empty()) {
    throw ConfigError("eval needs exactly one of --checkpoint and --predictions");
  }
  std::optional<TrainedRun> run;
  data::LoadOptions lo;
  if (!args.checkpoint.empty()) {
    run = load_run(args.checkpoint, args.overrides);
    lo = load_options(run->config);
  }
  const auto posts = load_nonempty(args.data, lo);

  std::map<std::string, std::size_t> counts = run ? run->counts : std::map<std::string, std::size_t>{};
  if (!args.train.empty()) counts = eval::keyphrase_counts(data::load_dataset(args.train, lo));
  if (counts.empty()) err << "warning: no training keyphrase counts; every keyphrase falls in the lowest bucket\n";

  std::vector<eval::PostResult> results;
  if (run) {
    const auto opts = predict_options(run->config, args.beam, args.top_k);
    for (const auto& p : posts) {
      if (p.keyphrases.empty()) continue;
      results.push_back({p.id, p.text, p.keyphrases, predict_post(*run->model, p, run->vocab, opts).keyphrases});
    }
  } else {
    std::map<std::string, std::vector<std::string>> by_id;
    for (auto& l : read_predictions(args.predictions)) by_id[l.id] = std::move(l.keyphrases);
    for (const auto& p : posts) {
      auto it = by_id.find(p.id);
      if (it == by_id.end()) throw ValidationError("no predictions for post \"" + p.id + "\"");
      results.push_back({p.id, p.text, p.keyphrases, it->second});
    }
  }
  const auto excluded = static_cast<std::size_t>(
      std::count_if(posts.begin(), posts.end(), [](const data::Post& p) { return p.keyphrases.empty(); }));
  if (excluded) err << "warning: " << excluded << " posts without keyphrases excluded\n";

  auto report = eval::evaluate(results, counts);
  report.excluded_posts = excluded;
  if (report.posts == 0) throw ValidationError(args.data + " has no posts with keyphrases");

  auto j = nlohmann::ordered_json::parse(eval::report_json(report));
  if (run) j["config"] = dump_config(run->config);
  const fs::path report_path = args.out.empty() ? fs::path("eval_report.json") : fs::path(args.out);
  write_text(report_path, j.dump(2) + "\n");
  out << eval::report_table(report);
  return 0;
}

// --- predict -------------------------------------------------------------

struct PredictArgs {
  std::string checkpoint, input, out;
  std::vector<std::string> overrides;
  std::size_t beam = 0, top_k = 0;
};

int cmd_predict(const PredictArgs& args, std::ostream& out, std::ostream&) {
  auto run = load_run(args.checkpoint, args.overrides);
  const auto posts = load_nonempty(args.input, load_options(run.config));
  const auto opts = predict_options(run.config, args.beam, args.top_k);
  run.config.inference.beam = opts.beam;
  run.config.inference.top_k = opts.top_k;
  std::vector<PredictionList> lists;
  for (const auto& p : posts) lists.push_back(predict_post(*run.model, p, run.vocab, opts));
  const fs::path path = args.out.empty() ? fs::path("predictions.jsonl") : fs::path(args.out);
  write_predictions(path, lists);
  write_text(fs::path(path.string() + ".config.yaml"), dump_config(run.config));
  out << "wrote " << lists.size() << " prediction lists to " << path.string() << '\n';
  return 0;
}

// --- export-attn ---------------------------------------------------------

struct ExportArgs {
  std::string checkpoint, input, out;
  std::vector<std::string> overrides;
};

int cmd_export_attn(const ExportArgs& args, std::ostream& out, std::ostream&) {
  auto run = load_run(args.checkpoint, args.overrides);
  const auto posts = load_nonempty(args.input, load_options(run.config));
  const fs::path path = args.out.empty() ? fs::path("attention.jsonl") : fs::path(args.out);
  std::ofstream file(path, std::ios::binary);
  if (!file) throw std::runtime_error("cannot write " + path.string());
  const Aggregation agg{run.config.inference.a, run.config.inference.b};
  for (const auto& p : posts) {
    const auto encoded = encode_post(p, run.vocab);
    Tape tape;
    const auto fwd = forward_post(tape, *run.model, encoded, run.vocab, agg);
    nlohmann::ordered_json j;
    j["id"] = p.id;
    j["stacks"] = nlohmann::ordered_json::array();
    for (const auto& r : fwd.fused.records) {
      nlohmann::ordered_json rec;
      rec["direction"] = direction_name(r.direction);
      rec["layer"] = r.layer;
      rec["head"] = r.head;
      rec["weights"] = r.weights;
      j["stacks"].push_back(std::move(rec));
    }
    file << j.dump() << '\n';
  }
  write_text(fs::path(path.string() + ".config.yaml"), dump_config(run.config));
  out << "wrote attention weights for " << posts.size() << " posts to " << path.string() << '\n';
  return 0;
}

// --- synth ---------------------------------------------------------------

int cmd_synth(const data::SynthOptions& options, const std::string& path, std::ostream& out) {
  const auto posts = data::synth_corpus(options);
  data::save_dataset(path, posts);
  out << "wrote " << posts.size() << " posts to " << path << '\n';
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multimodal keyphrase generation for social media posts"};
  app.name("mmkp");
  app.require_subcommand(1);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train a model and write checkpoint, vocabulary, config and epoch log");
  t->add_option("--config", train.config, "YAML configuration")->check(CLI::ExistingFile);
  t->add_option("--train", train.train, "training dataset (JSONL)");
  t->add_option("--val", train.val, "validation dataset (JSONL)");
  t->add_option("--out", train.out, "output directory")->required();
  t->add_option("--seed", train.seed, "random seed");
  t->add_option("--set", train.overrides, "override a config value, section.key=value");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Score predictions against gold keyphrases");
  e->add_option("--checkpoint", ev.checkpoint, "checkpoint to decode with");
  e->add_option("--predictions", ev.predictions, "precomputed predictions (JSONL) instead of a checkpoint");
  e->add_option("--data", ev.data, "dataset with gold keyphrases")->required();
  e->add_option("--train", ev.train, "training dataset for keyphrase frequency buckets");
  e->add_option("--out", ev.out, "report path (default eval_report.json)");
  e->add_option("--beam", ev.beam, "beam size (default from config, 10)");
  e->add_option("--topk", ev.top_k, "keyphrases kept per post");
  e->add_option("--set", ev.overrides, "override a config value, section.key=value");

  PredictArgs pr;
  auto* p = app.add_subcommand("predict", "Write ranked keyphrases for each post");
  p->add_option("--checkpoint", pr.checkpoint, "checkpoint")->required();
  p->add_option("--input", pr.input, "posts (JSONL)")->required();
  p->add_option("--out", pr.out, "predictions path (default predictions.jsonl)");
  p->add_option("--beam", pr.beam, "beam size (default from config, 10)");
  p->add_option("--topk", pr.top_k, "keyphrases kept per post");
  p->add_option("--set", pr.overrides, "override a config value, section.key=value");

  ExportArgs ex;
  auto* x = app.add_subcommand("export-attn", "Dump co-attention weights per post");
  x->add_option("--checkpoint", ex.checkpoint, "checkpoint")->required();
  x->add_option("--input", ex.input, "posts (JSONL)")->required();
  x->add_option("--out", ex.out, "output path (default attention.jsonl)");
  x->add_option("--set", ex.overrides, "override a config value, section.key=value");

  data::SynthOptions so;
  std::string synth_out;
  auto* s = app.add_subcommand("synth", "Generate the synthetic fixture corpus");
  s->add_option("--n", so.n_posts, "number of posts")->check(CLI::PositiveNumber);
  s->add_option("--vocab", so.vocab_size, "filler vocabulary size");
  s->add_option("--seed", so.seed, "random seed");
  s->add_option("--visual-rows", so.visual_rows, "visual feature rows");
  s->add_option("--visual-dim", so.visual_dim, "visual feature width");
  s->add_option("--out", synth_out, "dataset path")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& pe) {
    return app.exit(pe, out, err);
  }

  try {
    if (*t) return cmd_train(train, out, err);
    if (*e) return cmd_eval(ev, out, err);
    if (*p) return cmd_predict(pr, out, err);
    if (*x) return cmd_export_attn(ex, out, err);
    if (*s) return cmd_synth(so, synth_out, out);
  } catch (const std::exception& ex_) {
    err << "mmkp: error: " << ex_.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace mmkp::cli
