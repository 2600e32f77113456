#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmkp/data.hpp"
#include "mmkp/model.hpp"

namespace mmkp {

struct TrainConfig {
  double gamma = 1.0;
  double learning_rate = 1e-3;
  double lr_decay = 0.5;
  double max_grad_norm = 5.0;
  std::size_t warmup_epochs = 2;
  std::size_t batch_size = 16;
  std::size_t max_epochs = 50;
  std::size_t patience = 3;
  std::uint64_t seed = 7;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// (1, 0) before the warm-up ends, (0.5, 0.5) after.
Aggregation aggregation_for_epoch(std::size_t epoch, std::size_t warmup_epochs);

// A training pair bound to its encoded post.
struct Example {
  const EncodedPost* post;
  data::TrainingInstance instance;
};

std::vector<EncodedPost> encode_posts(const std::vector<data::Post>& posts, const data::Vocabulary& vocab);
std::vector<Example> make_examples(const std::vector<EncodedPost>& encoded, const std::vector<data::TrainingInstance>& instances);

// Mean over the batch of -log P_cls(label) + gamma * sum_t -log P_unf(y_t).
Var joint_loss(Tape& tape, Model& model, std::span<const Example> batch, const data::Vocabulary& vocab, double gamma,
               Aggregation agg);

// Global L2 norm over all gradients; gradients are scaled uniformly down to
// `max_norm` when it is exceeded. Returns the norm before clipping.
double clip_gradients(ParamStore& params, double max_norm);

class Adam {
 public:
  static constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;

  Adam(const ParamStore& params, double learning_rate);

  // One bias-corrected update from the current gradients. Updated values
  // are rounded to float32.
  void step(ParamStore& params);

  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }
  std::size_t steps() const { return steps_; }

 private:
  std::vector<Tensor> m_, v_;
  double lr_;
  std::size_t steps_ = 0;
};

struct EpochLog {
  std::size_t epoch;
  double train_loss;
  double val_loss;
  double lr;
  double a, b;
};

std::string to_json_line(const EpochLog& log);

struct FitResult {
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  double best_val_loss = 0;
  bool stopped_early = false;
  bool stopped_by_caller = false;
};

// Shuffled mini-batch training with the warm-up schedule, plateau learning
// rate decay and early stopping. The best-validation parameters are left in
// `model` on return. `on_epoch` sees each log entry as it is produced.
// `stop_when` runs after each epoch on the current parameters; when it
// returns true training ends and those parameters are kept as they are.
FitResult fit(Model& model, std::span<const Example> train, std::span<const Example> val, const data::Vocabulary& vocab,
              const TrainConfig& config, const std::function<void(const EpochLog&)>& on_epoch = {},
              const std::function<bool(const EpochLog&)>& stop_when = {});

// Mean joint loss over `examples` without updating anything.
double evaluate_loss(Model& model, std::span<const Example> examples, const data::Vocabulary& vocab, double gamma,
                     Aggregation agg);

// Checkpoint: "MMKC", u32 version, u64 gen hash, u64 cls hash, u32 record
// count, then per parameter: u32 name length, name, u32 rank, u32 extents,
// float32 values. Integers and floats are little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params, const data::Vocabulary& vocab);
// Fails when the vocabulary hashes, parameter names or shapes differ.
void load_checkpoint(const std::filesystem::path& path, ParamStore& params, const data::Vocabulary& vocab);

}  // namespace mmkp
