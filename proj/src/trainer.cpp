#include "mmkp/trainer.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

#include "json.hpp"

#include "mmkp/errors.hpp"
#include "mmkp/ops.hpp"

namespace mmkp {

Aggregation aggregation_for_epoch(std::size_t epoch, std::size_t warmup_epochs) {
  return epoch < warmup_epochs ? Aggregation{1.0, 0.0} : Aggregation{0.5, 0.5};
}

std::vector<EncodedPost> encode_posts(const std::vector<data::Post>& posts, const data::Vocabulary& vocab) {
  std::vector<EncodedPost> out;
  out.reserve(posts.size());
  for (const auto& p : posts) out.push_back(encode_post(p, vocab));
  return out;
}

std::vector<Example> make_examples(const std::vector<EncodedPost>& encoded,
                                   const std::vector<data::TrainingInstance>& instances) {
  std::vector<Example> out;
  out.reserve(instances.size());
  for (const auto& inst : instances) out.push_back({&encoded.at(inst.post_index), inst});
  return out;
}

Var joint_loss(Tape& tape, Model& model, std::span<const Example> batch, const data::Vocabulary& vocab, double gamma,
               Aggregation agg) {
  if (batch.empty()) throw ContractError("joint_loss on an empty batch");
  std::optional<Var> total;
  for (const auto& ex : batch) {
    auto fwd = forward_post(tape, model, *ex.post, vocab, agg);
    Var loss = instance_loss(fwd, model, ex.instance, gamma);
    total = total ? ops::add(*total, loss) : loss;
  }
  return ops::scale(*total, 1.0 / static_cast<double>(batch.size()));
}

double clip_gradients(ParamStore& params, double max_norm) {
  double sq = 0;
  for (std::size_t i = 0; i < params.size(); ++i)
    for (double g : params[i].grad.values()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (std::size_t i = 0; i < params.size(); ++i)
      for (double& g : params[i].grad.values()) g *= s;
  }
  return norm;
}

Adam::Adam(const ParamStore& params, double learning_rate) : lr_(learning_rate) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_.emplace_back(params[i].value.shape());
    v_.emplace_back(params[i].value.shape());
  }
}

void Adam::step(ParamStore& params) {
  if (params.size() != m_.size()) throw DimensionError("optimizer state built for a different parameter set");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].value.shape() != m_[i].shape() || params[i].grad.shape() != m_[i].shape()) {
      throw DimensionError("optimizer state for " + params[i].name + " is " + shape_str(m_[i].shape()));
    }
  }
  ++steps_;
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto value = params[i].value.values();
    auto grad = params[i].grad.values();
    auto m = m_[i].values();
    auto v = v_[i].values();
    for (std::size_t j = 0; j < value.size(); ++j) {
      m[j] = kBeta1 * m[j] + (1 - kBeta1) * grad[j];
      v[j] = kBeta2 * v[j] + (1 - kBeta2) * grad[j] * grad[j];
      const double update = lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + kEps);
      value[j] = static_cast<float>(value[j] - update);
    }
  }
}

std::string to_json_line(const EpochLog& log) {
  nlohmann::ordered_json j;
  j["epoch"] = log.epoch;
  j["train_loss"] = log.train_loss;
  j["val_loss"] = log.val_loss;
  j["lr"] = log.lr;
  j["a"] = log.a;
  j["b"] = log.b;
  return j.dump();
}

double evaluate_loss(Model& model, std::span<const Example> examples, const data::Vocabulary& vocab, double gamma,
                     Aggregation agg) {
  if (examples.empty()) throw ContractError("evaluate_loss on an empty split");
  double total = 0;
  for (const auto& ex : examples) {
    Tape tape;
    auto fwd = forward_post(tape, model, *ex.post, vocab, agg);
    total += instance_loss(fwd, model, ex.instance, gamma).value()[0];
  }
  return total / static_cast<double>(examples.size());
}

FitResult fit(Model& model, std::span<const Example> train, std::span<const Example> val, const data::Vocabulary& vocab,
              const TrainConfig& config, const std::function<void(const EpochLog&)>& on_epoch,
              const std::function<bool(const EpochLog&)>& stop_when) {
  if (train.empty()) throw ContractError("fit needs training examples");
  if (config.batch_size == 0) throw ContractError("batch size must be positive");
  ParamStore& params = model.params();
  Adam adam(params, config.learning_rate);
  Rng rng(config.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  FitResult result;
  result.best_val_loss = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best;
  std::size_t stale = 0;

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    const Aggregation agg = aggregation_for_epoch(epoch, config.warmup_epochs);
    if (epoch == config.warmup_epochs && epoch > 0) {
      // The loss changes definition with (a, b); compare only within a phase.
      result.best_val_loss = std::numeric_limits<double>::infinity();
      stale = 0;
    }
    rng.shuffle(order.begin(), order.end());
    double train_total = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      std::vector<Example> batch;
      for (std::size_t k = start; k < std::min(order.size(), start + config.batch_size); ++k)
        batch.push_back(train[order[k]]);
      params.zero_grad();
      Tape tape;
      Var loss = joint_loss(tape, model, batch, vocab, config.gamma, agg);
      const double value = loss.value()[0];
      if (!std::isfinite(value)) {
        throw TrainingDiverged("training loss became " + std::to_string(value) + " at epoch " + std::to_string(epoch) +
                               ", batch starting at " + std::to_string(start));
      }
      tape.backward(loss);
      clip_gradients(params, config.max_grad_norm);
      adam.step(params);
      train_total += value * static_cast<double>(batch.size());
    }
    EpochLog entry{epoch, train_total / static_cast<double>(train.size()), 0.0, adam.learning_rate(), agg.a, agg.b};
    entry.val_loss = val.empty() ? entry.train_loss : evaluate_loss(model, val, vocab, config.gamma, agg);
    if (!std::isfinite(entry.val_loss)) {
      throw TrainingDiverged("validation loss became " + std::to_string(entry.val_loss) + " at epoch " +
                             std::to_string(epoch));
    }
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);

    if (entry.val_loss < result.best_val_loss) {
      result.best_val_loss = entry.val_loss;
      result.best_epoch = epoch;
      stale = 0;
      best.clear();
      for (std::size_t i = 0; i < params.size(); ++i) best.push_back(params[i].value);
    } else {
      ++stale;
      adam.set_learning_rate(adam.learning_rate() * config.lr_decay);
      if (stale >= config.patience) {
        result.stopped_early = true;
        break;
      }
    }
    if (stop_when && stop_when(entry)) {
      result.stopped_by_caller = true;
      return result;
    }
  }
  for (std::size_t i = 0; i < best.size(); ++i) params[i].value = best[i];
  return result;
}

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'M', 'M', 'K', 'C'};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
  T v;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw ValidationError("truncated checkpoint " + path.string());
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params, const data::Vocabulary& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, vocab.gen.hash());
  put<std::uint64_t>(out, vocab.cls.hash());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter& p = params[i];
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t e : p.value.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(e));
    for (double v : p.value.values()) put<float>(out, static_cast<float>(v));
  }
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

void load_checkpoint(const std::filesystem::path& path, ParamStore& params, const data::Vocabulary& vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw ValidationError(path.string() + " is not a checkpoint (bad magic)");
  }
  const auto version = get<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) throw ValidationError("unsupported checkpoint version " + std::to_string(version));
  const auto gen_hash = get<std::uint64_t>(in, path);
  const auto cls_hash = get<std::uint64_t>(in, path);
  if (gen_hash != vocab.gen.hash() || cls_hash != vocab.cls.hash()) {
    throw ValidationError("checkpoint " + path.string() + " was trained with a different vocabulary (gen hash " +
                          std::to_string(gen_hash) + " vs " + std::to_string(vocab.gen.hash()) + ", cls hash " +
                          std::to_string(cls_hash) + " vs " + std::to_string(vocab.cls.hash()) + ")");
  }
  const auto count = get<std::uint32_t>(in, path);
  if (count != params.size()) {
    throw ValidationError("checkpoint has " + std::to_string(count) + " parameters, model has " +
                          std::to_string(params.size()));
  }
  for (std::uint32_t r = 0; r < count; ++r) {
    std::string name(get<std::uint32_t>(in, path), '\0');
    if (!in.read(name.data(), static_cast<std::streamsize>(name.size()))) throw ValidationError("truncated checkpoint");
    if (!params.contains(name)) throw ValidationError("checkpoint parameter " + name + " is unknown to the model");
    Parameter& p = params.get(name);
    Shape shape(get<std::uint32_t>(in, path));
    for (auto& e : shape) e = get<std::uint32_t>(in, path);
    if (shape != p.value.shape()) {
      throw ValidationError("checkpoint parameter " + name + " has shape " + shape_str(shape) + ", model expects " +
                            shape_str(p.value.shape()));
    }
    for (double& v : p.value.values()) v = get<float>(in, path);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw ValidationError("trailing bytes in checkpoint " + path.string());
}

}  // namespace mmkp
