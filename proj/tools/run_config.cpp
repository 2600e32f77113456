#include "run_config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <variant>

#include <yaml-cpp/yaml.h>

#include "cli_error.hpp"

namespace mmkp::cli {

namespace {

using Ref = std::variant<std::size_t*, double*, bool*, std::string*>;

struct Field {
  const char* section;  // "" for top-level keys
  const char* key;
  Ref (*ref)(RunConfig&);
};

// Sections and keys in the order they are written out.
const Field kFields[] = {
    {"", "seed", [](RunConfig& c) -> Ref { return &c.seed; }},
    {"model", "model_dim", [](RunConfig& c) -> Ref { return &c.model.model_dim; }},
    {"model", "embed_dim", [](RunConfig& c) -> Ref { return &c.model.embed_dim; }},
    {"model", "encoder_layers", [](RunConfig& c) -> Ref { return &c.model.encoder_layers; }},
    {"model", "visual_dim", [](RunConfig& c) -> Ref { return &c.model.visual_dim; }},
    {"model", "visual_rows", [](RunConfig& c) -> Ref { return &c.model.visual_rows; }},
    {"model", "top_k", [](RunConfig& c) -> Ref { return &c.model.top_k; }},
    {"model", "max_decode_len", [](RunConfig& c) -> Ref { return &c.model.max_decode_len; }},
    {"model", "embed_init", [](RunConfig& c) -> Ref { return &c.model.embed_init; }},
    {"attention", "heads", [](RunConfig& c) -> Ref { return &c.model.attention.heads; }},
    {"attention", "head_dim", [](RunConfig& c) -> Ref { return &c.model.attention.head_dim; }},
    {"attention", "text_layers", [](RunConfig& c) -> Ref { return &c.model.attention.text_layers; }},
    {"attention", "vision_layers", [](RunConfig& c) -> Ref { return &c.model.attention.vision_layers; }},
    {"attention", "attribute_layers", [](RunConfig& c) -> Ref { return &c.model.attention.attribute_layers; }},
    {"attention", "ffn_dim", [](RunConfig& c) -> Ref { return &c.model.attention.ffn_dim; }},
    {"train", "gamma", [](RunConfig& c) -> Ref { return &c.train.gamma; }},
    {"train", "learning_rate", [](RunConfig& c) -> Ref { return &c.train.learning_rate; }},
    {"train", "lr_decay", [](RunConfig& c) -> Ref { return &c.train.lr_decay; }},
    {"train", "max_grad_norm", [](RunConfig& c) -> Ref { return &c.train.max_grad_norm; }},
    {"train", "warmup_epochs", [](RunConfig& c) -> Ref { return &c.train.warmup_epochs; }},
    {"train", "batch_size", [](RunConfig& c) -> Ref { return &c.train.batch_size; }},
    {"train", "max_epochs", [](RunConfig& c) -> Ref { return &c.train.max_epochs; }},
    {"train", "patience", [](RunConfig& c) -> Ref { return &c.train.patience; }},
    {"data", "train", [](RunConfig& c) -> Ref { return &c.data.train; }},
    {"data", "val", [](RunConfig& c) -> Ref { return &c.data.val; }},
    {"data", "gen_cap", [](RunConfig& c) -> Ref { return &c.data.gen_cap; }},
    {"data", "min_count", [](RunConfig& c) -> Ref { return &c.data.min_count; }},
    {"data", "min_keyphrase_count", [](RunConfig& c) -> Ref { return &c.data.min_keyphrase_count; }},
    {"data", "normalize", [](RunConfig& c) -> Ref { return &c.data.normalize; }},
    {"data", "embeddings", [](RunConfig& c) -> Ref { return &c.data.embeddings; }},
    {"inference", "beam", [](RunConfig& c) -> Ref { return &c.inference.beam; }},
    {"inference", "top_k", [](RunConfig& c) -> Ref { return &c.inference.top_k; }},
    {"inference", "a", [](RunConfig& c) -> Ref { return &c.inference.a; }},
    {"inference", "b", [](RunConfig& c) -> Ref { return &c.inference.b; }},
};

std::string path_of(const Field& f) { return *f.section ? std::string(f.section) + "." + f.key : f.key; }

const Field* find_field(const std::string& section, const std::string& key) {
  for (const auto& f : kFields)
    if (section == f.section && key == f.key) return &f;
  return nullptr;
}

bool known_section(const std::string& section) {
  for (const auto& f : kFields)
    if (*f.section && section == f.section) return true;
  return false;
}

void assign(RunConfig& config, const Field& field, const YAML::Node& value) {
  if (value.IsNull() && std::holds_alternative<std::string*>(field.ref(config))) {
    *std::get<std::string*>(field.ref(config)) = "";
    return;
  }
  if (!value.IsScalar()) throw ConfigError(path_of(field) + ": expected a scalar value");
  const std::string text = value.Scalar();
  try {
    std::visit(
        [&](auto* target) {
          using T = std::remove_pointer_t<decltype(target)>;
          if constexpr (std::is_same_v<T, std::size_t>) {
            if (!text.empty() && text[0] == '-') throw YAML::Exception(YAML::Mark::null_mark(), "negative");
          }
          *target = value.as<T>();
        },
        field.ref(config));
  } catch (const YAML::Exception&) {
    throw ConfigError(path_of(field) + ": cannot read '" + text + "'");
  }
}

void validate(const RunConfig& c) {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(what);
  };
  require(c.model.model_dim > 0 && c.model.model_dim % 2 == 0, "model.model_dim must be a positive even number");
  require(c.model.embed_dim > 0, "model.embed_dim must be positive");
  require(c.model.encoder_layers > 0, "model.encoder_layers must be positive");
  require(c.model.visual_dim > 0 && c.model.visual_rows > 0, "model.visual_dim and model.visual_rows must be positive");
  require(c.model.top_k > 0, "model.top_k must be positive");
  require(c.model.max_decode_len > 0, "model.max_decode_len must be positive");
  require(c.model.embed_init >= 0, "model.embed_init must be non-negative");
  require(c.model.attention.heads > 0 && c.model.attention.head_dim > 0, "attention heads and head_dim must be positive");
  require(c.train.gamma >= 0, "train.gamma must be non-negative");
  require(c.train.learning_rate > 0, "train.learning_rate must be positive");
  require(c.train.lr_decay > 0 && c.train.lr_decay <= 1, "train.lr_decay must be in (0, 1]");
  require(c.train.max_grad_norm > 0, "train.max_grad_norm must be positive");
  require(c.train.batch_size > 0, "train.batch_size must be positive");
  require(c.train.max_epochs > 0, "train.max_epochs must be positive");
  require(c.train.patience > 0, "train.patience must be positive");
  require(c.data.gen_cap > data::kReservedCount, "data.gen_cap must leave room beyond the reserved tokens");
  require(c.inference.beam > 0 && c.inference.top_k > 0, "inference.beam and inference.top_k must be positive");
  require(c.inference.a >= 0 && c.inference.b >= 0 && std::abs(c.inference.a + c.inference.b - 1.0) <= 1e-12,
          "inference.a and inference.b must be non-negative and sum to 1");
}

RunConfig from_node(const YAML::Node& root) {
  RunConfig config;
  if (!root || root.IsNull()) return config;
  if (!root.IsMap()) throw ConfigError("configuration must be a mapping");
  for (const auto& entry : root) {
    const auto name = entry.first.as<std::string>();
    if (const Field* top = find_field("", name)) {
      assign(config, *top, entry.second);
      continue;
    }
    if (!known_section(name)) throw ConfigError("unknown configuration key '" + name + "'");
    if (entry.second.IsNull()) continue;
    if (!entry.second.IsMap()) throw ConfigError("section '" + name + "' must be a mapping");
    for (const auto& kv : entry.second) {
      const auto key = kv.first.as<std::string>();
      const Field* f = find_field(name, key);
      if (!f) throw ConfigError("unknown configuration key '" + name + "." + key + "'");
      assign(config, *f, kv.second);
    }
  }
  validate(config);
  return config;
}

std::string format_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, end);
  if (s.find_first_of(".en") == std::string::npos) s += ".0";
  return s;
}

}  // namespace

RunConfig parse_config(const std::string& yaml_text) {
  try {
    return from_node(YAML::Load(yaml_text));
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("malformed configuration: ") + e.what());
  }
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void apply_override(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string path = assignment.substr(0, eq);
  const auto dot = path.find('.');
  const std::string section = dot == std::string::npos ? "" : path.substr(0, dot);
  const std::string key = dot == std::string::npos ? path : path.substr(dot + 1);
  const Field* f = find_field(section, key);
  if (!f) throw ConfigError("unknown configuration key '" + path + "'");
  RunConfig next = config;
  YAML::Node value;
  try {
    value = YAML::Load(assignment.substr(eq + 1));
  } catch (const YAML::Exception& e) {
    throw ConfigError("override '" + assignment + "': " + e.what());
  }
  assign(next, *f, value);
  validate(next);
  config = std::move(next);
}

std::string dump_config(const RunConfig& config) {
  RunConfig copy = config;
  YAML::Emitter out;
  out << YAML::BeginMap;
  std::string open;
  for (const auto& f : kFields) {
    if (open != f.section) {
      if (!open.empty()) out << YAML::EndMap;
      open = f.section;
      out << YAML::Key << open << YAML::Value << YAML::BeginMap;
    }
    out << YAML::Key << f.key << YAML::Value;
    std::visit(
        [&](auto* v) {
          using T = std::remove_pointer_t<decltype(v)>;
          if constexpr (std::is_same_v<T, double>) {
            out << format_double(*v);
          } else if constexpr (std::is_same_v<T, std::string>) {
            out << YAML::DoubleQuoted << *v;
          } else if constexpr (std::is_same_v<T, bool>) {
            out << YAML::TrueFalseBool << *v;
          } else {
            out << *v;
          }
        },
        f.ref(copy));
  }
  if (!open.empty()) out << YAML::EndMap;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

}  // namespace mmkp::cli
