#pragma once

// Run configuration: a `key = value` file plus `--key value` overrides.
// Unknown keys are errors. The resolved form (every key, absolute paths) is
// itself a valid config file, so any run can be replayed from it.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nrec/enrichment.hpp"
#include "nrec/model.hpp"
#include "nrec/trainer.hpp"
#include "nrec/training_data.hpp"

namespace nrec {

struct RunConfig {
  // inputs
  std::filesystem::path news;
  std::filesystem::path behaviors;
  std::filesystem::path dev_behaviors;  // optional; evaluation falls back to `behaviors`
  std::filesystem::path glove;
  std::filesystem::path entity_vec;     // optional; random entity rows when empty
  // outputs
  std::filesystem::path run_dir = "run";
  std::filesystem::path enriched;       // default <run_dir>/enriched_<mode>.tsv
  std::filesystem::path cache;          // default <run_dir>/enrich_cache.jsonl
  std::filesystem::path checkpoint_dir; // default <run_dir>/checkpoints
  // enrichment
  std::string llm = "mock";             // mock | http
  std::string llm_endpoint = "https://api.openai.com/v1/chat/completions";
  std::string llm_model = "gpt-4o-mini";
  std::string llm_api_key_env = "NREC_LLM_API_KEY";  // name of the variable, never the key
  double llm_requests_per_minute = 60;
  std::uint64_t llm_seed = 0;
  std::string wikidata = "fixture";     // live | fixture
  std::filesystem::path wikidata_fixture;
  std::string wikidata_endpoint = "https://www.wikidata.org/w/api.php";
  double wikidata_requests_per_minute = 120;
  PromptingMode prompting_mode = PromptingMode::hierarchical;
  std::string prompt_version = kPromptVersion;
  std::size_t enrich_workers = 1;
  int retry_attempts = 3;
  bool use_enriched = true;
  // features
  FeatureConfig features;
  std::size_t min_count = 1;
  // training
  TrainConfig train;
  ModelConfig model;
  std::size_t eval_threads = 0;

  std::filesystem::path enriched_path() const {
    return enriched.empty() ? run_dir / ("enriched_" + to_string(prompting_mode) + ".tsv") : enriched;
  }
  std::filesystem::path cache_path() const { return cache.empty() ? run_dir / "enrich_cache.jsonl" : cache; }
  std::filesystem::path checkpoints() const { return checkpoint_dir.empty() ? run_dir / "checkpoints" : checkpoint_dir; }
  std::filesystem::path eval_behaviors() const { return dev_behaviors.empty() ? behaviors : dev_behaviors; }
};

namespace detail {

struct ConfigField {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
  bool is_path = false;
};

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  const auto l = ascii_lower(v);
  if (l == "true" || l == "1" || l == "yes" || l == "on") return true;
  if (l == "false" || l == "0" || l == "no" || l == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

inline std::string format_double(double d) {
  std::ostringstream os;
  os.precision(17);
  os << d;
  return os.str();
}

template <typename T>
ConfigField number_field(std::string key, T RunConfig::*outer) {
  return {key, [key, outer](RunConfig& c, const std::string& v) { c.*outer = parse_number<T>(key, v); },
          [outer](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return format_double(c.*outer);
            else return std::to_string(c.*outer);
          }};
}

template <typename S, typename T>
ConfigField nested_number(std::string key, S RunConfig::*outer, T S::*inner) {
  return {key, [key, outer, inner](RunConfig& c, const std::string& v) { (c.*outer).*inner = parse_number<T>(key, v); },
          [outer, inner](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return format_double((c.*outer).*inner);
            else return std::to_string((c.*outer).*inner);
          }};
}

inline ConfigField string_field(std::string key, std::string RunConfig::*m) {
  return {key, [m](RunConfig& c, const std::string& v) { c.*m = v; }, [m](const RunConfig& c) { return c.*m; }};
}

inline ConfigField path_field(std::string key, std::filesystem::path RunConfig::*m) {
  return {key, [m](RunConfig& c, const std::string& v) { c.*m = v; }, [m](const RunConfig& c) { return (c.*m).string(); },
          true};
}

inline ConfigField choice_field(std::string key, std::string RunConfig::*m, std::vector<std::string> allowed) {
  return {key,
          [key, m, allowed](RunConfig& c, const std::string& v) {
            if (std::find(allowed.begin(), allowed.end(), v) == allowed.end()) {
              std::string opts;
              for (const auto& a : allowed) opts += (opts.empty() ? "" : "|") + a;
              throw ConfigError(key + ": must be one of " + opts + ", got '" + v + "'");
            }
            c.*m = v;
          },
          [m](const RunConfig& c) { return c.*m; }};
}

inline const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = [] {
    std::vector<ConfigField> f{
        path_field("news", &RunConfig::news),
        path_field("behaviors", &RunConfig::behaviors),
        path_field("dev_behaviors", &RunConfig::dev_behaviors),
        path_field("glove", &RunConfig::glove),
        path_field("entity_vec", &RunConfig::entity_vec),
        path_field("run_dir", &RunConfig::run_dir),
        path_field("enriched", &RunConfig::enriched),
        path_field("cache", &RunConfig::cache),
        path_field("checkpoint_dir", &RunConfig::checkpoint_dir),
        choice_field("llm", &RunConfig::llm, {"mock", "http"}),
        string_field("llm_endpoint", &RunConfig::llm_endpoint),
        string_field("llm_model", &RunConfig::llm_model),
        string_field("llm_api_key_env", &RunConfig::llm_api_key_env),
        number_field("llm_requests_per_minute", &RunConfig::llm_requests_per_minute),
        number_field("llm_seed", &RunConfig::llm_seed),
        choice_field("wikidata", &RunConfig::wikidata, {"live", "fixture"}),
        path_field("wikidata_fixture", &RunConfig::wikidata_fixture),
        string_field("wikidata_endpoint", &RunConfig::wikidata_endpoint),
        number_field("wikidata_requests_per_minute", &RunConfig::wikidata_requests_per_minute),
        {"prompting_mode", [](RunConfig& c, const std::string& v) { c.prompting_mode = prompting_mode_from_string(v); },
         [](const RunConfig& c) { return to_string(c.prompting_mode); }},
        string_field("prompt_version", &RunConfig::prompt_version),
        number_field("enrich_workers", &RunConfig::enrich_workers),
        number_field("retry_attempts", &RunConfig::retry_attempts),
        {"use_enriched", [](RunConfig& c, const std::string& v) { c.use_enriched = parse_bool("use_enriched", v); },
         [](const RunConfig& c) { return std::string(c.use_enriched ? "true" : "false"); }},
        {"entity_source",
         [](RunConfig& c, const std::string& v) { c.features.entity_source = entity_source_from_string(v); },
         [](const RunConfig& c) { return to_string(c.features.entity_source); }},
        nested_number("title_len", &RunConfig::features, &FeatureConfig::title_len),
        nested_number("max_entities", &RunConfig::features, &FeatureConfig::max_entities),
        nested_number("max_history", &RunConfig::features, &FeatureConfig::max_history),
        number_field("min_count", &RunConfig::min_count),
        nested_number("lr", &RunConfig::train, &TrainConfig::lr),
        nested_number("negatives", &RunConfig::train, &TrainConfig::negatives),
        nested_number("batch_size", &RunConfig::train, &TrainConfig::batch_size),
        nested_number("epochs", &RunConfig::train, &TrainConfig::epochs),
        nested_number("patience", &RunConfig::train, &TrainConfig::patience),
        nested_number("seed", &RunConfig::train, &TrainConfig::seed),
        nested_number("word_dim", &RunConfig::model, &ModelConfig::word_dim),
        nested_number("entity_dim", &RunConfig::model, &ModelConfig::entity_dim),
        nested_number("category_dim", &RunConfig::model, &ModelConfig::category_dim),
        nested_number("n_filters", &RunConfig::model, &ModelConfig::n_filters),
        nested_number("window", &RunConfig::model, &ModelConfig::window),
        nested_number("att_dim", &RunConfig::model, &ModelConfig::att_dim),
        nested_number("heads", &RunConfig::model, &ModelConfig::heads),
        {"use_subcategory",
         [](RunConfig& c, const std::string& v) { c.model.use_subcategory = parse_bool("use_subcategory", v); },
         [](const RunConfig& c) { return std::string(c.model.use_subcategory ? "true" : "false"); }},
        nested_number("word_dropout", &RunConfig::model, &ModelConfig::word_dropout),
        number_field("eval_threads", &RunConfig::eval_threads),
    };
    return f;
  }();
  return fields;
}

inline const ConfigField& config_field(const std::string& key) {
  for (const auto& f : config_fields())
    if (f.key == key) return f;
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace detail

inline std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : detail::config_fields()) keys.push_back(f.key);
  return keys;
}

// Sets one key. Relative paths are taken relative to `base`.
inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value,
                             const std::filesystem::path& base = {}) {
  const auto& f = detail::config_field(key);
  if (f.is_path && !value.empty()) {
    std::filesystem::path p(value);
    if (p.is_relative() && !base.empty()) p = base / p;
    f.set(c, p.lexically_normal().string());
  } else {
    f.set(c, value);
  }
}

inline std::string get_config_value(const RunConfig& c, const std::string& key) { return detail::config_field(key).get(c); }

// Parses `key = value` lines; '#' starts a comment line. Duplicate keys are errors.
inline void apply_config_text(RunConfig& c, std::istream& in, const std::string& source, const std::filesystem::path& base) {
  std::string line;
  std::size_t n = 0;
  std::map<std::string, std::size_t> seen;
  while (std::getline(in, line)) {
    ++n;
    const auto t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError(source + ":" + std::to_string(n) + ": expected 'key = value'");
    const auto key = trim(t.substr(0, eq));
    const auto value = trim(t.substr(eq + 1));
    if (auto it = seen.find(key); it != seen.end())
      throw ConfigError(source + ":" + std::to_string(n) + ": duplicate key '" + key + "' (first on line " +
                        std::to_string(it->second) + ")");
    seen.emplace(key, n);
    try {
      set_config_value(c, key, value, base);
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(n) + ": " + e.what());
    }
  }
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  RunConfig c;
  // run_dir defaults next to the config file
  c.run_dir = (std::filesystem::absolute(path).parent_path() / "run").lexically_normal();
  apply_config_text(c, in, path.string(), std::filesystem::absolute(path).parent_path());
  return c;
}

// Every key in declaration order; paths absolute. Loadable by load_config.
inline std::string resolved_config_text(const RunConfig& c) {
  std::string out = "# resolved configuration\n";
  for (const auto& f : detail::config_fields()) {
    std::string v = f.get(c);
    if (f.is_path && !v.empty()) v = std::filesystem::absolute(v).lexically_normal().string();
    out += f.key + " = " + v + "\n";
  }
  return out;
}

inline nlohmann::json config_json(const RunConfig& c) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& f : detail::config_fields()) {
    std::string v = f.get(c);
    if (f.is_path && !v.empty()) v = std::filesystem::absolute(v).lexically_normal().string();
    j[f.key] = v;
  }
  return j;
}

inline std::uint64_t config_hash(const RunConfig& c) { return fnv1a64(resolved_config_text(c)); }

inline void validate(const RunConfig& c) {
  c.train.validate();
  if (!(c.train.lr > 0.0)) throw ConfigError("lr: must be positive");
  c.model.validate();
  if (c.features.title_len == 0) throw ConfigError("title_len: must be at least 1");
  if (c.features.max_history == 0) throw ConfigError("max_history: must be at least 1");
  if (c.retry_attempts < 1) throw ConfigError("retry_attempts: must be at least 1");
  if (c.run_dir.empty()) throw ConfigError("run_dir: must be set");
}

}  // namespace nrec
