#pragma once

// The operator commands: enrich, preprocess, train, evaluate, predict,
// report. Each returns the JSON it wants printed on stdout, writes its
// artifacts under run_dir, snapshots the resolved config next to them and
// appends an entry to run_dir/manifest.json.

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>

#include <fmt/format.h>
#include <json.hpp>

#include "nrec/checkpoint.hpp"
#include "nrec/config.hpp"
#include "nrec/enrichment.hpp"
#include "nrec/evaluation.hpp"
#include "nrec/http_clients.hpp"
#include "nrec/mind.hpp"
#include "nrec/trainer.hpp"
#include "nrec/training_data.hpp"

namespace nrec {

namespace fs = std::filesystem;

// Exclusive lock on a directory. A lock left by a dead process is taken over.
class DirectoryLock {
 public:
  explicit DirectoryLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    for (int attempt = 0; attempt < 2; ++attempt) {
      const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
      if (fd >= 0) {
        const auto pid = std::to_string(::getpid()) + "\n";
        [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
        ::close(fd);
        return;
      }
      if (errno != EEXIST) throw RuntimeFailure("cannot create lock " + path_.string() + ": " + std::strerror(errno));
      std::ifstream in(path_);
      long holder = 0;
      in >> holder;
      if (holder > 0 && (::kill(static_cast<pid_t>(holder), 0) == 0 || errno == EPERM))
        throw RuntimeFailure(dir.string() + " is in use by process " + std::to_string(holder) + " (lock file " +
                             path_.string() + ")");
      log().warn("removing stale lock {} (process {} is gone)", path_.string(), holder);
      fs::remove(path_);
    }
    throw RuntimeFailure("cannot acquire lock " + path_.string());
  }
  ~DirectoryLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  fs::path path_;
};

namespace detail {

inline std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::string file_digest(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return hex64(fnv1a64(bytes));
}

inline const fs::path& require_path(const fs::path& p, const char* key) {
  if (p.empty()) throw ConfigError(std::string(key) + ": path is required for this command");
  if (!fs::exists(p)) throw InputError(std::string(key) + ": file not found: " + p.string());
  return p;
}

}  // namespace detail

// Writes <run_dir>/<command>.resolved.conf and records outputs in the manifest.
class RunRecord {
 public:
  RunRecord(const RunConfig& cfg, std::string command) : cfg_(cfg), command_(std::move(command)), started_(detail::utc_now()) {
    fs::create_directories(cfg_.run_dir);
    snapshot_ = cfg_.run_dir / (command_ + ".resolved.conf");
    std::ofstream(snapshot_) << resolved_config_text(cfg_);
  }

  void output(const fs::path& p) { outputs_.push_back(p); }
  const fs::path& snapshot() const { return snapshot_; }

  void finish(const nlohmann::json& summary) {
    const auto manifest_path = cfg_.run_dir / "manifest.json";
    nlohmann::json manifest = {{"runs", nlohmann::json::array()}};
    if (std::ifstream in(manifest_path); in) {
      auto j = nlohmann::json::parse(in, nullptr, false);
      if (!j.is_discarded() && j.contains("runs")) manifest = std::move(j);
    }
    nlohmann::json outs = nlohmann::json::array();
    for (const auto& p : outputs_) {
      if (!fs::exists(p)) continue;
      outs.push_back({{"path", fs::absolute(p).lexically_normal().string()},
                      {"bytes", fs::is_regular_file(p) ? fs::file_size(p) : 0},
                      {"fnv1a64", fs::is_regular_file(p) ? detail::file_digest(p) : ""}});
    }
    manifest["runs"].push_back({{"command", command_},
                                {"started", started_},
                                {"finished", detail::utc_now()},
                                {"config_snapshot", fs::absolute(snapshot_).string()},
                                {"config_hash", detail::hex64(config_hash(cfg_))},
                                {"outputs", outs},
                                {"summary", summary}});
    detail::write_atomically(manifest_path, manifest.dump(2) + "\n");
  }

 private:
  const RunConfig& cfg_;
  std::string command_;
  std::string started_;
  fs::path snapshot_;
  std::vector<fs::path> outputs_;
};

// ---- enrichment ---------------------------------------------------------

inline std::unique_ptr<LlmClient> make_llm_client(const RunConfig& cfg) {
  if (cfg.llm == "mock") return std::make_unique<MockLlmClient>(cfg.llm_seed);
  HttpLlmConfig h;
  h.endpoint = cfg.llm_endpoint;
  h.model = cfg.llm_model;
  h.api_key_env = cfg.llm_api_key_env;
  h.requests_per_minute = cfg.llm_requests_per_minute;
  return std::make_unique<HttpLlmClient>(h);
}

inline std::unique_ptr<WikidataClient> make_wikidata_client(const RunConfig& cfg) {
  if (cfg.wikidata == "fixture") {
    if (cfg.wikidata_fixture.empty()) throw ConfigError("wikidata_fixture: required when wikidata = fixture");
    detail::require_path(cfg.wikidata_fixture, "wikidata_fixture");
    return std::make_unique<FixtureWikidataClient>(FixtureWikidataClient::read_fixture(cfg.wikidata_fixture));
  }
  HttpWikidataConfig h;
  h.endpoint = cfg.wikidata_endpoint;
  h.requests_per_minute = cfg.wikidata_requests_per_minute;
  return std::make_unique<HttpWikidataClient>(h);
}

inline std::vector<NewsRecord> load_news(const RunConfig& cfg) {
  auto parsed = parse_news_tsv(detail::require_path(cfg.news, "news"));
  if (parsed.stats.rejected) log().warn("news: {} malformed rows rejected", parsed.stats.rejected);
  if (parsed.records.empty()) throw InputError("news: no usable rows in " + cfg.news.string());
  return std::move(parsed.records);
}

inline std::vector<Impression> load_impressions(const fs::path& path, const char* key) {
  auto parsed = parse_behaviors_tsv(detail::require_path(path, key));
  if (parsed.stats.rejected) log().warn("{}: {} malformed rows rejected", key, parsed.stats.rejected);
  return std::move(parsed.records);
}

inline nlohmann::json run_enrich(const RunConfig& cfg) {
  validate(cfg);
  RunRecord record(cfg, "enrich");
  const auto news = load_news(cfg);
  auto llm = make_llm_client(cfg);
  auto wikidata = make_wikidata_client(cfg);
  EnrichmentCache cache(cfg.cache_path());
  EnrichmentCounters counters;
  EnrichmentContext ctx{*llm, *wikidata, cache, counters};
  ctx.retry.attempts = cfg.retry_attempts;
  ctx.prompt_version = cfg.prompt_version;
  ctx.max_entities = cfg.features.max_entities;
  const auto enriched = enrich_corpus(news, cfg.prompting_mode, ctx, cfg.enrich_workers);
  const auto out_path = cfg.enriched_path();
  write_enriched_tsv(out_path, enriched);
  record.output(out_path);
  record.output(cfg.cache_path());

  const std::size_t calls = counters.llm_calls + counters.wikidata_calls;
  std::size_t with_entities = 0, entity_total = 0;
  for (const auto& e : enriched) {
    with_entities += e.enriched_entities.empty() ? 0 : 1;
    entity_total += e.enriched_entities.size();
  }
  nlohmann::json j{{"command", "enrich"},
                   {"prompting_mode", to_string(cfg.prompting_mode)},
                   {"articles", enriched.size()},
                   {"articles_with_entities", with_entities},
                   {"entities", entity_total},
                   {"client_calls", calls},
                   {"counters", counters.to_json()},
                   {"enriched", fs::absolute(out_path).string()},
                   {"cache", fs::absolute(cfg.cache_path()).string()}};
  log().info("enrich: {} articles, {} client calls, {} cache hits, {} fallbacks, {} dropped entities", enriched.size(), calls,
             counters.cache_hits.load(), counters.fallbacks.load(), counters.dropped_entities.load());
  record.finish(j);
  return j;
}

// ---- features -----------------------------------------------------------

struct PreparedData {
  std::vector<NewsRecord> news;
  std::vector<EnrichedNews> enriched;
  FeatureSpace space;
  NewsFeatureTable table;
};

inline PreparedData prepare_data(const RunConfig& cfg) {
  PreparedData d;
  d.news = load_news(cfg);
  if (cfg.use_enriched) {
    const auto p = cfg.enriched_path();
    if (!fs::exists(p))
      throw InputError("enriched: file not found: " + p.string() + " (run `nrec enrich` first or set use_enriched = false)");
    d.enriched = parse_enriched_tsv(p);
  }
  const auto index = index_enriched(d.enriched);
  d.space = FeatureSpace::build(d.news, index, cfg.features, cfg.min_count);
  d.table = featurize_corpus(d.news, index, d.space);
  return d;
}

inline nlohmann::json run_preprocess(const RunConfig& cfg) {
  validate(cfg);
  RunRecord record(cfg, "preprocess");
  const auto data = prepare_data(cfg);
  const auto vocab_dir = cfg.run_dir / "vocab";
  fs::create_directories(vocab_dir);
  const std::pair<const char*, const Vocabulary*> vocabs[] = {{"words", &data.space.words},
                                                              {"entities", &data.space.entities},
                                                              {"categories", &data.space.categories},
                                                              {"subcategories", &data.space.subcategories}};
  nlohmann::json sizes, hashes;
  for (const auto& [name, v] : vocabs) {
    const auto p = vocab_dir / (std::string(name) + ".txt");
    v->save(p);
    record.output(p);
    sizes[name] = v->size();
    hashes[name] = detail::hex64(v->hash());
  }
  nlohmann::json j{{"command", "preprocess"}, {"news", data.news.size()}, {"vocab_sizes", sizes}, {"vocab_hashes", hashes}};
  if (!cfg.glove.empty()) {
    const auto t = load_word_embeddings(detail::require_path(cfg.glove, "glove"), data.space.words, cfg.train.seed, cfg.model.word_dim);
    j["word_coverage"] = t.coverage();
  }
  if (!cfg.entity_vec.empty()) {
    const auto t = load_entity_embeddings(detail::require_path(cfg.entity_vec, "entity_vec"), data.space.entities, cfg.train.seed,
                                          cfg.model.entity_dim);
    j["entity_coverage"] = t.coverage();
  }
  const auto train_imps = load_impressions(cfg.behaviors, "behaviors");
  ExampleStats st;
  for_each_training_example(train_imps, data.table, cfg.train.negatives, cfg.train.seed, cfg.features, [](TrainingExample&&) {},
                            &st);
  j["training_examples"] = {{"impressions", st.impressions},
                            {"examples", st.examples},
                            {"skipped_cold_user", st.skipped_cold_user},
                            {"skipped_no_positive", st.skipped_no_positive},
                            {"skipped_no_negative", st.skipped_no_negative},
                            {"dropped_history_items", st.dropped_history_items},
                            {"dropped_candidates", st.dropped_candidates}};
  const auto summary = cfg.run_dir / "preprocess.json";
  std::ofstream(summary) << j.dump(2) << '\n';
  record.output(summary);
  record.finish(j);
  return j;
}

// ---- model construction -------------------------------------------------

inline std::unique_ptr<NewsRecModel> build_model(const RunConfig& cfg, const FeatureSpace& space) {
  auto model = std::make_unique<NewsRecModel>(cfg.model, ModelShape::of(space), cfg.train.seed);
  model->set_word_embeddings(
      load_word_embeddings(detail::require_path(cfg.glove, "glove"), space.words, cfg.train.seed, cfg.model.word_dim));
  if (!cfg.entity_vec.empty())
    model->set_entity_embeddings(load_entity_embeddings(detail::require_path(cfg.entity_vec, "entity_vec"), space.entities,
                                                        cfg.train.seed, cfg.model.entity_dim));
  else
    model->set_entity_embeddings(random_embedding_table(space.entities, cfg.model.entity_dim, cfg.train.seed ^ 0xE17E17ULL));
  return model;
}

inline fs::path default_checkpoint(const RunConfig& cfg) { return cfg.checkpoints() / "best.ckpt"; }

// ---- train --------------------------------------------------------------

inline nlohmann::json run_train(const RunConfig& cfg) {
  validate(cfg);
  detail::require_path(cfg.glove, "glove");  // fail before any work
  DirectoryLock lock(cfg.checkpoints());
  RunRecord record(cfg, "train");
  const auto data = prepare_data(cfg);
  const auto train_imps = load_impressions(cfg.behaviors, "behaviors");
  const auto dev_imps = load_impressions(cfg.eval_behaviors(), cfg.dev_behaviors.empty() ? "behaviors" : "dev_behaviors");
  auto model = build_model(cfg, data.space);

  ExampleStats st;
  const auto examples = make_training_examples(train_imps, data.table, cfg.train.negatives, cfg.train.seed, cfg.features, &st);
  if (examples.empty()) throw InputError("behaviors: no training examples (every impression was skipped)");
  log().info("train: {} examples from {} impressions ({} cold users skipped)", examples.size(), st.impressions,
             st.skipped_cold_user);

  TrainOutputs out;
  out.dir = cfg.checkpoints();
  out.meta.vocab = VocabHashes::of(data.space);
  out.meta.run = config_json(cfg);
  fs::remove(out.dir / out.log_name);  // one log per training run
  auto dev = [&](NewsRecModel& m) {
    ModelScorer scorer(m, data.table, cfg.features.max_history, cfg.eval_threads);
    return evaluate(dev_imps, std::cref(scorer)).report;
  };
  Trainer trainer(*model, cfg.train);
  const auto result = trainer.fit(examples, dev, out);
  record.output(result.best_checkpoint);
  record.output(sidecar_path(result.best_checkpoint));
  record.output(out.dir / out.log_name);

  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : result.epochs) epochs.push_back(e.to_json());
  nlohmann::json j{{"command", "train"},
                   {"checkpoint", fs::absolute(result.best_checkpoint).string()},
                   {"training_log", fs::absolute(out.dir / out.log_name).string()},
                   {"examples", examples.size()},
                   {"epochs", epochs},
                   {"best_epoch", result.best_epoch},
                   {"best_dev_auc", result.best_auc ? nlohmann::json(*result.best_auc) : nlohmann::json(nullptr)},
                   {"final_loss", result.epochs.back().loss},
                   {"early_stopped", result.early_stopped}};
  record.finish(j);
  return j;
}

// ---- evaluate / predict -------------------------------------------------

struct EvalOptions {
  fs::path checkpoint;      // default <checkpoint_dir>/best.ckpt
  bool oracle = false;      // score = label; no model needed
  fs::path predictions;     // optional JSON-lines dump
};

// Loads the checkpoint after checking it was built over the same vocabularies.
inline std::unique_ptr<NewsRecModel> load_model_for(const RunConfig& cfg, const PreparedData& data, const fs::path& checkpoint) {
  const auto path = checkpoint.empty() ? default_checkpoint(cfg) : checkpoint;
  if (!fs::exists(path)) throw InputError("checkpoint: file not found: " + path.string() + " (run `nrec train` first)");
  return load_checkpoint(path, nullptr, VocabHashes::of(data.space));
}

inline std::string variant_name(const RunConfig& cfg) {
  return to_string(cfg.prompting_mode) + "_" + to_string(cfg.features.entity_source);
}

inline nlohmann::json run_evaluate(const RunConfig& cfg, const EvalOptions& opt = {}) {
  validate(cfg);
  RunRecord record(cfg, "evaluate");
  const auto imps = load_impressions(cfg.eval_behaviors(), cfg.dev_behaviors.empty() ? "behaviors" : "dev_behaviors");
  Evaluation ev;
  std::string source;
  if (opt.oracle) {
    ev = evaluate(imps, oracle_scorer());
    source = "oracle";
  } else {
    const auto data = prepare_data(cfg);
    auto model = load_model_for(cfg, data, opt.checkpoint);
    ModelScorer scorer(*model, data.table, cfg.features.max_history, cfg.eval_threads);
    ev = evaluate(imps, std::cref(scorer));
    source = fs::absolute(opt.checkpoint.empty() ? default_checkpoint(cfg) : opt.checkpoint).string();
  }
  nlohmann::json j{{"command", "evaluate"},
                   {"variant", variant_name(cfg)},
                   {"prompting_mode", to_string(cfg.prompting_mode)},
                   {"entity_source", to_string(cfg.features.entity_source)},
                   {"scorer", source},
                   {"metrics", ev.report.to_json()}};
  const auto report_path = cfg.run_dir / ("eval_" + std::string(opt.oracle ? "oracle" : variant_name(cfg)) + ".json");
  std::ofstream(report_path) << j.dump(2) << '\n';
  record.output(report_path);
  if (!opt.predictions.empty()) {
    write_predictions(opt.predictions, ev.scored);
    record.output(opt.predictions);
    j["predictions"] = fs::absolute(opt.predictions).string();
  }
  record.finish(j);
  return j;
}

inline nlohmann::json run_predict(const RunConfig& cfg, const std::string& impression_id, const EvalOptions& opt = {}) {
  validate(cfg);
  RunRecord record(cfg, "predict");
  const auto imps = load_impressions(cfg.eval_behaviors(), cfg.dev_behaviors.empty() ? "behaviors" : "dev_behaviors");
  const auto it = std::find_if(imps.begin(), imps.end(), [&](const Impression& i) { return i.impression_id == impression_id; });
  if (it == imps.end()) throw InputError("impression_id: '" + impression_id + "' not found in " + cfg.eval_behaviors().string());
  std::optional<std::vector<double>> scores;
  if (opt.oracle) {
    scores = oracle_scorer()(*it);
  } else {
    const auto data = prepare_data(cfg);
    auto model = load_model_for(cfg, data, opt.checkpoint);
    ModelScorer scorer(*model, data.table, cfg.features.max_history, cfg.eval_threads);
    scores = scorer(*it);
    if (!scores) throw InputError("impression '" + impression_id + "' references news missing from the corpus");
  }
  std::vector<std::size_t> order(scores->size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return (*scores)[a] > (*scores)[b]; });
  nlohmann::json ranking = nlohmann::json::array();
  for (std::size_t r = 0; r < order.size(); ++r) {
    const auto& c = it->candidates[order[r]];
    ranking.push_back({{"rank", r + 1}, {"news_id", c.news_id}, {"score", (*scores)[order[r]]}, {"label", c.label}});
  }
  nlohmann::json j{{"command", "predict"}, {"impression_id", impression_id}, {"user_id", it->user_id}, {"ranking", ranking}};
  record.finish(j);
  return j;
}

// ---- ablation sweep -----------------------------------------------------

enum class SweepAxis { prompting_mode, entity_source, both };

inline SweepAxis sweep_axis_from_string(std::string_view s) {
  if (s == "prompting_mode") return SweepAxis::prompting_mode;
  if (s == "entity_source") return SweepAxis::entity_source;
  if (s == "all") return SweepAxis::both;
  throw ConfigError("sweep: must be one of prompting_mode|entity_source|all, got '" + std::string(s) + "'");
}

inline std::vector<RunConfig> sweep_variants(const RunConfig& base, SweepAxis axis) {
  std::vector<PromptingMode> modes{base.prompting_mode};
  std::vector<EntitySource> sources{base.features.entity_source};
  if (axis != SweepAxis::entity_source) modes = {PromptingMode::direct, PromptingMode::entity, PromptingMode::hierarchical};
  if (axis != SweepAxis::prompting_mode) sources = {EntitySource::original, EntitySource::enriched, EntitySource::union_of_both};
  std::vector<RunConfig> out;
  for (auto m : modes)
    for (auto s : sources) {
      RunConfig v = base;
      v.prompting_mode = m;
      v.features.entity_source = s;
      v.run_dir = base.run_dir / "sweep" / variant_name(v);
      v.checkpoint_dir.clear();
      v.enriched.clear();
      v.cache = base.cache_path();  // article-level LLM results are shared between variants
      out.push_back(std::move(v));
    }
  return out;
}

// enrich -> train -> evaluate for every variant, each in its own run directory.
inline nlohmann::json run_sweep(const RunConfig& cfg, SweepAxis axis) {
  validate(cfg);
  RunRecord record(cfg, "sweep");
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& v : sweep_variants(cfg, axis)) {
    log().info("sweep variant {}", variant_name(v));
    if (v.use_enriched) run_enrich(v);
    const auto trained = run_train(v);
    auto ev = run_evaluate(v);
    rows.push_back({{"variant", variant_name(v)},
                    {"prompting_mode", to_string(v.prompting_mode)},
                    {"entity_source", to_string(v.features.entity_source)},
                    {"config_hash", detail::hex64(config_hash(v))},
                    {"resolved_config", fs::absolute(v.run_dir / "train.resolved.conf").string()},
                    {"best_epoch", trained["best_epoch"]},
                    {"metrics", ev["metrics"]}});
  }
  nlohmann::json j{{"command", "evaluate"}, {"sweep", rows}};
  const auto path = cfg.run_dir / "sweep.json";
  std::ofstream(path) << j.dump(2) << '\n';
  record.output(path);
  record.finish(j);
  return j;
}

// ---- report -------------------------------------------------------------

namespace detail {

inline std::string csv_number(const nlohmann::json& v) {
  return v.is_number() ? fmt::format("{:.6f}", v.get<double>()) : std::string();
}

// Grouped bar chart of the four metrics per variant.
inline std::string metrics_svg(const std::vector<std::pair<std::string, nlohmann::json>>& rows) {
  static const char* keys[] = {"auc", "mrr", "ndcg5", "ndcg10"};
  static const char* colours[] = {"#4e79a7", "#f28e2b", "#59a14f", "#e15759"};
  const double bar = 14, gap = 24, left = 50, top = 30, height = 200;
  const double group = 4 * bar + gap;
  const double width = left + group * static_cast<double>(rows.size()) + 20;
  std::string s = fmt::format(R"(<svg xmlns="http://www.w3.org/2000/svg" width="{:.0f}" height="{:.0f}" font-family="sans-serif" font-size="10">)",
                              std::max(width, 320.0), top + height + 70);
  s += "\n";
  for (int t = 0; t <= 4; ++t) {
    const double y = top + height - height * t / 4.0;
    s += fmt::format(R"(<line x1="{}" y1="{:.1f}" x2="{:.1f}" y2="{:.1f}" stroke="#ddd"/><text x="{}" y="{:.1f}" text-anchor="end">{:.2f}</text>)",
                     left, y, width - 10, y, left - 4, y + 3, t / 4.0);
    s += "\n";
  }
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const double x0 = left + gap / 2 + group * static_cast<double>(r);
    for (int k = 0; k < 4; ++k) {
      const auto& v = rows[r].second[keys[k]];
      if (!v.is_number()) continue;
      const double h = height * std::clamp(v.get<double>(), 0.0, 1.0);
      s += fmt::format(R"(<rect x="{:.1f}" y="{:.1f}" width="{}" height="{:.1f}" fill="{}"><title>{} {:.4f}</title></rect>)", x0 + k * bar,
                       top + height - h, bar - 1, h, colours[k], keys[k], v.get<double>());
      s += "\n";
    }
    s += fmt::format(R"(<text x="{:.1f}" y="{:.1f}" text-anchor="middle">{}</text>)", x0 + 2 * bar, top + height + 14, rows[r].first);
    s += "\n";
  }
  for (int k = 0; k < 4; ++k)
    s += fmt::format(R"(<rect x="{:.0f}" y="{:.0f}" width="10" height="10" fill="{}"/><text x="{:.0f}" y="{:.0f}">{}</text>)",
                     left + 70 * k, top + height + 34, colours[k], left + 70 * k + 14, top + height + 43, keys[k]) +
         "\n";
  return s + "</svg>\n";
}

}  // namespace detail

inline nlohmann::json run_report(const RunConfig& cfg, bool plot) {
  RunRecord record(cfg, "report");
  std::vector<std::pair<std::string, nlohmann::json>> rows;
  auto read_json = [](const fs::path& p) {
    std::ifstream in(p);
    auto j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw InputError("report: " + p.string() + " is not valid JSON");
    return j;
  };
  std::vector<fs::path> evals;
  if (fs::exists(cfg.run_dir))
    for (const auto& e : fs::directory_iterator(cfg.run_dir)) {
      const auto name = e.path().filename().string();
      if (name.rfind("eval_", 0) == 0 && e.path().extension() == ".json") evals.push_back(e.path());
    }
  std::sort(evals.begin(), evals.end());
  for (const auto& p : evals) {
    const auto j = read_json(p);
    rows.emplace_back(p.stem().string().substr(5), j.at("metrics"));
  }
  if (fs::exists(cfg.run_dir / "sweep.json"))
    for (const auto& r : read_json(cfg.run_dir / "sweep.json").at("sweep")) rows.emplace_back("sweep:" + r.at("variant").get<std::string>(), r.at("metrics"));
  if (rows.empty()) throw InputError("report: no evaluation results under " + cfg.run_dir.string() + " (run `nrec evaluate` first)");

  const auto dir = cfg.run_dir / "report";
  fs::create_directories(dir);
  {
    std::ofstream csv(dir / "metrics.csv");
    csv << "variant,auc,mrr,ndcg5,ndcg10,n_impressions,n_auc,skipped_single_class,skipped_no_positive,skipped_unresolvable\n";
    for (const auto& [name, m] : rows)
      csv << name << ',' << detail::csv_number(m["auc"]) << ',' << detail::csv_number(m["mrr"]) << ','
          << detail::csv_number(m["ndcg5"]) << ',' << detail::csv_number(m["ndcg10"]) << ',' << m.value("n_impressions", 0) << ','
          << m.value("n_auc", 0) << ',' << m.value("skipped_single_class", 0) << ',' << m.value("skipped_no_positive", 0) << ','
          << m.value("skipped_unresolvable", 0) << '\n';
  }
  record.output(dir / "metrics.csv");
  nlohmann::json files = nlohmann::json::array({fs::absolute(dir / "metrics.csv").string()});

  const auto log_path = cfg.checkpoints() / "train_log.jsonl";
  if (fs::exists(log_path)) {
    std::ifstream in(log_path);
    std::ofstream csv(dir / "training.csv");
    csv << "epoch,loss,dev_auc,seconds\n";
    std::string line;
    while (std::getline(in, line)) {
      const auto e = nlohmann::json::parse(line, nullptr, false);
      if (e.is_discarded()) continue;
      csv << e.value("epoch", 0) << ',' << fmt::format("{:.6f}", e.value("loss", 0.0)) << ','
          << (e["dev"].is_object() ? detail::csv_number(e["dev"]["auc"]) : "") << ',' << fmt::format("{:.3f}", e.value("seconds", 0.0))
          << '\n';
    }
    record.output(dir / "training.csv");
    files.push_back(fs::absolute(dir / "training.csv").string());
  }
  if (plot) {
    std::ofstream(dir / "metrics.svg") << detail::metrics_svg(rows);
    record.output(dir / "metrics.svg");
    files.push_back(fs::absolute(dir / "metrics.svg").string());
  }
  nlohmann::json j{{"command", "report"}, {"rows", rows.size()}, {"files", files}};
  record.finish(j);
  return j;
}

}  // namespace nrec
