// nrec: enrich | preprocess | train | evaluate | predict | report | synth
//
// Exit codes: 0 ok, 2 configuration or input error, 3 runtime failure.
// Results go to stdout as JSON, logs to stderr.

#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "nrec/pipeline.hpp"
#include "nrec/synthetic.hpp"

namespace {

using namespace nrec;

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct Overrides {
  std::string config_file;
  std::map<std::string, std::string> values;
};

RunConfig resolve(const Overrides& o) {
  RunConfig cfg;
  if (!o.config_file.empty()) cfg = load_config(o.config_file);
  else cfg.run_dir = std::filesystem::absolute("run");
  for (const auto& [k, v] : o.values) set_config_value(cfg, k, v, std::filesystem::current_path());
  return cfg;
}

// Writes a synthetic MIND-format fixture plus a ready-to-use config file.
nlohmann::json run_synth(const std::filesystem::path& out, const SyntheticConfig& sc) {
  const auto corpus = generate_synthetic(sc);
  write_synthetic(corpus, out);
  std::ofstream conf(out / "nrec.conf");
  conf << "# synthetic fixture: " << sc.news << " news, " << sc.impressions << " behaviors\n"
       << "news = news.tsv\nbehaviors = behaviors.tsv\n";
  if (sc.dev_impressions) conf << "dev_behaviors = dev_behaviors.tsv\n";
  conf << "glove = glove.txt\nentity_vec = entity_embedding.vec\nwikidata = fixture\nwikidata_fixture = wikidata.json\n"
       << "llm = mock\nrun_dir = run\nword_dim = " << sc.word_dim << "\nentity_dim = " << sc.entity_dim << "\n";
  return {{"command", "synth"},
          {"dir", std::filesystem::absolute(out).string()},
          {"news", corpus.news.size()},
          {"behaviors", corpus.impressions.size()},
          {"dev_behaviors", corpus.dev_impressions.size()},
          {"distinct_tokens", corpus.distinct_tokens},
          {"config", std::filesystem::absolute(out / "nrec.conf").string()}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LLM-enriched news recommendation pipeline"};
  app.require_subcommand(1);
  app.fallthrough();  // global options may follow the verb
  Overrides ov;
  bool verbose = false, quiet = false;
  app.add_option("-c,--config", ov.config_file, "key = value config file");
  app.add_flag("-v,--verbose", verbose, "debug logging");
  app.add_flag("-q,--quiet", quiet, "warnings and errors only");
  // Every config key doubles as a --key override.
  for (const auto& key : config_keys())
    app.add_option_function<std::string>("--" + key, [&ov, key](const std::string& v) { ov.values[key] = v; },
                                         "override config key " + key);

  auto* enrich = app.add_subcommand("enrich", "LLM enrichment of the news corpus (resumable)");
  auto* preprocess = app.add_subcommand("preprocess", "build vocabularies and report feature statistics");
  auto* train = app.add_subcommand("train", "train the recommender and keep the best checkpoint");

  EvalOptions eval_opt;
  std::string sweep;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "AUC / MRR / nDCG@5 / nDCG@10 over impressions");
  evaluate_cmd->add_option("--checkpoint", eval_opt.checkpoint, "checkpoint file (default <checkpoint_dir>/best.ckpt)");
  evaluate_cmd->add_flag("--oracle", eval_opt.oracle, "debug: score = label");
  evaluate_cmd->add_option("--predictions", eval_opt.predictions, "write per-impression scores as JSON lines");
  evaluate_cmd->add_option("--sweep", sweep, "ablation: prompting_mode | entity_source | all");

  EvalOptions predict_opt;
  std::string impression_id;
  auto* predict = app.add_subcommand("predict", "rank the candidates of one impression");
  predict->add_option("--impression-id,--impression_id", impression_id, "impression id")->required();
  predict->add_option("--checkpoint", predict_opt.checkpoint, "checkpoint file");
  predict->add_flag("--oracle", predict_opt.oracle, "debug: score = label");

  bool plot = false;
  auto* report = app.add_subcommand("report", "CSV metric tables (and an SVG chart with --plot)");
  report->add_flag("--plot", plot, "also write metrics.svg");

  SyntheticConfig sc;
  std::filesystem::path synth_out = "fixture";
  auto* synth = app.add_subcommand("synth", "write a synthetic MIND-format fixture with a config file");
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--news-count", sc.news, "articles");
  synth->add_option("--behaviors-count", sc.impressions, "training impressions");
  synth->add_option("--dev-count", sc.dev_impressions, "dev impressions");
  synth->add_option("--vocab-size", sc.vocab_size, "distinct title tokens");
  synth->add_option("--word-dim", sc.word_dim, "word vector dimension");
  synth->add_option("--users", sc.users, "users");
  synth->add_option("--synth-seed", sc.seed, "generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }
  log().set_level(verbose ? spdlog::level::debug : quiet ? spdlog::level::warn : spdlog::level::info);

  try {
    nlohmann::json out;
    if (synth->parsed()) {
      out = run_synth(synth_out, sc);
    } else {
      const RunConfig cfg = resolve(ov);
      if (enrich->parsed()) out = run_enrich(cfg);
      else if (preprocess->parsed()) out = run_preprocess(cfg);
      else if (train->parsed()) out = run_train(cfg);
      else if (evaluate_cmd->parsed()) out = sweep.empty() ? run_evaluate(cfg, eval_opt) : run_sweep(cfg, sweep_axis_from_string(sweep));
      else if (predict->parsed()) out = run_predict(cfg, impression_id, predict_opt);
      else if (report->parsed()) out = run_report(cfg, plot);
    }
    std::cout << out.dump(2) << std::endl;
    return 0;
  } catch (const ConfigError& e) {
    log().error("configuration error: {}", e.what());
    return kExitConfig;
  } catch (const InputError& e) {
    log().error("input error: {}", e.what());
    return kExitConfig;
  } catch (const nlohmann::json::exception& e) {
    log().error("input error: {}", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    log().error("runtime failure: {}", e.what());
    return kExitRuntime;
  }
}
