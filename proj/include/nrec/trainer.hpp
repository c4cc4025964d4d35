#pragma once

// Mini-batch training with softmax cross-entropy over 1 + K candidates and
// Adam, per-epoch dev evaluation, best-AUC checkpointing and early stopping.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>

#include <json.hpp>

#include "nrec/adam.hpp"
#include "nrec/checkpoint.hpp"
#include "nrec/log.hpp"
#include "nrec/metrics.hpp"
#include "nrec/model.hpp"

namespace nrec {

struct TrainConfig {
  double lr = 1e-4;
  std::size_t negatives = 4;  // K
  std::size_t batch_size = 32;
  std::size_t epochs = 5;
  std::size_t patience = 3;  // epochs without dev AUC improvement before stopping
  std::uint64_t seed = 42;
  double target_auc = 0.0;  // stop once dev AUC reaches this; 0 disables

  void validate() const {
    if (negatives == 0) throw ConfigError("K (negatives) must be at least 1");
    if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
    if (epochs == 0) throw ConfigError("epochs must be at least 1");
    if (!(lr >= 0.0)) throw ConfigError("lr must be non-negative");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"lr", c.lr},         {"negatives", c.negatives}, {"batch_size", c.batch_size},
       {"epochs", c.epochs}, {"patience", c.patience},   {"seed", c.seed}, {"target_auc", c.target_auc}};
}

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;      // mean per-example loss over the epoch
  std::vector<double> batch_losses;
  std::optional<MetricReport> dev;
  double seconds = 0.0;
  bool improved = false;

  nlohmann::json to_json() const {
    return {{"epoch", epoch}, {"loss", loss}, {"batches", batch_losses.size()},
            {"dev", dev ? dev->to_json() : nlohmann::json(nullptr)}, {"seconds", seconds}, {"improved", improved}};
  }
};

struct TrainResult {
  std::vector<EpochRecord> epochs;
  std::filesystem::path best_checkpoint;
  std::size_t best_epoch = 0;
  std::optional<double> best_auc;
  bool early_stopped = false;
};

// Called after every epoch with the current parameters.
using DevEvaluator = std::function<MetricReport(NewsRecModel&)>;

struct TrainOutputs {
  std::filesystem::path dir;       // checkpoint and logs go here; empty = keep nothing on disk
  CheckpointMeta meta;             // vocab hashes and run config recorded with checkpoints
  std::string checkpoint_name = "best.ckpt";
  std::string log_name = "train_log.jsonl";
};

class Trainer {
 public:
  Trainer(NewsRecModel& model, TrainConfig config) : model_(model), config_(config), adam_(AdamConfig{config.lr}) {
    config_.validate();
  }

  // Loss of one batch, with gradients accumulated into the parameters.
  double train_batch(std::span<const TrainingExample* const> batch, Rng* dropout) {
    model_.zero_grad();
    Tape tape;
    BatchEncoder enc(model_, tape, dropout);
    std::vector<Var> losses;
    losses.reserve(batch.size());
    for (const auto* ex : batch) losses.push_back(enc.loss(*ex));
    Var loss = ad::mean(losses);
    tape.backward(loss);
    return loss.scalar();
  }

  void step() {
    auto params = model_.parameters();
    adam_step(params, adam_);
  }

  TrainResult fit(std::span<const TrainingExample> examples, const DevEvaluator& dev = {}, const TrainOutputs& out = {}) {
    if (examples.empty()) throw InputError("no training examples");
    TrainResult result;
    std::ofstream log_file;
    if (!out.dir.empty()) {
      std::filesystem::create_directories(out.dir);
      log_file.open(out.dir / out.log_name, std::ios::app);
      if (!log_file) throw RuntimeFailure("cannot write training log in " + out.dir.string());
    }
    std::size_t since_best = 0;
    Rng dropout_rng(mix_seed(config_.seed, std::string_view("dropout")));
    Rng* dropout = model_.config().word_dropout > 0.0 ? &dropout_rng : nullptr;

    for (std::size_t epoch = 1; epoch <= config_.epochs; ++epoch) {
      const auto t0 = std::chrono::steady_clock::now();
      std::vector<std::size_t> order(examples.size());
      std::iota(order.begin(), order.end(), 0);
      Rng shuffle(mix_seed(config_.seed, epoch));
      shuffle.shuffle(std::span(order));

      EpochRecord rec;
      rec.epoch = epoch;
      double total = 0.0;
      for (std::size_t start = 0; start < order.size(); start += config_.batch_size) {
        std::vector<const TrainingExample*> batch;
        for (std::size_t i = start; i < std::min(order.size(), start + config_.batch_size); ++i) batch.push_back(&examples[order[i]]);
        double loss = 0.0;
        try {
          loss = train_batch(batch, dropout);
          if (!std::isfinite(loss)) throw RuntimeFailure("loss is " + std::to_string(loss));
        } catch (const RuntimeFailure& e) {
          dump_batch(out.dir, epoch, start / config_.batch_size, batch, e.what());
          throw RuntimeFailure(std::string("non-finite value during training (epoch ") + std::to_string(epoch) + ", batch " +
                               std::to_string(start / config_.batch_size) + "): " + e.what());
        }
        step();
        rec.batch_losses.push_back(loss);
        total += loss * static_cast<double>(batch.size());
      }
      rec.loss = total / static_cast<double>(examples.size());

      if (dev) rec.dev = dev(model_);
      const std::optional<double> auc = rec.dev ? rec.dev->auc : std::nullopt;
      // Without a dev signal the latest epoch is kept.
      rec.improved = !dev || (auc && (!result.best_auc || *auc > *result.best_auc)) || (result.best_epoch == 0 && !auc);
      if (rec.improved) {
        result.best_epoch = epoch;
        result.best_auc = auc;
        since_best = 0;
        if (!out.dir.empty()) {
          result.best_checkpoint = out.dir / out.checkpoint_name;
          save_checkpoint(result.best_checkpoint, model_, out.meta);
        }
      } else {
        ++since_best;
      }
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      log().info("epoch {}: loss {:.5f}{}{}", epoch, rec.loss,
                 auc ? fmt::format(", dev auc {:.4f}", *auc) : std::string(), rec.improved ? " (best)" : "");
      if (log_file) log_file << rec.to_json().dump() << '\n' << std::flush;
      result.epochs.push_back(std::move(rec));
      if (config_.target_auc > 0.0 && auc && *auc >= config_.target_auc) {
        log().info("dev AUC {:.4f} reached target {:.4f}", *auc, config_.target_auc);
        result.early_stopped = true;
        break;
      }
      if (dev && config_.patience > 0 && since_best >= config_.patience) {
        log().info("early stopping: no dev AUC improvement for {} epochs", since_best);
        result.early_stopped = true;
        break;
      }
    }
    return result;
  }

  const AdamState& optimizer() const { return adam_; }

 private:
  void dump_batch(const std::filesystem::path& dir, std::size_t epoch, std::size_t batch_index,
                  std::span<const TrainingExample* const> batch, const std::string& what) {
    nlohmann::json j{{"epoch", epoch}, {"batch", batch_index}, {"error", what}, {"examples", nlohmann::json::array()}};
    for (const auto* ex : batch) {
      nlohmann::json c = nlohmann::json::array();
      for (const auto& f : ex->candidates) c.push_back(f.news_id);
      j["examples"].push_back({{"impression_id", ex->impression_id}, {"candidates", c}, {"history_length", ex->history_length()}});
    }
    nlohmann::json bad = nlohmann::json::array();
    for (auto* p : model_.parameters())
      if (!p->value.all_finite()) bad.push_back(p->name);
    j["non_finite_parameters"] = bad;
    if (dir.empty()) {
      log().error("non-finite batch: {}", j.dump());
      return;
    }
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "nan_dump.json") << j.dump(2) << '\n';
    log().error("non-finite value; offending batch written to {}", (dir / "nan_dump.json").string());
  }

  NewsRecModel& model_;
  TrainConfig config_;
  AdamState adam_;
};

}  // namespace nrec
