#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ctxsent/data.hpp"
#include "ctxsent/model.hpp"
#include "ctxsent/nn.hpp"

namespace ctxsent {

enum class WeightMode { inverse_frequency, uniform };
enum class StopReason { max_epochs, early_stop };

struct TrainConfig {
    double learning_rate = 2e-5;
    int batch_size = 16;
    int max_epochs = 5;
    int patience = 2;
    double val_fraction = 0.15;
    WeightMode class_weight_mode = WeightMode::inverse_frequency;
    uint64_t seed = 0; // drives the split, per-epoch shuffles, and dropout
    int warmup_steps = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.01;

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_f1_macro = 0.0;
    double val_accuracy = 0.0;
};

struct TrainReport {
    std::vector<EpochRecord> epochs;
    int best_epoch = 0;
    StopReason stop_reason = StopReason::max_epochs;
    double wall_seconds = 0.0;
};

// Patience-based early stopping on validation macro-F1. Improvement is
// strict with tolerance 1e-6; ties resolve to the earliest epoch.
class EarlyStopper {
public:
    explicit EarlyStopper(int patience) : patience_(patience) {}

    // Returns true when training should stop after this epoch.
    bool observe(int epoch, double f1);

    double best_f1() const { return best_f1_; }
    int best_epoch() const { return best_epoch_; }
    int epochs_since_improvement() const { return since_; }
    bool improved_last() const { return improved_last_; }

    // For resume: restore counters from checkpoint metadata.
    void restore(double best_f1, int best_epoch, int since);

private:
    int patience_;
    double best_f1_ = -1.0;
    int best_epoch_ = 0;
    int since_ = 0;
    bool improved_last_ = false;
};

struct TrainResult {
    Model best_model;
    TrainReport report;
};

// Splits the dataset (stratified, val_fraction), derives class weights from
// the training side only, and runs the mini-batch loop with per-epoch
// validation and best-checkpoint retention. When run_dir is non-empty the
// config snapshot, per-epoch metrics CSV, best/last checkpoints, and a log
// file are written there.
TrainResult train(const ModelConfig& model_config, const Vocab& vocab, const Dataset& dataset,
                  const LabelSchema& schema, const TrainConfig& config,
                  const std::string& run_dir = "");

// Continues an interrupted run from run_dir's last checkpoint (epoch and
// patience counters plus optimizer state), producing the same final model
// as an uninterrupted run.
TrainResult resume(const std::string& run_dir, const Vocab& vocab, const Dataset& dataset,
                   const LabelSchema& schema, const TrainConfig& config);

// Batched argmax predictions in eval mode, ties toward the lowest index.
std::vector<int> predict_labels(Model& model, const std::vector<Encoding>& encodings,
                                int batch_size = 32);

} // namespace ctxsent
