#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "spcl/config.hpp"
#include "spcl/data.hpp"
#include "spcl/metrics.hpp"

namespace spcl {

/// Raised when a batch loss goes non-finite; carries the failing location.
struct TrainingAborted : std::runtime_error {
    TrainingAborted(int64_t epoch, int64_t sample_id)
        : std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) + ", sample " +
                             std::to_string(sample_id)),
          epoch(epoch),
          sample_id(sample_id) {}
    int64_t epoch;
    int64_t sample_id;
};

struct EpochLog {
    int64_t epoch = 0;
    double lr = 0.0;
    double gamma = 0.0;
    double train_loss = 0.0;
    double val_map = 0.0;
    double ema_annotated_mean = 0.0;  // mean EMA score of the annotated class
};

struct TrainResult {
    double best_val_map = 0.0;
    int64_t best_epoch = -1;
    std::vector<EpochLog> epochs;
    std::string run_dir;
};

/// Validate cross-key constraints (e.g. mined losses need a consistency
/// store) before any work starts. Throws std::invalid_argument.
void validate_run_config(const RunConfig& cfg);

/// Full training run. Writes config.echo, metrics.csv and checkpoints/ into
/// run_dir. Deterministic in (cfg, data): the thread count never changes
/// results because per-sample gradients are reduced in sample order.
/// Pass resume_checkpoint to continue a run from its last.ckpt.
TrainResult train_run(const RunConfig& cfg, const Dataset& data, const std::string& run_dir,
                      const std::string& resume_checkpoint = "");

struct EvalOutcome {
    EvaluationReport report;
    std::vector<std::vector<double>> predictions;
    std::vector<std::vector<uint8_t>> truth;
    std::vector<int64_t> record_indices;
};

/// Forward a checkpoint's parameters over a dataset split ("train", "val" or
/// "all") and score the predictions against the full labels. The split is
/// reconstructed from the config embedded in the checkpoint.
EvalOutcome evaluate_checkpoint(const std::string& checkpoint_path, const Dataset& data,
                                const std::string& split_name);

}  // namespace spcl
