#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "trajlab/calibration.hpp"
#include "trajlab/config.hpp"
#include "trajlab/dataset.hpp"
#include "trajlab/fnri.hpp"
#include "trajlab/losses.hpp"

namespace trajlab::train {

struct BatchTensors {
    ad::Tensor encoder_input;            // [B*N, 4*encoder_window]
    ad::Tensor encoder_last;             // last encoder step, [B*N, 4]
    std::vector<ad::Tensor> target_steps;  // per predicted step, [B*N, 4]
    ad::Tensor target_all;               // step-major concat, [steps*B*N, 4]
    int batch = 0;
};

BatchTensors make_batch(const data::Dataset& ds, std::span<const int> indices, int encoder_window,
                        int decoder_window);

struct EpochRecord {
    int epoch = 0;  // 1-based
    double lr = 0.0;
    double train_total = 0.0;  // mean per batch
    std::vector<std::pair<std::string, double>> train_components;
    double val_total = 0.0;
    double val_mse = 0.0;
    cal::EpochSigmaStats sigma_stats;
    bool checkpointed = false;
};

struct TrainResult {
    std::vector<EpochRecord> log;
    int best_epoch = 0;
    double best_val = 0.0;
    std::string checkpoint_path;
    std::optional<int> aborted_epoch;  // set when a non-finite loss stopped training
};

TrainResult train_model(const cfg::ExperimentConfig& cfg, const std::string& data_dir,
                        const std::string& run_dir);

struct EvalResult {
    int n_trajectories = 0;
    double edge_accuracy_percent = 0.0;
    double mse = 0.0;
    std::vector<double> mse_by_step;
    bool has_sigma = false;  // false for the fixed-variance model
    cal::ZScoreSet z_pooled;
    std::array<cal::ZScoreSet, 4> z_per_coord;
    bool fit_present = false;
    cal::FitReport fit;
    double median_abs_z = 0.0;
    cal::EpochSigmaStats sigma_stats;
};

EvalResult evaluate_model(fnri::Model& model, const loss::Config& loss_cfg,
                          const data::Dataset& ds, int batch_size);

// metrics.txt (key: value), zscore_hist*.csv, mse_by_step.csv under out_dir.
void write_eval_report(const std::string& out_dir, const EvalResult& eval,
                       const std::vector<std::pair<std::string, std::string>>& extra = {});

void write_runlog(const std::string& path, const TrainResult& result);
// Reconstructs the per-epoch sigma statistics (for the pathology detectors).
std::vector<cal::EpochSigmaStats> read_runlog_sigma_stats(const std::string& path);

}  // namespace trajlab::train
