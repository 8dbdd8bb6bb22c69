#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "trajlab/fnri.hpp"
#include "trajlab/losses.hpp"
#include "trajlab/sim.hpp"

namespace trajlab::cfg {

// section -> key -> raw value; plain-text `key = value` lines under
// `[section]` headers, `#` or `;` comments.
using IniMap = std::map<std::string, std::map<std::string, std::string>>;

IniMap parse_ini(const std::string& path);

struct TrainingConfig {
    int epochs = 50;
    int batch_size = 128;
    double lr0 = 5e-4;
    int lr_halving_epochs = 200;
    std::uint64_t seed = 0;
};

struct ErrorProfileConfig {
    std::vector<double> dt_grid{0.001, 0.002, 0.005, 0.01};
    std::vector<double> sigma_grid{1e-5, 1e-4, 1e-3, 1e-2};
    int horizon = 100;
    int n_runs = 50;
    double reference_dt = 0.0;  // 0 -> dt_fine / 2
    std::uint64_t seed = 0;
};

struct ExperimentConfig {
    sim::SimConfig simulator;
    fnri::ModelConfig model;
    loss::Config loss_cfg;
    std::string prior_schedule_path;  // [loss] prior_schedule, for aniso_gauss_kl
    TrainingConfig training;
    ErrorProfileConfig error_profile;

    // Parses and validates; unknown sections/keys are errors. The model's
    // sigma mode follows the loss kind unless the file pins a matching one.
    static ExperimentConfig load(const std::string& path);
};

}  // namespace trajlab::cfg
