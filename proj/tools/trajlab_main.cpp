#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#ifdef _OPENMP
#include <omp.h>
#endif

#include "trajlab/config.hpp"
#include "trajlab/dataset.hpp"
#include "trajlab/error_profile.hpp"
#include "trajlab/train.hpp"

namespace {

namespace fs = std::filesystem;
using namespace trajlab;

std::string resolve(const std::string& run_dir, const std::string& path) {
    if (path.empty() || fs::path(path).is_absolute()) return path;
    return (fs::path(run_dir) / path).string();
}

void apply_thread_override() {
#ifdef _OPENMP
    if (const char* env = std::getenv("TRAJLAB_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) omp_set_num_threads(n);
    }
#endif
}

err::ErrorGrid run_comp(const cfg::ExperimentConfig& cfg) {
    return err::computational_error(cfg.simulator, cfg.error_profile.dt_grid,
                                    cfg.error_profile.reference_dt, cfg.error_profile.horizon,
                                    cfg.error_profile.n_runs, cfg.error_profile.seed);
}

err::ErrorGrid run_phys(const cfg::ExperimentConfig& cfg) {
    return err::physical_error(cfg.simulator, cfg.error_profile.sigma_grid,
                               cfg.error_profile.horizon, cfg.error_profile.n_runs,
                               cfg.error_profile.seed);
}

int run(int argc, char** argv) {
    CLI::App app{"Interacting-particle trajectory lab: simulate, profile errors, train a "
                 "relational-inference model with uncertainty outputs, evaluate calibration"};
    app.require_subcommand(1);
    std::string run_dir = ".";
    app.add_option("--run-dir", run_dir, "Directory that relative paths resolve against");

    // simulate
    auto* sim_cmd = app.add_subcommand("simulate", "Generate trajectory dataset splits");
    std::string sim_config, sim_out = "data";
    int n_train = 1000, n_val = 200, n_test = 200;
    std::uint64_t sim_seed = 0;
    bool sim_seed_set = false;
    sim_cmd->add_option("--config", sim_config, "Experiment config file")->required();
    sim_cmd->add_option("--out", sim_out, "Output directory for the dataset files");
    sim_cmd->add_option("--train", n_train, "Training simulations");
    sim_cmd->add_option("--val", n_val, "Validation simulations");
    sim_cmd->add_option("--test", n_test, "Test simulations");
    sim_cmd->add_option("--seed", sim_seed, "Override [simulator] seed")
        ->each([&](const std::string&) { sim_seed_set = true; });

    // error-profile
    auto* ep_cmd = app.add_subcommand("error-profile",
                                      "Tabulate computational/physical error growth");
    std::string ep_mode, ep_config, ep_out = "grid.csv", ep_out_dir = "profiles", ep_data;
    ep_cmd->add_option("mode", ep_mode, "comp | phys | all | prior")->required();
    ep_cmd->add_option("--config", ep_config, "Experiment config file")->required();
    ep_cmd->add_option("--out", ep_out, "Output CSV (comp/phys/prior modes)");
    ep_cmd->add_option("--out-dir", ep_out_dir, "Output directory (all mode)");
    ep_cmd->add_option("--data", ep_data, "Dataset directory (needed for the prior schedule)");

    // train
    auto* train_cmd = app.add_subcommand("train", "Train a model from a config");
    std::string train_config, train_data = "data";
    train_cmd->add_option("--config", train_config, "Experiment config file")->required();
    train_cmd->add_option("--data", train_data, "Dataset directory");

    // evaluate
    auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate a checkpoint on the test split");
    std::string eval_ckpt, eval_data = "data", eval_out = "report";
    int eval_batch = 128;
    eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
    eval_cmd->add_option("--data", eval_data, "Dataset directory");
    eval_cmd->add_option("--out", eval_out, "Report output directory");
    eval_cmd->add_option("--batch-size", eval_batch, "Evaluation batch size");

    // report
    auto* rep_cmd = app.add_subcommand(
        "report", "Evaluate and combine with the training log (pathology detectors)");
    std::string rep_config, rep_data = "data";
    rep_cmd->add_option("--config", rep_config, "Experiment config file")->required();
    rep_cmd->add_option("--data", rep_data, "Dataset directory");

    CLI11_PARSE(app, argc, argv);
    apply_thread_override();

    if (*sim_cmd) {
        auto cfg = cfg::ExperimentConfig::load(resolve(run_dir, sim_config));
        if (sim_seed_set) cfg.simulator.rng_seed = sim_seed;
        data::generate_dataset(cfg.simulator, {n_train, n_val, n_test}, cfg.simulator.rng_seed,
                               resolve(run_dir, sim_out));
        std::cout << "wrote " << n_train << "/" << n_val << "/" << n_test << " trajectories to "
                  << resolve(run_dir, sim_out) << "\n";
        return 0;
    }

    if (*ep_cmd) {
        const auto cfg = cfg::ExperimentConfig::load(resolve(run_dir, ep_config));
        if (ep_mode == "comp") {
            err::write_grid_csv(resolve(run_dir, ep_out), run_comp(cfg));
        } else if (ep_mode == "phys") {
            err::write_grid_csv(resolve(run_dir, ep_out), run_phys(cfg));
        } else if (ep_mode == "all" || ep_mode == "prior") {
            const auto comp = run_comp(cfg);
            const auto phys = run_phys(cfg);
            const std::string dir = resolve(run_dir, ep_out_dir);
            if (ep_mode == "all") {
                fs::create_directories(dir);
                err::write_grid_csv(dir + "/comp.csv", comp);
                err::write_grid_csv(dir + "/phys.csv", phys);
            }
            if (!ep_data.empty()) {
                const auto train_ds = data::read_dataset(resolve(run_dir, ep_data) + "/train.tuld");
                const double d0 = err::delta_x0(train_ds);
                const auto prior = err::build_prior_schedule(comp, phys, d0, train_ds.effective_dt,
                                                             cfg.model.decoder_window);
                const std::string prior_path =
                    ep_mode == "prior" ? resolve(run_dir, ep_out) : dir + "/prior.csv";
                err::write_prior_csv(prior_path, prior);
                if (prior.clamped)
                    std::cout << "note: prior lookups clamped to grid edges\n";
            } else if (ep_mode == "prior") {
                std::cerr << "error: prior mode needs --data for delta_x0\n";
                return 1;
            }
        } else {
            std::cerr << "error: unknown error-profile mode " << ep_mode << "\n";
            return 1;
        }
        return 0;
    }

    if (*train_cmd) {
        const auto cfg = cfg::ExperimentConfig::load(resolve(run_dir, train_config));
        const auto result = train::train_model(cfg, resolve(run_dir, train_data), run_dir);
        if (result.aborted_epoch) {
            std::cerr << "training aborted at epoch " << *result.aborted_epoch
                      << " (non-finite loss); last good checkpoint kept\n";
            return 2;
        }
        std::cout << "best epoch " << result.best_epoch << " val loss " << result.best_val
                  << " -> " << result.checkpoint_path << "\n";
        return 0;
    }

    if (*eval_cmd) {
        std::string extra_meta;
        auto model = fnri::Model::load(resolve(run_dir, eval_ckpt), &extra_meta);
        loss::Config loss_cfg;  // metrics do not depend on the loss beyond the sigma mode
        const auto test_ds = data::read_dataset(resolve(run_dir, eval_data) + "/test.tuld");
        auto eval = train::evaluate_model(model, loss_cfg, test_ds, eval_batch);
        train::write_eval_report(resolve(run_dir, eval_out), eval);
        std::cout << "edge accuracy " << eval.edge_accuracy_percent << "% mse " << eval.mse
                  << " -> " << resolve(run_dir, eval_out) << "/metrics.txt\n";
        return 0;
    }

    if (*rep_cmd) {
        const auto cfg = cfg::ExperimentConfig::load(resolve(run_dir, rep_config));
        std::string extra_meta;
        auto model = fnri::Model::load(resolve(run_dir, "checkpoint.tlcp"), &extra_meta);
        const auto test_ds = data::read_dataset(resolve(run_dir, rep_data) + "/test.tuld");
        loss::Config loss_cfg = cfg.loss_cfg;
        auto eval = train::evaluate_model(model, loss_cfg, test_ds, cfg.training.batch_size);

        std::vector<std::pair<std::string, std::string>> extra;
        if (cfg.model.sigma_mode != fnri::SigmaMode::Fixed) {
            const auto stats = train::read_runlog_sigma_stats(resolve(run_dir, "runlog.jsonl"));
            cal::PathologyInput input;
            input.sigma0 = cfg.model.sigma0;
            input.epochs = stats;
            input.median_abs_z = eval.median_abs_z;
            input.mse_by_step = eval.mse_by_step;
            const unsigned flags = cal::detect_pathologies(input);
            extra.emplace_back("pathologies", cal::pathology_names(flags));
        } else {
            extra.emplace_back("pathologies", "- (fixed sigma)");
        }
        train::write_eval_report(resolve(run_dir, "report"), eval, extra);
        std::cout << "report written to " << resolve(run_dir, "report") << "\n";
        return 0;
    }
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
