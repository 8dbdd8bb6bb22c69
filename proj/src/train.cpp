#include "trajlab/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include <json.hpp>

#include "trajlab/error_profile.hpp"
#include "trajlab/optim.hpp"
#include "trajlab/rng.hpp"

namespace trajlab::train {

namespace {

ad::Tensor step_tensor(const data::Dataset& ds, std::span<const int> indices, int step) {
    const int n = ds.n_particles;
    const int batch = static_cast<int>(indices.size());
    std::vector<double> v(static_cast<std::size_t>(batch) * n * 4);
    const std::size_t per_step = static_cast<std::size_t>(n) * 4;
    for (int b = 0; b < batch; ++b) {
        const auto& st = ds.trajectories[indices[b]].states;
        for (std::size_t c = 0; c < per_step; ++c)
            v[static_cast<std::size_t>(b) * per_step + c] =
                static_cast<double>(st[static_cast<std::size_t>(step) * per_step + c]);
    }
    return ad::Tensor::from_values(batch * n, 4, std::move(v));
}

cal::EpochSigmaStats sigma_stats_of(std::vector<double> values) {
    cal::EpochSigmaStats s;
    if (values.empty()) return s;
    s.min = *std::min_element(values.begin(), values.end());
    s.max = *std::max_element(values.begin(), values.end());
    s.median = cal::quantile(values, 0.5);
    s.iqr = cal::quantile(values, 0.75) - cal::quantile(values, 0.25);
    return s;
}

struct ForwardOutputs {
    fnri::EdgePosterior posterior;
    fnri::Prediction prediction;
    ad::Tensor mean_all;
    ad::Tensor sigma_all;
};

ForwardOutputs forward_pass(fnri::Model& model, const BatchTensors& batch, bool training,
                            std::mt19937_64* gumbel_rng) {
    ForwardOutputs out;
    out.posterior = model.encode(batch.encoder_input, batch.batch, training);
    const fnri::LatentSample z =
        training ? fnri::Model::gumbel_sample(out.posterior, model.config().tau, *gumbel_rng)
                 : fnri::Model::hard_sample(out.posterior);
    const int dec = model.config().decoder_window;
    // decoder starts from the last encoder step
    out.prediction = model.rollout(batch.encoder_last, z, dec, batch.batch, training,
                                   training ? &batch.target_steps : nullptr);
    out.mean_all = ad::concat_rows(out.prediction.mean);
    out.sigma_all = ad::concat_rows(out.prediction.sigma);
    return out;
}

}  // namespace

BatchTensors make_batch(const data::Dataset& ds, std::span<const int> indices, int encoder_window,
                        int decoder_window) {
    if (ds.n_steps < encoder_window + decoder_window)
        throw std::invalid_argument("make_batch: trajectories shorter than encoder+decoder windows");
    if (indices.empty()) throw std::invalid_argument("make_batch: empty batch");
    const int n = ds.n_particles;
    const int batch = static_cast<int>(indices.size());

    BatchTensors bt;
    bt.batch = batch;
    std::vector<double> enc(static_cast<std::size_t>(batch) * n * 4 * encoder_window);
    const std::size_t per_step = static_cast<std::size_t>(n) * 4;
    const std::size_t feat = static_cast<std::size_t>(4) * encoder_window;
    for (int b = 0; b < batch; ++b) {
        const auto& st = ds.trajectories[indices[b]].states;
        for (int t = 0; t < encoder_window; ++t)
            for (int i = 0; i < n; ++i)
                for (int c = 0; c < 4; ++c)
                    enc[(static_cast<std::size_t>(b) * n + i) * feat + static_cast<std::size_t>(t) * 4 + c] =
                        static_cast<double>(st[static_cast<std::size_t>(t) * per_step +
                                               static_cast<std::size_t>(i) * 4 + c]);
    }
    bt.encoder_input = ad::Tensor::from_values(batch * n, 4 * encoder_window, std::move(enc));
    bt.encoder_last = step_tensor(ds, indices, encoder_window - 1);
    bt.target_steps.reserve(decoder_window);
    for (int k = 0; k < decoder_window; ++k)
        bt.target_steps.push_back(step_tensor(ds, indices, encoder_window + k));
    bt.target_all = ad::concat_rows(bt.target_steps);
    return bt;
}

TrainResult train_model(const cfg::ExperimentConfig& cfg, const std::string& data_dir,
                        const std::string& run_dir) {
    const data::Dataset train_ds = data::read_dataset(data_dir + "/train.tuld");
    const data::Dataset val_ds = data::read_dataset(data_dir + "/val.tuld");
    if (train_ds.trajectories.empty() || val_ds.trajectories.empty())
        throw std::runtime_error("train: empty dataset split");
    std::filesystem::create_directories(run_dir);

    loss::Config loss_cfg = cfg.loss_cfg;
    err::PriorSchedule prior;
    if (loss_cfg.kind == loss::Kind::AnisoGaussKL) {
        if (cfg.prior_schedule_path.empty())
            throw std::invalid_argument("train: aniso_gauss_kl needs [loss] prior_schedule");
        prior = err::read_prior_csv(cfg.prior_schedule_path);
        if (static_cast<int>(prior.sigma.size()) < cfg.model.decoder_window)
            throw std::invalid_argument("train: prior schedule shorter than decoder window");
        loss_cfg.prior = &prior;
    }

    fnri::Model model(cfg.model, rng::derive_stream(cfg.training.seed, 100)());
    std::vector<ad::Tensor> params;
    for (auto& [name, t] : model.named_parameters()) params.push_back(t);
    ad::Adam adam(params, {cfg.training.lr0});

    auto shuffle_rng = rng::derive_stream(cfg.training.seed, 101);
    auto gumbel_rng = rng::derive_stream(cfg.training.seed, 102);

    const int enc = cfg.model.encoder_window;
    const int dec = cfg.model.decoder_window;
    const int bs = cfg.training.batch_size;

    std::vector<int> order(train_ds.trajectories.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<int> val_order(val_ds.trajectories.size());
    std::iota(val_order.begin(), val_order.end(), 0);

    TrainResult result;
    result.checkpoint_path = run_dir + "/checkpoint.tlcp";
    double best_val = std::numeric_limits<double>::infinity();

    for (int epoch = 1; epoch <= cfg.training.epochs; ++epoch) {
        const double lr = ad::lr_schedule(cfg.training.lr0, epoch - 1, cfg.training.lr_halving_epochs);
        adam.set_lr(lr);
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        int n_batches = 0;
        bool aborted = false;
        for (std::size_t start = 0; start < order.size(); start += bs) {
            const std::size_t stop = std::min(order.size(), start + bs);
            const std::span<const int> idx(order.data() + start, stop - start);
            const BatchTensors batch = make_batch(train_ds, idx, enc, dec);
            try {
                ad::Tape tape;
                ForwardOutputs out = forward_pass(model, batch, /*training=*/true, &gumbel_rng);
                loss::ModelOutputs lo{out.mean_all, out.sigma_all, &out.posterior,
                                      batch.batch * train_ds.n_particles, dec};
                const loss::LossValue lv = loss::total_loss(loss_cfg, lo, batch.target_all, epoch - 1);
                adam.zero_grad();
                tape.backward(lv.total);
                adam.step();
                rec.train_total += lv.total.value();
                if (rec.train_components.empty())
                    rec.train_components = lv.components;
                else
                    for (std::size_t c = 0; c < lv.components.size(); ++c)
                        rec.train_components[c].second += lv.components[c].second;
                ++n_batches;
            } catch (const std::runtime_error&) {
                // non-finite loss: keep the last good checkpoint, record the
                // epoch, stop training
                result.aborted_epoch = epoch;
                aborted = true;
                break;
            }
        }
        if (aborted) {
            result.log.push_back(rec);
            break;
        }
        rec.train_total /= n_batches;
        for (auto& [name, v] : rec.train_components) v /= n_batches;

        // validation: free rollout, hard edges, running batch-norm stats
        double val_total = 0.0;
        double mse_num = 0.0;
        std::size_t mse_den = 0;
        std::vector<double> sigma_values;
        int val_batches = 0;
        for (std::size_t start = 0; start < val_order.size(); start += bs) {
            const std::size_t stop = std::min(val_order.size(), start + bs);
            const std::span<const int> idx(val_order.data() + start, stop - start);
            const BatchTensors batch = make_batch(val_ds, idx, enc, dec);
            ForwardOutputs out = forward_pass(model, batch, /*training=*/false, nullptr);
            loss::ModelOutputs lo{out.mean_all, out.sigma_all, &out.posterior,
                                  batch.batch * val_ds.n_particles, dec};
            const loss::LossValue lv = loss::total_loss(loss_cfg, lo, batch.target_all, epoch - 1);
            val_total += lv.total.value();
            const auto pv = out.mean_all.values();
            const auto tv = batch.target_all.values();
            for (std::size_t i = 0; i < pv.size(); ++i) {
                const double d = pv[i] - tv[i];
                mse_num += d * d;
            }
            mse_den += pv.size();
            if (cfg.model.sigma_mode != fnri::SigmaMode::Fixed) {
                const auto sv = out.sigma_all.values();
                sigma_values.insert(sigma_values.end(), sv.begin(), sv.end());
            }
            ++val_batches;
        }
        rec.val_total = val_total / val_batches;
        rec.val_mse = mse_num / static_cast<double>(mse_den);
        rec.sigma_stats = sigma_stats_of(std::move(sigma_values));

        if (rec.val_total < best_val) {
            best_val = rec.val_total;
            result.best_epoch = epoch;
            result.best_val = best_val;
            nlohmann::json extra;
            extra["loss_kind"] = loss::to_string(loss_cfg.kind);
            extra["fixed_sigma2"] = loss_cfg.fixed_sigma2;
            extra["epoch"] = epoch;
            extra["val_loss"] = best_val;
            model.save(result.checkpoint_path, extra.dump());
            rec.checkpointed = true;
        }
        result.log.push_back(rec);
    }
    write_runlog(run_dir + "/runlog.jsonl", result);
    return result;
}

EvalResult evaluate_model(fnri::Model& model, const loss::Config& loss_cfg,
                          const data::Dataset& ds, int batch_size) {
    if (ds.trajectories.empty()) throw std::invalid_argument("evaluate: empty dataset");
    const int enc = model.config().encoder_window;
    const int dec = model.config().decoder_window;
    const int n = ds.n_particles;
    const fnri::SigmaMode mode = model.config().sigma_mode;
    (void)loss_cfg;

    EvalResult eval;
    eval.n_trajectories = static_cast<int>(ds.trajectories.size());
    eval.has_sigma = mode != fnri::SigmaMode::Fixed;

    std::vector<int> order(ds.trajectories.size());
    std::iota(order.begin(), order.end(), 0);

    std::vector<double> mse_num_by_step(dec, 0.0);
    std::size_t count_by_step = 0;
    std::vector<double> sigma_values;
    std::vector<cal::DecodedEdges> decoded, truth;

    std::vector<double> z_pred, z_targ, z_sig;

    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const std::size_t stop = std::min(order.size(), start + batch_size);
        const std::span<const int> idx(order.data() + start, stop - start);
        const BatchTensors batch = make_batch(ds, idx, enc, dec);
        ForwardOutputs out;
        out.posterior = model.encode(batch.encoder_input, batch.batch, false);
        const fnri::LatentSample z = fnri::Model::hard_sample(out.posterior);
        out.prediction = model.rollout(batch.encoder_last, z, dec, batch.batch, false, nullptr);

        // per-step reconstruction error
        for (int k = 0; k < dec; ++k) {
            const auto pv = out.prediction.mean[k].values();
            const auto tv = batch.target_steps[k].values();
            for (std::size_t i = 0; i < pv.size(); ++i) {
                const double d = pv[i] - tv[i];
                mse_num_by_step[k] += d * d;
            }
        }
        count_by_step += static_cast<std::size_t>(batch.batch) * n * 4;

        if (eval.has_sigma) {
            for (int k = 0; k < dec; ++k) {
                const ad::Tensor expanded = loss::expand_sigma(out.prediction.sigma[k], mode);
                const auto sv = expanded.values();
                const auto pv = out.prediction.mean[k].values();
                const auto tv = batch.target_steps[k].values();
                z_sig.insert(z_sig.end(), sv.begin(), sv.end());
                z_pred.insert(z_pred.end(), pv.begin(), pv.end());
                z_targ.insert(z_targ.end(), tv.begin(), tv.end());
                const auto nv = out.prediction.sigma[k].values();
                sigma_values.insert(sigma_values.end(), nv.begin(), nv.end());
            }
        }

        // hard-decoded interaction graphs vs ground truth layers
        const int n_pairs = model.config().n_pairs();
        std::vector<int> send, recv;
        fnri::ordered_pairs(n, send, recv);
        for (int b = 0; b < batch.batch; ++b) {
            cal::DecodedEdges pred_edges, truth_edges;
            for (const ad::Tensor& logits : out.posterior.factor_logits) {
                std::vector<std::uint8_t> types(n_pairs);
                for (int e = 0; e < n_pairs; ++e) {
                    const int row = b * n_pairs + e;
                    types[e] = logits.at(row, 1) > logits.at(row, 0) ? 1 : 0;
                }
                pred_edges.factors.push_back(std::move(types));
            }
            const auto& graph = ds.trajectories[idx[b]].graph;
            std::vector<std::uint8_t> springs(n_pairs), charges(n_pairs);
            for (int e = 0; e < n_pairs; ++e) {
                springs[e] = graph.spring(recv[e], send[e]) ? 1 : 0;
                charges[e] = (graph.charges[recv[e]] && graph.charges[send[e]]) ? 1 : 0;
            }
            truth_edges.factors.push_back(std::move(springs));
            truth_edges.factors.push_back(std::move(charges));
            decoded.push_back(std::move(pred_edges));
            truth.push_back(std::move(truth_edges));
        }
    }

    eval.mse_by_step.resize(dec);
    double mse_total = 0.0;
    for (int k = 0; k < dec; ++k) {
        eval.mse_by_step[k] = mse_num_by_step[k] / static_cast<double>(count_by_step);
        mse_total += mse_num_by_step[k];
    }
    eval.mse = mse_total / (static_cast<double>(count_by_step) * dec);
    eval.edge_accuracy_percent = cal::edge_accuracy_percent(decoded, truth);

    if (eval.has_sigma) {
        eval.z_pooled = cal::z_scores(z_pred, z_targ, z_sig);
        for (int c = 0; c < 4; ++c) {
            auto& zc = eval.z_per_coord[c];
            zc.values.reserve(eval.z_pooled.values.size() / 4);
            for (std::size_t i = c; i < eval.z_pooled.values.size(); i += 4)
                zc.values.push_back(eval.z_pooled.values[i]);
        }
        std::vector<double> abs_z(eval.z_pooled.values.size());
        for (std::size_t i = 0; i < abs_z.size(); ++i) abs_z[i] = std::abs(eval.z_pooled.values[i]);
        eval.median_abs_z = cal::quantile(abs_z, 0.5);
        eval.sigma_stats = sigma_stats_of(std::move(sigma_values));
        if (eval.z_pooled.values.size() >= 1000) {
            eval.fit = cal::fit_distributions(eval.z_pooled);
            eval.fit_present = true;
        }
    }
    return eval;
}

namespace {

void write_histogram_csv(const std::string& path, const cal::Histogram& hist) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("write_histogram_csv: cannot open " + path);
    os.precision(17);
    os << "bin_left,bin_right,density,count\n";
    for (std::size_t i = 0; i < hist.density.size(); ++i)
        os << hist.edges[i] << ',' << hist.edges[i + 1] << ',' << hist.density[i] << ','
           << hist.counts[i] << '\n';
}

std::string best_fit_name(cal::BestFit best) {
    switch (best) {
        case cal::BestFit::Gaussian: return "gaussian";
        case cal::BestFit::Lorentzian: return "lorentzian";
        case cal::BestFit::None: return "-";
    }
    return "-";
}

}  // namespace

void write_eval_report(const std::string& out_dir, const EvalResult& eval,
                       const std::vector<std::pair<std::string, std::string>>& extra) {
    std::filesystem::create_directories(out_dir);
    std::ofstream os(out_dir + "/metrics.txt", std::ios::trunc);
    if (!os) throw std::runtime_error("write_eval_report: cannot open metrics.txt");
    os.precision(12);
    os << "n_trajectories: " << eval.n_trajectories << '\n';
    os << "edge_accuracy_percent: " << eval.edge_accuracy_percent << '\n';
    os << "mse: " << eval.mse << '\n';
    os << "mse_x1e5: " << eval.mse * 1e5 << '\n';
    if (eval.has_sigma) {
        os << "median_abs_z: " << eval.median_abs_z << '\n';
        os << "sigma_min: " << eval.sigma_stats.min << '\n';
        os << "sigma_median: " << eval.sigma_stats.median << '\n';
        os << "sigma_iqr: " << eval.sigma_stats.iqr << '\n';
        os << "sigma_max: " << eval.sigma_stats.max << '\n';
    }
    if (eval.fit_present) {
        os << "best_fit: " << best_fit_name(eval.fit.best) << '\n';
        if (eval.fit.gaussian.ok) {
            os << "gaussian_mu: " << eval.fit.gaussian.location << '\n';
            os << "gaussian_sigma: " << eval.fit.gaussian.scale_param << '\n';
            os << "gaussian_qof: " << eval.fit.gaussian.qof << '\n';
        } else {
            os << "gaussian_fit: failed\n";
        }
        if (eval.fit.lorentzian.ok) {
            os << "lorentzian_x0: " << eval.fit.lorentzian.location << '\n';
            os << "lorentzian_gamma: " << eval.fit.lorentzian.scale_param << '\n';
            os << "lorentzian_qof: " << eval.fit.lorentzian.qof << '\n';
        } else {
            os << "lorentzian_fit: failed\n";
        }
    } else {
        os << "best_fit: -\n";
    }
    for (const auto& [k, v] : extra) os << k << ": " << v << '\n';

    {
        std::ofstream ms(out_dir + "/mse_by_step.csv", std::ios::trunc);
        ms.precision(17);
        ms << "step,mse\n";
        for (std::size_t k = 0; k < eval.mse_by_step.size(); ++k)
            ms << k << ',' << eval.mse_by_step[k] << '\n';
    }
    if (eval.fit_present) {
        write_histogram_csv(out_dir + "/zscore_hist.csv", eval.fit.hist);
        const char* names[4] = {"x", "y", "vx", "vy"};
        for (int c = 0; c < 4; ++c) {
            if (eval.z_per_coord[c].values.size() < 2) continue;
            const auto hist = cal::build_histogram(eval.z_per_coord[c].values, 100);
            write_histogram_csv(out_dir + "/zscore_hist_" + names[c] + ".csv", hist);
        }
    }
}

void write_runlog(const std::string& path, const TrainResult& result) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("write_runlog: cannot open " + path);
    for (const auto& rec : result.log) {
        nlohmann::json j;
        j["epoch"] = rec.epoch;
        j["lr"] = rec.lr;
        j["train_total"] = rec.train_total;
        nlohmann::json comps;
        for (const auto& [name, v] : rec.train_components) comps[name] = v;
        j["train_components"] = comps;
        j["val_total"] = rec.val_total;
        j["val_mse"] = rec.val_mse;
        j["sigma_min"] = rec.sigma_stats.min;
        j["sigma_median"] = rec.sigma_stats.median;
        j["sigma_iqr"] = rec.sigma_stats.iqr;
        j["sigma_max"] = rec.sigma_stats.max;
        j["checkpointed"] = rec.checkpointed;
        os << j.dump() << '\n';
    }
    if (result.aborted_epoch) {
        nlohmann::json j;
        j["abort_epoch"] = *result.aborted_epoch;
        j["reason"] = "non-finite loss";
        os << j.dump() << '\n';
    }
}

std::vector<cal::EpochSigmaStats> read_runlog_sigma_stats(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("read_runlog: cannot open " + path);
    std::vector<cal::EpochSigmaStats> stats;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        if (!j.contains("epoch")) continue;
        cal::EpochSigmaStats s;
        s.min = j.value("sigma_min", 0.0);
        s.median = j.value("sigma_median", 0.0);
        s.iqr = j.value("sigma_iqr", 0.0);
        s.max = j.value("sigma_max", 0.0);
        stats.push_back(s);
    }
    return stats;
}

}  // namespace trajlab::train
