#include "trajlab/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace trajlab::cfg {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

// Tracks which keys were consumed so typos surface as errors.
class Section {
  public:
    Section(const IniMap& ini, const std::string& name) : name_(name) {
        const auto it = ini.find(name);
        if (it != ini.end()) kv_ = &it->second;
    }

    bool has(const std::string& key) const { return kv_ && kv_->count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& fallback) {
        seen_.insert(key);
        if (!has(key)) return fallback;
        return kv_->at(key);
    }

    double get_double(const std::string& key, double fallback) {
        seen_.insert(key);
        if (!has(key)) return fallback;
        return parse_double(key, kv_->at(key));
    }

    int get_int(const std::string& key, int fallback) {
        seen_.insert(key);
        if (!has(key)) return fallback;
        return static_cast<int>(parse_ll(key, kv_->at(key)));
    }

    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) {
        seen_.insert(key);
        if (!has(key)) return fallback;
        return static_cast<std::uint64_t>(parse_ll(key, kv_->at(key)));
    }

    bool get_bool(const std::string& key, bool fallback) {
        seen_.insert(key);
        if (!has(key)) return fallback;
        const std::string v = kv_->at(key);
        if (v == "on" || v == "true" || v == "1") return true;
        if (v == "off" || v == "false" || v == "0") return false;
        throw std::invalid_argument("config [" + name_ + "] " + key + ": expected on/off");
    }

    std::vector<double> get_double_list(const std::string& key, std::vector<double> fallback) {
        seen_.insert(key);
        if (!has(key)) return fallback;
        std::vector<double> out;
        std::stringstream ss(kv_->at(key));
        std::string item;
        while (std::getline(ss, item, ',')) {
            item = trim(item);
            if (!item.empty()) out.push_back(parse_double(key, item));
        }
        if (out.empty())
            throw std::invalid_argument("config [" + name_ + "] " + key + ": empty list");
        return out;
    }

    void finish() const {
        if (!kv_) return;
        for (const auto& [key, value] : *kv_)
            if (seen_.count(key) == 0)
                throw std::invalid_argument("config [" + name_ + "]: unknown key " + key);
    }

  private:
    double parse_double(const std::string& key, const std::string& v) const {
        try {
            std::size_t pos = 0;
            const double x = std::stod(v, &pos);
            if (pos != v.size()) throw std::invalid_argument("");
            return x;
        } catch (...) {
            throw std::invalid_argument("config [" + name_ + "] " + key + ": bad number " + v);
        }
    }

    long long parse_ll(const std::string& key, const std::string& v) const {
        try {
            std::size_t pos = 0;
            const long long x = std::stoll(v, &pos);
            if (pos != v.size()) throw std::invalid_argument("");
            return x;
        } catch (...) {
            throw std::invalid_argument("config [" + name_ + "] " + key + ": bad integer " + v);
        }
    }

    std::string name_;
    const std::map<std::string, std::string>* kv_ = nullptr;
    std::set<std::string> seen_;
};

}  // namespace

IniMap parse_ini(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open " + path);
    IniMap ini;
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto comment = line.find_first_of("#;");
        if (comment != std::string::npos) line = line.substr(0, comment);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw std::runtime_error(path + ":" + std::to_string(lineno) + ": bad section header");
            section = trim(line.substr(1, line.size() - 2));
            ini[section];
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": empty key");
        ini[section][key] = value;
    }
    return ini;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    const IniMap ini = parse_ini(path);
    const std::set<std::string> known = {"simulator", "model", "loss", "training", "error_profile"};
    for (const auto& [name, _] : ini)
        if (known.count(name) == 0)
            throw std::invalid_argument("config: unknown section [" + name + "]");

    ExperimentConfig cfg;

    Section sim(ini, "simulator");
    cfg.simulator.n_particles = sim.get_int("n_particles", cfg.simulator.n_particles);
    cfg.simulator.box_half_width = sim.get_double("box_half_width", cfg.simulator.box_half_width);
    cfg.simulator.dt_fine = sim.get_double("dt_fine", cfg.simulator.dt_fine);
    cfg.simulator.sample_every = sim.get_int("sample_every", cfg.simulator.sample_every);
    cfg.simulator.n_sampled_steps = sim.get_int("n_sampled_steps", cfg.simulator.n_sampled_steps);
    cfg.simulator.spring_constant = sim.get_double("spring_constant", cfg.simulator.spring_constant);
    cfg.simulator.charge_constant = sim.get_double("charge_constant", cfg.simulator.charge_constant);
    cfg.simulator.charge_sign = sim.get_double("charge_sign", cfg.simulator.charge_sign);
    cfg.simulator.softening = sim.get_double("softening", cfg.simulator.softening);
    cfg.simulator.init_pos_sigma = sim.get_double("init_pos_sigma", cfg.simulator.init_pos_sigma);
    cfg.simulator.init_speed = sim.get_double("init_speed", cfg.simulator.init_speed);
    cfg.simulator.spring_edge_prob = sim.get_double("spring_edge_prob", cfg.simulator.spring_edge_prob);
    cfg.simulator.charge_prob = sim.get_double("charge_prob", cfg.simulator.charge_prob);
    cfg.simulator.rng_seed = sim.get_u64("seed", cfg.simulator.rng_seed);
    sim.finish();
    cfg.simulator.validate();

    Section loss_s(ini, "loss");
    cfg.loss_cfg.kind = loss::kind_from_string(loss_s.get_string("kind", "fixed"));
    cfg.loss_cfg.fixed_sigma2 = loss_s.get_double("fixed_sigma2", cfg.loss_cfg.fixed_sigma2);
    cfg.loss_cfg.convexify = loss_s.get_bool("convexify", false);
    cfg.loss_cfg.lambda0 = loss_s.get_double("lambda0", cfg.loss_cfg.lambda0);
    cfg.loss_cfg.lambda_decay = loss_s.get_double("lambda_decay", cfg.loss_cfg.lambda_decay);
    const std::string kl_sign = loss_s.get_string("kl_sign", "vae");
    if (kl_sign == "vae")
        cfg.loss_cfg.kl_sign = loss::KlSign::Vae;
    else if (kl_sign == "literal")
        cfg.loss_cfg.kl_sign = loss::KlSign::Literal;
    else
        throw std::invalid_argument("config [loss] kl_sign: expected vae or literal");
    cfg.loss_cfg.niw.kappa0 = loss_s.get_double("niw_kappa0", cfg.loss_cfg.niw.kappa0);
    cfg.loss_cfg.niw.nu0 = loss_s.get_double("niw_nu0", cfg.loss_cfg.niw.nu0);
    cfg.loss_cfg.niw.psi0_diag = loss_s.get_double("niw_psi0", cfg.loss_cfg.niw.psi0_diag);
    const double mu0 = loss_s.get_double("niw_mu0", 0.0);
    cfg.loss_cfg.niw.mu0 = {mu0, mu0, mu0, mu0};
    cfg.prior_schedule_path = loss_s.get_string("prior_schedule", "");
    loss_s.finish();
    if (cfg.loss_cfg.fixed_sigma2 <= 0.0)
        throw std::invalid_argument("config [loss] fixed_sigma2 must be positive");
    if (cfg.loss_cfg.lambda0 < 0.0)
        throw std::invalid_argument("config [loss] lambda0 must be >= 0");

    Section model(ini, "model");
    cfg.model.n_particles = cfg.simulator.n_particles;
    cfg.model.hidden_dim = model.get_int("hidden_dim", cfg.model.hidden_dim);
    cfg.model.tau = model.get_double("tau", cfg.model.tau);
    cfg.model.encoder_window = model.get_int("encoder_window", cfg.model.encoder_window);
    cfg.model.decoder_window = model.get_int("decoder_window", cfg.model.decoder_window);
    cfg.model.teacher_force_every =
        model.get_int("teacher_force_every", cfg.model.teacher_force_every);
    const double sigma0_sq = model.get_double("sigma0_sq", 5e-5);
    cfg.model.sigma0 = std::sqrt(sigma0_sq);
    cfg.model.beta = model.get_double("beta", cfg.model.beta);
    cfg.model.sigma_mode = loss::sigma_mode_for(cfg.loss_cfg.kind);
    if (model.has("sigma_mode")) {
        const auto pinned = fnri::sigma_mode_from_string(model.get_string("sigma_mode", ""));
        if (pinned != cfg.model.sigma_mode)
            throw std::invalid_argument("config [model] sigma_mode conflicts with the loss kind");
    } else {
        model.get_string("sigma_mode", "");  // mark as known
    }
    model.finish();
    cfg.model.validate();
    cfg.loss_cfg.sigma0 = cfg.model.sigma0;

    Section training(ini, "training");
    cfg.training.epochs = training.get_int("epochs", cfg.training.epochs);
    cfg.training.batch_size = training.get_int("batch_size", cfg.training.batch_size);
    cfg.training.lr0 = training.get_double("lr0", cfg.training.lr0);
    cfg.training.lr_halving_epochs =
        training.get_int("lr_halving_epochs", cfg.training.lr_halving_epochs);
    cfg.training.seed = training.get_u64("seed", cfg.training.seed);
    training.finish();
    if (cfg.training.epochs < 1 || cfg.training.batch_size < 1 || cfg.training.lr0 <= 0.0 ||
        cfg.training.lr_halving_epochs < 1)
        throw std::invalid_argument("config [training]: invalid values");

    Section ep(ini, "error_profile");
    cfg.error_profile.dt_grid = ep.get_double_list("dt_grid", cfg.error_profile.dt_grid);
    cfg.error_profile.sigma_grid = ep.get_double_list("sigma_grid", cfg.error_profile.sigma_grid);
    cfg.error_profile.horizon = ep.get_int("horizon", cfg.error_profile.horizon);
    cfg.error_profile.n_runs = ep.get_int("n_runs", cfg.error_profile.n_runs);
    cfg.error_profile.reference_dt = ep.get_double("reference_dt", 0.0);
    cfg.error_profile.seed = ep.get_u64("seed", cfg.error_profile.seed);
    ep.finish();
    if (cfg.error_profile.reference_dt <= 0.0)
        cfg.error_profile.reference_dt = cfg.simulator.dt_fine / 2.0;
    if (cfg.error_profile.horizon < 1 || cfg.error_profile.n_runs < 1)
        throw std::invalid_argument("config [error_profile]: invalid values");

    return cfg;
}

}  // namespace trajlab::cfg
