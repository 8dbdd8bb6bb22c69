#include "trajlab/fnri.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "trajlab/checkpoint.hpp"

namespace trajlab::fnri {

int sigma_channels(SigmaMode mode) {
    switch (mode) {
        case SigmaMode::Fixed: return 0;
        case SigmaMode::Isotropic: return 1;
        case SigmaMode::SemiIsotropic: return 2;
        case SigmaMode::Anisotropic: return 4;
    }
    throw std::logic_error("sigma_channels: bad mode");
}

std::string to_string(SigmaMode mode) {
    switch (mode) {
        case SigmaMode::Fixed: return "fixed";
        case SigmaMode::Isotropic: return "isotropic";
        case SigmaMode::SemiIsotropic: return "semi-isotropic";
        case SigmaMode::Anisotropic: return "anisotropic";
    }
    throw std::logic_error("to_string: bad mode");
}

SigmaMode sigma_mode_from_string(const std::string& name) {
    if (name == "fixed") return SigmaMode::Fixed;
    if (name == "isotropic") return SigmaMode::Isotropic;
    if (name == "semi-isotropic") return SigmaMode::SemiIsotropic;
    if (name == "anisotropic") return SigmaMode::Anisotropic;
    throw std::invalid_argument("unknown sigma mode: " + name);
}

double SigmaTransform::raw0() const {
    // x = (1/beta) ln|e^(beta sigma0) - 1|
    return std::log(std::expm1(beta * sigma0)) / beta;
}

double SigmaTransform::apply_scalar(double raw) const {
    const double bx = beta * raw;
    return std::max(raw, 0.0) + std::log1p(std::exp(-std::abs(bx))) / beta;
}

ad::Tensor SigmaTransform::apply(const ad::Tensor& raw) const {
    return ad::softplus(raw, beta);
}

void ModelConfig::validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("ModelConfig: " + what); };
    if (n_particles < 2) fail("n_particles must be >= 2");
    if (hidden_dim < 1) fail("hidden_dim must be >= 1");
    if (n_edge_factors < 1 || edge_types_per_factor < 2) fail("bad factorisation");
    if (tau <= 0.0) fail("tau must be positive");
    if (encoder_window < 1 || decoder_window < 1) fail("windows must be >= 1");
    if (teacher_force_every < 1) fail("teacher_force_every must be >= 1");
    if (sigma0 <= 0.0) fail("sigma0 must be positive");
    if (beta <= 0.0) fail("beta must be positive");
}

void ordered_pairs(int n_particles, std::vector<int>& send, std::vector<int>& recv) {
    send.clear();
    recv.clear();
    for (int r = 0; r < n_particles; ++r)
        for (int s = 0; s < n_particles; ++s)
            if (s != r) {
                recv.push_back(r);
                send.push_back(s);
            }
}

void Model::pair_indices(int batch, std::vector<int>& send, std::vector<int>& recv) const {
    std::vector<int> s0, r0;
    ordered_pairs(cfg_.n_particles, s0, r0);
    const int e = static_cast<int>(s0.size());
    send.resize(static_cast<std::size_t>(batch) * e);
    recv.resize(static_cast<std::size_t>(batch) * e);
    for (int b = 0; b < batch; ++b)
        for (int k = 0; k < e; ++k) {
            send[static_cast<std::size_t>(b) * e + k] = b * cfg_.n_particles + s0[k];
            recv[static_cast<std::size_t>(b) * e + k] = b * cfg_.n_particles + r0[k];
        }
}

Model::Model(const ModelConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(init_seed);
    const int h = cfg_.hidden_dim;
    const int c = cfg_.state_channels();
    enc_emb_ = nn::MlpBlock(4 * cfg_.encoder_window, h, h, rng);
    enc_edge1_ = nn::MlpBlock(2 * h, h, h, rng);
    enc_node1_ = nn::MlpBlock(h, h, h, rng);
    enc_edge2_ = nn::MlpBlock(3 * h, h, h, rng);
    enc_out_ = nn::Linear(h, cfg_.total_edge_types(), rng);
    for (int k = 0; k < cfg_.total_edge_types(); ++k) {
        dec_msg_fc1_.emplace_back(2 * c, h, rng);
        dec_msg_fc2_.emplace_back(h, h, rng);
    }
    dec_out_fc1_ = nn::Linear(c + h, h, rng);
    dec_out_fc2_ = nn::Linear(h, h, rng);
    dec_out_fc3_ = nn::Linear(h, c, rng);
}

EdgePosterior Model::encode(const ad::Tensor& window, int batch, bool training) {
    const int n_nodes = batch * cfg_.n_particles;
    if (window.rows() != n_nodes || window.cols() != 4 * cfg_.encoder_window)
        throw std::invalid_argument("encode: window must be [batch*N, 4*encoder_window]");
    std::vector<int> send, recv;
    pair_indices(batch, send, recv);

    ad::Tensor h1 = enc_emb_.forward(window, training);
    ad::Tensor e_in = ad::concat_cols(std::vector<ad::Tensor>{ad::rows_select(h1, recv),
                                                              ad::rows_select(h1, send)});
    ad::Tensor h2 = enc_edge1_.forward(e_in, training);  // skip connection source
    ad::Tensor pooled = ad::scale(ad::rows_scatter_add(h2, recv, n_nodes),
                                  1.0 / (cfg_.n_particles - 1));
    ad::Tensor h3 = enc_node1_.forward(pooled, training);
    ad::Tensor e2_in = ad::concat_cols(std::vector<ad::Tensor>{ad::rows_select(h3, recv),
                                                               ad::rows_select(h3, send), h2});
    ad::Tensor h4 = enc_edge2_.forward(e2_in, training);
    ad::Tensor logits = enc_out_.forward(h4);

    EdgePosterior post;
    post.batch = batch;
    post.n_pairs = cfg_.n_pairs();
    for (int f = 0; f < cfg_.n_edge_factors; ++f)
        post.factor_logits.push_back(
            ad::slice_cols(logits, f * cfg_.edge_types_per_factor, cfg_.edge_types_per_factor));
    return post;
}

LatentSample Model::gumbel_sample(const EdgePosterior& posterior, double tau,
                                  std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(std::numeric_limits<double>::min(), 1.0);
    std::vector<ad::Tensor> noise;
    for (const ad::Tensor& logits : posterior.factor_logits) {
        std::vector<double> g(logits.numel());
        for (double& x : g) x = -std::log(-std::log(u(rng)));
        noise.push_back(ad::Tensor::from_values(logits.rows(), logits.cols(), std::move(g)));
    }
    return sample_with_noise(posterior, tau, noise);
}

LatentSample Model::sample_with_noise(const EdgePosterior& posterior, double tau,
                                      const std::vector<ad::Tensor>& noise) {
    if (tau <= 0.0) throw std::invalid_argument("gumbel sample: tau must be positive");
    if (noise.size() != posterior.factor_logits.size())
        throw std::invalid_argument("gumbel sample: one noise tensor per factor required");
    LatentSample sample;
    for (std::size_t f = 0; f < posterior.factor_logits.size(); ++f)
        sample.z.push_back(
            ad::softmax(ad::scale(ad::add(posterior.factor_logits[f], noise[f]), 1.0 / tau)));
    return sample;
}

LatentSample Model::hard_sample(const EdgePosterior& posterior) {
    LatentSample sample;
    for (const ad::Tensor& logits : posterior.factor_logits) {
        const int m = logits.rows(), n = logits.cols();
        auto z = ad::Tensor::zeros(m, n);
        auto zv = z.raw_values();
        for (int i = 0; i < m; ++i) {
            int best = 0;
            for (int j = 1; j < n; ++j)
                if (logits.at(i, j) > logits.at(i, best)) best = j;
            zv[static_cast<std::size_t>(i) * n + best] = 1.0;
        }
        sample.z.push_back(z);
    }
    return sample;
}

ad::Tensor Model::decode_step(const ad::Tensor& state, const ad::Tensor& z_cat, int batch,
                              bool training) {
    (void)training;
    const int n_nodes = batch * cfg_.n_particles;
    if (state.rows() != n_nodes || state.cols() != cfg_.state_channels())
        throw std::invalid_argument("decode_step: state must be [batch*N, state_channels]");
    std::vector<int> send, recv;
    pair_indices(batch, send, recv);

    ad::Tensor pre_msg = ad::concat_cols(std::vector<ad::Tensor>{ad::rows_select(state, recv),
                                                                 ad::rows_select(state, send)});
    ad::Tensor msg_sum;
    for (int k = 0; k < cfg_.total_edge_types(); ++k) {
        ad::Tensor m = ad::elu(dec_msg_fc1_[k].forward(pre_msg));
        m = ad::elu(dec_msg_fc2_[k].forward(m));
        // sampled edges modulate the pairwise functions
        ad::Tensor w = ad::repeat_cols(ad::slice_cols(z_cat, k, 1), cfg_.hidden_dim);
        ad::Tensor weighted = ad::mul(m, w);
        msg_sum = msg_sum.defined() ? ad::add(msg_sum, weighted) : weighted;
    }
    ad::Tensor agg = ad::scale(ad::rows_scatter_add(msg_sum, recv, n_nodes),
                               1.0 / (cfg_.n_particles - 1));
    ad::Tensor upd = ad::concat_cols(std::vector<ad::Tensor>{state, agg});
    upd = ad::elu(dec_out_fc1_.forward(upd));
    upd = ad::elu(dec_out_fc2_.forward(upd));
    ad::Tensor delta = dec_out_fc3_.forward(upd);
    return ad::add(state, delta);  // skip connection
}

Prediction Model::rollout(const ad::Tensor& init_phase, const LatentSample& z, int n_steps,
                          int batch, bool training, const std::vector<ad::Tensor>* teacher) {
    if (teacher && static_cast<int>(teacher->size()) < n_steps)
        throw std::invalid_argument("rollout: teacher shorter than n_steps");
    const int m = sigma_channels(cfg_.sigma_mode);
    const int n_nodes = batch * cfg_.n_particles;
    ad::Tensor z_cat = ad::concat_cols(z.z);
    const SigmaTransform transform = sigma_transform();

    ad::Tensor state =
        m > 0 ? ad::concat_cols(std::vector<ad::Tensor>{
                    init_phase, ad::Tensor::full(n_nodes, m, transform.raw0())})
              : init_phase;

    Prediction pred;
    for (int k = 0; k < n_steps; ++k) {
        if (teacher && k > 0 && k % cfg_.teacher_force_every == 0) {
            const ad::Tensor& truth = (*teacher)[k - 1];
            state = m > 0 ? ad::concat_cols(std::vector<ad::Tensor>{truth,
                                                                    ad::slice_cols(state, 4, m)})
                          : truth;
        }
        state = decode_step(state, z_cat, batch, training);
        pred.mean.push_back(ad::slice_cols(state, 0, 4));
        if (m > 0) {
            pred.sigma.push_back(transform.apply(ad::slice_cols(state, 4, m)));
        } else {
            pred.sigma.push_back(ad::Tensor::full(n_nodes, 1, cfg_.sigma0));
        }
    }
    return pred;
}

nn::NamedTensors Model::named_parameters() {
    nn::NamedTensors params;
    nn::NamedBuffers buffers;
    enc_emb_.collect("enc.emb", params, buffers);
    enc_edge1_.collect("enc.edge1", params, buffers);
    enc_node1_.collect("enc.node1", params, buffers);
    enc_edge2_.collect("enc.edge2", params, buffers);
    enc_out_.collect("enc.out", params);
    for (std::size_t k = 0; k < dec_msg_fc1_.size(); ++k) {
        dec_msg_fc1_[k].collect("dec.msg" + std::to_string(k) + ".fc1", params);
        dec_msg_fc2_[k].collect("dec.msg" + std::to_string(k) + ".fc2", params);
    }
    dec_out_fc1_.collect("dec.out.fc1", params);
    dec_out_fc2_.collect("dec.out.fc2", params);
    dec_out_fc3_.collect("dec.out.fc3", params);
    return params;
}

nn::NamedBuffers Model::named_buffers() {
    nn::NamedTensors params;
    nn::NamedBuffers buffers;
    enc_emb_.collect("enc.emb", params, buffers);
    enc_edge1_.collect("enc.edge1", params, buffers);
    enc_node1_.collect("enc.node1", params, buffers);
    enc_edge2_.collect("enc.edge2", params, buffers);
    return buffers;
}

void Model::save(const std::string& path, const std::string& extra_meta_json) const {
    io::Checkpoint ckpt;
    Model& self = const_cast<Model&>(*this);
    for (auto& [name, t] : self.named_parameters()) {
        io::Checkpoint::Array arr;
        arr.rows = t.rows();
        arr.cols = t.cols();
        arr.values.assign(t.values().begin(), t.values().end());
        ckpt.arrays.emplace(name, std::move(arr));
    }
    for (auto& [name, buf] : self.named_buffers()) {
        io::Checkpoint::Array arr;
        arr.rows = 1;
        arr.cols = static_cast<int>(buf->size());
        arr.values = *buf;
        ckpt.arrays.emplace(name, std::move(arr));
    }
    nlohmann::json meta;
    meta["model"] = {{"n_particles", cfg_.n_particles},
                     {"hidden_dim", cfg_.hidden_dim},
                     {"n_edge_factors", cfg_.n_edge_factors},
                     {"edge_types_per_factor", cfg_.edge_types_per_factor},
                     {"tau", cfg_.tau},
                     {"encoder_window", cfg_.encoder_window},
                     {"decoder_window", cfg_.decoder_window},
                     {"teacher_force_every", cfg_.teacher_force_every},
                     {"sigma_mode", to_string(cfg_.sigma_mode)},
                     {"sigma0", cfg_.sigma0},
                     {"beta", cfg_.beta}};
    if (!extra_meta_json.empty()) meta["extra"] = nlohmann::json::parse(extra_meta_json);
    ckpt.metadata_json = meta.dump();
    io::save_checkpoint(path, ckpt);
}

Model Model::load(const std::string& path, std::string* extra_meta_json) {
    const io::Checkpoint ckpt = io::load_checkpoint(path);
    const nlohmann::json meta = nlohmann::json::parse(ckpt.metadata_json);
    const auto& m = meta.at("model");
    ModelConfig cfg;
    cfg.n_particles = m.at("n_particles").get<int>();
    cfg.hidden_dim = m.at("hidden_dim").get<int>();
    cfg.n_edge_factors = m.at("n_edge_factors").get<int>();
    cfg.edge_types_per_factor = m.at("edge_types_per_factor").get<int>();
    cfg.tau = m.at("tau").get<double>();
    cfg.encoder_window = m.at("encoder_window").get<int>();
    cfg.decoder_window = m.at("decoder_window").get<int>();
    cfg.teacher_force_every = m.at("teacher_force_every").get<int>();
    cfg.sigma_mode = sigma_mode_from_string(m.at("sigma_mode").get<std::string>());
    cfg.sigma0 = m.at("sigma0").get<double>();
    cfg.beta = m.at("beta").get<double>();
    Model model(cfg, /*init_seed=*/0);
    for (auto& [name, t] : model.named_parameters()) {
        const auto it = ckpt.arrays.find(name);
        if (it == ckpt.arrays.end())
            throw std::runtime_error("Model::load: missing array " + name);
        if (it->second.values.size() != t.numel())
            throw std::runtime_error("Model::load: size mismatch for " + name);
        auto vals = t.raw_values();
        std::copy(it->second.values.begin(), it->second.values.end(), vals.begin());
    }
    for (auto& [name, buf] : model.named_buffers()) {
        const auto it = ckpt.arrays.find(name);
        if (it == ckpt.arrays.end())
            throw std::runtime_error("Model::load: missing buffer " + name);
        *buf = it->second.values;
    }
    if (extra_meta_json) {
        *extra_meta_json = meta.contains("extra") ? meta.at("extra").dump() : "";
    }
    return model;
}

}  // namespace trajlab::fnri
