#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "trajlab/nn.hpp"
#include "trajlab/tensor.hpp"

namespace trajlab::fnri {

enum class SigmaMode { Fixed, Isotropic, SemiIsotropic, Anisotropic };

int sigma_channels(SigmaMode mode);  // 0, 1, 2, 4
std::string to_string(SigmaMode mode);
SigmaMode sigma_mode_from_string(const std::string& name);

/// Maps raw network outputs to positive sigma via softplus with sharpness
/// beta; raw0() is the inverse transform of sigma0, fed into the first
/// decoder step.
struct SigmaTransform {
    double sigma0 = 0.0;
    double beta = 1.0;

    double raw0() const;
    double apply_scalar(double raw) const;
    ad::Tensor apply(const ad::Tensor& raw) const;
};

struct ModelConfig {
    int n_particles = 5;
    int hidden_dim = 32;
    int n_edge_factors = 2;       // springs + charges
    int edge_types_per_factor = 2;  // on/off
    double tau = 0.5;
    int encoder_window = 50;
    int decoder_window = 50;
    int teacher_force_every = 10;
    SigmaMode sigma_mode = SigmaMode::Fixed;
    double sigma0 = 0.007071067811865475;  // sqrt(5e-5)
    double beta = 5.0;

    int n_pairs() const { return n_particles * (n_particles - 1); }  // ordered
    int total_edge_types() const { return n_edge_factors * edge_types_per_factor; }
    int state_channels() const { return 4 + sigma_channels(sigma_mode); }
    void validate() const;
};

/// Per-factor edge-type logits for every ordered particle pair,
/// rows = batch * n_pairs (receiver-major pair order).
struct EdgePosterior {
    std::vector<ad::Tensor> factor_logits;
    int batch = 0;
    int n_pairs = 0;
};

/// Relaxed one-hot sample per factor and pair.
struct LatentSample {
    std::vector<ad::Tensor> z;
};

/// Mean phase-point sequence plus per-step sigma field. sigma tensors carry
/// sigma_channels(mode) columns; in Fixed mode they are constant sigma0 and
/// carry no gradient.
struct Prediction {
    std::vector<ad::Tensor> mean;
    std::vector<ad::Tensor> sigma;
};

class Model {
  public:
    Model(const ModelConfig& cfg, std::uint64_t init_seed);

    const ModelConfig& config() const { return cfg_; }

    // window: [batch*N, 4*encoder_window], normalized coordinates.
    EdgePosterior encode(const ad::Tensor& window, int batch, bool training);

    static LatentSample gumbel_sample(const EdgePosterior& posterior, double tau,
                                      std::mt19937_64& rng);
    // Deterministic variant with injected Gumbel noise (one tensor per factor).
    static LatentSample sample_with_noise(const EdgePosterior& posterior, double tau,
                                          const std::vector<ad::Tensor>& noise);
    static LatentSample hard_sample(const EdgePosterior& posterior);

    // One decoder step on the full state (phase + raw sigma channels).
    ad::Tensor decode_step(const ad::Tensor& state, const ad::Tensor& z_cat, int batch,
                           bool training);

    // teacher, when given, holds the ground-truth state for each predicted
    // step; the phase channels are reset to it every teacher_force_every
    // steps.
    Prediction rollout(const ad::Tensor& init_phase, const LatentSample& z, int n_steps, int batch,
                       bool training, const std::vector<ad::Tensor>* teacher = nullptr);

    SigmaTransform sigma_transform() const { return {cfg_.sigma0, cfg_.beta}; }

    nn::NamedTensors named_parameters();
    nn::NamedBuffers named_buffers();

    void save(const std::string& path, const std::string& extra_meta_json = "") const;
    static Model load(const std::string& path, std::string* extra_meta_json = nullptr);

  private:
    ModelConfig cfg_;

    nn::MlpBlock enc_emb_, enc_edge1_, enc_node1_, enc_edge2_;
    nn::Linear enc_out_;
    std::vector<nn::Linear> dec_msg_fc1_, dec_msg_fc2_;
    nn::Linear dec_out_fc1_, dec_out_fc2_, dec_out_fc3_;

    void pair_indices(int batch, std::vector<int>& send, std::vector<int>& recv) const;
};

// Edge index helpers shared with evaluation code: ordered pairs in
// receiver-major order, i.e. (recv, send) for recv in [0,N), send != recv.
void ordered_pairs(int n_particles, std::vector<int>& send, std::vector<int>& recv);

}  // namespace trajlab::fnri
