#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "stids/matrix.hpp"

namespace stids {

// ---------------------------------------------------------------------------
// Backbone: a dense expansion layer reshapes tabular features into a
// multichannel 1-D image, a five-layer residual conv stack extracts the
// representation, and two heads emit a normalized contrastive embedding and
// class logits. Hand-rolled exact reverse-mode gradients throughout.
// ---------------------------------------------------------------------------

struct ModelConfig {
    size_t input_dim = 0;       // d; 0 until resolved against a dataset
    size_t expand_dim = 256;
    size_t channels = 16;       // image channels after reshape
    size_t length = 16;         // image length; channels * length == expand_dim
    std::array<size_t, 5> conv_channels = {32, 32, 32, 32, 64};
    size_t kernel_size = 3;     // odd, same-padding
    double dropout_rate = 0.3;  // after conv blocks 2 and 4
    size_t repr_dim = 64;       // must equal conv_channels[4] (global average pool)
    size_t proj_dim = 32;       // D_P, embedding size of z
    size_t num_classes = 0;     // M; 0 until resolved
    uint64_t seed = 1;

    void validate() const;
    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);
};

struct Tensor {
    std::string name;
    std::vector<size_t> shape;
    std::vector<double> v;

    Tensor() = default;
    Tensor(std::string n, std::vector<size_t> s);
    size_t size() const { return v.size(); }
};

struct ModelParams {
    Tensor expand_w, expand_b;
    std::array<Tensor, 5> conv_w;
    std::array<Tensor, 5> conv_b;
    Tensor proj_w1, proj_b1, proj_w2, proj_b2;
    Tensor head_w, head_b;

    std::vector<Tensor*> tensors();
    std::vector<const Tensor*> tensors() const;
    ModelParams zeros_like() const;
};

ModelParams init_params(const ModelConfig& cfg);

enum class RunMode { Train, Eval };

// Per-sample view of a forward pass.
struct ForwardOutput {
    std::vector<double> repr;    // r
    std::vector<double> z;       // normalized embedding
    std::vector<double> logits;
    std::vector<double> probs;
};

// Everything backward() needs, including the dropout masks actually used.
struct ForwardTrace {
    Matrix input;                      // [N x d]
    Matrix expanded;                   // [N x expand_dim], doubles as the reshaped image
    std::array<Matrix, 5> conv_pre;    // pre-activation per conv block
    std::array<Matrix, 5> conv_post;   // after relu (and dropout for blocks 2/4)
    Matrix drop_mask2, drop_mask4;     // scaled keep masks; empty when dropout inactive
    Matrix block4_input;               // conv_post[2] + conv_post[0] (the residual sum)
    Matrix repr;                       // [N x repr_dim]
    Matrix proj_hidden_pre, proj_hidden;
    Matrix z_pre;                      // embedding before normalization
    std::vector<double> z_norm;        // row norms of z_pre (floored)
    Matrix z;                          // [N x proj_dim], rows unit length
    Matrix logits, probs;              // [N x M]
    bool dropout_active = false;
};

ForwardTrace forward_batch(const ModelParams& params, const ModelConfig& cfg, const Matrix& batch,
                           bool dropout_active, uint64_t dropout_seed);

std::vector<ForwardOutput> forward(const ModelParams& params, const ModelConfig& cfg, const Matrix& batch,
                                   RunMode mode, uint64_t dropout_seed = 0);

// Exact parameter gradients given upstream dL/dz and dL/dlogits for the same
// batch and dropout masks recorded in `trace`.
ModelParams backward_batch(const ModelParams& params, const ModelConfig& cfg, const ForwardTrace& trace,
                           const Matrix& grad_z, const Matrix& grad_logits);

struct MCPrediction {
    std::vector<double> mean_probs;  // length M
    std::vector<double> std_dev;     // per-class std over passes, 1/T normalization
    size_t passes = 0;
};

// Mean and population std of per-pass class probabilities; the aggregation
// step of MC-dropout, exposed separately so it can be checked directly.
MCPrediction mc_aggregate(const std::vector<std::vector<double>>& per_pass_probs);

std::vector<MCPrediction> mc_predict(const ModelParams& params, const ModelConfig& cfg, const Matrix& batch,
                                     size_t passes, uint64_t seed);

struct AdamState {
    ModelParams m;
    ModelParams v;
    uint64_t step = 0;
    static AdamState init(const ModelParams& params);
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state, double lr,
               const AdamConfig& opt = {});

// Checkpoint container: config JSON + shape-prefixed little-endian f32
// tensors, optionally followed by optimizer state for resumable training.
void save_checkpoint(const std::string& path, const ModelConfig& cfg, const ModelParams& params,
                     const AdamState* state = nullptr);

struct Checkpoint {
    ModelConfig config;
    ModelParams params;
    std::optional<AdamState> state;
};
Checkpoint load_checkpoint(const std::string& path);

// Low-level layer primitives, exposed so gradient checks can exercise each
// operation in isolation.
namespace nn {

void dense_forward(const Matrix& x, const Tensor& w, const Tensor& b, Matrix& out);
void dense_backward(const Matrix& x, const Tensor& w, const Matrix& grad_out, Tensor& grad_w, Tensor& grad_b,
                    Matrix& grad_x);

// in/out are [C x L] slabs per sample stored in a Matrix row; these operate
// on one sample's slab.
void conv1d_forward(const double* in, size_t c_in, size_t length, const Tensor& w, const Tensor& b, double* out);
void conv1d_backward(const double* in, size_t c_in, size_t length, const Tensor& w, const double* grad_out,
                     double* grad_w, double* grad_b, double* grad_in);

void softmax_row(const double* logits, size_t m, double* probs);

// z = v / max(||v||, floor); returns the floored norm used.
double l2_normalize(const double* v, size_t n, double* z);
void l2_normalize_backward(const double* z, double norm, const double* grad_z, size_t n, double* grad_v);

}  // namespace nn

}  // namespace stids
