#include "stids/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "stids/errors.hpp"
#include "stids/rng.hpp"

namespace stids {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
    if (input_dim < 1) throw ConfigError("model: input_dim must be >= 1");
    if (expand_dim < 1 || channels < 1 || length < 1) throw ConfigError("model: dims must be >= 1");
    if (channels * length != expand_dim)
        throw ConfigError("model: channels * length must equal expand_dim (" + std::to_string(channels) + "*" +
                          std::to_string(length) + " != " + std::to_string(expand_dim) + ")");
    for (size_t c : conv_channels)
        if (c < 1) throw ConfigError("model: conv channel counts must be >= 1");
    if (conv_channels[0] != conv_channels[2])
        throw ConfigError("model: conv_channels[0] and [2] must match for the residual skip");
    if (kernel_size < 1 || kernel_size % 2 == 0) throw ConfigError("model: kernel_size must be odd");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("model: dropout_rate must be in [0, 1)");
    if (repr_dim != conv_channels[4])
        throw ConfigError("model: repr_dim must equal the last conv channel count (global average pooling)");
    if (proj_dim < 1) throw ConfigError("model: proj_dim must be >= 1");
    if (num_classes < 2) throw ConfigError("model: num_classes must be >= 2");
}

std::string ModelConfig::to_json() const {
    json j;
    j["input_dim"] = input_dim;
    j["expand_dim"] = expand_dim;
    j["channels"] = channels;
    j["length"] = length;
    j["conv_channels"] = conv_channels;
    j["kernel_size"] = kernel_size;
    j["dropout_rate"] = dropout_rate;
    j["repr_dim"] = repr_dim;
    j["proj_dim"] = proj_dim;
    j["num_classes"] = num_classes;
    j["seed"] = seed;
    return j.dump(2);
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("model config parse failure: ") + e.what());
    }
    ModelConfig c;
    if (j.contains("input_dim")) c.input_dim = j["input_dim"].get<size_t>();
    if (j.contains("expand_dim")) c.expand_dim = j["expand_dim"].get<size_t>();
    if (j.contains("channels")) c.channels = j["channels"].get<size_t>();
    if (j.contains("length")) c.length = j["length"].get<size_t>();
    if (j.contains("conv_channels")) {
        auto v = j["conv_channels"].get<std::vector<size_t>>();
        if (v.size() != 5) throw ConfigError("model: conv_channels must list exactly 5 layers");
        std::copy(v.begin(), v.end(), c.conv_channels.begin());
    }
    if (j.contains("kernel_size")) c.kernel_size = j["kernel_size"].get<size_t>();
    if (j.contains("dropout_rate")) c.dropout_rate = j["dropout_rate"].get<double>();
    if (j.contains("repr_dim")) c.repr_dim = j["repr_dim"].get<size_t>();
    if (j.contains("proj_dim")) c.proj_dim = j["proj_dim"].get<size_t>();
    if (j.contains("num_classes")) c.num_classes = j["num_classes"].get<size_t>();
    if (j.contains("seed")) c.seed = j["seed"].get<uint64_t>();
    return c;
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

Tensor::Tensor(std::string n, std::vector<size_t> s) : name(std::move(n)), shape(std::move(s)) {
    size_t total = 1;
    for (size_t d : shape) total *= d;
    v.assign(total, 0.0);
}

std::vector<Tensor*> ModelParams::tensors() {
    std::vector<Tensor*> out = {&expand_w, &expand_b};
    for (auto& t : conv_w) out.push_back(&t);
    for (auto& t : conv_b) out.push_back(&t);
    out.push_back(&proj_w1);
    out.push_back(&proj_b1);
    out.push_back(&proj_w2);
    out.push_back(&proj_b2);
    out.push_back(&head_w);
    out.push_back(&head_b);
    return out;
}

std::vector<const Tensor*> ModelParams::tensors() const {
    auto* self = const_cast<ModelParams*>(this);
    std::vector<const Tensor*> out;
    for (auto* t : self->tensors()) out.push_back(t);
    return out;
}

ModelParams ModelParams::zeros_like() const {
    ModelParams g = *this;
    for (auto* t : g.tensors()) std::fill(t->v.begin(), t->v.end(), 0.0);
    return g;
}

namespace {

ModelParams make_param_shapes(const ModelConfig& cfg) {
    ModelParams p;
    p.expand_w = Tensor("expand.w", {cfg.expand_dim, cfg.input_dim});
    p.expand_b = Tensor("expand.b", {cfg.expand_dim});
    size_t in_ch = cfg.channels;
    for (size_t i = 0; i < 5; ++i) {
        size_t out_ch = cfg.conv_channels[i];
        p.conv_w[i] = Tensor("conv" + std::to_string(i + 1) + ".w", {out_ch, in_ch, cfg.kernel_size});
        p.conv_b[i] = Tensor("conv" + std::to_string(i + 1) + ".b", {out_ch});
        in_ch = out_ch;
    }
    p.proj_w1 = Tensor("proj.w1", {cfg.repr_dim, cfg.repr_dim});
    p.proj_b1 = Tensor("proj.b1", {cfg.repr_dim});
    p.proj_w2 = Tensor("proj.w2", {cfg.proj_dim, cfg.repr_dim});
    p.proj_b2 = Tensor("proj.b2", {cfg.proj_dim});
    p.head_w = Tensor("head.w", {cfg.num_classes, cfg.repr_dim});
    p.head_b = Tensor("head.b", {cfg.num_classes});
    return p;
}

// Uniform with the ReLU-gain fan-in bound sqrt(6/fan_in); keeps activation
// scale roughly constant through the conv stack so the normalized embedding
// is well-conditioned from the first step.
void fill_fan_in_uniform(Tensor& t, size_t fan_in, std::mt19937_64& rng) {
    double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (double& x : t.v) x = uniform_range(rng, -bound, bound);
}

}  // namespace

ModelParams init_params(const ModelConfig& cfg) {
    cfg.validate();
    ModelParams p = make_param_shapes(cfg);
    auto rng = seeded_rng(derive_seed(cfg.seed, 0x494e4954 /* init stream */));
    fill_fan_in_uniform(p.expand_w, cfg.input_dim, rng);
    size_t in_ch = cfg.channels;
    for (size_t i = 0; i < 5; ++i) {
        fill_fan_in_uniform(p.conv_w[i], in_ch * cfg.kernel_size, rng);
        in_ch = cfg.conv_channels[i];
    }
    fill_fan_in_uniform(p.proj_w1, cfg.repr_dim, rng);
    fill_fan_in_uniform(p.proj_w2, cfg.repr_dim, rng);
    fill_fan_in_uniform(p.head_w, cfg.repr_dim, rng);
    // Biases stay zero.
    return p;
}

// ---------------------------------------------------------------------------
// Layer primitives
// ---------------------------------------------------------------------------

namespace nn {

void dense_forward(const Matrix& x, const Tensor& w, const Tensor& b, Matrix& out) {
    const size_t out_dim = w.shape[0];
    const size_t in_dim = w.shape[1];
    out = Matrix(x.rows, out_dim);
    for (size_t r = 0; r < x.rows; ++r) {
        const double* xr = x.data.data() + r * in_dim;
        double* or_ = out.data.data() + r * out_dim;
        for (size_t o = 0; o < out_dim; ++o) {
            const double* wr = w.v.data() + o * in_dim;
            double acc = b.v[o];
            for (size_t i = 0; i < in_dim; ++i) acc += wr[i] * xr[i];
            or_[o] = acc;
        }
    }
}

void dense_backward(const Matrix& x, const Tensor& w, const Matrix& grad_out, Tensor& grad_w, Tensor& grad_b,
                    Matrix& grad_x) {
    const size_t out_dim = w.shape[0];
    const size_t in_dim = w.shape[1];
    grad_x = Matrix(x.rows, in_dim);
    for (size_t r = 0; r < x.rows; ++r) {
        const double* xr = x.data.data() + r * in_dim;
        const double* gr = grad_out.data.data() + r * out_dim;
        double* gx = grad_x.data.data() + r * in_dim;
        for (size_t o = 0; o < out_dim; ++o) {
            const double g = gr[o];
            if (g == 0.0) continue;
            double* gw = grad_w.v.data() + o * in_dim;
            const double* wr = w.v.data() + o * in_dim;
            grad_b.v[o] += g;
            for (size_t i = 0; i < in_dim; ++i) {
                gw[i] += g * xr[i];
                gx[i] += g * wr[i];
            }
        }
    }
}

void conv1d_forward(const double* in, size_t c_in, size_t length, const Tensor& w, const Tensor& b, double* out) {
    const size_t c_out = w.shape[0];
    const size_t k = w.shape[2];
    const long pad = static_cast<long>((k - 1) / 2);
    for (size_t o = 0; o < c_out; ++o) {
        double* out_row = out + o * length;
        for (size_t t = 0; t < length; ++t) out_row[t] = b.v[o];
        for (size_t i = 0; i < c_in; ++i) {
            const double* in_row = in + i * length;
            const double* wk = w.v.data() + (o * c_in + i) * k;
            for (size_t q = 0; q < k; ++q) {
                const double wq = wk[q];
                if (wq == 0.0) continue;
                const long shift = static_cast<long>(q) - pad;
                const long lo = std::max<long>(0, -shift);
                const long hi = std::min<long>(static_cast<long>(length), static_cast<long>(length) - shift);
                for (long t = lo; t < hi; ++t) out_row[t] += wq * in_row[t + shift];
            }
        }
    }
}

void conv1d_backward(const double* in, size_t c_in, size_t length, const Tensor& w, const double* grad_out,
                     double* grad_w, double* grad_b, double* grad_in) {
    const size_t c_out = w.shape[0];
    const size_t k = w.shape[2];
    const long pad = static_cast<long>((k - 1) / 2);
    for (size_t o = 0; o < c_out; ++o) {
        const double* go = grad_out + o * length;
        if (grad_b) {
            double acc = 0.0;
            for (size_t t = 0; t < length; ++t) acc += go[t];
            grad_b[o] += acc;
        }
        for (size_t i = 0; i < c_in; ++i) {
            const double* in_row = in + i * length;
            const double* wk = w.v.data() + (o * c_in + i) * k;
            double* gw = grad_w ? grad_w + (o * c_in + i) * k : nullptr;
            double* gi = grad_in ? grad_in + i * length : nullptr;
            for (size_t q = 0; q < k; ++q) {
                const long shift = static_cast<long>(q) - pad;
                const long lo = std::max<long>(0, -shift);
                const long hi = std::min<long>(static_cast<long>(length), static_cast<long>(length) - shift);
                if (gw) {
                    double acc = 0.0;
                    for (long t = lo; t < hi; ++t) acc += go[t] * in_row[t + shift];
                    gw[q] += acc;
                }
                if (gi) {
                    const double wq = wk[q];
                    if (wq != 0.0)
                        for (long t = lo; t < hi; ++t) gi[t + shift] += wq * go[t];
                }
            }
        }
    }
}

void softmax_row(const double* logits, size_t m, double* probs) {
    double mx = logits[0];
    for (size_t c = 1; c < m; ++c) mx = std::max(mx, logits[c]);
    double sum = 0.0;
    for (size_t c = 0; c < m; ++c) {
        probs[c] = std::exp(logits[c] - mx);
        sum += probs[c];
    }
    for (size_t c = 0; c < m; ++c) probs[c] /= sum;
}

double l2_normalize(const double* v, size_t n, double* z) {
    double sq = 0.0;
    for (size_t i = 0; i < n; ++i) sq += v[i] * v[i];
    double norm = std::sqrt(sq);
    if (norm < 1e-12) norm = 1e-12;
    for (size_t i = 0; i < n; ++i) z[i] = v[i] / norm;
    return norm;
}

void l2_normalize_backward(const double* z, double norm, const double* grad_z, size_t n, double* grad_v) {
    double dot = 0.0;
    for (size_t i = 0; i < n; ++i) dot += grad_z[i] * z[i];
    for (size_t i = 0; i < n; ++i) grad_v[i] = (grad_z[i] - z[i] * dot) / norm;
}

}  // namespace nn

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

namespace {

void relu_inplace(Matrix& m) {
    for (double& v : m.data)
        if (v < 0.0) v = 0.0;
}

Matrix make_dropout_mask(size_t rows, size_t cols, double rate, std::mt19937_64& rng) {
    Matrix mask(rows, cols, 1.0);
    if (rate <= 0.0) return mask;
    const double keep = 1.0 - rate;
    const double scale = 1.0 / keep;
    for (double& v : mask.data) v = (uniform01(rng) < keep) ? scale : 0.0;
    return mask;
}

void apply_mask(Matrix& m, const Matrix& mask) {
    for (size_t i = 0; i < m.data.size(); ++i) m.data[i] *= mask.data[i];
}

}  // namespace

ForwardTrace forward_batch(const ModelParams& params, const ModelConfig& cfg, const Matrix& batch,
                           bool dropout_active, uint64_t dropout_seed) {
    cfg.validate();
    if (batch.cols != cfg.input_dim)
        throw std::runtime_error("forward: batch has " + std::to_string(batch.cols) + " features, model expects " +
                                 std::to_string(cfg.input_dim));
    for (double v : batch.data)
        if (!std::isfinite(v)) throw std::runtime_error("forward: non-finite input value");

    const size_t n = batch.rows;
    const size_t len = cfg.length;

    ForwardTrace tr;
    tr.input = batch;
    tr.dropout_active = dropout_active && cfg.dropout_rate > 0.0;

    // Expansion layer; its output is the reshaped [channels x length] image.
    nn::dense_forward(batch, params.expand_w, params.expand_b, tr.expanded);

    auto rng = seeded_rng(derive_seed(dropout_seed, 0x44524f50 /* dropout stream */));

    const Matrix* cur = &tr.expanded;
    size_t in_ch = cfg.channels;
    for (size_t layer = 0; layer < 5; ++layer) {
        const size_t out_ch = cfg.conv_channels[layer];
        Matrix pre(n, out_ch * len);
        for (size_t r = 0; r < n; ++r)
            nn::conv1d_forward(cur->data.data() + r * in_ch * len, in_ch, len, params.conv_w[layer],
                               params.conv_b[layer], pre.data.data() + r * out_ch * len);
        tr.conv_pre[layer] = pre;
        Matrix post = std::move(pre);
        relu_inplace(post);
        if (layer == 1 || layer == 3) {
            Matrix& mask = (layer == 1) ? tr.drop_mask2 : tr.drop_mask4;
            if (tr.dropout_active) {
                mask = make_dropout_mask(n, out_ch * len, cfg.dropout_rate, rng);
                apply_mask(post, mask);
            }
        }
        tr.conv_post[layer] = std::move(post);
        if (layer == 2) {
            // Residual skip: block-1 output joins the block-4 input.
            tr.block4_input = tr.conv_post[2];
            for (size_t i = 0; i < tr.block4_input.data.size(); ++i)
                tr.block4_input.data[i] += tr.conv_post[0].data[i];
            cur = &tr.block4_input;
        } else {
            cur = &tr.conv_post[layer];
        }
        in_ch = out_ch;
    }

    // Global average pooling over length.
    const size_t repr = cfg.repr_dim;
    tr.repr = Matrix(n, repr);
    const Matrix& a5 = tr.conv_post[4];
    for (size_t r = 0; r < n; ++r) {
        for (size_t c = 0; c < repr; ++c) {
            const double* row = a5.data.data() + (r * repr + c) * len;
            double acc = 0.0;
            for (size_t t = 0; t < len; ++t) acc += row[t];
            tr.repr.at(r, c) = acc / static_cast<double>(len);
        }
    }

    // Projection head -> normalized embedding.
    nn::dense_forward(tr.repr, params.proj_w1, params.proj_b1, tr.proj_hidden_pre);
    tr.proj_hidden = tr.proj_hidden_pre;
    relu_inplace(tr.proj_hidden);
    nn::dense_forward(tr.proj_hidden, params.proj_w2, params.proj_b2, tr.z_pre);
    tr.z = Matrix(n, cfg.proj_dim);
    tr.z_norm.resize(n);
    for (size_t r = 0; r < n; ++r)
        tr.z_norm[r] = nn::l2_normalize(tr.z_pre.data.data() + r * cfg.proj_dim, cfg.proj_dim,
                                        tr.z.data.data() + r * cfg.proj_dim);

    // Classification head.
    nn::dense_forward(tr.repr, params.head_w, params.head_b, tr.logits);
    tr.probs = Matrix(n, cfg.num_classes);
    for (size_t r = 0; r < n; ++r)
        nn::softmax_row(tr.logits.data.data() + r * cfg.num_classes, cfg.num_classes,
                        tr.probs.data.data() + r * cfg.num_classes);
    return tr;
}

std::vector<ForwardOutput> forward(const ModelParams& params, const ModelConfig& cfg, const Matrix& batch,
                                   RunMode mode, uint64_t dropout_seed) {
    ForwardTrace tr = forward_batch(params, cfg, batch, mode == RunMode::Train, dropout_seed);
    std::vector<ForwardOutput> out(batch.rows);
    for (size_t r = 0; r < batch.rows; ++r) {
        auto& o = out[r];
        auto take = [&](const Matrix& m) {
            return std::vector<double>(m.data.begin() + r * m.cols, m.data.begin() + (r + 1) * m.cols);
        };
        o.repr = take(tr.repr);
        o.z = take(tr.z);
        o.logits = take(tr.logits);
        o.probs = take(tr.probs);
    }
    return out;
}

namespace {

// dPre = dPost o relu'(pre)
void relu_backward_inplace(Matrix& grad, const Matrix& pre) {
    for (size_t i = 0; i < grad.data.size(); ++i)
        if (pre.data[i] <= 0.0) grad.data[i] = 0.0;
}

}  // namespace

ModelParams backward_batch(const ModelParams& params, const ModelConfig& cfg, const ForwardTrace& trace,
                           const Matrix& grad_z, const Matrix& grad_logits) {
    const size_t n = trace.input.rows;
    if (grad_z.rows != n || grad_logits.rows != n)
        throw std::runtime_error("backward: upstream gradient batch size mismatch");
    if (grad_z.cols != cfg.proj_dim || grad_logits.cols != cfg.num_classes)
        throw std::runtime_error("backward: upstream gradient width mismatch");

    ModelParams g = make_param_shapes(cfg);
    const size_t len = cfg.length;

    // Heads.
    Matrix grad_repr_head;
    nn::dense_backward(trace.repr, params.head_w, grad_logits, g.head_w, g.head_b, grad_repr_head);

    Matrix grad_z_pre(n, cfg.proj_dim);
    for (size_t r = 0; r < n; ++r)
        nn::l2_normalize_backward(trace.z.data.data() + r * cfg.proj_dim, trace.z_norm[r],
                                  grad_z.data.data() + r * cfg.proj_dim, cfg.proj_dim,
                                  grad_z_pre.data.data() + r * cfg.proj_dim);

    Matrix grad_hidden;
    nn::dense_backward(trace.proj_hidden, params.proj_w2, grad_z_pre, g.proj_w2, g.proj_b2, grad_hidden);
    relu_backward_inplace(grad_hidden, trace.proj_hidden_pre);
    Matrix grad_repr_proj;
    nn::dense_backward(trace.repr, params.proj_w1, grad_hidden, g.proj_w1, g.proj_b1, grad_repr_proj);

    Matrix grad_repr(n, cfg.repr_dim);
    for (size_t i = 0; i < grad_repr.data.size(); ++i)
        grad_repr.data[i] = grad_repr_head.data[i] + grad_repr_proj.data[i];

    // Un-pool into the conv-5 activation.
    Matrix grad_a5(n, cfg.repr_dim * len);
    for (size_t r = 0; r < n; ++r)
        for (size_t c = 0; c < cfg.repr_dim; ++c) {
            const double gv = grad_repr.at(r, c) / static_cast<double>(len);
            double* row = grad_a5.data.data() + (r * cfg.repr_dim + c) * len;
            for (size_t t = 0; t < len; ++t) row[t] = gv;
        }

    // Conv stack, reversed. Inputs per layer:
    //   conv1 <- expanded, conv2 <- post1, conv3 <- post2,
    //   conv4 <- block4_input, conv5 <- post4.
    const Matrix* inputs[5] = {&trace.expanded, &trace.conv_post[0], &trace.conv_post[1], &trace.block4_input,
                               &trace.conv_post[3]};
    const size_t in_chs[5] = {cfg.channels, cfg.conv_channels[0], cfg.conv_channels[1], cfg.conv_channels[2],
                              cfg.conv_channels[3]};

    auto conv_back = [&](size_t layer, Matrix& grad_post, Matrix& grad_in) {
        // grad_post is d(loss)/d(layer post-activation chain output before
        // any dropout applied later in the trace ordering); apply dropout
        // mask then relu mask, then the conv backward.
        if (layer == 1 && trace.dropout_active) apply_mask(grad_post, trace.drop_mask2);
        if (layer == 3 && trace.dropout_active) apply_mask(grad_post, trace.drop_mask4);
        relu_backward_inplace(grad_post, trace.conv_pre[layer]);
        grad_in = Matrix(n, in_chs[layer] * len);
        for (size_t r = 0; r < n; ++r)
            nn::conv1d_backward(inputs[layer]->data.data() + r * in_chs[layer] * len, in_chs[layer], len,
                                params.conv_w[layer], grad_post.data.data() + r * cfg.conv_channels[layer] * len,
                                g.conv_w[layer].v.data(), g.conv_b[layer].v.data(),
                                grad_in.data.data() + r * in_chs[layer] * len);
    };

    Matrix grad_a4, grad_b4in, grad_a2, grad_a1, grad_img;
    conv_back(4, grad_a5, grad_a4);
    conv_back(3, grad_a4, grad_b4in);
    // The residual sum routes the same gradient into conv-3's output and
    // block-1's output.
    Matrix grad_a3 = grad_b4in;
    conv_back(2, grad_a3, grad_a2);
    conv_back(1, grad_a2, grad_a1);
    for (size_t i = 0; i < grad_a1.data.size(); ++i) grad_a1.data[i] += grad_b4in.data[i];
    conv_back(0, grad_a1, grad_img);

    Matrix grad_input_unused;
    nn::dense_backward(trace.input, params.expand_w, grad_img, g.expand_w, g.expand_b, grad_input_unused);
    return g;
}

// ---------------------------------------------------------------------------
// MC dropout
// ---------------------------------------------------------------------------

MCPrediction mc_aggregate(const std::vector<std::vector<double>>& per_pass_probs) {
    if (per_pass_probs.empty()) throw std::runtime_error("mc_aggregate: need at least one pass");
    const size_t t_count = per_pass_probs.size();
    const size_t m = per_pass_probs[0].size();
    MCPrediction out;
    out.passes = t_count;
    out.mean_probs.assign(m, 0.0);
    out.std_dev.assign(m, 0.0);
    for (const auto& p : per_pass_probs) {
        if (p.size() != m) throw std::runtime_error("mc_aggregate: inconsistent class counts");
        for (size_t c = 0; c < m; ++c) out.mean_probs[c] += p[c];
    }
    for (size_t c = 0; c < m; ++c) out.mean_probs[c] /= static_cast<double>(t_count);
    for (const auto& p : per_pass_probs)
        for (size_t c = 0; c < m; ++c) {
            const double d = p[c] - out.mean_probs[c];
            out.std_dev[c] += d * d;
        }
    for (size_t c = 0; c < m; ++c) out.std_dev[c] = std::sqrt(out.std_dev[c] / static_cast<double>(t_count));
    return out;
}

std::vector<MCPrediction> mc_predict(const ModelParams& params, const ModelConfig& cfg, const Matrix& batch,
                                     size_t passes, uint64_t seed) {
    if (passes < 1) throw std::runtime_error("mc_predict: passes must be >= 1");
    const size_t n = batch.rows;
    const size_t m = cfg.num_classes;

    // No dropout means every stochastic pass is the deterministic forward
    // pass; the spread is exactly zero.
    if (cfg.dropout_rate <= 0.0) {
        ForwardTrace tr = forward_batch(params, cfg, batch, false, 0);
        std::vector<MCPrediction> out(n);
        for (size_t r = 0; r < n; ++r) {
            out[r].passes = passes;
            out[r].mean_probs.assign(tr.probs.row(r).begin(), tr.probs.row(r).end());
            out[r].std_dev.assign(m, 0.0);
        }
        return out;
    }

    std::vector<std::vector<std::vector<double>>> collected(n);
    for (auto& c : collected) c.reserve(passes);
    for (size_t t = 0; t < passes; ++t) {
        ForwardTrace tr = forward_batch(params, cfg, batch, true, derive_seed(seed, 0x4d43 /* mc */, t));
        for (size_t r = 0; r < n; ++r)
            collected[r].emplace_back(tr.probs.row(r).begin(), tr.probs.row(r).end());
    }
    std::vector<MCPrediction> out(n);
    for (size_t r = 0; r < n; ++r) out[r] = mc_aggregate(collected[r]);
    return out;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

AdamState AdamState::init(const ModelParams& params) {
    AdamState s;
    s.m = params.zeros_like();
    s.v = params.zeros_like();
    s.step = 0;
    return s;
}

void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state, double lr, const AdamConfig& opt) {
    auto p_ts = params.tensors();
    auto g_ts = const_cast<ModelParams&>(grads).tensors();
    auto m_ts = state.m.tensors();
    auto v_ts = state.v.tensors();
    for (size_t i = 0; i < p_ts.size(); ++i) {
        if (g_ts[i]->v.size() != p_ts[i]->v.size())
            throw std::runtime_error("adam_step: gradient shape mismatch for " + p_ts[i]->name);
        for (double gv : g_ts[i]->v)
            if (!std::isfinite(gv))
                throw std::runtime_error("adam_step: non-finite gradient in tensor " + p_ts[i]->name);
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
    for (size_t i = 0; i < p_ts.size(); ++i) {
        auto& p = p_ts[i]->v;
        const auto& g = g_ts[i]->v;
        auto& m = m_ts[i]->v;
        auto& v = v_ts[i]->v;
        for (size_t j = 0; j < p.size(); ++j) {
            m[j] = opt.beta1 * m[j] + (1.0 - opt.beta1) * g[j];
            v[j] = opt.beta2 * v[j] + (1.0 - opt.beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p[j] -= lr * mhat / (std::sqrt(vhat) + opt.epsilon);
        }
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[4] = {'S', 'T', 'C', 'K'};
constexpr uint32_t kCheckpointVersion = 1;

template <typename T>
void wle(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T rle(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

void write_tensor(std::ostream& out, const Tensor& t) {
    wle<uint32_t>(out, static_cast<uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    wle<uint32_t>(out, static_cast<uint32_t>(t.shape.size()));
    for (size_t d : t.shape) wle<uint64_t>(out, d);
    for (double v : t.v) wle<float>(out, static_cast<float>(v));
}

void read_tensor_into(std::istream& in, Tensor& t) {
    uint32_t name_len = rle<uint32_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (name != t.name) throw std::runtime_error("checkpoint: expected tensor " + t.name + ", found " + name);
    uint32_t ndim = rle<uint32_t>(in);
    std::vector<size_t> shape(ndim);
    for (auto& d : shape) d = rle<uint64_t>(in);
    if (shape != t.shape) throw std::runtime_error("checkpoint: shape mismatch for tensor " + t.name);
    for (double& v : t.v) v = static_cast<double>(rle<float>(in));
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelConfig& cfg, const ModelParams& params,
                     const AdamState* state) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write(kCheckpointMagic, 4);
    wle<uint32_t>(out, kCheckpointVersion);
    const std::string cfg_json = cfg.to_json();
    wle<uint64_t>(out, cfg_json.size());
    out.write(cfg_json.data(), static_cast<std::streamsize>(cfg_json.size()));
    auto ts = const_cast<ModelParams&>(params).tensors();
    wle<uint32_t>(out, static_cast<uint32_t>(ts.size()));
    for (const auto* t : ts) write_tensor(out, *t);
    wle<uint8_t>(out, state ? 1 : 0);
    if (state) {
        wle<uint64_t>(out, state->step);
        for (const auto* t : const_cast<ModelParams&>(state->m).tensors()) write_tensor(out, *t);
        for (const auto* t : const_cast<ModelParams&>(state->v).tensors()) write_tensor(out, *t);
    }
    if (!out) throw std::runtime_error("write failure on checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw std::runtime_error(path + ": not a checkpoint file");
    uint32_t version = rle<uint32_t>(in);
    if (version != kCheckpointVersion) throw std::runtime_error(path + ": unsupported checkpoint version");
    uint64_t json_len = rle<uint64_t>(in);
    std::string cfg_json(json_len, '\0');
    in.read(cfg_json.data(), static_cast<std::streamsize>(json_len));
    if (!in) throw std::runtime_error(path + ": truncated config");

    Checkpoint ck;
    ck.config = ModelConfig::from_json(cfg_json);
    ck.config.validate();
    ck.params = make_param_shapes(ck.config);
    uint32_t count = rle<uint32_t>(in);
    auto ts = ck.params.tensors();
    if (count != ts.size()) throw std::runtime_error(path + ": unexpected tensor count");
    for (auto* t : ts) read_tensor_into(in, *t);
    uint8_t has_state = rle<uint8_t>(in);
    if (has_state) {
        AdamState st = AdamState::init(ck.params);
        st.step = rle<uint64_t>(in);
        for (auto* t : st.m.tensors()) read_tensor_into(in, *t);
        for (auto* t : st.v.tensors()) read_tensor_into(in, *t);
        ck.state = std::move(st);
    }
    return ck;
}

}  // namespace stids
