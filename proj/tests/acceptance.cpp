// Acceptance suite: one pass/fail line per criterion, exit code = number of
// failed criteria. The optional real-dataset reproduction prints SKIP when
// the dataset is not available.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "stids/data.hpp"
#include "stids/loss.hpp"
#include "stids/metrics.hpp"
#include "stids/model.hpp"
#include "stids/pseudolabel.hpp"
#include "stids/rng.hpp"
#include "stids/synthetic.hpp"
#include "stids/trainer.hpp"

#include "test_helpers.hpp"

using namespace stids;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    int failures = 0;
    void report(int id, const std::string& what, bool ok) {
        std::printf("%s criterion %d: %s\n", ok ? "PASS" : "FAIL", id, what.c_str());
        std::fflush(stdout);
        if (!ok) ++failures;
    }
    void skip(int id, const std::string& what, const std::string& why) {
        std::printf("SKIP criterion %d: %s (%s)\n", id, what.c_str(), why.c_str());
        std::fflush(stdout);
    }
};

double now_seconds() {
    using clock = std::chrono::steady_clock;
    static const auto start = clock::now();
    return std::chrono::duration<double>(clock::now() - start).count();
}

// --------------------------------------------------------------------------
// Criterion 1: gradient suite, every differentiable operation vs central
// finite differences, h = 1e-5, relative error 1e-4, >= 20 instances each.
// --------------------------------------------------------------------------

constexpr double kGradTol = 1e-4;
constexpr double kH = 1e-5;

double probe_sum(const std::vector<double>& probe, const std::vector<double>& out) {
    double acc = 0.0;
    for (size_t i = 0; i < out.size(); ++i) acc += probe[i] * out[i];
    return acc;
}

bool check_conv_instances(std::mt19937_64& rng) {
    for (int inst = 0; inst < 20; ++inst) {
        const size_t c_in = 1 + bounded(rng, 3), c_out = 1 + bounded(rng, 3);
        const size_t len = 3 + bounded(rng, 5);
        const size_t k = 1 + 2 * bounded(rng, 2);  // 1 or 3
        Tensor w("w", {c_out, c_in, k}), b("b", {c_out});
        for (auto& v : w.v) v = uniform_range(rng, -1, 1);
        for (auto& v : b.v) v = uniform_range(rng, -1, 1);
        std::vector<double> in(c_in * len), probe(c_out * len);
        for (auto& v : in) v = uniform_range(rng, -1, 1);
        for (auto& v : probe) v = uniform_range(rng, -1, 1);

        auto f = [&]() {
            std::vector<double> out(c_out * len);
            nn::conv1d_forward(in.data(), c_in, len, w, b, out.data());
            return probe_sum(probe, out);
        };
        Tensor gw("gw", w.shape), gb("gb", b.shape);
        std::vector<double> gin(c_in * len, 0.0);
        nn::conv1d_backward(in.data(), c_in, len, w, probe.data(), gw.v.data(), gb.v.data(), gin.data());
        if (testutil::max_grad_err(f, w.v, gw.v, kH) > kGradTol) return false;
        if (testutil::max_grad_err(f, b.v, gb.v, kH) > kGradTol) return false;
        if (testutil::max_grad_err(f, in, gin, kH) > kGradTol) return false;
    }
    return true;
}

bool check_dense_instances(std::mt19937_64& rng) {
    for (int inst = 0; inst < 20; ++inst) {
        const size_t n = 1 + bounded(rng, 4), in_dim = 1 + bounded(rng, 5), out_dim = 1 + bounded(rng, 5);
        Tensor w("w", {out_dim, in_dim}), b("b", {out_dim});
        for (auto& v : w.v) v = uniform_range(rng, -1, 1);
        for (auto& v : b.v) v = uniform_range(rng, -1, 1);
        Matrix x = testutil::random_batch(n, in_dim, rng());
        std::vector<double> probe(n * out_dim);
        for (auto& v : probe) v = uniform_range(rng, -1, 1);

        auto f = [&]() {
            Matrix out;
            nn::dense_forward(x, w, b, out);
            return probe_sum(probe, out.data);
        };
        Tensor gw("gw", w.shape), gb("gb", b.shape);
        Matrix grad_out(n, out_dim);
        grad_out.data = probe;
        Matrix gx;
        nn::dense_backward(x, w, grad_out, gw, gb, gx);
        if (testutil::max_grad_err(f, w.v, gw.v, kH) > kGradTol) return false;
        if (testutil::max_grad_err(f, b.v, gb.v, kH) > kGradTol) return false;
        if (testutil::max_grad_err(f, x.data, gx.data, kH) > kGradTol) return false;
    }
    return true;
}

// Residual merge: y = conv(x) + x. The skip must route the probe gradient
// around the convolution untouched.
bool check_residual_instances(std::mt19937_64& rng) {
    for (int inst = 0; inst < 20; ++inst) {
        const size_t c = 1 + bounded(rng, 3), len = 3 + bounded(rng, 5);
        Tensor w("w", {c, c, 3}), b("b", {c});
        for (auto& v : w.v) v = uniform_range(rng, -1, 1);
        std::vector<double> in(c * len), probe(c * len);
        for (auto& v : in) v = uniform_range(rng, -1, 1);
        for (auto& v : probe) v = uniform_range(rng, -1, 1);

        auto f = [&]() {
            std::vector<double> out(c * len);
            nn::conv1d_forward(in.data(), c, len, w, b, out.data());
            for (size_t i = 0; i < out.size(); ++i) out[i] += in[i];
            return probe_sum(probe, out);
        };
        std::vector<double> gin(c * len, 0.0);
        Tensor gw("gw", w.shape), gb("gb", b.shape);
        nn::conv1d_backward(in.data(), c, len, w, probe.data(), gw.v.data(), gb.v.data(), gin.data());
        for (size_t i = 0; i < gin.size(); ++i) gin[i] += probe[i];
        if (testutil::max_grad_err(f, in, gin, kH) > kGradTol) return false;
    }
    return true;
}

bool check_pool_instances(std::mt19937_64& rng) {
    for (int inst = 0; inst < 20; ++inst) {
        const size_t c = 1 + bounded(rng, 5), len = 2 + bounded(rng, 6);
        std::vector<double> in(c * len), probe(c);
        for (auto& v : in) v = uniform_range(rng, -1, 1);
        for (auto& v : probe) v = uniform_range(rng, -1, 1);
        auto f = [&]() {
            double acc = 0.0;
            for (size_t ch = 0; ch < c; ++ch) {
                double m = 0.0;
                for (size_t l = 0; l < len; ++l) m += in[ch * len + l];
                acc += probe[ch] * m / static_cast<double>(len);
            }
            return acc;
        };
        std::vector<double> gin(c * len);
        for (size_t ch = 0; ch < c; ++ch)
            for (size_t l = 0; l < len; ++l) gin[ch * len + l] = probe[ch] / static_cast<double>(len);
        if (testutil::max_grad_err(f, in, gin, kH) > kGradTol) return false;
    }
    return true;
}

bool check_l2norm_instances(std::mt19937_64& rng) {
    for (int inst = 0; inst < 20; ++inst) {
        const size_t n = 2 + bounded(rng, 6);
        std::vector<double> v(n), probe(n);
        for (auto& x : v) x = uniform_range(rng, -2, 2);
        for (auto& x : probe) x = uniform_range(rng, -1, 1);
        auto f = [&]() {
            std::vector<double> z(n);
            nn::l2_normalize(v.data(), n, z.data());
            return probe_sum(probe, z);
        };
        std::vector<double> z(n), gv(n);
        double norm = nn::l2_normalize(v.data(), n, z.data());
        nn::l2_normalize_backward(z.data(), norm, probe.data(), n, gv.data());
        if (testutil::max_grad_err(f, v, gv, kH) > kGradTol) return false;
    }
    return true;
}

bool check_softmax_instances(std::mt19937_64& rng) {
    for (int inst = 0; inst < 20; ++inst) {
        const size_t m = 2 + bounded(rng, 6);
        std::vector<double> x(m), probe(m);
        for (auto& v : x) v = uniform_range(rng, -2, 2);
        for (auto& v : probe) v = uniform_range(rng, -1, 1);
        auto f = [&]() {
            std::vector<double> p(m);
            nn::softmax_row(x.data(), m, p.data());
            return probe_sum(probe, p);
        };
        std::vector<double> p(m), gx(m);
        nn::softmax_row(x.data(), m, p.data());
        double dot = 0.0;
        for (size_t c = 0; c < m; ++c) dot += probe[c] * p[c];
        for (size_t c = 0; c < m; ++c) gx[c] = p[c] * (probe[c] - dot);
        if (testutil::max_grad_err(f, x, gx, kH) > kGradTol) return false;
    }
    return true;
}

bool check_scl_instances(std::mt19937_64& rng) {
    for (int inst = 0; inst < 20; ++inst) {
        const size_t n = 2 + bounded(rng, 6), d = 3 + bounded(rng, 4);
        Matrix z = testutil::random_unit_rows(n, d, rng());
        std::vector<int> labels(n);
        for (auto& l : labels) l = static_cast<int>(bounded(rng, 3));
        const double tau = 0.1 + 0.4 * uniform01(rng);
        auto analytic = supervised_contrastive(z, labels, tau);
        auto f = [&]() { return supervised_contrastive(z, labels, tau).value; };
        if (testutil::max_grad_err(f, z.data, analytic.grad_z.data, kH) > kGradTol) return false;
    }
    return true;
}

bool check_wce_instances(std::mt19937_64& rng) {
    for (int inst = 0; inst < 20; ++inst) {
        const size_t n = 1 + bounded(rng, 6), m = 2 + bounded(rng, 4);
        Matrix logits = testutil::random_batch(n, m, rng());
        std::vector<int> y(n);
        for (auto& l : y) l = static_cast<int>(bounded(rng, m));
        ClassWeights w;
        for (size_t c = 0; c < m; ++c) w.w.push_back(0.3 + uniform01(rng));
        std::vector<double> wp(n);
        for (auto& v : wp) v = 0.5 + 0.5 * uniform01(rng);
        auto value_of = [&]() {
            Matrix probs(n, m);
            for (size_t i = 0; i < n; ++i)
                nn::softmax_row(logits.data.data() + i * m, m, probs.data.data() + i * m);
            return weighted_ce(probs, y, w, wp).value;
        };
        Matrix probs(n, m);
        for (size_t i = 0; i < n; ++i)
            nn::softmax_row(logits.data.data() + i * m, m, probs.data.data() + i * m);
        auto analytic = weighted_ce(probs, y, w, wp);
        if (testutil::max_grad_err(value_of, logits.data, analytic.grad_logits.data, kH) > kGradTol)
            return false;
    }
    return true;
}

// Central differences are only meaningful where the composite loss is
// differentiable: away from ReLU kinks, argmax ties (which flip the reset
// weight discontinuously), and degenerate embedding norms.
bool well_conditioned(const ForwardTrace& tr) {
    constexpr double kReluMargin = 2e-4;
    constexpr double kProbMargin = 1e-3;
    for (const auto& pre : tr.conv_pre)
        for (double v : pre.data)
            if (std::abs(v) < kReluMargin) return false;
    for (double v : tr.proj_hidden_pre.data)
        if (std::abs(v) < kReluMargin) return false;
    for (double n : tr.z_norm)
        if (n < 0.05) return false;
    for (size_t r = 0; r < tr.probs.rows; ++r) {
        double top1 = -1.0, top2 = -1.0;
        for (double p : tr.probs.row(r)) {
            if (p > top1) {
                top2 = top1;
                top1 = p;
            } else if (p > top2) {
                top2 = p;
            }
        }
        if (top1 - top2 < kProbMargin) return false;
    }
    return true;
}

double top2_margin(const double* probs, size_t m) {
    double top1 = -1.0, top2 = -1.0;
    for (size_t c = 0; c < m; ++c) {
        if (probs[c] > top1) {
            top2 = top1;
            top1 = probs[c];
        } else if (probs[c] > top2) {
            top2 = probs[c];
        }
    }
    return top1 - top2;
}

bool check_hybrid_instances(std::mt19937_64& rng) {
    for (int inst = 0; inst < 20; ++inst) {
        const size_t n = 2 + bounded(rng, 5), m = 3, d = 4;
        Matrix z = testutil::random_unit_rows(n, d, rng());
        Matrix logits = testutil::random_batch(n, m, rng());
        // Keep every sample's argmax stable under the FD perturbation; the
        // reset weight jumps when a prediction flips.
        for (int attempt = 0; attempt < 100; ++attempt) {
            bool clear = true;
            for (size_t i = 0; i < n && clear; ++i) {
                std::vector<double> p(m);
                nn::softmax_row(logits.data.data() + i * m, m, p.data());
                if (top2_margin(p.data(), m) < 1e-3) clear = false;
            }
            if (clear) break;
            logits = testutil::random_batch(n, m, rng());
        }
        std::vector<int> labels(n);
        for (auto& l : labels) l = static_cast<int>(bounded(rng, m));
        std::vector<size_t> counts = {20, 5, 2};
        LossConfig cfg;
        cfg.beta_start = 0.4;
        cfg.beta_min = 0.4;
        auto value_of = [&]() {
            Matrix probs(n, m);
            for (size_t i = 0; i < n; ++i)
                nn::softmax_row(logits.data.data() + i * m, m, probs.data.data() + i * m);
            return hybrid(z, probs, labels, counts, 0, 10, cfg).l_hy;
        };
        Matrix probs(n, m);
        for (size_t i = 0; i < n; ++i)
            nn::softmax_row(logits.data.data() + i * m, m, probs.data.data() + i * m);
        auto lb = hybrid(z, probs, labels, counts, 0, 10, cfg);
        if (testutil::max_grad_err(value_of, z.data, lb.grad_z.data, kH) > kGradTol) return false;
        if (testutil::max_grad_err(value_of, logits.data, lb.grad_logits.data, kH) > kGradTol) return false;
    }
    return true;
}

// Full backbone: every parameter tensor of a tiny model against finite
// differences of the composite training loss.
bool check_full_model_instances(std::mt19937_64& rng) {
    for (int inst = 0; inst < 20; ++inst) {
        auto cfg = testutil::tiny_model(6, 3, rng());
        auto params = init_params(cfg);
        Matrix batch = testutil::random_batch(4, cfg.input_dim, rng());
        for (int attempt = 0; attempt < 200; ++attempt) {
            if (well_conditioned(forward_batch(params, cfg, batch, false, 0))) break;
            cfg = testutil::tiny_model(6, 3, rng());
            params = init_params(cfg);
            batch = testutil::random_batch(4, cfg.input_dim, rng());
        }
        std::vector<int> labels = {0, 1, 0, 2};
        std::vector<size_t> counts = {2, 1, 1};
        LossConfig loss_cfg;

        auto f = [&]() {
            auto tr = forward_batch(params, cfg, batch, false, 0);
            auto lb = hybrid(tr.z, tr.probs, labels, counts, 1, 10, loss_cfg);
            return lb.l_hy;
        };
        auto tr = forward_batch(params, cfg, batch, false, 0);
        auto lb = hybrid(tr.z, tr.probs, labels, counts, 1, 10, loss_cfg);
        auto grads = backward_batch(params, cfg, tr, lb.grad_z, lb.grad_logits);
        auto g_ts = grads.tensors();
        auto p_ts = params.tensors();
        // Probe a random subset of coordinates per tensor per instance; the
        // dedicated per-op checks above sweep exhaustively.
        for (size_t t = 0; t < p_ts.size(); ++t) {
            for (int probe = 0; probe < 4; ++probe) {
                const size_t i = bounded(rng, p_ts[t]->v.size());
                const double fd = testutil::central_diff(f, p_ts[t]->v[i], kH);
                if (testutil::rel_err(g_ts[t]->v[i], fd) > kGradTol) return false;
            }
        }
    }
    return true;
}

bool criterion1(Outcome& out) {
    const double t0 = now_seconds();
    auto rng = seeded_rng(101);
    bool ok = check_conv_instances(rng) && check_dense_instances(rng) && check_residual_instances(rng) &&
              check_pool_instances(rng) && check_l2norm_instances(rng) && check_softmax_instances(rng) &&
              check_scl_instances(rng) && check_wce_instances(rng) && check_hybrid_instances(rng) &&
              check_full_model_instances(rng);
    const double dt = now_seconds() - t0;
    ok = ok && dt < 60.0;
    out.report(1, "gradient suite (conv, dense, residual, pool, l2norm, softmax, scl, wce, hybrid; " +
                      std::to_string(dt).substr(0, 4) + "s)",
               ok);
    return ok;
}

// --------------------------------------------------------------------------
// Criterion 2: loss oracles.
// --------------------------------------------------------------------------

bool criterion2(Outcome& out) {
    auto rng = seeded_rng(202);
    bool ok = true;

    // Class-weight formula vs direct evaluation, 100 random count vectors.
    for (int trial = 0; trial < 100 && ok; ++trial) {
        const size_t m = 2 + bounded(rng, 10);
        std::vector<size_t> counts(m);
        for (auto& c : counts) c = 1 + bounded(rng, 100000);
        const double n = 0.5 + 2.0 * uniform01(rng);
        auto w = class_weights(counts, n);
        size_t n_min = *std::min_element(counts.begin(), counts.end());
        for (size_t c = 0; c < m; ++c) {
            const double direct =
                std::log(static_cast<double>(n_min) + n) / std::log(static_cast<double>(counts[c]) + n);
            if (std::abs(w.w[c] - direct) > 1e-12) ok = false;
        }
    }

    // Contrastive loss vs naive double loop, batches up to 16.
    for (int trial = 0; trial < 100 && ok; ++trial) {
        const size_t n = 2 + bounded(rng, 15), d = 4 + bounded(rng, 6);
        Matrix z = testutil::random_unit_rows(n, d, rng());
        std::vector<int> labels(n);
        for (auto& l : labels) l = static_cast<int>(bounded(rng, 4));
        const double tau = 0.05 + 0.3 * uniform01(rng);

        double naive = 0.0;
        for (size_t i = 0; i < n; ++i) {
            std::vector<size_t> pos;
            for (size_t j = 0; j < n; ++j)
                if (j != i && labels[j] == labels[i]) pos.push_back(j);
            if (pos.empty()) continue;
            double li = 0.0;
            for (size_t j : pos) {
                double dot_ij = 0.0;
                for (size_t c = 0; c < d; ++c) dot_ij += z.at(i, c) * z.at(j, c);
                double denom = 0.0;
                for (size_t k = 0; k < n; ++k) {
                    if (k == i) continue;
                    double dot_ik = 0.0;
                    for (size_t c = 0; c < d; ++c) dot_ik += z.at(i, c) * z.at(k, c);
                    denom += std::exp(dot_ik / tau);
                }
                li += -std::log(std::exp(dot_ij / tau) / denom);
            }
            naive += li / static_cast<double>(pos.size());
        }
        const double got = supervised_contrastive(z, labels, tau).value;
        if (std::abs(got - naive) > 1e-9 * std::max({1.0, std::abs(got), std::abs(naive)})) ok = false;
    }

    // Weighted CE with unit weights vs plain mean cross-entropy.
    for (int trial = 0; trial < 100 && ok; ++trial) {
        const size_t n = 1 + bounded(rng, 16), m = 2 + bounded(rng, 6);
        Matrix probs(n, m);
        std::vector<int> y(n);
        for (size_t i = 0; i < n; ++i) {
            double sum = 0.0;
            for (size_t c = 0; c < m; ++c) {
                probs.at(i, c) = 0.01 + uniform01(rng);
                sum += probs.at(i, c);
            }
            for (size_t c = 0; c < m; ++c) probs.at(i, c) /= sum;
            y[i] = static_cast<int>(bounded(rng, m));
        }
        ClassWeights unit;
        unit.w.assign(m, 1.0);
        const double got = weighted_ce(probs, y, unit, std::vector<double>(n, 1.0)).value;
        double plain = 0.0;
        for (size_t i = 0; i < n; ++i) plain -= std::log(probs.at(i, static_cast<size_t>(y[i])));
        plain /= static_cast<double>(n);
        if (std::abs(got - plain) > 1e-10) ok = false;
    }

    out.report(2, "loss oracles (class weights 1e-12, contrastive vs naive 1e-9, unit-weight CE 1e-10)", ok);
    return ok;
}

// --------------------------------------------------------------------------
// Criterion 3: filter oracle, exact, including threshold-boundary cases.
// --------------------------------------------------------------------------

bool criterion3(Outcome& out) {
    auto rng = seeded_rng(303);
    FilterConfig cfg;
    cfg.kappa = 0.06;
    cfg.tau = 0.82;

    std::vector<MCPrediction> mc;
    for (int i = 0; i < 1000; ++i) {
        const size_t m = 2 + bounded(rng, 6);
        MCPrediction p;
        p.passes = 10;
        p.mean_probs.resize(m);
        p.std_dev.resize(m);
        double sum = 0.0;
        for (auto& v : p.mean_probs) {
            v = 0.01 + uniform01(rng);
            sum += v;
        }
        for (auto& v : p.mean_probs) v /= sum;
        for (auto& v : p.std_dev) v = 0.12 * uniform01(rng);
        // Pin exact boundaries on a slice of the samples.
        if (i % 10 == 0) {
            size_t arg = 0;
            for (size_t c = 1; c < m; ++c)
                if (p.mean_probs[c] > p.mean_probs[arg]) arg = c;
            const double rest = 1.0 - cfg.tau;
            for (size_t c = 0; c < m; ++c) p.mean_probs[c] = rest / static_cast<double>(m - 1);
            p.mean_probs[arg] = cfg.tau;       // confidence exactly at the bar
            p.std_dev[arg] = cfg.kappa;        // uncertainty exactly at the bar
        }
        mc.push_back(std::move(p));
    }

    auto scored = score(mc, cfg);
    bool ok = scored.size() == mc.size();
    size_t boundary_kept = 0;
    for (size_t i = 0; i < mc.size() && ok; ++i) {
        size_t arg = 0;
        for (size_t c = 1; c < mc[i].mean_probs.size(); ++c)
            if (mc[i].mean_probs[c] > mc[i].mean_probs[arg]) arg = c;
        const bool expect = (mc[i].std_dev[arg] <= cfg.kappa) && (mc[i].mean_probs[arg] >= cfg.tau);
        if (scored[i].kept != expect) ok = false;
        if (i % 10 == 0 && scored[i].kept) ++boundary_kept;
    }
    // Every pinned exact-boundary sample must be kept (weak inequalities).
    ok = ok && boundary_kept == 100;
    out.report(3, "filter oracle on 1000 randomized predictions with exact-boundary cases", ok);
    return ok;
}

// --------------------------------------------------------------------------
// Criterion 4: MC degeneracy at dropout 0.
// --------------------------------------------------------------------------

bool criterion4(Outcome& out) {
    auto cfg = testutil::tiny_model(10, 4, 404);
    cfg.dropout_rate = 0.0;
    auto params = init_params(cfg);
    Matrix batch = testutil::random_batch(32, cfg.input_dim, 405);
    auto mc = mc_predict(params, cfg, batch, 10, 406);
    auto det = forward(params, cfg, batch, RunMode::Eval);
    bool ok = true;
    for (size_t r = 0; r < mc.size(); ++r) {
        for (double s : mc[r].std_dev)
            if (s != 0.0) ok = false;
        if (mc[r].mean_probs != det[r].probs) ok = false;
    }
    out.report(4, "MC degeneracy: zero dropout gives exactly zero uncertainty and the deterministic pass", ok);
    return ok;
}

// --------------------------------------------------------------------------
// Criterion 5: SMOTE geometry and the imbalance cap.
// --------------------------------------------------------------------------

bool criterion5(Outcome& out) {
    auto rng = seeded_rng(505);
    bool ok = true;

    // Synthetic samples on the closed parent segment, componentwise.
    size_t total_synthetic = 0;
    for (int trial = 0; trial < 20 && ok; ++trial) {
        SyntheticConfig sc;
        sc.classes = 3 + bounded(rng, 3);
        sc.samples = 150 + bounded(rng, 200);
        sc.imbalance_ratio = 4.0 + 8.0 * uniform01(rng);
        sc.overlap = 0.3 + 0.3 * uniform01(rng);
        sc.seed = rng();
        Dataset ds = make_synthetic(sc);
        FilterConfig fc;
        fc.smote_k = 3 + bounded(rng, 4);
        fc.smote_m = 5 + bounded(rng, 6);
        std::vector<size_t> targets(ds.num_classes());
        for (size_t c = 0; c < ds.num_classes(); ++c)
            targets[c] = ds.class_counts[c] + bounded(rng, 40);
        auto res = borderline_smote(ds.features, ds.labels, fc, targets, rng());
        total_synthetic += res.samples.size();
        for (const auto& s : res.samples) {
            const auto a = ds.features.row(s.parents.first);
            const auto b = ds.features.row(s.parents.second);
            if (ds.labels[s.parents.first] != s.cls || ds.labels[s.parents.second] != s.cls) ok = false;
            if (s.gap < 0.0 || s.gap > 1.0) ok = false;
            for (size_t c = 0; c < a.size(); ++c) {
                const double lo = std::min(a[c], b[c]) - 1e-9;
                const double hi = std::max(a[c], b[c]) + 1e-9;
                if (s.features[c] < lo || s.features[c] > hi) ok = false;
                const double expect = a[c] + s.gap * (b[c] - a[c]);
                if (std::abs(s.features[c] - expect) > 1e-9) ok = false;
            }
        }
    }
    ok = ok && total_synthetic > 0;

    // Post-cap ratio bound on randomized pseudo-label sets.
    for (int trial = 0; trial < 100 && ok; ++trial) {
        const size_t m = 2 + bounded(rng, 6);
        std::vector<PseudoLabel> kept;
        std::vector<size_t> labeled(m);
        size_t idx = 0;
        for (size_t c = 0; c < m; ++c) {
            labeled[c] = 1 + bounded(rng, 200);
            const size_t count = 1 + bounded(rng, 500);
            for (size_t i = 0; i < count; ++i) {
                PseudoLabel pl;
                pl.sample_index = idx++;
                pl.predicted_class = static_cast<int>(c);
                pl.kept = true;
                kept.push_back(pl);
            }
        }
        const double max_ratio = 1.5 + 30.0 * uniform01(rng);
        auto capped = cap_imbalance(kept, labeled, max_ratio, rng());
        std::vector<size_t> hist(m, 0);
        for (const auto& pl : capped) ++hist[static_cast<size_t>(pl.predicted_class)];
        size_t mx = 0, mn = SIZE_MAX, survivors = 0;
        for (size_t c = 0; c < m; ++c) {
            if (hist[c] == 0) continue;
            ++survivors;
            mx = std::max(mx, hist[c]);
            mn = std::min(mn, hist[c]);
        }
        if (survivors >= 2 &&
            static_cast<double>(mx) / static_cast<double>(mn) > max_ratio + 1e-9) ok = false;
    }

    out.report(5, "SMOTE geometry on the closed parent segment and post-cap ratio bound", ok);
    return ok;
}

// --------------------------------------------------------------------------
// Criterion 6: metrics oracle.
// --------------------------------------------------------------------------

struct MetricOracle {
    double acc, mp, mr, mf1;
};

MetricOracle metric_oracle(const ConfusionMatrix& cm) {
    const size_t m = cm.m;
    double total = 0.0, correct = 0.0, sp = 0.0, sr = 0.0, sf = 0.0;
    for (size_t t = 0; t < m; ++t)
        for (size_t p = 0; p < m; ++p) total += static_cast<double>(cm.at(t, p));
    for (size_t c = 0; c < m; ++c) {
        correct += static_cast<double>(cm.at(c, c));
        double tp = static_cast<double>(cm.at(c, c)), fp = 0.0, fn = 0.0;
        for (size_t k = 0; k < m; ++k)
            if (k != c) {
                fp += static_cast<double>(cm.at(k, c));
                fn += static_cast<double>(cm.at(c, k));
            }
        const double prec = tp + fp > 0 ? tp / (tp + fp) : 0.0;
        const double rec = tp + fn > 0 ? tp / (tp + fn) : 0.0;
        sp += prec;
        sr += rec;
        sf += (prec + rec) > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
    }
    return {correct / total, sp / m, sr / m, sf / m};
}

bool criterion6(Outcome& out) {
    bool ok = true;

    // Exhaustive: every 2-class confusion matrix with total <= 6.
    for (size_t a = 0; a <= 6 && ok; ++a)
        for (size_t b = 0; a + b <= 6 && ok; ++b)
            for (size_t c = 0; a + b + c <= 6 && ok; ++c)
                for (size_t d = 0; a + b + c + d <= 6 && ok; ++d) {
                    if (a + b + c + d == 0) continue;
                    ConfusionMatrix cm(2);
                    cm.at(0, 0) = a;
                    cm.at(0, 1) = b;
                    cm.at(1, 0) = c;
                    cm.at(1, 1) = d;
                    auto rep = report(cm);
                    auto orc = metric_oracle(cm);
                    if (rep.accuracy != orc.acc || rep.macro_precision != orc.mp ||
                        rep.macro_recall != orc.mr || rep.macro_f1 != orc.mf1)
                        ok = false;
                }

    // 1000 random matrices with up to 6 classes.
    auto rng = seeded_rng(606);
    for (int trial = 0; trial < 1000 && ok; ++trial) {
        const size_t m = 2 + bounded(rng, 5);
        ConfusionMatrix cm(m);
        for (auto& c : cm.counts) c = bounded(rng, 25);
        if (cm.total() == 0) cm.at(bounded(rng, m), bounded(rng, m)) = 1;
        auto rep = report(cm);
        auto orc = metric_oracle(cm);
        if (rep.accuracy != orc.acc || rep.macro_precision != orc.mp || rep.macro_recall != orc.mr ||
            rep.macro_f1 != orc.mf1)
            ok = false;
    }
    out.report(6, "metrics oracle (exhaustive 2-class total<=6 and 1000 random matrices)", ok);
    return ok;
}

// --------------------------------------------------------------------------
// Criteria 7-9: the desk-scale synthetic benchmark.
// --------------------------------------------------------------------------

ModelConfig bench_model() {
    ModelConfig m;
    m.expand_dim = 64;
    m.channels = 8;
    m.length = 8;
    m.conv_channels = {16, 16, 16, 16, 32};
    m.kernel_size = 3;
    m.dropout_rate = 0.3;
    m.repr_dim = 32;
    m.proj_dim = 16;
    return m;
}

TrainConfig bench_config(uint64_t seed) {
    TrainConfig cfg;
    cfg.epochs = 250;
    cfg.round_epochs = 80;
    cfg.rounds = 3;
    cfg.batch_size = 32;
    cfg.learning_rate = 1e-3;
    cfg.seed = seed;
    cfg.model = bench_model();
    // The contrastive term of the hybrid objective is a sum over the batch;
    // at this batch size the representation phase has to be brief for the
    // classification signal to stay in charge.
    cfg.loss.beta_start = 0.05;
    cfg.loss.beta_min = 0.001;
    cfg.filter.tau = 0.85;
    cfg.filter.kappa = 0.10;
    cfg.filter.mc_passes = 10;
    cfg.filter.max_imbalance_ratio = 50.0;
    return cfg;
}

struct Benchmark {
    Dataset labeled, unlabeled, test;
};

Benchmark make_benchmark() {
    SyntheticConfig sc;
    sc.classes = 8;
    sc.samples = 10000;
    sc.imbalance_ratio = 50.0;
    sc.overlap = 0.25;
    sc.seed = 777;
    Dataset full = make_synthetic(sc);
    auto parts = split(full, 0.2, 0.01, 777);
    return {parts.train_labeled, parts.train_unlabeled, parts.test};
}

Dataset fraction_of(const Dataset& pool, double fraction, uint64_t seed) {
    if (fraction >= 1.0) return pool;
    if (fraction <= 0.0) {
        Dataset empty;
        empty.class_names = pool.class_names;
        empty.features = Matrix(0, pool.dim());
        empty.recompute_class_counts();
        return empty;
    }
    std::vector<size_t> idx(pool.rows());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    auto rng = seeded_rng(derive_seed(seed, 0x554c));
    shuffle_vec(idx, rng);
    idx.resize(static_cast<size_t>(fraction * static_cast<double>(idx.size())));
    std::sort(idx.begin(), idx.end());
    return take_rows(pool, idx, true);
}

bool criteria78(Outcome& out, const Benchmark& bench) {
    const double t0 = now_seconds();
    const double fractions[3] = {0.0, 0.5, 1.0};
    double mean_f1[3] = {0, 0, 0};
    double mean_delta = 0.0;
    int improved = 0;

    for (int fi = 0; fi < 3; ++fi) {
        for (uint64_t seed = 1; seed <= 5; ++seed) {
            auto cfg = bench_config(seed);
            Dataset pool = fraction_of(bench.unlabeled, fractions[fi], seed);
            auto res = self_train(bench.labeled, pool, cfg);
            auto fin = evaluate_checkpoint(res.params, cfg, bench.test);
            mean_f1[fi] += fin.macro_f1;
            if (fi == 2) {
                auto warm = evaluate_checkpoint(res.warmup_params, cfg, bench.test);
                const double delta = fin.macro_f1 - warm.macro_f1;
                mean_delta += delta;
                if (delta > 0.0) ++improved;
            }
        }
        mean_f1[fi] /= 5.0;
    }
    mean_delta /= 5.0;
    const double elapsed = now_seconds() - t0;

    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "self-training improvement: mean %+.2f macro-F1 points, %d/5 seeds improved (%.0fs)",
                  100.0 * mean_delta, improved, elapsed);
    const bool ok7 = mean_delta >= 0.02 && improved >= 4 && elapsed < 600.0;
    out.report(7, buf, ok7);

    std::snprintf(buf, sizeof(buf),
                  "unlabeled-fraction trend: %.2f -> %.2f -> %.2f macro-F1 (0.5-point allowance)",
                  100.0 * mean_f1[0], 100.0 * mean_f1[1], 100.0 * mean_f1[2]);
    const bool ok8 = mean_f1[1] >= mean_f1[0] - 0.005 && mean_f1[2] >= mean_f1[1] - 0.005;
    out.report(8, buf, ok8);
    return ok7 && ok8;
}

bool criterion9(Outcome& out, const Benchmark& bench) {
    struct Cell {
        bool scl, weights;
        double mean = 0.0;
    };
    Cell grid[4] = {{false, false}, {true, false}, {false, true}, {true, true}};
    for (auto& cell : grid) {
        for (uint64_t seed = 1; seed <= 5; ++seed) {
            auto cfg = bench_config(seed);
            cfg.rounds = 0;
            cfg.loss.use_scl = cell.scl;
            cfg.loss.use_class_weights = cell.weights;
            cfg.loss.use_reset_weights = cell.weights;
            auto res = train_supervised(bench.labeled, cfg);
            cell.mean += evaluate_checkpoint(res.params, cfg, bench.test).macro_f1;
        }
        cell.mean /= 5.0;
    }
    const double ce = grid[0].mean, scl = grid[1].mean, w = grid[2].mean, hyb = grid[3].mean;
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "ablation: CE %.2f, +SCL %.2f, +weights %.2f, hybrid %.2f macro-F1 "
                  "(hybrid-CE %+.2f, need >= +0.5; components >= -0.3)",
                  100 * ce, 100 * scl, 100 * w, 100 * hyb, 100 * (hyb - ce));
    const bool ok = (hyb - ce >= 0.005) && (scl - ce >= -0.003) && (w - ce >= -0.003);
    out.report(9, buf, ok);
    return ok;
}

// --------------------------------------------------------------------------
// Criterion 10 (optional): real-dataset reproduction at 1% labels.
// --------------------------------------------------------------------------

bool criterion10(Outcome& out) {
    const char* env = std::getenv("STIDS_NSLKDD_DIR");
    fs::path dir = env && *env ? fs::path(env) : fs::path("data/nslkdd");
    fs::path train_file = dir / "KDDTrain+.txt";
    fs::path test_file = dir / "KDDTest+.txt";
    if (!fs::exists(train_file) || !fs::exists(test_file)) {
        out.skip(10, "real-dataset reproduction at 1% labels",
                 "dataset not found under " + dir.string() + "; set STIDS_NSLKDD_DIR to enable");
        return true;
    }

    Schema schema = Schema::load(std::string(STIDS_SOURCE_DIR) + "/schemas/nslkdd.json");
    auto records = load_csv(train_file.string(), schema, false);
    auto more = load_csv(test_file.string(), schema, false);
    records.insert(records.end(), more.begin(), more.end());

    std::vector<RawRecord> live;
    std::vector<std::string> class_names = schema.classes;
    std::vector<int> labels;
    for (auto& rec : records) {
        auto merged = schema.merge_label(rec.label);
        if (!merged) continue;
        auto it = std::find(class_names.begin(), class_names.end(), *merged);
        labels.push_back(static_cast<int>(it - class_names.begin()));
        live.push_back(std::move(rec));
    }
    auto idx = split_indices(labels, class_names.size(), 0.2, 0.01, 1);
    std::vector<RawRecord> train_records;
    for (size_t i : idx.train_labeled) train_records.push_back(live[i]);
    for (size_t i : idx.train_unlabeled) train_records.push_back(live[i]);
    auto st = fit_preprocess(train_records, schema);
    Dataset full = transform(live, st, schema);
    Dataset labeled = take_rows(full, idx.train_labeled, false);
    Dataset unlabeled = take_rows(full, idx.train_unlabeled, true);
    Dataset test = take_rows(full, idx.test, false);

    TrainConfig cfg;  // shipped defaults: full-size backbone, beta 0.9/0.05
    cfg.seed = 1;
    auto res = self_train(labeled, unlabeled, cfg);
    auto warm = evaluate_checkpoint(res.warmup_params, cfg, test);
    auto fin = evaluate_checkpoint(res.params, cfg, test);

    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "real-dataset reproduction: warm macro-F1 %.2f, final %.2f (target >= 90, gain >= +1.5)",
                  100 * warm.macro_f1, 100 * fin.macro_f1);
    const bool ok = fin.macro_f1 >= 0.90 && (fin.macro_f1 - warm.macro_f1) >= 0.015;
    out.report(10, buf, ok);
    return ok;
}

}  // namespace

int main() {
    Outcome out;
    criterion1(out);
    criterion2(out);
    criterion3(out);
    criterion4(out);
    criterion5(out);
    criterion6(out);
    Benchmark bench = make_benchmark();
    criteria78(out, bench);
    criterion9(out, bench);
    criterion10(out);
    if (out.failures == 0)
        std::printf("acceptance: all criteria passed\n");
    else
        std::printf("acceptance: %d criteria FAILED\n", out.failures);
    return out.failures;
}
