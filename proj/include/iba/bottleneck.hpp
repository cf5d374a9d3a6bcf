#pragma once

#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "iba/adam.hpp"
#include "iba/archive.hpp"
#include "iba/dataset.hpp"
#include "iba/heatmap.hpp"
#include "iba/model.hpp"
#include "iba/ops.hpp"
#include "iba/parallel.hpp"
#include "iba/rng.hpp"

namespace iba {

// Std floor for dead or rarely firing features. Post-ReLU elements that never
// fire within the estimation sample would otherwise get a near-zero sigma and
// r' = (r - mu)/sigma explodes the moment such an element fires at
// attribution time, letting a handful of elements dominate the whole
// information term.
constexpr double kSigmaFloor = 1e-2;
constexpr double kLambdaClamp = 1e-7;  // KL evaluates lambda at most 1 - kLambdaClamp

// ---------------------------------------------------------------------------
// feature statistics
// ---------------------------------------------------------------------------

// Per-element mean and std of a feature map at a tap point, estimated over a
// dataset sample. sigma is a standard deviation (not variance), floored at
// kSigmaFloor.
template <class Real>
struct FeatureStatsT {
    Shape shape;  // [c,h,w]
    std::vector<Real> mu, sigma;
    int n_samples = 0;
};

using FeatureStats = FeatureStatsT<float>;

// Welford accumulation, unbiased (n-1) variance, std floored at kSigmaFloor.
template <class Real>
FeatureStatsT<Real> stats_from_maps(const std::vector<std::vector<Real>>& maps, Shape shape) {
    if (maps.size() < 2) throw std::invalid_argument("stats_from_maps: need at least 2 samples");
    const size_t k = static_cast<size_t>(numel(shape));
    for (const auto& m : maps)
        if (m.size() != k) throw std::invalid_argument("stats_from_maps: map size does not match shape");
    std::vector<double> mean(k, 0.0), m2(k, 0.0);
    long long count = 0;
    for (const auto& mp : maps) {
        ++count;
        for (size_t i = 0; i < k; ++i) {
            const double d = static_cast<double>(mp[i]) - mean[i];
            mean[i] += d / static_cast<double>(count);
            m2[i] += d * (static_cast<double>(mp[i]) - mean[i]);
        }
    }
    FeatureStatsT<Real> st;
    st.shape = std::move(shape);
    st.n_samples = static_cast<int>(count);
    st.mu.resize(k);
    st.sigma.resize(k);
    for (size_t i = 0; i < k; ++i) {
        st.mu[i] = static_cast<Real>(mean[i]);
        st.sigma[i] = static_cast<Real>(std::max(std::sqrt(m2[i] / static_cast<double>(count - 1)), kSigmaFloor));
    }
    return st;
}

// Same accumulation over M training images forwarded to the tap.
template <class Real>
FeatureStatsT<Real> estimate_stats(const ModelT<Real>& model, const std::string& tap,
                                   const ShapesDataset& ds, int m_samples, int batch = 16) {
    if (m_samples < 2) throw std::invalid_argument("estimate_stats: need at least 2 samples");
    const TapPoint tp = model.tap(tap);
    const auto& dc = ds.config();
    const size_t k = static_cast<size_t>(tp.k());
    std::vector<double> mean(k, 0.0), m2(k, 0.0);
    long long count = 0;
    for (int start = 0; start < m_samples; start += batch) {
        const int n = std::min(batch, m_samples - start);
        std::vector<Sample> ss;
        for (int i = 0; i < n; ++i) ss.push_back(ds.train((start + i) % dc.train_count));
        auto x = to_batch<Real>(ss, dc.channels, dc.image_size);
        auto r = forward_to_tap(model, x, tap);
        for (int b = 0; b < n; ++b) {
            const Real* v = r.data() + static_cast<size_t>(b) * k;
            ++count;
            for (size_t i = 0; i < k; ++i) {
                const double d = static_cast<double>(v[i]) - mean[i];
                mean[i] += d / static_cast<double>(count);
                m2[i] += d * (static_cast<double>(v[i]) - mean[i]);
            }
        }
    }
    FeatureStatsT<Real> st;
    st.shape = {tp.c, tp.h, tp.w};
    st.n_samples = static_cast<int>(count);
    st.mu.resize(k);
    st.sigma.resize(k);
    for (size_t i = 0; i < k; ++i) {
        st.mu[i] = static_cast<Real>(mean[i]);
        st.sigma[i] = static_cast<Real>(std::max(std::sqrt(m2[i] / static_cast<double>(count - 1)), kSigmaFloor));
    }
    return st;
}

template <class Real>
void save_stats(const std::string& path, const FeatureStatsT<Real>& st) {
    std::vector<NamedTensor> ts;
    ts.push_back({"mu", st.shape, std::vector<float>(st.mu.begin(), st.mu.end())});
    ts.push_back({"sigma", st.shape, std::vector<float>(st.sigma.begin(), st.sigma.end())});
    ts.push_back({"meta", {1}, {static_cast<float>(st.n_samples)}});
    save_archive(path, ts);
}

inline FeatureStats load_stats(const std::string& path) {
    auto ts = load_archive(path);
    FeatureStats st;
    const auto& mu = archive_find(ts, "mu");
    const auto& sigma = archive_find(ts, "sigma");
    st.shape = mu.shape;
    st.mu = mu.data;
    st.sigma = sigma.data;
    for (const auto& t : ts)
        if (t.name == "meta" && !t.data.empty()) st.n_samples = static_cast<int>(t.data[0]);
    return st;
}

template <class To, class From>
FeatureStatsT<To> stats_cast(const FeatureStatsT<From>& st) {
    FeatureStatsT<To> out;
    out.shape = st.shape;
    out.n_samples = st.n_samples;
    out.mu.assign(st.mu.begin(), st.mu.end());
    out.sigma.assign(st.sigma.begin(), st.sigma.end());
    return out;
}

// Draws epsilon ~ N(mu, sigma^2) elementwise; `copies` stacks a leading axis.
template <class Real>
TensorT<Real> draw_noise(const FeatureStatsT<Real>& st, Rng& rng, int copies = 0) {
    const size_t k = st.mu.size();
    const bool batched = copies > 0;
    const int b = batched ? copies : 1;
    std::vector<Real> eps(static_cast<size_t>(b) * k);
    for (size_t i = 0; i < eps.size(); ++i) {
        const size_t j = i % k;
        eps[i] = static_cast<Real>(rng.normal(static_cast<double>(st.mu[j]), static_cast<double>(st.sigma[j])));
    }
    Shape s = st.shape;
    if (batched) s.insert(s.begin(), b);
    return TensorT<Real>::from_data(std::move(s), std::move(eps));
}

// ---------------------------------------------------------------------------
// the bottleneck layer
// ---------------------------------------------------------------------------

// Unconstrained mask parameters alpha with the derived mix coefficient
// lambda = blur(sigma_s, sigmoid(alpha)).
template <class Real>
struct AlphaMaskT {
    TensorT<Real> alpha;  // [c,h,w], leaf
    double sigma_s = 1.0;

    static AlphaMaskT init(const Shape& shape, double sigma_s, Real alpha0 = Real(5)) {
        AlphaMaskT m;
        m.alpha = TensorT<Real>::filled(shape, alpha0, /*requires_grad=*/true);
        m.sigma_s = sigma_s;
        return m;
    }

    // graph from alpha; lambda stays in [0,1] because the blur kernel is
    // normalized and non-negative
    TensorT<Real> lambda() const { return gaussian_blur(sigmoid(alpha), sigma_s); }
};

using AlphaMask = AlphaMaskT<float>;

struct BottleneckConfig {
    double beta_over_k = 10.0;  // the paper writes beta = 10/k; this is the numerator
    int iterations = 10;
    int copies = 10;
    double lr = 1.0;
    double sigma_s = 1.0;
    bool target_is_true_label = true;  // otherwise the model's prediction
    uint64_t seed = 1;

    void validate() const {
        if (iterations < 1 || copies < 1 || lr <= 0)
            throw std::invalid_argument("BottleneckConfig: need iterations >= 1, copies >= 1, lr > 0");
    }
};

// Per-element KL divergence of P(Z|R) = N(lambda r + (1-lambda) mu, (1-lambda)^2 sigma^2)
// against Q(Z) = N(mu, sigma^2), in nats. With r' = (r - mu)/sigma:
//   KL = -ln(1-lambda) + ((1-lambda)^2 + lambda^2 r'^2)/2 - 1/2
// lambda is clamped to 1 - kLambdaClamp here only; the forward pass of the
// bottleneck uses the unclamped value.
template <class Real>
TensorT<Real> kl_per_element(const TensorT<Real>& lambda, const TensorT<Real>& r_prime) {
    detail::check_same_shape(lambda, r_prime, "kl_per_element");
    const Real cap = Real(1.0 - kLambdaClamp);
    std::vector<Real> out(lambda.vec().size());
    const Real* pl = lambda.data();
    const Real* pr = r_prime.data();
    for (size_t i = 0; i < out.size(); ++i) {
        const Real l = std::min(pl[i], cap);
        const Real om = Real(1) - l;
        out[i] = -std::log(om) + (om * om + l * l * pr[i] * pr[i]) * Real(0.5) - Real(0.5);
    }
    return detail::make_result<Real>(lambda.shape(), std::move(out), {lambda.node(), r_prime.node()},
        [cap](detail::TapeNode<Real>& n) {
            auto& pl2 = *n.parents[0];
            auto& pr2 = *n.parents[1];
            if (pl2.requires_grad) {
                for (size_t i = 0; i < n.grad.size(); ++i) {
                    const Real l = pl2.value[i];
                    if (l >= cap) continue;  // clamped region, zero slope
                    const Real om = Real(1) - l;
                    const Real rp = pr2.value[i];
                    pl2.grad[i] += n.grad[i] * (Real(1) / om - om + l * rp * rp);
                }
            }
            if (pr2.requires_grad) {
                for (size_t i = 0; i < n.grad.size(); ++i) {
                    const Real l = std::min(pl2.value[i], cap);
                    pr2.grad[i] += n.grad[i] * l * l * pr2.value[i];
                }
            }
        });
}

// (r - mu) / sigma as a graph op, differentiable through r.
template <class Real>
TensorT<Real> standardize(const TensorT<Real>& r, const FeatureStatsT<Real>& st, int copies = 0) {
    const size_t k = st.mu.size();
    std::vector<Real> mu, inv;
    const int b = copies > 0 ? copies : 1;
    mu.reserve(static_cast<size_t>(b) * k);
    inv.reserve(static_cast<size_t>(b) * k);
    for (int c = 0; c < b; ++c)
        for (size_t i = 0; i < k; ++i) {
            mu.push_back(st.mu[i]);
            inv.push_back(Real(1) / st.sigma[i]);
        }
    Shape s = st.shape;
    if (copies > 0) s.insert(s.begin(), b);
    if (r.shape() != s)
        throw std::invalid_argument("standardize: feature map " + shape_str(r.shape()) +
                                    " does not match stats " + shape_str(s));
    auto mu_t = TensorT<Real>::from_data(s, std::move(mu));
    auto inv_t = TensorT<Real>::from_data(s, std::move(inv));
    return mul(sub(r, mu_t), inv_t);
}

// Eq.-style information loss: total nats plus the per-element map.
template <class Real>
struct InformationLoss {
    TensorT<Real> total;        // scalar, nats
    TensorT<Real> per_element;  // same shape as lambda
};

template <class Real>
InformationLoss<Real> information_loss(const TensorT<Real>& r, const FeatureStatsT<Real>& st,
                                       const TensorT<Real>& lambda) {
    auto rp = standardize(r, st, lambda.rank() == 4 ? lambda.dim(0) : 0);
    auto kl = kl_per_element(lambda, rp);
    return {sum_all(kl), kl};
}

// Noise injection (the bottleneck itself): Z = lambda * R + (1 - lambda) * eps
// with eps ~ N(mu, sigma^2) drawn from `seed`. Differentiable w.r.t. lambda
// and R; the noise is a constant of the graph (reparameterization).
template <class Real>
TensorT<Real> bottleneck_forward(const TensorT<Real>& r, const FeatureStatsT<Real>& st,
                                 const AlphaMaskT<Real>& mask, uint64_t seed) {
    Rng rng(seed);
    auto eps = draw_noise(st, rng);
    auto lam = mask.lambda();
    auto ones = TensorT<Real>::filled(lam.shape(), Real(1));
    return add(mul(lam, r), mul(sub(ones, lam), eps));
}

// ---------------------------------------------------------------------------
// heatmap assembly
// ---------------------------------------------------------------------------

// Channel-sum of per-element KL (nats), converted to bits, bilinearly resized
// to the image resolution and divided by the upsampling area factor so the
// image sum equals the tap sum.
template <class Real>
Heatmap finalize_heatmap(const TensorT<Real>& kl_chw, int img_h, int img_w) {
    const int c = kl_chw.dim(0), h = kl_chw.dim(1), w = kl_chw.dim(2);
    std::vector<Real> bits(static_cast<size_t>(h) * w, Real(0));
    const Real inv_ln2 = Real(1.0 / std::numbers::ln2);
    const Real* p = kl_chw.data();
    for (int ci = 0; ci < c; ++ci)
        for (size_t i = 0; i < bits.size(); ++i) bits[i] += p[static_cast<size_t>(ci) * h * w + i] * inv_ln2;
    auto grid = TensorT<Real>::from_data({1, h, w}, std::move(bits));
    auto up = bilinear_resize(grid, img_h, img_w);
    const double area = static_cast<double>(img_h) * img_w / (static_cast<double>(h) * w);
    Heatmap hm(img_h, img_w);
    for (size_t i = 0; i < hm.v.size(); ++i)
        hm.v[i] = static_cast<float>(static_cast<double>(up.data()[i]) / area);
    hm.recompute_total();
    return hm;
}

// ---------------------------------------------------------------------------
// Per-Sample Bottleneck
// ---------------------------------------------------------------------------

struct FitDiagnostics {
    double prob_before = 0.0;     // target prob, plain forward
    double prob_after = 0.0;      // mean target prob under the fitted bottleneck
    double info_total_nats = 0.0;
    double info_per_k_nats = 0.0;
    int steps_run = 0;
    bool finite = true;  // false when the fit aborted on a non-finite loss
};

template <class Real>
struct PerSampleResult {
    Heatmap heatmap;
    FitDiagnostics diag;
    TensorT<Real> lambda;  // fitted mask, [c,h,w]
    int target = -1;
};

template <class Real>
int argmax_class(const TensorT<Real>& probs_row) {
    int arg = 0;
    for (int i = 1; i < probs_row.size(); ++i)
        if (probs_row.data()[i] > probs_row.data()[arg]) arg = i;
    return arg;
}

// Fits alpha for one image by running `iterations` Adam steps on
// L = L_CE + beta * L_I over `copies` noisy replicas, then reads the
// per-element KL out as the attribution heatmap.
template <class Real>
PerSampleResult<Real> per_sample_attribution(const ModelT<Real>& model, const std::string& tap,
                                             const FeatureStatsT<Real>& stats, const Sample& sample,
                                             const BottleneckConfig& cfg) {
    cfg.validate();
    const TapPoint tp = model.tap(tap);
    const double k = static_cast<double>(tp.k());
    const double beta = cfg.beta_over_k / k;
    const int B = cfg.copies;

    auto x = to_tensor<Real>(sample, model.in_channels, model.img_h);
    auto probs0 = forward_probs(model, x);
    const int pred = argmax_class(probs0);
    const int target = cfg.target_is_true_label && sample.label >= 0 ? sample.label : pred;

    auto r4 = forward_to_tap(model, x, tap).detach();
    auto r = reshape(r4, {tp.c, tp.h, tp.w}).detach();

    AlphaMaskT<Real> mask = AlphaMaskT<Real>::init({tp.c, tp.h, tp.w}, cfg.sigma_s);
    AdamT<Real> opt({mask.alpha}, typename AdamT<Real>::Config{static_cast<Real>(cfg.lr)});
    auto r_batch = tile_batch(r, B).detach();
    auto rp = standardize(r, stats).detach();
    const std::vector<int> targets(static_cast<size_t>(B), target);

    PerSampleResult<Real> out;
    out.target = target;
    out.diag.prob_before = static_cast<double>(probs0.data()[target]);

    std::vector<Real> last_alpha = mask.alpha.vec();
    for (int t = 0; t < cfg.iterations; ++t) {
        auto lam = mask.lambda();
        auto kl = kl_per_element(lam, rp);
        auto li = sum_all(kl);
        Rng noise_rng(mix64(cfg.seed, static_cast<uint64_t>(sample.id) + 1, static_cast<uint64_t>(t)));
        auto eps = draw_noise(stats, noise_rng, B);
        auto lam_b = tile_batch(lam, B);
        auto ones = TensorT<Real>::filled(lam_b.shape(), Real(1));
        auto z = add(mul(lam_b, r_batch), mul(sub(ones, lam_b), eps));
        auto logits = forward_from_tap(model, tap, z);
        auto loss = add(cross_entropy(logits, targets), scalar_mul(li, static_cast<Real>(beta)));
        if (!std::isfinite(static_cast<double>(loss.item()))) {
            std::copy(last_alpha.begin(), last_alpha.end(), mask.alpha.data());
            out.diag.finite = false;
            break;
        }
        last_alpha = mask.alpha.vec();
        backward(loss);
        opt.step();
        out.diag.steps_run = t + 1;
    }

    auto lam_final = mask.lambda().detach();
    auto kl_final = kl_per_element(lam_final, rp);
    out.lambda = lam_final;
    double total_nats = 0;
    for (int i = 0; i < kl_final.size(); ++i) total_nats += static_cast<double>(kl_final.data()[i]);
    out.diag.info_total_nats = total_nats;
    out.diag.info_per_k_nats = total_nats / k;

    {  // mean target prob under the fitted bottleneck, fresh noise
        Rng eval_rng(mix64(cfg.seed, 0xF00D, static_cast<uint64_t>(sample.id)));
        auto eps = draw_noise(stats, eval_rng, B);
        auto lam_b = tile_batch(lam_final, B);
        auto ones = TensorT<Real>::filled(lam_b.shape(), Real(1));
        auto z = add(mul(lam_b, r_batch), mul(sub(ones, lam_b), eps));
        auto probs = softmax(forward_from_tap(model, tap, z));
        double acc = 0;
        for (int b = 0; b < B; ++b)
            acc += static_cast<double>(probs.data()[static_cast<size_t>(b) * model.classes + target]);
        out.diag.prob_after = acc / B;
    }

    out.heatmap = finalize_heatmap(kl_final, model.img_h, model.img_w);
    out.heatmap.method = "per-sample";
    out.heatmap.tap = tap;
    out.heatmap.beta_over_k = cfg.beta_over_k;
    out.heatmap.image_id = sample.id;
    out.heatmap.target = target;
    return out;
}

// ---------------------------------------------------------------------------
// Readout Bottleneck
// ---------------------------------------------------------------------------

// Three 1x1 conv layers (ReLU between, sigmoid after) predicting lambda at
// the bottleneck tap from feature maps read at several depths and resized to
// the tap's spatial size.
template <class Real>
struct ReadoutNetT {
    std::string tap;                      // bottleneck tap
    std::vector<std::string> read_taps;   // collected maps ("fc" = logits)
    double sigma_s = 1.0;
    FeatureStatsT<Real> stats;            // stats at `tap`
    TensorT<Real> w1, b1, w2, b2, w3, b3;

    std::vector<TensorT<Real>> parameters() { return {w1, b1, w2, b2, w3, b3}; }

    void set_requires_grad(bool rg) {
        for (auto& p : parameters()) p.set_requires_grad(rg);
    }

    static ReadoutNetT init(const ModelT<Real>& model, const std::string& tap,
                            std::vector<std::string> read_taps, double sigma_s, uint64_t seed,
                            int hidden1 = 32, int hidden2 = 16) {
        ReadoutNetT net;
        net.tap = tap;
        net.read_taps = std::move(read_taps);
        net.sigma_s = sigma_s;
        const TapPoint tp = model.tap(tap);
        int cin = 0;
        for (const auto& t : net.read_taps) cin += (t == "fc") ? model.classes : model.tap(t).c;
        Rng rng(mix64(seed, 0x3ead));
        auto make = [&rng](int cout, int ci) {
            auto w = TensorT<Real>::zeros({cout, ci, 1, 1});
            const double bound = std::sqrt(6.0 / ci);
            for (int i = 0; i < w.size(); ++i) w.data()[i] = static_cast<Real>(rng.uniform(-bound, bound));
            return w;
        };
        net.w1 = make(hidden1, cin);
        net.b1 = TensorT<Real>::zeros({hidden1});
        net.w2 = make(hidden2, hidden1);
        net.b2 = TensorT<Real>::zeros({hidden2});
        net.w3 = make(tp.c, hidden2);
        net.b3 = TensorT<Real>::zeros({tp.c});
        return net;
    }

    // maps: collected tensors keyed by read tap name, batch layout [N,*]
    TensorT<Real> predict_lambda(const ModelT<Real>& model,
                                 const std::map<std::string, TensorT<Real>>& maps) const {
        const TapPoint tp = model.tap(tap);
        std::vector<TensorT<Real>> resized;
        for (const auto& name : read_taps) {
            auto it = maps.find(name);
            if (it == maps.end()) throw std::invalid_argument("readout: missing collected map '" + name + "'");
            TensorT<Real> m = it->second;
            if (m.rank() == 2) m = reshape(m, {m.dim(0), m.dim(1), 1, 1});  // logits as 1x1 map
            if (m.dim(2) != tp.h || m.dim(3) != tp.w) m = bilinear_resize(m, tp.h, tp.w);
            resized.push_back(m);
        }
        auto x = concat_channels(resized);
        auto h1 = relu(conv2d(x, w1, b1));
        auto h2 = relu(conv2d(h1, w2, b2));
        auto lam = sigmoid(conv2d(h2, w3, b3));
        return gaussian_blur(lam, sigma_s);
    }

    // collect + predict for a single image; returns [c,h,w] lambda and the
    // feature map at the bottleneck tap
    std::pair<TensorT<Real>, TensorT<Real>> lambda_for(const ModelT<Real>& model,
                                                       const TensorT<Real>& x) const {
        std::map<std::string, TensorT<Real>> maps;
        ForwardOpts<Real> o;
        o.collect = &read_taps;
        o.collected = &maps;
        forward_logits(model, x, o);
        const TapPoint tp = model.tap(tap);
        auto lam4 = predict_lambda(model, maps);
        auto r4 = maps.count(tap) ? maps.at(tap) : forward_to_tap(model, x, tap);
        return {reshape(lam4, {tp.c, tp.h, tp.w}), reshape(r4, {tp.c, tp.h, tp.w})};
    }
};

using ReadoutNet = ReadoutNetT<float>;

struct ReadoutTrainConfig {
    int epochs = 10;
    double lr = 1e-3;
    int batch = 16;
    double beta_over_k = 10.0;
    double sigma_s = 1.0;
    uint64_t seed = 1;
    int train_count = -1;  // limit training images; -1 = whole training split
    std::ostream* log = nullptr;
};

// Mean target probability on validation images with the readout bottleneck
// active (single noise draw per image).
template <class Real>
double readout_val_prob(const ModelT<Real>& model, const ReadoutNetT<Real>& net,
                        const ShapesDataset& ds, int n_images = 100, uint64_t seed = 99) {
    const auto& dc = ds.config();
    const int n = std::min(n_images, dc.val_count);
    double acc = 0;
    for (int i = 0; i < n; ++i) {
        Sample s = ds.val(i);
        auto x = to_tensor<Real>(s, dc.channels, dc.image_size);
        auto [lam, r] = net.lambda_for(model, x);
        Rng rng(mix64(seed, 0xeba1, static_cast<uint64_t>(i)));
        auto eps = draw_noise(net.stats, rng);
        auto ones = TensorT<Real>::filled(lam.shape(), Real(1));
        auto z = add(mul(lam, r), mul(sub(ones, lam), eps));
        auto probs = softmax(forward_from_tap(model, net.tap, reshape(z, {1, lam.dim(0), lam.dim(1), lam.dim(2)})));
        acc += static_cast<double>(probs.data()[s.label]);
    }
    return acc / n;
}

// Trains the readout network against Eq.-style loss CE + beta * L_I with the
// analyzed model frozen. Pass 1 collects clean feature maps, pass 2 splices
// the bottleneck with the predicted lambda.
template <class Real>
ReadoutNetT<Real> train_readout(const ModelT<Real>& model, const std::string& bottleneck_tap,
                                const std::vector<std::string>& read_taps,
                                const FeatureStatsT<Real>& stats, const ShapesDataset& ds,
                                const ReadoutTrainConfig& cfg = {}) {
    const auto& dc = ds.config();
    const TapPoint tp = model.tap(bottleneck_tap);
    const double beta = cfg.beta_over_k / static_cast<double>(tp.k());
    ReadoutNetT<Real> net = ReadoutNetT<Real>::init(model, bottleneck_tap, read_taps, cfg.sigma_s, cfg.seed);
    net.stats = stats;
    net.set_requires_grad(true);
    AdamT<Real> opt(net.parameters(), typename AdamT<Real>::Config{static_cast<Real>(cfg.lr)});

    const int total = cfg.train_count > 0 ? std::min(cfg.train_count, dc.train_count) : dc.train_count;
    std::vector<int> idx(static_cast<size_t>(total));
    for (int i = 0; i < total; ++i) idx[static_cast<size_t>(i)] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(mix64(cfg.seed, 0x0e0c, static_cast<uint64_t>(epoch)));
        shuffle_rng.shuffle(idx.begin(), idx.end());
        double loss_sum = 0;
        int steps = 0;
        for (int start = 0; start < total; start += cfg.batch) {
            const int n = std::min(cfg.batch, total - start);
            std::vector<Sample> ss;
            std::vector<int> ys;
            for (int i = 0; i < n; ++i) {
                ss.push_back(ds.train(idx[static_cast<size_t>(start + i)]));
                ys.push_back(ss.back().label);
            }
            auto x = to_batch<Real>(ss, dc.channels, dc.image_size);
            std::map<std::string, TensorT<Real>> maps;
            ForwardOpts<Real> o;
            o.collect = &net.read_taps;
            o.collected = &maps;
            forward_logits(model, x, o);  // pass 1, no noise; model weights are frozen
            auto lam = net.predict_lambda(model, maps);
            auto r = maps.count(bottleneck_tap) ? maps.at(bottleneck_tap).detach()
                                                : forward_to_tap(model, x, bottleneck_tap).detach();
            auto rp = standardize(r, stats, n).detach();
            Rng noise_rng(mix64(cfg.seed, 0x11be + static_cast<uint64_t>(epoch), static_cast<uint64_t>(steps)));
            auto eps = draw_noise(stats, noise_rng, n);
            auto ones = TensorT<Real>::filled(lam.shape(), Real(1));
            auto z = add(mul(lam, r), mul(sub(ones, lam), eps));  // pass 2 splice
            auto logits = forward_from_tap(model, bottleneck_tap, z);
            auto kl = kl_per_element(lam, rp);
            auto li = scalar_mul(sum_all(kl), Real(1) / static_cast<Real>(n));  // E_R over the minibatch
            auto loss = add(cross_entropy(logits, ys), scalar_mul(li, static_cast<Real>(beta)));
            const double lv = static_cast<double>(loss.item());
            if (!std::isfinite(lv))
                throw std::runtime_error("train_readout: non-finite loss at epoch " + std::to_string(epoch));
            backward(loss);
            opt.step();
            loss_sum += lv;
            ++steps;
        }
        if (cfg.log) (*cfg.log) << "readout epoch " << (epoch + 1) << " loss " << loss_sum / steps << "\n";
    }
    net.set_requires_grad(false);
    return net;
}

// Single collect pass + readout network; no optimization loop and no noise.
template <class Real>
Heatmap readout_attribution(const ReadoutNetT<Real>& net, const ModelT<Real>& model,
                            const Sample& sample) {
    auto x = to_tensor<Real>(sample, model.in_channels, model.img_h);
    auto [lam, r] = net.lambda_for(model, x);
    auto rp = standardize(r.detach(), net.stats);
    auto kl = kl_per_element(lam.detach(), rp);
    Heatmap hm = finalize_heatmap(kl, model.img_h, model.img_w);
    hm.method = "readout";
    hm.tap = net.tap;
    hm.image_id = sample.id;
    hm.target = sample.label;
    return hm;
}

template <class Real>
void save_readout(const std::string& path, const ReadoutNetT<Real>& net) {
    std::vector<NamedTensor> ts;
    auto put = [&ts](const std::string& name, const TensorT<Real>& t) {
        NamedTensor nt{name, t.shape(), {}};
        nt.data.assign(t.data(), t.data() + t.size());
        ts.push_back(std::move(nt));
    };
    put("w1", net.w1); put("b1", net.b1);
    put("w2", net.w2); put("b2", net.b2);
    put("w3", net.w3); put("b3", net.b3);
    ts.push_back({"mu", net.stats.shape, std::vector<float>(net.stats.mu.begin(), net.stats.mu.end())});
    ts.push_back({"sigma", net.stats.shape, std::vector<float>(net.stats.sigma.begin(), net.stats.sigma.end())});
    ts.push_back({"meta", {2}, {static_cast<float>(net.sigma_s), static_cast<float>(net.stats.n_samples)}});
    ts.push_back({"tap=" + net.tap, {1}, {0.0f}});
    for (size_t i = 0; i < net.read_taps.size(); ++i)
        ts.push_back({"read" + std::to_string(i) + "=" + net.read_taps[i], {1}, {0.0f}});
    save_archive(path, ts);
}

inline ReadoutNet load_readout(const std::string& path) {
    auto ts = load_archive(path);
    ReadoutNet net;
    auto get = [&ts](const std::string& name) {
        const auto& t = archive_find(ts, name);
        return Tensor::from_data(t.shape, t.data);
    };
    net.w1 = get("w1"); net.b1 = get("b1");
    net.w2 = get("w2"); net.b2 = get("b2");
    net.w3 = get("w3"); net.b3 = get("b3");
    const auto& mu = archive_find(ts, "mu");
    net.stats.shape = mu.shape;
    net.stats.mu = mu.data;
    net.stats.sigma = archive_find(ts, "sigma").data;
    const auto& meta = archive_find(ts, "meta");
    net.sigma_s = meta.data.at(0);
    net.stats.n_samples = static_cast<int>(meta.data.at(1));
    std::map<int, std::string> reads;
    for (const auto& t : ts) {
        if (t.name.rfind("tap=", 0) == 0) net.tap = t.name.substr(4);
        if (t.name.rfind("read", 0) == 0) {
            const auto eq = t.name.find('=');
            reads[std::stoi(t.name.substr(4, eq - 4))] = t.name.substr(eq + 1);
        }
    }
    for (auto& [i, name] : reads) net.read_taps.push_back(name);
    if (net.tap.empty()) throw std::runtime_error("readout archive missing tap name");
    return net;
}

// ---------------------------------------------------------------------------
// beta / depth sweep
// ---------------------------------------------------------------------------

struct SweepRow {
    double beta_over_k = 0.0;
    std::string tap;
    double mean_info_per_k_nats = 0.0;
    double mean_prob_after = 0.0;
};

// Per-sample fits over an image set for each (beta, tap) pair; reports the
// mean post-fit information per element and mean post-fit target probability.
template <class Real>
std::vector<SweepRow> beta_depth_sweep(const ModelT<Real>& model, const std::vector<Sample>& images,
                                       const std::vector<double>& betas_over_k,
                                       const std::vector<std::string>& taps,
                                       const std::map<std::string, FeatureStatsT<Real>>& stats,
                                       const BottleneckConfig& base_cfg, int jobs = 1) {
    std::vector<SweepRow> rows;
    for (const auto& tap : taps) {
        const auto& st = stats.at(tap);
        for (double b : betas_over_k) {
            BottleneckConfig cfg = base_cfg;
            cfg.beta_over_k = b;
            std::vector<double> li(images.size()), pr(images.size());
            parallel_for(static_cast<int>(images.size()), jobs, [&](int i) {
                auto res = per_sample_attribution(model, tap, st, images[static_cast<size_t>(i)], cfg);
                li[static_cast<size_t>(i)] = res.diag.info_per_k_nats;
                pr[static_cast<size_t>(i)] = res.diag.prob_after;
            });
            SweepRow row;
            row.beta_over_k = b;
            row.tap = tap;
            for (double v : li) row.mean_info_per_k_nats += v;
            for (double v : pr) row.mean_prob_after += v;
            row.mean_info_per_k_nats /= static_cast<double>(images.size());
            row.mean_prob_after /= static_cast<double>(images.size());
            rows.push_back(row);
        }
    }
    return rows;
}

}  // namespace iba
