#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "iba/bottleneck.hpp"
#include "iba/dataset.hpp"
#include "iba/heatmap.hpp"
#include "iba/model.hpp"
#include "iba/ops.hpp"
#include "iba/rng.hpp"

namespace iba {

namespace detail {

template <class Real>
Heatmap grad_to_heatmap_sum(const TensorT<Real>& x, int h, int w, int channels) {
    Heatmap hm(h, w);
    const Real* g = x.node()->grad.data();
    const size_t plane = static_cast<size_t>(h) * w;
    for (int c = 0; c < channels; ++c)
        for (size_t i = 0; i < plane; ++i) hm.v[i] += static_cast<float>(g[static_cast<size_t>(c) * plane + i]);
    hm.recompute_total();
    return hm;
}

}  // namespace detail

// Uniform(0,1) per pixel, seeded.
inline Heatmap random_attribution(int h, int w, uint64_t seed) {
    Heatmap hm(h, w);
    Rng rng(mix64(seed, 0x4a2d));
    for (auto& v : hm.v) v = static_cast<float>(rng.uniform());
    hm.recompute_total();
    hm.method = "random";
    return hm;
}

// d logit_target / d input, summed over channels (signed).
template <class Real>
Heatmap gradient_map(const ModelT<Real>& model, const Sample& sample, int target) {
    auto x = to_tensor<Real>(sample, model.in_channels, model.img_h);
    x.set_requires_grad(true);
    auto logits = forward_logits(model, x);
    backward(pick(logits, target));
    Heatmap hm = detail::grad_to_heatmap_sum(x, model.img_h, model.img_w, model.in_channels);
    hm.method = "gradient";
    hm.image_id = sample.id;
    hm.target = target;
    return hm;
}

// max over channels of |gradient|
template <class Real>
Heatmap saliency(const ModelT<Real>& model, const Sample& sample, int target) {
    auto x = to_tensor<Real>(sample, model.in_channels, model.img_h);
    x.set_requires_grad(true);
    auto logits = forward_logits(model, x);
    backward(pick(logits, target));
    const int h = model.img_h, w = model.img_w;
    Heatmap hm(h, w);
    const Real* g = x.node()->grad.data();
    const size_t plane = static_cast<size_t>(h) * w;
    for (int c = 0; c < model.in_channels; ++c)
        for (size_t i = 0; i < plane; ++i)
            hm.v[i] = std::max(hm.v[i], std::abs(static_cast<float>(g[static_cast<size_t>(c) * plane + i])));
    hm.recompute_total();
    hm.method = "saliency";
    hm.image_id = sample.id;
    hm.target = target;
    return hm;
}

// Mean saliency over n Gaussian-perturbed copies, sigma = noise_frac*(max-min).
template <class Real>
Heatmap smoothgrad(const ModelT<Real>& model, const Sample& sample, int target, int n = 50,
                   double noise_frac = 0.15, uint64_t seed = 1) {
    const int h = model.img_h, w = model.img_w;
    float lo = sample.image[0], hi = sample.image[0];
    for (float v : sample.image) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double sigma = noise_frac * static_cast<double>(hi - lo);
    Heatmap acc(h, w);
    Rng rng(mix64(seed, 0x560d, static_cast<uint64_t>(sample.id)));
    for (int i = 0; i < n; ++i) {
        Sample noisy = sample;
        for (auto& v : noisy.image) v = static_cast<float>(v + rng.normal(0.0, sigma));
        Heatmap m = saliency(model, noisy, target);
        for (size_t p = 0; p < acc.v.size(); ++p) acc.v[p] += m.v[p] / static_cast<float>(n);
    }
    acc.recompute_total();
    acc.method = "smoothgrad";
    acc.image_id = sample.id;
    acc.target = target;
    return acc;
}

// (x - baseline) element-wise times the mean gradient along the straight path
// from the zero baseline (midpoint rule), channel-summed.
template <class Real>
Heatmap integrated_gradients(const ModelT<Real>& model, const Sample& sample, int target,
                             int steps = 50) {
    const int h = model.img_h, w = model.img_w;
    const size_t sz = sample.image.size();
    std::vector<double> mean_grad(sz, 0.0);
    for (int s = 0; s < steps; ++s) {
        const double a = (s + 0.5) / steps;
        Sample scaled = sample;
        for (auto& v : scaled.image) v = static_cast<float>(v * a);
        auto x = to_tensor<Real>(scaled, model.in_channels, model.img_h);
        x.set_requires_grad(true);
        backward(pick(forward_logits(model, x), target));
        const Real* g = x.node()->grad.data();
        for (size_t i = 0; i < sz; ++i) mean_grad[i] += static_cast<double>(g[i]) / steps;
    }
    Heatmap hm(h, w);
    const size_t plane = static_cast<size_t>(h) * w;
    for (int c = 0; c < model.in_channels; ++c)
        for (size_t i = 0; i < plane; ++i) {
            const size_t j = static_cast<size_t>(c) * plane + i;
            hm.v[i] += static_cast<float>(static_cast<double>(sample.image[j]) * mean_grad[j]);
        }
    hm.recompute_total();
    hm.method = "intgrad";
    hm.image_id = sample.id;
    hm.target = target;
    return hm;
}

// Relevance of a patch = logit drop when the patch is zeroed; every pixel of
// the patch receives that value. Patches at the right/bottom border are
// clipped so the whole image is covered once.
template <class Real>
Heatmap occlusion(const ModelT<Real>& model, const Sample& sample, int target, int patch,
                  int stride = -1) {
    if (stride <= 0) stride = patch;
    const int h = model.img_h, w = model.img_w;
    if (patch > h || patch > w)
        throw std::invalid_argument("occlusion: patch " + std::to_string(patch) + " exceeds image side");
    auto x0 = to_tensor<Real>(sample, model.in_channels, model.img_h);
    auto logits0 = forward_logits(model, x0);
    const double base = static_cast<double>(logits0.data()[target]);

    struct Patch { int y0, x0, y1, x1; };
    std::vector<Patch> patches;
    for (int y = 0; y < h; y += stride)
        for (int x = 0; x < w; x += stride)
            patches.push_back({y, x, std::min(y + patch, h), std::min(x + patch, w)});

    Heatmap hm(h, w);
    const size_t plane = static_cast<size_t>(h) * w;
    const int chunk = 64;
    for (size_t start = 0; start < patches.size(); start += chunk) {
        const int n = static_cast<int>(std::min<size_t>(chunk, patches.size() - start));
        std::vector<Real> data(static_cast<size_t>(n) * sample.image.size());
        for (int i = 0; i < n; ++i) {
            const Patch& p = patches[start + static_cast<size_t>(i)];
            Real* img = data.data() + static_cast<size_t>(i) * sample.image.size();
            for (size_t j = 0; j < sample.image.size(); ++j) img[j] = static_cast<Real>(sample.image[j]);
            for (int c = 0; c < model.in_channels; ++c)
                for (int y = p.y0; y < p.y1; ++y)
                    for (int xx = p.x0; xx < p.x1; ++xx)
                        img[static_cast<size_t>(c) * plane + static_cast<size_t>(y) * w + xx] = Real(0);
        }
        auto xb = TensorT<Real>::from_data({n, model.in_channels, h, w}, std::move(data));
        auto logits = forward_logits(model, xb);
        for (int i = 0; i < n; ++i) {
            const double rel = base - static_cast<double>(
                logits.data()[static_cast<size_t>(i) * model.classes + target]);
            const Patch& p = patches[start + static_cast<size_t>(i)];
            for (int y = p.y0; y < p.y1; ++y)
                for (int xx = p.x0; xx < p.x1; ++xx) hm.at(y, xx) = static_cast<float>(rel);
        }
    }
    hm.recompute_total();
    hm.method = "occlusion" + std::to_string(patch);
    hm.image_id = sample.id;
    hm.target = target;
    return hm;
}

// Channel weights = spatial mean of d logit / d A at the tap; map =
// relu(sum_k w_k A_k) bilinearly resized to the image.
template <class Real>
Heatmap grad_cam(const ModelT<Real>& model, const Sample& sample, int target,
                 const std::string& tap = "conv4") {
    const TapPoint tp = model.tap(tap);
    auto x = to_tensor<Real>(sample, model.in_channels, model.img_h);
    auto a = forward_to_tap(model, x, tap).detach(/*requires_grad=*/true);
    auto logits = forward_from_tap(model, tap, a);
    backward(pick(logits, target));
    const Real* av = a.data();
    const Real* g = a.node()->grad.data();
    const size_t plane = static_cast<size_t>(tp.h) * tp.w;
    std::vector<Real> cam(plane, Real(0));
    for (int c = 0; c < tp.c; ++c) {
        double wsum = 0;
        for (size_t i = 0; i < plane; ++i) wsum += static_cast<double>(g[static_cast<size_t>(c) * plane + i]);
        const Real wk = static_cast<Real>(wsum / static_cast<double>(plane));
        for (size_t i = 0; i < plane; ++i) cam[i] += wk * av[static_cast<size_t>(c) * plane + i];
    }
    for (auto& v : cam) v = std::max(v, Real(0));
    auto up = bilinear_resize(TensorT<Real>::from_data({1, tp.h, tp.w}, std::move(cam)),
                              model.img_h, model.img_w);
    Heatmap hm(model.img_h, model.img_w);
    for (size_t i = 0; i < hm.v.size(); ++i) hm.v[i] = static_cast<float>(up.data()[i]);
    hm.recompute_total();
    hm.method = "gradcam";
    hm.image_id = sample.id;
    hm.target = target;
    return hm;
}

// Input gradient under the guided ReLU backward rule, channel-summed.
template <class Real>
Heatmap guided_backprop(const ModelT<Real>& model, const Sample& sample, int target) {
    auto x = to_tensor<Real>(sample, model.in_channels, model.img_h);
    x.set_requires_grad(true);
    ForwardOpts<Real> o;
    o.guided = true;
    auto logits = forward_logits(model, x, o);
    backward(pick(logits, target));
    Heatmap hm = detail::grad_to_heatmap_sum(x, model.img_h, model.img_w, model.in_channels);
    hm.method = "guided-bp";
    hm.image_id = sample.id;
    hm.target = target;
    return hm;
}

inline Heatmap minmax_normalized(const Heatmap& h) {
    Heatmap out = h;
    const float lo = h.min_value(), hi = h.max_value();
    if (hi - lo < 1e-30f) {
        std::fill(out.v.begin(), out.v.end(), 0.0f);
    } else {
        for (auto& v : out.v) v = (v - lo) / (hi - lo);
    }
    out.recompute_total();
    return out;
}

// Elementwise product of min-max normalized Grad-CAM and GuidedBP maps.
template <class Real>
Heatmap guided_grad_cam(const ModelT<Real>& model, const Sample& sample, int target,
                        const std::string& tap = "conv4") {
    Heatmap gc = minmax_normalized(grad_cam(model, sample, target, tap));
    Heatmap gb = minmax_normalized(guided_backprop(model, sample, target));
    Heatmap hm(model.img_h, model.img_w);
    for (size_t i = 0; i < hm.v.size(); ++i) hm.v[i] = gc.v[i] * gb.v[i];
    hm.recompute_total();
    hm.method = "guided-gradcam";
    hm.image_id = sample.id;
    hm.target = target;
    return hm;
}

// ---------------------------------------------------------------------------
// method registry
// ---------------------------------------------------------------------------

// A named image -> Heatmap function, deterministic given its seed.
struct AttributionMethod {
    std::string name;
    bool deterministic = true;
    std::function<Heatmap(const Sample&)> run;
};

struct MethodContext {
    const Model* model = nullptr;
    const FeatureStats* stats = nullptr;    // per-sample bottleneck
    const ReadoutNet* readout = nullptr;    // readout bottleneck
    BottleneckConfig bottleneck;
    std::string tap = "conv3";
    uint64_t seed = 1;
};

inline std::vector<std::string> known_method_names() {
    return {"random",  "gradient",  "saliency",  "smoothgrad",    "intgrad",   "occlusion8",
            "occlusion14", "gradcam", "guided-bp", "guided-gradcam", "per-sample", "readout"};
}

inline AttributionMethod make_method(const std::string& name, const MethodContext& ctx) {
    const Model& m = *ctx.model;
    auto target_of = [](const Sample& s) { return s.label; };
    if (name == "random")
        return {name, true, [&m, seed = ctx.seed](const Sample& s) {
                    Heatmap hm = random_attribution(m.img_h, m.img_w, mix64(seed, static_cast<uint64_t>(s.id)));
                    hm.image_id = s.id;
                    hm.target = s.label;
                    return hm;
                }};
    if (name == "gradient")
        return {name, true, [&m, target_of](const Sample& s) { return gradient_map(m, s, target_of(s)); }};
    if (name == "saliency")
        return {name, true, [&m, target_of](const Sample& s) { return saliency(m, s, target_of(s)); }};
    if (name == "smoothgrad")
        return {name, true, [&m, target_of, seed = ctx.seed](const Sample& s) {
                    return smoothgrad(m, s, target_of(s), 50, 0.15, seed);
                }};
    if (name == "intgrad")
        return {name, true, [&m, target_of](const Sample& s) { return integrated_gradients(m, s, target_of(s)); }};
    if (name == "occlusion8")
        return {name, true, [&m, target_of](const Sample& s) { return occlusion(m, s, target_of(s), 8); }};
    if (name == "occlusion14")
        return {name, true, [&m, target_of](const Sample& s) { return occlusion(m, s, target_of(s), 14); }};
    if (name == "gradcam")
        return {name, true, [&m, target_of](const Sample& s) { return grad_cam(m, s, target_of(s)); }};
    if (name == "guided-bp")
        return {name, true, [&m, target_of](const Sample& s) { return guided_backprop(m, s, target_of(s)); }};
    if (name == "guided-gradcam")
        return {name, true, [&m, target_of](const Sample& s) { return guided_grad_cam(m, s, target_of(s)); }};
    if (name == "per-sample") {
        if (!ctx.stats) throw std::invalid_argument("per-sample method needs feature stats");
        return {name, true,
                [&m, stats = *ctx.stats, cfg = ctx.bottleneck, tap = ctx.tap](const Sample& s) {
                    return per_sample_attribution(m, tap, stats, s, cfg).heatmap;
                }};
    }
    if (name == "readout") {
        if (!ctx.readout) throw std::invalid_argument("readout method needs a trained readout net");
        return {name, true, [&m, net = ctx.readout](const Sample& s) { return readout_attribution(*net, m, s); }};
    }
    throw std::invalid_argument("unknown attribution method '" + name + "'");
}

}  // namespace iba
