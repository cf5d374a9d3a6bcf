#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "iba/adam.hpp"
#include "iba/archive.hpp"
#include "iba/dataset.hpp"
#include "iba/ops.hpp"
#include "iba/rng.hpp"
#include "iba/tensor.hpp"

namespace iba {

enum class LayerKind { Conv, Relu, MaxPool, Flatten, Dense, Softmax };

struct TapPoint {
    std::string name;
    int c = 0, h = 0, w = 0;
    long long k() const { return static_cast<long long>(c) * h * w; }
};

template <class Real>
struct LayerT {
    LayerKind kind;
    std::string name;
    TensorT<Real> w, b;  // Conv / Dense only
    int stride = 1, pad = 0;
    int pool_k = 2, pool_stride = 2;
    std::string tap;  // set on the ReLU closing a conv block
};

// Small fixed-topology CNN classifier: four conv blocks (conv+relu), maxpool
// after blocks 2 and 4, then a dense layer and softmax. Bottlenecks and
// feature readouts attach at the conv block outputs ("conv1".."conv4", taken
// after the activation).
template <class Real>
struct ModelT {
    std::vector<LayerT<Real>> layers;
    int classes = 0, in_channels = 1, img_h = 64, img_w = 64;

    std::vector<TensorT<Real>> parameters() {
        std::vector<TensorT<Real>> ps;
        for (auto& l : layers)
            if (l.kind == LayerKind::Conv || l.kind == LayerKind::Dense) {
                ps.push_back(l.w);
                ps.push_back(l.b);
            }
        return ps;
    }

    void set_requires_grad(bool rg) {
        for (auto& l : layers)
            if (l.kind == LayerKind::Conv || l.kind == LayerKind::Dense) {
                l.w.set_requires_grad(rg);
                l.b.set_requires_grad(rg);
            }
    }

    void zero_grad() {
        for (auto& p : parameters()) p.zero_grad();
    }

    std::vector<std::string> parametric_layer_names() const {
        std::vector<std::string> out;
        for (const auto& l : layers)
            if (l.kind == LayerKind::Conv || l.kind == LayerKind::Dense) out.push_back(l.name);
        return out;
    }

    std::vector<TapPoint> tap_points() const {
        std::vector<TapPoint> out;
        int h = img_h, w = img_w;
        for (const auto& l : layers) {
            if (l.kind == LayerKind::Conv) {
                h = (h + 2 * l.pad - l.w.dim(2)) / l.stride + 1;
                w = (w + 2 * l.pad - l.w.dim(3)) / l.stride + 1;
            } else if (l.kind == LayerKind::MaxPool) {
                h = (h - l.pool_k) / l.pool_stride + 1;
                w = (w - l.pool_k) / l.pool_stride + 1;
            }
            if (l.kind == LayerKind::Relu && !l.tap.empty()) {
                // channel count of the preceding conv
                for (auto it = layers.rbegin(); it != layers.rend(); ++it)
                    if (it->kind == LayerKind::Conv && it->name == l.tap) {
                        out.push_back({l.tap, it->w.dim(0), h, w});
                        break;
                    }
            }
        }
        return out;
    }

    TapPoint tap(const std::string& name) const {
        for (const auto& t : tap_points())
            if (t.name == name) return t;
        throw std::invalid_argument("unknown tap point '" + name + "'");
    }
};

using Model = ModelT<float>;

namespace detail {

template <class Real>
void init_layer(LayerT<Real>& l, Rng& rng) {
    long long fan_in = 0;
    if (l.kind == LayerKind::Conv)
        fan_in = static_cast<long long>(l.w.dim(1)) * l.w.dim(2) * l.w.dim(3);
    else if (l.kind == LayerKind::Dense)
        fan_in = l.w.dim(1);
    else
        return;
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (int i = 0; i < l.w.size(); ++i) l.w.data()[i] = static_cast<Real>(rng.uniform(-bound, bound));
    for (int i = 0; i < l.b.size(); ++i) l.b.data()[i] = Real(0);
}

}  // namespace detail

template <class Real>
ModelT<Real> build_default_model(int classes, int in_channels = 1, int img = 64,
                                 uint64_t seed = 0xC0FFEE) {
    if (classes < 2) throw std::invalid_argument("build_default_model: classes must be >= 2");
    if (img % 4 != 0) throw std::invalid_argument("build_default_model: image size must be divisible by 4");
    ModelT<Real> m;
    m.classes = classes;
    m.in_channels = in_channels;
    m.img_h = m.img_w = img;
    const int ch[4] = {8, 16, 16, 32};
    auto conv = [](const std::string& name, int cin, int cout) {
        LayerT<Real> l{LayerKind::Conv, name};
        l.w = TensorT<Real>::zeros({cout, cin, 3, 3});
        l.b = TensorT<Real>::zeros({cout});
        l.stride = 1;
        l.pad = 1;
        return l;
    };
    auto relu_of = [](const std::string& conv_name, const std::string& name) {
        LayerT<Real> l{LayerKind::Relu, name};
        l.tap = conv_name;
        return l;
    };
    m.layers.push_back(conv("conv1", in_channels, ch[0]));
    m.layers.push_back(relu_of("conv1", "relu1"));
    m.layers.push_back(conv("conv2", ch[0], ch[1]));
    m.layers.push_back(relu_of("conv2", "relu2"));
    m.layers.push_back({LayerKind::MaxPool, "pool1"});
    m.layers.push_back(conv("conv3", ch[1], ch[2]));
    m.layers.push_back(relu_of("conv3", "relu3"));
    m.layers.push_back(conv("conv4", ch[2], ch[3]));
    m.layers.push_back(relu_of("conv4", "relu4"));
    m.layers.push_back({LayerKind::MaxPool, "pool2"});
    m.layers.push_back({LayerKind::Flatten, "flatten"});
    {
        LayerT<Real> fc{LayerKind::Dense, "fc"};
        const int feat = ch[3] * (img / 4) * (img / 4);
        fc.w = TensorT<Real>::zeros({classes, feat});
        fc.b = TensorT<Real>::zeros({classes});
        m.layers.push_back(std::move(fc));
    }
    m.layers.push_back({LayerKind::Softmax, "softmax"});

    Rng rng(mix64(seed, 0x1217));
    for (auto& l : m.layers) detail::init_layer(l, rng);
    return m;
}

// ---------------------------------------------------------------------------
// forward
// ---------------------------------------------------------------------------

template <class Real>
struct ForwardOpts {
    std::string splice_tap;  // apply `splice` to the feature map at this tap
    std::function<TensorT<Real>(const TensorT<Real>&)> splice;
    bool guided = false;                     // guided-backprop ReLU rule
    const std::vector<std::string>* collect = nullptr;  // taps to record ("fc" records logits)
    std::map<std::string, TensorT<Real>>* collected = nullptr;
    std::string stop_at;                     // return the tap value instead of logits
    const TensorT<Real>* resume_value = nullptr;  // start after this tap with the given value
    std::string resume_tap;
    TensorT<Real>* tap_out = nullptr;        // pre-splice feature map at splice_tap
};

// Runs the layer stack up to the dense layer and returns logits (pre-softmax),
// honoring tap hooks. Probabilities are obtained with forward_probs.
template <class Real>
TensorT<Real> forward_logits(const ModelT<Real>& m, const TensorT<Real>& input,
                             const ForwardOpts<Real>& o = {}) {
    TensorT<Real> x = input;
    bool running = o.resume_tap.empty();
    if (!running && o.resume_value) x = *o.resume_value;
    TensorT<Real> logits;
    for (const auto& l : m.layers) {
        if (running) {
            switch (l.kind) {
                case LayerKind::Conv: x = conv2d(x, l.w, l.b, l.stride, l.pad); break;
                case LayerKind::Relu: x = o.guided ? relu_guided(x) : relu(x); break;
                case LayerKind::MaxPool: x = maxpool2d(x, l.pool_k, l.pool_stride); break;
                case LayerKind::Flatten: x = reshape(x, {x.dim(0), x.size() / x.dim(0)}); break;
                case LayerKind::Dense: x = dense(x, l.w, l.b); logits = x; break;
                case LayerKind::Softmax: break;  // applied by forward_probs
            }
        }
        if (l.kind == LayerKind::Relu && !l.tap.empty()) {
            if (!running && l.tap == o.resume_tap) { running = true; continue; }
            if (!running) continue;
            if (!o.stop_at.empty() && l.tap == o.stop_at) return x;
            if (o.collect && o.collected &&
                std::find(o.collect->begin(), o.collect->end(), l.tap) != o.collect->end())
                (*o.collected)[l.tap] = x;
            if (l.tap == o.splice_tap && o.splice) {
                if (o.tap_out) *o.tap_out = x;
                TensorT<Real> y = o.splice(x);
                if (y.shape() != x.shape())
                    throw std::invalid_argument("splice at '" + l.tap + "' changed shape " +
                                                shape_str(x.shape()) + " -> " + shape_str(y.shape()));
                x = y;
            }
        }
    }
    if (!running) throw std::invalid_argument("unknown tap point '" + o.resume_tap + "'");
    if (!o.stop_at.empty()) throw std::invalid_argument("unknown tap point '" + o.stop_at + "'");
    if (o.collect && o.collected &&
        std::find(o.collect->begin(), o.collect->end(), "fc") != o.collect->end())
        (*o.collected)["fc"] = logits;
    return logits;
}

template <class Real>
TensorT<Real> forward_probs(const ModelT<Real>& m, const TensorT<Real>& input,
                            const ForwardOpts<Real>& o = {}) {
    return softmax(forward_logits(m, input, o));
}

template <class Real>
TensorT<Real> forward_to_tap(const ModelT<Real>& m, const TensorT<Real>& input,
                             const std::string& tap) {
    ForwardOpts<Real> o;
    o.stop_at = tap;
    return forward_logits(m, input, o);
}

template <class Real>
TensorT<Real> forward_from_tap(const ModelT<Real>& m, const std::string& tap,
                               const TensorT<Real>& value, bool guided = false) {
    ForwardOpts<Real> o;
    o.resume_tap = tap;
    o.resume_value = &value;
    o.guided = guided;
    return forward_logits(m, TensorT<Real>(), o);
}

// (logits, feature map at tap). The returned map is the pre-splice value.
template <class Real>
std::pair<TensorT<Real>, TensorT<Real>> forward_with_tap(
    const ModelT<Real>& m, const TensorT<Real>& input, const std::string& tap,
    std::function<TensorT<Real>(const TensorT<Real>&)> splice = nullptr) {
    m.tap(tap);  // validates the name
    ForwardOpts<Real> o;
    TensorT<Real> r;
    if (splice) {
        o.splice_tap = tap;
        o.splice = std::move(splice);
        o.tap_out = &r;
        auto logits = forward_logits(m, input, o);
        return {logits, r};
    }
    std::map<std::string, TensorT<Real>> got;
    std::vector<std::string> want{tap};
    o.collect = &want;
    o.collected = &got;
    auto logits = forward_logits(m, input, o);
    return {logits, got.at(tap)};
}

// ---------------------------------------------------------------------------
// cascading randomization
// ---------------------------------------------------------------------------

// Copy of the model with `layer_name` and every later parametric layer
// re-drawn from the init distribution. Earlier layers are bit-identical.
template <class Real>
ModelT<Real> randomize_from(const ModelT<Real>& m, const std::string& layer_name, uint64_t seed) {
    ModelT<Real> out = m;
    for (auto& l : out.layers)
        if (l.kind == LayerKind::Conv || l.kind == LayerKind::Dense) {
            l.w = l.w.detach();
            l.b = l.b.detach();
        }
    bool hit = false;
    int param_idx = 0;
    for (auto& l : out.layers) {
        if (l.kind != LayerKind::Conv && l.kind != LayerKind::Dense) continue;
        if (l.name == layer_name) hit = true;
        if (hit) {
            Rng rng(mix64(seed, 0x9a7d, static_cast<uint64_t>(param_idx)));
            detail::init_layer(l, rng);
        }
        ++param_idx;
    }
    if (!hit) throw std::invalid_argument("randomize_from: unknown layer '" + layer_name + "'");
    return out;
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

struct TrainConfig {
    int epochs = 10;
    double lr = 1e-3;
    int batch = 32;
    uint64_t seed = 1;
    double early_stop_val_acc = -1.0;  // disabled when < 0
    std::ostream* log = nullptr;
};

struct TrainLog {
    std::vector<double> epoch_loss;
    std::vector<double> val_acc;
    int epochs_run = 0;
};

template <class Real>
double val_accuracy(const ModelT<Real>& m, const ShapesDataset& ds, int batch = 64) {
    const auto& cfg = ds.config();
    int correct = 0;
    for (int start = 0; start < cfg.val_count; start += batch) {
        const int n = std::min(batch, cfg.val_count - start);
        std::vector<Sample> ss;
        ss.reserve(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) ss.push_back(ds.val(start + i));
        auto x = to_batch<Real>(ss, cfg.channels, cfg.image_size);
        auto logits = forward_logits(m, x);
        for (int i = 0; i < n; ++i) {
            const Real* row = logits.data() + static_cast<size_t>(i) * m.classes;
            int arg = 0;
            for (int c = 1; c < m.classes; ++c)
                if (row[c] > row[arg]) arg = c;
            if (arg == ss[static_cast<size_t>(i)].label) ++correct;
        }
    }
    return static_cast<double>(correct) / cfg.val_count;
}

// Deterministic Adam training run; throws on divergence (non-finite loss).
template <class Real>
TrainLog train(ModelT<Real>& m, const ShapesDataset& ds, const TrainConfig& cfg = {}) {
    const auto& dc = ds.config();
    if (dc.train_count < 1) throw std::invalid_argument("train: empty dataset");
    m.set_requires_grad(true);
    AdamT<Real> opt(m.parameters(), typename AdamT<Real>::Config{static_cast<Real>(cfg.lr)});
    TrainLog out;
    std::vector<int> idx(static_cast<size_t>(dc.train_count));
    for (int i = 0; i < dc.train_count; ++i) idx[static_cast<size_t>(i)] = i;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(mix64(cfg.seed, 0xe90c, static_cast<uint64_t>(epoch)));
        shuffle_rng.shuffle(idx.begin(), idx.end());
        double loss_sum = 0;
        int steps = 0;
        for (int start = 0; start < dc.train_count; start += cfg.batch) {
            const int n = std::min(cfg.batch, dc.train_count - start);
            std::vector<Sample> ss;
            std::vector<int> ys;
            ss.reserve(static_cast<size_t>(n));
            for (int i = 0; i < n; ++i) {
                ss.push_back(ds.train(idx[static_cast<size_t>(start + i)]));
                ys.push_back(ss.back().label);
            }
            auto x = to_batch<Real>(ss, dc.channels, dc.image_size);
            auto loss = cross_entropy(forward_logits(m, x), ys);
            const double lv = static_cast<double>(loss.item());
            if (!std::isfinite(lv))
                throw std::runtime_error("train: diverged (non-finite loss) at epoch " +
                                         std::to_string(epoch) + " step " + std::to_string(steps));
            backward(loss);
            opt.step();
            loss_sum += lv;
            ++steps;
        }
        out.epoch_loss.push_back(loss_sum / steps);
        out.val_acc.push_back(val_accuracy(m, ds));
        out.epochs_run = epoch + 1;
        if (cfg.log)
            (*cfg.log) << "epoch " << (epoch + 1) << " loss " << out.epoch_loss.back() << " val_acc "
                       << out.val_acc.back() << "\n";
        if (cfg.early_stop_val_acc > 0 && out.val_acc.back() >= cfg.early_stop_val_acc) break;
    }
    m.set_requires_grad(false);
    return out;
}

// ---------------------------------------------------------------------------
// serialization
// ---------------------------------------------------------------------------

template <class Real>
std::vector<NamedTensor> model_to_tensors(const ModelT<Real>& m) {
    std::vector<NamedTensor> out;
    out.push_back({"meta",
                   {4},
                   {static_cast<float>(m.classes), static_cast<float>(m.in_channels),
                    static_cast<float>(m.img_h), static_cast<float>(m.img_w)}});
    for (const auto& l : m.layers)
        if (l.kind == LayerKind::Conv || l.kind == LayerKind::Dense) {
            NamedTensor w{l.name + ".weight", l.w.shape(), {}};
            w.data.assign(l.w.data(), l.w.data() + l.w.size());
            out.push_back(std::move(w));
            NamedTensor b{l.name + ".bias", l.b.shape(), {}};
            b.data.assign(l.b.data(), l.b.data() + l.b.size());
            out.push_back(std::move(b));
        }
    return out;
}

inline void save_model(const std::string& path, const Model& m) {
    save_archive(path, model_to_tensors(m));
}

inline Model load_model(const std::string& path) {
    auto ts = load_archive(path);
    const auto& meta = archive_find(ts, "meta");
    if (meta.data.size() != 4) throw std::runtime_error("model archive: bad meta tensor");
    Model m = build_default_model<float>(static_cast<int>(meta.data[0]), static_cast<int>(meta.data[1]),
                                         static_cast<int>(meta.data[2]));
    for (auto& l : m.layers)
        if (l.kind == LayerKind::Conv || l.kind == LayerKind::Dense) {
            const auto& w = archive_find(ts, l.name + ".weight");
            const auto& b = archive_find(ts, l.name + ".bias");
            if (w.shape != l.w.shape() || b.shape != l.b.shape())
                throw std::runtime_error("model archive: shape mismatch for layer " + l.name);
            std::copy(w.data.begin(), w.data.end(), l.w.data());
            std::copy(b.data.begin(), b.data.end(), l.b.data());
        }
    return m;
}

template <class To, class From>
ModelT<To> model_cast(const ModelT<From>& m) {
    ModelT<To> out;
    out.classes = m.classes;
    out.in_channels = m.in_channels;
    out.img_h = m.img_h;
    out.img_w = m.img_w;
    for (const auto& l : m.layers) {
        LayerT<To> nl{l.kind, l.name};
        nl.stride = l.stride;
        nl.pad = l.pad;
        nl.pool_k = l.pool_k;
        nl.pool_stride = l.pool_stride;
        nl.tap = l.tap;
        if (l.kind == LayerKind::Conv || l.kind == LayerKind::Dense) {
            std::vector<To> w(l.w.data(), l.w.data() + l.w.size());
            std::vector<To> b(l.b.data(), l.b.data() + l.b.size());
            nl.w = TensorT<To>::from_data(l.w.shape(), std::move(w));
            nl.b = TensorT<To>::from_data(l.b.shape(), std::move(b));
        }
        out.layers.push_back(std::move(nl));
    }
    return out;
}

}  // namespace iba
