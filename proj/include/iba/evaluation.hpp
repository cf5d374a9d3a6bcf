#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "iba/baselines.hpp"
#include "iba/dataset.hpp"
#include "iba/heatmap.hpp"
#include "iba/model.hpp"
#include "iba/parallel.hpp"

namespace iba {

// ---------------------------------------------------------------------------
// tiles
// ---------------------------------------------------------------------------

struct Tile {
    int y0, x0, y1, x1;  // half-open
    int pixels() const { return (y1 - y0) * (x1 - x0); }
};

// Row-major tile grid covering the whole image; border tiles are clipped when
// the tile size does not divide the side.
inline std::vector<Tile> make_tiles(int h, int w, int tile) {
    if (tile < 1 || tile > h || tile > w)
        throw std::invalid_argument("tile size " + std::to_string(tile) + " invalid for " +
                                    std::to_string(h) + "x" + std::to_string(w));
    std::vector<Tile> out;
    for (int y = 0; y < h; y += tile)
        for (int x = 0; x < w; x += tile)
            out.push_back({y, x, std::min(y + tile, h), std::min(x + tile, w)});
    return out;
}

inline double tile_mass(const Heatmap& hm, const Tile& t) {
    double s = 0;
    for (int y = t.y0; y < t.y1; ++y)
        for (int x = t.x0; x < t.x1; ++x) s += static_cast<double>(hm.at(y, x));
    return s;
}

// Tile order by heatmap mass; ties broken by row-major tile index.
inline std::vector<int> rank_tiles(const Heatmap& hm, const std::vector<Tile>& tiles,
                                   bool descending) {
    std::vector<double> mass(tiles.size());
    for (size_t i = 0; i < tiles.size(); ++i) mass[i] = tile_mass(hm, tiles[i]);
    std::vector<int> order(tiles.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (mass[static_cast<size_t>(a)] != mass[static_cast<size_t>(b)])
            return descending ? mass[static_cast<size_t>(a)] > mass[static_cast<size_t>(b)]
                              : mass[static_cast<size_t>(a)] < mass[static_cast<size_t>(b)];
        return a < b;
    });
    return order;
}

// ---------------------------------------------------------------------------
// degradation (MoRF / LeRF)
// ---------------------------------------------------------------------------

enum class Degradation { MoRF, LeRF };

struct DegradationCurve {
    Degradation dir = Degradation::MoRF;
    int tile = 8;
    std::vector<double> x;  // fraction of tiles removed, 0..1
    std::vector<double> y;  // normalized score per step
    double t1 = 0.0, b = 0.0;
};

// Replaces tiles with the per-channel fill value in relevance order and
// tracks the model's top-1 probability. Scores are normalized so an intact
// batch scores 1 and a fully degraded batch scores 0:
//   s = (p - b) / (t1 - b)
// with t1 the mean top-1 probability on the original samples and b the mean
// on the fully degraded ones, both over the evaluated set.
template <class Real>
DegradationCurve degradation_curve(const ModelT<Real>& model, const std::vector<Sample>& images,
                                   const std::vector<Heatmap>& heatmaps, int tile, Degradation dir,
                                   const std::vector<float>& channel_fill, int jobs = 1) {
    if (images.size() != heatmaps.size())
        throw std::invalid_argument("degradation_curve: " + std::to_string(images.size()) +
                                    " images but " + std::to_string(heatmaps.size()) + " heatmaps");
    if (images.empty()) throw std::invalid_argument("degradation_curve: no images");
    const int h = model.img_h, w = model.img_w;
    const auto tiles = make_tiles(h, w, tile);
    const int steps = static_cast<int>(tiles.size());
    const size_t plane = static_cast<size_t>(h) * w;

    // probs[i][j]: top-1 class probability for image i with j tiles replaced
    std::vector<std::vector<double>> probs(images.size());
    parallel_for(static_cast<int>(images.size()), jobs, [&](int ii) {
        const auto i = static_cast<size_t>(ii);
        const Sample& s = images[i];
        auto x0 = to_tensor<Real>(s, model.in_channels, model.img_h);
        auto p0 = forward_probs(model, x0);
        const int cls = argmax_class(p0);
        auto order = rank_tiles(heatmaps[i], tiles, dir == Degradation::MoRF);

        std::vector<Real> work(s.image.begin(), s.image.end());
        probs[i].resize(static_cast<size_t>(steps) + 1);
        probs[i][0] = static_cast<double>(p0.data()[cls]);
        const int chunk = 32;
        int done = 0;
        while (done < steps) {
            const int n = std::min(chunk, steps - done);
            std::vector<Real> batch(static_cast<size_t>(n) * work.size());
            for (int j = 0; j < n; ++j) {
                const Tile& t = tiles[static_cast<size_t>(order[static_cast<size_t>(done + j)])];
                for (int c = 0; c < model.in_channels; ++c)
                    for (int y = t.y0; y < t.y1; ++y)
                        for (int xx = t.x0; xx < t.x1; ++xx)
                            work[static_cast<size_t>(c) * plane + static_cast<size_t>(y) * w + xx] =
                                static_cast<Real>(channel_fill[static_cast<size_t>(c)]);
                std::copy(work.begin(), work.end(), batch.begin() + static_cast<long>(j * work.size()));
            }
            auto xb = TensorT<Real>::from_data({n, model.in_channels, h, w}, std::move(batch));
            auto pb = softmax(forward_logits(model, xb));
            for (int j = 0; j < n; ++j)
                probs[i][static_cast<size_t>(done + j + 1)] =
                    static_cast<double>(pb.data()[static_cast<size_t>(j) * model.classes + cls]);
            done += n;
        }
    });

    DegradationCurve out;
    out.dir = dir;
    out.tile = tile;
    std::vector<double> mean_p(static_cast<size_t>(steps) + 1, 0.0);
    for (const auto& pi : probs)
        for (size_t j = 0; j < pi.size(); ++j) mean_p[j] += pi[j] / static_cast<double>(images.size());
    out.t1 = mean_p.front();
    out.b = mean_p.back();
    const double denom = out.t1 - out.b;
    for (int j = 0; j <= steps; ++j) {
        out.x.push_back(static_cast<double>(j) / steps);
        out.y.push_back(std::abs(denom) < 1e-12 ? 0.0 : (mean_p[static_cast<size_t>(j)] - out.b) / denom);
    }
    return out;
}

// Trapezoidal integral of (lerf - morf) over the removed fraction.
inline double degradation_integral(const DegradationCurve& morf, const DegradationCurve& lerf) {
    if (morf.x != lerf.x)
        throw std::invalid_argument("degradation_integral: curves have different x grids");
    double acc = 0;
    for (size_t j = 1; j < morf.x.size(); ++j) {
        const double dx = morf.x[j] - morf.x[j - 1];
        const double d1 = lerf.y[j - 1] - morf.y[j - 1];
        const double d2 = lerf.y[j] - morf.y[j];
        acc += 0.5 * (d1 + d2) * dx;
    }
    return acc;
}

inline double first_step_drop(const DegradationCurve& c) {
    return c.y.size() > 1 ? c.y[0] - c.y[1] : 0.0;
}

// ---------------------------------------------------------------------------
// Sensitivity-n
// ---------------------------------------------------------------------------

struct SensitivityCurve {
    int tile = 8;
    std::vector<int> n_pixels;
    std::vector<double> mean_corr;
};

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const size_t n = a.size();
    double ma = 0, mb = 0;
    for (size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double sab = 0, sa = 0, sb = 0;
    for (size_t i = 0; i < n; ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        sa += (a[i] - ma) * (a[i] - ma);
        sb += (b[i] - mb) * (b[i] - mb);
    }
    if (sa < 1e-24 || sb < 1e-24) return 0.0;  // degenerate variance
    return sab / std::sqrt(sa * sb);
}

// Log-spaced pixel counts from one tile to `frac` of all pixels.
inline std::vector<int> sensitivity_n_grid(int h, int w, int tile, int points = 8,
                                           double frac = 0.8) {
    const double lo = static_cast<double>(tile) * tile;
    const double hi = frac * h * w;
    std::vector<int> out;
    for (int i = 0; i < points; ++i) {
        const double t = points == 1 ? 0.0 : static_cast<double>(i) / (points - 1);
        const int n = static_cast<int>(std::lround(lo * std::pow(hi / lo, t)));
        if (out.empty() || n != out.back()) out.push_back(n);
    }
    return out;
}

// Pearson correlation between removed attribution mass and the drop of the
// target logit under random tile maskings (pixels zeroed), averaged over
// images. A pixel count n maps to round(n / tile^2) tiles, at least one.
template <class Real>
SensitivityCurve sensitivity_n(const ModelT<Real>& model, const std::vector<Sample>& images,
                               const std::vector<Heatmap>& heatmaps, const std::vector<int>& n_grid,
                               int sets_per_n, int tile, uint64_t seed, int jobs = 1) {
    if (images.size() != heatmaps.size())
        throw std::invalid_argument("sensitivity_n: image/heatmap count mismatch");
    const int h = model.img_h, w = model.img_w;
    const auto tiles = make_tiles(h, w, tile);
    const size_t plane = static_cast<size_t>(h) * w;

    SensitivityCurve out;
    out.tile = tile;
    out.n_pixels = n_grid;
    out.mean_corr.assign(n_grid.size(), 0.0);

    std::vector<std::vector<double>> corr(images.size(),
                                          std::vector<double>(n_grid.size(), 0.0));
    parallel_for(static_cast<int>(images.size()), jobs, [&](int ii) {
        const auto i = static_cast<size_t>(ii);
        const Sample& s = images[i];
        const int target = heatmaps[i].target >= 0 ? heatmaps[i].target : s.label;
        auto x0 = to_tensor<Real>(s, model.in_channels, model.img_h);
        const double base = static_cast<double>(forward_logits(model, x0).data()[target]);

        for (size_t gi = 0; gi < n_grid.size(); ++gi) {
            const int want = n_grid[gi];
            int k = std::max(1, static_cast<int>(std::lround(static_cast<double>(want) / (tile * tile))));
            k = std::min(k, static_cast<int>(tiles.size()));
            std::vector<double> removed(static_cast<size_t>(sets_per_n));
            std::vector<double> drop(static_cast<size_t>(sets_per_n));

            const int chunk = 32;
            std::vector<int> pool(tiles.size());
            for (int setj = 0; setj < sets_per_n; setj += chunk) {
                const int nb = std::min(chunk, sets_per_n - setj);
                std::vector<Real> batch(static_cast<size_t>(nb) * s.image.size());
                for (int bj = 0; bj < nb; ++bj) {
                    Rng rng(mix64(seed, (static_cast<uint64_t>(s.id) << 24) ^ (gi << 12),
                                  static_cast<uint64_t>(setj + bj)));
                    std::iota(pool.begin(), pool.end(), 0);
                    // partial Fisher-Yates: first k entries become the set
                    for (int t = 0; t < k; ++t) {
                        const int j = t + rng.uniform_int(static_cast<int>(pool.size()) - t);
                        std::swap(pool[static_cast<size_t>(t)], pool[static_cast<size_t>(j)]);
                    }
                    Real* img = batch.data() + static_cast<size_t>(bj) * s.image.size();
                    for (size_t p = 0; p < s.image.size(); ++p) img[p] = static_cast<Real>(s.image[p]);
                    double mass = 0;
                    for (int t = 0; t < k; ++t) {
                        const Tile& tl = tiles[static_cast<size_t>(pool[static_cast<size_t>(t)])];
                        mass += tile_mass(heatmaps[i], tl);
                        for (int c = 0; c < model.in_channels; ++c)
                            for (int y = tl.y0; y < tl.y1; ++y)
                                for (int xx = tl.x0; xx < tl.x1; ++xx)
                                    img[static_cast<size_t>(c) * plane + static_cast<size_t>(y) * w + xx] = Real(0);
                    }
                    removed[static_cast<size_t>(setj + bj)] = mass;
                }
                auto xb = TensorT<Real>::from_data({nb, model.in_channels, h, w}, std::move(batch));
                auto logits = forward_logits(model, xb);
                for (int bj = 0; bj < nb; ++bj)
                    drop[static_cast<size_t>(setj + bj)] =
                        base - static_cast<double>(logits.data()[static_cast<size_t>(bj) * model.classes + target]);
            }
            corr[i][gi] = pearson(removed, drop);
        }
    });

    for (size_t gi = 0; gi < n_grid.size(); ++gi) {
        for (size_t i = 0; i < images.size(); ++i) out.mean_corr[gi] += corr[i][gi];
        out.mean_corr[gi] /= static_cast<double>(images.size());
    }
    return out;
}

// ---------------------------------------------------------------------------
// bounding box metric
// ---------------------------------------------------------------------------

// Fraction of the n highest-scored pixels (n = box area) that fall inside the
// box. Ties are broken by row-major pixel index.
inline double bbox_ratio(const Heatmap& hm, const Box& box) {
    const int n = box.area();
    if (n < 1) throw std::invalid_argument("bbox_ratio: empty box");
    if (box.x < 0 || box.y < 0 || box.x + box.w > hm.w || box.y + box.h > hm.h)
        throw std::invalid_argument("bbox_ratio: box outside image");
    std::vector<int> idx(hm.v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&hm](int a, int b) {
        const float va = hm.v[static_cast<size_t>(a)], vb = hm.v[static_cast<size_t>(b)];
        if (va != vb) return va > vb;
        return a < b;
    });
    int inside = 0;
    for (int i = 0; i < n; ++i) {
        const int y = idx[static_cast<size_t>(i)] / hm.w, x = idx[static_cast<size_t>(i)] % hm.w;
        if (x >= box.x && x < box.x + box.w && y >= box.y && y < box.y + box.h) ++inside;
    }
    return static_cast<double>(inside) / n;
}

// ---------------------------------------------------------------------------
// SSIM
// ---------------------------------------------------------------------------

// Mean local SSIM over sliding uniform windows (valid positions only),
// C1 = (0.01 L)^2, C2 = (0.03 L)^2 with L = 1, unbiased (n-1) covariance
// normalization as in the common scikit-image implementation. Inputs are
// expected to be normalized to [0,1] beforehand.
inline double ssim(const Heatmap& a, const Heatmap& b, int window = 5) {
    if (a.h != b.h || a.w != b.w)
        throw std::invalid_argument("ssim: shape mismatch " + std::to_string(a.h) + "x" +
                                    std::to_string(a.w) + " vs " + std::to_string(b.h) + "x" +
                                    std::to_string(b.w));
    if (window < 2 || window > a.h || window > a.w)
        throw std::invalid_argument("ssim: window does not fit the grid");
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const int oh = a.h - window + 1, ow = a.w - window + 1;
    const double npix = static_cast<double>(window) * window;
    const double norm = npix / (npix - 1.0);
    double acc = 0;
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
            for (int dy = 0; dy < window; ++dy)
                for (int dx = 0; dx < window; ++dx) {
                    const double va = a.at(y + dy, x + dx), vb = b.at(y + dy, x + dx);
                    sa += va;
                    sb += vb;
                    saa += va * va;
                    sbb += vb * vb;
                    sab += va * vb;
                }
            const double ma = sa / npix, mb = sb / npix;
            const double va = (saa / npix - ma * ma) * norm;
            const double vb = (sbb / npix - mb * mb) * norm;
            const double cov = (sab / npix - ma * mb) * norm;
            acc += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    return acc / (static_cast<double>(oh) * ow);
}

// ---------------------------------------------------------------------------
// sanity check: cascading parameter randomization
// ---------------------------------------------------------------------------

struct SanityPoint {
    std::string layer;  // "none" for the self-comparison baseline
    double mean_ssim = 0.0;
};

using MethodFactory = std::function<AttributionMethod(const Model&)>;

// Re-initializes the model from `layers[d]` onward (cascading, ordered last
// layer first), recomputes heatmaps with the rebuilt method, and reports the
// mean SSIM against the original heatmaps. Heatmaps are percentile-normalized
// before comparison.
inline std::vector<SanityPoint> sanity_check(const Model& model, const MethodFactory& make_fn,
                                             const std::vector<Sample>& images,
                                             const std::vector<std::string>& layers_last_to_first,
                                             uint64_t seed, int jobs = 1) {
    std::vector<Heatmap> original(images.size());
    {
        AttributionMethod method = make_fn(model);
        parallel_for(static_cast<int>(images.size()), jobs, [&](int i) {
            original[static_cast<size_t>(i)] =
                normalize_percentile(method.run(images[static_cast<size_t>(i)]));
        });
    }
    std::vector<SanityPoint> out;
    {
        double acc = 0;
        for (const auto& hm : original) acc += ssim(hm, hm);
        out.push_back({"none", acc / static_cast<double>(images.size())});
    }
    for (size_t d = 0; d < layers_last_to_first.size(); ++d) {
        Model rnd = randomize_from(model, layers_last_to_first[d], mix64(seed, 0x5a11, d));
        AttributionMethod method = make_fn(rnd);
        std::vector<double> sims(images.size());
        parallel_for(static_cast<int>(images.size()), jobs, [&](int i) {
            Heatmap hm = normalize_percentile(method.run(images[static_cast<size_t>(i)]));
            sims[static_cast<size_t>(i)] = ssim(original[static_cast<size_t>(i)], hm);
        });
        double acc = 0;
        for (double s : sims) acc += s;
        out.push_back({layers_last_to_first[d], acc / static_cast<double>(images.size())});
    }
    return out;
}

// Standard factory: rebuilds the method on a (possibly randomized) model.
// The per-sample bottleneck re-estimates its feature statistics on the new
// model; a readout net is reused without retraining.
inline MethodFactory make_method_factory(const std::string& name, const MethodContext& base,
                                         const ShapesDataset& ds, int stats_samples = 64) {
    return [name, base, &ds, stats_samples](const Model& m) {
        MethodContext ctx = base;
        ctx.model = &m;
        if (name == "per-sample") {
            auto st = std::make_shared<FeatureStats>(estimate_stats(m, ctx.tap, ds, stats_samples));
            AttributionMethod method{name, true, {}};
            method.run = [&m, st, cfg = ctx.bottleneck, tap = ctx.tap](const Sample& s) {
                return per_sample_attribution(m, tap, *st, s, cfg).heatmap;
            };
            return method;
        }
        return make_method(name, ctx);
    };
}

// ---------------------------------------------------------------------------
// report assembly
// ---------------------------------------------------------------------------

struct MethodScores {
    std::string method;
    // tile size -> (morf, lerf, integral)
    std::map<int, std::pair<DegradationCurve, DegradationCurve>> curves;
    std::map<int, double> degradation;
    double bbox = std::nan("");
    SensitivityCurve sensn;
    std::vector<SanityPoint> sanity;
};

struct EvalReport {
    std::vector<MethodScores> methods;

    const MethodScores& find(const std::string& name) const {
        for (const auto& m : methods)
            if (m.method == name) return m;
        throw std::invalid_argument("EvalReport: no method '" + name + "'");
    }
};

}  // namespace iba
