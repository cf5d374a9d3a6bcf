#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "iba/tensor.hpp"

namespace iba {

// Per-pixel attribution grid at image resolution. For the bottleneck methods
// the values are bits per pixel; baseline methods use their own relevance
// units.
struct Heatmap {
    int h = 0, w = 0;
    std::vector<float> v;  // row-major
    std::string method;
    std::string tap;
    double beta_over_k = 0.0;
    int image_id = -1;
    int target = -1;
    double total = 0.0;  // sum of v

    Heatmap() = default;
    Heatmap(int hh, int ww) : h(hh), w(ww), v(static_cast<size_t>(hh) * ww, 0.0f) {}

    float& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
    float at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }

    void recompute_total() {
        double s = 0;
        for (float x : v) s += x;
        total = s;
    }

    float min_value() const { return *std::min_element(v.begin(), v.end()); }
    float max_value() const { return *std::max_element(v.begin(), v.end()); }

    bool all_finite() const {
        for (float x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }
};

// Clamp at the 1st/99th percentile, then rescale to [0,1]. Percentiles use
// linear interpolation on the sorted values.
inline Heatmap normalize_percentile(const Heatmap& hm, double lo_q = 1.0, double hi_q = 99.0) {
    Heatmap out = hm;
    std::vector<float> sorted = hm.v;
    std::sort(sorted.begin(), sorted.end());
    auto pct = [&sorted](double q) {
        const double pos = q / 100.0 * (static_cast<double>(sorted.size()) - 1);
        const size_t i = static_cast<size_t>(pos);
        const double f = pos - static_cast<double>(i);
        if (i + 1 >= sorted.size()) return static_cast<double>(sorted.back());
        return sorted[i] + f * (static_cast<double>(sorted[i + 1]) - sorted[i]);
    };
    const double lo = pct(lo_q), hi = pct(hi_q);
    if (hi - lo < 1e-12) {
        std::fill(out.v.begin(), out.v.end(), 0.0f);
    } else {
        for (auto& x : out.v)
            x = static_cast<float>(std::clamp((static_cast<double>(x) - lo) / (hi - lo), 0.0, 1.0));
    }
    out.recompute_total();
    return out;
}

}  // namespace iba
