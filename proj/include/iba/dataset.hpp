#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "iba/rng.hpp"
#include "iba/tensor.hpp"

namespace iba {

struct Box {
    int x = 0, y = 0, w = 0, h = 0;  // top-left origin, pixels
    int area() const { return w * h; }
};

struct ShapesConfig {
    int classes = 5;
    int image_size = 64;
    int channels = 1;
    int train_count = 4000;
    int val_count = 500;
    uint64_t seed = 7;
};

struct Sample {
    std::vector<float> image;  // [C,H,W], values in [0,1]
    int label = 0;
    Box box;
    int id = 0;
};

// Procedural image dataset: one of five shapes (disk, square, triangle,
// cross, ring) over a textured noise background, with an exact bounding box.
// Every sample is a pure function of (seed, split, index).
class ShapesDataset {
  public:
    explicit ShapesDataset(ShapesConfig cfg = {}) : cfg_(cfg) {
        if (cfg_.classes < 2 || cfg_.classes > 5)
            throw std::invalid_argument("ShapesDataset: classes must be in [2,5], got " +
                                        std::to_string(cfg_.classes));
        if (cfg_.channels != 1 && cfg_.channels != 3)
            throw std::invalid_argument("ShapesDataset: channels must be 1 or 3");
        if (cfg_.image_size < 32)
            throw std::invalid_argument("ShapesDataset: image_size must be >= 32");
    }

    const ShapesConfig& config() const { return cfg_; }
    int train_count() const { return cfg_.train_count; }
    int val_count() const { return cfg_.val_count; }

    Sample train(int i) const { return make(0, i); }
    Sample val(int i) const { return make(1, i); }

    // per-channel mean over the training split (used as degradation fill)
    std::vector<float> channel_means(int n_probe = 256) const {
        const int n = std::min(n_probe, cfg_.train_count);
        std::vector<double> acc(static_cast<size_t>(cfg_.channels), 0.0);
        const size_t plane = static_cast<size_t>(cfg_.image_size) * cfg_.image_size;
        for (int i = 0; i < n; ++i) {
            Sample s = train(i);
            for (int c = 0; c < cfg_.channels; ++c) {
                double sum = 0;
                for (size_t p = 0; p < plane; ++p) sum += s.image[static_cast<size_t>(c) * plane + p];
                acc[static_cast<size_t>(c)] += sum / static_cast<double>(plane);
            }
        }
        std::vector<float> out(static_cast<size_t>(cfg_.channels));
        for (int c = 0; c < cfg_.channels; ++c)
            out[static_cast<size_t>(c)] = static_cast<float>(acc[static_cast<size_t>(c)] / n);
        return out;
    }

  private:
    ShapesConfig cfg_;

    Sample make(int split, int index) const {
        if (index < 0 || index >= (split == 0 ? cfg_.train_count : cfg_.val_count))
            throw std::out_of_range("ShapesDataset: index " + std::to_string(index) +
                                    " out of range for split " + std::to_string(split));
        const int sz = cfg_.image_size;
        Rng rng(mix64(cfg_.seed, static_cast<uint64_t>(split) + 0x5157, static_cast<uint64_t>(index)));
        Sample s;
        s.id = split == 0 ? index : cfg_.train_count + index;
        s.label = index % cfg_.classes;

        // textured background: coarse value noise upsampled bilinearly plus
        // fine per-pixel noise
        const double base = rng.uniform(0.25, 0.45);
        const int g = 9;
        std::vector<double> coarse(static_cast<size_t>(g) * g);
        for (auto& v : coarse) v = rng.uniform(-0.12, 0.12);
        std::vector<float> bg(static_cast<size_t>(sz) * sz);
        for (int y = 0; y < sz; ++y)
            for (int x = 0; x < sz; ++x) {
                const double gy = (y + 0.5) * (g - 1.0) / sz, gx = (x + 0.5) * (g - 1.0) / sz;
                const int iy = std::min(static_cast<int>(gy), g - 2), ix = std::min(static_cast<int>(gx), g - 2);
                const double fy = gy - iy, fx = gx - ix;
                const double v00 = coarse[static_cast<size_t>(iy) * g + ix];
                const double v01 = coarse[static_cast<size_t>(iy) * g + ix + 1];
                const double v10 = coarse[static_cast<size_t>(iy + 1) * g + ix];
                const double v11 = coarse[static_cast<size_t>(iy + 1) * g + ix + 1];
                const double tex = (v00 * (1 - fx) + v01 * fx) * (1 - fy) + (v10 * (1 - fx) + v11 * fx) * fy;
                bg[static_cast<size_t>(y) * sz + x] =
                    static_cast<float>(std::clamp(base + tex + rng.uniform(-0.04, 0.04), 0.0, 1.0));
            }

        // shape mask
        const int side = static_cast<int>(rng.uniform(sz / 4.0, sz * 0.4));  // bounding square
        const int px = rng.uniform_int(sz - side - 4) + 2;
        const int py = rng.uniform_int(sz - side - 4) + 2;
        std::vector<uint8_t> mask(static_cast<size_t>(sz) * sz, 0);
        draw_shape(mask.data(), sz, s.label, px, py, side);

        const double fg = rng.uniform(0.7, 0.95);
        std::vector<float> img = bg;
        int minx = sz, miny = sz, maxx = -1, maxy = -1;
        for (int y = 0; y < sz; ++y)
            for (int x = 0; x < sz; ++x)
                if (mask[static_cast<size_t>(y) * sz + x]) {
                    img[static_cast<size_t>(y) * sz + x] =
                        static_cast<float>(std::clamp(fg + rng.uniform(-0.05, 0.05), 0.0, 1.0));
                    minx = std::min(minx, x);
                    maxx = std::max(maxx, x);
                    miny = std::min(miny, y);
                    maxy = std::max(maxy, y);
                }
        s.box = Box{minx, miny, maxx - minx + 1, maxy - miny + 1};

        s.image.resize(static_cast<size_t>(cfg_.channels) * sz * sz);
        if (cfg_.channels == 1) {
            s.image = img;
        } else {
            // mild per-channel tint, class-independent
            for (int c = 0; c < 3; ++c) {
                const double tint = rng.uniform(0.9, 1.1);
                for (size_t p = 0; p < img.size(); ++p)
                    s.image[static_cast<size_t>(c) * img.size() + p] =
                        static_cast<float>(std::clamp(img[p] * tint, 0.0, 1.0));
            }
        }
        return s;
    }

    static void draw_shape(uint8_t* m, int sz, int label, int px, int py, int side) {
        const double cx = px + side / 2.0, cy = py + side / 2.0, r = side / 2.0;
        for (int y = py; y < py + side; ++y)
            for (int x = px; x < px + side; ++x) {
                const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
                bool in = false;
                switch (label) {
                    case 0:  // disk
                        in = dx * dx + dy * dy <= r * r;
                        break;
                    case 1:  // square
                        in = true;
                        break;
                    case 2: {  // triangle, apex up
                        const double t = (y - py + 0.5) / side;  // 0 at top
                        in = std::abs(dx) <= t * r;
                        break;
                    }
                    case 3: {  // cross
                        const double bar = side / 3.0;
                        in = std::abs(dx) <= bar / 2 || std::abs(dy) <= bar / 2;
                        break;
                    }
                    case 4: {  // ring
                        const double d2 = dx * dx + dy * dy;
                        const double ri = r - std::max(2.0, side / 6.0);
                        in = d2 <= r * r && d2 >= ri * ri;
                        break;
                    }
                    default:
                        break;
                }
                if (in) m[static_cast<size_t>(y) * sz + x] = 1;
            }
    }
};

template <class Real>
TensorT<Real> to_tensor(const Sample& s, int channels, int size, bool batch_dim = true) {
    std::vector<Real> d(s.image.begin(), s.image.end());
    Shape sh = batch_dim ? Shape{1, channels, size, size} : Shape{channels, size, size};
    return TensorT<Real>::from_data(std::move(sh), std::move(d));
}

// Stacks samples into a [N,C,H,W] batch tensor.
template <class Real>
TensorT<Real> to_batch(const std::vector<Sample>& ss, int channels, int size) {
    const size_t per = static_cast<size_t>(channels) * size * size;
    std::vector<Real> d(ss.size() * per);
    for (size_t i = 0; i < ss.size(); ++i)
        std::copy(ss[i].image.begin(), ss[i].image.end(), d.begin() + static_cast<long>(i * per));
    return TensorT<Real>::from_data({static_cast<int>(ss.size()), channels, size, size}, std::move(d));
}

// --- key-value dataset config file ------------------------------------------

inline void save_shapes_config(const std::string& path, const ShapesConfig& c) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << "classes=" << c.classes << "\n"
      << "image_size=" << c.image_size << "\n"
      << "channels=" << c.channels << "\n"
      << "train=" << c.train_count << "\n"
      << "val=" << c.val_count << "\n"
      << "seed=" << c.seed << "\n";
}

inline ShapesConfig load_shapes_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            const auto b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    ShapesConfig c;
    if (kv.count("classes")) c.classes = std::stoi(kv["classes"]);
    if (kv.count("image_size")) c.image_size = std::stoi(kv["image_size"]);
    if (kv.count("channels")) c.channels = std::stoi(kv["channels"]);
    if (kv.count("train")) c.train_count = std::stoi(kv["train"]);
    if (kv.count("val")) c.val_count = std::stoi(kv["val"]);
    if (kv.count("seed")) c.seed = std::stoull(kv["seed"]);
    return c;
}

// --- bounding box text file: image_id x y w h --------------------------------

inline void save_boxes(const std::string& path, const std::vector<std::pair<int, Box>>& boxes) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path);
    for (const auto& [id, b] : boxes) f << id << " " << b.x << " " << b.y << " " << b.w << " " << b.h << "\n";
}

inline std::vector<std::pair<int, Box>> load_boxes(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read " + path);
    std::vector<std::pair<int, Box>> out;
    int id;
    Box b;
    while (f >> id >> b.x >> b.y >> b.w >> b.h) out.emplace_back(id, b);
    return out;
}

// --- optional IDX loader for real grayscale digit data -----------------------

// Reads IDX3 (images, magic 0x00000803) or IDX1 (labels, magic 0x00000801).
inline std::vector<std::vector<float>> load_idx_images(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + path);
    auto rd_u32 = [&f, &path]() {
        unsigned char b[4];
        if (!f.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("truncated IDX file " + path);
        return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
               (static_cast<uint32_t>(b[2]) << 8) | b[3];
    };
    if (rd_u32() != 0x00000803u) throw std::runtime_error("not an IDX3 image file: " + path);
    const uint32_t n = rd_u32(), h = rd_u32(), w = rd_u32();
    std::vector<std::vector<float>> out(n);
    std::vector<unsigned char> buf(static_cast<size_t>(h) * w);
    for (uint32_t i = 0; i < n; ++i) {
        if (!f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
            throw std::runtime_error("truncated IDX file " + path);
        out[i].resize(buf.size());
        for (size_t p = 0; p < buf.size(); ++p) out[i][p] = static_cast<float>(buf[p]) / 255.0f;
    }
    return out;
}

inline std::vector<int> load_idx_labels(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + path);
    auto rd_u32 = [&f, &path]() {
        unsigned char b[4];
        if (!f.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("truncated IDX file " + path);
        return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
               (static_cast<uint32_t>(b[2]) << 8) | b[3];
    };
    if (rd_u32() != 0x00000801u) throw std::runtime_error("not an IDX1 label file: " + path);
    const uint32_t n = rd_u32();
    std::vector<int> out(n);
    for (auto& v : out) {
        char c;
        if (!f.get(c)) throw std::runtime_error("truncated IDX file " + path);
        v = static_cast<unsigned char>(c);
    }
    return out;
}

}  // namespace iba
