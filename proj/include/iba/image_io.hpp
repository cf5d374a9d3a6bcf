#pragma once

#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "iba/heatmap.hpp"

namespace iba {

// ---------------------------------------------------------------------------
// minimal PNG writer (RGB8, zlib stream with stored deflate blocks)
// ---------------------------------------------------------------------------

namespace detail {

inline uint32_t crc32_update(uint32_t crc, const unsigned char* p, size_t n) {
    static const auto table = [] {
        std::array<uint32_t, 256> t{};
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    crc = ~crc;
    for (size_t i = 0; i < n; ++i) crc = table[(crc ^ p[i]) & 0xFFu] ^ (crc >> 8);
    return ~crc;
}

inline uint32_t adler32(const unsigned char* p, size_t n) {
    uint32_t a = 1, b = 0;
    for (size_t i = 0; i < n; ++i) {
        a = (a + p[i]) % 65521u;
        b = (b + a) % 65521u;
    }
    return (b << 16) | a;
}

inline void be32(std::vector<unsigned char>& v, uint32_t x) {
    v.push_back(static_cast<unsigned char>(x >> 24));
    v.push_back(static_cast<unsigned char>(x >> 16));
    v.push_back(static_cast<unsigned char>(x >> 8));
    v.push_back(static_cast<unsigned char>(x));
}

inline void png_chunk(std::ofstream& f, const char type[4], const std::vector<unsigned char>& data) {
    std::vector<unsigned char> head;
    be32(head, static_cast<uint32_t>(data.size()));
    f.write(reinterpret_cast<const char*>(head.data()), 4);
    unsigned char tb[4];
    std::memcpy(tb, type, 4);
    f.write(reinterpret_cast<const char*>(tb), 4);
    if (!data.empty()) f.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    std::vector<unsigned char> all(4 + data.size());
    std::memcpy(all.data(), tb, 4);
    if (!data.empty()) std::memcpy(all.data() + 4, data.data(), data.size());
    const uint32_t crc = crc32_update(0, all.data(), all.size());
    std::vector<unsigned char> tail;
    be32(tail, crc);
    f.write(reinterpret_cast<const char*>(tail.data()), 4);
}

}  // namespace detail

// rgb: row-major, 3 bytes per pixel
inline void write_png_rgb(const std::string& path, int w, int h,
                          const std::vector<unsigned char>& rgb) {
    if (static_cast<size_t>(w) * h * 3 != rgb.size())
        throw std::invalid_argument("write_png_rgb: buffer size mismatch");
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path);
    static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
    f.write(reinterpret_cast<const char*>(sig), 8);

    std::vector<unsigned char> ihdr;
    detail::be32(ihdr, static_cast<uint32_t>(w));
    detail::be32(ihdr, static_cast<uint32_t>(h));
    ihdr.push_back(8);   // bit depth
    ihdr.push_back(2);   // color type RGB
    ihdr.push_back(0);   // compression
    ihdr.push_back(0);   // filter
    ihdr.push_back(0);   // interlace
    detail::png_chunk(f, "IHDR", ihdr);

    // raw scanlines with filter byte 0
    std::vector<unsigned char> raw;
    raw.reserve(static_cast<size_t>(h) * (static_cast<size_t>(w) * 3 + 1));
    for (int y = 0; y < h; ++y) {
        raw.push_back(0);
        raw.insert(raw.end(), rgb.begin() + static_cast<long>(static_cast<size_t>(y) * w * 3),
                   rgb.begin() + static_cast<long>((static_cast<size_t>(y) + 1) * w * 3));
    }

    // zlib stream with stored (uncompressed) deflate blocks
    std::vector<unsigned char> idat;
    idat.push_back(0x78);
    idat.push_back(0x01);
    size_t off = 0;
    while (off < raw.size()) {
        const size_t n = std::min<size_t>(65535, raw.size() - off);
        const bool final = off + n == raw.size();
        idat.push_back(final ? 1 : 0);
        idat.push_back(static_cast<unsigned char>(n & 0xFF));
        idat.push_back(static_cast<unsigned char>(n >> 8));
        idat.push_back(static_cast<unsigned char>(~n & 0xFF));
        idat.push_back(static_cast<unsigned char>((~n >> 8) & 0xFF));
        idat.insert(idat.end(), raw.begin() + static_cast<long>(off), raw.begin() + static_cast<long>(off + n));
        off += n;
    }
    detail::be32(idat, detail::adler32(raw.data(), raw.size()));
    detail::png_chunk(f, "IDAT", idat);
    detail::png_chunk(f, "IEND", {});
    if (!f) throw std::runtime_error("write failed for " + path);
}

// ---------------------------------------------------------------------------
// colormap
// ---------------------------------------------------------------------------

struct Rgb {
    unsigned char r, g, b;
};

// fixed viridis-like map, linear interpolation between anchors
inline Rgb viridis(double t) {
    static const unsigned char anchors[9][3] = {
        {68, 1, 84},   {71, 44, 122},  {59, 81, 139},  {44, 113, 142}, {33, 144, 141},
        {39, 173, 129}, {92, 200, 99}, {170, 220, 50}, {253, 231, 37}};
    t = std::clamp(t, 0.0, 1.0);
    const double pos = t * 8.0;
    const int i = std::min(static_cast<int>(pos), 7);
    const double f = pos - i;
    auto mixc = [f](unsigned char a, unsigned char b) {
        return static_cast<unsigned char>(std::lround(a + f * (b - a)));
    };
    return {mixc(anchors[i][0], anchors[i + 1][0]), mixc(anchors[i][1], anchors[i + 1][1]),
            mixc(anchors[i][2], anchors[i + 1][2])};
}

// Renders a heatmap to PNG through the fixed colormap, scaled by its own
// min/max (annotated in the sidecar by the exporter).
inline void write_heatmap_png(const std::string& path, const Heatmap& hm, int scale = 4) {
    const float lo = hm.min_value(), hi = hm.max_value();
    const double span = (hi - lo) > 1e-30f ? static_cast<double>(hi - lo) : 1.0;
    const int w = hm.w * scale, h = hm.h * scale;
    std::vector<unsigned char> rgb(static_cast<size_t>(w) * h * 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const Rgb c = viridis((hm.at(y / scale, x / scale) - lo) / span);
            const size_t o = (static_cast<size_t>(y) * w + x) * 3;
            rgb[o] = c.r;
            rgb[o + 1] = c.g;
            rgb[o + 2] = c.b;
        }
    write_png_rgb(path, w, h, rgb);
}

inline void write_grayscale_png(const std::string& path, int w, int h,
                                const std::vector<float>& v, int scale = 4) {
    std::vector<unsigned char> rgb(static_cast<size_t>(w) * scale * h * scale * 3);
    for (int y = 0; y < h * scale; ++y)
        for (int x = 0; x < w * scale; ++x) {
            const float t = std::clamp(v[static_cast<size_t>(y / scale) * w + x / scale], 0.0f, 1.0f);
            const auto g = static_cast<unsigned char>(std::lround(t * 255.0));
            const size_t o = (static_cast<size_t>(y) * w * scale + x) * 3;
            rgb[o] = rgb[o + 1] = rgb[o + 2] = g;
        }
    write_png_rgb(path, w * scale, h * scale, rgb);
}

// ---------------------------------------------------------------------------
// tiny 5x7 bitmap font (digits, uppercase, a few symbols); lowercase input is
// uppercased
// ---------------------------------------------------------------------------

namespace detail {

struct Glyph {
    char ch;
    const char* rows[7];
};

inline const Glyph* find_glyph(char c) {
    static const Glyph table[] = {
        {' ', {"     ", "     ", "     ", "     ", "     ", "     ", "     "}},
        {'-', {"     ", "     ", "     ", "XXXXX", "     ", "     ", "     "}},
        {'.', {"     ", "     ", "     ", "     ", "     ", " XX  ", " XX  "}},
        {':', {"     ", " XX  ", " XX  ", "     ", " XX  ", " XX  ", "     "}},
        {'/', {"    X", "   X ", "  X  ", "  X  ", " X   ", "X    ", "     "}},
        {'=', {"     ", "     ", "XXXXX", "     ", "XXXXX", "     ", "     "}},
        {'+', {"     ", "  X  ", "  X  ", "XXXXX", "  X  ", "  X  ", "     "}},
        {'%', {"XX  X", "XX X ", "  X  ", "  X  ", " X   ", "X  XX", "X  XX"}},
        {'0', {" XXX ", "X   X", "X  XX", "X X X", "XX  X", "X   X", " XXX "}},
        {'1', {"  X  ", " XX  ", "  X  ", "  X  ", "  X  ", "  X  ", " XXX "}},
        {'2', {" XXX ", "X   X", "    X", "   X ", "  X  ", " X   ", "XXXXX"}},
        {'3', {" XXX ", "X   X", "    X", "  XX ", "    X", "X   X", " XXX "}},
        {'4', {"   X ", "  XX ", " X X ", "X  X ", "XXXXX", "   X ", "   X "}},
        {'5', {"XXXXX", "X    ", "XXXX ", "    X", "    X", "X   X", " XXX "}},
        {'6', {" XXX ", "X    ", "X    ", "XXXX ", "X   X", "X   X", " XXX "}},
        {'7', {"XXXXX", "    X", "   X ", "  X  ", "  X  ", "  X  ", "  X  "}},
        {'8', {" XXX ", "X   X", "X   X", " XXX ", "X   X", "X   X", " XXX "}},
        {'9', {" XXX ", "X   X", "X   X", " XXXX", "    X", "    X", " XXX "}},
        {'A', {" XXX ", "X   X", "X   X", "XXXXX", "X   X", "X   X", "X   X"}},
        {'B', {"XXXX ", "X   X", "X   X", "XXXX ", "X   X", "X   X", "XXXX "}},
        {'C', {" XXX ", "X   X", "X    ", "X    ", "X    ", "X   X", " XXX "}},
        {'D', {"XXXX ", "X   X", "X   X", "X   X", "X   X", "X   X", "XXXX "}},
        {'E', {"XXXXX", "X    ", "X    ", "XXXX ", "X    ", "X    ", "XXXXX"}},
        {'F', {"XXXXX", "X    ", "X    ", "XXXX ", "X    ", "X    ", "X    "}},
        {'G', {" XXX ", "X   X", "X    ", "X XXX", "X   X", "X   X", " XXX "}},
        {'H', {"X   X", "X   X", "X   X", "XXXXX", "X   X", "X   X", "X   X"}},
        {'I', {" XXX ", "  X  ", "  X  ", "  X  ", "  X  ", "  X  ", " XXX "}},
        {'J', {"  XXX", "   X ", "   X ", "   X ", "   X ", "X  X ", " XX  "}},
        {'K', {"X   X", "X  X ", "X X  ", "XX   ", "X X  ", "X  X ", "X   X"}},
        {'L', {"X    ", "X    ", "X    ", "X    ", "X    ", "X    ", "XXXXX"}},
        {'M', {"X   X", "XX XX", "X X X", "X X X", "X   X", "X   X", "X   X"}},
        {'N', {"X   X", "XX  X", "X X X", "X  XX", "X   X", "X   X", "X   X"}},
        {'O', {" XXX ", "X   X", "X   X", "X   X", "X   X", "X   X", " XXX "}},
        {'P', {"XXXX ", "X   X", "X   X", "XXXX ", "X    ", "X    ", "X    "}},
        {'Q', {" XXX ", "X   X", "X   X", "X   X", "X X X", "X  X ", " XX X"}},
        {'R', {"XXXX ", "X   X", "X   X", "XXXX ", "X X  ", "X  X ", "X   X"}},
        {'S', {" XXXX", "X    ", "X    ", " XXX ", "    X", "    X", "XXXX "}},
        {'T', {"XXXXX", "  X  ", "  X  ", "  X  ", "  X  ", "  X  ", "  X  "}},
        {'U', {"X   X", "X   X", "X   X", "X   X", "X   X", "X   X", " XXX "}},
        {'V', {"X   X", "X   X", "X   X", "X   X", "X   X", " X X ", "  X  "}},
        {'W', {"X   X", "X   X", "X   X", "X X X", "X X X", "XX XX", "X   X"}},
        {'X', {"X   X", "X   X", " X X ", "  X  ", " X X ", "X   X", "X   X"}},
        {'Y', {"X   X", "X   X", " X X ", "  X  ", "  X  ", "  X  ", "  X  "}},
        {'Z', {"XXXXX", "    X", "   X ", "  X  ", " X   ", "X    ", "XXXXX"}},
    };
    const char up = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    for (const auto& g : table)
        if (g.ch == up) return &g;
    return nullptr;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// line charts
// ---------------------------------------------------------------------------

class Chart {
  public:
    struct Series {
        std::string label;
        std::vector<double> x, y;
        Rgb color{0, 0, 0};
    };

    Chart(int w = 560, int h = 400, std::string title = "", std::string xlabel = "",
          std::string ylabel = "")
        : w_(w), h_(h), title_(std::move(title)), xlabel_(std::move(xlabel)), ylabel_(std::move(ylabel)) {}

    void add(Series s) { series_.push_back(std::move(s)); }

    static Rgb palette(size_t i) {
        static const Rgb colors[] = {{31, 119, 180}, {255, 127, 14}, {44, 160, 44}, {214, 39, 40},
                                     {148, 103, 189}, {140, 86, 75}, {227, 119, 194}, {127, 127, 127}};
        return colors[i % 8];
    }

    void render(const std::string& path) const {
        std::vector<unsigned char> px(static_cast<size_t>(w_) * h_ * 3, 255);
        const int ml = 56, mr = 16, mt = 28, mb = 40;
        const int x0 = ml, x1 = w_ - mr, y0 = mt, y1 = h_ - mb;
        double lo_x = 0, hi_x = 1, lo_y = 0, hi_y = 1;
        bool first = true;
        for (const auto& s : series_)
            for (size_t i = 0; i < s.x.size(); ++i) {
                if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
                if (first) {
                    lo_x = hi_x = s.x[i];
                    lo_y = hi_y = s.y[i];
                    first = false;
                } else {
                    lo_x = std::min(lo_x, s.x[i]);
                    hi_x = std::max(hi_x, s.x[i]);
                    lo_y = std::min(lo_y, s.y[i]);
                    hi_y = std::max(hi_y, s.y[i]);
                }
            }
        if (hi_x - lo_x < 1e-12) hi_x = lo_x + 1;
        if (hi_y - lo_y < 1e-12) hi_y = lo_y + 1;
        const double pad_y = 0.05 * (hi_y - lo_y);
        lo_y -= pad_y;
        hi_y += pad_y;

        auto to_px = [&](double x, double y) {
            const int xx = x0 + static_cast<int>(std::lround((x - lo_x) / (hi_x - lo_x) * (x1 - x0)));
            const int yy = y1 - static_cast<int>(std::lround((y - lo_y) / (hi_y - lo_y) * (y1 - y0)));
            return std::pair<int, int>(xx, yy);
        };

        // frame and gridlines
        for (int x = x0; x <= x1; ++x) {
            set(px, x, y0, {160, 160, 160});
            set(px, x, y1, {60, 60, 60});
        }
        for (int y = y0; y <= y1; ++y) {
            set(px, x0, y, {60, 60, 60});
            set(px, x1, y, {160, 160, 160});
        }
        for (int i = 1; i < 5; ++i) {
            const int gx = x0 + (x1 - x0) * i / 5;
            const int gy = y0 + (y1 - y0) * i / 5;
            for (int y = y0; y <= y1; ++y) set(px, gx, y, {225, 225, 225});
            for (int x = x0; x <= x1; ++x) set(px, x, gy, {225, 225, 225});
        }
        // ticks + numeric labels
        for (int i = 0; i <= 5; ++i) {
            const double tx = lo_x + (hi_x - lo_x) * i / 5;
            const double ty = lo_y + (hi_y - lo_y) * i / 5;
            const int gx = x0 + (x1 - x0) * i / 5;
            const int gy = y1 - (y1 - y0) * i / 5;
            draw_text(px, gx - 12, y1 + 6, fmt_num(tx), {40, 40, 40});
            draw_text(px, 4, gy - 3, fmt_num(ty), {40, 40, 40});
        }
        // series
        for (size_t si = 0; si < series_.size(); ++si) {
            const auto& s = series_[si];
            for (size_t i = 1; i < s.x.size(); ++i) {
                auto [ax, ay] = to_px(s.x[i - 1], s.y[i - 1]);
                auto [bx, by] = to_px(s.x[i], s.y[i]);
                draw_line(px, ax, ay, bx, by, s.color);
            }
            // legend
            const int ly = y0 + 10 + static_cast<int>(si) * 12;
            for (int x = x1 - 120; x < x1 - 108; ++x) {
                set(px, x, ly, s.color);
                set(px, x, ly + 1, s.color);
            }
            draw_text(px, x1 - 104, ly - 3, s.label, {40, 40, 40});
        }
        draw_text(px, x0, 8, title_, {0, 0, 0});
        draw_text(px, (x0 + x1) / 2 - static_cast<int>(xlabel_.size()) * 3, h_ - 14, xlabel_, {0, 0, 0});
        draw_text(px, 4, y0 - 14, ylabel_, {0, 0, 0});
        write_png_rgb(path, w_, h_, px);
    }

  private:
    int w_, h_;
    std::string title_, xlabel_, ylabel_;
    std::vector<Series> series_;

    static std::string fmt_num(double v) {
        char buf[32];
        if (std::abs(v) >= 1000 || (std::abs(v) < 0.01 && v != 0))
            std::snprintf(buf, sizeof buf, "%.1e", v);
        else
            std::snprintf(buf, sizeof buf, "%.2f", v);
        return buf;
    }

    void set(std::vector<unsigned char>& px, int x, int y, Rgb c) const {
        if (x < 0 || y < 0 || x >= w_ || y >= h_) return;
        const size_t o = (static_cast<size_t>(y) * w_ + x) * 3;
        px[o] = c.r;
        px[o + 1] = c.g;
        px[o + 2] = c.b;
    }

    void draw_line(std::vector<unsigned char>& px, int ax, int ay, int bx, int by, Rgb c) const {
        const int dx = std::abs(bx - ax), dy = -std::abs(by - ay);
        const int sx = ax < bx ? 1 : -1, sy = ay < by ? 1 : -1;
        int err = dx + dy, x = ax, y = ay;
        for (;;) {
            set(px, x, y, c);
            set(px, x, y + 1, c);
            if (x == bx && y == by) break;
            const int e2 = 2 * err;
            if (e2 >= dy) {
                err += dy;
                x += sx;
            }
            if (e2 <= dx) {
                err += dx;
                y += sy;
            }
        }
    }

    void draw_text(std::vector<unsigned char>& px, int x, int y, const std::string& text, Rgb c) const {
        int cx = x;
        for (char ch : text) {
            const auto* g = detail::find_glyph(ch);
            if (g) {
                for (int r = 0; r < 7; ++r)
                    for (int col = 0; col < 5; ++col)
                        if (g->rows[r][col] == 'X') set(px, cx + col, y + r, c);
            }
            cx += 6;
        }
    }
};

}  // namespace iba
