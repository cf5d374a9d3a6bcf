#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "iba/evaluation.hpp"
#include "iba/heatmap.hpp"
#include "iba/image_io.hpp"
#include "iba/model.hpp"

namespace iba {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// hashing (FNV-1a 64, content fingerprints for the run manifest)
// ---------------------------------------------------------------------------

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline uint64_t fnv1a64_file(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot hash " + path.string());
    uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    while (f.read(buf, sizeof buf) || f.gcount() > 0) h = fnv1a64(buf, static_cast<size_t>(f.gcount()), h);
    return h;
}

inline std::string hex64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// ---------------------------------------------------------------------------
// heatmap export: CSV grid + JSON sidecar + PNG
// ---------------------------------------------------------------------------

inline std::string fmt_float(float v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
    return buf;
}

inline void write_heatmap_csv(const fs::path& path, const Heatmap& hm) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    for (int y = 0; y < hm.h; ++y) {
        for (int x = 0; x < hm.w; ++x) {
            if (x) f << ",";
            f << fmt_float(hm.at(y, x));
        }
        f << "\n";
    }
}

inline Heatmap read_heatmap_csv(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read " + path.string());
    std::vector<std::vector<float>> rows;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::vector<float> row;
        size_t pos = 0;
        while (pos <= line.size()) {
            const size_t comma = line.find(',', pos);
            const std::string cell = line.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
            row.push_back(std::stof(cell));
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw std::runtime_error("empty heatmap csv " + path.string());
    Heatmap hm(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()));
    for (int y = 0; y < hm.h; ++y)
        for (int x = 0; x < hm.w; ++x) hm.at(y, x) = rows[static_cast<size_t>(y)][static_cast<size_t>(x)];
    hm.recompute_total();
    return hm;
}

inline void write_heatmap_sidecar(const fs::path& path, const Heatmap& hm) {
    nlohmann::json j;
    j["method"] = hm.method;
    j["tap"] = hm.tap;
    j["beta_over_k"] = hm.beta_over_k;
    j["bits_total"] = hm.total;
    j["min"] = hm.min_value();
    j["max"] = hm.max_value();
    j["image_id"] = hm.image_id;
    j["target"] = hm.target;
    j["height"] = hm.h;
    j["width"] = hm.w;
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << j.dump(2) << "\n";
}

// writes <stem>.csv, <stem>.json and <stem>.png under dir
inline void export_heatmap(const fs::path& dir, const std::string& stem, const Heatmap& hm) {
    write_heatmap_csv(dir / (stem + ".csv"), hm);
    write_heatmap_sidecar(dir / (stem + ".json"), hm);
    write_heatmap_png((dir / (stem + ".png")).string(), hm);
}

// ---------------------------------------------------------------------------
// run manifest
// ---------------------------------------------------------------------------

// Config echo plus FNV-1a content hash of every output file of a run.
class Manifest {
  public:
    Manifest(fs::path dir, std::string command) : dir_(std::move(dir)), command_(std::move(command)) {}

    void set(const std::string& key, const std::string& value) { config_[key] = value; }
    void set(const std::string& key, double value) { config_[key] = trim_num(value); }
    void set(const std::string& key, long long value) { config_[key] = std::to_string(value); }

    void add_output(const fs::path& rel) { outputs_.push_back(rel.string()); }

    void write() const {
        nlohmann::json j;
        j["command"] = command_;
        j["config"] = config_;
        nlohmann::json outs = nlohmann::json::object();
        for (const auto& rel : outputs_) outs[rel] = hex64(fnv1a64_file(dir_ / rel));
        j["outputs"] = outs;
        std::ofstream f(dir_ / "manifest.json", std::ios::trunc);
        if (!f) throw std::runtime_error("cannot write manifest in " + dir_.string());
        f << j.dump(2) << "\n";
    }

  private:
    fs::path dir_;
    std::string command_;
    std::map<std::string, std::string> config_;
    std::vector<std::string> outputs_;

    static std::string trim_num(double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.9g", v);
        return buf;
    }
};

// ---------------------------------------------------------------------------
// evaluation report: TSV + per-curve CSVs + plots
// ---------------------------------------------------------------------------

inline void write_curve_csv(const fs::path& path, const std::vector<double>& x,
                            const std::vector<double>& y, const char* xh, const char* yh) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << xh << "," << yh << "\n";
    char buf[64];
    for (size_t i = 0; i < x.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.9g,%.9g", x[i], y[i]);
        f << buf << "\n";
    }
}

// report.tsv mirrors the summary-table layout: one row per method, one
// degradation column per tile size, then the bounding-box ratio.
inline std::vector<fs::path> write_eval_report(const fs::path& dir, const EvalReport& report) {
    std::vector<fs::path> written;
    std::vector<int> tiles;
    for (const auto& m : report.methods)
        for (const auto& [t, _] : m.degradation)
            if (std::find(tiles.begin(), tiles.end(), t) == tiles.end()) tiles.push_back(t);
    std::sort(tiles.begin(), tiles.end());

    {
        std::ofstream f(dir / "report.tsv", std::ios::trunc);
        if (!f) throw std::runtime_error("cannot write report.tsv");
        f << "method";
        for (int t : tiles) f << "\tdeg_" << t << "x" << t;
        f << "\tbbox\n";
        char buf[64];
        for (const auto& m : report.methods) {
            f << m.method;
            for (int t : tiles) {
                auto it = m.degradation.find(t);
                if (it == m.degradation.end()) {
                    f << "\t--";
                } else {
                    std::snprintf(buf, sizeof buf, "\t%.4f", it->second);
                    f << buf;
                }
            }
            if (std::isnan(m.bbox)) {
                f << "\t--\n";
            } else {
                std::snprintf(buf, sizeof buf, "\t%.4f", m.bbox);
                f << buf << "\n";
            }
        }
        written.push_back("report.tsv");
    }

    for (const auto& m : report.methods) {
        for (const auto& [tile, pair] : m.curves) {
            const auto& [morf, lerf] = pair;
            const std::string stem = "deg_" + m.method + "_tile" + std::to_string(tile);
            write_curve_csv(dir / (stem + "_morf.csv"), morf.x, morf.y, "removed_fraction", "score");
            write_curve_csv(dir / (stem + "_lerf.csv"), lerf.x, lerf.y, "removed_fraction", "score");
            written.push_back(stem + "_morf.csv");
            written.push_back(stem + "_lerf.csv");
            Chart c(560, 400, m.method + " tile " + std::to_string(tile), "fraction removed", "score");
            c.add({"MORF", morf.x, morf.y, Chart::palette(3)});
            c.add({"LERF", lerf.x, lerf.y, Chart::palette(0)});
            c.render((dir / (stem + ".png")).string());
            written.push_back(stem + ".png");
        }
        if (!m.sensn.n_pixels.empty()) {
            std::vector<double> xs(m.sensn.n_pixels.begin(), m.sensn.n_pixels.end());
            write_curve_csv(dir / ("sensn_" + m.method + ".csv"), xs, m.sensn.mean_corr, "n_pixels",
                            "mean_correlation");
            written.push_back("sensn_" + m.method + ".csv");
        }
        if (!m.sanity.empty()) {
            std::ofstream f(dir / ("sanity_" + m.method + ".csv"), std::ios::trunc);
            f << "layer,mean_ssim\n";
            char buf[64];
            for (const auto& p : m.sanity) {
                std::snprintf(buf, sizeof buf, "%.9g", p.mean_ssim);
                f << p.layer << "," << buf << "\n";
            }
            written.push_back("sanity_" + m.method + ".csv");
        }
    }

    // combined sensitivity-n plot (log x as index positions)
    bool any_sensn = false;
    for (const auto& m : report.methods) any_sensn = any_sensn || !m.sensn.n_pixels.empty();
    if (any_sensn) {
        Chart c(560, 400, "SENSITIVITY-N", "log10 n pixels", "mean correlation");
        size_t i = 0;
        for (const auto& m : report.methods) {
            if (m.sensn.n_pixels.empty()) continue;
            std::vector<double> xs;
            for (int n : m.sensn.n_pixels) xs.push_back(std::log10(static_cast<double>(n)));
            c.add({m.method, xs, m.sensn.mean_corr, Chart::palette(i++)});
        }
        c.render((dir / "sensn.png").string());
        written.push_back("sensn.png");
    }
    bool any_sanity = false;
    for (const auto& m : report.methods) any_sanity = any_sanity || !m.sanity.empty();
    if (any_sanity) {
        Chart c(560, 400, "CASCADING RANDOMIZATION", "depth index", "mean SSIM");
        size_t i = 0;
        for (const auto& m : report.methods) {
            if (m.sanity.empty()) continue;
            std::vector<double> xs, ys;
            for (size_t d = 0; d < m.sanity.size(); ++d) {
                xs.push_back(static_cast<double>(d));
                ys.push_back(m.sanity[d].mean_ssim);
            }
            c.add({m.method, xs, ys, Chart::palette(i++)});
        }
        c.render((dir / "sanity.png").string());
        written.push_back("sanity.png");
    }
    return written;
}

// sweep.tsv: beta_over_k, tap, mean L_I/k (nats), mean post-fit target prob
inline std::vector<fs::path> write_sweep(const fs::path& dir, const std::vector<SweepRow>& rows) {
    std::vector<fs::path> written;
    {
        std::ofstream f(dir / "sweep.tsv", std::ios::trunc);
        if (!f) throw std::runtime_error("cannot write sweep.tsv");
        f << "beta_over_k\ttap\tmean_info_per_k_nats\tmean_prob_after\n";
        char buf[96];
        for (const auto& r : rows) {
            std::snprintf(buf, sizeof buf, "%.9g\t%s\t%.9g\t%.9g\n", r.beta_over_k, r.tap.c_str(),
                          r.mean_info_per_k_nats, r.mean_prob_after);
            f << buf;
        }
        written.push_back("sweep.tsv");
    }
    // one line per tap in each chart
    std::map<std::string, std::vector<const SweepRow*>> by_tap;
    for (const auto& r : rows) by_tap[r.tap].push_back(&r);
    Chart ci(560, 400, "INFO PER ELEMENT VS BETA", "log10 beta*k", "L_I/k nats");
    Chart cp(560, 400, "TARGET PROB VS BETA", "log10 beta*k", "mean prob");
    size_t i = 0;
    for (const auto& [tap, rs] : by_tap) {
        std::vector<double> xs, yi, yp;
        for (const auto* r : rs) {
            xs.push_back(std::log10(r->beta_over_k));
            yi.push_back(r->mean_info_per_k_nats);
            yp.push_back(r->mean_prob_after);
        }
        ci.add({tap, xs, yi, Chart::palette(i)});
        cp.add({tap, xs, yp, Chart::palette(i)});
        ++i;
    }
    ci.render((dir / "sweep_info.png").string());
    cp.render((dir / "sweep_prob.png").string());
    written.push_back("sweep_info.png");
    written.push_back("sweep_prob.png");
    return written;
}

inline void write_train_log_csv(const fs::path& path, const TrainLog& log) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << "epoch,train_loss,val_acc\n";
    char buf[64];
    for (size_t i = 0; i < log.epoch_loss.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g", i + 1, log.epoch_loss[i], log.val_acc[i]);
        f << buf << "\n";
    }
}

}  // namespace iba
