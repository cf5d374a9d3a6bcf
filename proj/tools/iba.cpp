// Command-line entry point: dataset generation, classifier training, feature
// statistics, attribution, readout training, beta sweeps, metric evaluation
// and the randomization sanity check. Every run writes its outputs plus a
// manifest (config echo + content hashes) into --out and is reproducible from
// the recorded seed.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "iba/baselines.hpp"
#include "iba/bottleneck.hpp"
#include "iba/dataset.hpp"
#include "iba/evaluation.hpp"
#include "iba/export.hpp"
#include "iba/model.hpp"

namespace fs = std::filesystem;
using namespace iba;

namespace {

ShapesDataset load_dataset(const std::string& data) {
    fs::path p(data);
    if (fs::is_directory(p)) p /= "dataset.cfg";
    return ShapesDataset(load_shapes_config(p.string()));
}

fs::path ensure_out(const std::string& out) {
    fs::path dir(out);
    fs::create_directories(dir);
    return dir;
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    size_t pos = 0;
    while (pos <= s.size()) {
        const size_t comma = s.find(',', pos);
        const std::string tok = s.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        if (!tok.empty()) out.push_back(tok);
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

uint64_t dataset_hash(const ShapesDataset& ds) {
    uint64_t h = 0xcbf29ce484222325ULL;
    const auto& c = ds.config();
    for (int i = 0; i < c.train_count; ++i) {
        Sample s = ds.train(i);
        h = fnv1a64(s.image.data(), s.image.size() * sizeof(float), h);
        h = fnv1a64(&s.label, sizeof s.label, h);
        h = fnv1a64(&s.box, sizeof s.box, h);
    }
    for (int i = 0; i < c.val_count; ++i) {
        Sample s = ds.val(i);
        h = fnv1a64(s.image.data(), s.image.size() * sizeof(float), h);
        h = fnv1a64(&s.label, sizeof s.label, h);
        h = fnv1a64(&s.box, sizeof s.box, h);
    }
    return h;
}

FeatureStats obtain_stats(const std::string& stats_path, const Model& model, const std::string& tap,
                          const ShapesDataset& ds, int stats_samples) {
    if (!stats_path.empty()) return load_stats(stats_path);
    return estimate_stats(model, tap, ds, stats_samples);
}

std::vector<Sample> val_images(const ShapesDataset& ds, int n) {
    std::vector<Sample> out;
    for (int i = 0; i < std::min(n, ds.config().val_count); ++i) out.push_back(ds.val(i));
    return out;
}

// --- subcommand option bags --------------------------------------------------

struct CommonArgs {
    std::string out;
    uint64_t seed = 7;
    int jobs = 1;
};

int cmd_gen_data(const CommonArgs& c, const ShapesConfig& sc) {
    const fs::path dir = ensure_out(c.out);
    ShapesConfig cfg = sc;
    cfg.seed = c.seed;
    ShapesDataset ds(cfg);
    save_shapes_config((dir / "dataset.cfg").string(), cfg);
    std::vector<std::pair<int, Box>> tb, vb;
    for (int i = 0; i < cfg.train_count; ++i) tb.emplace_back(ds.train(i).id, ds.train(i).box);
    for (int i = 0; i < cfg.val_count; ++i) vb.emplace_back(ds.val(i).id, ds.val(i).box);
    save_boxes((dir / "boxes_train.txt").string(), tb);
    save_boxes((dir / "boxes_val.txt").string(), vb);

    {  // contact sheet of the first 25 training images
        const int n = 5, sz = cfg.image_size;
        std::vector<float> sheet(static_cast<size_t>(n * sz) * (n * sz), 0.0f);
        for (int gy = 0; gy < n; ++gy)
            for (int gx = 0; gx < n; ++gx) {
                if (gy * n + gx >= cfg.train_count) continue;
                Sample s = ds.train(gy * n + gx);
                for (int y = 0; y < sz; ++y)
                    for (int x = 0; x < sz; ++x)
                        sheet[static_cast<size_t>(gy * sz + y) * (n * sz) + gx * sz + x] =
                            s.image[static_cast<size_t>(y) * sz + x];
            }
        write_grayscale_png((dir / "samples.png").string(), n * sz, n * sz, sheet, 2);
    }

    Manifest man(dir, "gen-data");
    man.set("classes", static_cast<long long>(cfg.classes));
    man.set("image_size", static_cast<long long>(cfg.image_size));
    man.set("channels", static_cast<long long>(cfg.channels));
    man.set("train", static_cast<long long>(cfg.train_count));
    man.set("val", static_cast<long long>(cfg.val_count));
    man.set("seed", static_cast<long long>(cfg.seed));
    man.set("dataset_hash", hex64(dataset_hash(ds)));
    man.add_output("dataset.cfg");
    man.add_output("boxes_train.txt");
    man.add_output("boxes_val.txt");
    man.add_output("samples.png");
    man.write();
    std::cout << "dataset written to " << dir.string() << " hash " << hex64(dataset_hash(ds)) << "\n";
    return 0;
}

int cmd_train(const CommonArgs& c, const std::string& data, int epochs, double lr, int batch,
              double early_stop) {
    const fs::path dir = ensure_out(c.out);
    ShapesDataset ds = load_dataset(data);
    Model m = build_default_model<float>(ds.config().classes, ds.config().channels,
                                         ds.config().image_size, mix64(c.seed, 0x0de1));
    TrainConfig tc;
    tc.epochs = epochs;
    tc.lr = lr;
    tc.batch = batch;
    tc.seed = c.seed;
    tc.early_stop_val_acc = early_stop;
    tc.log = &std::cout;
    TrainLog log = train(m, ds, tc);
    save_model((dir / "model.iba").string(), m);
    write_train_log_csv(dir / "train_log.csv", log);
    Manifest man(dir, "train");
    man.set("data", data);
    man.set("epochs", static_cast<long long>(epochs));
    man.set("lr", lr);
    man.set("batch", static_cast<long long>(batch));
    man.set("seed", static_cast<long long>(c.seed));
    man.add_output("model.iba");
    man.add_output("train_log.csv");
    man.write();
    std::cout << "final val accuracy " << log.val_acc.back() << " after " << log.epochs_run
              << " epochs\n";
    return 0;
}

int cmd_stats(const CommonArgs& c, const std::string& data, const std::string& model_path,
              const std::string& tap, int samples) {
    const fs::path dir = ensure_out(c.out);
    ShapesDataset ds = load_dataset(data);
    Model m = load_model(model_path);
    FeatureStats st = estimate_stats(m, tap, ds, samples);
    const std::string fname = "stats_" + tap + ".iba";
    save_stats((dir / fname).string(), st);
    Manifest man(dir, "stats");
    man.set("data", data);
    man.set("model", model_path);
    man.set("tap", tap);
    man.set("samples", static_cast<long long>(samples));
    man.add_output(fname);
    man.write();
    std::cout << "stats for " << tap << " over " << st.n_samples << " samples -> " << fname << "\n";
    return 0;
}

int cmd_attribute(const CommonArgs& c, const std::string& data, const std::string& model_path,
                  const std::string& stats_path, const std::string& readout_path,
                  const std::string& method_name, const std::string& tap, BottleneckConfig btl,
                  const std::string& split, int index, int stats_samples) {
    const fs::path dir = ensure_out(c.out);
    ShapesDataset ds = load_dataset(data);
    Model m = load_model(model_path);
    btl.seed = c.seed;

    MethodContext ctx;
    ctx.model = &m;
    ctx.tap = tap;
    ctx.bottleneck = btl;
    ctx.seed = c.seed;
    FeatureStats st;
    ReadoutNet net;
    if (method_name == "per-sample") {
        st = obtain_stats(stats_path, m, tap, ds, stats_samples);
        ctx.stats = &st;
    }
    if (method_name == "readout") {
        if (readout_path.empty()) throw std::runtime_error("readout method needs --readout <file>");
        net = load_readout(readout_path);
        ctx.readout = &net;
    }
    AttributionMethod method = make_method(method_name, ctx);
    const Sample s = split == "train" ? ds.train(index) : ds.val(index);
    Heatmap hm = method.run(s);
    const std::string stem = method_name + "_" + split + std::to_string(index);
    export_heatmap(dir, stem, hm);
    Manifest man(dir, "attribute");
    man.set("method", method_name);
    man.set("tap", tap);
    man.set("beta", btl.beta_over_k);
    man.set("split", split);
    man.set("index", static_cast<long long>(index));
    man.set("seed", static_cast<long long>(c.seed));
    man.add_output(stem + ".csv");
    man.add_output(stem + ".json");
    man.add_output(stem + ".png");
    man.write();
    std::cout << method_name << " heatmap: total " << hm.total << " (" << stem << ".csv)\n";
    return 0;
}

int cmd_train_readout(const CommonArgs& c, const std::string& data, const std::string& model_path,
                      const std::string& stats_path, const std::string& tap,
                      const std::string& read_taps_csv, ReadoutTrainConfig rc, int stats_samples) {
    const fs::path dir = ensure_out(c.out);
    ShapesDataset ds = load_dataset(data);
    Model m = load_model(model_path);
    FeatureStats st = obtain_stats(stats_path, m, tap, ds, stats_samples);
    rc.seed = c.seed;
    rc.log = &std::cout;
    ReadoutNet net = train_readout(m, tap, split_csv(read_taps_csv), st, ds, rc);
    save_readout((dir / "readout.iba").string(), net);
    const double vp = readout_val_prob(m, net, ds);
    Manifest man(dir, "train-readout");
    man.set("tap", tap);
    man.set("read_taps", read_taps_csv);
    man.set("epochs", static_cast<long long>(rc.epochs));
    man.set("lr", rc.lr);
    man.set("beta", rc.beta_over_k);
    man.set("seed", static_cast<long long>(c.seed));
    man.set("val_prob", vp);
    man.add_output("readout.iba");
    man.write();
    std::cout << "readout trained; mean val target prob under bottleneck " << vp << "\n";
    return 0;
}

int cmd_sweep(const CommonArgs& c, const std::string& data, const std::string& model_path,
              const std::string& betas_csv, const std::string& taps_csv, int n_images,
              BottleneckConfig btl, int stats_samples) {
    const fs::path dir = ensure_out(c.out);
    ShapesDataset ds = load_dataset(data);
    Model m = load_model(model_path);
    btl.seed = c.seed;
    std::vector<double> betas;
    for (const auto& tok : split_csv(betas_csv)) betas.push_back(std::stod(tok));
    const auto taps = split_csv(taps_csv);
    std::map<std::string, FeatureStats> stats;
    for (const auto& t : taps) stats[t] = estimate_stats(m, t, ds, stats_samples);
    auto rows = beta_depth_sweep(m, val_images(ds, n_images), betas, taps, stats, btl, c.jobs);
    auto files = write_sweep(dir, rows);
    Manifest man(dir, "sweep");
    man.set("betas", betas_csv);
    man.set("taps", taps_csv);
    man.set("images", static_cast<long long>(n_images));
    man.set("seed", static_cast<long long>(c.seed));
    for (const auto& f : files) man.add_output(f);
    man.write();
    for (const auto& r : rows)
        std::cout << "beta*k=" << r.beta_over_k << " tap=" << r.tap << " L_I/k=" << r.mean_info_per_k_nats
                  << " prob=" << r.mean_prob_after << "\n";
    return 0;
}

int cmd_evaluate(const CommonArgs& c, const std::string& data, const std::string& model_path,
                 const std::string& stats_path, const std::string& readout_path,
                 const std::string& methods_csv, const std::string& tiles_csv, int n_images,
                 bool with_sensn, int sensn_images, bool with_sanity, int sanity_images,
                 BottleneckConfig btl, const std::string& tap, int stats_samples) {
    const fs::path dir = ensure_out(c.out);
    ShapesDataset ds = load_dataset(data);
    Model m = load_model(model_path);
    btl.seed = c.seed;

    MethodContext ctx;
    ctx.model = &m;
    ctx.tap = tap;
    ctx.bottleneck = btl;
    ctx.seed = c.seed;
    const auto method_names = split_csv(methods_csv);
    FeatureStats st;
    ReadoutNet net;
    bool need_stats = false, need_readout = false;
    for (const auto& n : method_names) {
        need_stats = need_stats || n == "per-sample";
        need_readout = need_readout || n == "readout";
    }
    if (need_stats) {
        st = obtain_stats(stats_path, m, tap, ds, stats_samples);
        ctx.stats = &st;
    }
    if (need_readout) {
        if (readout_path.empty()) throw std::runtime_error("readout method needs --readout <file>");
        net = load_readout(readout_path);
        ctx.readout = &net;
    }

    std::vector<int> tiles;
    for (const auto& tok : split_csv(tiles_csv)) tiles.push_back(std::stoi(tok));
    const auto images = val_images(ds, n_images);
    const auto fill = ds.channel_means();

    EvalReport report;
    for (const auto& name : method_names) {
        AttributionMethod method = make_method(name, ctx);
        std::vector<Heatmap> hms(images.size());
        parallel_for(static_cast<int>(images.size()), c.jobs,
                     [&](int i) { hms[static_cast<size_t>(i)] = method.run(images[static_cast<size_t>(i)]); });
        MethodScores scores;
        scores.method = name;
        for (int tile : tiles) {
            auto morf = degradation_curve(m, images, hms, tile, Degradation::MoRF, fill, c.jobs);
            auto lerf = degradation_curve(m, images, hms, tile, Degradation::LeRF, fill, c.jobs);
            scores.degradation[tile] = degradation_integral(morf, lerf);
            scores.curves[tile] = {morf, lerf};
        }
        double bb = 0;
        for (size_t i = 0; i < images.size(); ++i) bb += bbox_ratio(hms[i], images[i].box);
        scores.bbox = bb / static_cast<double>(images.size());
        if (with_sensn) {
            const int tile = tiles.empty() ? 8 : tiles.front();
            std::vector<Sample> simg(images.begin(),
                                     images.begin() + std::min<size_t>(images.size(), static_cast<size_t>(sensn_images)));
            std::vector<Heatmap> shm(hms.begin(), hms.begin() + static_cast<long>(simg.size()));
            auto grid = sensitivity_n_grid(m.img_h, m.img_w, tile);
            scores.sensn = sensitivity_n(m, simg, shm, grid, 100, tile, c.seed, c.jobs);
        }
        if (with_sanity) {
            std::vector<Sample> simg(images.begin(),
                                     images.begin() + std::min<size_t>(images.size(), static_cast<size_t>(sanity_images)));
            auto factory = make_method_factory(name, ctx, ds, stats_samples);
            scores.sanity = sanity_check(m, factory, simg, {"fc", "conv4", "conv3", "conv2", "conv1"},
                                         c.seed, c.jobs);
        }
        report.methods.push_back(std::move(scores));
        std::cout << "evaluated " << name << "\n";
    }
    auto files = write_eval_report(dir, report);
    Manifest man(dir, "evaluate");
    man.set("methods", methods_csv);
    man.set("tiles", tiles_csv);
    man.set("images", static_cast<long long>(n_images));
    man.set("seed", static_cast<long long>(c.seed));
    for (const auto& f : files) man.add_output(f);
    man.write();
    std::cout << "report written to " << (dir / "report.tsv").string() << "\n";
    return 0;
}

int cmd_sanity(const CommonArgs& c, const std::string& data, const std::string& model_path,
               const std::string& method_name, int n_images, BottleneckConfig btl,
               const std::string& tap, int stats_samples, const std::string& readout_path) {
    const fs::path dir = ensure_out(c.out);
    ShapesDataset ds = load_dataset(data);
    Model m = load_model(model_path);
    btl.seed = c.seed;
    MethodContext ctx;
    ctx.model = &m;
    ctx.tap = tap;
    ctx.bottleneck = btl;
    ctx.seed = c.seed;
    FeatureStats st;
    ReadoutNet net;
    if (method_name == "per-sample") {
        st = estimate_stats(m, tap, ds, stats_samples);
        ctx.stats = &st;
    }
    if (method_name == "readout") {
        if (readout_path.empty()) throw std::runtime_error("readout method needs --readout <file>");
        net = load_readout(readout_path);
        ctx.readout = &net;
    }
    auto factory = make_method_factory(method_name, ctx, ds, stats_samples);
    auto points = sanity_check(m, factory, val_images(ds, n_images),
                               {"fc", "conv4", "conv3", "conv2", "conv1"}, c.seed, c.jobs);
    const std::string fname = "sanity_" + method_name + ".csv";
    {
        std::ofstream f(dir / fname, std::ios::trunc);
        f << "layer,mean_ssim\n";
        for (const auto& p : points) f << p.layer << "," << p.mean_ssim << "\n";
    }
    Chart chart(560, 400, "CASCADING RANDOMIZATION " + method_name, "depth index", "mean SSIM");
    std::vector<double> xs, ys;
    for (size_t d = 0; d < points.size(); ++d) {
        xs.push_back(static_cast<double>(d));
        ys.push_back(points[d].mean_ssim);
    }
    chart.add({method_name, xs, ys, Chart::palette(0)});
    chart.render((dir / ("sanity_" + method_name + ".png")).string());
    Manifest man(dir, "sanity");
    man.set("method", method_name);
    man.set("images", static_cast<long long>(n_images));
    man.set("seed", static_cast<long long>(c.seed));
    man.add_output(fname);
    man.add_output("sanity_" + method_name + ".png");
    man.write();
    for (const auto& p : points) std::cout << p.layer << " ssim " << p.mean_ssim << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"information bottleneck attribution toolkit"};
    app.require_subcommand(1);
    app.set_config("--config", "", "key=value config file");

    CommonArgs c;
    app.add_option("--seed", c.seed, "global RNG seed (env IBA_SEED overrides)");
    app.add_option("--jobs", c.jobs, "per-image parallel fan-out (default 1, bit-reproducible)");

    // shared option values
    std::string data, model_path, stats_path, readout_path, tap = "conv3", split = "val";
    std::string method = "per-sample", methods = "per-sample,occlusion8,gradient,random";
    std::string betas = "0.1,1,10,100,1000", taps = "conv3", read_taps = "conv1,conv2,conv3,conv4,fc";
    std::string tiles = "8";
    BottleneckConfig btl;
    ReadoutTrainConfig rc;
    ShapesConfig sc;
    int epochs = 10, batch = 32, samples = 64, index = 0, n_images = 200, sensn_images = 20,
        sanity_images = 20;
    double lr = 1e-3, early_stop = -1.0;
    bool with_sensn = false, with_sanity = false;

    auto* gen = app.add_subcommand("gen-data", "generate a procedural shapes dataset");
    gen->fallthrough();
    gen->add_option("--classes", sc.classes);
    gen->add_option("--size", sc.image_size);
    gen->add_option("--channels", sc.channels);
    gen->add_option("--train", sc.train_count);
    gen->add_option("--val", sc.val_count);
    gen->add_option("--out", c.out)->required();

    auto* tr = app.add_subcommand("train", "train the classifier");
    tr->fallthrough();
    tr->add_option("--data", data)->required();
    tr->add_option("--epochs", epochs);
    tr->add_option("--lr", lr);
    tr->add_option("--batch", batch);
    tr->add_option("--early-stop", early_stop, "stop when val accuracy reaches this");
    tr->add_option("--out", c.out)->required();

    auto* stc = app.add_subcommand("stats", "estimate feature statistics at a tap");
    stc->fallthrough();
    stc->add_option("--data", data)->required();
    stc->add_option("--model", model_path)->required();
    stc->add_option("--tap", tap);
    stc->add_option("--samples", samples);
    stc->add_option("--out", c.out)->required();

    auto* att = app.add_subcommand("attribute", "compute one attribution heatmap");
    att->fallthrough();
    att->add_option("--data", data)->required();
    att->add_option("--model", model_path)->required();
    att->add_option("--stats", stats_path);
    att->add_option("--readout", readout_path);
    att->add_option("--method", method);
    att->add_option("--tap", tap);
    att->add_option("--beta", btl.beta_over_k, "beta numerator; effective beta is this over k");
    att->add_option("--iterations", btl.iterations);
    att->add_option("--copies", btl.copies);
    att->add_option("--lr", btl.lr);
    att->add_option("--sigma-s", btl.sigma_s);
    att->add_flag_callback("--target-predicted", [&btl] { btl.target_is_true_label = false; },
                           "optimize the predicted class instead of the label");
    att->add_option("--split", split)->check(CLI::IsMember({"train", "val"}));
    att->add_option("--index", index);
    att->add_option("--stats-samples", samples);
    att->add_option("--out", c.out)->required();

    auto* tro = app.add_subcommand("train-readout", "train the readout bottleneck network");
    tro->fallthrough();
    tro->add_option("--data", data)->required();
    tro->add_option("--model", model_path)->required();
    tro->add_option("--stats", stats_path);
    tro->add_option("--tap", tap);
    tro->add_option("--read-taps", read_taps);
    tro->add_option("--epochs", rc.epochs);
    tro->add_option("--lr", rc.lr);
    tro->add_option("--batch", rc.batch);
    tro->add_option("--beta", rc.beta_over_k);
    tro->add_option("--sigma-s", rc.sigma_s);
    tro->add_option("--train-count", rc.train_count);
    tro->add_option("--stats-samples", samples);
    tro->add_option("--out", c.out)->required();

    auto* sw = app.add_subcommand("sweep", "beta/depth sweep of the per-sample bottleneck");
    sw->fallthrough();
    sw->add_option("--data", data)->required();
    sw->add_option("--model", model_path)->required();
    sw->add_option("--betas", betas);
    sw->add_option("--taps", taps);
    sw->add_option("--images", n_images)->default_val(20);
    sw->add_option("--iterations", btl.iterations);
    sw->add_option("--copies", btl.copies);
    sw->add_option("--sigma-s", btl.sigma_s);
    sw->add_option("--stats-samples", samples);
    sw->add_option("--out", c.out)->required();

    auto* ev = app.add_subcommand("evaluate", "run the quantitative metric suite");
    ev->fallthrough();
    ev->add_option("--data", data)->required();
    ev->add_option("--model", model_path)->required();
    ev->add_option("--stats", stats_path);
    ev->add_option("--readout", readout_path);
    ev->add_option("--methods", methods);
    ev->add_option("--tile", tiles);
    ev->add_option("--images", n_images);
    ev->add_flag("--with-sensn", with_sensn);
    ev->add_option("--sensn-images", sensn_images);
    ev->add_flag("--with-sanity", with_sanity);
    ev->add_option("--sanity-images", sanity_images);
    ev->add_option("--tap", tap);
    ev->add_option("--beta", btl.beta_over_k);
    ev->add_option("--stats-samples", samples);
    ev->add_option("--out", c.out)->required();

    auto* sa = app.add_subcommand("sanity", "cascading randomization sanity check");
    sa->fallthrough();
    sa->add_option("--data", data)->required();
    sa->add_option("--model", model_path)->required();
    sa->add_option("--method", method);
    sa->add_option("--images", n_images)->default_val(20);
    sa->add_option("--tap", tap);
    sa->add_option("--beta", btl.beta_over_k);
    sa->add_option("--stats-samples", samples);
    sa->add_option("--readout", readout_path);
    sa->add_option("--out", c.out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    if (const char* env = std::getenv("IBA_SEED")) c.seed = std::strtoull(env, nullptr, 10);
    btl.seed = c.seed;

    try {
        if (gen->parsed()) return cmd_gen_data(c, sc);
        if (tr->parsed()) return cmd_train(c, data, epochs, lr, batch, early_stop);
        if (stc->parsed()) return cmd_stats(c, data, model_path, tap, samples);
        if (att->parsed())
            return cmd_attribute(c, data, model_path, stats_path, readout_path, method, tap, btl,
                                 split, index, samples);
        if (tro->parsed())
            return cmd_train_readout(c, data, model_path, stats_path, tap, read_taps, rc, samples);
        if (sw->parsed()) return cmd_sweep(c, data, model_path, betas, taps, n_images, btl, samples);
        if (ev->parsed())
            return cmd_evaluate(c, data, model_path, stats_path, readout_path, methods, tiles,
                                n_images, with_sensn, sensn_images, with_sanity, sanity_images, btl,
                                tap, samples);
        if (sa->parsed())
            return cmd_sanity(c, data, model_path, method, n_images, btl, tap, samples, readout_path);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
