#include <catch2/catch_amalgamated.hpp>
#include <cstring>
#include <filesystem>

#include "iba/archive.hpp"
#include "iba/dataset.hpp"
#include "iba/model.hpp"
#include "fixtures.hpp"

using namespace iba;
using Catch::Approx;
namespace fs = std::filesystem;

TEST_CASE("default model structure", "[network]") {
    auto m = build_default_model<float>(5);
    SECTION("final dense layer matches class count") {
        for (const auto& l : m.layers)
            if (l.kind == LayerKind::Dense) REQUIRE(l.w.dim(0) == 5);
    }
    SECTION("forward probabilities sum to 1") {
        auto x = Tensor::filled({1, 1, 64, 64}, 0.3f);
        auto p = forward_probs(m, x);
        double s = 0;
        for (int i = 0; i < 5; ++i) s += p.data()[i];
        REQUIRE(s == Approx(1.0).epsilon(1e-5));
    }
    SECTION("conv3 tap shape for a 64x64 input is (c3, 32, 32)") {
        auto tp = m.tap("conv3");
        REQUIRE(tp.c == 16);
        REQUIRE(tp.h == 32);
        REQUIRE(tp.w == 32);
    }
    SECTION("layer names are unique and every conv is a tap point") {
        std::set<std::string> names;
        for (const auto& l : m.layers) REQUIRE(names.insert(l.name).second);
        auto taps = m.tap_points();
        REQUIRE(taps.size() == 4);
        for (const auto& l : m.layers)
            if (l.kind == LayerKind::Conv)
                REQUIRE_NOTHROW(m.tap(l.name));
    }
    SECTION("class count below two is rejected") {
        REQUIRE_THROWS_AS(build_default_model<float>(1), std::invalid_argument);
    }
}

TEST_CASE("training behavior", "[network][slow]") {
    ShapesConfig cfg;
    cfg.train_count = 200;
    cfg.val_count = 100;
    cfg.seed = 21;
    ShapesDataset ds(cfg);

    SECTION("an untrained model scores around chance") {
        auto m = build_default_model<float>(5, 1, 64, 99);
        const double acc = val_accuracy(m, ds);
        REQUIRE(acc == Approx(0.2).margin(0.1));
    }
    SECTION("a fixed seed reproduces the final loss bit for bit") {
        TrainConfig tc;
        tc.epochs = 1;
        tc.seed = 5;
        auto m1 = build_default_model<float>(5, 1, 64, 31);
        auto m2 = build_default_model<float>(5, 1, 64, 31);
        auto l1 = train(m1, ds, tc);
        auto l2 = train(m2, ds, tc);
        REQUIRE(l1.epoch_loss.back() == l2.epoch_loss.back());
        auto p1 = m1.parameters(), p2 = m2.parameters();
        for (size_t i = 0; i < p1.size(); ++i)
            REQUIRE(std::memcmp(p1[i].data(), p2[i].data(), sizeof(float) * p1[i].size()) == 0);
    }
    SECTION("the shared fixture reaches high validation accuracy") {
        REQUIRE(testfx::fixture().val_acc >= 0.95);
    }
}

TEST_CASE("forward with tap and splice", "[network]") {
    const auto& fx = testfx::fixture();
    auto s = fx.dataset.val(3);
    auto x = to_tensor<float>(s, 1, 64);
    auto plain = forward_logits(fx.model, x);

    SECTION("identity splice leaves logits bit-identical") {
        auto [logits, r] = forward_with_tap<float>(fx.model, x, "conv3",
                                                   [](const Tensor& t) { return t; });
        REQUIRE(r.shape() == Shape{1, 16, 32, 32});
        for (int i = 0; i < plain.size(); ++i) REQUIRE(logits.data()[i] == plain.data()[i]);
    }
    SECTION("zeroing the feature map changes the logits") {
        auto [logits, r] = forward_with_tap<float>(fx.model, x, "conv3",
                                                   [](const Tensor& t) { return Tensor::zeros(t.shape()); });
        bool any_diff = false;
        for (int i = 0; i < plain.size(); ++i) any_diff = any_diff || logits.data()[i] != plain.data()[i];
        REQUIRE(any_diff);
    }
    SECTION("a lambda = 1 bottleneck splice is the identity within 1e-6") {
        auto mask = AlphaMask::init({16, 32, 32}, 1.0, 100.0f);  // sigmoid(100) == 1
        auto [logits, r] = forward_with_tap<float>(
            fx.model, x, "conv3", [&](const Tensor& t) {
                auto r3 = reshape(t, {16, 32, 32});
                auto z = bottleneck_forward(r3, fx.stats_conv3, mask, 12345);
                return reshape(z, {1, 16, 32, 32});
            });
        for (int i = 0; i < plain.size(); ++i)
            REQUIRE(logits.data()[i] == Approx(plain.data()[i]).margin(1e-6));
    }
    SECTION("shape-changing splice is rejected") {
        REQUIRE_THROWS_AS(forward_with_tap<float>(fx.model, x, "conv3",
                                                  [](const Tensor& t) {
                                                      return Tensor::zeros({1, 16, 16, 16});
                                                  }),
                          std::invalid_argument);
    }
    SECTION("unknown tap is rejected") {
        REQUIRE_THROWS_AS(forward_to_tap(fx.model, x, "conv9"), std::invalid_argument);
    }
    SECTION("forward is pure: repeated calls agree bitwise") {
        auto again = forward_logits(fx.model, x);
        for (int i = 0; i < plain.size(); ++i) REQUIRE(again.data()[i] == plain.data()[i]);
    }
}

TEST_CASE("cascading randomization", "[network]") {
    auto m = build_default_model<float>(5, 1, 64, 77);
    SECTION("randomizing fc leaves conv weights untouched") {
        auto r = randomize_from(m, "fc", 4);
        for (size_t i = 0; i < m.layers.size(); ++i) {
            const auto& a = m.layers[i];
            const auto& b = r.layers[i];
            if (a.kind != LayerKind::Conv) continue;
            REQUIRE(std::memcmp(a.w.data(), b.w.data(), sizeof(float) * a.w.size()) == 0);
        }
        const auto& fca = m.layers[m.layers.size() - 2];
        const auto& fcb = r.layers[r.layers.size() - 2];
        REQUIRE(std::memcmp(fca.w.data(), fcb.w.data(), sizeof(float) * fca.w.size()) != 0);
    }
    SECTION("randomizing the first conv changes every parametric layer") {
        auto r = randomize_from(m, "conv1", 4);
        for (size_t i = 0; i < m.layers.size(); ++i) {
            const auto& a = m.layers[i];
            const auto& b = r.layers[i];
            if (a.kind != LayerKind::Conv && a.kind != LayerKind::Dense) continue;
            REQUIRE(std::memcmp(a.w.data(), b.w.data(), sizeof(float) * a.w.size()) != 0);
        }
    }
    SECTION("different seeds draw different fc weights") {
        auto r1 = randomize_from(m, "fc", 4);
        auto r2 = randomize_from(m, "fc", 5);
        const auto& w1 = r1.layers[r1.layers.size() - 2].w;
        const auto& w2 = r2.layers[r2.layers.size() - 2].w;
        REQUIRE(std::memcmp(w1.data(), w2.data(), sizeof(float) * w1.size()) != 0);
    }
    SECTION("unknown layer is rejected") {
        REQUIRE_THROWS_AS(randomize_from(m, "conv7", 1), std::invalid_argument);
    }
    SECTION("randomized-layer sets grow monotonically toward earlier layers") {
        const std::vector<std::string> order{"fc", "conv4", "conv3", "conv2", "conv1"};
        std::vector<std::set<std::string>> changed_sets;
        for (const auto& layer : order) {
            auto r = randomize_from(m, layer, 9);
            std::set<std::string> changed;
            for (size_t i = 0; i < m.layers.size(); ++i) {
                const auto& a = m.layers[i];
                if (a.kind != LayerKind::Conv && a.kind != LayerKind::Dense) continue;
                if (std::memcmp(a.w.data(), r.layers[i].w.data(), sizeof(float) * a.w.size()) != 0)
                    changed.insert(a.name);
            }
            changed_sets.push_back(changed);
        }
        for (size_t i = 1; i < changed_sets.size(); ++i)
            for (const auto& name : changed_sets[i - 1]) REQUIRE(changed_sets[i].count(name) == 1);
    }
}

TEST_CASE("weight archive round trip is bit exact", "[network]") {
    const fs::path tmp = fs::temp_directory_path() / "iba_test_archive.iba";
    SECTION("raw tensors, including awkward float values") {
        std::vector<NamedTensor> ts;
        ts.push_back({"a", {2, 2}, {0.0f, -0.0f, 1e-44f, 3.14159274f}});
        ts.push_back({"b/long name with spaces", {3}, {-1e38f, 1e-38f, 42.0f}});
        save_archive(tmp.string(), ts);
        auto rt = load_archive(tmp.string());
        REQUIRE(rt.size() == 2);
        for (size_t i = 0; i < ts.size(); ++i) {
            REQUIRE(rt[i].name == ts[i].name);
            REQUIRE(rt[i].shape == ts[i].shape);
            REQUIRE(std::memcmp(rt[i].data.data(), ts[i].data.data(),
                                ts[i].data.size() * sizeof(float)) == 0);
        }
    }
    SECTION("model save/load reproduces all weights") {
        auto m = build_default_model<float>(3, 1, 64, 5);
        save_model(tmp.string(), m);
        auto r = load_model(tmp.string());
        REQUIRE(r.classes == 3);
        auto pa = m.parameters(), pb = r.parameters();
        REQUIRE(pa.size() == pb.size());
        for (size_t i = 0; i < pa.size(); ++i)
            REQUIRE(std::memcmp(pa[i].data(), pb[i].data(), sizeof(float) * pa[i].size()) == 0);
    }
    SECTION("bad magic is rejected") {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        f << "NOPE12345678";
        f.close();
        REQUIRE_THROWS_WITH(load_archive(tmp.string()), Catch::Matchers::ContainsSubstring("magic"));
    }
    fs::remove(tmp);
}

TEST_CASE("shapes dataset", "[dataset]") {
    ShapesConfig cfg;
    cfg.train_count = 200;
    cfg.val_count = 50;
    cfg.seed = 13;
    ShapesDataset ds(cfg);

    SECTION("same seed gives identical samples") {
        ShapesDataset ds2(cfg);
        for (int i : {0, 7, 113}) {
            auto a = ds.train(i), b = ds2.train(i);
            REQUIRE(a.label == b.label);
            REQUIRE(std::memcmp(a.image.data(), b.image.data(), a.image.size() * sizeof(float)) == 0);
            REQUIRE(a.box.x == b.box.x);
        }
    }
    SECTION("different seeds give different images") {
        ShapesConfig c2 = cfg;
        c2.seed = 14;
        ShapesDataset ds2(c2);
        REQUIRE(std::memcmp(ds.train(0).image.data(), ds2.train(0).image.data(),
                            ds.train(0).image.size() * sizeof(float)) != 0);
    }
    SECTION("boxes are tight, inside the image and under a third of its area") {
        for (int i = 0; i < 200; ++i) {
            auto s = ds.train(i);
            REQUIRE(s.box.x >= 0);
            REQUIRE(s.box.y >= 0);
            REQUIRE(s.box.x + s.box.w <= 64);
            REQUIRE(s.box.y + s.box.h <= 64);
            REQUIRE(s.box.area() >= 1);
            REQUIRE(s.box.area() < 64 * 64 / 3);
        }
    }
    SECTION("labels are balanced over classes") {
        std::vector<int> counts(5, 0);
        for (int i = 0; i < 200; ++i) ++counts[static_cast<size_t>(ds.train(i).label)];
        for (int c : counts) REQUIRE(c == 40);
    }
    SECTION("pixel values stay in [0,1]") {
        auto s = ds.val(4);
        for (float v : s.image) {
            REQUIRE(v >= 0.0f);
            REQUIRE(v <= 1.0f);
        }
    }
    SECTION("config file round trip") {
        const fs::path tmp = fs::temp_directory_path() / "iba_test_ds.cfg";
        save_shapes_config(tmp.string(), cfg);
        auto rt = load_shapes_config(tmp.string());
        REQUIRE(rt.classes == cfg.classes);
        REQUIRE(rt.train_count == cfg.train_count);
        REQUIRE(rt.seed == cfg.seed);
        fs::remove(tmp);
    }
    SECTION("boxes file round trip") {
        const fs::path tmp = fs::temp_directory_path() / "iba_test_boxes.txt";
        std::vector<std::pair<int, Box>> boxes{{0, {1, 2, 3, 4}}, {9, {5, 6, 7, 8}}};
        save_boxes(tmp.string(), boxes);
        auto rt = load_boxes(tmp.string());
        REQUIRE(rt.size() == 2);
        REQUIRE(rt[1].second.h == 8);
        fs::remove(tmp);
    }
}

TEST_CASE("idx loader parses synthetic files", "[dataset]") {
    const fs::path tmp = fs::temp_directory_path() / "iba_test.idx";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        auto w32 = [&f](uint32_t v) {
            unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                                  static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
            f.write(reinterpret_cast<char*>(b), 4);
        };
        w32(0x00000803u);
        w32(2);  // images
        w32(2);  // rows
        w32(3);  // cols
        for (int i = 0; i < 12; ++i) f.put(static_cast<char>(i * 20));
    }
    auto imgs = load_idx_images(tmp.string());
    REQUIRE(imgs.size() == 2);
    REQUIRE(imgs[0].size() == 6);
    REQUIRE(imgs[0][1] == Approx(20.0 / 255.0));
    REQUIRE(imgs[1][5] == Approx(220.0 / 255.0));
    REQUIRE_THROWS_AS(load_idx_labels(tmp.string()), std::runtime_error);
    fs::remove(tmp);
}
