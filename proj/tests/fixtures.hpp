// Shared trained model for the unit suite. Training is deterministic, so the
// on-disk cache (under the build tree) and a fresh run produce identical
// weights; the cache just keeps repeated test invocations fast.
#pragma once

#include <cstdio>
#include <filesystem>
#include <string>

#include "iba/bottleneck.hpp"
#include "iba/dataset.hpp"
#include "iba/model.hpp"

namespace testfx {

struct Fixture {
    iba::ShapesDataset dataset;
    iba::Model model;
    iba::FeatureStats stats_conv3;
    double val_acc = 0.0;
};

inline const Fixture& fixture() {
    static const Fixture fx = [] {
        iba::ShapesConfig cfg;
        cfg.classes = 5;
        cfg.train_count = 2000;
        cfg.val_count = 250;
        cfg.seed = 7;
        Fixture f{iba::ShapesDataset(cfg), {}, {}, 0.0};

        namespace fs = std::filesystem;
#ifdef IBA_TEST_CACHE
        const fs::path cache = fs::path(IBA_TEST_CACHE) / "fixture_model.iba";
#else
        const fs::path cache = fs::temp_directory_path() / "iba_fixture_model.iba";
#endif
        if (fs::exists(cache)) {
            f.model = iba::load_model(cache.string());
        } else {
            f.model = iba::build_default_model<float>(cfg.classes, cfg.channels, cfg.image_size,
                                                      iba::mix64(cfg.seed, 0x0de1));
            iba::TrainConfig tc;
            tc.epochs = 8;
            tc.seed = cfg.seed;
            tc.early_stop_val_acc = 0.95;
            iba::train(f.model, f.dataset, tc);
            fs::create_directories(cache.parent_path());
            const fs::path tmp = cache.string() + ".tmp";
            iba::save_model(tmp.string(), f.model);
            fs::rename(tmp, cache);
        }
        f.val_acc = iba::val_accuracy(f.model, f.dataset);
        f.stats_conv3 = iba::estimate_stats(f.model, "conv3", f.dataset, 64);
        return f;
    }();
    return fx;
}

// Readout net trained once with the library defaults (10 epochs over the
// fixture training split) and cached next to the model.
inline const iba::ReadoutNet& readout_fixture() {
    static const iba::ReadoutNet net = [] {
        const Fixture& fx = fixture();
        namespace fs = std::filesystem;
#ifdef IBA_TEST_CACHE
        const fs::path cache = fs::path(IBA_TEST_CACHE) / "fixture_readout.iba";
#else
        const fs::path cache = fs::temp_directory_path() / "iba_fixture_readout.iba";
#endif
        if (fs::exists(cache)) return iba::load_readout(cache.string());
        iba::ReadoutTrainConfig rc;
        rc.seed = 11;
        iba::ReadoutNet n = iba::train_readout(fx.model, "conv3",
                                               {"conv1", "conv2", "conv3", "conv4", "fc"},
                                               fx.stats_conv3, fx.dataset, rc);
        fs::create_directories(cache.parent_path());
        const fs::path tmp = cache.string() + ".tmp";
        iba::save_readout(tmp.string(), n);
        fs::rename(tmp, cache);
        return n;
    }();
    return net;
}

}  // namespace testfx
