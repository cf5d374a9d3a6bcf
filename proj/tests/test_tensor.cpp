#include <catch2/catch_amalgamated.hpp>

#include "iba/ops.hpp"
#include "iba/rng.hpp"
#include "iba/tensor.hpp"
#include "oracles.hpp"

using namespace iba;
using Catch::Approx;

namespace {
TensorT<double> rand_tensor(Shape s, Rng& rng, bool rg = false, double away = 0.0) {
    return TensorT<double>::from_data(s, oracle::random_vec(static_cast<size_t>(numel(s)), rng, -1, 1, away), rg);
}
}  // namespace

TEST_CASE("conv2d forward basics", "[tensor]") {
    SECTION("3x3 ones against 3x3 ones kernel sums to 9") {
        auto x = Tensor::filled({1, 1, 3, 3}, 1.0f);
        auto w = Tensor::filled({1, 1, 3, 3}, 1.0f);
        auto b = Tensor::zeros({1});
        auto y = conv2d(x, w, b, 1, 0);
        REQUIRE(y.shape() == Shape{1, 1, 1, 1});
        REQUIRE(y.item() == Approx(9.0));
    }
    SECTION("identity 1x1 kernel leaves input unchanged") {
        Rng rng(3);
        auto x = rand_tensor({2, 1, 5, 4}, rng);
        auto w = TensorT<double>::filled({1, 1, 1, 1}, 1.0);
        auto b = TensorT<double>::zeros({1});
        auto y = conv2d(x, w, b, 1, 0);
        for (int i = 0; i < x.size(); ++i) REQUIRE(y.data()[i] == Approx(x.data()[i]).margin(0));
    }
    SECTION("random input matches the 6-loop oracle") {
        Rng rng(11);
        auto x = rand_tensor({2, 3, 8, 8}, rng);
        auto w = rand_tensor({4, 3, 3, 3}, rng);
        auto b = rand_tensor({4}, rng);
        for (int stride : {1, 2})
            for (int pad : {0, 1}) {
                auto y = conv2d(x, w, b, stride, pad);
                auto ref = oracle::conv2d_naive(x.vec(), 2, 3, 8, 8, w.vec(), 4, 3, 3, b.vec(), stride, pad);
                REQUIRE(static_cast<size_t>(y.size()) == ref.size());
                for (size_t i = 0; i < ref.size(); ++i)
                    REQUIRE(std::abs(y.data()[i] - ref[i]) < 1e-6);
            }
    }
    SECTION("shape mismatch reports offending dims") {
        auto x = Tensor::filled({1, 2, 4, 4}, 1.0f);
        auto w = Tensor::filled({1, 3, 3, 3}, 1.0f);
        auto b = Tensor::zeros({1});
        REQUIRE_THROWS_WITH(conv2d(x, w, b, 1, 0),
                            Catch::Matchers::ContainsSubstring("2") &&
                                Catch::Matchers::ContainsSubstring("3"));
        REQUIRE_THROWS_AS(conv2d(x, Tensor::filled({1, 2, 9, 9}, 1.0f), b, 1, 0), std::invalid_argument);
        REQUIRE_THROWS_AS(conv2d(x, Tensor::filled({1, 2, 3, 3}, 1.0f), b, 0, 0), std::invalid_argument);
    }
}

TEST_CASE("elementwise and reduction forwards", "[tensor]") {
    SECTION("softmax of equal logits is uniform") {
        auto y = softmax(Tensor::from_data({1, 2}, {0.0f, 0.0f}));
        REQUIRE(y.data()[0] == Approx(0.5));
        REQUIRE(y.data()[1] == Approx(0.5));
    }
    SECTION("relu clamps negatives") {
        auto y = relu(Tensor::from_data({2}, {-1.0f, 2.0f}));
        REQUIRE(y.data()[0] == 0.0f);
        REQUIRE(y.data()[1] == 2.0f);
    }
    SECTION("cross entropy against a hand-computed value") {
        // softmax(logits) = [0.25, 0.25, 0.4, 0.1] by construction
        const double p[4] = {0.25, 0.25, 0.4, 0.1};
        std::vector<double> logits;
        for (double v : p) logits.push_back(std::log(v) + 1.7);  // shift is irrelevant
        auto ce = cross_entropy(TensorT<double>::from_data({1, 4}, logits), {2});
        REQUIRE(ce.item() == Approx(-std::log(0.4)).epsilon(1e-12));
    }
    SECTION("sum_axis removes the chosen axis") {
        auto x = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
        auto s0 = sum_axis(x, 0);
        REQUIRE(s0.shape() == Shape{3});
        REQUIRE(s0.data()[0] == 5.0f);
        REQUIRE(s0.data()[2] == 9.0f);
        auto s1 = sum_axis(x, 1);
        REQUIRE(s1.shape() == Shape{2});
        REQUIRE(s1.data()[0] == 6.0f);
        REQUIRE(s1.data()[1] == 15.0f);
    }
    SECTION("softmax rows sum to one") {
        Rng rng(5);
        auto x = rand_tensor({20, 7}, rng);
        auto y = softmax(scalar_mul(x, 6.0));
        for (int r = 0; r < 20; ++r) {
            double s = 0;
            for (int c = 0; c < 7; ++c) s += y.data()[r * 7 + c];
            REQUIRE(std::abs(s - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("maxpool ties route the gradient to the lowest flat index", "[tensor]") {
    auto x = Tensor::from_data({1, 1, 2, 2}, {3.0f, 3.0f, 3.0f, 3.0f}, true);
    auto y = maxpool2d(x, 2, 2);
    REQUIRE(y.item() == 3.0f);
    backward(sum_all(y));
    REQUIRE(x.grad()[0] == 1.0f);
    REQUIRE(x.grad()[1] == 0.0f);
    REQUIRE(x.grad()[2] == 0.0f);
    REQUIRE(x.grad()[3] == 0.0f);
}

TEST_CASE("gaussian blur", "[tensor]") {
    SECTION("sigma zero is the identity") {
        Rng rng(2);
        auto x = rand_tensor({1, 4, 4}, rng);
        auto y = gaussian_blur(x, 0.0);
        REQUIRE(y.node() == x.node());
    }
    SECTION("constant input stays constant") {
        auto x = TensorT<double>::filled({1, 6, 6}, 2.5);
        auto y = gaussian_blur(x, 1.3);
        for (int i = 0; i < y.size(); ++i) REQUIRE(y.data()[i] == Approx(2.5).epsilon(1e-12));
    }
    SECTION("delta image matches the dense 2-D kernel oracle") {
        const int n = 9;
        std::vector<double> img(n * n, 0.0);
        img[4 * n + 4] = 1.0;
        auto y = gaussian_blur(TensorT<double>::from_data({1, n, n}, img), 1.0);
        auto ref = oracle::blur2d_naive(img, n, n, 1.0);
        for (size_t i = 0; i < ref.size(); ++i) REQUIRE(std::abs(y.data()[i] - ref[i]) < 1e-12);
        // center equals the product of the 1-D kernel centers
        auto k = gaussian_kernel_1d(1.0);
        REQUIRE(y.data()[4 * n + 4] == Approx(k[3] * k[3]).epsilon(1e-12));
    }
    SECTION("blur preserves the mean on arbitrary input") {
        Rng rng(9);
        auto x = rand_tensor({2, 7, 5}, rng);
        auto y = gaussian_blur(x, 1.7);
        double mx = 0, my = 0;
        for (int i = 0; i < x.size(); ++i) {
            mx += x.data()[i];
            my += y.data()[i];
        }
        REQUIRE(std::abs(mx - my) / x.size() < 1e-6);
    }
}

TEST_CASE("bilinear resize", "[tensor]") {
    SECTION("same size is identity") {
        Rng rng(4);
        auto x = rand_tensor({1, 5, 7}, rng);
        auto y = bilinear_resize(x, 5, 7);
        for (int i = 0; i < x.size(); ++i) REQUIRE(y.data()[i] == Approx(x.data()[i]).margin(1e-15));
    }
    SECTION("1x1 upsamples to a constant fill") {
        auto y = bilinear_resize(TensorT<double>::from_data({1, 1, 1}, {3.25}), 4, 6);
        for (int i = 0; i < y.size(); ++i) REQUIRE(y.data()[i] == 3.25);
    }
    SECTION("2x2 to 4x4 matches hand-evaluated half-pixel interpolation") {
        auto y = bilinear_resize(TensorT<double>::from_data({1, 2, 2}, {0, 1, 2, 3}), 4, 4);
        const double expect[16] = {0.0, 0.25, 0.75, 1.0, 0.5, 0.75, 1.25, 1.5,
                                   1.5, 1.75, 2.25, 2.5, 2.0, 2.25, 2.75, 3.0};
        for (int i = 0; i < 16; ++i) REQUIRE(y.data()[i] == Approx(expect[i]).epsilon(1e-12));
    }
}

TEST_CASE("backward basics", "[tensor]") {
    SECTION("d(x*y)/dx at (2,3) is 3") {
        auto x = TensorT<double>::scalar(2.0, true);
        auto y = TensorT<double>::scalar(3.0, true);
        backward(mul(x, y));
        REQUIRE(x.grad()[0] == 3.0);
        REQUIRE(y.grad()[0] == 2.0);
    }
    SECTION("constant branch gets zero grad") {
        auto x = TensorT<double>::scalar(2.0, true);
        auto unused = TensorT<double>::scalar(5.0, true);
        backward(mul(x, x));
        REQUIRE(unused.grad()[0] == 0.0);
        REQUIRE(x.grad()[0] == 4.0);
    }
    SECTION("non-scalar loss is a usage error") {
        auto x = TensorT<double>::from_data({2}, {1, 2}, true);
        REQUIRE_THROWS_AS(backward(relu(x)), std::invalid_argument);
    }
    SECTION("tape linearization is topologically ordered") {
        Rng rng(8);
        auto a = rand_tensor({3}, rng, true);
        auto b = rand_tensor({3}, rng, true);
        auto c = mul(add(a, b), sub(a, b));
        auto loss = mean(mul(c, c));
        auto tape = Tape<double>::linearize(loss);
        std::unordered_set<const void*> seen;
        for (const auto& n : tape.order) {
            for (const auto& p : n->parents)
                if (p->requires_grad) REQUIRE(seen.count(p.get()) == 1);
            seen.insert(n.get());
        }
        REQUIRE(tape.order.back().get() == loss.node().get());
    }
}

TEST_CASE("every differentiable op passes randomized finite differences", "[tensor][grad]") {
    Rng rng(42);
    const int probes = 20;
    const double tol = 1e-4;

    auto check = [&](const char* name, std::function<TensorT<double>()> fwd,
                     std::vector<TensorT<double>> leaves) {
        auto v = oracle::fd_check(fwd, leaves, probes, rng);
        INFO(name << " max rel err " << v.max_rel_err);
        REQUIRE(v.max_rel_err < tol);
    };

    {
        auto a = rand_tensor({3, 4}, rng, true);
        auto b = rand_tensor({3, 4}, rng, true);
        check("add", [&] { return mean(mul(add(a, b), add(a, b))); }, {a, b});
        check("sub", [&] { return mean(mul(sub(a, b), sub(a, b))); }, {a, b});
        check("mul", [&] { return mean(mul(a, b)); }, {a, b});
        check("scalar_mul", [&] { return mean(scalar_mul(a, 2.5)); }, {a});
        check("scalar_add", [&] { return mean(mul(scalar_add(a, 1.5), a)); }, {a});
        check("mean", [&] { return mean(a); }, {a});
        check("sum_all", [&] { return sum_all(mul(a, a)); }, {a});
        check("sum_axis0", [&] { return mean(mul(sum_axis(a, 0), sum_axis(a, 0))); }, {a});
        check("sum_axis1", [&] { return mean(mul(sum_axis(a, 1), sum_axis(a, 1))); }, {a});
        check("reshape", [&] { return mean(mul(reshape(a, {12}), reshape(a, {12}))); }, {a});
        check("pick", [&] { return pick(mul(a, a), 5); }, {a});
    }
    {
        auto x = rand_tensor({2, 6}, rng, true, 0.05);  // keep away from relu kink
        check("relu", [&] { return mean(relu(x)); }, {x});
        check("sigmoid", [&] { return mean(sigmoid(x)); }, {x});
        check("exp", [&] { return mean(exp_op(x)); }, {x});
        check("softmax", [&] { return pick(softmax(x), 3); }, {x});
        check("cross_entropy", [&] { return cross_entropy(x, {1, 4}); }, {x});
        auto pos = TensorT<double>::from_data({2, 6}, oracle::random_vec(12, rng, 0.2, 2.0), true);
        check("log", [&] { return mean(log_op(pos)); }, {pos});
    }
    {
        auto x = rand_tensor({2, 2, 6, 6}, rng, true, 0.05);
        auto w = rand_tensor({3, 2, 3, 3}, rng, true);
        auto b = rand_tensor({3}, rng, true);
        check("conv2d", [&] { return mean(mul(conv2d(x, w, b, 1, 1), conv2d(x, w, b, 1, 1))); },
              {x, w, b});
        check("conv2d stride 2", [&] { return mean(conv2d(x, w, b, 2, 0)); }, {x, w, b});
        check("maxpool2d", [&] { return mean(maxpool2d(x, 2, 2)); }, {x});
        check("relu_guided fwd", [&] { return mean(relu_guided(x)); }, {x});
    }
    {
        auto x = rand_tensor({2, 5, 5}, rng, true);
        check("gaussian_blur", [&] { return mean(mul(gaussian_blur(x, 1.0), gaussian_blur(x, 1.0))); }, {x});
        check("bilinear up", [&] { return mean(mul(bilinear_resize(x, 9, 7), bilinear_resize(x, 9, 7))); }, {x});
        check("bilinear down", [&] { return mean(mul(bilinear_resize(x, 3, 2), bilinear_resize(x, 3, 2))); }, {x});
    }
    {
        auto x = rand_tensor({3, 4}, rng, true);
        auto w = rand_tensor({2, 4}, rng, true);
        auto b = rand_tensor({2}, rng, true);
        check("dense", [&] { return mean(mul(dense(x, w, b), dense(x, w, b))); }, {x, w, b});
        auto t = rand_tensor({2, 3}, rng, true);
        check("tile_batch", [&] { return mean(mul(tile_batch(t, 4), tile_batch(t, 4))); }, {t});
    }
    {
        auto a = rand_tensor({2, 2, 3, 3}, rng, true);
        auto b = rand_tensor({2, 1, 3, 3}, rng, true);
        check("concat_channels",
              [&] {
                  auto c = concat_channels<double>({a, b});
                  return mean(mul(c, c));
              },
              {a, b});
    }
}

TEST_CASE("conv-relu-dense chain matches finite differences", "[tensor][grad]") {
    Rng rng(17);
    auto x = rand_tensor({1, 1, 6, 6}, rng, true, 0.05);
    auto w1 = rand_tensor({2, 1, 3, 3}, rng, true);
    auto b1 = rand_tensor({2}, rng, true);
    auto w2 = rand_tensor({3, 2 * 6 * 6}, rng, true);
    auto b2 = rand_tensor({3}, rng, true);
    auto fwd = [&] {
        auto h = relu(conv2d(x, w1, b1, 1, 1));
        auto f = reshape(h, {1, h.size()});
        return cross_entropy(dense(f, w2, b2), {2});
    };
    auto v = oracle::fd_check(fwd, {x, w1, b1, w2, b2}, 40, rng);
    REQUIRE(v.max_rel_err < 1e-4);
}

TEST_CASE("identical seeds give bit-identical graph results", "[tensor]") {
    auto run = [] {
        Rng rng(123);
        auto x = TensorT<float>::from_data({1, 1, 8, 8},
                                           std::vector<float>(64, 0.0f), true);
        for (int i = 0; i < 64; ++i) x.data()[i] = static_cast<float>(rng.uniform(-1, 1));
        auto w = TensorT<float>::from_data({2, 1, 3, 3}, std::vector<float>(18, 0.0f));
        for (int i = 0; i < 18; ++i) w.data()[i] = static_cast<float>(rng.normal());
        auto y = gaussian_blur(maxpool2d(relu(conv2d(x, w, TensorT<float>::zeros({2}), 1, 1)), 2, 2), 0.8);
        backward(mean(y));
        std::vector<float> out(y.data(), y.data() + y.size());
        out.insert(out.end(), x.grad(), x.grad() + x.size());
        return out;
    };
    auto a = run(), b = run();
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) REQUIRE(a[i] == b[i]);
}
