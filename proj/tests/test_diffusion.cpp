#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "hds/diffusion.hpp"
#include "hds/synthgen.hpp"

using namespace hds;
using namespace hds::diff;

TEST_CASE("cosine schedule invariants and endpoints") {
    for (int64_t T : {10LL, 100LL, 250LL}) {
        auto sch = cosine_schedule(T);
        REQUIRE(sch.T == T);
        double prev = 1.0;
        for (int64_t t = 1; t <= T; ++t) {
            const double b = sch.beta[static_cast<size_t>(t - 1)];
            CHECK(b > 0.0);
            CHECK(b <= 0.999);
            CHECK(sch.abar(t) < prev);
            prev = sch.abar(t);
        }
    }
    auto sch = cosine_schedule(250);
    CHECK(sch.abar(1) > 0.999);
    CHECK(sch.abar(250) < 0.01);
}

TEST_CASE("forward_noise closed forms") {
    NoiseSchedule sch;
    sch.T = 2;
    sch.beta = {0.1, 0.2};
    sch.alpha = {0.9, 0.8};
    sch.alpha_bar = {1.0, 0.64};  // t=1 hypothetical abar=1, t=2 abar=0.64

    Tensor x0(Shape{1, 1, 1}, std::vector<float>{1.0f});
    Tensor eps(Shape{1, 1, 1}, std::vector<float>{0.5f});
    auto id = forward_noise(x0, 1, eps, sch);
    CHECK(id[0] == doctest::Approx(1.0f));  // abar = 1 -> x_t = x0
    auto xt = forward_noise(x0, 2, eps, sch);
    CHECK(xt[0] == doctest::Approx(0.8f * 1.0f + 0.6f * 0.5f));  // = 1.1

    CHECK_THROWS_AS(forward_noise(x0, 0, eps, sch), ShapeError);
    CHECK_THROWS_AS(forward_noise(x0, 3, eps, sch), ShapeError);
}

TEST_CASE("forward_noise Monte-Carlo moments at t in {25,125,250}") {
    auto sch = cosine_schedule(250);
    const int64_t e = 2;
    const int64_t vox = e * e * e;
    Tensor x0(Shape{e, e, e}, 0.3f);
    const int64_t draws = 100000;
    for (int64_t t : {25LL, 125LL, 250LL}) {
        Rng rng(substream_seed(99, "mc", static_cast<uint64_t>(t)));
        std::vector<double> sum(vox, 0.0), sum2(vox, 0.0);
        for (int64_t d = 0; d < draws; ++d) {
            Tensor eps = gaussian_tensor<float>(x0.shape, rng);
            auto xt = forward_noise(x0, t, eps, sch);
            for (int64_t i = 0; i < vox; ++i) {
                sum[i] += xt[i];
                sum2[i] += static_cast<double>(xt[i]) * xt[i];
            }
        }
        const double want_mean = std::sqrt(sch.abar(t)) * 0.3;
        const double want_std = std::sqrt(1.0 - sch.abar(t));
        for (int64_t i = 0; i < vox; ++i) {
            const double mean = sum[i] / draws;
            const double var = sum2[i] / draws - mean * mean;
            const double std_dev = std::sqrt(var);
            // mean within 1% of full intensity scale, std within 1% relative
            CHECK(std::abs(mean - want_mean) < 0.01);
            CHECK(std::abs(std_dev - want_std) / want_std < 0.01);
        }
    }
}

namespace {
DiffusionConfig tiny_config() {
    DiffusionConfig cfg;
    cfg.unet.base_channels = 4;
    cfg.unet.temb_dim = 16;
    cfg.T = 10;
    cfg.epochs = 2;
    cfg.batch = 2;
    cfg.seed = 42;
    return cfg;
}

std::vector<Tensor> tiny_dataset(int64_t count, int64_t extent) {
    std::vector<Tensor> out;
    for (int64_t i = 0; i < count; ++i) {
        synth::SceneConfig sc;
        sc.extent = extent;
        sc.seed = substream_seed(7, "dataset", static_cast<uint64_t>(i));
        sc.vesicles.count = 1;
        sc.mitochondria.count = 0;
        sc.aggregates.count = 0;
        out.push_back(synth::generate_volume(sc).image);
    }
    return out;
}
}  // namespace

TEST_CASE("denoise_forward stage audit: c=16 at 32^3") {
    DiffusionConfig cfg;
    cfg.unet.base_channels = 16;
    cfg.seed = 1;
    auto model = make_diffusion_model(cfg);
    Tensor xt(Shape{1, 1, 32, 32, 32}, 0.1f);
    auto den = model.denoise_forward(xt, 25);
    CHECK(den.x0_hat.shape == xt.shape);
    REQUIRE(den.stages.size() == 3);
    CHECK(den.stages[0].shape == Shape{1, 64, 8, 8, 8});
    CHECK(den.stages[1].shape == Shape{1, 32, 16, 16, 16});
    CHECK(den.stages[2].shape == Shape{1, 16, 32, 32, 32});
    CHECK(model.stage_channels() == std::vector<int64_t>{64, 32, 16});
}

TEST_CASE("denoise_forward deterministic and shape-checked") {
    auto model = make_diffusion_model(tiny_config());
    Rng rng(3);
    Tensor xt = gaussian_tensor<float>(Shape{1, 1, 8, 8, 8}, rng);
    auto a = model.denoise_forward(xt, 5);
    auto b = model.denoise_forward(xt, 5);
    CHECK(a.x0_hat.data == b.x0_hat.data);
    CHECK_THROWS_AS(model.denoise_forward(xt, 0), ShapeError);
    Tensor bad(Shape{8, 8, 8}, 0.0f);
    CHECK_THROWS_AS(model.denoise_forward(bad, 5), ShapeError);
}

TEST_CASE("train_diffusion zero epochs, determinism and loss history") {
    auto data = tiny_dataset(4, 8);
    auto cfg = tiny_config();
    cfg.epochs = 0;
    auto frozen = train_diffusion(data, cfg);
    CHECK(frozen.epoch_loss.empty());
    auto init = make_diffusion_model(cfg);
    for (size_t i = 0; i < frozen.unet.params.items.size(); ++i)
        CHECK(frozen.unet.params.items[i].second->value.data ==
              init.unet.params.items[i].second->value.data);

    cfg.epochs = 3;
    auto m1 = train_diffusion(data, cfg);
    auto m2 = train_diffusion(data, cfg);
    CHECK(m1.epoch_loss.size() == 3);
    CHECK(m1.epoch_loss == m2.epoch_loss);
    for (size_t i = 0; i < m1.unet.params.items.size(); ++i)
        CHECK(m1.unet.params.items[i].second->value.data ==
              m2.unet.params.items[i].second->value.data);
    CHECK_THROWS_AS(train_diffusion({}, cfg), ShapeError);
}

TEST_CASE("sample shape and determinism") {
    auto data = tiny_dataset(2, 8);
    auto cfg = tiny_config();
    cfg.epochs = 2;
    auto model = train_diffusion(data, cfg);
    auto s1 = sample(model, Shape{8, 8, 8}, 123);
    auto s2 = sample(model, Shape{8, 8, 8}, 123);
    CHECK(s1.shape == Shape{8, 8, 8});
    CHECK(s1.data == s2.data);
    auto s3 = sample(model, Shape{8, 8, 8}, 124);
    CHECK(s1.data != s3.data);
}

TEST_CASE("extract_features stage selection, shape and determinism") {
    auto cfg = tiny_config();  // base 4 -> stage channels 16, 8, 4
    auto model = make_diffusion_model(cfg);
    synth::SceneConfig sc;
    sc.extent = 8;
    sc.seed = 2;
    sc.vesicles.count = 0;
    sc.mitochondria.count = 0;
    sc.aggregates.count = 0;
    auto x0 = synth::generate_volume(sc).image;

    auto f3 = extract_features(model, x0, 5, {3}, 17);
    CHECK(f3.shape == Shape{1, 4, 8, 8, 8});
    auto fall = extract_features(model, x0, 5, {1, 2, 3}, 17);
    CHECK(fall.shape == Shape{1, 28, 8, 8, 8});
    auto fall2 = extract_features(model, x0, 5, {1, 2, 3}, 17);
    CHECK(fall.data == fall2.data);
    auto fother = extract_features(model, x0, 5, {1, 2, 3}, 18);
    CHECK(fall.data != fother.data);
    CHECK_THROWS_AS(extract_features(model, x0, 5, {}, 17), ShapeError);
    CHECK_THROWS_AS(extract_features(model, x0, 999, {3}, 17), ShapeError);
}
