#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>
#include <set>

#include "hds/synthgen.hpp"

using namespace hds;
using namespace hds::synth;

TEST_CASE("pink_noise zero magnitude and normalization") {
    auto z = pink_noise(8, 0.0, 1);
    for (float v : z.data) CHECK(v == 0.0f);

    for (uint64_t seed : {1ULL, 7ULL, 42ULL}) {
        auto p = pink_noise(16, 0.25, seed);
        double mean = 0.0, max_abs = 0.0;
        for (float v : p.data) {
            mean += v;
            max_abs = std::max(max_abs, static_cast<double>(std::abs(v)));
        }
        mean /= static_cast<double>(p.size());
        CHECK(std::abs(mean) < 1e-6);
        CHECK(max_abs == doctest::Approx(0.25).epsilon(1e-5));
    }
}

TEST_CASE("pink_noise power spectrum slope near -2") {
    // independent direct-DFT spectral oracle with a log-log least-squares fit
    const int64_t n = 32;
    auto p = pink_noise(n, 0.25, 1234);
    std::vector<double> bin_power(static_cast<size_t>(n), 0.0);
    std::vector<int64_t> bin_count(static_cast<size_t>(n), 0);
    // direct DFT magnitude on a subsampled frequency set (full n^6 is too slow;
    // all frequencies with |f| <= n/2 along a coarse lattice)
    for (int64_t kz = 0; kz <= n / 2; kz += 2)
        for (int64_t ky = 0; ky <= n / 2; ky += 2)
            for (int64_t kx = 0; kx <= n / 2; kx += 2) {
                const double f =
                    std::sqrt(static_cast<double>(kz * kz + ky * ky + kx * kx));
                const int64_t bin = static_cast<int64_t>(std::lround(f));
                if (bin < 2 || bin > n / 2) continue;
                std::complex<double> acc{0.0, 0.0};
                for (int64_t z = 0; z < n; ++z)
                    for (int64_t y = 0; y < n; ++y)
                        for (int64_t x = 0; x < n; ++x) {
                            const double a = -2.0 * 3.14159265358979 *
                                             (static_cast<double>(kz * z + ky * y + kx * x) /
                                              static_cast<double>(n));
                            acc += static_cast<double>(p[(z * n + y) * n + x]) *
                                   std::complex<double>(std::cos(a), std::sin(a));
                        }
                bin_power[static_cast<size_t>(bin)] += std::norm(acc);
                bin_count[static_cast<size_t>(bin)] += 1;
            }
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int64_t m = 0;
    for (int64_t b = 2; b <= n / 2; ++b) {
        if (bin_count[static_cast<size_t>(b)] == 0) continue;
        const double lx = std::log(static_cast<double>(b));
        const double ly = std::log(bin_power[static_cast<size_t>(b)] /
                                   static_cast<double>(bin_count[static_cast<size_t>(b)]));
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
        ++m;
    }
    const double slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    CHECK(slope > -2.6);
    CHECK(slope < -1.4);
}

TEST_CASE("generate_volume nesting, range and determinism") {
    SceneConfig cfg;
    cfg.extent = 32;
    cfg.seed = 5;
    for (auto variant : {Variant::Regular, Variant::Irregular}) {
        cfg.variant = variant;
        auto v = generate_volume(cfg);
        // nesting: level k+1 foreground refines level k
        int64_t cell_voxels = 0;
        for (int64_t i = 0; i < v.image.size(); ++i) {
            const auto l1 = v.labels[0][i], l2 = v.labels[1][i], l3 = v.labels[2][i];
            if (l2 >= 1) CHECK(l1 == 1);
            if (l3 >= 1) CHECK(l2 >= 1);
            if (l3 >= 4) CHECK(l2 == 1);  // aggregates live in cytoplasm
            CHECK(v.image[i] >= 0.0f);
            CHECK(v.image[i] <= 1.0f);
            cell_voxels += l1;
        }
        CHECK(cell_voxels > 0);
        // all object classes present
        std::set<uint8_t> l3_classes(v.labels[2].data.begin(), v.labels[2].data.end());
        CHECK(l3_classes.size() == 8);

        auto v2 = generate_volume(cfg);
        CHECK(v.image.data == v2.image.data);
        CHECK(v.labels[0].data == v2.labels[0].data);
        CHECK(v.labels[2].data == v2.labels[2].data);
    }
}

TEST_CASE("generate_volume empty interior and noiseless intensity histogram") {
    SceneConfig cfg;
    cfg.extent = 24;
    cfg.seed = 9;
    cfg.vesicles.count = 0;
    cfg.mitochondria.count = 0;
    cfg.aggregates.count = 0;
    auto v = generate_volume(cfg);
    for (int64_t i = 0; i < v.image.size(); ++i) {
        CHECK(v.labels[1][i] <= 1);
        CHECK(v.labels[2][i] <= 1);
    }

    cfg = SceneConfig{};
    cfg.extent = 24;
    cfg.seed = 11;
    cfg.noise_magnitude = 0.0;
    auto clean = generate_volume(cfg);
    std::set<float> distinct(clean.image.data.begin(), clean.image.data.end());
    CHECK(distinct.size() <= 8);
    CHECK(distinct.size() >= 2);
}

TEST_CASE("generate_volume reports unplaceable objects") {
    SceneConfig cfg;
    cfg.extent = 24;
    cfg.seed = 3;
    cfg.vesicles.count = 500;  // cannot fit
    CHECK_THROWS_AS(generate_volume(cfg), PlacementError);
    try {
        generate_volume(cfg);
    } catch (const PlacementError& e) {
        CHECK(std::string(e.what()).find("vesicle") != std::string::npos);
    }
}

TEST_CASE("gamma transform closed forms and validation") {
    Tensor x(Shape{2, 1, 1}, std::vector<float>{0.5f, 0.81f});
    auto id = gamma_transform(x, 1.0);
    CHECK(id.data == x.data);
    auto sq = gamma_transform(x, 2.0);
    CHECK(sq[0] == doctest::Approx(0.25));
    auto rt = gamma_transform(x, 0.5);
    CHECK(rt[1] == doctest::Approx(0.9));
    CHECK_THROWS_AS(gamma_transform(x, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(gamma_transform(x, -1.0), std::invalid_argument);
}

TEST_CASE("sample_gamma distribution") {
    Rng rng(77);
    CHECK(sample_gamma(1.0, 1.0, rng) == 1.0);
    double sum = 0.0;
    for (int i = 0; i < 100000; ++i) {
        const double g = sample_gamma(0.9, 1.1, rng);
        CHECK(g >= 0.9);
        CHECK(g <= 1.1);
        sum += g;
    }
    CHECK(sum / 100000.0 == doctest::Approx(1.0).epsilon(0.002));
    CHECK_THROWS_AS(sample_gamma(0.0, 1.0, rng), std::invalid_argument);
    CHECK_THROWS_AS(sample_gamma(1.2, 1.1, rng), std::invalid_argument);
}
