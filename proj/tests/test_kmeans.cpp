#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "hds/kmeans.hpp"
#include "hds/losses.hpp"
#include "hds/metrics.hpp"
#include "hds/synthgen.hpp"

using namespace hds;
using namespace hds::km;

TEST_CASE("kmeans K=1 centroid equals the arithmetic mean") {
    Rng rng(3);
    const int64_t n = 20, p = 3;
    std::vector<double> pts(static_cast<size_t>(n * p));
    for (auto& v : pts) v = rng.uniform(-2.0, 2.0);
    auto res = kmeans(pts, n, p, 1, 11);
    for (int64_t c = 0; c < p; ++c) {
        double mean = 0.0;
        for (int64_t i = 0; i < n; ++i) mean += pts[static_cast<size_t>(i * p + c)];
        mean /= static_cast<double>(n);
        CHECK(res.centroids[static_cast<size_t>(c)] == doctest::Approx(mean).epsilon(1e-12));
    }
    for (int lab : res.labels) CHECK(lab == 0);
}

TEST_CASE("kmeans separates two distant point clouds exactly") {
    Rng rng(5);
    const int64_t n = 16, p = 3;
    std::vector<double> pts(static_cast<size_t>(n * p));
    for (int64_t i = 0; i < n; ++i) {
        const double base = i < 8 ? 0.0 : 10.0;
        for (int64_t c = 0; c < p; ++c)
            pts[static_cast<size_t>(i * p + c)] = base + rng.uniform(-0.5, 0.5);
    }
    auto res = kmeans(pts, n, p, 2, 7);
    // perfect separation: the two halves land in different clusters
    for (int64_t i = 1; i < 8; ++i) CHECK(res.labels[static_cast<size_t>(i)] == res.labels[0]);
    for (int64_t i = 9; i < 16; ++i) CHECK(res.labels[static_cast<size_t>(i)] == res.labels[8]);
    CHECK(res.labels[0] != res.labels[8]);
    // objective equals within-cloud variance sum around the cloud means
    double want = 0.0;
    for (int half = 0; half < 2; ++half) {
        std::vector<double> mean(static_cast<size_t>(p), 0.0);
        for (int64_t i = half * 8; i < half * 8 + 8; ++i)
            for (int64_t c = 0; c < p; ++c)
                mean[static_cast<size_t>(c)] += pts[static_cast<size_t>(i * p + c)] / 8.0;
        for (int64_t i = half * 8; i < half * 8 + 8; ++i)
            for (int64_t c = 0; c < p; ++c) {
                const double d = pts[static_cast<size_t>(i * p + c)] - mean[static_cast<size_t>(c)];
                want += d * d;
            }
    }
    CHECK(res.objective == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("kmeans near-global optimum on tiny instances") {
    Rng rng(substream_seed(17, "tiny-kmeans"));
    for (int inst = 0; inst < 10; ++inst) {
        const int64_t n = rng.uniform_int(4, 12);
        const int64_t k = rng.uniform_int(1, std::min<int64_t>(3, n));
        const int64_t p = rng.uniform_int(1, 3);
        std::vector<double> pts(static_cast<size_t>(n * p));
        for (auto& v : pts) v = rng.uniform(0.0, 1.0);
        const auto def = kmeans(pts, n, p, k, 100 + static_cast<uint64_t>(inst));
        const auto wide = kmeans(pts, n, p, k, 100 + static_cast<uint64_t>(inst), 300, 1e-6, 50);
        CHECK(def.objective <= wide.objective + 1e-9);
        CHECK(std::abs(def.objective - wide.objective) < 1e-9);
    }
}

TEST_CASE("converged hard labeling matches the consistency loss, objective/N") {
    Rng rng(23);
    const int64_t e = 6, n = e * e * e, p = 2, k = 3;
    std::vector<double> pts(static_cast<size_t>(n * p));
    for (auto& v : pts) v = rng.uniform(0.0, 1.0);
    auto res = kmeans(pts, n, p, k, 9);

    TensorD h(Shape{1, p, e, e, e});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t c = 0; c < p; ++c) h[c * n + i] = pts[static_cast<size_t>(i * p + c)];
    TensorD m(Shape{1, k, e, e, e}, 0.0);
    for (int64_t i = 0; i < n; ++i) m[res.labels[static_cast<size_t>(i)] * n + i] = 1.0;
    const double c_loss = seg::consistency(ad::constant(h), ad::constant(m))->value[0];
    CHECK(std::abs(c_loss - res.objective / static_cast<double>(n)) < 1e-6);
}

TEST_CASE("kmeans_segment separable case, noise ordering and determinism") {
    synth::SceneConfig sc;
    sc.extent = 24;
    sc.seed = 31;
    sc.vesicles.count = 0;
    sc.mitochondria.count = 0;
    sc.aggregates.count = 0;
    sc.noise_magnitude = 0.0;
    auto clean = synth::generate_volume(sc);

    auto mask = kmeans_segment(clean.image, 2, 4);
    auto rep = metrics::evaluate_masks({mask}, {clean.labels[0]}, 2, 1);
    CHECK(rep.mean_dice == 1.0);

    sc.noise_magnitude = 0.25;
    auto noisy = synth::generate_volume(sc);
    auto nmask = kmeans_segment(noisy.image, 2, 4);
    auto nrep = metrics::evaluate_masks({nmask}, {noisy.labels[0]}, 2, 1);
    CHECK(nrep.mean_dice < rep.mean_dice);

    auto again = kmeans_segment(noisy.image, 2, 4);
    CHECK(nmask.data == again.data);
    auto other = kmeans_segment(noisy.image, 2, 5);
    (void)other;  // different seed must still be a valid mask
    for (uint8_t v : other.data) CHECK(v <= 1);
}

TEST_CASE("kmeans input validation") {
    std::vector<double> pts = {0.0, 1.0};
    CHECK_THROWS_AS(kmeans(pts, 2, 1, 3, 1), ShapeError);
    CHECK_THROWS_AS(kmeans(pts, 3, 1, 1, 1), ShapeError);
    Tensor bad(Shape{2, 3, 4, 4}, 0.0f);
    CHECK_THROWS_AS(kmeans_segment(bad, 2, 1), ShapeError);
}
