#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "hds/metrics.hpp"
#include "hds/rng.hpp"
#include "hds/tensor.hpp"

namespace hds::km {

struct KMeansResult {
    std::vector<double> centroids;  // [K][p]
    std::vector<int> labels;        // N entries in 0..K-1
    double objective = 0.0;         // sum of squared distances to own centroid
    int64_t iterations = 0;
};

namespace detail {

inline double sqdist(const double* a, const double* b, int64_t p) {
    double s = 0.0;
    for (int64_t c = 0; c < p; ++c) {
        const double d = a[c] - b[c];
        s += d * d;
    }
    return s;
}

// k-means++ seeding: first centroid uniform, then D^2-weighted draws
inline std::vector<double> seed_pp(const std::vector<double>& pts, int64_t n, int64_t p, int64_t k,
                                   Rng& rng) {
    std::vector<double> cent(static_cast<size_t>(k * p));
    const int64_t first = rng.uniform_int(0, n - 1);
    for (int64_t c = 0; c < p; ++c) cent[static_cast<size_t>(c)] = pts[static_cast<size_t>(first * p + c)];
    std::vector<double> d2(static_cast<size_t>(n));
    for (int64_t kk = 1; kk < k; ++kk) {
        double total = 0.0;
        for (int64_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (int64_t j = 0; j < kk; ++j)
                best = std::min(best, sqdist(&pts[static_cast<size_t>(i * p)],
                                             &cent[static_cast<size_t>(j * p)], p));
            d2[static_cast<size_t>(i)] = best;
            total += best;
        }
        int64_t pick;
        if (total <= 0.0) {
            pick = rng.uniform_int(0, n - 1);  // all points coincide with a centroid
        } else {
            const double target = rng.uniform(0.0, total);
            double acc = 0.0;
            pick = n - 1;
            for (int64_t i = 0; i < n; ++i) {
                acc += d2[static_cast<size_t>(i)];
                if (acc >= target) {
                    pick = i;
                    break;
                }
            }
        }
        for (int64_t c = 0; c < p; ++c)
            cent[static_cast<size_t>(kk * p + c)] = pts[static_cast<size_t>(pick * p + c)];
    }
    return cent;
}

struct LloydOut {
    std::vector<double> cent;
    std::vector<int> labels;
    double objective;
    int64_t iterations;
};

inline LloydOut lloyd(const std::vector<double>& pts, int64_t n, int64_t p, int64_t k,
                      std::vector<double> cent, int64_t max_iter, double tol) {
    std::vector<int> labels(static_cast<size_t>(n), 0);
    double objective = std::numeric_limits<double>::infinity();
    int64_t it = 0;
    for (; it < max_iter; ++it) {
        // assignment pass
        double obj = 0.0;
        for (int64_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            int bj = 0;
            for (int64_t j = 0; j < k; ++j) {
                const double d = sqdist(&pts[static_cast<size_t>(i * p)],
                                        &cent[static_cast<size_t>(j * p)], p);
                if (d < best) {
                    best = d;
                    bj = static_cast<int>(j);
                }
            }
            labels[static_cast<size_t>(i)] = bj;
            obj += best;
        }
        if (obj > objective + 1e-9)
            throw std::logic_error("kmeans: objective increased during Lloyd iteration");
        objective = obj;
        // update pass
        std::vector<double> next(static_cast<size_t>(k * p), 0.0);
        std::vector<int64_t> count(static_cast<size_t>(k), 0);
        for (int64_t i = 0; i < n; ++i) {
            count[static_cast<size_t>(labels[static_cast<size_t>(i)])] += 1;
            for (int64_t c = 0; c < p; ++c)
                next[static_cast<size_t>(labels[static_cast<size_t>(i)] * p + c)] +=
                    pts[static_cast<size_t>(i * p + c)];
        }
        for (int64_t j = 0; j < k; ++j) {
            if (count[static_cast<size_t>(j)] > 0) {
                for (int64_t c = 0; c < p; ++c)
                    next[static_cast<size_t>(j * p + c)] /= static_cast<double>(count[static_cast<size_t>(j)]);
            } else {
                // reseed an empty cluster to the point farthest from its centroid
                double worst = -1.0;
                int64_t far = 0;
                for (int64_t i = 0; i < n; ++i) {
                    const double d =
                        sqdist(&pts[static_cast<size_t>(i * p)],
                               &cent[static_cast<size_t>(labels[static_cast<size_t>(i)] * p)], p);
                    if (d > worst) {
                        worst = d;
                        far = i;
                    }
                }
                for (int64_t c = 0; c < p; ++c)
                    next[static_cast<size_t>(j * p + c)] = pts[static_cast<size_t>(far * p + c)];
            }
        }
        double shift = 0.0;
        for (int64_t j = 0; j < k * p; ++j)
            shift = std::max(shift, std::abs(next[static_cast<size_t>(j)] - cent[static_cast<size_t>(j)]));
        cent = std::move(next);
        if (shift < tol) {
            ++it;
            break;
        }
    }
    // final assignment against the converged centroids
    double obj = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        int bj = 0;
        for (int64_t j = 0; j < k; ++j) {
            const double d =
                sqdist(&pts[static_cast<size_t>(i * p)], &cent[static_cast<size_t>(j * p)], p);
            if (d < best) {
                best = d;
                bj = static_cast<int>(j);
            }
        }
        labels[static_cast<size_t>(i)] = bj;
        obj += best;
    }
    return {std::move(cent), std::move(labels), obj, it};
}

}  // namespace detail

// Lloyd's algorithm with k-means++ seeding; the best objective over
// `restarts` independent seedings wins.
inline KMeansResult kmeans(const std::vector<double>& points, int64_t n, int64_t p, int64_t k,
                           uint64_t seed, int64_t max_iter = 300, double tol = 1e-6,
                           int restarts = 5) {
    check_shape(n >= k && k >= 1, "kmeans: need N >= K >= 1, got N=" + std::to_string(n) +
                                      " K=" + std::to_string(k));
    check_shape(static_cast<int64_t>(points.size()) == n * p, "kmeans: point buffer size mismatch");
    KMeansResult best;
    best.objective = std::numeric_limits<double>::infinity();
    for (int r = 0; r < restarts; ++r) {
        Rng rng(substream_seed(seed, "kmeans-restart", static_cast<uint64_t>(r)));
        auto out = detail::lloyd(points, n, p, k, detail::seed_pp(points, n, p, k, rng), max_iter, tol);
        if (out.objective < best.objective) {
            best.centroids = std::move(out.cent);
            best.labels = std::move(out.labels);
            best.objective = out.objective;
            best.iterations = out.iterations;
        }
    }
    return best;
}

// Cluster a volume into a hard label mask. Intensity volumes are [D,H,W]
// (p = 1); feature volumes are [1,p,D,H,W] and are expected pre-standardized
// by the caller for comparability with the learned pipeline.
inline metrics::LabelVolume kmeans_segment(const Tensor& volume, int64_t k, uint64_t seed) {
    Shape sp_shape;
    int64_t p, n;
    if (volume.shape.size() == 3) {
        p = 1;
        sp_shape = volume.shape;
    } else if (volume.shape.size() == 5 && volume.shape[0] == 1) {
        p = volume.shape[1];
        sp_shape = {volume.shape[2], volume.shape[3], volume.shape[4]};
    } else {
        throw ShapeError("kmeans_segment: expected [D,H,W] or [1,p,D,H,W], got " +
                         shape_str(volume.shape));
    }
    n = sp_shape[0] * sp_shape[1] * sp_shape[2];
    check_shape(k >= 1 && k <= 255, "kmeans_segment: K out of range");
    std::vector<double> pts(static_cast<size_t>(n * p));
    for (int64_t i = 0; i < n; ++i)
        for (int64_t c = 0; c < p; ++c)
            pts[static_cast<size_t>(i * p + c)] = static_cast<double>(volume[c * n + i]);
    const auto res = kmeans(pts, n, p, k, seed);
    metrics::LabelVolume out(sp_shape);
    for (int64_t i = 0; i < n; ++i) out[i] = static_cast<uint8_t>(res.labels[static_cast<size_t>(i)]);
    return out;
}

}  // namespace hds::km
