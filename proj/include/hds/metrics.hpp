#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "hds/tensor.hpp"

namespace hds::metrics {

using LabelVolume = TensorT<uint8_t>;

// Per-voxel argmax of a soft mask [1,K,D,H,W] or [K,D,H,W]; ties go to the
// lowest channel index.
inline LabelVolume argmax_mask(const Tensor& soft) {
    Shape s = soft.shape;
    if (s.size() == 5) {
        check_shape(s[0] == 1, "argmax_mask: batch must be 1, got " + shape_str(s));
        s.erase(s.begin());
    }
    check_shape(s.size() == 4, "argmax_mask: expected [K,D,H,W], got " + shape_str(soft.shape));
    const int64_t k = s[0];
    const int64_t sp = s[1] * s[2] * s[3];
    check_shape(k >= 1 && k <= 255, "argmax_mask: channel count out of range");
    LabelVolume out(Shape{s[1], s[2], s[3]});
    for (int64_t u = 0; u < sp; ++u) {
        int best = 0;
        float bv = soft[u];
        for (int64_t c = 1; c < k; ++c)
            if (soft[c * sp + u] > bv) {
                bv = soft[c * sp + u];
                best = static_cast<int>(c);
            }
        out[u] = static_cast<uint8_t>(best);
    }
    return out;
}

// Dice overlap 2|a∩b| / (|a|+|b|) of two binary masks; 1 when both are empty.
inline double dice(const LabelVolume& a, const LabelVolume& b) {
    check_shape(a.shape == b.shape,
                "dice: extent mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    int64_t inter = 0, ca = 0, cb = 0;
    for (int64_t i = 0; i < a.size(); ++i) {
        const bool fa = a[i] != 0, fb = b[i] != 0;
        ca += fa;
        cb += fb;
        inter += (fa && fb);
    }
    if (ca + cb == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(ca + cb);
}

namespace detail {

// Square-matrix assignment minimizing total cost, O(n^3) potentials method.
// Returns col_of_row.
inline std::vector<int> assignment_solve(const std::vector<std::vector<double>>& cost) {
    const int n = static_cast<int>(cost.size());
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(static_cast<size_t>(n + 1), 0.0), v(static_cast<size_t>(n + 1), 0.0);
    std::vector<int> p(static_cast<size_t>(n + 1), 0), way(static_cast<size_t>(n + 1), 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<size_t>(n + 1), inf);
        std::vector<char> used(static_cast<size_t>(n + 1), 0);
        do {
            used[static_cast<size_t>(j0)] = 1;
            const int i0 = p[static_cast<size_t>(j0)];
            int j1 = -1;
            double delta = inf;
            for (int j = 1; j <= n; ++j) {
                if (used[static_cast<size_t>(j)]) continue;
                const double cur = cost[static_cast<size_t>(i0 - 1)][static_cast<size_t>(j - 1)] -
                                   u[static_cast<size_t>(i0)] - v[static_cast<size_t>(j)];
                if (cur < minv[static_cast<size_t>(j)]) {
                    minv[static_cast<size_t>(j)] = cur;
                    way[static_cast<size_t>(j)] = j0;
                }
                if (minv[static_cast<size_t>(j)] < delta) {
                    delta = minv[static_cast<size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[static_cast<size_t>(j)]) {
                    u[static_cast<size_t>(p[static_cast<size_t>(j)])] += delta;
                    v[static_cast<size_t>(j)] -= delta;
                } else {
                    minv[static_cast<size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (p[static_cast<size_t>(j0)] != 0);
        do {
            const int j1 = way[static_cast<size_t>(j0)];
            p[static_cast<size_t>(j0)] = p[static_cast<size_t>(j1)];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<int> col_of_row(static_cast<size_t>(n), -1);
    for (int j = 1; j <= n; ++j)
        col_of_row[static_cast<size_t>(p[static_cast<size_t>(j)] - 1)] = j - 1;
    return col_of_row;
}

inline std::vector<uint8_t> labels_present(const LabelVolume& v) {
    std::array<bool, 256> seen{};
    for (int64_t i = 0; i < v.size(); ++i) seen[v[i]] = true;
    std::vector<uint8_t> out;
    for (int l = 0; l < 256; ++l)
        if (seen[static_cast<size_t>(l)]) out.push_back(static_cast<uint8_t>(l));
    return out;
}

inline LabelVolume binarize(const LabelVolume& v, uint8_t label) {
    LabelVolume out(v.shape);
    for (int64_t i = 0; i < v.size(); ++i) out[i] = (v[i] == label) ? 1 : 0;
    return out;
}

}  // namespace detail

// Injective map of K predicted labels onto the ground-truth labels present.
struct Assignment {
    // gt label value matched to each predicted label, -1 for unassigned
    std::vector<int> gt_for_pred;
    double cost = 0.0;  // sum of -dice over matched pairs
};

// Minimum-cost matching of predicted labels 0..K-1 against the ground-truth
// labels present, pair cost = -dice. Predicted labels left over when K
// exceeds the ground-truth label count stay unassigned (dummy columns of
// cost 0).
inline Assignment hungarian_match(const LabelVolume& pred, int64_t k, const LabelVolume& gt) {
    check_shape(pred.shape == gt.shape, "hungarian_match: extent mismatch " +
                                            shape_str(pred.shape) + " vs " + shape_str(gt.shape));
    check_shape(k >= 1, "hungarian_match: K must be positive");
    const auto gt_labels = detail::labels_present(gt);
    const int64_t l = static_cast<int64_t>(gt_labels.size());
    check_shape(l <= k, "hungarian_match: " + std::to_string(l) + " ground-truth labels cannot be covered by K=" +
                            std::to_string(k) + " predictions");

    std::vector<std::vector<double>> cost(static_cast<size_t>(k),
                                          std::vector<double>(static_cast<size_t>(k), 0.0));
    std::vector<LabelVolume> gt_bins;
    gt_bins.reserve(gt_labels.size());
    for (uint8_t gl : gt_labels) gt_bins.push_back(detail::binarize(gt, gl));
    for (int64_t pk = 0; pk < k; ++pk) {
        const auto pb = detail::binarize(pred, static_cast<uint8_t>(pk));
        for (int64_t j = 0; j < l; ++j)
            cost[static_cast<size_t>(pk)][static_cast<size_t>(j)] =
                -dice(pb, gt_bins[static_cast<size_t>(j)]);
    }
    const auto col_of_row = detail::assignment_solve(cost);
    Assignment a;
    a.gt_for_pred.assign(static_cast<size_t>(k), -1);
    for (int64_t pk = 0; pk < k; ++pk) {
        const int j = col_of_row[static_cast<size_t>(pk)];
        if (j < l) {
            a.gt_for_pred[static_cast<size_t>(pk)] = gt_labels[static_cast<size_t>(j)];
            a.cost += cost[static_cast<size_t>(pk)][static_cast<size_t>(j)];
        }
    }
    return a;
}

namespace detail {

// Surface voxels: foreground with at least one of the 6 face neighbors
// background, or sitting on the volume boundary.
inline std::vector<char> surface_mask(const LabelVolume& m) {
    const int64_t d = m.shape[0], h = m.shape[1], w = m.shape[2];
    std::vector<char> out(static_cast<size_t>(m.size()), 0);
    auto at = [&](int64_t z, int64_t y, int64_t x) { return m[(z * h + y) * w + x] != 0; };
    for (int64_t z = 0; z < d; ++z)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                if (!at(z, y, x)) continue;
                const bool boundary = z == 0 || z == d - 1 || y == 0 || y == h - 1 || x == 0 || x == w - 1;
                const bool exposed = boundary || !at(z - 1, y, x) || !at(z + 1, y, x) ||
                                     !at(z, y - 1, x) || !at(z, y + 1, x) || !at(z, y, x - 1) ||
                                     !at(z, y, x + 1);
                if (exposed) out[static_cast<size_t>((z * h + y) * w + x)] = 1;
            }
    return out;
}

// In-place 1D squared-distance transform along one strided line
// (lower-envelope-of-parabolas method); handles all-infinite rows.
inline void edt_1d(double* f, int64_t n, int64_t stride, double spacing, std::vector<int64_t>& v,
                   std::vector<double>& z, std::vector<double>& d) {
    const double inf = std::numeric_limits<double>::infinity();
    int64_t k = -1;
    for (int64_t q = 0; q < n; ++q) {
        if (f[q * stride] == inf) continue;
        const double qs = static_cast<double>(q) * spacing;
        double sx = 0.0;
        while (k >= 0) {
            const double vs = static_cast<double>(v[static_cast<size_t>(k)]) * spacing;
            sx = ((f[q * stride] + qs * qs) - (f[v[static_cast<size_t>(k)] * stride] + vs * vs)) /
                 (2.0 * qs - 2.0 * vs);
            if (sx <= z[static_cast<size_t>(k)])
                --k;
            else
                break;
        }
        if (k < 0) {
            k = 0;
            v[0] = q;
            z[0] = -inf;
            z[1] = inf;
        } else {
            ++k;
            v[static_cast<size_t>(k)] = q;
            z[static_cast<size_t>(k)] = sx;
            z[static_cast<size_t>(k + 1)] = inf;
        }
    }
    if (k < 0) return;  // no finite source on this line
    int64_t j = 0;
    for (int64_t q = 0; q < n; ++q) {
        const double qs = static_cast<double>(q) * spacing;
        while (z[static_cast<size_t>(j + 1)] < qs) ++j;
        const double vs = static_cast<double>(v[static_cast<size_t>(j)]) * spacing;
        d[static_cast<size_t>(q)] = (qs - vs) * (qs - vs) + f[v[static_cast<size_t>(j)] * stride];
    }
    for (int64_t q = 0; q < n; ++q) f[q * stride] = d[static_cast<size_t>(q)];
}

// Exact squared Euclidean distance to the nearest seed, anisotropic spacing.
inline std::vector<double> edt_sq(const std::vector<char>& seed, const Shape& s,
                                  const std::array<double, 3>& spacing) {
    const int64_t d = s[0], h = s[1], w = s[2];
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> f(seed.size());
    for (size_t i = 0; i < seed.size(); ++i) f[i] = seed[i] ? 0.0 : inf;
    const int64_t nmax = std::max({d, h, w});
    std::vector<int64_t> v(static_cast<size_t>(nmax));
    std::vector<double> z(static_cast<size_t>(nmax + 1)), buf(static_cast<size_t>(nmax));
    for (int64_t zz = 0; zz < d; ++zz)  // along W
        for (int64_t y = 0; y < h; ++y) edt_1d(f.data() + (zz * h + y) * w, w, 1, spacing[2], v, z, buf);
    for (int64_t zz = 0; zz < d; ++zz)  // along H
        for (int64_t x = 0; x < w; ++x) edt_1d(f.data() + zz * h * w + x, h, w, spacing[1], v, z, buf);
    for (int64_t y = 0; y < h; ++y)  // along D
        for (int64_t x = 0; x < w; ++x) edt_1d(f.data() + y * w + x, d, h * w, spacing[0], v, z, buf);
    return f;
}

// percentile by linear interpolation between order statistics, pct in [0,100]
inline double percentile(std::vector<double>& vals, double pct) {
    std::sort(vals.begin(), vals.end());
    const double pos = pct / 100.0 * static_cast<double>(vals.size() - 1);
    const auto lo = static_cast<size_t>(std::floor(pos));
    if (lo + 1 >= vals.size()) return vals.back();
    const double frac = pos - static_cast<double>(lo);
    return vals[lo] + frac * (vals[lo + 1] - vals[lo]);
}

}  // namespace detail

// 95th percentile of pooled symmetric surface-to-surface distances. Exactly
// one empty mask earns the image-diagonal penalty; two empty masks score 0.
inline double hd95(const LabelVolume& a, const LabelVolume& b,
                   const std::array<double, 3>& spacing = {1.0, 1.0, 1.0}) {
    check_shape(a.shape == b.shape,
                "hd95: extent mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    check_shape(a.shape.size() == 3, "hd95: expected [D,H,W] masks");
    check_shape(spacing[0] > 0 && spacing[1] > 0 && spacing[2] > 0,
                "hd95: spacing must be positive");
    const bool ea = std::all_of(a.data.begin(), a.data.end(), [](uint8_t x) { return x == 0; });
    const bool eb = std::all_of(b.data.begin(), b.data.end(), [](uint8_t x) { return x == 0; });
    if (ea && eb) return 0.0;
    if (ea || eb) {
        const double dz = static_cast<double>(a.shape[0]) * spacing[0];
        const double dy = static_cast<double>(a.shape[1]) * spacing[1];
        const double dx = static_cast<double>(a.shape[2]) * spacing[2];
        return std::sqrt(dz * dz + dy * dy + dx * dx);
    }
    const auto sa = detail::surface_mask(a);
    const auto sb = detail::surface_mask(b);
    const auto da = detail::edt_sq(sa, a.shape, spacing);  // distance to surface of a
    const auto db = detail::edt_sq(sb, b.shape, spacing);
    std::vector<double> pooled;
    for (size_t i = 0; i < sa.size(); ++i) {
        if (sa[i]) pooled.push_back(std::sqrt(db[i]));
        if (sb[i]) pooled.push_back(std::sqrt(da[i]));
    }
    return detail::percentile(pooled, 95.0);
}

struct EvalReport {
    int level = 1;
    int64_t k = 2;
    std::vector<double> volume_dice;
    std::vector<double> volume_hd95;
    double mean_dice = 0.0;
    double mean_hd95 = 0.0;
    std::string distance_units = "voxel";
    std::string averaging =
        "foreground classes only (background label 0 excluded); level 1 scores the cell class";
};

// Core evaluation on already-discretized predictions: match labels per
// volume, then average Dice/HD95 over the ground-truth foreground classes.
// A foreground class whose matched prediction is empty scores Dice 0 and the
// HD95 empty-mask penalty.
inline EvalReport evaluate_masks(const std::vector<LabelVolume>& preds,
                                 const std::vector<LabelVolume>& gts, int64_t k, int level,
                                 const std::array<double, 3>& spacing = {1.0, 1.0, 1.0}) {
    check_shape(!preds.empty(), "evaluate_masks: empty prediction set");
    check_shape(preds.size() == gts.size(),
                "evaluate_masks: need ground-truth labels for every volume");
    EvalReport rep;
    rep.level = level;
    rep.k = k;
    for (size_t i = 0; i < preds.size(); ++i) {
        const auto assign = hungarian_match(preds[i], k, gts[i]);
        const auto gt_labels = detail::labels_present(gts[i]);
        double dsum = 0.0, hsum = 0.0;
        int64_t fg = 0;
        for (uint8_t gl : gt_labels) {
            if (gl == 0) continue;  // background
            int matched = -1;
            for (int64_t pk = 0; pk < k; ++pk)
                if (assign.gt_for_pred[static_cast<size_t>(pk)] == static_cast<int>(gl)) {
                    matched = static_cast<int>(pk);
                    break;
                }
            const auto gb = detail::binarize(gts[i], gl);
            const auto pb = detail::binarize(preds[i], static_cast<uint8_t>(matched));
            dsum += dice(pb, gb);
            hsum += hd95(pb, gb, spacing);
            ++fg;
        }
        check_shape(fg > 0, "evaluate_masks: volume " + std::to_string(i) +
                                " has no foreground ground-truth class");
        rep.volume_dice.push_back(dsum / static_cast<double>(fg));
        rep.volume_hd95.push_back(hsum / static_cast<double>(fg));
    }
    for (double v : rep.volume_dice) rep.mean_dice += v;
    for (double v : rep.volume_hd95) rep.mean_hd95 += v;
    rep.mean_dice /= static_cast<double>(rep.volume_dice.size());
    rep.mean_hd95 /= static_cast<double>(rep.volume_hd95.size());
    return rep;
}

// Run a soft-mask predictor (anything callable as Tensor -> Tensor) over a
// split, discretize by argmax, and evaluate against the level's labels.
template <class Predict>
EvalReport evaluate_level(Predict&& predict, const std::vector<Tensor>& volumes,
                          const std::vector<LabelVolume>& gts, int64_t k, int level,
                          const std::array<double, 3>& spacing = {1.0, 1.0, 1.0}) {
    check_shape(volumes.size() == gts.size(),
                "evaluate_level: need ground-truth labels for every volume");
    std::vector<LabelVolume> preds;
    preds.reserve(volumes.size());
    for (const auto& v : volumes) preds.push_back(argmax_mask(predict(v)));
    return evaluate_masks(preds, gts, k, level, spacing);
}

}  // namespace hds::metrics
