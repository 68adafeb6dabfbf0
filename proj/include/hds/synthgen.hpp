#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

#include "hds/rng.hpp"
#include "hds/tensor.hpp"

namespace hds::synth {

using LabelVolume = TensorT<uint8_t>;

enum class Variant { Regular, Irregular };

inline const char* variant_name(Variant v) {
    return v == Variant::Regular ? "regular" : "irregular";
}

// Counts, radii and intensities are declared configuration, not a
// reproduction claim; radii are fractions of the volume extent.
struct ObjectClassConfig {
    int64_t count = 0;
    double radius_min = 0.0, radius_max = 0.0;  // fraction of extent
    double intensity_min = 0.0, intensity_max = 1.0;
};

struct SceneConfig {
    int64_t extent = 32;  // full-scale reference: 50
    Variant variant = Variant::Regular;
    ObjectClassConfig cell{1, 0.34, 0.40, 0.35, 0.50};
    ObjectClassConfig vesicles{2, 0.055, 0.08, 0.60, 0.72};
    ObjectClassConfig mitochondria{2, 0.05, 0.07, 0.78, 0.92};
    ObjectClassConfig aggregates{1, 0.035, 0.055, 0.55, 0.98};  // count per aggregate class
    double background_intensity_min = 0.02;
    double background_intensity_max = 0.14;
    double noise_magnitude = 0.25;
    uint64_t seed = 0;

    void validate() const {
        auto in01 = [](double a, double b) { return 0.0 <= a && a <= b && b <= 1.0; };
        if (extent < 8) throw std::invalid_argument("scene: extent must be >= 8");
        if (noise_magnitude < 0) throw std::invalid_argument("scene: noise magnitude must be >= 0");
        for (const auto* c : {&cell, &vesicles, &mitochondria, &aggregates}) {
            if (c->count < 0) throw std::invalid_argument("scene: negative object count");
            if (c->radius_min < 0 || c->radius_min > c->radius_max)
                throw std::invalid_argument("scene: invalid radius range");
            if (!in01(c->intensity_min, c->intensity_max))
                throw std::invalid_argument("scene: intensity range must lie in [0,1]");
        }
        if (!in01(background_intensity_min, background_intensity_max))
            throw std::invalid_argument("scene: background intensity range must lie in [0,1]");
        if (cell.count != 1) throw std::invalid_argument("scene: exactly one cell required");
    }
};

// Level 1: {0 background, 1 cell}. Level 2 adds {2 vesicle, 3 mitochondria}.
// Level 3 adds the four aggregate classes {4..7}.
struct LabeledVolume {
    Tensor image;  // [D,H,W] in [0,1]
    std::array<LabelVolume, 3> labels;
};

struct PlacementError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// 1/f-amplitude noise synthesized in frequency space (DC zeroed), brought
// back by an inverse DFT, centered to zero mean and scaled so max|v| = m.
inline Tensor pink_noise(int64_t extent, double magnitude, uint64_t seed) {
    check_shape(extent >= 4, "pink_noise: extent must be >= 4");
    check_shape(magnitude >= 0, "pink_noise: magnitude must be >= 0");
    const int64_t n = extent;
    Tensor out(Shape{n, n, n}, 0.0f);
    if (magnitude == 0.0) return out;

    Rng rng(substream_seed(seed, "pink-noise"));
    std::vector<std::complex<double>> field(static_cast<size_t>(n * n * n));
    for (int64_t kz = 0; kz < n; ++kz)
        for (int64_t ky = 0; ky < n; ++ky)
            for (int64_t kx = 0; kx < n; ++kx) {
                const double re = rng.normal();
                const double im = rng.normal();
                const double fz = static_cast<double>(std::min(kz, n - kz));
                const double fy = static_cast<double>(std::min(ky, n - ky));
                const double fx = static_cast<double>(std::min(kx, n - kx));
                const double f = std::sqrt(fz * fz + fy * fy + fx * fx);
                const double amp = f > 0.0 ? 1.0 / f : 0.0;  // DC zeroed
                field[static_cast<size_t>((kz * n + ky) * n + kx)] =
                    std::complex<double>(re * amp, im * amp);
            }

    // inverse DFT, separable along each axis; O(n^4) is fine at this scale
    std::vector<std::complex<double>> twiddle(static_cast<size_t>(n));
    for (int64_t j = 0; j < n; ++j) {
        const double a = 2.0 * 3.14159265358979323846 * static_cast<double>(j) /
                         static_cast<double>(n);
        twiddle[static_cast<size_t>(j)] = {std::cos(a), std::sin(a)};
    }
    auto idft_axis = [&](int64_t stride, int64_t count, int64_t line_base_step) {
        std::vector<std::complex<double>> line(static_cast<size_t>(n));
        for (int64_t base = 0; base < count; ++base) {
            const int64_t b = (base / line_base_step) * line_base_step * n +
                              (base % line_base_step);
            for (int64_t i = 0; i < n; ++i) {
                std::complex<double> acc{0.0, 0.0};
                for (int64_t j = 0; j < n; ++j)
                    acc += field[static_cast<size_t>(b + j * stride)] *
                           twiddle[static_cast<size_t>((i * j) % n)];
                line[static_cast<size_t>(i)] = acc;
            }
            for (int64_t i = 0; i < n; ++i) field[static_cast<size_t>(b + i * stride)] =
                line[static_cast<size_t>(i)];
        }
    };
    idft_axis(1, n * n, 1);          // along x: lines indexed by (z,y)
    idft_axis(n, n * n, n);          // along y
    idft_axis(n * n, n * n, n * n);  // along z

    std::vector<double> real(static_cast<size_t>(n * n * n));
    double mean = 0.0;
    for (size_t i = 0; i < real.size(); ++i) {
        real[i] = field[i].real();
        mean += real[i];
    }
    mean /= static_cast<double>(real.size());
    double max_abs = 0.0;
    for (auto& v : real) {
        v -= mean;
        max_abs = std::max(max_abs, std::abs(v));
    }
    const double scale = max_abs > 0 ? magnitude / max_abs : 0.0;
    for (size_t i = 0; i < real.size(); ++i) out.data[i] = static_cast<float>(real[i] * scale);
    return out;
}

// T(x) = x^gamma, monotone [0,1] -> [0,1]
inline Tensor gamma_transform(const Tensor& x, double gamma) {
    if (gamma <= 0) throw std::invalid_argument("gamma_transform: gamma must be > 0");
    Tensor out(x.shape);
    for (int64_t i = 0; i < x.size(); ++i)
        out[i] = static_cast<float>(std::pow(static_cast<double>(x[i]), gamma));
    return out;
}

inline double sample_gamma(double gmin, double gmax, Rng& rng) {
    if (!(0 < gmin && gmin <= gmax))
        throw std::invalid_argument("sample_gamma: need 0 < gamma_min <= gamma_max");
    return rng.uniform(gmin, gmax);
}

namespace detail {

struct Vec3 {
    double x, y, z;
};

// Star-convex shape: sphere (or cube) with an optional low-order angular
// radial perturbation bounded at +-30% for the irregular variant.
struct Blob {
    Vec3 center;
    double radius;      // cubes: half-extent
    bool cube = false;
    bool perturbed = false;
    double a1 = 0, a2 = 0, p1 = 0, p2 = 0;

    double radius_at(double dx, double dy, double dz) const {
        if (!perturbed) return radius;
        const double r = std::sqrt(dx * dx + dy * dy + dz * dz);
        if (r < 1e-12) return radius;
        const double theta = std::acos(std::min(1.0, std::max(-1.0, dz / r)));
        const double phi = std::atan2(dy, dx);
        const double p = a1 * std::sin(2.0 * theta + p1) + a2 * std::sin(3.0 * phi + p2) *
                                                               std::sin(theta);
        return radius * (1.0 + p);
    }

    bool contains(double vx, double vy, double vz) const {
        const double dx = vx - center.x, dy = vy - center.y, dz = vz - center.z;
        if (cube)
            return std::abs(dx) <= radius && std::abs(dy) <= radius && std::abs(dz) <= radius;
        const double r2 = dx * dx + dy * dy + dz * dz;
        const double rr = radius_at(dx, dy, dz);
        return r2 <= rr * rr;
    }

    // conservative outer bound for placement checks
    double outer_radius() const {
        double r = radius;
        if (perturbed) r *= 1.0 + std::abs(a1) + std::abs(a2);
        if (cube) r *= 1.7320508075688772;
        return r;
    }
};

inline Blob make_blob(Vec3 c, double r, bool cube, bool irregular, Rng& rng) {
    Blob b;
    b.center = c;
    b.radius = r;
    b.cube = cube && !irregular;
    if (irregular) {
        b.perturbed = true;
        b.a1 = rng.uniform(-0.18, 0.18);
        b.a2 = rng.uniform(-0.12, 0.12);  // |a1|+|a2| <= 0.3
        b.p1 = rng.uniform(0.0, 6.283185307179586);
        b.p2 = rng.uniform(0.0, 6.283185307179586);
    }
    return b;
}

inline double dist(const Vec3& a, const Vec3& b) {
    const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

}  // namespace detail

inline LabeledVolume generate_volume(const SceneConfig& cfg) {
    cfg.validate();
    const int64_t n = cfg.extent;
    const double e = static_cast<double>(n);
    const bool irregular = cfg.variant == Variant::Irregular;
    Rng rng(substream_seed(cfg.seed, "scene"));

    // cell: centered with a small jitter, sized to stay strictly inside
    const double cell_r = rng.uniform(cfg.cell.radius_min, cfg.cell.radius_max) * e;
    const double jitter = std::max(0.0, e / 2.0 - cell_r * 1.3 - 1.5);
    detail::Vec3 cc{e / 2.0 + rng.uniform(-1.0, 1.0) * std::min(jitter, 0.05 * e),
                    e / 2.0 + rng.uniform(-1.0, 1.0) * std::min(jitter, 0.05 * e),
                    e / 2.0 + rng.uniform(-1.0, 1.0) * std::min(jitter, 0.05 * e)};
    detail::Blob cell = detail::make_blob(cc, cell_r, false, irregular, rng);
    const double cell_inner = irregular ? cell_r * 0.7 : cell_r;  // safe interior bound

    std::vector<detail::Blob> organelles;  // vesicles then mitochondria
    std::vector<int> organelle_class;      // 2 vesicle, 3 mitochondria
    std::vector<detail::Blob> aggregates;
    std::vector<int> aggregate_class;  // 4..7

    auto place = [&](const ObjectClassConfig& oc, bool cube, int label,
                     std::vector<detail::Blob>& out, std::vector<int>& out_cls,
                     const std::string& class_name, int64_t count) {
        for (int64_t i = 0; i < count; ++i) {
            bool placed = false;
            for (int attempt = 0; attempt < 2000 && !placed; ++attempt) {
                const double r = rng.uniform(oc.radius_min, oc.radius_max) * e;
                detail::Blob b = detail::make_blob(
                    {rng.uniform(cc.x - cell_inner, cc.x + cell_inner),
                     rng.uniform(cc.y - cell_inner, cc.y + cell_inner),
                     rng.uniform(cc.z - cell_inner, cc.z + cell_inner)},
                    r, cube, irregular, rng);
                const double ro = b.outer_radius();
                if (detail::dist(b.center, cc) + ro >= cell_inner - 0.5) continue;
                bool overlap = false;
                for (const auto& other : organelles)
                    if (detail::dist(b.center, other.center) <
                        ro + other.outer_radius() + 0.5) {
                        overlap = true;
                        break;
                    }
                if (!overlap)
                    for (const auto& other : aggregates)
                        if (detail::dist(b.center, other.center) <
                            ro + other.outer_radius() + 0.5) {
                            overlap = true;
                            break;
                        }
                if (overlap) continue;
                out.push_back(b);
                out_cls.push_back(label);
                placed = true;
            }
            if (!placed)
                throw PlacementError("generate_volume: cannot place " + class_name +
                                     " (object " + std::to_string(i + 1) + " of " +
                                     std::to_string(count) + "); volume too crowded");
        }
    };

    place(cfg.vesicles, false, 2, organelles, organelle_class, "vesicle", cfg.vesicles.count);
    place(cfg.mitochondria, true, 3, organelles, organelle_class, "mitochondria",
          cfg.mitochondria.count);
    for (int k = 0; k < 4; ++k)
        place(cfg.aggregates, false, 4 + k, aggregates, aggregate_class,
              "protein aggregate class " + std::to_string(k + 1), cfg.aggregates.count);

    // one base intensity per class, resampled on collision
    std::array<float, 8> intensity{};
    auto draw_intensity = [&](double lo, double hi, int idx) {
        for (int tries = 0; tries < 100; ++tries) {
            const float v = static_cast<float>(rng.uniform(lo, hi));
            bool clash = false;
            for (int j = 0; j < idx; ++j)
                if (intensity[static_cast<size_t>(j)] == v) clash = true;
            if (!clash) {
                intensity[static_cast<size_t>(idx)] = v;
                return;
            }
        }
        throw std::runtime_error("generate_volume: cannot draw distinct class intensities");
    };
    draw_intensity(cfg.background_intensity_min, cfg.background_intensity_max, 0);
    draw_intensity(cfg.cell.intensity_min, cfg.cell.intensity_max, 1);
    draw_intensity(cfg.vesicles.intensity_min, cfg.vesicles.intensity_max, 2);
    draw_intensity(cfg.mitochondria.intensity_min, cfg.mitochondria.intensity_max, 3);
    for (int k = 0; k < 4; ++k)
        draw_intensity(cfg.aggregates.intensity_min, cfg.aggregates.intensity_max, 4 + k);

    // rasterize finest labels, derive the coarser levels
    LabeledVolume out;
    out.labels[2] = LabelVolume(Shape{n, n, n}, uint8_t{0});
    LabelVolume& l3 = out.labels[2];
    for (int64_t z = 0; z < n; ++z)
        for (int64_t y = 0; y < n; ++y)
            for (int64_t x = 0; x < n; ++x) {
                const double vx = x + 0.5, vy = y + 0.5, vz = z + 0.5;
                uint8_t lab = 0;
                if (cell.contains(vx, vy, vz)) {
                    lab = 1;
                    for (size_t i = 0; i < organelles.size(); ++i)
                        if (organelles[i].contains(vx, vy, vz)) {
                            lab = static_cast<uint8_t>(organelle_class[i]);
                            break;
                        }
                    if (lab == 1)
                        for (size_t i = 0; i < aggregates.size(); ++i)
                            if (aggregates[i].contains(vx, vy, vz)) {
                                lab = static_cast<uint8_t>(aggregate_class[i]);
                                break;
                            }
                }
                l3[(z * n + y) * n + x] = lab;
            }
    out.labels[1] = LabelVolume(Shape{n, n, n});
    out.labels[0] = LabelVolume(Shape{n, n, n});
    for (int64_t i = 0; i < l3.size(); ++i) {
        const uint8_t v = l3[i];
        out.labels[1][i] = v >= 4 ? uint8_t{1} : v;  // aggregates sit in cytoplasm
        out.labels[0][i] = v >= 1 ? uint8_t{1} : uint8_t{0};
    }

    out.image = Tensor(Shape{n, n, n});
    for (int64_t i = 0; i < l3.size(); ++i) out.image[i] = intensity[l3[i]];
    if (cfg.noise_magnitude > 0) {
        Tensor noise = pink_noise(n, cfg.noise_magnitude, substream_seed(cfg.seed, "noise"));
        for (int64_t i = 0; i < out.image.size(); ++i) {
            const float v = out.image[i] + noise[i];
            out.image[i] = std::min(1.0f, std::max(0.0f, v));
        }
    }
    return out;
}

}  // namespace hds::synth
