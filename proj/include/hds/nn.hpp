#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "hds/autodiff.hpp"
#include "hds/rng.hpp"

namespace hds::nn {

using ad::Var;

template <class T>
struct Params {
    std::vector<std::pair<std::string, Var<T>>> items;

    Var<T> add(const std::string& name, TensorT<T> init) {
        auto v = ad::leaf(std::move(init), true);
        items.emplace_back(name, v);
        return v;
    }
    std::vector<Var<T>> vars() const {
        std::vector<Var<T>> out;
        for (auto& [n, v] : items) out.push_back(v);
        return out;
    }
};

template <class T>
TensorT<T> kaiming_init(Shape shape, int64_t fan_in, Rng& rng) {
    TensorT<T> t(std::move(shape));
    const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : t.data) v = static_cast<T>(rng.normal() * std_dev);
    return t;
}

inline int64_t norm_groups(int64_t channels) {
    int64_t g = std::min<int64_t>(8, channels);
    while (channels % g != 0) --g;
    return g;
}

template <class T>
struct Conv3dLayer {
    Var<T> w, b;
    int64_t stride = 1, padding = 1;

    void init(Params<T>& ps, const std::string& name, int64_t cin, int64_t cout, int64_t k,
              int64_t stride_, int64_t padding_, Rng& rng) {
        stride = stride_;
        padding = padding_;
        w = ps.add(name + ".w", kaiming_init<T>({cout, cin, k, k, k}, cin * k * k * k, rng));
        b = ps.add(name + ".b", TensorT<T>(Shape{cout}, T(0)));
    }
    Var<T> forward(const Var<T>& x) const { return ad::conv3d(x, w, b, stride, padding); }
};

template <class T>
struct GroupNormLayer {
    Var<T> gamma, beta;
    int64_t groups = 1;

    void init(Params<T>& ps, const std::string& name, int64_t channels) {
        groups = norm_groups(channels);
        gamma = ps.add(name + ".gamma", TensorT<T>(Shape{channels}, T(1)));
        beta = ps.add(name + ".beta", TensorT<T>(Shape{channels}, T(0)));
    }
    Var<T> forward(const Var<T>& x) const { return ad::group_norm(x, gamma, beta, groups); }
};

template <class T>
struct LinearLayer {
    Var<T> w, b;

    void init(Params<T>& ps, const std::string& name, int64_t fin, int64_t fout, Rng& rng) {
        w = ps.add(name + ".w", kaiming_init<T>({fout, fin}, fin, rng));
        b = ps.add(name + ".b", TensorT<T>(Shape{fout}, T(0)));
    }
    Var<T> forward(const Var<T>& x) const { return ad::linear(x, w, b); }
};

// GN -> SiLU -> conv -> (+ time bias) -> GN -> SiLU -> conv, residual add.
template <class T>
struct ResBlock {
    GroupNormLayer<T> norm1, norm2;
    Conv3dLayer<T> conv1, conv2;
    LinearLayer<T> time_proj;
    bool has_time = false;

    void init(Params<T>& ps, const std::string& name, int64_t channels, int64_t temb_dim,
              Rng& rng) {
        norm1.init(ps, name + ".norm1", channels);
        conv1.init(ps, name + ".conv1", channels, channels, 3, 1, 1, rng);
        has_time = temb_dim > 0;
        if (has_time) time_proj.init(ps, name + ".time_proj", temb_dim, channels, rng);
        norm2.init(ps, name + ".norm2", channels);
        conv2.init(ps, name + ".conv2", channels, channels, 3, 1, 1, rng);
    }

    Var<T> forward(const Var<T>& x, const std::optional<Var<T>>& temb) const {
        auto h = conv1.forward(ad::silu(norm1.forward(x)));
        if (has_time && temb)
            h = ad::add_channel_bias(h, time_proj.forward(ad::silu(*temb)));
        h = conv2.forward(ad::silu(norm2.forward(h)));
        return ad::add(x, h);
    }
};

// Sinusoidal embedding of integer timesteps, [N] -> [N, dim].
template <class T>
TensorT<T> sinusoidal_embedding(const std::vector<int64_t>& t, int64_t dim) {
    const int64_t n = static_cast<int64_t>(t.size());
    const int64_t half = dim / 2;
    TensorT<T> out(Shape{n, dim}, T(0));
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < half; ++j) {
            const double freq =
                std::exp(-std::log(10000.0) * static_cast<double>(j) /
                         static_cast<double>(std::max<int64_t>(half - 1, 1)));
            const double arg = static_cast<double>(t[static_cast<size_t>(i)]) * freq;
            out[i * dim + j] = static_cast<T>(std::sin(arg));
            out[i * dim + half + j] = static_cast<T>(std::cos(arg));
        }
    return out;
}

struct UNet3dConfig {
    int64_t in_channels = 1;
    int64_t out_channels = 1;
    int64_t base_channels = 16;           // full-scale reference: 64
    std::vector<int64_t> mults = {1, 2, 4};
    int64_t temb_dim = 64;                // 0 disables time conditioning
};

// Ladder U-Net. Decoder block outputs are the stage activations, ordered
// coarse to fine: stage 1 at 1/4 resolution with 4c channels, stage 2 at
// 1/2 with 2c, stage 3 at full resolution with c.
template <class T>
struct UNet3d {
    UNet3dConfig cfg;
    Params<T> params;

    LinearLayer<T> temb_fc1, temb_fc2;
    Conv3dLayer<T> stem;
    std::vector<ResBlock<T>> enc;
    std::vector<Conv3dLayer<T>> down;
    ResBlock<T> mid;
    std::vector<ResBlock<T>> dec;        // index 0 = coarsest (stage 1)
    std::vector<Conv3dLayer<T>> fuse;    // skip-merge convs, coarse to fine
    GroupNormLayer<T> out_norm;
    Conv3dLayer<T> out_conv;

    void init(const UNet3dConfig& cfg_, Rng& rng) {
        cfg = cfg_;
        params = {};
        const int64_t levels = static_cast<int64_t>(cfg.mults.size());
        std::vector<int64_t> chans;
        for (int64_t m : cfg.mults) chans.push_back(cfg.base_channels * m);

        if (cfg.temb_dim > 0) {
            temb_fc1.init(params, "temb.fc1", cfg.temb_dim, cfg.temb_dim, rng);
            temb_fc2.init(params, "temb.fc2", cfg.temb_dim, cfg.temb_dim, rng);
        }
        stem.init(params, "stem", cfg.in_channels, chans[0], 3, 1, 1, rng);
        enc.resize(levels);
        down.resize(levels - 1);
        for (int64_t l = 0; l < levels; ++l) {
            enc[l].init(params, "enc" + std::to_string(l), chans[l], cfg.temb_dim, rng);
            if (l + 1 < levels)
                down[l].init(params, "down" + std::to_string(l), chans[l], chans[l + 1], 3, 2, 1,
                             rng);
        }
        mid.init(params, "mid", chans[levels - 1], cfg.temb_dim, rng);
        dec.resize(levels);
        fuse.resize(levels - 1);
        for (int64_t l = levels - 1; l >= 0; --l) {
            dec[l].init(params, "dec" + std::to_string(l), chans[l], cfg.temb_dim, rng);
            if (l > 0)
                fuse[l - 1].init(params, "fuse" + std::to_string(l - 1),
                                 chans[l] + chans[l - 1], chans[l - 1], 3, 1, 1, rng);
        }
        out_norm.init(params, "out.norm", chans[0]);
        out_conv.init(params, "out.conv", chans[0], cfg.out_channels, 3, 1, 1, rng);
    }

    struct Forward {
        Var<T> output;
        std::vector<Var<T>> stages;  // stages[0] = stage 1 (coarsest)
    };

    Forward forward(const Var<T>& x, const std::vector<int64_t>& timesteps = {}) const {
        check_shape(x->value.shape.size() == 5,
                    "unet3d: input must be [N,C,D,H,W], got " + shape_str(x->value.shape));
        check_shape(x->value.shape[1] == cfg.in_channels,
                    "unet3d: expected " + std::to_string(cfg.in_channels) +
                        " input channels, got " + shape_str(x->value.shape));
        const int64_t levels = static_cast<int64_t>(cfg.mults.size());
        std::optional<Var<T>> temb;
        if (cfg.temb_dim > 0) {
            check_shape(static_cast<int64_t>(timesteps.size()) == x->value.shape[0],
                        "unet3d: one timestep per batch element required");
            auto e = ad::constant(sinusoidal_embedding<T>(timesteps, cfg.temb_dim));
            temb = temb_fc2.forward(ad::silu(temb_fc1.forward(e)));
        }

        auto h = stem.forward(x);
        std::vector<Var<T>> skips;
        for (int64_t l = 0; l < levels; ++l) {
            h = enc[l].forward(h, temb);
            if (l + 1 < levels) {
                skips.push_back(h);
                h = down[l].forward(h);
            }
        }
        h = mid.forward(h, temb);

        Forward fw;
        for (int64_t l = levels - 1; l >= 0; --l) {
            h = dec[l].forward(h, temb);
            fw.stages.push_back(h);
            if (l > 0) {
                const auto& skip = skips[static_cast<size_t>(l - 1)];
                const auto& ss = skip->value.shape;
                h = ad::trilinear_upsample(h, ss[2], ss[3], ss[4]);
                h = fuse[l - 1].forward(ad::concat_channels<T>({h, skip}));
            }
        }
        fw.output = out_conv.forward(ad::silu(out_norm.forward(h)));
        return fw;
    }
};

}  // namespace hds::nn
