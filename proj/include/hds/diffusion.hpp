#pragma once

#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "hds/nn.hpp"
#include "hds/optim.hpp"
#include "hds/rng.hpp"

namespace hds::diff {

// Per-timestep noising tables, 1-based t stored at index t-1.
struct NoiseSchedule {
    int64_t T = 0;
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;

    double abar(int64_t t) const { return alpha_bar[static_cast<size_t>(t - 1)]; }
    // convention: abar(0) = 1 (no noise)
    double abar0(int64_t t) const { return t == 0 ? 1.0 : abar(t); }
};

// Cosine schedule with the standard s=0.008 offset; betas clipped to 0.999
// and alpha_bar rebuilt as the running product of the clipped alphas.
inline NoiseSchedule cosine_schedule(int64_t T) {
    check_shape(T >= 2, "cosine_schedule: need T >= 2");
    const double s = 0.008;
    auto f = [&](double t) {
        const double a = ((t / static_cast<double>(T) + s) / (1.0 + s)) * 1.5707963267948966;
        const double c = std::cos(a);
        return c * c;
    };
    NoiseSchedule sch;
    sch.T = T;
    const double f0 = f(0.0);
    double prev = 1.0;
    double run = 1.0;
    for (int64_t t = 1; t <= T; ++t) {
        const double cur = f(static_cast<double>(t)) / f0;
        double beta = 1.0 - cur / prev;
        if (beta > 0.999) beta = 0.999;
        prev = cur;
        const double alpha = 1.0 - beta;
        run *= alpha;
        sch.beta.push_back(beta);
        sch.alpha.push_back(alpha);
        sch.alpha_bar.push_back(run);
    }
    return sch;
}

// x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) eps, elementwise and unclamped.
template <class T>
TensorT<T> forward_noise(const TensorT<T>& x0, int64_t t, const TensorT<T>& eps,
                         const NoiseSchedule& sch) {
    check_shape(t >= 1 && t <= sch.T,
                "forward_noise: t=" + std::to_string(t) + " outside 1.." + std::to_string(sch.T));
    check_shape(eps.shape == x0.shape, "forward_noise: eps shape " + shape_str(eps.shape) +
                                           " does not match x0 " + shape_str(x0.shape));
    const T sa = static_cast<T>(std::sqrt(sch.abar(t)));
    const T sb = static_cast<T>(std::sqrt(1.0 - sch.abar(t)));
    TensorT<T> xt(x0.shape);
    for (int64_t i = 0; i < x0.size(); ++i) xt[i] = sa * x0[i] + sb * eps[i];
    return xt;
}

template <class T>
TensorT<T> gaussian_tensor(Shape shape, Rng& rng) {
    TensorT<T> t(std::move(shape));
    for (auto& v : t.data) v = static_cast<T>(rng.normal());
    return t;
}

struct DiffusionConfig {
    nn::UNet3dConfig unet;       // in=out=1
    int64_t T = 250;
    int64_t epochs = 2000;       // full-scale reference: 50000
    int64_t batch = 4;
    float lr = 1e-4f;
    uint64_t seed = 0;
    int64_t checkpoint_every = 0;  // epochs; 0 = only at the end
};

struct DiffusionModel {
    nn::UNet3d<float> unet;
    NoiseSchedule schedule;
    std::vector<float> epoch_loss;  // mean L1 per epoch

    // x0 prediction plus the raw decoder stage activations (coarse first).
    struct Denoised {
        Tensor x0_hat;
        std::vector<Tensor> stages;
    };

    Denoised denoise_forward(const Tensor& xt, int64_t t) const {
        check_shape(t >= 1 && t <= schedule.T, "denoise_forward: t out of range");
        check_shape(xt.shape.size() == 5, "denoise_forward: input must be [N,1,D,H,W]");
        std::vector<int64_t> ts(static_cast<size_t>(xt.shape[0]), t);
        auto fw = unet.forward(ad::constant(xt), ts);
        Denoised out;
        out.x0_hat = fw.output->value;
        for (auto& s : fw.stages) out.stages.push_back(s->value);
        return out;
    }

    // stage channel counts, coarse to fine
    std::vector<int64_t> stage_channels() const {
        std::vector<int64_t> out;
        for (auto it = unet.cfg.mults.rbegin(); it != unet.cfg.mults.rend(); ++it)
            out.push_back(unet.cfg.base_channels * *it);
        return out;
    }
};

inline DiffusionModel make_diffusion_model(const DiffusionConfig& cfg) {
    DiffusionModel m;
    Rng rng(substream_seed(cfg.seed, "diffusion-init"));
    m.unet.init(cfg.unet, rng);
    m.schedule = cosine_schedule(cfg.T);
    return m;
}

// Volumes are [D,H,W] in [0,1]. Minimizes mean |x0_hat - x0| with Adam.
// step_log, if set, receives (step, loss) pairs; checkpoint_cb, if set,
// runs after checkpoint_every epochs and at the end.
inline DiffusionModel train_diffusion(
    const std::vector<Tensor>& dataset, const DiffusionConfig& cfg,
    const std::function<void(int64_t, float)>& step_log = nullptr,
    const std::function<void(const DiffusionModel&, int64_t)>& checkpoint_cb = nullptr) {
    check_shape(!dataset.empty(), "train_diffusion: empty train split");
    DiffusionModel model = make_diffusion_model(cfg);
    auto params = model.unet.params.vars();
    AdamState opt;
    adam_init(opt, params, cfg.lr);
    Rng rng(substream_seed(cfg.seed, "diffusion-train"));

    const auto& vshape = dataset[0].shape;
    check_shape(vshape.size() == 3, "train_diffusion: volumes must be [D,H,W]");
    const int64_t vox = numel(vshape);

    int64_t step = 0;
    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<size_t> order(dataset.size());
        std::iota(order.begin(), order.end(), size_t{0});
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);

        double epoch_sum = 0.0;
        int64_t epoch_batches = 0;
        for (size_t off = 0; off < order.size(); off += static_cast<size_t>(cfg.batch)) {
            const int64_t b = std::min<int64_t>(cfg.batch,
                                                static_cast<int64_t>(order.size() - off));
            Tensor x0(Shape{b, 1, vshape[0], vshape[1], vshape[2]});
            Tensor xt(x0.shape);
            std::vector<int64_t> ts(static_cast<size_t>(b));
            for (int64_t i = 0; i < b; ++i) {
                const Tensor& v = dataset[order[off + static_cast<size_t>(i)]];
                std::copy_n(v.ptr(), vox, x0.ptr() + i * vox);
                const int64_t t = rng.uniform_int(1, cfg.T);
                ts[static_cast<size_t>(i)] = t;
                const float sa = static_cast<float>(std::sqrt(model.schedule.abar(t)));
                const float sb = static_cast<float>(std::sqrt(1.0 - model.schedule.abar(t)));
                for (int64_t j = 0; j < vox; ++j)
                    xt[i * vox + j] =
                        sa * x0[i * vox + j] + sb * static_cast<float>(rng.normal());
            }
            auto fw = model.unet.forward(ad::constant(xt), ts);
            auto loss = ad::l1_loss(fw.output, ad::constant(x0));
            const float lval = loss->value[0];
            if (!std::isfinite(lval))
                throw std::runtime_error("train_diffusion: loss is not finite at step " +
                                         std::to_string(step) + " (lr=" + std::to_string(cfg.lr) +
                                         ")");
            zero_grads(params);
            ad::backward(loss);
            adam_step(params, opt);
            epoch_sum += lval;
            ++epoch_batches;
            if (step_log) step_log(step, lval);
            ++step;
        }
        model.epoch_loss.push_back(static_cast<float>(epoch_sum / epoch_batches));
        if (checkpoint_cb && cfg.checkpoint_every > 0 &&
            (epoch + 1) % cfg.checkpoint_every == 0)
            checkpoint_cb(model, epoch + 1);
    }
    if (checkpoint_cb) checkpoint_cb(model, cfg.epochs);
    return model;
}

// Ancestral sampling with the x0 parameterization: posterior mean of
// q(x_{t-1} | x_t, x0_hat), fixed variance beta_t (1-abar_{t-1})/(1-abar_t).
// x0_hat is clamped to [-1, 2] each step.
inline Tensor sample(const DiffusionModel& model, const Shape& vshape, uint64_t seed) {
    check_shape(vshape.size() == 3, "sample: shape must be [D,H,W]");
    const auto& sch = model.schedule;
    Rng rng(substream_seed(seed, "sampler"));
    Tensor x = gaussian_tensor<float>(Shape{1, 1, vshape[0], vshape[1], vshape[2]}, rng);
    for (int64_t t = sch.T; t >= 1; --t) {
        auto den = model.denoise_forward(x, t);
        Tensor& x0h = den.x0_hat;
        for (auto& v : x0h.data) v = std::min(2.0f, std::max(-1.0f, v));
        const double abar_t = sch.abar(t);
        const double abar_p = sch.abar0(t - 1);
        const double beta = sch.beta[static_cast<size_t>(t - 1)];
        const double alpha = sch.alpha[static_cast<size_t>(t - 1)];
        const float c0 = static_cast<float>(std::sqrt(abar_p) * beta / (1.0 - abar_t));
        const float c1 = static_cast<float>(std::sqrt(alpha) * (1.0 - abar_p) / (1.0 - abar_t));
        const float sigma =
            t > 1 ? static_cast<float>(std::sqrt(beta * (1.0 - abar_p) / (1.0 - abar_t))) : 0.0f;
        for (int64_t i = 0; i < x.size(); ++i) {
            float mean = c0 * x0h[i] + c1 * x[i];
            x[i] = t > 1 ? mean + sigma * static_cast<float>(rng.normal()) : mean;
        }
    }
    Tensor out(vshape);
    std::copy_n(x.ptr(), out.size(), out.ptr());
    return out;
}

// Per-voxel diffusion features: noise x0 to timestep t with a seeded draw,
// run the denoiser, upsample the requested decoder stages to x0 extents and
// concatenate along channels. Returns [1, p, D, H, W].
inline Tensor extract_features(const DiffusionModel& model, const Tensor& x0, int64_t t,
                               const std::vector<int>& stages, uint64_t seed) {
    check_shape(!stages.empty(), "extract_features: stage set must be non-empty");
    check_shape(x0.shape.size() == 3, "extract_features: x0 must be [D,H,W]");
    check_shape(t >= 1 && t <= model.schedule.T, "extract_features: t out of range");
    const int nstages = static_cast<int>(model.unet.cfg.mults.size());
    for (int s : stages)
        check_shape(s >= 1 && s <= nstages,
                    "extract_features: stage " + std::to_string(s) + " out of range");
    Rng rng(substream_seed(seed, "feature-noise"));
    Tensor x0b(Shape{1, 1, x0.shape[0], x0.shape[1], x0.shape[2]}, x0.data);
    Tensor eps = gaussian_tensor<float>(x0b.shape, rng);
    Tensor xt = forward_noise(x0b, t, eps, model.schedule);

    std::vector<int64_t> ts{t};
    auto fw = model.unet.forward(ad::constant(xt), ts);
    std::vector<ad::Var<float>> picked;
    for (int s : stages) {
        auto act = fw.stages[static_cast<size_t>(s - 1)];
        const auto& as = act->value.shape;
        if (as[2] != x0.shape[0] || as[3] != x0.shape[1] || as[4] != x0.shape[2])
            act = ad::trilinear_upsample(act, x0.shape[0], x0.shape[1], x0.shape[2]);
        picked.push_back(act);
    }
    return ad::concat_channels<float>(picked)->value;
}

}  // namespace hds::diff
