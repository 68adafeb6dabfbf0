#pragma once

#include <functional>
#include <string>
#include <vector>

#include "hds/diffusion.hpp"
#include "hds/losses.hpp"
#include "hds/nn.hpp"
#include "hds/optim.hpp"
#include "hds/synthgen.hpp"

namespace hds::seg {

// Per-channel standardization of a feature volume [1,p,D,H,W] to zero mean
// and unit variance (guarded). The K-means distance in the feature loss is
// scale-sensitive and the decoder stages differ wildly in activation scale.
inline void standardize_features(Tensor& f, double guard = 1e-6) {
    check_shape(f.shape.size() == 5, "standardize_features: expected [1,p,D,H,W]");
    const int64_t p = f.shape[1];
    const int64_t sp = f.size() / (f.shape[0] * p);
    for (int64_t c = 0; c < f.shape[0] * p; ++c) {
        float* d = f.ptr() + c * sp;
        double mean = 0;
        for (int64_t i = 0; i < sp; ++i) mean += d[i];
        mean /= static_cast<double>(sp);
        double var = 0;
        for (int64_t i = 0; i < sp; ++i) var += (d[i] - mean) * (d[i] - mean);
        var /= static_cast<double>(sp);
        const double inv = 1.0 / std::sqrt(var + guard);
        for (int64_t i = 0; i < sp; ++i)
            d[i] = static_cast<float>((d[i] - mean) * inv);
    }
}

struct SegConfig {
    nn::UNet3dConfig unet;  // out_channels = K, temb_dim = 0
    int64_t k = 2;
    LossWeights weights;
    double gamma_min = 0.9, gamma_max = 1.1;
    int64_t feature_t = 25;
    std::vector<int> stages = {1, 2, 3};
    int64_t epochs = 100;
    float lr = 3e-4f;
    bool standardize = true;
    uint64_t seed = 0;
};

struct SegModel {
    nn::UNet3d<float> unet;
    SegConfig cfg;

    // soft mask [1,K,D,H,W]; rows sum to 1
    ad::Var<float> forward(const ad::Var<float>& x) const {
        return ad::channel_softmax(unet.forward(x).output);
    }
    Tensor predict(const Tensor& volume) const {
        check_shape(volume.shape.size() == 3, "predict: volume must be [D,H,W]");
        Tensor x(Shape{1, 1, volume.shape[0], volume.shape[1], volume.shape[2]}, volume.data);
        return forward(ad::constant(x))->value;
    }
};

inline SegModel make_seg_model(const SegConfig& cfg) {
    SegModel m;
    m.cfg = cfg;
    m.cfg.unet.in_channels = 1;
    m.cfg.unet.out_channels = cfg.k;
    m.cfg.unet.temb_dim = 0;
    Rng rng(substream_seed(cfg.seed, "seg-init"));
    m.unet.init(m.cfg.unet, rng);
    return m;
}

// Weighted total of the three objectives on one volume. The invariance term
// compares f(x0) against f(T(x0)) with a fresh gamma draw; with lambda_inv=0
// the second forward pass is skipped entirely.
inline ad::Var<float> total_loss(const SegModel& model, const Tensor& volume,
                                 const Tensor& features, const LossWeights& w, double gamma,
                                 LossBreakdown* breakdown = nullptr) {
    w.validate();
    const auto& vs = volume.shape;
    Tensor x0(Shape{1, 1, vs[0], vs[1], vs[2]}, volume.data);
    auto m = model.forward(ad::constant(x0));

    auto total = ad::leaf(Tensor(Shape{1}, 0.0f), false);
    LossBreakdown bd;
    if (w.lambda_v > 0) {
        auto lv = loss_v(m, x0);
        bd.lv = lv->value[0];
        total = ad::add(total, ad::scale(lv, static_cast<float>(w.lambda_v)));
    }
    if (w.lambda_f > 0) {
        auto lf = loss_f(m, features);
        bd.lf = lf->value[0];
        total = ad::add(total, ad::scale(lf, static_cast<float>(w.lambda_f)));
    }
    if (w.lambda_inv > 0) {
        Tensor xg(x0.shape);
        for (int64_t i = 0; i < x0.size(); ++i)
            xg[i] = static_cast<float>(std::pow(static_cast<double>(x0[i]), gamma));
        auto mb = model.forward(ad::constant(xg));
        auto li = loss_inv(m, mb);
        bd.linv = li->value[0];
        total = ad::add(total, ad::scale(li, static_cast<float>(w.lambda_inv)));
    }
    bd.total = total->value[0];
    if (breakdown) *breakdown = bd;
    return total;
}

// Mean per-voxel confidence max_k M_ku of one soft mask [N,K,spatial].
inline double mask_confidence(const Tensor& m) {
    check_shape(m.shape.size() >= 3, "mask_confidence: expected [N,K,spatial]");
    const int64_t nb = m.shape[0];
    const int64_t k = m.shape[1];
    const int64_t sp = m.size() / (nb * k);
    double acc = 0.0;
    for (int64_t b = 0; b < nb; ++b)
        for (int64_t u = 0; u < sp; ++u) {
            float best = m[(b * k) * sp + u];
            for (int64_t c = 1; c < k; ++c) best = std::max(best, m[(b * k + c) * sp + u]);
            acc += best;
        }
    return acc / static_cast<double>(nb * sp);
}

// Mean over volumes of the mean per-voxel confidence max_k M_ku.
inline double selection_score(const SegModel& model, const std::vector<Tensor>& volumes) {
    check_shape(!volumes.empty(), "selection_score: need at least one volume");
    double acc = 0.0;
    for (const auto& v : volumes) acc += mask_confidence(model.predict(v));
    return acc / static_cast<double>(volumes.size());
}

struct SegEpochLog {
    int64_t epoch;
    double lv, lf, linv, total, score;
};

// One volume per step, Adam at the configured rate, gamma redrawn per step.
// The returned model carries the parameters of the epoch with the best
// selection score over all training inputs.
inline SegModel train_segmentation(
    const std::vector<Tensor>& volumes, const std::vector<Tensor>& features,
    const SegConfig& cfg, std::vector<SegEpochLog>* log = nullptr,
    const std::function<void(const SegEpochLog&)>& epoch_cb = nullptr) {
    check_shape(!volumes.empty(), "train_segmentation: empty train split");
    check_shape(volumes.size() == features.size(),
                "train_segmentation: need one feature volume per image");
    check_shape(cfg.k >= 2, "train_segmentation: K must be >= 2");
    cfg.weights.validate();

    SegModel model = make_seg_model(cfg);
    auto params = model.unet.params.vars();
    AdamState opt;
    adam_init(opt, params, cfg.lr);
    Rng rng(substream_seed(cfg.seed, "seg-train"));

    std::vector<Tensor> best_params;
    double best_score = -1.0;
    auto snapshot = [&]() {
        best_params.clear();
        for (auto& p : params) best_params.push_back(p->value);
    };

    // epoch 0 baseline: the untrained model also competes for selection
    {
        const double score = selection_score(model, volumes);
        best_score = score;
        snapshot();
        SegEpochLog e{0, 0, 0, 0, 0, score};
        if (log) log->push_back(e);
        if (epoch_cb) epoch_cb(e);
    }

    for (int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        double sv = 0, sf = 0, si = 0, st = 0;
        for (size_t i = 0; i < volumes.size(); ++i) {
            const double gamma = rng.uniform(cfg.gamma_min, cfg.gamma_max);
            LossBreakdown bd;
            auto loss = total_loss(model, volumes[i], features[i], cfg.weights, gamma, &bd);
            if (!std::isfinite(bd.total))
                throw std::runtime_error("train_segmentation: loss is not finite at epoch " +
                                         std::to_string(epoch) + " (best checkpoint preserved)");
            if (loss->requires_grad) {
                zero_grads(params);
                ad::backward(loss);
                adam_step(params, opt);
            }
            sv += bd.lv;
            sf += bd.lf;
            si += bd.linv;
            st += bd.total;
        }
        const double inv_n = 1.0 / static_cast<double>(volumes.size());
        const double score = selection_score(model, volumes);
        if (score > best_score) {
            best_score = score;
            snapshot();
        }
        SegEpochLog e{epoch, sv * inv_n, sf * inv_n, si * inv_n, st * inv_n, score};
        if (log) log->push_back(e);
        if (epoch_cb) epoch_cb(e);
    }

    for (size_t i = 0; i < params.size(); ++i) params[i]->value = best_params[i];
    return model;
}

}  // namespace hds::seg
