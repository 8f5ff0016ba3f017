// Copyright (C) 2026 The implant authors
// SPDX-License-Identifier: Apache-2.0

#include "implant/diffusion.hpp"

#include <cmath>
#include <string>

#include "implant/rng.hpp"

namespace implant {

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
    if (betas_.empty()) throw DiffusionError("noise schedule needs at least one step");
    double acc = 1.0;
    for (double b : betas_) {
        if (!(b > 0.0 && b < 1.0)) throw DiffusionError("beta must lie in (0,1), got " + std::to_string(b));
        acc *= 1.0 - b;
        alphas_bar_.push_back(acc);
    }
}

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end) {
    if (steps < 1) throw DiffusionError("schedule steps must be >= 1");
    std::vector<double> betas(static_cast<std::size_t>(steps));
    for (int i = 0; i < steps; ++i)
        betas[static_cast<std::size_t>(i)] =
            steps == 1 ? beta_start : beta_start + (beta_end - beta_start) * i / static_cast<double>(steps - 1);
    return NoiseSchedule(std::move(betas));
}

std::size_t NoiseSchedule::check(int t) const {
    if (t < 0 || t >= steps())
        throw DiffusionError("timestep " + std::to_string(t) + " out of range [0," + std::to_string(steps()) + ")");
    return static_cast<std::size_t>(t);
}

Tensor add_noise(const Tensor& z, const Tensor& eps, double alpha_bar) {
    if (z.shape() != eps.shape())
        throw DiffusionError("noise shape " + shape_str(eps.shape()) + " differs from latent " + shape_str(z.shape()));
    const double a = std::sqrt(alpha_bar), s = std::sqrt(1.0 - alpha_bar);
    Tensor out = Tensor::like(z);
    for (std::size_t i = 0; i < z.size(); ++i) out[i] = a * z[i] + s * eps[i];
    return out;
}

Tensor add_noise(const Tensor& z, int t, const Tensor& eps, const NoiseSchedule& schedule) {
    return add_noise(z, eps, schedule.alpha_bar(t));
}

ad::Var ldm_loss(const LatentBatch& batch, const Denoiser& model, const NoiseSchedule& schedule) {
    const Tensor z_t = add_noise(batch.z, batch.t, batch.eps, schedule);
    ad::Var pred = model.predict(ad::constant(z_t), batch.t, batch.cond);
    if (pred.shape() != batch.eps.shape())
        throw DiffusionError("denoiser output " + shape_str(pred.shape()) + " does not match noise " + shape_str(batch.eps.shape()));
    return ad::mean(ad::square(ad::sub(ad::constant(batch.eps), pred)));
}

std::vector<Tensor> denoise_batch(const Denoiser& model, const NoiseSchedule& schedule, const std::vector<LatentBatch>& batch) {
    std::vector<Tensor> out;
    out.reserve(batch.size());
    for (const auto& b : batch)
        out.push_back(model.predict(ad::constant(add_noise(b.z, b.t, b.eps, schedule)), b.t, b.cond).value());
    return out;
}

// ---------------------------------------------------------------------------
// ToyUNet

ad::Var ToyUNet::ResBlock::forward(const ad::Var& x, const ad::Var& temb) const {
    ad::Var h = conv1.forward(ad::silu(x));
    ad::Var tp = time_proj.forward(temb);
    h = ad::add_channel(h, ad::reshape(tp, {static_cast<int>(tp.size())}));
    h = conv2.forward(ad::silu(h));
    return ad::add(x, h);
}

void ToyUNet::ResBlock::visit(const nn::ParamVisitor& f) {
    conv1.visit(f);
    conv2.visit(f);
    time_proj.visit(f);
}

void ToyUNet::ResBlock::visit(const nn::ConstParamVisitor& f) const {
    conv1.visit(f);
    conv2.visit(f);
    time_proj.visit(f);
}

ad::Var ToyUNet::CrossAttention::forward(const ad::Var& x, const ad::Var& cond) const {
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    ad::Var tokens = ad::transpose(ad::reshape(x, {C, H * W}));  // [HW, C]
    ad::Var n = ad::add(norm.forward(tokens), ad::param(position));
    ad::Var q = to_q.forward(n), k = to_k.forward(cond), v = to_v.forward(cond);
    const int A = q.dim(1), hd = A / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
    std::vector<ad::Var> outs;
    for (int h = 0; h < heads; ++h) {
        ad::Var qs = ad::slice_cols(q, h * hd, hd), ks = ad::slice_cols(k, h * hd, hd), vs = ad::slice_cols(v, h * hd, hd);
        outs.push_back(ad::matmul(ad::softmax_rows(ad::scale(ad::matmul_nt(qs, ks), inv_sqrt)), vs));
    }
    ad::Var o = to_out.forward(heads == 1 ? outs.front() : ad::concat_cols(outs));  // [HW, C]
    return ad::add(x, ad::reshape(ad::transpose(o), {C, H, W}));
}

void ToyUNet::CrossAttention::visit(const nn::ParamVisitor& f) {
    norm.visit(f);
    f(position);
    for (nn::Linear* l : {&to_q, &to_k, &to_v, &to_out}) l->visit(f);
}

void ToyUNet::CrossAttention::visit(const nn::ConstParamVisitor& f) const {
    norm.visit(f);
    f(position);
    for (const nn::Linear* l : {&to_q, &to_k, &to_v, &to_out}) l->visit(f);
}

ToyUNet::ToyUNet(const UNetConfig& cfg, int num_timesteps, Rng& rng) : cfg_(cfg), num_timesteps_(num_timesteps) {
    const int C = cfg.channels, M = cfg.mid_channels, T = cfg.time_dim;
    if (C % cfg.heads != 0 || M % cfg.heads != 0) throw DiffusionError("UNet channels must be divisible by heads");
    const double relu_gain = std::sqrt(2.0);
    auto res = [&](const std::string& name, int ch) {
        return ResBlock{nn::Conv2d(name + ".conv1", ch, ch, 3, 1, 1, rng, relu_gain),
                        nn::Conv2d(name + ".conv2", ch, ch, 3, 1, 1, rng, 0.5),
                        nn::Linear(name + ".time_proj", T, ch, true, rng)};
    };
    auto attn = [&](const std::string& name, int ch, int spatial) {
        return CrossAttention{nn::LayerNorm(name + ".norm", ch),
                              Parameter(name + ".position", rng.normal_tensor({spatial * spatial, ch}, 0.5)),
                              nn::Linear(name + ".to_q", ch, ch, false, rng),
                              nn::Linear(name + ".to_k", cfg.cond_dim, ch, false, rng),
                              nn::Linear(name + ".to_v", cfg.cond_dim, ch, false, rng),
                              nn::Linear(name + ".to_out", ch, ch, true, rng, 0.5),
                              cfg.heads};
    };
    const int S = cfg.latent_size;
    time1_ = nn::Linear("unet.time.fc1", T, T, true, rng);
    time2_ = nn::Linear("unet.time.fc2", T, T, true, rng);
    conv_in_ = nn::Conv2d("unet.conv_in", cfg.latent_channels, C, 3, 1, 1, rng);
    res_hi_ = res("unet.hi.res", C);
    attn_hi_ = attn("unet.hi.xattn", C, S);
    down_ = nn::Conv2d("unet.down", C, M, 3, 2, 1, rng, relu_gain);
    res_lo_ = res("unet.lo.res", M);
    attn_lo_ = attn("unet.lo.xattn", M, S / 2);
    up_ = nn::Conv2d("unet.up", M, C, 3, 1, 1, rng);
    res_out_ = res("unet.out.res", C);
    conv_out_ = nn::Conv2d("unet.conv_out", C, cfg.latent_channels, 3, 1, 1, rng, 0.5);
}

ad::Var ToyUNet::predict(const ad::Var& z_t, int t, const ad::Var& cond) const {
    if (t < 0 || t >= num_timesteps_) throw DiffusionError("timestep " + std::to_string(t) + " out of range");
    const int S = cfg_.latent_size;
    if (z_t.value().rank() != 3 || z_t.dim(0) != cfg_.latent_channels || z_t.dim(1) != S || z_t.dim(2) != S)
        throw DiffusionError("UNet expects latent [" + std::to_string(cfg_.latent_channels) + "," + std::to_string(S) + "," +
                             std::to_string(S) + "], got " + shape_str(z_t.shape()));
    if (cond.value().rank() != 2 || cond.dim(1) != cfg_.cond_dim)
        throw DiffusionError("conditioning must be [n," + std::to_string(cfg_.cond_dim) + "], got " + shape_str(cond.shape()));

    Tensor sinus = nn::timestep_embedding(t, cfg_.time_dim).reshaped({1, cfg_.time_dim});
    ad::Var temb = ad::silu(time2_.forward(ad::silu(time1_.forward(ad::constant(std::move(sinus))))));

    ad::Var h = conv_in_.forward(z_t);
    h = res_hi_.forward(h, temb);
    ad::Var skip = attn_hi_.forward(h, cond);
    ad::Var d = down_.forward(skip);
    d = res_lo_.forward(d, temb);
    d = attn_lo_.forward(d, cond);
    ad::Var u = ad::add(up_.forward(ad::upsample_nearest2x(d)), skip);
    u = res_out_.forward(u, temb);
    ad::Var out = conv_out_.forward(ad::silu(u));
    if (!out.value().all_finite()) throw DiffusionError("non-finite activations in denoiser output");
    return out;
}

void ToyUNet::visit(const nn::ParamVisitor& f) {
    time1_.visit(f);
    time2_.visit(f);
    conv_in_.visit(f);
    res_hi_.visit(f);
    attn_hi_.visit(f);
    down_.visit(f);
    res_lo_.visit(f);
    attn_lo_.visit(f);
    up_.visit(f);
    res_out_.visit(f);
    conv_out_.visit(f);
}

void ToyUNet::visit(const nn::ConstParamVisitor& f) const {
    time1_.visit(f);
    time2_.visit(f);
    conv_in_.visit(f);
    res_hi_.visit(f);
    attn_hi_.visit(f);
    down_.visit(f);
    res_lo_.visit(f);
    attn_lo_.visit(f);
    up_.visit(f);
    res_out_.visit(f);
    conv_out_.visit(f);
}

void ToyUNet::for_each_cross_attention_projection(const std::function<void(nn::Linear&)>& f) {
    for (CrossAttention* a : {&attn_hi_, &attn_lo_})
        for (nn::Linear* l : {&a->to_q, &a->to_k, &a->to_v, &a->to_out}) f(*l);
}

void ToyUNet::for_each_cross_attention_projection(const std::function<void(const nn::Linear&)>& f) const {
    for (const CrossAttention* a : {&attn_hi_, &attn_lo_})
        for (const nn::Linear* l : {&a->to_q, &a->to_k, &a->to_v, &a->to_out}) f(*l);
}

// ---------------------------------------------------------------------------
// ToyCodec

ToyCodec::ToyCodec(const CodecConfig& cfg, Rng& rng)
    : cfg_(cfg),
      enc1_("codec.enc1", 3, cfg.hidden, 4, 4, 0, rng, std::sqrt(2.0)),
      enc2_("codec.enc2", cfg.hidden, cfg.latent_channels, 2, 2, 0, rng),
      dec1_("codec.dec1", cfg.latent_channels, cfg.hidden, 2, rng, std::sqrt(2.0)),
      dec2_("codec.dec2", cfg.hidden, 3, 4, rng),
      shift_({cfg.latent_channels}, 0.0) {
    if (cfg.image_size % 8 != 0) throw DiffusionError("codec image size must be a multiple of 8");
}

ad::Var ToyCodec::encode_raw(const ad::Var& chw) const {
    ad::Var x = ad::add_scalar(ad::scale(chw, 2.0), -1.0);
    return enc2_.forward(ad::silu(enc1_.forward(x)));
}

ad::Var ToyCodec::decode_raw(const ad::Var& latent) const {
    return ad::sigmoid(dec2_.forward(ad::silu(dec1_.forward(latent))));
}

Tensor ToyCodec::encode(const Image& image) const {
    image.validate();
    if (image.channels != 3) throw DiffusionError("codec expects RGB images");
    Tensor raw = encode_raw(ad::constant(image_to_chw(resize(image, cfg_.image_size, cfg_.image_size)))).value();
    const int C = raw.dim(0), P = raw.dim(1) * raw.dim(2);
    for (int c = 0; c < C; ++c)
        for (int p = 0; p < P; ++p) {
            double& v = raw[static_cast<std::size_t>(c) * P + p];
            v = (v - shift_[static_cast<std::size_t>(c)]) * scale_;
        }
    return raw;
}

Image ToyCodec::decode(const Tensor& latent) const {
    if (latent.shape() != latent_shape())
        throw DiffusionError("latent shape " + shape_str(latent.shape()) + " does not match codec " + shape_str(latent_shape()));
    if (!latent.all_finite()) throw DiffusionError("cannot decode a non-finite latent");
    Tensor raw = latent;
    const int C = raw.dim(0), P = raw.dim(1) * raw.dim(2);
    for (int c = 0; c < C; ++c)
        for (int p = 0; p < P; ++p) {
            double& v = raw[static_cast<std::size_t>(c) * P + p];
            v = v / scale_ + shift_[static_cast<std::size_t>(c)];
        }
    return chw_to_image(decode_raw(ad::constant(std::move(raw))).value());
}

void ToyCodec::visit(const nn::ParamVisitor& f) {
    enc1_.visit(f);
    enc2_.visit(f);
    dec1_.visit(f);
    dec2_.visit(f);
}

void ToyCodec::visit(const nn::ConstParamVisitor& f) const {
    enc1_.visit(f);
    enc2_.visit(f);
    dec1_.visit(f);
    dec2_.visit(f);
}

// ---------------------------------------------------------------------------
// Sampling

std::vector<int> ddim_timesteps(int num_timesteps, int steps) {
    if (steps < 1) throw DiffusionError("sampler steps must be >= 1");
    if (steps > num_timesteps) throw DiffusionError("sampler steps exceed the number of training timesteps");
    std::vector<int> ts;
    for (int i = 0; i < steps; ++i) {
        const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
        ts.push_back(static_cast<int>(std::lround((num_timesteps - 1) * (1.0 - frac))));
    }
    return ts;
}

Tensor ddim_sample(const Denoiser& model, const NoiseSchedule& schedule, const Tensor& cond,
                   const std::optional<Tensor>& uncond, const Shape& latent_shape, const SamplerConfig& cfg) {
    const auto ts = ddim_timesteps(schedule.steps(), cfg.steps);
    const bool guided = cfg.guidance != 1.0;
    if (guided && !uncond) throw DiffusionError("guidance != 1 requires an unconditional embedding");

    Rng rng(cfg.seed, "sample.init");
    Tensor z = rng.normal_tensor(latent_shape);
    const ad::Var cond_v = ad::constant(cond);
    const ad::Var uncond_v = uncond ? ad::constant(*uncond) : ad::Var();
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const int t = ts[i];
        Tensor eps = model.predict(ad::constant(z), t, cond_v).value();
        if (guided) {
            const Tensor eu = model.predict(ad::constant(z), t, uncond_v).value();
            for (std::size_t k = 0; k < eps.size(); ++k) eps[k] = eu[k] + cfg.guidance * (eps[k] - eu[k]);
        }
        const double ab = schedule.alpha_bar(t);
        const double ab_prev = i + 1 < ts.size() ? schedule.alpha_bar(ts[i + 1]) : 1.0;
        for (std::size_t k = 0; k < z.size(); ++k) {
            const double x0 = (z[k] - std::sqrt(1.0 - ab) * eps[k]) / std::sqrt(ab);
            z[k] = std::sqrt(ab_prev) * x0 + std::sqrt(1.0 - ab_prev) * eps[k];
        }
    }
    if (!z.all_finite()) throw DiffusionError("sampler produced non-finite latents");
    return z;
}

}  // namespace implant
