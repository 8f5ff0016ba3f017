// Copyright (C) 2026 The implant authors
// SPDX-License-Identifier: Apache-2.0

#include "implant/backend.hpp"

#include <algorithm>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>

#include "implant/archive.hpp"
#include "implant/optim.hpp"
#include "implant/shapes.hpp"

namespace implant {

namespace {

constexpr int kBackendFormat = 1;

std::vector<Parameter*> collect(const std::function<void(const nn::ParamVisitor&)>& visit) {
    std::vector<Parameter*> out;
    visit([&](Parameter& p) { out.push_back(&p); });
    return out;
}

void set_trainable(const std::vector<Parameter*>& params, bool on) {
    for (Parameter* p : params) {
        p->trainable = on;
        p->zero_grad();
    }
}

// Linear warmup then cosine decay to 5% of the peak.
double schedule_lr(double peak, int step, int total) {
    const int warmup = std::min(200, total / 10);
    if (step < warmup) return peak * (step + 1) / warmup;
    const double frac = static_cast<double>(step - warmup) / std::max(1, total - warmup);
    return peak * (0.05 + 0.95 * 0.5 * (1.0 + std::cos(M_PI * frac)));
}

CaptionStyle draw_style(Rng& rng) {
    const double u = rng.uniform();
    if (u < 0.6) return CaptionStyle::Full;
    if (u < 0.8) return CaptionStyle::NoBackground;
    return CaptionStyle::ClassOnly;
}

void log_progress(const LogFn& log, const char* stage, int step, int total, double loss) {
    if (!log) return;
    char buf[128];
    std::snprintf(buf, sizeof buf, "%s step %d/%d loss %.5f", stage, step, total, loss);
    log(buf);
}

}  // namespace

std::string BackendConfig::describe() const {
    std::ostringstream os;
    os.precision(17);
    os << "format=" << kBackendFormat << ";seed=" << seed << ";image_size=" << image_size << ";embed_dim=" << embed_dim
       << ";timesteps=" << timesteps << ";beta_start=" << beta_start << ";beta_end=" << beta_end;
    os << ";text=" << text.dim << "," << text.max_len << "," << text.layers << "," << text.heads << "," << text.mlp_mult << ","
       << text.identity_init;
    os << ";image=" << image.dim << "," << image.input_size << "," << image.c1 << "," << image.c2;
    os << ";codec=" << codec.image_size << "," << codec.latent_channels << "," << codec.hidden;
    os << ";unet=" << unet.latent_channels << "," << unet.latent_size << "," << unet.channels << "," << unet.mid_channels
       << "," << unet.cond_dim << "," << unet.heads << "," << unet.time_dim;
    const auto& p = pretrain;
    os << ";pretrain=" << p.codec_steps << "," << p.codec_lr << "," << p.clip_steps << "," << p.clip_batch << "," << p.clip_lr
       << "," << p.clip_temperature << "," << p.unet_steps << "," << p.unet_lr << "," << p.unet_weight_cap << "," << p.latent_stat_samples;
    return os.str();
}

std::string BackendConfig::fingerprint() const {
    const std::string d = describe();
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(d.data(), d.size())));
    return buf;
}

void BackendConfig::validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("backend config: " + m); };
    if (embed_dim != text.dim || embed_dim != image.dim || embed_dim != unet.cond_dim)
        fail("text, image and conditioning dims must all equal embed_dim");
    if (image_size != image.input_size || image_size != codec.image_size) fail("image sizes disagree");
    if (unet.latent_size * 8 != image_size || unet.latent_channels != codec.latent_channels) fail("latent shape disagrees with codec");
    if (timesteps < 2) fail("timesteps must be >= 2");
}

ToyBackend::ToyBackend(const BackendConfig& cfg) : ToyBackend(cfg, Rng(cfg.seed, "backend.init")) {}

ToyBackend::ToyBackend(const BackendConfig& cfg, Rng&& rng)
    : cfg_((cfg.validate(), cfg)),
      vocab_(Vocabulary::toy_default(cfg.embed_dim)),
      text_(cfg.text, vocab_.base_size(), rng),
      image_(cfg.image, rng),
      codec_(cfg.codec, rng),
      unet_(cfg.unet, cfg.timesteps, rng),
      schedule_(NoiseSchedule::linear(cfg.timesteps, cfg.beta_start, cfg.beta_end)) {
    check_shared_space(text_, image_);
}

void ToyBackend::visit(const nn::ParamVisitor& f) {
    text_.visit(f);
    image_.visit(f);
    codec_.visit(f);
    unet_.visit(f);
}

void ToyBackend::visit(const nn::ConstParamVisitor& f) const {
    text_.visit(f);
    image_.visit(f);
    codec_.visit(f);
    unet_.visit(f);
}

std::uint64_t ToyBackend::weights_hash() const {
    std::uint64_t h = fnv1a64(nullptr, 0);
    visit([&](const Parameter& p) {
        h = fnv1a64(p.name.data(), p.name.size(), h);
        h = fnv1a64(p.value.data(), p.value.size() * sizeof(double), h);
    });
    h = fnv1a64(codec_.latent_shift().data(), codec_.latent_shift().size() * sizeof(double), h);
    const double s = codec_.latent_scale();
    return fnv1a64(&s, sizeof s, h);
}

std::size_t ToyBackend::parameter_count() const {
    std::size_t n = 0;
    visit([&](const Parameter& p) { n += p.value.size(); });
    return n;
}

void ToyBackend::save(const std::filesystem::path& path) const {
    TensorArchive ar;
    visit([&](const Parameter& p) {
        if (ar.contains(p.name)) throw ArchiveError("duplicate backend parameter name " + p.name);
        ar.put(p.name, p.value);
    });
    ar.put("codec.latent_shift", codec_.latent_shift());
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", codec_.latent_scale());
    ar.set_meta("codec.latent_scale", buf);
    ar.set_meta("implant.backend", cfg_.describe());
    ar.save(path);
}

ToyBackend ToyBackend::load(const std::filesystem::path& path, const BackendConfig& cfg) {
    const TensorArchive ar = TensorArchive::load(path);
    if (!ar.has_meta("implant.backend") || ar.meta("implant.backend") != cfg.describe())
        throw ArchiveError("backend archive " + path.string() + " was built from a different configuration");
    ToyBackend b(cfg);
    b.visit([&](Parameter& p) {
        const Tensor& t = ar.get(p.name);
        if (t.shape() != p.value.shape())
            throw ArchiveError("shape drift for " + p.name + ": " + shape_str(t.shape()) + " vs " + shape_str(p.value.shape()));
        p.value = t;
    });
    b.codec_.latent_shift() = ar.get("codec.latent_shift");
    b.codec_.set_latent_scale(std::stod(ar.meta("codec.latent_scale")));
    return b;
}

std::filesystem::path ToyBackend::default_cache_dir() {
    if (const char* d = std::getenv("IMPLANT_CACHE_DIR"); d && *d) return d;
    if (const char* d = std::getenv("XDG_CACHE_HOME"); d && *d) return std::filesystem::path(d) / "implant";
    if (const char* d = std::getenv("HOME"); d && *d) return std::filesystem::path(d) / ".cache" / "implant";
    return std::filesystem::temp_directory_path() / "implant-cache";
}

ToyBackend ToyBackend::pretrained(const BackendConfig& cfg, const LogFn& log, PretrainReport* report) {
    ToyBackend b(cfg);
    PretrainReport r;
    r.codec_loss = pretrain_codec(b, log);
    fit_latent_normalization(b);
    r.codec_mae = codec_reconstruction_error(b, 32, cfg.seed ^ 0x5eedULL);
    if (log) log("codec reconstruction mae " + std::to_string(r.codec_mae));
    r.clip_loss = pretrain_clip(b, log);
    r.unet_loss = pretrain_denoiser(b, log);
    if (report) *report = r;
    return b;
}

ToyBackend ToyBackend::load_or_pretrain(const BackendConfig& cfg, const std::filesystem::path& cache_dir, const LogFn& log) {
    const auto path = cache_dir / ("backend-" + cfg.fingerprint() + ".safetensors");
    if (std::filesystem::exists(path)) {
        if (log) log("loading cached backend " + path.string());
        return load(path, cfg);
    }
    if (log) log("pretraining toy backend (cache miss: " + path.string() + ")");
    ToyBackend b = pretrained(cfg, log);
    std::filesystem::create_directories(cache_dir);
    b.save(path);
    return b;
}

double pretrain_codec(ToyBackend& b, const LogFn& log) {
    const auto& cfg = b.config();
    auto params = collect([&](const nn::ParamVisitor& f) { b.codec().visit(f); });
    set_trainable(params, true);
    Adam opt({cfg.pretrain.codec_lr});
    double tail = 0.0;
    const int n = cfg.pretrain.codec_steps;
    for (int s = 0; s < n; ++s) {
        Rng rng(cfg.seed, "pretrain.codec", static_cast<std::uint64_t>(s));
        const Scene scene = random_scene(rng, 1 + static_cast<int>(rng.below(2)));
        ad::Var x = ad::constant(image_to_chw(render_scene(scene, cfg.image_size).image));
        ad::Var loss = ad::mean(ad::square(ad::sub(b.codec().decode_raw(b.codec().encode_raw(x)), x)));
        ad::backward(loss);
        opt.set_learning_rate(schedule_lr(cfg.pretrain.codec_lr, s, n));
        opt.step(params);
        if (s >= n - 100) tail += loss.item();
        if ((s + 1) % 1000 == 0) log_progress(log, "codec", s + 1, n, loss.item());
    }
    set_trainable(params, false);
    return tail / std::min(n, 100);
}

void fit_latent_normalization(ToyBackend& b) {
    const auto& cfg = b.config();
    const int n = cfg.pretrain.latent_stat_samples;
    const int C = cfg.codec.latent_channels;
    std::vector<Tensor> raws;
    for (int s = 0; s < n; ++s) {
        Rng rng(cfg.seed, "pretrain.latent_stats", static_cast<std::uint64_t>(s));
        const Scene scene = random_scene(rng, 1 + static_cast<int>(rng.below(2)));
        raws.push_back(b.codec().encode_raw(ad::constant(image_to_chw(render_scene(scene, cfg.image_size).image))).value());
    }
    const std::size_t per = raws.front().size() / static_cast<std::size_t>(C);
    Tensor shift({C}, 0.0);
    for (const auto& r : raws)
        for (int c = 0; c < C; ++c)
            for (std::size_t p = 0; p < per; ++p) shift[static_cast<std::size_t>(c)] += r[c * per + p];
    for (int c = 0; c < C; ++c) shift[static_cast<std::size_t>(c)] /= static_cast<double>(n * per);
    double var = 0.0;
    for (const auto& r : raws)
        for (int c = 0; c < C; ++c)
            for (std::size_t p = 0; p < per; ++p) {
                const double d = r[c * per + p] - shift[static_cast<std::size_t>(c)];
                var += d * d;
            }
    var /= static_cast<double>(n) * raws.front().size();
    b.codec().latent_shift() = shift;
    b.codec().set_latent_scale(var > 0.0 ? 1.0 / std::sqrt(var) : 1.0);
}

double codec_reconstruction_error(const ToyBackend& b, int samples, std::uint64_t seed) {
    double total = 0.0;
    for (int s = 0; s < samples; ++s) {
        Rng rng(seed, "codec.eval", static_cast<std::uint64_t>(s));
        const Image img = render_scene(random_scene(rng, 1 + static_cast<int>(rng.below(2))), b.config().image_size).image;
        total += mean_abs_error(b.codec().decode(b.codec().encode(img)), img);
    }
    return total / samples;
}

double pretrain_clip(ToyBackend& b, const LogFn& log) {
    const auto& cfg = b.config();
    auto params = collect([&](const nn::ParamVisitor& f) {
        b.text().visit(f);
        b.image().visit(f);
    });
    set_trainable(params, true);
    Adam opt({cfg.pretrain.clip_lr});
    const int n = cfg.pretrain.clip_steps, B = cfg.pretrain.clip_batch, D = cfg.embed_dim;
    std::vector<int> diag(static_cast<std::size_t>(B));
    for (int i = 0; i < B; ++i) diag[static_cast<std::size_t>(i)] = i;
    double tail = 0.0;
    for (int s = 0; s < n; ++s) {
        Rng rng(cfg.seed, "pretrain.clip", static_cast<std::uint64_t>(s));
        std::vector<ad::Var> img_rows, txt_rows;
        for (int i = 0; i < B; ++i) {
            const Scene scene = random_scene(rng, 1 + static_cast<int>(rng.below(2)));
            const CaptionStyle style = draw_style(rng);
            const RenderedScene r = render_scene(scene, cfg.image_size);
            img_rows.push_back(ad::reshape(b.image().forward(ad::constant(image_to_chw(r.image))), {1, D}));
            txt_rows.push_back(ad::reshape(b.text().encode(tokenize(scene_caption(scene, style), b.vocab())).pooled, {1, D}));
        }
        ad::Var logits = ad::scale(ad::matmul_nt(ad::normalize_rows(ad::concat_rows(img_rows)), ad::normalize_rows(ad::concat_rows(txt_rows))),
                                   1.0 / cfg.pretrain.clip_temperature);
        ad::Var loss = ad::scale(ad::add(ad::cross_entropy_rows(logits, diag), ad::cross_entropy_rows(ad::transpose(logits), diag)), 0.5);
        ad::backward(loss);
        opt.set_learning_rate(schedule_lr(cfg.pretrain.clip_lr, s, n));
        opt.step(params);
        if (s >= n - 100) tail += loss.item();
        if ((s + 1) % 200 == 0) log_progress(log, "clip", s + 1, n, loss.item());
    }
    set_trainable(params, false);
    return tail / std::min(n, 100);
}

double pretrain_denoiser(ToyBackend& b, const LogFn& log) {
    const auto& cfg = b.config();
    auto params = collect([&](const nn::ParamVisitor& f) { b.unet().visit(f); });
    set_trainable(params, true);
    Adam opt({cfg.pretrain.unet_lr});
    const int n = cfg.pretrain.unet_steps;
    double tail = 0.0;
    for (int s = 0; s < n; ++s) {
        Rng rng(cfg.seed, "pretrain.unet", static_cast<std::uint64_t>(s));
        const Scene scene = random_scene(rng, 1 + static_cast<int>(rng.below(2)));
        const CaptionStyle style = draw_style(rng);
        LatentBatch batch;
        batch.z = b.codec().encode(render_scene(scene, cfg.image_size).image);
        batch.t = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.timesteps)));
        batch.eps = rng.normal_tensor(batch.z.shape());
        batch.cond = ad::detach(b.text().encode(tokenize(scene_caption(scene, style), b.vocab())).sequence);
        ad::Var loss = ldm_loss(batch, b.unet(), b.schedule());
        const double ab = b.schedule().alpha_bar(batch.t);
        const double w = std::clamp((1.0 - ab) / ab, 1.0, std::max(1.0, cfg.pretrain.unet_weight_cap));
        ad::backward(ad::scale(loss, w));
        opt.set_learning_rate(schedule_lr(cfg.pretrain.unet_lr, s, n));
        opt.step(params);
        if (s >= n - 500) tail += loss.item();
        if ((s + 1) % 2000 == 0) log_progress(log, "unet", s + 1, n, loss.item());
    }
    set_trainable(params, false);
    return tail / std::min(n, 500);
}

}  // namespace implant
