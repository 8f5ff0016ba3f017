// Copyright (C) 2026 The implant authors
// SPDX-License-Identifier: Apache-2.0

#include "implant/masked_loss.hpp"

#include <set>

namespace implant {

double LatentMask::coverage() const {
    if (values.size() == 0) return 0.0;
    return values.sum() / static_cast<double>(values.size());
}

Tensor LatentMask::broadcast(int channels) const {
    const int h = height(), w = width();
    Tensor out({channels, h, w});
    for (int c = 0; c < channels; ++c)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) out.at(c, i, j) = values.at(i, j);
    return out;
}

LatentMask LatentMask::filled(int h, int w, double v) { return LatentMask{Tensor({h, w}, v)}; }

LatentMask downsample_mask(const Mask& pixel_mask, int latent_h, int latent_w) {
    if (latent_h < 1 || latent_w < 1) throw MaskError("latent mask dims must be positive");
    const int H = pixel_mask.height, W = pixel_mask.width;
    if (H < latent_h || W < latent_w) throw MaskError("mask is smaller than the latent grid");
    if (pixel_mask.bits.size() != static_cast<std::size_t>(H) * W) throw MaskError("mask storage does not match its size");
    LatentMask out{Tensor({latent_h, latent_w})};
    for (int a = 0; a < latent_h; ++a) {
        const int i0 = a * H / latent_h, i1 = (a + 1) * H / latent_h;
        for (int b = 0; b < latent_w; ++b) {
            const int j0 = b * W / latent_w, j1 = (b + 1) * W / latent_w;
            int on = 0;
            for (int i = i0; i < i1; ++i)
                for (int j = j0; j < j1; ++j) on += pixel_mask.at(i, j) != 0;
            const double frac = static_cast<double>(on) / ((i1 - i0) * (j1 - j0));
            out.values.at(a, b) = frac >= 0.5 ? 1.0 : 0.0;
        }
    }
    if (out.values.sum() == 0.0)
        throw MaskError("object vanishes at latent scale: no " + std::to_string(latent_h) + "x" + std::to_string(latent_w) +
                        " cell is at least half covered");
    return out;
}

Tensor blend_target_noise(const Tensor& eps, const Tensor& eps_pred, const LatentMask& mask) {
    if (eps.shape() != eps_pred.shape())
        throw LossError("blend: noise " + shape_str(eps.shape()) + " vs prediction " + shape_str(eps_pred.shape()));
    if (eps.rank() != 3 || eps.dim(1) != mask.height() || eps.dim(2) != mask.width())
        throw LossError("blend: mask " + shape_str(mask.values.shape()) + " does not match latent " + shape_str(eps.shape()));
    const Tensor m = mask.broadcast(eps.dim(0));
    Tensor out = Tensor::like(eps);
    for (std::size_t i = 0; i < eps.size(); ++i) out[i] = eps[i] * m[i] + eps_pred[i] * (1.0 - m[i]);
    return out;
}

ad::Var masked_term(const Tensor& z, int t, const Tensor& eps, const LatentMask& mask, const ad::Var& cond_m,
                    const Denoiser& model, const NoiseSchedule& schedule) {
    if (z.shape() != eps.shape()) throw LossError("latent and noise shapes differ");
    if (z.rank() != 3 || z.dim(1) != mask.height() || z.dim(2) != mask.width())
        throw LossError("mask " + shape_str(mask.values.shape()) + " does not match latent " + shape_str(z.shape()));
    const Tensor m = mask.broadcast(z.dim(0));
    Tensor z_masked = Tensor::like(z);
    for (std::size_t i = 0; i < z.size(); ++i) z_masked[i] = z[i] * m[i];
    ad::Var pred = model.predict(ad::constant(add_noise(z_masked, t, eps, schedule)), t, cond_m);
    if (!pred.value().all_finite()) throw LossError("non-finite denoiser output in masked term");
    const Tensor target = blend_target_noise(eps, pred.value(), mask);
    return ad::mean(ad::square(ad::sub(ad::constant(target), pred)));
}

namespace {

ad::Var global_term(const Tensor& z, int t, const Tensor& eps, const ad::Var& cond, const Denoiser& model,
                    const NoiseSchedule& schedule) {
    ad::Var loss = ldm_loss(LatentBatch{z, t, eps, cond}, model, schedule);
    if (!std::isfinite(loss.item())) throw LossError("non-finite global term");
    return loss;
}

}  // namespace

ObjectLoss single_object_loss(const Tensor& z, int t, const Tensor& eps, const ObjectTerm& object, const ad::Var& cond,
                              const Denoiser& model, const NoiseSchedule& schedule) {
    ObjectLoss out;
    out.masked.push_back(masked_term(z, t, eps, object.mask, object.cond, model, schedule));
    out.global = global_term(z, t, eps, cond, model, schedule);
    out.subset = {0};
    out.total = ad::add(out.masked.front(), out.global);
    return out;
}

ObjectLoss multi_object_loss(const Tensor& z, int t, const Tensor& eps, const std::vector<ObjectTerm>& objects,
                             const std::vector<int>& subset, int k, const ad::Var& cond, const Denoiser& model,
                             const NoiseSchedule& schedule) {
    if (static_cast<int>(subset.size()) != k)
        throw LossError("subset has " + std::to_string(subset.size()) + " members, expected k = " + std::to_string(k));
    std::set<std::string> ids;
    for (const auto& o : objects)
        if (!ids.insert(o.identifier).second) throw LossError("identifier " + o.identifier + " is used by two objects");
    std::set<int> seen;
    ObjectLoss out;
    out.subset = subset;
    for (int i : subset) {
        if (i < 0 || i >= static_cast<int>(objects.size())) throw LossError("subset index " + std::to_string(i) + " out of range");
        if (!seen.insert(i).second) throw LossError("subset repeats object " + std::to_string(i));
        const auto& o = objects[static_cast<std::size_t>(i)];
        out.masked.push_back(masked_term(z, t, eps, o.mask, o.cond, model, schedule));
    }
    out.global = global_term(z, t, eps, cond, model, schedule);
    std::vector<ad::Var> terms = out.masked;
    terms.push_back(out.global);
    out.total = ad::add_n(terms);
    return out;
}

SubsetStrategy parse_subset_strategy(const std::string& name) {
    if (name == "uniform") return SubsetStrategy::Uniform;
    if (name == "roundrobin") return SubsetStrategy::RoundRobin;
    throw std::invalid_argument("unknown subset strategy '" + name + "' (expected uniform or roundrobin)");
}

std::string to_string(SubsetStrategy s) { return s == SubsetStrategy::Uniform ? "uniform" : "roundrobin"; }

CombinationSchedule::CombinationSchedule(int r, int k, SubsetStrategy strategy) : r_(r), k_(k), strategy_(strategy) {
    if (k < 1) throw LossError("subset size k must be >= 1");
    if (k > r) throw LossError("subset size k = " + std::to_string(k) + " exceeds object count r = " + std::to_string(r));
    std::vector<int> cur(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) cur[static_cast<std::size_t>(i)] = i;
    while (true) {
        subsets_.push_back(cur);
        int i = k - 1;
        while (i >= 0 && cur[static_cast<std::size_t>(i)] == r - k + i) --i;
        if (i < 0) break;
        ++cur[static_cast<std::size_t>(i)];
        for (int j = i + 1; j < k; ++j) cur[static_cast<std::size_t>(j)] = cur[static_cast<std::size_t>(j - 1)] + 1;
    }
}

void CombinationSchedule::set_cursor(std::size_t c) { cursor_ = c % subsets_.size(); }

std::vector<int> next_subset(CombinationSchedule& s, Rng& rng) {
    if (s.strategy_ == SubsetStrategy::Uniform) return s.subsets_[rng.below(s.subsets_.size())];
    const auto& out = s.subsets_[s.cursor_];
    s.cursor_ = (s.cursor_ + 1) % s.subsets_.size();
    return out;
}

}  // namespace implant
