#include "cimd/metrics.hpp"

#include "cimd/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace cimd {

namespace {

void require_same_geometry(const Mask& a, const Mask& b) {
    if (a.h != b.h || a.w != b.w) {
        throw std::invalid_argument("mask shapes differ: " + std::to_string(a.h) + "x" + std::to_string(a.w) + " vs " +
                                    std::to_string(b.h) + "x" + std::to_string(b.w));
    }
    a.validate();
    b.validate();
}

struct Counts {
    std::size_t inter = 0, a = 0, b = 0;
};

Counts overlap(const Mask& a, const Mask& b) {
    require_same_geometry(a, b);
    Counts c;
    for (std::size_t i = 0; i < a.px.size(); ++i) {
        c.a += a.px[i];
        c.b += b.px[i];
        c.inter += a.px[i] & b.px[i];
    }
    return c;
}

void require_pair(const MaskSet& preds, const MaskSet& gts) {
    preds.validate();
    gts.validate();
    require_same_geometry(preds.masks.front(), gts.masks.front());
}

Mask union_of(const MaskSet& s) {
    Mask u(s.masks.front().h, s.masks.front().w);
    for (const Mask& m : s.masks) {
        for (std::size_t i = 0; i < m.px.size(); ++i) u.px[i] |= m.px[i];
    }
    return u;
}

double mean_distance(const MaskSet& a, const MaskSet& b, bool skip_diagonal) {
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t j = 0; j < b.size(); ++j) {
            if (skip_diagonal && i == j) continue;
            acc += 1.0 - iou(a.masks[i], b.masks[j]);
            ++n;
        }
    }
    return acc / static_cast<double>(n);
}

struct Range {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
};

Range dispersion_range(const MaskSet& s, Dispersion kind, const char* which) {
    if (s.size() < 2) {
        throw UndefinedDispersionError(std::string("diversity agreement needs at least two ") + which + " masks, got " +
                                       std::to_string(s.size()));
    }
    Range r;
    for (std::size_t i = 0; i < s.size(); ++i) {
        for (std::size_t j = i + 1; j < s.size(); ++j) {
            const double v = pair_dispersion(s.masks[i], s.masks[j], kind);
            r.lo = std::min(r.lo, v);
            r.hi = std::max(r.hi, v);
        }
    }
    return r;
}

}  // namespace

std::size_t Mask::count() const {
    std::size_t c = 0;
    for (auto v : px) c += v;
    return c;
}

void Mask::validate() const {
    if (h <= 0 || w <= 0 || px.size() != static_cast<std::size_t>(h) * w) {
        throw std::invalid_argument("mask has inconsistent geometry");
    }
    for (auto v : px) {
        if (v > 1) throw std::invalid_argument("mask is not binary (value " + std::to_string(v) + ")");
    }
}

Mask Mask::threshold(std::span<const double> plane, int h, int w, double threshold) {
    if (plane.size() != static_cast<std::size_t>(h) * w) throw std::invalid_argument("Mask::threshold: size mismatch");
    Mask m(h, w);
    for (std::size_t i = 0; i < plane.size(); ++i) m.px[i] = plane[i] > threshold ? 1 : 0;
    return m;
}

Tensor Mask::to_signed() const {
    Tensor t(1, 1, h, w);
    for (std::size_t i = 0; i < px.size(); ++i) t.data[i] = px[i] ? 1.0 : -1.0;
    return t;
}

void MaskSet::validate() const {
    if (masks.empty()) throw std::invalid_argument("MaskSet is empty");
    for (const Mask& m : masks) require_same_geometry(masks.front(), m);
}

double iou(const Mask& a, const Mask& b) {
    const Counts c = overlap(a, b);
    const std::size_t uni = c.a + c.b - c.inter;
    if (uni == 0) return 1.0;
    return static_cast<double>(c.inter) / static_cast<double>(uni);
}

double dice(const Mask& a, const Mask& b) {
    const Counts c = overlap(a, b);
    if (c.a + c.b == 0) return 1.0;
    return 2.0 * static_cast<double>(c.inter) / static_cast<double>(c.a + c.b);
}

double ged(const MaskSet& preds, const MaskSet& gts, const GedOptions& opt) {
    require_pair(preds, gts);
    const bool skip = !opt.include_self_pairs;
    if (skip && (preds.size() < 2 || gts.size() < 2)) {
        throw UndefinedDispersionError("distinct-pair GED needs at least two masks per set");
    }
    const double cross = mean_distance(preds, gts, false);
    const double within_p = mean_distance(preds, preds, skip);
    const double within_g = mean_distance(gts, gts, skip);
    return 2.0 * cross - within_p - within_g;
}

double combined_sensitivity(const MaskSet& preds, const MaskSet& gts) {
    require_pair(preds, gts);
    const Mask yc = union_of(gts);
    const Mask pc = union_of(preds);
    std::size_t tp = 0, pos = 0;
    for (std::size_t i = 0; i < yc.px.size(); ++i) {
        pos += yc.px[i];
        tp += yc.px[i] & pc.px[i];
    }
    // No ground-truth positives: nothing to miss, whether or not predictions are empty.
    if (pos == 0) return 1.0;
    return static_cast<double>(tp) / static_cast<double>(pos);
}

double max_dice_match(const MaskSet& preds, const MaskSet& gts) {
    require_pair(preds, gts);
    double acc = 0.0;
    for (const Mask& y : gts.masks) {
        double best = 0.0;
        for (const Mask& p : preds.masks) best = std::max(best, dice(p, y));
        acc += best;
    }
    return acc / static_cast<double>(gts.size());
}

double pair_dispersion(const Mask& a, const Mask& b, Dispersion kind) {
    if (kind == Dispersion::IouDistance) return 1.0 - iou(a, b);
    require_same_geometry(a, b);
    std::size_t diff = 0;
    for (std::size_t i = 0; i < a.px.size(); ++i) diff += a.px[i] != b.px[i];
    return static_cast<double>(diff) / static_cast<double>(a.px.size()) / 4.0;
}

double diversity_agreement(const MaskSet& preds, const MaskSet& gts, Dispersion kind) {
    require_pair(preds, gts);
    const Range g = dispersion_range(gts, kind, "ground-truth");
    const Range p = dispersion_range(preds, kind, "predicted");
    const double dmin = std::abs(g.lo - p.lo);
    const double dmax = std::abs(g.hi - p.hi);
    return 1.0 - (dmax + dmin) / 2.0;
}

double ci_score(double s_c, double d_max, double d_a) {
    const double den = s_c + d_max + d_a;
    if (den == 0.0) return 0.0;
    return 3.0 * s_c * d_max * d_a / den;
}

double ci_harmonic_mean(double s_c, double d_max, double d_a) {
    const double den = s_c * d_max + d_max * d_a + d_a * s_c;
    if (den == 0.0) return 0.0;
    return 3.0 * s_c * d_max * d_a / den;
}

CIReport evaluate_pair(const MaskSet& preds, const MaskSet& gts, const MetricOptions& opt) {
    CIReport r;
    r.ged = ged(preds, gts, opt.ged);
    r.s_c = combined_sensitivity(preds, gts);
    r.d_max = max_dice_match(preds, gts);
    try {
        r.d_a = diversity_agreement(preds, gts, opt.dispersion);
    } catch (const UndefinedDispersionError&) {
        return r;
    }
    r.ci = ci_score(r.s_c, r.d_max, *r.d_a);
    r.ci_harmonic = ci_harmonic_mean(r.s_c, r.d_max, *r.d_a);
    return r;
}

TestsetReport evaluate_testset(const std::vector<MaskSet>& preds, const std::vector<MaskSet>& gts,
                               const std::vector<std::string>& image_ids, const MetricOptions& opt) {
    if (preds.size() != gts.size() || preds.size() != image_ids.size()) {
        throw std::invalid_argument("evaluate_testset: " + std::to_string(preds.size()) + " prediction sets, " +
                                    std::to_string(gts.size()) + " ground-truth sets, " +
                                    std::to_string(image_ids.size()) + " ids");
    }
    if (preds.empty()) throw std::invalid_argument("evaluate_testset: no images");
    TestsetReport out;
    double ged_sum = 0.0, sc_sum = 0.0, dmax_sum = 0.0, da_sum = 0.0, ci_sum = 0.0, hm_sum = 0.0;
    int defined = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        CIReport r = evaluate_pair(preds[i], gts[i], opt);
        ged_sum += r.ged;
        sc_sum += r.s_c;
        dmax_sum += r.d_max;
        if (r.d_a) {
            da_sum += *r.d_a;
            ci_sum += *r.ci;
            hm_sum += *r.ci_harmonic;
            ++defined;
        } else {
            ++out.undefined_d_a;
        }
        out.images.push_back({image_ids[i], r});
    }
    const double n = static_cast<double>(preds.size());
    out.mean.ged = ged_sum / n;
    out.mean.s_c = sc_sum / n;
    out.mean.d_max = dmax_sum / n;
    if (defined > 0) {
        out.mean.d_a = da_sum / defined;
        out.mean.ci = ci_sum / defined;
        out.mean.ci_harmonic = hm_sum / defined;
    }
    return out;
}

}  // namespace cimd
