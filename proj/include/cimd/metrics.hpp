#pragma once

#include "cimd/tensor.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cimd {

// Binary mask, row-major, values exactly 0 or 1.
struct Mask {
    int h = 0;
    int w = 0;
    std::vector<std::uint8_t> px;

    Mask() = default;
    Mask(int h_, int w_) : h(h_), w(w_), px(static_cast<std::size_t>(h_) * w_, 0) {}

    std::size_t size() const { return px.size(); }
    std::size_t count() const;
    bool empty_mask() const { return count() == 0; }
    bool operator==(const Mask&) const = default;

    // Throws std::invalid_argument on any value other than 0 or 1.
    void validate() const;

    // Pixel-wise `value > threshold` over a single-channel plane.
    static Mask threshold(std::span<const double> plane, int h, int w, double threshold);
    // {0, 1} -> {-1, +1} as a (1, 1, H, W) tensor.
    Tensor to_signed() const;
};

enum class MaskRole { GroundTruth, Prediction };

struct MaskSet {
    std::vector<Mask> masks;
    MaskRole role = MaskRole::Prediction;

    std::size_t size() const { return masks.size(); }
    // Nonempty, uniform shape, strictly binary.
    void validate() const;
};

double iou(const Mask& a, const Mask& b);
double dice(const Mask& a, const Mask& b);

struct GedOptions {
    // true: mean over all ordered pairs including (i, i). false: distinct pairs only, which
    // needs at least two masks per set.
    bool include_self_pairs = true;
};

double ged(const MaskSet& preds, const MaskSet& gts, const GedOptions& opt = {});

double combined_sensitivity(const MaskSet& preds, const MaskSet& gts);
double max_dice_match(const MaskSet& preds, const MaskSet& gts);

enum class Dispersion {
    IouDistance,    // 1 - IoU(a, b)
    PixelVariance,  // mean over pixels of the two-sample variance, i.e. differing fraction / 4
};

double pair_dispersion(const Mask& a, const Mask& b, Dispersion kind);
// Throws UndefinedDispersionError if either set has fewer than two masks.
double diversity_agreement(const MaskSet& preds, const MaskSet& gts, Dispersion kind = Dispersion::IouDistance);

// 3abc / (a + b + c), 0 when the denominator is 0.
double ci_score(double s_c, double d_max, double d_a);
// 3abc / (ab + bc + ca), 0 when the denominator is 0. Diagnostic only.
double ci_harmonic_mean(double s_c, double d_max, double d_a);

struct MetricOptions {
    GedOptions ged;
    Dispersion dispersion = Dispersion::IouDistance;
};

struct CIReport {
    double ged = 0.0;
    double s_c = 0.0;
    double d_max = 0.0;
    // Absent when a set has fewer than two masks; ci is then absent as well.
    std::optional<double> d_a;
    std::optional<double> ci;
    std::optional<double> ci_harmonic;
};

CIReport evaluate_pair(const MaskSet& preds, const MaskSet& gts, const MetricOptions& opt = {});

struct ImageReport {
    std::string image_id;
    CIReport report;
};

struct TestsetReport {
    std::vector<ImageReport> images;
    CIReport mean;  // d_a / ci averaged over the images where they are defined
    int undefined_d_a = 0;
};

TestsetReport evaluate_testset(const std::vector<MaskSet>& preds, const std::vector<MaskSet>& gts,
                               const std::vector<std::string>& image_ids, const MetricOptions& opt = {});

}  // namespace cimd
