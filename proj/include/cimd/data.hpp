#pragma once

#include "cimd/metrics.hpp"
#include "cimd/tensor.hpp"

#include <json.hpp>

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace cimd {

struct AmbiguousSample {
    std::string id;
    Tensor image;              // (1, C, H, W) in [-1, 1]
    std::vector<Mask> raters;  // M aligned binary masks
    nlohmann::json meta;       // generator parameters for this sample
};

enum class RaterSplit {
    Independent,  // each rater blank with probability blank_prob
    Balanced,     // exactly round(M * blank_prob) blank raters per image, positions shuffled
};

std::string to_string(RaterSplit s);
RaterSplit rater_split_from_string(const std::string& s);

struct SynthConfig {
    int image_size = 16;
    int channels = 1;
    int num_raters = 4;
    double blank_prob = 0.5;
    RaterSplit rater_split = RaterSplit::Independent;
    int boundary_jitter = 1;  // rater radius drawn from [-J, J]; negative erodes, positive dilates
    double noise_level = 0.15;
    double contrast = 0.6;
    int count = 100;
    std::uint64_t seed = 0;

    void validate() const;
    nlohmann::json to_json() const;
};

// Pure function of cfg: the same config yields the same samples bit for bit.
std::vector<AmbiguousSample> generate_synthetic(const SynthConfig& cfg);

// Morphology with a Euclidean disk of the given radius; pixels outside the canvas count
// as background.
Mask dilate(const Mask& m, int radius);
Mask erode(const Mask& m, int radius);

enum class RaterView { AllRaters, RandomRater, Averaged };

std::string to_string(RaterView v);

// Pixel-wise rater mean, foreground only where the mean is strictly greater than 0.5.
Mask averaged_mask(const std::vector<Mask>& raters);

// (b, training mask in {-1, +1}). RandomRater draws one rater uniformly from rng;
// Averaged ignores rng. AllRaters is rejected here; use all_rater_views.
std::pair<Tensor, Tensor> rater_view(const AmbiguousSample& s, RaterView mode, std::mt19937_64& rng);
std::vector<std::pair<Tensor, Tensor>> all_rater_views(const AmbiguousSample& s);

// Ground-truth MaskSet for evaluation.
MaskSet ground_truth_set(const AmbiguousSample& s);

// <root>/<id>/image.png (16-bit gray, channels stacked vertically), mask_r{k}.png (8-bit,
// k from 0), meta.json; plus <root>/dataset.json listing ids.
void save_dataset(const std::string& root, const std::vector<AmbiguousSample>& samples,
                  const nlohmann::json& dataset_meta = nlohmann::json::object());
std::vector<AmbiguousSample> load_dataset(const std::string& root);

}  // namespace cimd
