#pragma once

#include "cimd/metrics.hpp"
#include "cimd/tensor.hpp"

#include <string>
#include <vector>

namespace cimd {

// One grid row: input image, then ground truths, then samples.
struct PlotRow {
    std::string image_id;
    Tensor image;  // (1, C, H, W); the first channel is drawn
    std::vector<Mask> gts;
    std::vector<Mask> samples;
};

struct PlotSpec {
    bool show_input = true;
    int gt_columns = 4;      // blank cells when a row has fewer
    int sample_columns = 4;
    int scale = 8;           // pixels per mask pixel
    int gap = 2;

    int columns() const { return (show_input ? 1 : 0) + gt_columns + sample_columns; }
    void validate() const;
};

// Writes an RGB PNG grid.
void render_plot(const std::string& path, const std::vector<PlotRow>& rows, const PlotSpec& spec);

}  // namespace cimd
