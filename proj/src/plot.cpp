#include "cimd/plot.hpp"

#include "cimd/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cimd {

namespace {

constexpr std::uint8_t kGapShade = 96;
constexpr std::uint8_t kEmptyCell = 40;

struct Canvas {
    int w, h;
    std::vector<std::uint8_t> rgb;

    void put(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
        const std::size_t i = (static_cast<std::size_t>(y) * w + x) * 3;
        rgb[i] = r;
        rgb[i + 1] = g;
        rgb[i + 2] = b;
    }
};

}  // namespace

void PlotSpec::validate() const {
    if (columns() < 1) throw std::invalid_argument("PlotSpec: at least one column is required");
    if (gt_columns < 0 || sample_columns < 0) throw std::invalid_argument("PlotSpec: negative column count");
    if (scale < 1 || gap < 0) throw std::invalid_argument("PlotSpec: bad scale or gap");
}

void render_plot(const std::string& path, const std::vector<PlotRow>& rows, const PlotSpec& spec) {
    spec.validate();
    if (rows.empty()) throw std::invalid_argument("render_plot: no rows");
    const int ih = rows.front().image.shape.h, iw = rows.front().image.shape.w;
    const int cw = iw * spec.scale, ch = ih * spec.scale;
    const int cols = spec.columns();
    Canvas c{cols * cw + (cols + 1) * spec.gap, static_cast<int>(rows.size()) * ch + (static_cast<int>(rows.size()) + 1) * spec.gap, {}};
    c.rgb.assign(static_cast<std::size_t>(c.w) * c.h * 3, kGapShade);

    auto cell_origin = [&](int row, int col) {
        return std::pair{spec.gap + col * (cw + spec.gap), spec.gap + row * (ch + spec.gap)};
    };
    auto draw = [&](int row, int col, auto&& value_at) {
        const auto [x0, y0] = cell_origin(row, col);
        for (int y = 0; y < ch; ++y) {
            for (int x = 0; x < cw; ++x) {
                const std::uint8_t v = value_at(y / spec.scale, x / spec.scale);
                c.put(x0 + x, y0 + y, v, v, v);
            }
        }
    };
    auto draw_mask = [&](int row, int col, const Mask* m) {
        if (m == nullptr) {
            draw(row, col, [](int, int) { return kEmptyCell; });
            return;
        }
        if (m->h != ih || m->w != iw) throw std::invalid_argument("render_plot: mask size differs from image");
        draw(row, col, [&](int y, int x) { return static_cast<std::uint8_t>(m->px[static_cast<std::size_t>(y) * iw + x] ? 255 : 0); });
    };

    for (std::size_t r = 0; r < rows.size(); ++r) {
        const PlotRow& pr = rows[r];
        if (pr.image.shape.h != ih || pr.image.shape.w != iw) throw std::invalid_argument("render_plot: rows differ in size");
        const int row = static_cast<int>(r);
        int col = 0;
        if (spec.show_input) {
            const auto plane = pr.image.channel(0, 0);
            draw(row, col++, [&](int y, int x) {
                const double v = std::clamp(plane[static_cast<std::size_t>(y) * iw + x], -1.0, 1.0);
                return static_cast<std::uint8_t>(std::lround((v + 1.0) * 127.5));
            });
        }
        for (int k = 0; k < spec.gt_columns; ++k) {
            draw_mask(row, col++, k < static_cast<int>(pr.gts.size()) ? &pr.gts[k] : nullptr);
        }
        for (int k = 0; k < spec.sample_columns; ++k) {
            draw_mask(row, col++, k < static_cast<int>(pr.samples.size()) ? &pr.samples[k] : nullptr);
        }
    }
    write_png_rgb(path, c.w, c.h, c.rgb);
}

}  // namespace cimd
