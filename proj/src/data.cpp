#include "cimd/data.hpp"

#include "cimd/image_io.hpp"
#include "cimd/params.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace cimd {

namespace fs = std::filesystem;

namespace {

constexpr int kMaxAttempts = 1000;

Mask render_ellipse(int size, double cx, double cy, double ax, double by, double angle) {
    Mask m(size, size);
    const double c = std::cos(angle), s = std::sin(angle);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
            const double u = (dx * c + dy * s) / ax;
            const double v = (-dx * s + dy * c) / by;
            m.px[static_cast<std::size_t>(y) * size + x] = u * u + v * v <= 1.0 ? 1 : 0;
        }
    }
    return m;
}

bool touches_border(const Mask& m) {
    for (int y = 0; y < m.h; ++y) {
        for (int x = 0; x < m.w; ++x) {
            if (m.px[static_cast<std::size_t>(y) * m.w + x] && (x == 0 || y == 0 || x == m.w - 1 || y == m.h - 1)) {
                return true;
            }
        }
    }
    return false;
}

// Smooth zero-mean texture: white noise blurred twice with a 3x3 box, rescaled to unit std.
std::vector<double> texture(int size, std::mt19937_64& rng) {
    std::vector<double> a(static_cast<std::size_t>(size) * size);
    fill_normal(a, rng);
    for (int pass = 0; pass < 2; ++pass) {
        std::vector<double> b(a.size(), 0.0);
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                double acc = 0.0;
                int n = 0;
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int yy = y + dy, xx = x + dx;
                        if (yy < 0 || xx < 0 || yy >= size || xx >= size) continue;
                        acc += a[static_cast<std::size_t>(yy) * size + xx];
                        ++n;
                    }
                }
                b[static_cast<std::size_t>(y) * size + x] = acc / n;
            }
        }
        a.swap(b);
    }
    double mean = 0.0, sq = 0.0;
    for (double v : a) mean += v;
    mean /= static_cast<double>(a.size());
    for (double v : a) sq += (v - mean) * (v - mean);
    const double sd = std::sqrt(sq / static_cast<double>(a.size()));
    for (double& v : a) v = sd > 0.0 ? (v - mean) / sd : 0.0;
    return a;
}

Mask morph(const Mask& m, int radius, bool grow) {
    Mask out(m.h, m.w);
    const int r2 = radius * radius;
    for (int y = 0; y < m.h; ++y) {
        for (int x = 0; x < m.w; ++x) {
            bool hit = !grow;
            for (int dy = -radius; dy <= radius && hit != grow; ++dy) {
                for (int dx = -radius; dx <= radius; ++dx) {
                    if (dx * dx + dy * dy > r2) continue;
                    const int yy = y + dy, xx = x + dx;
                    const bool inside = yy >= 0 && xx >= 0 && yy < m.h && xx < m.w;
                    const bool on = inside && m.px[static_cast<std::size_t>(yy) * m.w + xx];
                    if (grow && on) {
                        hit = true;
                        break;
                    }
                    if (!grow && !on) {
                        hit = false;
                        break;
                    }
                }
            }
            out.px[static_cast<std::size_t>(y) * m.w + x] = hit ? 1 : 0;
        }
    }
    return out;
}

nlohmann::json read_json(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw std::runtime_error("missing " + p.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("malformed JSON in " + p.string() + ": " + e.what());
    }
}

void write_json(const fs::path& p, const nlohmann::json& j) {
    std::ofstream out(p);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << j.dump(2) << '\n';
}

}  // namespace

std::string to_string(RaterSplit s) { return s == RaterSplit::Balanced ? "balanced" : "independent"; }

RaterSplit rater_split_from_string(const std::string& s) {
    if (s == "independent") return RaterSplit::Independent;
    if (s == "balanced") return RaterSplit::Balanced;
    throw std::invalid_argument("unknown rater split '" + s + "' (expected independent or balanced)");
}

std::string to_string(RaterView v) {
    switch (v) {
        case RaterView::AllRaters: return "all-raters";
        case RaterView::RandomRater: return "random-rater";
        case RaterView::Averaged: return "averaged";
    }
    return "?";
}

void SynthConfig::validate() const {
    if (image_size < 8) throw std::invalid_argument("SynthConfig: image_size must be >= 8");
    if (channels < 1) throw std::invalid_argument("SynthConfig: channels must be >= 1");
    if (num_raters < 1) throw std::invalid_argument("SynthConfig: num_raters must be >= 1");
    if (!(blank_prob >= 0.0 && blank_prob <= 1.0)) throw std::invalid_argument("SynthConfig: blank_prob must be in [0, 1]");
    if (boundary_jitter < 0) throw std::invalid_argument("SynthConfig: boundary_jitter must be >= 0");
    if (boundary_jitter > image_size / 8) throw std::invalid_argument("SynthConfig: boundary_jitter too large for image");
    if (!(noise_level >= 0.0)) throw std::invalid_argument("SynthConfig: noise_level must be >= 0");
    if (count < 0) throw std::invalid_argument("SynthConfig: count must be >= 0");
}

nlohmann::json SynthConfig::to_json() const {
    return {{"image_size", image_size},     {"channels", channels},       {"num_raters", num_raters},
            {"blank_prob", blank_prob},     {"rater_split", to_string(rater_split)},
            {"boundary_jitter", boundary_jitter}, {"noise_level", noise_level}, {"contrast", contrast},
            {"count", count},               {"seed", seed}};
}

Mask dilate(const Mask& m, int radius) {
    if (radius < 0) throw std::invalid_argument("dilate: negative radius");
    return radius == 0 ? m : morph(m, radius, true);
}

Mask erode(const Mask& m, int radius) {
    if (radius < 0) throw std::invalid_argument("erode: negative radius");
    return radius == 0 ? m : morph(m, radius, false);
}

std::vector<AmbiguousSample> generate_synthetic(const SynthConfig& cfg) {
    cfg.validate();
    const int S = cfg.image_size;
    const int J = cfg.boundary_jitter;
    std::vector<AmbiguousSample> out;
    out.reserve(cfg.count);
    for (int idx = 0; idx < cfg.count; ++idx) {
        std::mt19937_64 rng = make_rng(cfg.seed, 0xda7a, static_cast<std::uint64_t>(idx));
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        Mask blob;
        double cx = 0, cy = 0, ax = 0, by = 0, angle = 0;
        int attempt = 0;
        for (;; ++attempt) {
            if (attempt == kMaxAttempts) throw std::logic_error("generate_synthetic: no valid blob geometry");
            cx = S * unit(rng);
            cy = S * unit(rng);
            ax = S * (0.12 + 0.18 * unit(rng));
            by = S * (0.12 + 0.18 * unit(rng));
            angle = std::numbers::pi * unit(rng);
            blob = render_ellipse(S, cx, cy, ax, by, angle);
            if (blob.empty_mask() || erode(blob, J).empty_mask() || touches_border(dilate(blob, J))) continue;
            break;
        }

        AmbiguousSample s;
        char id[32];
        std::snprintf(id, sizeof id, "s%05d", idx);
        s.id = id;
        s.image = Tensor(1, cfg.channels, S, S);
        for (int c = 0; c < cfg.channels; ++c) {
            const std::vector<double> tex = texture(S, rng);
            auto plane = s.image.channel(0, c);
            for (std::size_t p = 0; p < plane.size(); ++p) {
                const double v = std::clamp(-0.5 + cfg.noise_level * tex[p] + cfg.contrast * blob.px[p], -1.0, 1.0);
                // Snap to the 16-bit grid used on disk so saved and in-memory datasets agree exactly.
                plane[p] = static_cast<double>(std::lround((v + 1.0) / 2.0 * 65535.0)) / 65535.0 * 2.0 - 1.0;
            }
        }

        const int M = cfg.num_raters;
        std::vector<bool> blank(M, false);
        if (cfg.rater_split == RaterSplit::Independent) {
            for (int k = 0; k < M; ++k) blank[k] = unit(rng) < cfg.blank_prob;
        } else {
            const int nb = static_cast<int>(std::lround(M * cfg.blank_prob));
            for (int k = 0; k < nb; ++k) blank[k] = true;
            // Fisher-Yates with our own draws so the order does not depend on the std library.
            for (int k = M - 1; k > 0; --k) {
                const int j = static_cast<int>(unit(rng) * (k + 1));
                const bool tmp = blank[k];
                blank[k] = blank[j];
                blank[j] = tmp;
            }
        }
        std::vector<int> radii(M, 0);
        for (int k = 0; k < M; ++k) {
            const int r = std::min(J, static_cast<int>(unit(rng) * (2 * J + 1)) - J);
            radii[k] = r;
            if (blank[k]) {
                s.raters.emplace_back(S, S);
            } else {
                s.raters.push_back(r > 0 ? dilate(blob, r) : erode(blob, -r));
            }
        }
        s.meta = {{"seed", cfg.seed},       {"index", idx},          {"image_size", S},
                  {"channels", cfg.channels}, {"num_raters", M},      {"center", {cx, cy}},
                  {"axes", {ax, by}},       {"angle", angle},        {"radii", radii},
                  {"blank", blank},         {"attempts", attempt + 1}};
        out.push_back(std::move(s));
    }
    return out;
}

Mask averaged_mask(const std::vector<Mask>& raters) {
    if (raters.empty()) throw std::invalid_argument("averaged_mask: no raters");
    Mask out(raters.front().h, raters.front().w);
    const double m = static_cast<double>(raters.size());
    for (std::size_t p = 0; p < out.px.size(); ++p) {
        double acc = 0.0;
        for (const Mask& r : raters) acc += r.px[p];
        out.px[p] = acc / m > 0.5 ? 1 : 0;
    }
    return out;
}

std::pair<Tensor, Tensor> rater_view(const AmbiguousSample& s, RaterView mode, std::mt19937_64& rng) {
    switch (mode) {
        case RaterView::Averaged: return {s.image, averaged_mask(s.raters).to_signed()};
        case RaterView::RandomRater: {
            std::uniform_int_distribution<std::size_t> pick(0, s.raters.size() - 1);
            return {s.image, s.raters[pick(rng)].to_signed()};
        }
        case RaterView::AllRaters: break;
    }
    throw std::invalid_argument("rater_view: all-raters yields several pairs, use all_rater_views");
}

std::vector<std::pair<Tensor, Tensor>> all_rater_views(const AmbiguousSample& s) {
    std::vector<std::pair<Tensor, Tensor>> out;
    for (const Mask& m : s.raters) out.emplace_back(s.image, m.to_signed());
    return out;
}

MaskSet ground_truth_set(const AmbiguousSample& s) {
    MaskSet g;
    g.masks = s.raters;
    g.role = MaskRole::GroundTruth;
    return g;
}

void save_dataset(const std::string& root, const std::vector<AmbiguousSample>& samples, const nlohmann::json& dataset_meta) {
    fs::create_directories(root);
    nlohmann::json ids = nlohmann::json::array();
    for (const AmbiguousSample& s : samples) {
        const fs::path dir = fs::path(root) / s.id;
        fs::create_directories(dir);
        const int C = s.image.shape.c, H = s.image.shape.h, W = s.image.shape.w;
        GrayImage img{W, H * C, 16, {}};
        img.px.resize(static_cast<std::size_t>(W) * H * C);
        for (std::size_t i = 0; i < img.px.size(); ++i) {
            const double v = std::clamp(s.image.data[i], -1.0, 1.0);
            img.px[i] = static_cast<std::uint16_t>(std::lround((v + 1.0) / 2.0 * 65535.0));
        }
        write_png((dir / "image.png").string(), img);
        for (std::size_t k = 0; k < s.raters.size(); ++k) {
            const Mask& m = s.raters[k];
            GrayImage mi{m.w, m.h, 8, {}};
            mi.px.resize(m.px.size());
            for (std::size_t i = 0; i < m.px.size(); ++i) mi.px[i] = m.px[i] ? 255 : 0;
            write_png((dir / ("mask_r" + std::to_string(k) + ".png")).string(), mi);
        }
        nlohmann::json meta = s.meta;
        meta["channels"] = C;
        meta["num_raters"] = s.raters.size();
        write_json(dir / "meta.json", meta);
        ids.push_back(s.id);
    }
    nlohmann::json top = dataset_meta;
    top["format_version"] = 1;
    top["count"] = samples.size();
    top["ids"] = ids;
    write_json(fs::path(root) / "dataset.json", top);
}

std::vector<AmbiguousSample> load_dataset(const std::string& root) {
    if (!fs::is_directory(root)) throw std::runtime_error("dataset root is not a directory: " + root);
    std::vector<std::string> ids;
    const fs::path index = fs::path(root) / "dataset.json";
    if (fs::exists(index)) {
        const nlohmann::json top = read_json(index);
        if (!top.contains("ids") || !top["ids"].is_array()) throw std::runtime_error(index.string() + ": missing ids list");
        for (const auto& id : top["ids"]) ids.push_back(id.get<std::string>());
    } else {
        for (const auto& e : fs::directory_iterator(root)) {
            if (e.is_directory()) ids.push_back(e.path().filename().string());
        }
        std::sort(ids.begin(), ids.end());
    }

    std::vector<AmbiguousSample> out;
    out.reserve(ids.size());
    for (const std::string& id : ids) {
        const fs::path dir = fs::path(root) / id;
        AmbiguousSample s;
        s.id = id;
        s.meta = read_json(dir / "meta.json");
        const int C = s.meta.value("channels", 1);
        const fs::path img_path = dir / "image.png";
        if (!fs::exists(img_path)) throw std::runtime_error("missing " + img_path.string());
        const GrayImage img = read_png(img_path.string());
        if (C < 1 || img.height % C != 0) throw std::runtime_error(img_path.string() + ": height not divisible by channels");
        const int H = img.height / C, W = img.width;
        const double scale = img.bit_depth == 16 ? 65535.0 : 255.0;
        s.image = Tensor(1, C, H, W);
        for (std::size_t i = 0; i < img.px.size(); ++i) s.image.data[i] = img.px[i] / scale * 2.0 - 1.0;

        int M = -1;
        if (s.meta.contains("num_raters")) M = s.meta["num_raters"].get<int>();
        for (int k = 0; M < 0 || k < M; ++k) {
            const fs::path mp = dir / ("mask_r" + std::to_string(k) + ".png");
            if (!fs::exists(mp)) {
                if (M < 0) break;
                throw std::runtime_error("missing rater mask " + mp.filename().string() + " in " + dir.string());
            }
            const GrayImage mi = read_png(mp.string());
            if (mi.width != W || mi.height != H) throw std::runtime_error(mp.string() + ": size differs from image");
            Mask m(H, W);
            for (std::size_t i = 0; i < mi.px.size(); ++i) {
                if (mi.px[i] != 0 && mi.px[i] != (mi.bit_depth == 16 ? 65535 : 255) && mi.px[i] != 1) {
                    throw std::runtime_error(mp.string() + ": mask is not binary");
                }
                m.px[i] = mi.px[i] != 0 ? 1 : 0;
            }
            s.raters.push_back(std::move(m));
        }
        if (s.raters.empty()) throw std::runtime_error("missing rater mask mask_r0.png in " + dir.string());
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace cimd
