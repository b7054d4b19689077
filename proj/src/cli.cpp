#include "cimd/cli.hpp"

#include "cimd/data.hpp"
#include "cimd/harness.hpp"
#include "cimd/image_io.hpp"
#include "cimd/plot.hpp"
#include "cimd/sampler.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace cimd {

namespace fs = std::filesystem;

namespace {

void write_json_file(const std::string& path, const nlohmann::json& j) {
    if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << j.dump(2) << '\n';
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

const AmbiguousSample& find_sample(const std::vector<AmbiguousSample>& data, const std::string& id) {
    for (const auto& s : data) {
        if (s.id == id) return s;
    }
    throw std::invalid_argument("no sample with id '" + id + "' in dataset");
}

TrainConfig config_with_overrides(const std::string& path, const std::vector<std::string>& overrides) {
    TrainConfig cfg = path.empty() ? TrainConfig{} : TrainConfig::load(path);
    for (const auto& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    cfg.validate();
    return cfg;
}

MetricOptions metric_options(const std::string& dispersion, bool distinct_pairs) {
    MetricOptions m;
    if (dispersion == "iou") m.dispersion = Dispersion::IouDistance;
    else if (dispersion == "pixel-variance") m.dispersion = Dispersion::PixelVariance;
    else throw std::invalid_argument("unknown dispersion '" + dispersion + "'");
    m.ged.include_self_pairs = !distinct_pairs;
    return m;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Ambiguous segmentation with conditional diffusion: data, training, sampling and evaluation"};
    app.name("cimd");
    app.require_subcommand(1);

    // generate-data
    SynthConfig synth;
    std::string rater_split = "independent";
    std::string data_out;
    auto* gen = app.add_subcommand("generate-data", "Write a synthetic multi-rater dataset");
    gen->add_option("--out", data_out, "Output directory")->required();
    gen->add_option("--image-size", synth.image_size, "Pixels per side")->capture_default_str();
    gen->add_option("--channels", synth.channels, "Image channels")->capture_default_str();
    gen->add_option("--num-raters", synth.num_raters, "Raters per image")->capture_default_str();
    gen->add_option("--blank-prob", synth.blank_prob, "Probability of an empty rater mask")->capture_default_str();
    gen->add_option("--rater-split", rater_split, "independent | balanced")->capture_default_str();
    gen->add_option("--boundary-jitter", synth.boundary_jitter, "Max rater dilation/erosion radius")->capture_default_str();
    gen->add_option("--noise-level", synth.noise_level, "Background texture amplitude")->capture_default_str();
    gen->add_option("--contrast", synth.contrast, "Blob intensity above background")->capture_default_str();
    gen->add_option("--count", synth.count, "Number of images")->capture_default_str();
    gen->add_option("--seed", synth.seed, "Random seed")->capture_default_str();

    // train
    std::string config_path, train_data, ckpt_out, log_path;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> train_seed;
    auto* tr = app.add_subcommand("train", "Train one model (mode set in the config)");
    tr->add_option("--config", config_path, "Flat key = value config file");
    tr->add_option("--data", train_data, "Dataset directory")->required();
    tr->add_option("--out", ckpt_out, "Checkpoint path")->required();
    tr->add_option("--log", log_path, "NDJSON training log");
    tr->add_option("--set", overrides, "Override a config key (key=value), repeatable");
    tr->add_option("--seed", train_seed, "Overrides the config seed");

    // sample
    std::string ckpt_in, sample_data, image_id, sample_out;
    int n = 4;
    std::uint64_t seed = 0;
    double threshold = 0.0;
    auto* sa = app.add_subcommand("sample", "Draw masks for one image");
    sa->add_option("--checkpoint", ckpt_in, "Checkpoint path")->required();
    sa->add_option("--data", sample_data, "Dataset directory")->required();
    sa->add_option("--image-id", image_id, "Image id (default: first image)");
    sa->add_option("--n", n, "Number of masks")->capture_default_str();
    sa->add_option("--seed", seed, "Random seed")->capture_default_str();
    sa->add_option("--threshold", threshold, "Binarisation threshold in [-1, 1] units")->capture_default_str();
    sa->add_option("--out", sample_out, "Output directory")->required();

    // evaluate
    std::string eval_data, report_out, dispersion = "iou";
    bool distinct_pairs = false;
    auto* ev = app.add_subcommand("evaluate", "Sample n masks per image and score them (GED, CI)");
    ev->add_option("--checkpoint", ckpt_in, "Checkpoint path")->required();
    ev->add_option("--data", eval_data, "Dataset directory")->required();
    ev->add_option("--n", n, "Samples per image")->capture_default_str();
    ev->add_option("--seed", seed, "Random seed")->capture_default_str();
    ev->add_option("--out", report_out, "JSON report path")->required();
    ev->add_option("--dispersion", dispersion, "iou | pixel-variance")->capture_default_str();
    ev->add_flag("--ged-distinct-pairs", distinct_pairs, "Exclude self-pairs from GED");

    // ablate
    std::string test_data;
    auto* ab = app.add_subcommand("ablate", "Train and compare the cimd, ddpm-prob-seg and ddpm-det-seg arms");
    ab->add_option("--config", config_path, "Base config file");
    ab->add_option("--train-data", train_data, "Training dataset directory")->required();
    ab->add_option("--test-data", test_data, "Test dataset directory")->required();
    ab->add_option("--set", overrides, "Override a config key (key=value), repeatable");
    ab->add_option("--n", n, "Samples per test image")->capture_default_str();
    ab->add_option("--seed", train_seed, "Overrides the config seed; evaluation uses seed + 1");
    ab->add_option("--out", report_out, "JSON report path")->required();

    // plot
    std::string plot_data, plot_out, ids_csv;
    PlotSpec spec;
    auto* pl = app.add_subcommand("plot", "Render input | ground truths | samples grids");
    pl->add_option("--data", plot_data, "Dataset directory")->required();
    pl->add_option("--checkpoint", ckpt_in, "Checkpoint (omit for ground truth only)");
    pl->add_option("--ids", ids_csv, "Comma-separated image ids (default: first 4)");
    pl->add_option("--n", n, "Sample columns")->capture_default_str();
    pl->add_option("--seed", seed, "Random seed")->capture_default_str();
    pl->add_option("--scale", spec.scale, "Pixels per mask pixel")->capture_default_str();
    pl->add_option("--out", plot_out, "Output PNG")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    try {
        if (*gen) {
            synth.rater_split = rater_split_from_string(rater_split);
            const auto samples = generate_synthetic(synth);
            save_dataset(data_out, samples, {{"generator", synth.to_json()}});
            out << "wrote " << samples.size() << " samples to " << data_out << '\n';
        } else if (*tr) {
            TrainConfig cfg = config_with_overrides(config_path, overrides);
            if (train_seed) cfg.seed = *train_seed;
            const auto data = load_dataset(train_data);
            std::ofstream log;
            TrainOptions opt;
            if (!log_path.empty()) {
                log.open(log_path);
                if (!log) throw std::runtime_error("cannot write " + log_path);
                opt.log = &log;
            }
            if (const auto parent = fs::path(ckpt_out).parent_path(); !parent.empty()) fs::create_directories(parent);
            opt.checkpoint_path = ckpt_out;
            const TrainResult r = train(cfg, data, opt);
            out << "trained " << cfg.steps << " steps (" << to_string(cfg.mode) << ")";
            if (!r.losses.empty()) out << ", final l_simple " << r.losses.back().l_simple;
            out << "; checkpoint " << ckpt_out << '\n';
        } else if (*sa) {
            const Checkpoint ckpt = load_checkpoint(ckpt_in);
            const auto data = load_dataset(sample_data);
            if (data.empty()) throw std::invalid_argument("dataset is empty");
            const AmbiguousSample& s = image_id.empty() ? data.front() : find_sample(data, image_id);
            const Model model(ckpt.model);
            const MaskSet masks = sample_masks(model, ckpt.params, SampleRequest{s.image, n, seed, threshold});
            fs::create_directories(sample_out);
            nlohmann::json files = nlohmann::json::array();
            for (std::size_t i = 0; i < masks.size(); ++i) {
                const Mask& m = masks.masks[i];
                GrayImage img{m.w, m.h, 8, {}};
                for (auto v : m.px) img.px.push_back(v ? 255 : 0);
                const std::string name = "sample_" + std::to_string(i) + ".png";
                write_png((fs::path(sample_out) / name).string(), img);
                files.push_back(name);
            }
            write_json_file((fs::path(sample_out) / "manifest.json").string(),
                            {{"schema_version", 1},
                             {"image_id", s.id},
                             {"seed", seed},
                             {"n", n},
                             {"threshold", threshold},
                             {"checkpoint_hash", file_hash(ckpt_in)},
                             {"files", files}});
            out << "wrote " << masks.size() << " masks to " << sample_out << '\n';
        } else if (*ev) {
            const Checkpoint ckpt = load_checkpoint(ckpt_in);
            const auto data = load_dataset(eval_data);
            const EvaluationResult r = evaluate_checkpoint(ckpt, data, n, seed, metric_options(dispersion, distinct_pairs));
            nlohmann::json j = report_to_json(r.report);
            j["n"] = n;
            j["seed"] = seed;
            j["checkpoint_hash"] = file_hash(ckpt_in);
            j["blank_fraction"] = blank_fraction(r.predictions);
            write_json_file(report_out, j);
            out << "ged " << r.report.mean.ged << ", ci "
                << (r.report.mean.ci ? std::to_string(*r.report.mean.ci) : std::string("undefined")) << '\n';
        } else if (*ab) {
            TrainConfig cfg = config_with_overrides(config_path, overrides);
            if (train_seed) cfg.seed = *train_seed;
            const auto train_set = load_dataset(train_data);
            const auto test_set = load_dataset(test_data);
            AblationOptions opt;
            opt.n = n;
            opt.eval_seed = cfg.seed + 1;
            opt.progress = [&](const std::string& msg) { err << msg << '\n'; };
            const AblationReport r = run_ablation(train_set, test_set, cfg, opt);
            nlohmann::json j = ablation_to_json(r);
            j["base_config"] = cfg.to_json();
            j["n"] = n;
            write_json_file(report_out, j);
            for (const auto& arm : j["arms"]) out << arm["rank"] << ". " << arm["arm"].get<std::string>() << "  ci " << arm["ci"] << "  ged " << arm["ged"] << '\n';
        } else if (*pl) {
            const auto data = load_dataset(plot_data);
            std::vector<std::string> ids = split_csv(ids_csv);
            if (ids.empty()) {
                for (std::size_t i = 0; i < data.size() && i < 4; ++i) ids.push_back(data[i].id);
            }
            std::optional<Checkpoint> ckpt;
            std::optional<Model> model;
            if (!ckpt_in.empty()) {
                ckpt = load_checkpoint(ckpt_in);
                model.emplace(ckpt->model);
            }
            std::vector<PlotRow> rows;
            int max_gts = 0;
            for (std::size_t r = 0; r < ids.size(); ++r) {
                const AmbiguousSample& s = find_sample(data, ids[r]);
                PlotRow row{s.id, s.image, s.raters, {}};
                if (model) {
                    row.samples = sample_masks(*model, ckpt->params, SampleRequest{s.image, n, splitmix64(seed ^ splitmix64(r + 1)), 0.0}).masks;
                }
                max_gts = std::max(max_gts, static_cast<int>(s.raters.size()));
                rows.push_back(std::move(row));
            }
            spec.gt_columns = max_gts;
            spec.sample_columns = model ? n : 0;
            if (const auto parent = fs::path(plot_out).parent_path(); !parent.empty()) fs::create_directories(parent);
            render_plot(plot_out, rows, spec);
            out << "wrote " << plot_out << '\n';
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

}  // namespace cimd
