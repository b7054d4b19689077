#include "cimd/harness.hpp"

#include "cimd/errors.hpp"
#include "cimd/sampler.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace cimd {

namespace {

constexpr char kMagic[8] = {'C', 'I', 'M', 'D', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double out = 0.0;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != v.size()) throw std::invalid_argument("config key '" + key + "': not a number: '" + v + "'");
    return out;
}

long long parse_int(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    long long out = 0;
    try {
        out = std::stoll(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != v.size()) throw std::invalid_argument("config key '" + key + "': not an integer: '" + v + "'");
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw std::invalid_argument("config key '" + key + "': not a boolean: '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(static_cast<int>(parse_int(key, trim(item))));
    if (out.empty()) throw std::invalid_argument("config key '" + key + "': empty list");
    return out;
}

template <typename T>
void put_le(std::ostream& out, T value) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& in, const std::string& path) {
    unsigned char bytes[sizeof(T)];
    if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw std::runtime_error("truncated checkpoint: " + path);
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    return value;
}

nlohmann::json loss_json(int step, const LossReport& r) {
    return {{"step", step}, {"l_simple", r.l_simple}, {"l_vlb", r.l_vlb}, {"l_amb", r.l_amb}, {"total", r.total}};
}

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

nlohmann::json ci_json(const CIReport& r) {
    return {{"ged", r.ged},
            {"s_c", r.s_c},
            {"d_max", r.d_max},
            {"d_a", optional_json(r.d_a)},
            {"ci", optional_json(r.ci)},
            {"ci_harmonic_mean", optional_json(r.ci_harmonic)}};
}

}  // namespace

std::string to_string(TrainMode m) {
    switch (m) {
        case TrainMode::Cimd: return "cimd";
        case TrainMode::DdpmDetSeg: return "ddpm-det-seg";
        case TrainMode::DdpmProbSeg: return "ddpm-prob-seg";
    }
    return "?";
}

TrainMode train_mode_from_string(const std::string& s) {
    if (s == "cimd") return TrainMode::Cimd;
    if (s == "ddpm-det-seg") return TrainMode::DdpmDetSeg;
    if (s == "ddpm-prob-seg") return TrainMode::DdpmProbSeg;
    throw std::invalid_argument("unknown mode '" + s + "' (expected cimd, ddpm-det-seg or ddpm-prob-seg)");
}

void TrainConfig::validate() const {
    if (T < 1) throw std::invalid_argument("TrainConfig: T must be >= 1");
    weights.validate();
    if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (steps < 0) throw std::invalid_argument("TrainConfig: steps must be >= 0");
    if (eval_samples < 1) throw std::invalid_argument("TrainConfig: eval_samples must be >= 1");
    if (checkpoint_every < 0) throw std::invalid_argument("TrainConfig: checkpoint_every must be >= 0");
    if (log_every < 1) throw std::invalid_argument("TrainConfig: log_every must be >= 1");
    if (freeze_offdiag && covariance_mode != CovarianceMode::Full) {
        throw std::invalid_argument("TrainConfig: freeze_offdiag requires covariance_mode = full");
    }
}

LossWeights TrainConfig::effective_weights() const {
    LossWeights w = weights;
    if (mode != TrainMode::Cimd) w.beta = 0.0;
    return w;
}

ModelConfig TrainConfig::model_config(int image_size, int prior_channels) const {
    ModelConfig m;
    m.T = T;
    m.schedule = {beta_start, beta_end, schedule_rescale};
    m.denoiser.image_size = image_size;
    m.denoiser.base_channels = base_channels;
    m.denoiser.channel_multipliers = channel_multipliers;
    m.denoiser.prior_channels = prior_channels;
    m.denoiser.time_embed_dim = time_embed_dim;
    m.ambiguity.filters = amb_filters;
    m.ambiguity.latent_dim = latent_dim;
    m.ambiguity.covariance_mode = covariance_mode;
    m.ambiguity.prior_channels = prior_channels;
    m.use_ambiguity = mode == TrainMode::Cimd;
    m.validate();
    return m;
}

nlohmann::json TrainConfig::to_json() const {
    return {{"mode", to_string(mode)},
            {"T", T},
            {"beta_start", beta_start},
            {"beta_end", beta_end},
            {"schedule_rescale", schedule_rescale},
            {"lambda", weights.lambda},
            {"beta", weights.beta},
            {"learning_rate", learning_rate},
            {"batch_size", batch_size},
            {"steps", steps},
            {"seed", seed},
            {"covariance_mode", to_string(covariance_mode)},
            {"freeze_offdiag", freeze_offdiag},
            {"eval_samples", eval_samples},
            {"checkpoint_every", checkpoint_every},
            {"log_every", log_every},
            {"latent_dim", latent_dim},
            {"amb_filters", amb_filters},
            {"base_channels", base_channels},
            {"channel_multipliers", channel_multipliers},
            {"time_embed_dim", time_embed_dim}};
}

void TrainConfig::set(const std::string& key, const std::string& value) {
    const std::string v = trim(value);
    if (key == "mode") mode = train_mode_from_string(v);
    else if (key == "T") T = static_cast<int>(parse_int(key, v));
    else if (key == "beta_start") beta_start = parse_double(key, v);
    else if (key == "beta_end") beta_end = parse_double(key, v);
    else if (key == "schedule_rescale") schedule_rescale = parse_bool(key, v);
    else if (key == "lambda") weights.lambda = parse_double(key, v);
    else if (key == "beta") weights.beta = parse_double(key, v);
    else if (key == "learning_rate") learning_rate = parse_double(key, v);
    else if (key == "batch_size") batch_size = static_cast<int>(parse_int(key, v));
    else if (key == "steps") steps = static_cast<int>(parse_int(key, v));
    else if (key == "seed") seed = static_cast<std::uint64_t>(parse_int(key, v));
    else if (key == "covariance_mode") covariance_mode = covariance_mode_from_string(v);
    else if (key == "freeze_offdiag") freeze_offdiag = parse_bool(key, v);
    else if (key == "eval_samples") eval_samples = static_cast<int>(parse_int(key, v));
    else if (key == "checkpoint_every") checkpoint_every = static_cast<int>(parse_int(key, v));
    else if (key == "log_every") log_every = static_cast<int>(parse_int(key, v));
    else if (key == "latent_dim") latent_dim = static_cast<int>(parse_int(key, v));
    else if (key == "amb_filters") amb_filters = parse_int_list(key, v);
    else if (key == "base_channels") base_channels = static_cast<int>(parse_int(key, v));
    else if (key == "channel_multipliers") channel_multipliers = parse_int_list(key, v);
    else if (key == "time_embed_dim") time_embed_dim = static_cast<int>(parse_int(key, v));
    else throw std::invalid_argument("unknown config key '" + key + "'");
}

TrainConfig TrainConfig::parse(const std::string& text) {
    TrainConfig cfg;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
        cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
    }
    cfg.validate();
    return cfg;
}

TrainConfig TrainConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

nlohmann::json model_config_to_json(const ModelConfig& c) {
    return {{"T", c.T},
            {"schedule", {{"beta_start", c.schedule.beta_start}, {"beta_end", c.schedule.beta_end}, {"rescale", c.schedule.rescale}}},
            {"denoiser",
             {{"image_size", c.denoiser.image_size},
              {"base_channels", c.denoiser.base_channels},
              {"channel_multipliers", c.denoiser.channel_multipliers},
              {"prior_channels", c.denoiser.prior_channels},
              {"time_embed_dim", c.denoiser.time_embed_dim}}},
            {"ambiguity",
             {{"filters", c.ambiguity.filters},
              {"latent_dim", c.ambiguity.latent_dim},
              {"covariance_mode", to_string(c.ambiguity.covariance_mode)},
              {"prior_channels", c.ambiguity.prior_channels}}},
            {"use_ambiguity", c.use_ambiguity}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    try {
        ModelConfig c;
        c.T = j.at("T").get<int>();
        c.schedule.beta_start = j.at("schedule").at("beta_start").get<double>();
        c.schedule.beta_end = j.at("schedule").at("beta_end").get<double>();
        c.schedule.rescale = j.at("schedule").at("rescale").get<bool>();
        const auto& d = j.at("denoiser");
        c.denoiser.image_size = d.at("image_size").get<int>();
        c.denoiser.base_channels = d.at("base_channels").get<int>();
        c.denoiser.channel_multipliers = d.at("channel_multipliers").get<std::vector<int>>();
        c.denoiser.prior_channels = d.at("prior_channels").get<int>();
        c.denoiser.time_embed_dim = d.at("time_embed_dim").get<int>();
        const auto& a = j.at("ambiguity");
        c.ambiguity.filters = a.at("filters").get<std::vector<int>>();
        c.ambiguity.latent_dim = a.at("latent_dim").get<int>();
        c.ambiguity.covariance_mode = covariance_mode_from_string(a.at("covariance_mode").get<std::string>());
        c.ambiguity.prior_channels = a.at("prior_channels").get<int>();
        c.use_ambiguity = j.at("use_ambiguity").get<bool>();
        c.validate();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("malformed model config: ") + e.what());
    }
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    nlohmann::json header;
    header["model"] = model_config_to_json(ckpt.model);
    header["info"] = ckpt.info;
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& [name, t] : ckpt.params) {
        tensors.push_back({{"name", name}, {"shape", {t.shape.n, t.shape.c, t.shape.h, t.shape.w}}});
    }
    header["tensors"] = tensors;
    const std::string text = header.dump();

    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write checkpoint " + path);
        out.write(kMagic, sizeof kMagic);
        put_le<std::uint32_t>(out, kCheckpointVersion);
        put_le<std::uint64_t>(out, text.size());
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        for (const auto& [name, t] : ckpt.params) {
            for (double v : t.data) put_le<double>(out, v);
        }
        if (!out) throw std::runtime_error("failed writing checkpoint " + path);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) throw std::runtime_error("cannot move checkpoint into place at " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path);
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) throw std::runtime_error("not a checkpoint file: " + path);
    const auto version = get_le<std::uint32_t>(in, path);
    if (version != kCheckpointVersion) {
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version) + " in " + path);
    }
    const auto len = get_le<std::uint64_t>(in, path);
    std::string text(len, '\0');
    if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw std::runtime_error("truncated checkpoint: " + path);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("corrupt checkpoint header in " + path + ": " + e.what());
    }
    Checkpoint ckpt;
    ckpt.model = model_config_from_json(header.at("model"));
    ckpt.info = header.value("info", nlohmann::json::object());
    for (const auto& t : header.at("tensors")) {
        const auto s = t.at("shape").get<std::vector<int>>();
        if (s.size() != 4) throw std::runtime_error("bad tensor shape in " + path);
        Tensor tensor(s[0], s[1], s[2], s[3]);
        for (double& v : tensor.data) v = get_le<double>(in, path);
        ckpt.params.emplace(t.at("name").get<std::string>(), std::move(tensor));
    }
    if (in.peek() != std::char_traits<char>::eof()) throw std::runtime_error("trailing bytes in checkpoint " + path);

    // The stored parameters must be exactly the set the model would create.
    const ParamMap expected = Model(ckpt.model).init_params(0);
    for (const auto& [name, t] : expected) {
        auto it = ckpt.params.find(name);
        if (it == ckpt.params.end()) throw std::runtime_error("checkpoint " + path + " lacks parameter " + name);
        if (!(it->second.shape == t.shape)) {
            throw std::runtime_error("checkpoint " + path + ": parameter " + name + " has shape " + it->second.shape.str() +
                                     ", model expects " + t.shape.str());
        }
    }
    if (expected.size() != ckpt.params.size()) throw std::runtime_error("checkpoint " + path + " has unexpected parameters");
    return ckpt;
}

std::string file_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    std::ostringstream hex;
    hex << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(ss.str());
    return hex.str();
}

TrainResult train(const TrainConfig& cfg, const std::vector<AmbiguousSample>& data, const TrainOptions& opt) {
    cfg.validate();
    if (data.empty()) throw std::invalid_argument("train: empty dataset");
    const Shape ishape = data.front().image.shape;
    for (const auto& s : data) {
        if (!(s.image.shape == ishape)) throw std::invalid_argument("train: sample " + s.id + " has a different image shape");
        if (s.raters.empty()) throw std::invalid_argument("train: sample " + s.id + " has no rater masks");
    }
    if (ishape.h != ishape.w) throw std::invalid_argument("train: images must be square");

    TrainResult result;
    result.model = cfg.model_config(ishape.h, ishape.c);
    const Model model(result.model);
    result.params = model.init_params(cfg.seed);
    const LossWeights w = cfg.effective_weights();
    const RaterView view = cfg.mode == TrainMode::DdpmDetSeg ? RaterView::Averaged : RaterView::RandomRater;

    std::set<std::string> frozen;
    if (cfg.freeze_offdiag && model.has_ambiguity()) {
        for (const auto& n : model.amn().offdiag_param_names()) frozen.insert(n);
        for (const auto& n : model.acn().offdiag_param_names()) frozen.insert(n);
    }
    Adam adam(AdamConfig{cfg.learning_rate});

    auto write_ckpt = [&](int step) {
        if (opt.checkpoint_path.empty()) return;
        Checkpoint c{result.model, result.params, {{"step", step}, {"train_config", cfg.to_json()}}};
        save_checkpoint(opt.checkpoint_path, c);
    };

    const int H = ishape.h, W = ishape.w;
    std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
    std::uniform_int_distribution<int> pick_t(1, cfg.T);
    for (int step = 0; step < cfg.steps; ++step) {
        std::mt19937_64 rng = make_rng(cfg.seed, 0x7a1, static_cast<std::uint64_t>(step));
        TrainBatch batch;
        std::vector<Tensor> bs, xs;
        batch.t.resize(cfg.batch_size);
        for (int i = 0; i < cfg.batch_size; ++i) {
            const AmbiguousSample& s = data[pick(rng)];
            auto [b, x] = rater_view(s, view, rng);
            bs.push_back(std::move(b));
            xs.push_back(std::move(x));
            batch.t[i] = pick_t(rng);
        }
        batch.b = stack_examples(bs);
        batch.x0 = stack_examples(xs);
        batch.eps = Tensor(cfg.batch_size, 1, H, W);
        fill_normal(batch.eps.data, rng);

        ParamMap grads = zeros_like(result.params);
        LossReport r;
        try {
            r = forward_backward(model, result.params, batch, w, &grads);
        } catch (const DiagnosticError& e) {
            write_ckpt(step);
            throw DiagnosticError("step " + std::to_string(step) + ": " + e.what());
        }
        adam.step(result.params, grads, frozen);
        result.losses.push_back(r);
        if (opt.log != nullptr && (step % cfg.log_every == 0 || step + 1 == cfg.steps)) {
            *opt.log << loss_json(step, r).dump() << '\n';
        }
        if (opt.on_step) opt.on_step(step, r);
        if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) write_ckpt(step + 1);
    }
    write_ckpt(cfg.steps);
    return result;
}

MaskSource model_mask_source(const Model& model, const ParamMap& params, int n, std::uint64_t seed, double threshold) {
    return [&model, &params, n, seed, threshold](const AmbiguousSample& s, std::size_t index) {
        SampleRequest req{s.image, n, splitmix64(seed ^ splitmix64(index + 1)), threshold};
        return sample_masks(model, params, req);
    };
}

EvaluationResult evaluate(const std::vector<AmbiguousSample>& data, const MaskSource& source, const MetricOptions& opt) {
    EvaluationResult out;
    std::vector<MaskSet> gts;
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < data.size(); ++i) {
        out.predictions.push_back(source(data[i], i));
        gts.push_back(ground_truth_set(data[i]));
        ids.push_back(data[i].id);
    }
    out.report = evaluate_testset(out.predictions, gts, ids, opt);
    return out;
}

EvaluationResult evaluate_checkpoint(const Checkpoint& ckpt, const std::vector<AmbiguousSample>& data, int n,
                                     std::uint64_t seed, const MetricOptions& opt) {
    const auto& d = ckpt.model.denoiser;
    for (const auto& s : data) {
        if (s.image.shape.h != d.image_size || s.image.shape.w != d.image_size || s.image.shape.c != d.prior_channels) {
            throw std::invalid_argument("checkpoint expects " + std::to_string(d.prior_channels) + "-channel " +
                                        std::to_string(d.image_size) + "x" + std::to_string(d.image_size) +
                                        " images, but sample " + s.id + " is " + s.image.shape.str());
        }
    }
    const Model model(ckpt.model);
    return evaluate(data, model_mask_source(model, ckpt.params, n, seed), opt);
}

double blank_fraction(const std::vector<MaskSet>& sets) {
    std::size_t blank = 0, total = 0;
    for (const auto& s : sets) {
        for (const auto& m : s.masks) {
            blank += m.empty_mask() ? 1 : 0;
            ++total;
        }
    }
    return total == 0 ? 0.0 : static_cast<double>(blank) / static_cast<double>(total);
}

nlohmann::json report_to_json(const TestsetReport& r) {
    nlohmann::json images = nlohmann::json::array();
    for (const auto& im : r.images) {
        nlohmann::json j = ci_json(im.report);
        j["image_id"] = im.image_id;
        j["d_a_defined"] = im.report.d_a.has_value();
        images.push_back(j);
    }
    return {{"schema_version", 1}, {"images", images}, {"mean", ci_json(r.mean)}, {"undefined_d_a", r.undefined_d_a}};
}

AblationReport run_ablation(const std::vector<AmbiguousSample>& train_data, const std::vector<AmbiguousSample>& test_data,
                            const TrainConfig& base_cfg, const AblationOptions& opt) {
    AblationReport out;
    for (TrainMode mode : opt.arms) {
        TrainConfig cfg = base_cfg;
        cfg.mode = mode;
        if (opt.progress) opt.progress("training " + to_string(mode));
        TrainResult tr = train(cfg, train_data);
        const Model model(tr.model);
        if (opt.progress) opt.progress("evaluating " + to_string(mode));
        ArmResult arm;
        arm.mode = mode;
        arm.label = to_string(mode);
        arm.eval = evaluate(test_data, model_mask_source(model, tr.params, opt.n, opt.eval_seed));
        arm.blank_fraction = blank_fraction(arm.eval.predictions);
        for (const auto& s : arm.eval.predictions) arm.blank_draws += static_cast<int>(s.size());
        arm.final_l_simple = tr.losses.empty() ? 0.0 : tr.losses.back().l_simple;
        arm.params = std::move(tr.params);
        out.arms.push_back(std::move(arm));
    }
    return out;
}

nlohmann::json ablation_to_json(const AblationReport& r) {
    nlohmann::json arms = nlohmann::json::array();
    std::vector<std::size_t> order(r.arms.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    auto ci_of = [&](std::size_t i) { return r.arms[i].eval.report.mean.ci.value_or(-1.0); };
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ci_of(a) > ci_of(b); });
    int rank = 1;
    for (std::size_t i : order) {
        const ArmResult& a = r.arms[i];
        const CIReport& m = a.eval.report.mean;
        arms.push_back({{"rank", rank++},
                        {"arm", a.label},
                        {"ged", m.ged},
                        {"ci", optional_json(m.ci)},
                        {"d_max", m.d_max},
                        {"blank_fraction", a.blank_fraction},
                        {"blank_draws", a.blank_draws},
                        {"final_l_simple", a.final_l_simple}});
    }
    return {{"schema_version", 1}, {"ranked_by", "ci"}, {"arms", arms}};
}

}  // namespace cimd
