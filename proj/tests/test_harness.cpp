#include "cimd/errors.hpp"
#include "cimd/harness.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace cimd;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny_train(TrainMode mode = TrainMode::Cimd) {
    TrainConfig c;
    c.mode = mode;
    c.T = 20;
    c.schedule_rescale = false;
    c.steps = 6;
    c.batch_size = 2;
    c.learning_rate = 1e-3;
    c.seed = 5;
    c.base_channels = 4;
    c.channel_multipliers = {1, 2};
    c.time_embed_dim = 8;
    c.amb_filters = {4, 6, 8, 8};
    c.latent_dim = 3;
    return c;
}

std::vector<AmbiguousSample> tiny_data(int count, std::uint64_t seed) {
    SynthConfig s;
    s.image_size = 8;
    s.count = count;
    s.seed = seed;
    s.rater_split = RaterSplit::Balanced;
    return generate_synthetic(s);
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("cimd_test_harness_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

bool same_params(const ParamMap& a, const ParamMap& b) {
    if (a.size() != b.size()) return false;
    for (const auto& [name, t] : a) {
        auto it = b.find(name);
        if (it == b.end() || !(it->second.shape == t.shape) || it->second.data != t.data) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("config text parsing") {
    const TrainConfig c = TrainConfig::parse(
        "# desk run\n"
        "mode = ddpm-prob-seg\n"
        "T = 100   # short chain\n"
        "learning_rate = 0.001\n"
        "channel_multipliers = 1,2\n"
        "covariance_mode = full\n"
        "freeze_offdiag = true\n"
        "\n");
    CHECK(c.mode == TrainMode::DdpmProbSeg);
    CHECK(c.T == 100);
    CHECK(c.learning_rate == 0.001);
    CHECK(c.channel_multipliers == std::vector<int>{1, 2});
    CHECK(c.covariance_mode == CovarianceMode::Full);
    CHECK(c.freeze_offdiag);
    CHECK(c.weights.lambda == 0.001);

    try {
        TrainConfig::parse("learnin_rate = 0.1\n");
        FAIL("expected an error");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("learnin_rate") != std::string::npos);
    }
    CHECK_THROWS_AS(TrainConfig::parse("T = ten\n"), std::invalid_argument);
    CHECK_THROWS_AS(TrainConfig::parse("just words\n"), std::invalid_argument);
    TrainConfig d;
    d.set("steps", "12");
    CHECK(d.steps == 12);
    CHECK_THROWS_AS(d.set("mode", "cimd-plus"), std::invalid_argument);
    d.steps = -1;
    CHECK_THROWS_AS(d.validate(), std::invalid_argument);
}

TEST_CASE("plain DDPM arms report beta as zero and own no ambiguity parameters") {
    for (TrainMode m : {TrainMode::DdpmDetSeg, TrainMode::DdpmProbSeg}) {
        const TrainConfig c = tiny_train(m);
        CHECK(c.effective_weights().beta == 0.0);
        CHECK(c.effective_weights().lambda == 0.001);
        const ParamMap p = Model(c.model_config(8, 1)).init_params(1);
        for (const auto& [name, t] : p) {
            CHECK(name.rfind("amn.", 0) != 0);
            CHECK(name.rfind("acn.", 0) != 0);
        }
    }
    CHECK(tiny_train().effective_weights().beta == 0.001);
}

TEST_CASE("zero training steps return the initial parameters") {
    TrainConfig c = tiny_train();
    c.steps = 0;
    const auto data = tiny_data(4, 1);
    const TrainResult r = train(c, data);
    CHECK(r.losses.empty());
    CHECK(same_params(r.params, Model(r.model).init_params(c.seed)));
}

TEST_CASE("training is bit-reproducible and logs every step") {
    const auto data = tiny_data(6, 2);
    const TrainConfig c = tiny_train();
    std::ostringstream log1, log2;
    const TrainResult a = train(c, data, {&log1, "", {}});
    const TrainResult b = train(c, data, {&log2, "", {}});
    CHECK(same_params(a.params, b.params));
    CHECK(log1.str() == log2.str());
    REQUIRE(a.losses.size() == 6);
    std::istringstream lines(log1.str());
    std::string line;
    int n = 0;
    while (std::getline(lines, line)) {
        const auto j = nlohmann::json::parse(line);
        CHECK(j.at("step").get<int>() == n);
        CHECK(std::isfinite(j.at("total").get<double>()));
        ++n;
    }
    CHECK(n == 6);
    TrainConfig other = c;
    other.seed = 6;
    CHECK_FALSE(same_params(train(other, data).params, a.params));
}

TEST_CASE("frozen off-diagonal heads stay at zero and reproduce the axis-aligned run") {
    const auto data = tiny_data(6, 3);
    TrainConfig diag = tiny_train();
    TrainConfig full = diag;
    full.covariance_mode = CovarianceMode::Full;
    full.freeze_offdiag = true;
    const TrainResult a = train(diag, data);
    const TrainResult b = train(full, data);
    for (const auto* name : {"amn.head_offdiag.w", "amn.head_offdiag.b", "acn.head_offdiag.w", "acn.head_offdiag.b"}) {
        for (double v : b.params.at(name).data) CHECK(v == 0.0);
    }
    for (const auto& [name, t] : a.params) CHECK(b.params.at(name).data == t.data);
    for (std::size_t i = 0; i < a.losses.size(); ++i) CHECK(a.losses[i].total == b.losses[i].total);

    full.freeze_offdiag = false;
    const TrainResult c = train(full, data);
    bool moved = false;
    for (double v : c.params.at("acn.head_offdiag.w").data) moved |= v != 0.0;
    CHECK(moved);
}

TEST_CASE("checkpoint round trip preserves parameters and metrics bit for bit") {
    const fs::path dir = scratch("ckpt");
    const auto data = tiny_data(4, 4);
    const auto test = tiny_data(3, 40);
    const TrainConfig c = tiny_train();
    const std::string path = (dir / "model.ckpt").string();
    const TrainResult r = train(c, data, {nullptr, path, {}});
    const Checkpoint back = load_checkpoint(path);
    CHECK(same_params(back.params, r.params));
    CHECK(back.info.at("step").get<int>() == c.steps);

    const Model model(r.model);
    const EvaluationResult direct = evaluate(test, model_mask_source(model, r.params, 3, 9));
    const EvaluationResult loaded = evaluate_checkpoint(back, test, 3, 9);
    CHECK(report_to_json(direct.report).dump() == report_to_json(loaded.report).dump());
    CHECK(direct.report.mean.ged == loaded.report.mean.ged);

    // Saving again gives the same bytes and hash.
    const std::string path2 = (dir / "again.ckpt").string();
    save_checkpoint(path2, back);
    CHECK(file_hash(path) == file_hash(path2));
    CHECK(file_hash(path).size() == 16);
    fs::remove_all(dir);
}

TEST_CASE("broken or mismatched checkpoints are rejected with a clear message") {
    const fs::path dir = scratch("bad");
    const TrainConfig c = tiny_train();
    Checkpoint ck{c.model_config(8, 1), Model(c.model_config(8, 1)).init_params(1), {}};
    const std::string path = (dir / "m.ckpt").string();
    save_checkpoint(path, ck);

    // Wrong image size for the dataset.
    SynthConfig big;
    big.count = 1;
    try {
        evaluate_checkpoint(ck, generate_synthetic(big), 2, 1);
        FAIL("expected a mismatch");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("8x8") != std::string::npos);
    }

    // A tensor of the wrong shape.
    Checkpoint wrong = ck;
    wrong.params["denoiser.out.conv.b"] = Tensor(1, 3, 1, 1);
    const std::string wpath = (dir / "wrong.ckpt").string();
    save_checkpoint(wpath, wrong);
    try {
        load_checkpoint(wpath);
        FAIL("expected a shape error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("denoiser.out.conv.b") != std::string::npos);
    }

    // Truncation and garbage.
    {
        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), {});
        std::ofstream(dir / "trunc.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() - 5);
        std::ofstream(dir / "junk.ckpt", std::ios::binary) << "hello world";
    }
    CHECK_THROWS_AS(load_checkpoint((dir / "trunc.ckpt").string()), std::runtime_error);
    CHECK_THROWS_AS(load_checkpoint((dir / "junk.ckpt").string()), std::runtime_error);
    CHECK_THROWS_AS(load_checkpoint((dir / "absent.ckpt").string()), std::runtime_error);
    fs::remove_all(dir);
}

TEST_CASE("an oracle that returns the raters scores perfectly") {
    const auto test = tiny_data(5, 7);
    const MaskSource oracle = [](const AmbiguousSample& s, std::size_t) {
        MaskSet m = ground_truth_set(s);
        m.role = MaskRole::Prediction;
        return m;
    };
    const EvaluationResult r = evaluate(test, oracle);
    CHECK(r.report.mean.ged == 0.0);
    CHECK(*r.report.mean.ci == 1.0);
    CHECK(r.report.undefined_d_a == 0);
    CHECK(blank_fraction(r.predictions) == 0.5);
}

TEST_CASE("single-sample evaluation leaves d_a and ci undefined") {
    const auto data = tiny_data(2, 8);
    const auto test = tiny_data(3, 80);
    TrainConfig c = tiny_train();
    c.steps = 1;
    const TrainResult r = train(c, data);
    const Model model(r.model);
    const EvaluationResult e = evaluate(test, model_mask_source(model, r.params, 1, 1));
    CHECK(e.report.undefined_d_a == 3);
    CHECK_FALSE(e.report.mean.d_a.has_value());
    const auto j = report_to_json(e.report);
    CHECK(j.at("mean").at("d_a").is_null());
    CHECK(j.at("mean").at("ci").is_null());
    CHECK(j.at("undefined_d_a") == 3);
    CHECK(std::isfinite(j.at("mean").at("ged").get<double>()));
}

TEST_CASE("evaluation is deterministic in its seed") {
    const auto data = tiny_data(3, 9);
    const auto test = tiny_data(3, 90);
    const TrainResult r = train(tiny_train(), data);
    const Model model(r.model);
    const auto a = evaluate(test, model_mask_source(model, r.params, 3, 4));
    const auto b = evaluate(test, model_mask_source(model, r.params, 3, 4));
    const auto c = evaluate(test, model_mask_source(model, r.params, 3, 5));
    CHECK(report_to_json(a.report).dump() == report_to_json(b.report).dump());
    bool differs = false;
    for (std::size_t i = 0; i < a.predictions.size(); ++i)
        for (std::size_t k = 0; k < 3; ++k) differs |= !(a.predictions[i].masks[k] == c.predictions[i].masks[k]);
    CHECK(differs);
}

TEST_CASE("ablation report layout") {
    const auto data = tiny_data(4, 10);
    const auto test = tiny_data(2, 100);
    TrainConfig c = tiny_train();
    c.steps = 2;
    AblationOptions opt;
    opt.n = 2;
    const AblationReport r = run_ablation(data, test, c, opt);
    REQUIRE(r.arms.size() == 3);
    CHECK(r.arms[0].label == "cimd");
    CHECK(r.arms[0].params.count("amn.head.w") == 1);
    CHECK(r.arms[2].params.count("amn.head.w") == 0);
    const auto j = ablation_to_json(r);
    REQUIRE(j.at("arms").size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        const auto& a = j.at("arms")[i];
        CHECK(a.at("rank") == static_cast<int>(i) + 1);
        CHECK(a.contains("ged"));
        CHECK(a.contains("ci"));
        CHECK(a.contains("d_max"));
        CHECK(a.at("blank_draws") == 4);
        if (i > 0) CHECK(a.at("ci").get<double>() <= j.at("arms")[i - 1].at("ci").get<double>());
    }
}

TEST_CASE("a non-finite loss aborts with a diagnostic and a checkpoint") {
    const fs::path dir = scratch("nan");
    auto data = tiny_data(2, 11);
    for (auto& s : data) s.image.data[3] = std::nan("");
    const std::string path = (dir / "abort.ckpt").string();
    try {
        train(tiny_train(), data, {nullptr, path, {}});
        FAIL("expected a diagnostic");
    } catch (const DiagnosticError& e) {
        CHECK(std::string(e.what()).find("step 0") != std::string::npos);
    }
    REQUIRE(fs::exists(path));
    CHECK(load_checkpoint(path).info.at("step") == 0);
    fs::remove_all(dir);
}

TEST_CASE("training rejects unusable datasets") {
    CHECK_THROWS_AS(train(tiny_train(), {}), std::invalid_argument);
    auto data = tiny_data(2, 12);
    data[1].raters.clear();
    CHECK_THROWS_AS(train(tiny_train(), data), std::invalid_argument);
}
