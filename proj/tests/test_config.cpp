#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "tda/checkpoint.hpp"
#include "tda/config_json.hpp"

using namespace tda;

TEST_CASE("presets") {
    auto desk = preset_config("desk");
    CHECK(desk.model.d_model == 128);
    CHECK(desk.model.context_len == 512);
    CHECK(desk.theory.rows == std::vector<std::int64_t>{64, 256, 1024, 4096});
    CHECK(desk.model.attn.beta == 1.0);
    CHECK(desk.model.attn.kappa == 1.0);
    CHECK(desk.model.attn.power == 2);

    auto paper = preset_config("paper");
    CHECK(paper.model.d_model == 768);
    CHECK(paper.train.total_steps == 190730);
    CHECK(paper.train.warmup_steps == 715);
    CHECK(paper.passkey.lengths.front() == 500);
    CHECK(paper.passkey.lengths.back() == 4000);

    CHECK_THROWS_AS(preset_config("huge"), std::invalid_argument);
}

TEST_CASE("json overrides with strict unknown-key rejection") {
    RunConfig cfg = preset_config("desk");
    nlohmann::json doc = {
        {"seed", 5},
        {"model", {{"mechanism", "tra"}, {"d_model", 64}, {"attn", {{"beta", 0.5}}}}},
        {"train", {{"total_steps", 10}}},
    };
    apply_config_json(cfg, doc);
    CHECK(cfg.seed == 5);
    CHECK(cfg.model.mechanism == Mechanism::TRA);
    CHECK(cfg.model.d_model == 64);
    CHECK(cfg.model.attn.beta == 0.5);
    CHECK(cfg.model.attn.kappa == 1.0);  // untouched
    CHECK(cfg.train.total_steps == 10);

    nlohmann::json bad = {{"model", {{"d_modal", 64}}}};
    CHECK_THROWS_WITH_AS(apply_config_json(cfg, bad), doctest::Contains("model.d_modal"),
                         std::invalid_argument);
    nlohmann::json bad2 = {{"trian", {{"total_steps", 10}}}};
    CHECK_THROWS_AS(apply_config_json(cfg, bad2), std::invalid_argument);
}

TEST_CASE("mechanism names round trip") {
    for (const Mechanism m : {Mechanism::Softmax, Mechanism::ReLA, Mechanism::DiffSoftmax,
                              Mechanism::TRA, Mechanism::TDA})
        CHECK(mechanism_from_string(mechanism_name(m)) == m);
    CHECK_THROWS_AS(mechanism_from_string("sparsemax"), std::invalid_argument);
}

TEST_CASE("model config json round trip") {
    ModelConfig cfg;
    cfg.d_model = 64;
    cfg.n_layers = 3;
    cfg.n_heads = 2;
    cfg.mechanism = Mechanism::TDA;
    cfg.attn.lambda = 0.25;
    cfg.per_head_beta = true;
    cfg.tiles = TileConfig{16, 48};
    auto j = model_config_to_json(cfg);
    auto back = model_config_from_json(j);
    CHECK(back.d_model == 64);
    CHECK(back.n_layers == 3);
    CHECK(back.mechanism == Mechanism::TDA);
    CHECK(back.attn.lambda == 0.25);
    CHECK(back.per_head_beta == true);
    CHECK(back.tiles.block_m == 16);
    CHECK(back.tiles.block_n == 48);
}

TEST_CASE("resolved snapshot serializes every section deterministically") {
    auto cfg = preset_config("desk");
    const std::string a = run_config_to_json(cfg).dump(2);
    const std::string b = run_config_to_json(cfg).dump(2);
    CHECK(a == b);
    CHECK(a.find("\"theory\"") != std::string::npos);
    CHECK(a.find("\"bench\"") != std::string::npos);

    // the snapshot reloads cleanly through the strict parser
    RunConfig reloaded = preset_config("desk");
    apply_config_json(reloaded, run_config_to_json(cfg));
    CHECK(run_config_to_json(reloaded).dump() == run_config_to_json(cfg).dump());
}
