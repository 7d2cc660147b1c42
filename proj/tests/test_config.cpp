#include <doctest.h>

#include <filesystem>

#include "helpers.hpp"
#include "hvsr/config.hpp"
#include "hvsr/error.hpp"

using namespace hvsr;

TEST_CASE("ini parse and serialize") {
    std::string text =
        "# comment\n"
        "[alpha]\n"
        "a = 1\n"
        "b = two words\n"
        "\n"
        "[beta]\n"
        "x = 0.5\n";
    IniDoc doc = ini_parse(text);
    REQUIRE(doc.sections.size() == 2);
    CHECK(*doc.find("alpha")->find("b") == "two words");
    CHECK(doc.find("alpha")->find("missing") == nullptr);

    // parse(serialize(parse(text))) is stable
    CHECK(ini_serialize(ini_parse(ini_serialize(doc))) == ini_serialize(doc));

    CHECK_THROWS_AS(ini_parse("key = outside\n"), FormatError);
    CHECK_THROWS_AS(ini_parse("[bad\n"), FormatError);
    CHECK_THROWS_AS(ini_parse("[s]\nno equals sign\n"), FormatError);
}

TEST_CASE("doubles round-trip losslessly through the config format") {
    for (double v : {5e-4, 0.1, 1.0 / 3.0, 1e-17, 123456.789, 0.9990000000000001}) {
        CHECK(parse_double(format_double(v)) == v);
    }
}

TEST_CASE("resolution lists parse and print") {
    ResCounts rc = res_counts_from_string("32x2,16x2, 8x2,4x1,1x1");
    REQUIRE(rc.size() == 5);
    CHECK(rc[0] == std::pair{32, 2});
    CHECK(rc[4] == std::pair{1, 1});
    CHECK(res_counts_to_string(rc) == "32x2,16x2,8x2,4x1,1x1");
    CHECK_THROWS_AS(res_counts_from_string("32"), FormatError);
    CHECK_THROWS_AS(res_counts_from_string(""), FormatError);
}

TEST_CASE("run config round-trips losslessly and rejects unknown keys") {
    RunConfig rc;
    rc.model = testutil::tiny_sr_cfg().base;
    rc.scale_factor = 4;
    rc.condition_mode = ConditionMode::posterior_only;
    rc.train.learning_rate = 1.5e-3;
    rc.train.seed = 987654321012345ULL;
    rc.train.freeze_policy = FreezePolicy::encoder_frozen;
    rc.eval.temperature = 0.1;
    rc.eval.shave = 2;

    auto text = ini_serialize(run_config_to_ini(rc));
    RunConfig back = run_config_from_ini(ini_parse(text));
    CHECK(back == rc);

    auto dir = testutil::fresh_dir("hvsr_t_cfg");
    save_run_config(rc, dir + "/config.ini");
    CHECK(load_run_config(dir + "/config.ini") == rc);

    CHECK_THROWS_AS(run_config_from_ini(ini_parse(text + "[mystery]\nk = v\n")), FormatError);
    CHECK_THROWS_AS(run_config_from_ini(ini_parse(text + "[train]\nnot_a_knob = 1\n")), FormatError);
    CHECK_THROWS_AS(run_config_from_ini(ini_parse("[model]\nwidth = eight\n")), FormatError);
}

TEST_CASE("enum spellings") {
    CHECK(condition_mode_from_string("prior_and_posterior") == ConditionMode::prior_and_posterior);
    CHECK(condition_mode_from_string("posterior_only") == ConditionMode::posterior_only);
    CHECK_THROWS_AS(condition_mode_from_string("both"), FormatError);
    CHECK(freeze_policy_to_string(freeze_policy_from_string("encoder_frozen")) == "encoder_frozen");
    CHECK_THROWS_AS(freeze_policy_from_string("all"), FormatError);
}
