#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "aff/config.hpp"

using namespace aff;

TEST_CASE("defaults dump and re-parse to the same document") {
    const AppConfig defaults;
    const std::string text = dump_config(defaults);
    const AppConfig back = parse_config(text);
    CHECK(dump_config(back) == text);

    // the documented paper-derived defaults
    CHECK(defaults.train.margin == 0.3);
    CHECK(defaults.train.scale == 32.0);
    CHECK(defaults.train.momentum == 0.99);
    CHECK(defaults.train.weight_decay == 0.01);
    CHECK(defaults.train.lr == 0.001);
    CHECK(defaults.train.epochs == 20);
    CHECK(defaults.mixer.depth == 4);
    CHECK(defaults.mixer.heads == 4);
    CHECK(defaults.mixer.hidden() == 2 * defaults.mixer.d);
    CHECK(defaults.gen.families.size() == 4);
}

TEST_CASE("unknown keys and sections are rejected") {
    CHECK_THROWS_AS(parse_config("[gen]\nclasses = 4\nbogus_key = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[nonsense]\nx = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[gen]\nclasses = 4\n[gen]\nclasses = 5\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("classes = 4\n"), ConfigError);  // key outside section
}

TEST_CASE("value types are enforced") {
    CHECK_THROWS_AS(parse_config("[train]\nepochs = \"ten\"\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[train]\nlr = true\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[mixer]\nshared_weights = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[train]\nmode = joint\n"), ConfigError);  // unquoted
    // integers are accepted where floats are expected
    const AppConfig cfg = parse_config("[train]\nlr = 1\n");
    CHECK(cfg.train.lr == 1.0);
}

TEST_CASE("family tables override the default bank") {
    const std::string text =
        "[gen]\n"
        "classes = 5\n"
        "items_per_class = 6\n"
        "split_train = 3\n"
        "split_gallery = 2\n"
        "split_query = 1\n"
        "\n"
        "[[gen.family]]\n"
        "kind = \"global\"\n"
        "dim = 20\n"
        "informative = 10\n"
        "sigma = 0.5\n"
        "\n"
        "[[gen.family]]\n"
        "kind = \"local\"\n"
        "dim = 8\n"
        "count = 3\n"
        "informative = 12\n"
        "sigma = 0.4\n";
    const AppConfig cfg = parse_config(text);
    REQUIRE(cfg.gen.families.size() == 2);
    CHECK(cfg.gen.families[0].kind == FamilyKind::global);
    CHECK(cfg.gen.families[0].dim == 20);
    CHECK(cfg.gen.families[1].kind == FamilyKind::local);
    CHECK(cfg.gen.families[1].count == 3);
}

TEST_CASE("semantic validation happens after parsing") {
    CHECK_THROWS_AS(parse_config("[train]\nmomentum = 1.0\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[train]\nlr = 0.0\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[train]\nmode = \"warp\"\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[mixer]\nkind = \"rnn\"\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[mixer]\nd = 30\nheads = 4\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[gen]\nclasses = 1\n"), ConfigError);
}

TEST_CASE("comments and blank lines are ignored") {
    const AppConfig cfg = parse_config(
        "# leading comment\n"
        "\n"
        "[train]  # trailing comment\n"
        "epochs = 7  # another\n"
        "mode = \"two-stage\"\n");
    CHECK(cfg.train.epochs == 7);
    CHECK(cfg.train.mode == TrainMode::two_stage);
}

TEST_CASE("d_e override is honored") {
    const AppConfig cfg = parse_config("[mixer]\nd = 16\nd_e = 48\n");
    CHECK(cfg.mixer.hidden() == 48);
    const AppConfig auto_cfg = parse_config("[mixer]\nd = 16\nd_e = 0\n");
    CHECK(auto_cfg.mixer.hidden() == 32);
}
