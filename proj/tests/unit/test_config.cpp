#include <doctest.h>

#include <set>

#include "helpers.hpp"
#include "oneshot/harness.hpp"

using namespace oneshot;

TEST_CASE("canonical text round-trips") {
  ExperimentConfig c;
  c.partition.n_clients = 7;
  c.partition.alpha = 0.3;
  c.model.widths = {8, 16, 64};
  c.noise_p = {0.05, 0.2, 0.4};
  c.synthesis.per_sample = true;
  c.server.direction = nn::KlDirection::kStudentToTeacher;
  c.out_dir = "somewhere/else";
  c.seed = 99;
  const auto text = config_to_text(c);
  const auto back = parse_config(text);
  CHECK(config_to_text(back) == text);
  CHECK(back.partition.n_clients == 7);
  CHECK(back.model.widths == c.model.widths);
  CHECK(back.noise_p == c.noise_p);
  CHECK(back.synthesis.per_sample);
  CHECK(back.server.direction == nn::KlDirection::kStudentToTeacher);
}

TEST_CASE("every key appears in the canonical form") {
  const auto text = config_to_text(ExperimentConfig{});
  const auto keys = config_keys();
  CHECK(std::set<std::string>(keys.begin(), keys.end()).size() == keys.size());
  for (const auto& k : keys) CHECK(text.find(k + " = ") != std::string::npos);
}

TEST_CASE("comments and blank lines are ignored") {
  const auto c = parse_config("# header\n\nseed = 5  # trailing\n  partition.alpha=0.5\n");
  CHECK(c.seed == 5);
  CHECK(c.partition.alpha == 0.5);
}

TEST_CASE("bad configs name the offending line") {
  auto message = [](const std::string& text) {
    try {
      parse_config(text);
    } catch (const InvalidArgument& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message("seed = 1\nbogus.key = 3\n").find("line 2") != std::string::npos);
  CHECK(message("seed = 1\nseed = 2\n").find("duplicate") != std::string::npos);
  CHECK(message("partition.alpha = fast\n").find("line 1") != std::string::npos);
  CHECK(message("just words\n").find("key = value") != std::string::npos);
  CHECK(message("local.epochs = -3\n") != "");
  CHECK(message("model.arch = vgg\n") != "");
}

TEST_CASE("single overrides") {
  ExperimentConfig c;
  set_config_value(c, "server.lr", "0.25");
  set_config_value(c, "baseline.fedmix", "false");
  CHECK(c.server.learning_rate == 0.25);
  CHECK_FALSE(c.fedmix);
  CHECK_THROWS_AS(set_config_value(c, "server.learningrate", "1"), InvalidArgument);
}

TEST_CASE("resolve derives per-stage seeds") {
  ExperimentConfig a, b;
  a.seed = 1;
  b.seed = 2;
  a.resolution = b.resolution = 16;
  a.resolve();
  b.resolve();
  CHECK(a.model.resolution == 16);
  CHECK(a.ae.resolution == 16);
  CHECK(a.model.init_seed != b.model.init_seed);
  CHECK(a.partition.seed != a.model.init_seed);
  CHECK(a.ae.seed != a.ae_train.seed);
  a.deterministic = true;
  a.threads = 4;
  a.resolve();
  CHECK(a.threads == 1);
}

TEST_CASE("validation catches inconsistent fractions") {
  ExperimentConfig c;
  c.test_fraction = 0.6;
  c.proxy_fraction = 0.5;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = {};
  c.lambda_grid = {1.5};
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  CHECK_NOTHROW(ExperimentConfig{}.validate());
}

TEST_CASE("the shipped desk config parses") {
  const auto c = load_config(std::filesystem::path(ONESHOT_SOURCE_DIR) / "configs" / "desk.conf");
  CHECK_NOTHROW(c.validate());
  CHECK(c.partition.alpha == 0.1);
  CHECK_THROWS_AS(load_config("/nonexistent/x.conf"), IoError);
}
