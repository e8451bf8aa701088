#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "dsgq/io.hpp"
#include "test_helpers.hpp"

using namespace dsgq;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dsgq_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "dsgq");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli::cli_main(int(argv.size()), argv.data());
}

Network sample_net() {
  Rng rng(60, Stream::Init);
  Network net = make_mlp(5, {6, 4}, 3, rng);
  testing::randomize_bn(net, rng);
  return net;
}

}  // namespace

TEST_CASE("model files") {
  const fs::path dir = scratch("model");
  const Network net = sample_net();
  SUBCASE("save then load reproduces logits exactly and re-saves byte-identically") {
    io::save_model((dir / "a.json").string(), net);
    const Network back = io::load_model((dir / "a.json").string());
    Rng rng(61, Stream::Data);
    const Tensor x = rng.normal_tensor({9, 5});
    CHECK(forward(net, x, Mode::Eval).logits == forward(back, x, Mode::Eval).logits);
    io::save_model((dir / "b.json").string(), back);
    CHECK(slurp(dir / "a.json") == slurp(dir / "b.json"));
    CHECK(checksum(back) == checksum(net));
  }
  SUBCASE("conv layers round-trip") {
    Network conv;
    conv.input_shape = {2, 4, 4};
    conv.layers = {Layer::conv2d(2, 3), Layer::batchnorm(3), Layer::relu(),
                   Layer::global_avg_pool(), Layer::dense(3, 2)};
    Rng rng(62, Stream::Init);
    initialize(conv, rng);
    CHECK(checksum(io::model_from_json(io::model_to_json(conv))) == checksum(conv));
  }
  SUBCASE("truncated file names the offset") {
    io::save_model((dir / "a.json").string(), net);
    const std::string full = slurp(dir / "a.json");
    spit(dir / "t.json", full.substr(0, full.size() / 2));
    try {
      io::load_model((dir / "t.json").string());
      FAIL("expected a parse error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("offset") != std::string::npos);
    }
  }
  SUBCASE("negative running variance names the field") {
    io::json j = io::model_to_json(net);
    j["layers"][1]["running_var"][2] = -0.5;
    try {
      io::model_from_json(j);
      FAIL("expected rejection");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("layers[1].running_var[2]") != std::string::npos);
    }
  }
  SUBCASE("unknown format version and missing BN stats") {
    io::json j = io::model_to_json(net);
    j["format_version"] = 99;
    CHECK_THROWS_AS(io::model_from_json(j), Error);
    j = io::model_to_json(net);
    j["layers"][1].erase("running_mean");
    CHECK_THROWS_WITH_AS(io::model_from_json(j), doctest::Contains("running_mean"), Error);
    j = io::model_to_json(net);
    j["layers"][0]["weight"].erase(0);
    CHECK_THROWS_WITH_AS(io::model_from_json(j), doctest::Contains("layers[0].weight"), Error);
  }
}

TEST_CASE("experiment configs") {
  SUBCASE("every default is materialized and the round trip is stable") {
    const io::ExperimentConfig c = io::config_from_json(io::json::object());
    const io::json j = io::config_to_json(c);
    for (const char* key : {"seed", "w_bits", "a_bits", "epsilon", "mode", "calibration", "ptq",
                            "qat", "dataset", "train", "metrics", "ablation", "theorem"})
      CHECK(j.contains(key));
    CHECK(j["epsilon"] == 0.9);
    CHECK(io::config_to_json(io::config_from_json(j)) == j);
  }
  SUBCASE("partial configs override only what they name") {
    const io::json j = io::json::parse(R"({"seed": 7, "ptq": {"iterations": 12}, "mode": "sda"})");
    const io::ExperimentConfig c = io::config_from_json(j);
    CHECK(c.run.seed == 7);
    CHECK(c.dataset.blobs.seed == 7);
    CHECK(c.run.iterations == 12);
    CHECK(c.run.batch_size == 32);
    CHECK(c.run.variant == Variant::Sda);
  }
  SUBCASE("unknown keys, wrong types and bad values are config errors with paths") {
    CHECK_THROWS_WITH_AS(io::config_from_json(io::json::parse(R"({"ptq": {"iters": 3}})")),
                         doctest::Contains("ptq.iters"), ConfigError);
    CHECK_THROWS_WITH_AS(io::config_from_json(io::json::parse(R"({"w_bits": "four"})")),
                         doctest::Contains("w_bits"), ConfigError);
    CHECK_THROWS_AS(io::config_from_json(io::json::parse(R"({"a_bits": 1})")), ConfigError);
    CHECK_THROWS_AS(io::config_from_json(io::json::parse(R"({"dataset": {"classes": 1}})")),
                    ConfigError);
  }
}

TEST_CASE("datasets") {
  const fs::path dir = scratch("data");
  SUBCASE("blobs are seeded") {
    BlobSpec s;
    s.seed = 9;
    const DatasetSplit a = make_blobs(s), b = make_blobs(s);
    CHECK(a.train.x == b.train.x);
    CHECK(a.test.y == b.test.y);
    s.seed = 10;
    CHECK_FALSE(make_blobs(s).train.x == a.train.x);
    s.classes = 1;
    CHECK_THROWS_AS(make_blobs(s), Error);
  }
  SUBCASE("CSV round trip and strict parsing") {
    BlobSpec s;
    s.per_class = 5;
    s.dim = 3;
    const Dataset d = make_blobs(s).train;
    save_csv((dir / "d.csv").string(), d);
    const Dataset back = load_csv((dir / "d.csv").string());
    CHECK(back.x == d.x);
    CHECK(back.y == d.y);
    spit(dir / "bad.csv", "0,1.0,2.0\n1,3.0,abc\n");
    CHECK_THROWS_WITH_AS(load_csv((dir / "bad.csv").string()),
                         doctest::Contains("row 2, column 3"), Error);
    spit(dir / "ragged.csv", "0,1.0,2.0\n1,3.0\n");
    CHECK_THROWS_WITH_AS(load_csv((dir / "ragged.csv").string()), doctest::Contains("row 2"),
                         Error);
    spit(dir / "one.csv", "0,1.0\n0,2.0\n");
    CHECK_THROWS_AS(load_csv((dir / "one.csv").string()), Error);
  }
}

TEST_CASE("command line") {
  const fs::path dir = scratch("cli");
  SUBCASE("verify-theorem reports success") {
    CHECK(run_cli({"verify-theorem", "--k", "3", "--out", (dir / "vt").string()}) == 0);
    const io::json r = io::read_json((dir / "vt" / "report.json").string());
    CHECK(r["theorem1_verified"] == true);
    CHECK(fs::exists(dir / "vt" / "run.log"));
  }
  SUBCASE("gen-data with zero iterations emits the raw Gaussian batch") {
    spit(dir / "cfg.json", R"({"ptq": {"num_samples": 64}, "train": {"epochs": 3}})");
    CHECK(run_cli({"gen-data", "--config", (dir / "cfg.json").string(), "--mode", "bn",
                   "--iters", "0", "--seed", "4", "--out", (dir / "gd").string()}) == 0);
    const Tensor s = io::read_matrix_csv((dir / "gd" / "samples.csv").string());
    Rng a(4, Stream::Synth, 0), b(4, Stream::Synth, 1);
    const std::vector<Tensor> parts{a.normal_tensor({32, 16}), b.normal_tensor({32, 16})};
    CHECK(s == concat_rows(parts));
    const io::json r = io::read_json((dir / "gd" / "report.json").string());
    CHECK(r["diversity"].contains("similarity_index_s"));
    for (const auto& name : r["artifacts"]) CHECK(fs::exists(dir / "gd" / name.get<std::string>()));
  }
  SUBCASE("exit codes") {
    CHECK(run_cli({"calibrate", "--bogus", "1", "--out", (dir / "x").string()}) == 1);
    CHECK(run_cli({"calibrate", "--w-bits", "9", "--out", (dir / "x").string()}) == 1);
    CHECK(run_cli({"calibrate", "--mode", "everything", "--out", (dir / "x").string()}) == 1);
    spit(dir / "bad.json", R"({"ptq": {"iterations": -3}})");
    CHECK(run_cli({"gen-data", "--config", (dir / "bad.json").string(), "--out",
                   (dir / "x").string()}) == 1);
    CHECK(run_cli({"metrics", "--model", (dir / "missing.json").string(), "--out",
                   (dir / "x").string()}) == 2);
    CHECK(run_cli({}) == 1);
  }
}
