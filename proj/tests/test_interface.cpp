#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "raw/cli.hpp"
#include "raw/config.hpp"
#include "raw/corpus.hpp"
#include "raw/error.hpp"
#include "raw/image_io.hpp"
#include "raw/model_io.hpp"
#include "support.hpp"

using namespace raw;

namespace {

ModelArtifact sample_model(Shape s = {3, 16, 16}) { return {init_watermark(s, 1.0, 0.01, 3), init_params(4)}; }

struct CliResult {
  int code;
  std::string out, err;
};

CliResult run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "rawmark");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli_dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string small_config_text() {
  return "[run]\nepochs = 2\nbatch_size = 8\nheight = 16\nwidth = 16\n"
         "[corpus]\nn_images = 16\nheight = 16\nwidth = 16\n"
         "[smoothing]\nn_mc = 16\n"
         "[certify]\ncalibration_images = 400\npgd_steps = 2\n";
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("model artifact round trip") {
  const ModelArtifact m = sample_model();
  const auto bytes = serialize_model(m);
  CHECK(deserialize_model(bytes) == m);
  CHECK(serialize_model(deserialize_model(bytes)) == bytes);

  testing::TempDir dir;
  save_model(m, dir / "m.rawm");
  CHECK(read_file(dir / "m.rawm") == bytes);
  CHECK(load_model(dir / "m.rawm") == m);
  CHECK_THROWS_AS(load_model(dir / "missing.rawm"), IoError);
}

TEST_CASE("model artifact layout") {
  const ModelArtifact m = sample_model({3, 64, 64});
  const auto bytes = serialize_model(m);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "RAWM");
  auto u32 = [&](std::size_t at) {
    return static_cast<std::uint32_t>(bytes[at]) | static_cast<std::uint32_t>(bytes[at + 1]) << 8 |
           static_cast<std::uint32_t>(bytes[at + 2]) << 16 | static_cast<std::uint32_t>(bytes[at + 3]) << 24;
  };
  CHECK(u32(4) == kModelVersion);
  CHECK(u32(8) == 3);
  CHECK(u32(12) == 64);
  CHECK(u32(16) == 64);
  const std::size_t tag_len = u32(36);
  CHECK(tag_len == std::string(kArchTag).size());
  std::size_t at = 40 + tag_len;
  const std::uint32_t u_count = u32(at);
  at += 4 + 4 * u_count;
  const std::uint32_t v_count = u32(at);
  CHECK(u_count == 12288);
  CHECK(v_count == 12288);
  CHECK(u_count + v_count == 24576);
  at += 4 + 4 * v_count;
  std::size_t params = 0;
  for (int i = 0; i < 8; ++i) {
    const std::uint32_t c = u32(at);
    params += c;
    at += 4 + 4 * c;
  }
  CHECK(params == 23649);
  CHECK(at + 4 == bytes.size());
}

TEST_CASE("model artifact rejects damage") {
  const auto bytes = serialize_model(sample_model());
  for (std::size_t pos : {std::size_t{20}, bytes.size() / 2, bytes.size() - 5}) {
    auto flipped = bytes;
    flipped[pos] ^= 0x01;
    CHECK_THROWS_AS(deserialize_model(flipped), CorruptionError);
  }
  auto magic = bytes;
  magic[0] = 'X';
  CHECK_THROWS_AS(deserialize_model(magic), FormatError);
  auto version = bytes;
  version[4] = 2;
  CHECK_THROWS_AS(deserialize_model(version), FormatError);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 9);
  CHECK_THROWS(deserialize_model(truncated));
  CHECK_THROWS_AS(deserialize_model({}), FormatError);
}

TEST_CASE("config round trip is a fixed point") {
  ConfigFile c;
  c.run.epochs = 7;
  c.run.c2 = 0.0;
  c.run.augmentations = {AugmentationSpec::of(AugmentKind::kGaussianNoise), AugmentationSpec::of(AugmentKind::kJpegApprox)};
  c.smoothing.sigma = 0.125;
  c.corpus.weights = {1.0, 0.5, 0.0, 2.0};
  c.certify.offset = OffsetConvention::kLiteral;
  const std::string text = c.serialize();
  const ConfigFile back = ConfigFile::parse(text);
  CHECK(back == c);
  CHECK(back.serialize() == text);
  CHECK(back.defaulted.empty());

  testing::TempDir dir;
  c.save(dir / "c.cfg");
  CHECK(ConfigFile::load(dir / "c.cfg") == c);
  CHECK(ConfigFile::parse(ConfigFile{}.serialize()) == ConfigFile{});
}

TEST_CASE("config parsing") {
  const ConfigFile c = ConfigFile::parse("# comment\n\n[run]\n  epochs =   3  \n[smoothing]\nsigma=0.1\n");
  CHECK(c.run.epochs == 3);
  CHECK(c.smoothing.sigma == 0.1);
  CHECK(c.run.batch_size == RunConfig{}.batch_size);
  CHECK(std::find(c.defaulted.begin(), c.defaulted.end(), "run.batch_size") != c.defaulted.end());
  CHECK(std::find(c.defaulted.begin(), c.defaulted.end(), "run.epochs") == c.defaulted.end());

  CHECK_THROWS_AS(ConfigFile::parse("[run]\nbogus = 1\n"), ConfigError);
  CHECK_THROWS_AS(ConfigFile::parse("[nowhere]\n"), ConfigError);
  CHECK_THROWS_AS(ConfigFile::parse("[run]\nepochs = 1\nepochs = 2\n"), ConfigError);
  CHECK_THROWS_AS(ConfigFile::parse("[run]\nepochs = many\n"), ConfigError);
  CHECK_THROWS_AS(ConfigFile::parse("epochs = 1\n"), ConfigError);
  CHECK_THROWS_AS(ConfigFile::parse("[corpus]\nweights = 1 2 3\n"), ConfigError);
  CHECK_THROWS_AS(ConfigFile::parse("[certify]\noffset = sideways\n"), ConfigError);
  CHECK_THROWS_AS(ConfigFile::parse("[augment]\nspec = teleport\n"), ConfigError);
}

TEST_CASE("CLI usage errors exit with 2") {
  CHECK(run_cli({}).code == 2);
  CHECK(run_cli({"train", "--bogus"}).code == 2);
  CHECK(run_cli({"embed", "--model", "/nonexistent/m.rawm", "--in", "x.png", "--out", "y.png"}).code == 2);
  CHECK(run_cli({"--help"}).code == 0);

  testing::TempDir dir;
  save_model(sample_model(), dir / "m.rawm");
  const CliResult r = run_cli({"calibrate", "--model", (dir / "m.rawm").string(), "--out", (dir / "c.txt").string(),
                               "--n", "500", "--alpha", "0.05"});
  CHECK(r.code == 2);
  CHECK(r.err.find("0.0607") != std::string::npos);
  CHECK(!std::filesystem::exists(dir / "c.txt"));
  const CliResult tiny = run_cli({"calibrate", "--model", (dir / "m.rawm").string(), "--out",
                                  (dir / "c.txt").string(), "--n", "500", "--alpha", "0.001"});
  CHECK(tiny.code == 2);
  CHECK(tiny.err.find("minimum feasible alpha is 0.0627") != std::string::npos);
}

TEST_CASE("CLI runtime errors exit with 1") {
  testing::TempDir dir;
  std::ofstream(dir / "bad.rawm") << "not a model";
  std::ofstream(dir / "x.png") << "not an image";
  CHECK(run_cli({"embed", "--model", (dir / "bad.rawm").string(), "--in", (dir / "x.png").string(), "--out",
                 (dir / "y.png").string()})
            .code == 1);
}

TEST_CASE("train with zero epochs writes the initial model") {
  testing::TempDir dir;
  std::ofstream(dir / "c.cfg") << small_config_text();
  const CliResult r = run_cli({"--config", (dir / "c.cfg").string(), "--seed", "5", "train", "--epochs", "0",
                               "--out", (dir / "m.rawm").string()});
  REQUIRE(r.code == 0);
  const ModelArtifact m = load_model(dir / "m.rawm");
  RunConfig run;
  run.height = run.width = 16;
  CHECK(m.params == init_params(5));
  CHECK(m.watermark == init_watermark(run.shape(), run.c1, run.c2, 5));
}

TEST_CASE("CLI pipeline end to end") {
  testing::TempDir dir;
  const std::string cfg = (dir / "c.cfg").string();
  std::ofstream(cfg) << small_config_text();
  const std::string model = (dir / "m.rawm").string();

  REQUIRE(run_cli({"--config", cfg, "gen-corpus", "--out", (dir / "corpus").string()}).code == 0);
  CHECK(ingest_dir(dir / "corpus", {3, 16, 16}).size() == 16);

  CliResult r = run_cli({"--config", cfg, "--json", "--no-timing", "train", "--out", model, "--epochs", "20",
                         "--corpus", (dir / "corpus").string(), "--heldout-n", "8", "--report", (dir / "train.csv").string()});
  REQUIRE(r.code == 0);
  auto j = nlohmann::json::parse(r.out);
  CHECK(j["command"] == "train");
  CHECK(j["epochs"].size() == 20);
  CHECK(std::filesystem::exists(dir / "train.csv"));

  const std::string cal = (dir / "cal.txt").string();
  r = run_cli({"--config", cfg, "calibrate", "--model", model, "--out", cal, "--alpha", "0.2"});
  REQUIRE(r.code == 0);
  CHECK(CalibrationResult::load(cal).n == 400);

  const Image original = generate_one(Generator::kShapeCollage, {3, 16, 16}, 77);
  save_image(original, dir / "x.png");
  r = run_cli({"--config", cfg, "embed", "--model", model, "--in", (dir / "x.png").string(), "--out",
               (dir / "y.png").string()});
  REQUIRE(r.code == 0);
  CHECK(std::filesystem::exists(dir / "y.png"));

  r = run_cli({"--config", cfg, "--json", "detect", "--model", model, "--calibration", cal, "--in",
               (dir / "y.png").string()});
  REQUIRE(r.code == 0);
  j = nlohmann::json::parse(r.out);
  CHECK(j["verdict"] == "watermarked");
  CHECK(j["score"].get<double>() >= j["tau"].get<double>());

  r = run_cli({"--config", cfg, "detect", "--model", model, "--calibration", cal, "--in", (dir / "y.png").string()});
  CHECK(r.out.find("score ") != std::string::npos);
  CHECK(r.out.find("tau ") != std::string::npos);
  CHECK(r.out.find("verdict ") != std::string::npos);

  save_image(generate_one(Generator::kShapeCollage, {3, 8, 8}, 1), dir / "small.png");
  CHECK(run_cli({"--config", cfg, "detect", "--model", model, "--calibration", cal, "--in",
                 (dir / "small.png").string()})
            .code == 1);
  CHECK(run_cli({"--config", cfg, "detect", "--model", model, "--calibration", cal, "--in",
                 (dir / "small.png").string(), "--resize"})
            .code == 0);

  r = run_cli({"--config", cfg, "--json", "--no-timing", "evaluate", "--model", model, "--n", "20", "--calibration",
               cal, "--fresh-n", "20", "--alphas", "0.2", "--throughput-n", "0", "--report",
               (dir / "eval.csv").string()});
  REQUIRE(r.code == 0);
  j = nlohmann::json::parse(r.out);
  CHECK(j["rows"].size() == 1 + 6 + 1 + 3);
  CHECK(j["fpr"].size() == 1);
  CHECK(run_cli({"--config", cfg, "evaluate", "--model", model, "--n", "20", "--throughput-n", "0",
                 "--min-clean-auroc", "1.01"})
            .code == 1);

  r = run_cli({"--config", cfg, "--json", "ablate", "--epochs", "1", "--heldout-n", "8"});
  REQUIRE(r.code == 0);
  j = nlohmann::json::parse(r.out);
  CHECK(j["arms"].size() == 3);
  CHECK(j["arms"][1]["signsgd_steps"] == 0);
}

TEST_CASE("the rawmark binary honours the exit-code contract") {
  const std::string bin = RAWMARK_BIN;
  CHECK(WEXITSTATUS(std::system((bin + " --version-bogus > /dev/null 2>&1").c_str())) == 2);
  CHECK(WEXITSTATUS(std::system((bin + " --help > /dev/null 2>&1").c_str())) == 0);
}

TEST_CASE("same seed gives byte-identical artifacts") {
  testing::TempDir dir;
  const std::string cfg = (dir / "c.cfg").string();
  std::ofstream(cfg) << small_config_text();
  for (const char* name : {"a", "b"}) {
    const std::string base = (dir / name).string();
    REQUIRE(run_cli({"--config", cfg, "--no-timing", "train", "--out", base + ".rawm", "--heldout-n", "8",
                     "--report", base + ".csv"})
                .code == 0);
  }
  CHECK(slurp(dir / "a.rawm") == slurp(dir / "b.rawm"));
  CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
  REQUIRE(run_cli({"--config", cfg, "--seed", "9", "train", "--out", (dir / "c.rawm").string(), "--heldout-n", "8"})
              .code == 0);
  CHECK(slurp(dir / "a.rawm") != slurp(dir / "c.rawm"));
}
