#include <doctest.h>

#include <algorithm>
#include <fstream>

#include "raw/corpus.hpp"
#include "raw/error.hpp"
#include "raw/image_io.hpp"
#include "support.hpp"

using namespace raw;

namespace {

CorpusSpec spec(int n, int h = 32, int w = 32, std::uint64_t seed = 0) {
  CorpusSpec s;
  s.n_images = n;
  s.height = h;
  s.width = w;
  s.seed = seed;
  return s;
}

double image_mean(const Image& img) {
  double m = 0.0;
  for (float v : img.data()) m += v;
  return m / static_cast<double>(img.data().size());
}

}  // namespace

TEST_CASE("CorpusSpec validation") {
  CHECK_NOTHROW(CorpusSpec{}.validate());
  CHECK_THROWS_AS(spec(0).validate(), ConfigError);
  CorpusSpec s;
  s.weights = {0, 0, 0, 0};
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s.weights = {1, -1, 1, 1};
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s.weights = {0, 0, 1, 0};
  CHECK_NOTHROW(s.validate());
}

TEST_CASE("generate is deterministic and valid") {
  const auto a = generate(spec(24));
  const auto b = generate(spec(24));
  REQUIRE(a.size() == 24);
  CHECK(a == b);
  for (const auto& img : a) {
    CHECK(img.shape() == Shape{3, 32, 32});
    for (float v : img.data()) REQUIRE((v >= 0.0f && v <= 1.0f));
  }
  CHECK(generate(spec(24, 32, 32, 1)) != a);
  // Image i depends on i, not on n.
  const auto longer = generate(spec(30));
  CHECK(std::equal(a.begin(), a.end(), longer.begin()));
}

TEST_CASE("each generator family produces valid, non-constant images") {
  for (auto g : {Generator::kLowFreqFourier, Generator::kGradientField, Generator::kShapeCollage,
                 Generator::kFilteredNoise}) {
    const Image img = generate_one(g, {3, 32, 32}, 5);
    const auto [lo, hi] = std::minmax_element(img.data().begin(), img.data().end());
    CHECK(*lo >= 0.0f);
    CHECK(*hi <= 1.0f);
    CHECK(*hi - *lo > 0.05f);
    CHECK(generate_one(g, {3, 32, 32}, 5) == img);
  }
  // Low-frequency images are min-max normalized per image.
  const Image lf = generate_one(Generator::kLowFreqFourier, {3, 32, 32}, 9);
  const auto [lo, hi] = std::minmax_element(lf.data().begin(), lf.data().end());
  CHECK(*lo == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(*hi == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("single-family weights select that family") {
  CorpusSpec s = spec(6);
  s.weights = {0, 0, 0, 1};
  const auto imgs = generate(s);
  // Box-filtered uniform noise stays close to 0.5 on average.
  for (const auto& img : imgs) CHECK(std::abs(image_mean(img) - 0.5) < 0.1);
}

TEST_CASE("corpus diversity on the reference seed") {
  const auto imgs = generate(spec(400, 64, 64, 0));
  double lo = 1.0, hi = 0.0;
  for (const auto& img : imgs) {
    lo = std::min(lo, image_mean(img));
    hi = std::max(hi, image_mean(img));
  }
  MESSAGE("per-image mean range: " << hi - lo);
  CHECK(hi - lo >= 0.2);
}

TEST_CASE("write_corpus and ingest_dir round trip") {
  testing::TempDir dir;
  const auto imgs = generate(spec(5, 16, 16));
  write_corpus(imgs, dir.path());
  CHECK(std::filesystem::exists(dir / "img_00000.png"));
  CHECK(std::filesystem::exists(dir / "img_00004.png"));
  const auto back = ingest_dir(dir.path(), {3, 16, 16});
  REQUIRE(back.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < imgs[i].data().size(); ++j)
      REQUIRE(std::abs(back[i].data()[j] - imgs[i].data()[j]) <= 0.5f / 255.0f + 1e-6f);
  }
  const auto resized = ingest_dir(dir.path(), {3, 8, 8});
  CHECK(resized[0].shape() == Shape{3, 8, 8});

  testing::TempDir ppm;
  write_corpus(imgs, ppm.path(), "ppm");
  CHECK(std::filesystem::exists(ppm / "img_00000.ppm"));
  CHECK(ingest_dir(ppm.path(), {3, 16, 16}).size() == 5);
}

TEST_CASE("ingest_dir sorts by byte value and skips other files") {
  testing::TempDir dir;
  const Shape s{3, 4, 4};
  save_image(Image(s, 0.2f), dir / "b.png");
  save_image(Image(s, 0.4f), dir / "B.png");
  save_image(Image(s, 0.6f), dir / "a.ppm");
  std::ofstream(dir / "notes.txt") << "not an image";
  const auto imgs = ingest_dir(dir.path(), s);
  REQUIRE(imgs.size() == 3);
  // "B.png" < "a.ppm" < "b.png" by byte value.
  CHECK(imgs[0].data()[0] == doctest::Approx(0.4).epsilon(0.01));
  CHECK(imgs[1].data()[0] == doctest::Approx(0.6).epsilon(0.01));
  CHECK(imgs[2].data()[0] == doctest::Approx(0.2).epsilon(0.01));
}

TEST_CASE("ingest_dir errors") {
  testing::TempDir empty;
  CHECK_THROWS_AS(ingest_dir(empty.path(), {3, 8, 8}), ConfigError);
  CHECK_THROWS_AS(ingest_dir(empty / "missing", {3, 8, 8}), IoError);
  testing::TempDir bad;
  std::ofstream(bad / "broken.png") << "garbage";
  try {
    ingest_dir(bad.path(), {3, 8, 8});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("broken.png") != std::string::npos);
  }
}
