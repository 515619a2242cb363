#include <doctest.h>

#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "support.hpp"
#include "weakmil/embedding.hpp"
#include "weakmil/errors.hpp"
#include "weakmil/feature_file.hpp"

using namespace weakmil;

TEST_CASE("rng draws are reproducible and serializable") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c = Rng::deserialize(a.serialize());
  CHECK(c == a);
  CHECK(c.uniform() == a.uniform());
  for (int i = 0; i < 1000; ++i) {
    double u = a.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(a.below(7) < 7u);
    int r = a.range(-2, 3);
    CHECK(r >= -2);
    CHECK(r <= 3);
  }
  std::vector<int> items{0, 1, 2, 3, 4, 5, 6, 7};
  a.shuffle(std::span<int>(items));
  CHECK(std::set<int>(items.begin(), items.end()).size() == 8);
  CHECK(derive_seed(1, 2) != derive_seed(1, 3));
  CHECK(derive_seed(1, 2) == derive_seed(1, 2));
}

TEST_CASE("normal draws have unit variance") {
  Rng rng(5);
  double sum = 0, sq = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    double x = rng.normal();
    sum += x;
    sq += x * x;
  }
  CHECK(std::abs(sum / n) < 0.05);
  CHECK(std::abs(sq / n - 1.0) < 0.05);
}

TEST_CASE("feature matrix rejects empty and non-finite data") {
  CHECK_THROWS_AS(FeatureMatrix(Matrix(3, 0)), ValidationError);
  Matrix bad = Matrix::Zero(2, 2);
  bad(1, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(FeatureMatrix{bad}, NumericError);
  bad(1, 1) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(FeatureMatrix{bad}, NumericError);
}

TEST_CASE("embedding config validation") {
  EmbeddingConfig c;
  c.dim = 1;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c.dim = 2;
  c.noise_sigma = -0.1;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c.noise_sigma = 0.0;
  c.camera_shift_sigma = -1;
  CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("make_prototypes") {
  EmbeddingConfig cfg;
  SUBCASE("single prototype has unit norm") {
    cfg.seed = 99;
    auto p = make_prototypes(1, cfg);
    REQUIRE(p.size() == 1);
    CHECK(p[0].direction.norm() == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("deterministic") {
    cfg.seed = 7;
    auto a = make_prototypes(5, cfg);
    auto b = make_prototypes(5, cfg);
    for (int i = 0; i < 5; ++i) {
      CHECK(a[i].identity_id == i);
      CHECK(a[i].direction == b[i].direction);
    }
  }
  SUBCASE("empty universe is an error") { CHECK_THROWS_AS(make_prototypes(0, cfg), ValidationError); }
  SUBCASE("prefix stable") {
    cfg.seed = 11;
    auto small = make_prototypes(4, cfg);
    auto large = make_prototypes(40, cfg);
    for (int i = 0; i < 4; ++i) CHECK(small[i].direction == large[i].direction);
  }
  SUBCASE("100 prototypes in 64 dims are spread out") {
    cfg.dim = 64;
    cfg.seed = 3;
    auto p = make_prototypes(100, cfg);
    double lo = 2, hi = -2;
    for (std::size_t i = 0; i < p.size(); ++i) {
      CHECK(std::abs(p[i].direction.norm() - 1.0) < 1e-9);
      for (std::size_t j = i + 1; j < p.size(); ++j) {
        double s = p[i].direction.dot(p[j].direction);
        lo = std::min(lo, s);
        hi = std::max(hi, s);
      }
    }
    CHECK(lo < 0.9);
    CHECK(hi < 0.9);
    // Regression fixture recorded from this generator.
    CHECK(lo == doctest::Approx(-0.48923367599696249).epsilon(1e-12));
    CHECK(hi == doctest::Approx(0.38041492175750841).epsilon(1e-12));
  }
}

TEST_CASE("sample_frame") {
  EmbeddingConfig cfg;
  cfg.dim = 64;
  cfg.seed = 0;
  SUBCASE("no noise and no camera shift returns the prototype") {
    cfg.noise_sigma = 0.0;
    auto p = make_prototypes(3, cfg);
    Rng rng(1);
    for (int cam = 0; cam < 3; ++cam) {
      Vector v = sample_frame(p[1], cam, cfg, rng);
      CHECK((v - p[1].direction).norm() < 1e-15);
    }
  }
  SUBCASE("every draw is unit norm") {
    cfg.noise_sigma = 0.7;
    cfg.camera_shift_sigma = 0.3;
    auto p = make_prototypes(2, cfg);
    Rng rng(2);
    for (int i = 0; i < 500; ++i) CHECK(std::abs(sample_frame(p[i % 2], i % 5, cfg, rng).norm() - 1.0) < 1e-9);
  }
  SUBCASE("mean cosine to the prototype") {
    // Per-coordinate noise sigma in d dims leaves a noise vector of norm about
    // sigma * sqrt(d - 1) orthogonal to the prototype, so the mean cosine sits
    // near 1 / sqrt(1 + (d - 1) sigma^2): 0.78 at sigma 0.1, 0.93 at 0.05.
    for (double sigma : {0.1, 0.05}) {
      cfg.noise_sigma = sigma;
      auto p = make_prototypes(1, cfg);
      Rng rng(0);
      double sum = 0;
      for (int i = 0; i < 1000; ++i) sum += sample_frame(p[0], 0, cfg, rng).dot(p[0].direction);
      const double mean = sum / 1000;
      const double predicted = 1.0 / std::sqrt(1.0 + 63.0 * sigma * sigma);
      CHECK(std::abs(mean - predicted) < 0.01);
      if (sigma == 0.1) CHECK(mean == doctest::Approx(0.78356132021912872).epsilon(1e-12));
      if (sigma == 0.05) CHECK(mean > 0.9);
    }
  }
}

TEST_CASE("camera bias") {
  EmbeddingConfig cfg;
  cfg.dim = 8;
  cfg.seed = 4;
  CHECK(camera_bias(3, cfg).isZero());
  cfg.camera_shift_sigma = 0.2;
  CHECK(camera_bias(3, cfg) == camera_bias(3, cfg));
  CHECK(camera_bias(3, cfg) != camera_bias(4, cfg));
  CHECK(camera_bias(3, cfg).size() == 8);
}

TEST_CASE("synthetic provider streams are deterministic") {
  EmbeddingConfig cfg;
  cfg.dim = 16;
  cfg.noise_sigma = 0.2;
  cfg.seed = 8;
  SyntheticProvider prov(cfg, 5);
  CHECK(prov.dim() == 16);
  CHECK(prov.identities() == 5);
  Rng a(3), b(3);
  FeatureMatrix x = prov.tracklet(2, 1, 7, a);
  CHECK(x.dim() == 16);
  CHECK(x.frames() == 7);
  CHECK(x == prov.tracklet(2, 1, 7, b));
  CHECK_THROWS_AS(prov.tracklet(5, 0, 3, a), ValidationError);
}

TEST_CASE("feature file round trip") {
  SUBCASE("one bag, d=4, n=2, bit exact") {
    testing::TempDir dir;
    std::map<int, FeatureMatrix> bags;
    bags.emplace(3, testing::features({{0.5, -1.25, 3.0, 0.125}, {1e-3, 2.5e-7, -7.0, 0.1}}));
    save_features(dir.file("f.txt"), bags);
    auto back = load_features(dir.file("f.txt"));
    REQUIRE(back.size() == 1);
    CHECK(back.at(3) == bags.at(3));
  }
  SUBCASE("written text is a fixed point") {
    Rng rng(12);
    std::map<int, FeatureMatrix> bags;
    bags.emplace(0, FeatureMatrix(testing::gaussian(6, 5, rng)));
    bags.emplace(9, FeatureMatrix(testing::gaussian(6, 1, rng)));
    testing::TempDir dir;
    save_features(dir.file("a.txt"), bags);
    auto once = load_features(dir.file("a.txt"));
    save_features(dir.file("b.txt"), once);
    CHECK(testing::slurp(dir.file("a.txt")) == testing::slurp(dir.file("b.txt")));
    auto twice = load_features(dir.file("b.txt"));
    CHECK(twice.at(0) == once.at(0));
    for (Eigen::Index i = 0; i < bags.at(0).matrix().size(); ++i) {
      CHECK(std::abs(once.at(0).matrix()(i) - bags.at(0).matrix()(i)) <=
            5e-9 * std::abs(bags.at(0).matrix()(i)));
    }
  }
  SUBCASE("short row is a dimension mismatch") {
    std::ostringstream text;
    text << "dims d=64\nbag 0 camera=0 n=1\n";
    for (int i = 0; i < 63; ++i) text << (i ? " " : "") << "0.5";
    text << "\nframes -1\ntracks 1\nlabels\n";
    std::istringstream in(text.str());
    CHECK_THROWS_AS(read_feature_file(in), DimensionMismatchError);
  }
  SUBCASE("nan payload") {
    std::istringstream in("dims d=2\nbag 0 camera=0 n=1\n0.5 nan\nframes -1\ntracks 1\nlabels\n");
    CHECK_THROWS_AS(read_feature_file(in), NanPayloadError);
  }
  SUBCASE("malformed header") {
    std::istringstream in("dims 4\n");
    CHECK_THROWS_AS(read_feature_file(in), ParseError);
  }
  SUBCASE("empty file is an empty map") {
    testing::TempDir dir;
    { std::ofstream(dir.file("empty.txt")); }
    CHECK(load_features(dir.file("empty.txt")).empty());
  }
  SUBCASE("full records keep metadata") {
    std::istringstream in(
        "dims d=2\nbag 4 camera=2 n=3\n1 0\n0 1\n0.5 0.5\nframes 1 1 -1\ntracks 2,1\nlabels 1\n");
    FeatureFile f = read_feature_file(in);
    REQUIRE(f.records.size() == 1);
    const auto& r = f.records[0];
    CHECK(r.bag_id == 4);
    CHECK(r.camera_id == 2);
    CHECK(r.frame_ids == std::vector<int>{1, 1, -1});
    CHECK(r.track_runs == std::vector<int>{2, 1});
    CHECK(r.labels == std::vector<int>{1});
    std::ostringstream out;
    write_feature_file(out, f);
    std::istringstream again(out.str());
    FeatureFile g = read_feature_file(again);
    CHECK(g.records[0].features == r.features);
  }
}

TEST_CASE("precomputed provider prefers the requested camera") {
  std::istringstream in(
      "dims d=2\n"
      "bag 0 camera=0 n=2\n1 0\n1 0\nframes 0 0\ntracks 2\nlabels 0\n"
      "bag 1 camera=1 n=2\n0 1\n0 1\nframes 0 0\ntracks 2\nlabels 0\n");
  PrecomputedProvider prov(read_feature_file(in));
  CHECK(prov.dim() == 2);
  CHECK(prov.identities() == 1);
  Rng rng(1);
  FeatureMatrix x = prov.tracklet(0, 1, 5, rng);
  for (Eigen::Index t = 0; t < x.frames(); ++t) CHECK(x.col(t) == Vector::Unit(2, 1));
  FeatureMatrix y = prov.tracklet(0, 7, 3, rng);
  CHECK(y.frames() == 3);
}
