#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "support.hpp"
#include "weakmil/cpal.hpp"
#include "weakmil/errors.hpp"

using namespace weakmil;

namespace {

double cos_of(const Vector& a, const Vector& b) { return a.dot(b) / (a.norm() * b.norm()); }

// Straight re-derivation of the pair loss from the attention pooled features.
double reference_pair(const Matrix& xm, const Vector& lm, const Matrix& xn, const Vector& ln, double margin,
                      bool standard) {
  auto pool = [](const Matrix& x, const Vector& logits, Vector& high, Vector& low) {
    Vector e = logits.array().exp();
    Vector a = e / e.sum();
    high = x * a;
    low = x * (Vector::Ones(a.size()) - a) / static_cast<double>(a.size() - 1);
  };
  Vector hm, lowm, hn, lown;
  pool(xm, lm, hm, lowm);
  pool(xn, ln, hn, lown);
  const double hh = cos_of(hm, hn);
  const double s = standard ? 1.0 : -1.0;
  return 0.5 * (std::max(0.0, margin + s * (cos_of(hm, lown) - hh)) +
                std::max(0.0, margin + s * (cos_of(lowm, hn) - hh)));
}

Vector random_vector(Eigen::Index n, Rng& rng) { return testing::gaussian(n, 1, rng).col(0); }

}  // namespace

TEST_CASE("frame attention") {
  SUBCASE("equal logits are uniform") {
    Vector a = frame_attention_row(Vector::Constant(5, 3.0));
    CHECK((a - Vector::Constant(5, 0.2)).norm() < 1e-15);
  }
  SUBCASE("rows sum to one and stay finite for large logits") {
    Rng rng(1);
    Matrix w = testing::gaussian(4, 7, rng, 300.0);
    AttentionMatrix a = frame_attention(w);
    CHECK(a.allFinite());
    for (Eigen::Index j = 0; j < 4; ++j) CHECK(std::abs(a.row(j).sum() - 1.0) < 1e-12);
    CHECK((a.array() >= 0).all());
  }
  SUBCASE("shift invariant") {
    Vector l(3);
    l << 0.1, -2, 4;
    CHECK((frame_attention_row(l) - frame_attention_row(l.array() + 50.0)).norm() < 1e-15);
  }
  CHECK_THROWS_AS(frame_attention_row(Vector()), ShapeError);
}

TEST_CASE("attention features") {
  SUBCASE("uniform attention over two frames") {
    FeatureMatrix x = testing::features({{1, 0}, {0, 1}});
    AttentionFeatures f = attention_features(x, Vector::Constant(2, 0.5));
    CHECK((f.high() - Vector::Constant(2, 0.5)).norm() < 1e-15);
    CHECK((f.low() - Vector::Constant(2, 0.5)).norm() < 1e-15);
  }
  SUBCASE("all attention on one frame") {
    FeatureMatrix x = testing::features({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
    Vector a(3);
    a << 1, 0, 0;
    AttentionFeatures f = attention_features(x, a);
    CHECK(f.high() == x.col(0));
    Vector low(3);
    low << 0, 0.5, 0.5;
    CHECK((f.low() - low).norm() < 1e-15);
  }
  SUBCASE("single frame has no low feature") {
    FeatureMatrix x = testing::features({{0.3, 0.4}});
    AttentionFeatures f = attention_features(x, Vector::Ones(1));
    CHECK(!f.has_low());
    CHECK(f.high() == x.col(0));
    CHECK_THROWS_AS(f.low(), UndefinedLowError);
  }
  SUBCASE("mass of the low weights is one") {
    Rng rng(2);
    Vector a = frame_attention_row(random_vector(6, rng));
    Vector rest = (Vector::Ones(6) - a) / 5.0;
    CHECK(std::abs(rest.sum() - 1.0) < 1e-15);
  }
  CHECK_THROWS_AS(attention_features(testing::features({{1, 0}}), Vector::Ones(2)), ShapeError);
}

TEST_CASE("cosine similarity") {
  Vector a(2), b(2);
  a << 1, 0;
  b << 0, 2;
  CHECK(cosine_sim(a, b) == 0.0);
  CHECK(cosine_sim(a, 3 * a) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(cosine_sim(a, Vector::Zero(2)), NumericError);
  CHECK_THROWS_AS(cosine_sim(a, Vector::Zero(3)), ShapeError);
}

TEST_CASE("pair loss values") {
  SUBCASE("identical bags with uniform attention sit at the margin") {
    FeatureMatrix x = testing::features({{1, 0}, {0, 1}});
    Vector l = Vector::Zero(2);
    // high == low for uniform attention, so every similarity is 1.
    CHECK(cpal_pair_loss(x, l, x, l).value == doctest::Approx(0.5).epsilon(1e-15));
    CpalOptions o;
    o.sign = HingeSign::inverted;
    CHECK(cpal_pair_loss(x, l, x, l, o).value == doctest::Approx(0.5).epsilon(1e-15));
  }
  SUBCASE("well separated pair incurs no loss under the standard sign") {
    // The shared person dominates attention in both bags and the rest points elsewhere.
    FeatureMatrix xm = testing::features({{1, 0, 0}, {0, 1, 0}, {0, 1, 0}});
    FeatureMatrix xn = testing::features({{1, 0, 0}, {0, 0, 1}, {0, 0, 1}});
    Vector l(3);
    l << 20, 0, 0;
    CpalOptions o;
    o.margin = 0.5;
    CHECK(cpal_pair_loss(xm, l, xn, l, o).value < 1e-12);
    o.sign = HingeSign::inverted;
    CHECK(cpal_pair_loss(xm, l, xn, l, o).value > 0.9);
  }
  SUBCASE("matches an independent computation") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(seed);
      Matrix xm = testing::gaussian(4, 5, rng);
      Matrix xn = testing::gaussian(4, 3, rng);
      Vector lm = random_vector(5, rng);
      Vector ln = random_vector(3, rng);
      for (bool standard : {true, false}) {
        CpalOptions o;
        o.margin = 0.3;
        o.sign = standard ? HingeSign::standard : HingeSign::inverted;
        const double got = cpal_pair_loss(FeatureMatrix(xm), lm, FeatureMatrix(xn), ln, o).value;
        CHECK(got == doctest::Approx(reference_pair(xm, lm, xn, ln, 0.3, standard)).epsilon(1e-12));
      }
    }
  }
  SUBCASE("single-frame bag") {
    FeatureMatrix one = testing::features({{1, 0}});
    FeatureMatrix two = testing::features({{1, 0}, {0, 1}});
    CHECK_THROWS_AS(cpal_pair_loss(one, Vector::Zero(1), two, Vector::Zero(2)), UndefinedLowError);
  }
}

TEST_CASE("pair loss gradients") {
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    Matrix xm = testing::gaussian(4, 5, rng);
    Matrix xn = testing::gaussian(4, 4, rng);
    Vector lm = random_vector(5, rng);
    Vector ln = random_vector(4, rng);
    CpalOptions o;
    o.margin = 0.4;
    o.sign = seed % 2 ? HingeSign::inverted : HingeSign::standard;
    PairLoss r = cpal_pair_loss(FeatureMatrix(xm), lm, FeatureMatrix(xn), ln, o);
    if (r.min_hinge_gap < 1e-3) continue;
    const bool standard = o.sign == HingeSign::standard;
    const double h = 1e-6;
    auto f = [&](const Matrix& a, const Vector& la, const Matrix& b, const Vector& lb) {
      return reference_pair(a, la, b, lb, 0.4, standard);
    };
    for (Eigen::Index t = 0; t < 5; ++t) {
      Vector up = lm, dn = lm;
      up[t] += h;
      dn[t] -= h;
      CHECK(r.grad_logits_m[t] == doctest::Approx((f(xm, up, xn, ln) - f(xm, dn, xn, ln)) / (2 * h)).epsilon(1e-6));
    }
    for (Eigen::Index t = 0; t < 4; ++t) {
      Vector up = ln, dn = ln;
      up[t] += h;
      dn[t] -= h;
      CHECK(r.grad_logits_n[t] == doctest::Approx((f(xm, lm, xn, up) - f(xm, lm, xn, dn)) / (2 * h)).epsilon(1e-6));
    }
    // Feature gradient with the attention held fixed: perturb X but keep the
    // logits, which is how the adapter path sees it.
    for (Eigen::Index i = 0; i < xm.size(); ++i) {
      Matrix up = xm, dn = xm;
      up(i) += h;
      dn(i) -= h;
      CHECK(r.grad_features_m(i) ==
            doctest::Approx((f(up, lm, xn, ln) - f(dn, lm, xn, ln)) / (2 * h)).epsilon(1e-6));
    }
    ++checked;
  }
  CHECK(checked >= 10);
}

TEST_CASE("enumerate_pairs") {
  std::vector<BagView> batch{
      testing::view(0, {0, 1}, testing::features({{1, 0}})),
      testing::view(1, {1, 2}, testing::features({{1, 0}})),
      testing::view(2, {0, 1, 2}, testing::features({{1, 0}})),
      testing::view(3, {5}, testing::features({{1, 0}})),
  };
  auto pairs = enumerate_pairs(batch);
  REQUIRE(pairs.size() == 5);
  CHECK((pairs[0].bag_m == 0 && pairs[0].bag_n == 1 && pairs[0].identity == 1));
  CHECK((pairs[1].bag_m == 0 && pairs[1].bag_n == 2 && pairs[1].identity == 0));
  CHECK((pairs[2].bag_m == 0 && pairs[2].bag_n == 2 && pairs[2].identity == 1));
  CHECK((pairs[3].bag_m == 1 && pairs[3].bag_n == 2 && pairs[3].identity == 1));
  CHECK((pairs[4].bag_m == 1 && pairs[4].bag_n == 2 && pairs[4].identity == 2));
  CHECK(enumerate_pairs(std::span<const BagView>(batch).subspan(3, 1)).empty());
}

TEST_CASE("cpal_total reduction") {
  Rng rng(7);
  ProjectionParams p = testing::random_params(3, 4, rng);
  auto bag = [&](int id, std::vector<int> labels, int n) {
    return testing::view(id, std::move(labels), FeatureMatrix(testing::gaussian(4, n, rng)));
  };
  std::vector<BagView> batch{bag(0, {0, 1}, 5), bag(1, {0, 1}, 4), bag(2, {0}, 6), bag(3, {2}, 3)};
  CpalTotal total = cpal_total(batch, p);
  CHECK(total.identities == 2);
  CHECK(total.valid_pairs == 4);
  CHECK(!total.no_pairs);

  // Identity 0 has three pairs, identity 1 has one.
  auto pair_value = [&](int m, int n, int j) {
    return cpal_pair_loss(batch[m].features, project(p, batch[m].features).row(j).transpose(), batch[n].features,
                          project(p, batch[n].features).row(j).transpose())
        .value;
  };
  const double id0 = (pair_value(0, 1, 0) + pair_value(0, 2, 0) + pair_value(1, 2, 0)) / 3.0;
  const double id1 = pair_value(0, 1, 1);
  CHECK(total.value == doctest::Approx(0.5 * (id0 + id1)).epsilon(1e-13));
}

TEST_CASE("cpal_total edge cases") {
  ProjectionParams p = ProjectionParams::zeros(2, 2);
  SUBCASE("no shared identity") {
    std::vector<BagView> batch{testing::view(0, {0}, testing::features({{1, 0}, {0, 1}})),
                               testing::view(1, {1}, testing::features({{1, 0}, {0, 1}}))};
    CpalTotal t = cpal_total(batch, p);
    CHECK(t.no_pairs);
    CHECK(t.value == 0.0);
    CHECK(t.grad.weight.isZero());
    CHECK(t.skipped_single_frame == 0);
  }
  SUBCASE("single-frame pairs are skipped") {
    std::vector<BagView> batch{testing::view(0, {0}, testing::features({{1, 0}})),
                               testing::view(1, {0}, testing::features({{1, 0}, {0, 1}}))};
    CpalTotal t = cpal_total(batch, p);
    CHECK(t.skipped_single_frame == 1);
    CHECK(t.valid_pairs == 0);
    CHECK(t.no_pairs);
    CHECK(t.value == 0.0);
  }
  SUBCASE("a skipped pair does not dilute the others") {
    std::vector<BagView> batch{testing::view(0, {0}, testing::features({{1, 0}})),
                               testing::view(1, {0}, testing::features({{1, 0}, {0, 1}})),
                               testing::view(2, {0}, testing::features({{1, 0}, {0, 1}}))};
    CpalTotal t = cpal_total(batch, p);
    CHECK(t.skipped_single_frame == 2);
    CHECK(t.valid_pairs == 1);
    CHECK(t.value == doctest::Approx(0.5).epsilon(1e-15));
  }
  SUBCASE("identity outside the projection") {
    std::vector<BagView> batch{testing::view(0, {4}, testing::features({{1, 0}, {0, 1}})),
                               testing::view(1, {4}, testing::features({{1, 0}, {0, 1}}))};
    CHECK_THROWS_AS(cpal_total(batch, p), ValidationError);
  }
}

TEST_CASE("cpal_total gradient matches central differences") {
  int checked = 0;
  for (bool adapter : {false, true}) {
    for (std::uint64_t seed = 0; seed < 12; ++seed) {
      CAPTURE(adapter);
      CAPTURE(seed);
      Rng rng(seed + 100);
      ProjectionParams p = testing::random_params(3, 4, rng, adapter);
      std::vector<BagView> batch;
      for (int b = 0; b < 4; ++b) {
        std::vector<int> labels{b % 3, (b + 1) % 3};
        std::sort(labels.begin(), labels.end());
        batch.push_back(testing::view(b, labels, FeatureMatrix(testing::gaussian(4, 3 + b, rng))));
      }
      CpalOptions o;
      o.margin = 0.3;
      o.sign = seed % 2 ? HingeSign::inverted : HingeSign::standard;
      CpalTotal t = cpal_total(batch, p, o);
      if (t.min_hinge_gap < 1e-3) continue;
      auto numeric =
          testing::finite_difference([&](const ProjectionParams& q) { return cpal_total(batch, q, o).value; }, p);
      // Rows of identities without pairs are exactly zero analytically and
      // carry rounding noise numerically, hence the looser bound.
      CHECK(testing::worst_rel_err(t.grad, numeric) < 1e-5);
      ++checked;
    }
  }
  CHECK(checked >= 12);
}
