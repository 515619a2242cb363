#include <doctest.h>

#include <cmath>
#include <sstream>

#include "support.hpp"
#include "weakmil/errors.hpp"
#include "weakmil/evalkit.hpp"

using namespace weakmil;

namespace {

RetrievalResult result(int id, std::vector<char> matches) {
  RetrievalResult r;
  r.probe_id = id;
  r.matches = std::move(matches);
  for (std::size_t i = 0; i < r.matches.size(); ++i) {
    r.ranked_ids.push_back(static_cast<int>(i));
    r.distances.push_back(static_cast<double>(i));
  }
  return r;
}

// AP as the area under the interpolation-free precision/recall steps.
double oracle_ap(const std::vector<char>& m) {
  int total = 0;
  for (char c : m) total += c;
  if (!total) return 0.0;
  double area = 0.0;
  int hits = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!m[i]) continue;
    ++hits;
    area += (1.0 / total) * hits / static_cast<double>(i + 1);
  }
  return area;
}

Dataset eval_dataset(std::uint64_t seed, int first_bag_id, int bags, int min_per_identity) {
  EmbeddingConfig ecfg;
  ecfg.dim = 12;
  ecfg.noise_sigma = 0.05;
  ecfg.seed = 77;
  SyntheticProvider prov(ecfg, 6);
  BuildConfig cfg;
  cfg.n_bags = bags;
  cfg.seed = seed;
  cfg.first_bag_id = first_bag_id;
  cfg.min_bags_per_identity = min_per_identity;
  return build_weak_dataset(prov, 6, cfg);
}

}  // namespace

TEST_CASE("average precision") {
  CHECK(average_precision(result(0, {1, 0, 0})) == 1.0);
  CHECK(average_precision(result(0, {0, 1, 0, 1})) == doctest::Approx(0.5));
  CHECK(average_precision(result(0, {0, 0, 1})) == doctest::Approx(1.0 / 3.0));
  CHECK(average_precision(result(0, {1, 0, 1})) == doctest::Approx((1.0 + 2.0 / 3.0) / 2.0));
  CHECK(average_precision(result(0, {0, 0})) == 0.0);
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    std::vector<char> m(1 + rng.below(15));
    for (auto& c : m) c = rng.uniform() < 0.3;
    CHECK(average_precision(result(0, m)) == doctest::Approx(oracle_ap(m)).epsilon(1e-12));
  }
}

TEST_CASE("cmc and map") {
  std::vector<RetrievalResult> rs{result(0, {1, 0, 0}), result(1, {0, 1, 1}), result(2, {0, 0, 0}),
                                  result(3, {0, 0, 1})};
  MetricsReport rep = cmc_map(rs, 5);
  CHECK(rep.evaluated == 3);
  CHECK(rep.skipped == 1);
  REQUIRE(rep.cmc.size() == 5);
  CHECK(rep.rank(1) == doctest::Approx(1.0 / 3.0));
  CHECK(rep.rank(2) == doctest::Approx(2.0 / 3.0));
  CHECK(rep.rank(3) == 1.0);
  CHECK(rep.rank(5) == 1.0);
  CHECK(rep.rank(50) == 1.0);
  const double ap1 = (0.5 + 2.0 / 3.0) / 2.0;
  CHECK(rep.map == doctest::Approx((1.0 + ap1 + 1.0 / 3.0) / 3.0));
  for (std::size_t i = 1; i < rep.cmc.size(); ++i) CHECK(rep.cmc[i] >= rep.cmc[i - 1]);

  CHECK_THROWS_AS(cmc_map(std::span<const RetrievalResult>{}, 5), ValidationError);
  std::vector<RetrievalResult> none{result(0, {0, 0})};
  CHECK_THROWS_AS(cmc_map(none, 5), ValidationError);
  CHECK_THROWS_AS(cmc_map(rs, 0), ValidationError);
}

TEST_CASE("coarse ranking") {
  ProbeQuery q{0, testing::features({{0, 0}, {2, 0}}), 3, 0};
  CHECK(probe_feature(q) == Vector::Unit(2, 0));
  std::vector<GalleryBag> gallery{
      {10, testing::features({{5, 5}, {1, 1}}), {1, 3}, 1},     // nearest frame at distance 1
      {11, testing::features({{1, 0.5}}), {2}, 1},              // distance 0.5
      {12, testing::features({{9, 9}, {1, -0.5}}), {3}, 0},     // distance 0.5, tie broken by id
  };
  CHECK(coarse_distance(probe_feature(q), gallery[0].features) == doctest::Approx(1.0));
  RetrievalResult r = coarse_rank(q, gallery);
  CHECK(r.ranked_ids == std::vector<int>{11, 12, 10});
  CHECK(r.matches == std::vector<char>{0, 1, 1});
  CHECK(r.has_match());
  CHECK(coarse_distance(Vector::Zero(2), testing::features({{3, 4}})) == 5.0);
  CHECK_THROWS_AS(coarse_distance(Vector::Zero(3), testing::features({{3, 4}})), ShapeError);
}

TEST_CASE("fine ranking") {
  ProbeQuery q{0, testing::features({{0, 0}}), 1, 2};
  std::vector<GalleryTracklet> gallery{
      {0, testing::features({{0.1, 0}}), 1, 2},  // same identity, same camera
      {1, testing::features({{0.2, 0}}), 4, 2},  // other identity, same camera
      {2, testing::features({{0.3, 0}, {0.5, 0}}), 1, 3},
  };
  RetrievalResult r = fine_rank(q, gallery);
  CHECK(r.ranked_ids == std::vector<int>{1, 2});
  CHECK(r.matches == std::vector<char>{0, 1});
  CHECK(r.distances[1] == doctest::Approx(0.4));
  RetrievalResult kept = fine_rank(q, gallery, FineOptions{false});
  CHECK(kept.ranked_ids == std::vector<int>{0, 1, 2});
}

TEST_CASE("probe and gallery construction") {
  Dataset probe = eval_dataset(1, 1000, 6, 1);
  auto probes = make_probes(probe);
  std::size_t tracklets = 0;
  for (const auto& bag : probe.bags) tracklets += bag.tracklets.size();
  CHECK(probes.size() == tracklets);
  for (std::size_t i = 0; i < probes.size(); ++i) CHECK(probes[i].probe_id == static_cast<int>(i));
  auto bags = make_gallery_bags(probe);
  CHECK(bags.size() == probe.bags.size());
  CHECK(bags[0].occupants == probe.bags[0].weak_labels);
  CHECK(make_gallery_tracklets(probe).size() == tracklets);

  Rng rng(2);
  Dataset noisy = corrupt_dataset(probe, Corruption::noisy, rng);
  bool mixed = false;
  for (const auto& bag : noisy.bags) {
    for (const auto& tr : bag.tracklets) mixed |= tr.identity < 0;
  }
  if (mixed) {
    CHECK_THROWS_AS(make_gallery_tracklets(noisy), ValidationError);
    CHECK_NOTHROW(make_gallery_tracklets(noisy, true));
  }
}

TEST_CASE("embedding spaces") {
  Rng rng(3);
  ProjectionParams p = testing::random_params(3, 4, rng, true);
  FeatureMatrix x(testing::gaussian(4, 5, rng));
  CHECK(embed(x, p, EmbeddingSpace::raw) == x);
  CHECK(embed(x, p, EmbeddingSpace::features).matrix() == p.adapter * x.matrix());
  CHECK(embed(x, p, EmbeddingSpace::activations).dim() == 3);
  for (auto s : {EmbeddingSpace::activations, EmbeddingSpace::features, EmbeddingSpace::raw}) {
    CHECK(embedding_space_from_string(to_string(s)) == s);
  }
  CHECK_THROWS_AS(embedding_space_from_string("pixels"), ValidationError);
  CHECK(protocol_from_string("fine") == Protocol::fine);
  CHECK_THROWS_AS(protocol_from_string("medium"), ValidationError);
}

TEST_CASE("evaluate") {
  Dataset probe = eval_dataset(1, 1000, 8, 1);
  Dataset gallery = eval_dataset(2, 2000, 12, 2);
  Rng rng(4);
  ProjectionParams p = ProjectionParams::initialize(6, 12, rng);

  SUBCASE("raw space on clean data retrieves well") {
    EvalOptions o;
    o.space = EmbeddingSpace::raw;
    for (Protocol pr : {Protocol::coarse, Protocol::fine}) {
      o.protocol = pr;
      Evaluation ev = evaluate(p, probe, gallery, o);
      CHECK(ev.report.rank(1) > 0.9);
      CHECK(ev.report.map > 0.5);
    }
  }
  SUBCASE("thread count does not change results") {
    EvalOptions o;
    o.protocol = Protocol::coarse;
    o.threads = 1;
    Evaluation one = evaluate(p, probe, gallery, o);
    o.threads = 4;
    Evaluation four = evaluate(p, probe, gallery, o);
    REQUIRE(one.results.size() == four.results.size());
    for (std::size_t i = 0; i < one.results.size(); ++i) {
      CHECK(one.results[i].probe_id == static_cast<int>(i));
      CHECK(one.results[i].ranked_ids == four.results[i].ranked_ids);
      CHECK(one.results[i].distances == four.results[i].distances);
    }
    CHECK(one.report.map == four.report.map);
  }
  SUBCASE("dimension mismatch") {
    ProjectionParams q = ProjectionParams::zeros(6, 5);
    CHECK_THROWS_AS(evaluate(q, probe, gallery, EvalOptions{}), ShapeError);
  }
  SUBCASE("unmatched probes are reported") {
    Dataset small = gallery;
    small.bags.erase(small.bags.begin() + 1, small.bags.end());
    std::vector<std::string> warnings;
    EvalOptions o;
    o.protocol = Protocol::coarse;
    try {
      Evaluation ev = evaluate(p, probe, small, o, [&](const std::string& w) { warnings.push_back(w); });
      CHECK(ev.report.skipped > 0);
    } catch (const ValidationError&) {
      // Every probe missed the single gallery bag.
    }
    CHECK(!warnings.empty());
  }
}

TEST_CASE("ablation sweep") {
  Dataset train_set = eval_dataset(5, 0, 20, 2);
  Dataset probe = eval_dataset(6, 1000, 6, 1);
  Dataset gallery = eval_dataset(7, 2000, 12, 2);
  TrainConfig base;
  base.epochs = 1;
  base.batch_size = 5;
  base.min_co_pairs = 1;
  AblationData data{train_set, probe, gallery};
  std::vector<std::string> values{"0", "0.5", "1"};
  std::vector<std::uint64_t> seeds{1, 2};
  auto rows = ablation_sweep(data, base, AblationAxis::lambda, values, seeds);
  CHECK(rows.size() == 3 * 2 * 2);
  CHECK(rows[0].protocol == "coarse");
  CHECK(rows[1].protocol == "fine");
  CHECK(rows[0].value == "0");
  CHECK(rows[2].seed == 2);
  for (const auto& r : rows) {
    CHECK(r.rank1 <= r.rank5);
    CHECK(r.rank10 <= r.rank20);
  }

  data.protocols = {Protocol::fine};
  std::vector<std::string> losses{"MIL", "CPAL", "MIL+CPAL"};
  CHECK(ablation_sweep(data, base, AblationAxis::loss, losses, std::span(seeds).first(1)).size() == 3);

  std::vector<std::string> bad_k{"2.5"};
  CHECK_THROWS_AS(ablation_sweep(data, base, AblationAxis::k, bad_k, seeds), ValidationError);
  std::vector<std::string> bad_loss{"MIL-only"};
  CHECK_THROWS_AS(ablation_sweep(data, base, AblationAxis::loss, bad_loss, seeds), ValidationError);
  std::vector<std::string> missing{"missing"};
  CHECK_THROWS_AS(ablation_sweep(data, base, AblationAxis::corruption, missing, seeds), ValidationError);
  std::vector<std::string> corr{"none", "noisy", "tracklet"};
  CHECK(ablation_sweep(data, base, AblationAxis::corruption, corr, std::span(seeds).first(1)).size() == 3);
  data.protocols.clear();
  CHECK_THROWS_AS(ablation_sweep(data, base, AblationAxis::lambda, values, seeds), ValidationError);

  std::ostringstream out;
  write_metrics_csv(out, rows);
  std::string header;
  std::istringstream in(out.str());
  std::getline(in, header);
  CHECK(header == "protocol,axis,value,seed,rank1,rank5,rank10,rank20,map");
}

TEST_CASE("cmc csv") {
  std::vector<RetrievalResult> rs{result(0, {0, 1})};
  std::ostringstream out;
  write_cmc_csv(out, cmc_map(rs, 3));
  CHECK(out.str() == "rank,cmc\n1,0\n2,1\n3,1\n");
}
