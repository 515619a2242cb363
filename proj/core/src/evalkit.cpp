#include "weakmil/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <functional>
#include <limits>
#include <numeric>
#include <ostream>
#include <thread>

#include "weakmil/errors.hpp"
#include "weakmil/format.hpp"

namespace weakmil {
namespace {

constexpr std::uint64_t kCorruptionStream = 0x636f7272ULL;

struct Scored {
  int id;
  double distance;
  bool match;
};

RetrievalResult finish(int probe_id, std::vector<Scored> scored) {
  std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return a.id < b.id;
  });
  RetrievalResult r;
  r.probe_id = probe_id;
  for (const auto& s : scored) {
    r.ranked_ids.push_back(s.id);
    r.distances.push_back(s.distance);
    r.matches.push_back(s.match ? 1 : 0);
  }
  return r;
}

Vector column_mean(const FeatureMatrix& x) {
  Vector sum = Vector::Zero(x.dim());
  for (Eigen::Index t = 0; t < x.frames(); ++t) sum += x.col(t);
  return sum / static_cast<double>(x.frames());
}

double parse_real(const std::string& s) {
  std::size_t pos = 0;
  double v = 0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw ValidationError("expected a number, got '" + s + "'");
  }
  if (pos != s.size()) throw ValidationError("expected a number, got '" + s + "'");
  return v;
}

}  // namespace

std::string to_string(EmbeddingSpace s) {
  switch (s) {
    case EmbeddingSpace::activations: return "activations";
    case EmbeddingSpace::features: return "features";
    case EmbeddingSpace::raw: return "raw";
  }
  return "activations";
}

EmbeddingSpace embedding_space_from_string(const std::string& s) {
  if (s == "activations") return EmbeddingSpace::activations;
  if (s == "features") return EmbeddingSpace::features;
  if (s == "raw") return EmbeddingSpace::raw;
  throw ValidationError("unknown embedding space '" + s + "' (expected activations, features or raw)");
}

FeatureMatrix embed(const FeatureMatrix& x, const ProjectionParams& params, EmbeddingSpace space) {
  switch (space) {
    case EmbeddingSpace::raw: return x;
    case EmbeddingSpace::features: return FeatureMatrix(adapted_features(params, x));
    case EmbeddingSpace::activations: break;
  }
  return FeatureMatrix(project(params, x));
}

bool RetrievalResult::has_match() const {
  return std::find(matches.begin(), matches.end(), 1) != matches.end();
}

Vector probe_feature(const ProbeQuery& q) { return column_mean(q.frames); }

double coarse_distance(const Vector& probe, const FeatureMatrix& gallery_bag) {
  if (probe.size() != gallery_bag.dim()) throw ShapeError("probe and gallery dimensions differ");
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index r = 0; r < gallery_bag.frames(); ++r) {
    best = std::min(best, (gallery_bag.col(r) - probe).norm());
  }
  return best;
}

RetrievalResult coarse_rank(const ProbeQuery& probe, std::span<const GalleryBag> gallery) {
  Vector xp = probe_feature(probe);
  std::vector<Scored> scored;
  scored.reserve(gallery.size());
  for (const auto& g : gallery) {
    bool match = std::binary_search(g.occupants.begin(), g.occupants.end(), probe.identity);
    scored.push_back({g.bag_id, coarse_distance(xp, g.features), match});
  }
  return finish(probe.probe_id, std::move(scored));
}

RetrievalResult fine_rank(const ProbeQuery& probe, std::span<const GalleryTracklet> gallery,
                          const FineOptions& opts) {
  Vector xp = probe_feature(probe);
  std::vector<Scored> scored;
  scored.reserve(gallery.size());
  for (const auto& g : gallery) {
    const bool same_id = g.identity == probe.identity;
    if (opts.exclude_same_camera && same_id && g.camera_id == probe.camera_id) continue;
    if (g.frames.dim() != xp.size()) throw ShapeError("probe and gallery dimensions differ");
    scored.push_back({g.tracklet_id, (column_mean(g.frames) - xp).norm(), same_id});
  }
  return finish(probe.probe_id, std::move(scored));
}

double MetricsReport::rank(int r) const {
  if (cmc.empty() || r < 1) return 0.0;
  return cmc[static_cast<std::size_t>(std::min<int>(r, static_cast<int>(cmc.size())) - 1)];
}

double average_precision(const RetrievalResult& r) {
  double sum = 0.0;
  int hits = 0;
  for (std::size_t i = 0; i < r.matches.size(); ++i) {
    if (r.matches[i]) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
  }
  return hits ? sum / hits : 0.0;
}

MetricsReport cmc_map(std::span<const RetrievalResult> results, int max_rank) {
  if (results.empty()) throw ValidationError("cmc_map needs at least one retrieval result");
  if (max_rank < 1) throw ValidationError("max_rank must be >= 1");
  MetricsReport rep;
  std::vector<int> first_hits(static_cast<std::size_t>(max_rank), 0);
  for (const auto& r : results) {
    if (!r.has_match()) {
      ++rep.skipped;
      continue;
    }
    ++rep.evaluated;
    auto first = static_cast<std::size_t>(std::find(r.matches.begin(), r.matches.end(), 1) - r.matches.begin());
    if (first < first_hits.size()) ++first_hits[first];
    rep.ap.push_back(average_precision(r));
  }
  if (rep.evaluated == 0) throw ValidationError("no retrieval result has a true match");
  rep.cmc.resize(static_cast<std::size_t>(max_rank));
  int cumulative = 0;
  for (std::size_t i = 0; i < first_hits.size(); ++i) {
    cumulative += first_hits[i];
    rep.cmc[i] = static_cast<double>(cumulative) / rep.evaluated;
  }
  double sum = 0.0;
  for (double ap : rep.ap) sum += ap;
  rep.map = sum / rep.evaluated;
  return rep;
}

std::string to_string(Protocol p) { return p == Protocol::coarse ? "coarse" : "fine"; }

Protocol protocol_from_string(const std::string& s) {
  if (s == "coarse") return Protocol::coarse;
  if (s == "fine") return Protocol::fine;
  throw ValidationError("unknown protocol '" + s + "' (expected coarse or fine)");
}

std::vector<ProbeQuery> make_probes(const Dataset& probe_set) {
  std::vector<ProbeQuery> probes;
  int next = 0;
  for (const auto& bag : probe_set.bags) {
    for (const auto& tr : bag.tracklets) {
      if (tr.identity < 0) continue;
      Matrix frames(bag.features.dim(), static_cast<Eigen::Index>(tr.frames.size()));
      for (std::size_t i = 0; i < tr.frames.size(); ++i) {
        frames.col(static_cast<Eigen::Index>(i)) = bag.features.col(tr.frames[i]);
      }
      probes.push_back({next++, FeatureMatrix(std::move(frames)), tr.identity, tr.camera_id});
    }
  }
  return probes;
}

std::vector<GalleryBag> make_gallery_bags(const Dataset& gallery_set) {
  std::vector<GalleryBag> out;
  out.reserve(gallery_set.bags.size());
  for (const auto& bag : gallery_set.bags) {
    out.push_back({bag.bag_id, bag.features, bag.true_occupants(), bag.camera_id});
  }
  return out;
}

std::vector<GalleryTracklet> make_gallery_tracklets(const Dataset& gallery_set, bool allow_noisy) {
  std::vector<GalleryTracklet> out;
  int next = 0;
  for (const auto& bag : gallery_set.bags) {
    for (const auto& tr : bag.tracklets) {
      if (tr.identity < 0 && !allow_noisy) {
        throw ValidationError("gallery bag " + std::to_string(bag.bag_id) +
                              " has a mixed-identity tracklet; fine-grained evaluation needs single-identity "
                              "tracklets");
      }
      Matrix frames(bag.features.dim(), static_cast<Eigen::Index>(tr.frames.size()));
      for (std::size_t i = 0; i < tr.frames.size(); ++i) {
        frames.col(static_cast<Eigen::Index>(i)) = bag.features.col(tr.frames[i]);
      }
      out.push_back({next++, FeatureMatrix(std::move(frames)), tr.identity, tr.camera_id});
    }
  }
  return out;
}

namespace {

// Static interleaved split; each index is written by exactly one worker.
void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& body) {
  std::size_t workers = threads > 0 ? static_cast<std::size_t>(threads) : std::thread::hardware_concurrency();
  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(count, 1));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < count; i += workers) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

Evaluation evaluate(const ProjectionParams& params, const Dataset& probe_set, const Dataset& gallery_set,
                    const EvalOptions& opts, const WarningSink& warn) {
  auto check_dims = [&](const Dataset& ds, const char* what) {
    for (const auto& bag : ds.bags) {
      if (bag.features.dim() != params.dim()) {
        throw ShapeError(std::string(what) + " bag " + std::to_string(bag.bag_id) + " has dimension " +
                         std::to_string(bag.features.dim()) + ", model expects " + std::to_string(params.dim()));
      }
    }
  };
  check_dims(probe_set, "probe");
  check_dims(gallery_set, "gallery");
  auto probes = make_probes(probe_set);
  if (probes.empty()) throw ValidationError("probe set has no single-identity tracklets");
  for (auto& p : probes) p.frames = embed(p.frames, params, opts.space);

  Evaluation ev;
  ev.results.resize(probes.size());
  if (opts.protocol == Protocol::coarse) {
    auto gallery = make_gallery_bags(gallery_set);
    if (gallery.empty()) throw ValidationError("gallery is empty");
    for (auto& g : gallery) g.features = embed(g.features, params, opts.space);
    parallel_for(probes.size(), opts.threads,
                 [&](std::size_t i) { ev.results[i] = coarse_rank(probes[i], gallery); });
  } else {
    auto gallery = make_gallery_tracklets(gallery_set, opts.allow_noisy_tracklets);
    if (gallery.empty()) throw ValidationError("gallery is empty");
    for (auto& g : gallery) g.frames = embed(g.frames, params, opts.space);
    const FineOptions fine{opts.exclude_same_camera};
    parallel_for(probes.size(), opts.threads,
                 [&](std::size_t i) { ev.results[i] = fine_rank(probes[i], gallery, fine); });
  }
  int unmatched = 0;
  for (const auto& r : ev.results) unmatched += !r.has_match();
  if (unmatched > 0 && warn) {
    warn(std::to_string(unmatched) + " probe(s) have no true match in the gallery and are excluded");
  }
  ev.report = cmc_map(ev.results, opts.max_rank);
  return ev;
}

std::string to_string(AblationAxis a) {
  switch (a) {
    case AblationAxis::lambda: return "lambda";
    case AblationAxis::k: return "k";
    case AblationAxis::loss: return "loss";
    case AblationAxis::corruption: return "corruption";
  }
  return "lambda";
}

AblationAxis ablation_axis_from_string(const std::string& s) {
  if (s == "lambda") return AblationAxis::lambda;
  if (s == "k") return AblationAxis::k;
  if (s == "loss") return AblationAxis::loss;
  if (s == "corruption") return AblationAxis::corruption;
  throw ValidationError("unknown ablation axis '" + s + "'");
}

AblationRow make_row(const MetricsReport& report, Protocol protocol, const std::string& axis,
                     const std::string& value, std::uint64_t seed) {
  return {to_string(protocol), axis, value, seed, report.rank(1), report.rank(5), report.rank(10),
          report.rank(20), report.map};
}

std::vector<AblationRow> ablation_sweep(const AblationData& data, const TrainConfig& base, AblationAxis axis,
                                        std::span<const std::string> values,
                                        std::span<const std::uint64_t> seeds, const EvalOptions& eval,
                                        const WarningSink& warn) {
  if (values.empty()) throw ValidationError("ablation needs at least one value");
  if (seeds.empty()) throw ValidationError("ablation needs at least one seed");
  if (data.protocols.empty()) throw ValidationError("ablation needs at least one protocol");
  std::vector<AblationRow> rows;
  for (const auto& value : values) {
    for (std::uint64_t seed : seeds) {
      TrainConfig cfg = base;
      cfg.seed = seed;
      const Dataset* train_set = &data.train;
      Dataset modified;
      switch (axis) {
        case AblationAxis::lambda:
          cfg.lambda = parse_real(value);
          break;
        case AblationAxis::k: {
          double k = parse_real(value);
          if (k < 1 || k != std::floor(k)) throw ValidationError("k values must be positive integers");
          cfg.k = static_cast<int>(k);
          break;
        }
        case AblationAxis::loss:
          if (value == "MIL") cfg.lambda = 1.0;
          else if (value == "CPAL") cfg.lambda = 0.0;
          else if (value != "MIL+CPAL") throw ValidationError("loss values are MIL, CPAL or MIL+CPAL");
          break;
        case AblationAxis::corruption: {
          Rng rng(derive_seed(seed, kCorruptionStream));
          if (value == "tracklet") {
            modified = to_tracklet_setting(data.train);
          } else {
            Corruption kind = corruption_from_string(value);
            modified = corrupt_dataset(data.train, kind, rng, data.distractor_provider, data.distractor_ids);
            if (kind == Corruption::noisy) modified = to_tracklet_setting(modified);
          }
          train_set = &modified;
          break;
        }
      }
      cfg.validate();
      TrainResult trained = train(*train_set, cfg, warn);
      for (Protocol protocol : data.protocols) {
        EvalOptions opts = eval;
        opts.protocol = protocol;
        Evaluation ev = evaluate(trained.checkpoint.params, data.probe, data.gallery, opts, warn);
        rows.push_back(make_row(ev.report, protocol, to_string(axis), value, seed));
      }
    }
  }
  return rows;
}

void write_metrics_csv(std::ostream& out, std::span<const AblationRow> rows) {
  out << "protocol,axis,value,seed,rank1,rank5,rank10,rank20,map\n";
  for (const auto& r : rows) {
    out << r.protocol << ',' << r.axis << ',' << r.value << ',' << r.seed << ',' << format_double(r.rank1) << ','
        << format_double(r.rank5) << ',' << format_double(r.rank10) << ',' << format_double(r.rank20) << ','
        << format_double(r.map) << '\n';
  }
}

void write_cmc_csv(std::ostream& out, const MetricsReport& report) {
  out << "rank,cmc\n";
  for (std::size_t i = 0; i < report.cmc.size(); ++i) out << (i + 1) << ',' << format_double(report.cmc[i]) << '\n';
}

}  // namespace weakmil
