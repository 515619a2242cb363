#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "weakmil/datamodel.hpp"
#include "weakmil/embedding.hpp"
#include "weakmil/milhead.hpp"
#include "weakmil/trainer.hpp"

namespace weakmil {

// Space in which retrieval distances are measured. `activations` maps each
// frame through the learned projection, `features` through the adapter only
// (identical to `raw` without an adapter), `raw` uses input features as-is.
enum class EmbeddingSpace { activations, features, raw };

std::string to_string(EmbeddingSpace s);
EmbeddingSpace embedding_space_from_string(const std::string& s);

FeatureMatrix embed(const FeatureMatrix& x, const ProjectionParams& params, EmbeddingSpace space);

struct ProbeQuery {
  int probe_id = 0;
  FeatureMatrix frames;
  int identity = 0;
  int camera_id = 0;
};

struct GalleryBag {
  int bag_id = 0;
  FeatureMatrix features;
  std::vector<int> occupants;  // true identities present, sorted
  int camera_id = 0;
};

struct GalleryTracklet {
  int tracklet_id = 0;
  FeatureMatrix frames;
  int identity = -1;
  int camera_id = 0;
};

struct RetrievalResult {
  int probe_id = 0;
  std::vector<int> ranked_ids;     // ascending distance, ties by id
  std::vector<char> matches;
  std::vector<double> distances;

  bool has_match() const;
};

Vector probe_feature(const ProbeQuery& q);

// Minimum Euclidean distance from x_p to any frame of the gallery bag.
double coarse_distance(const Vector& probe, const FeatureMatrix& gallery_bag);

RetrievalResult coarse_rank(const ProbeQuery& probe, std::span<const GalleryBag> gallery);

struct FineOptions {
  bool exclude_same_camera = true;  // drop same-camera entries of the probe identity
};

RetrievalResult fine_rank(const ProbeQuery& probe, std::span<const GalleryTracklet> gallery,
                          const FineOptions& opts = {});

struct MetricsReport {
  std::vector<double> cmc;  // cmc[r-1] = CMC@r
  double map = 0.0;
  std::vector<double> ap;   // per evaluated probe
  int evaluated = 0;
  int skipped = 0;          // results without any match

  double rank(int r) const;
};

// Mean of precision at each match position.
double average_precision(const RetrievalResult& r);

MetricsReport cmc_map(std::span<const RetrievalResult> results, int max_rank = 20);

enum class Protocol { coarse, fine };

std::string to_string(Protocol p);
Protocol protocol_from_string(const std::string& s);

// One probe per single-identity tracklet of the probe set.
std::vector<ProbeQuery> make_probes(const Dataset& probe_set);
std::vector<GalleryBag> make_gallery_bags(const Dataset& gallery_set);
// Throws ValidationError on mixed-identity tracklets unless allow_noisy.
std::vector<GalleryTracklet> make_gallery_tracklets(const Dataset& gallery_set, bool allow_noisy = false);

struct EvalOptions {
  Protocol protocol = Protocol::fine;
  int max_rank = 20;
  bool exclude_same_camera = true;
  bool allow_noisy_tracklets = false;
  EmbeddingSpace space = EmbeddingSpace::activations;
  int threads = 0;  // probes ranked in parallel; 0 = hardware concurrency
};

struct Evaluation {
  MetricsReport report;
  std::vector<RetrievalResult> results;
};

// Results are ordered by probe regardless of the thread count.
Evaluation evaluate(const ProjectionParams& params, const Dataset& probe_set, const Dataset& gallery_set,
                    const EvalOptions& opts, const WarningSink& warn = {});

enum class AblationAxis { lambda, k, loss, corruption };

std::string to_string(AblationAxis a);
AblationAxis ablation_axis_from_string(const std::string& s);

struct AblationData {
  const Dataset& train;
  const Dataset& probe;
  const Dataset& gallery;
  // Needed only for the `missing` corruption value.
  const FeatureProvider* distractor_provider = nullptr;
  std::vector<int> distractor_ids;
  std::vector<Protocol> protocols = {Protocol::coarse, Protocol::fine};
};

struct AblationRow {
  std::string protocol;
  std::string axis;
  std::string value;
  std::uint64_t seed = 0;
  double rank1 = 0, rank5 = 0, rank10 = 0, rank20 = 0;
  double map = 0;
};

// Trains one model per (value, seed) and evaluates each requested protocol.
// Values: lambda -> reals in [0,1]; k -> positive ints; loss -> MIL, CPAL,
// MIL+CPAL; corruption -> none, missing, noisy (noisy tracking, tracklet
// features), tracklet (clean tracklet features).
std::vector<AblationRow> ablation_sweep(const AblationData& data, const TrainConfig& base, AblationAxis axis,
                                        std::span<const std::string> values,
                                        std::span<const std::uint64_t> seeds, const EvalOptions& eval = {},
                                        const WarningSink& warn = {});

AblationRow make_row(const MetricsReport& report, Protocol protocol, const std::string& axis,
                     const std::string& value, std::uint64_t seed);

// protocol,axis,value,seed,rank1,rank5,rank10,rank20,map
void write_metrics_csv(std::ostream& out, std::span<const AblationRow> rows);
// rank,cmc
void write_cmc_csv(std::ostream& out, const MetricsReport& report);

}  // namespace weakmil
