#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "weakmil/embedding.hpp"
#include "weakmil/feature_file.hpp"
#include "weakmil/rng.hpp"

namespace weakmil {

struct Tracklet {
  std::vector<int> frames;  // indices into the owning bag's features
  int identity = -1;        // -1: distractor or mixed identities
  int camera_id = 0;
};

// Training-facing bag: features and weak labels only. Per-frame ground truth
// is not reachable from here.
struct BagView {
  int bag_id = 0;
  int camera_id = 0;
  FeatureMatrix features;
  std::vector<int> weak_labels;  // sorted, unique
};

struct Bag {
  int bag_id = 0;
  int camera_id = 0;
  FeatureMatrix features;
  std::vector<Tracklet> tracklets;  // partition of [0, n)
  std::vector<int> weak_labels;     // sorted, unique
  std::vector<int> hidden_frame_ids;

  int frames() const { return static_cast<int>(features.frames()); }
  BagView view() const { return {bag_id, camera_id, features, weak_labels}; }

  // Sorted set of non-negative ground-truth ids actually present.
  std::vector<int> true_occupants() const;
};

// Throws ValidationError when a structural invariant of `bag` is broken.
void validate_bag(const Bag& bag);

enum class Split { train, probe, gallery };

std::string to_string(Split split);
Split split_from_string(const std::string& s);

struct Dataset {
  int num_identities = 0;
  std::vector<Bag> bags;
  Split split = Split::train;
};

struct BuildConfig {
  int n_bags = 40;
  int min_tracklets = 3;
  int max_tracklets = 6;
  int min_frames = 5;
  int max_frames = 20;
  int num_cameras = 6;
  int min_bags_per_identity = 2;
  // Each generated bag is cut into this many bags holding one part of every
  // tracklet (remainder frames go to the last part).
  int split_factor = 1;
  int first_bag_id = 0;
  std::uint64_t seed = 0;

  void validate() const;
};

// Bags of 3-6 single-camera tracklets with distinct identities, labeled with
// the set of identities. Every identity in [0, num_identities) lands in at
// least `min_bags_per_identity` source bags.
Dataset build_weak_dataset(const FeatureProvider& provider, int num_identities,
                           const BuildConfig& cfg, Split split = Split::train);

struct MissingAnnotationConfig {
  int min_tracklets = 3;
  int max_tracklets = 6;
  int min_frames = 5;
  int max_frames = 30;
};

// Appends unlabeled distractor tracklets; weak labels are left untouched.
Bag corrupt_missing_annotation(const Bag& bag, const FeatureProvider& provider,
                               std::span<const int> distractor_ids, Rng& rng,
                               const MissingAnnotationConfig& cfg = {});

// Replaces the segmentation by `parts` random disjoint frame groups.
Bag corrupt_noisy_tracking(const Bag& bag, int parts, Rng& rng);

// One mean-pooled column per tracklet (no renormalization).
Bag to_tracklet_setting(const Bag& bag);

// Sorted uniform sample of min(n, cap) frame indices without replacement.
std::vector<int> subsample_indices(int n, int cap, Rng& rng);

Bag subsample_bag(const Bag& bag, int cap, Rng& rng);
BagView subsample_bag(const BagView& bag, int cap, Rng& rng);

enum class Corruption { none, missing, noisy };

std::string to_string(Corruption c);
Corruption corruption_from_string(const std::string& s);

// Applies one corruption to every bag. `missing` needs a provider and
// distractor identities; `noisy` re-segments each bag into `noisy_parts`.
Dataset corrupt_dataset(const Dataset& ds, Corruption kind, Rng& rng,
                        const FeatureProvider* provider = nullptr,
                        std::span<const int> distractor_ids = {}, int noisy_parts = 4);

// Mean-pools every bag to one column per tracklet.
Dataset to_tracklet_setting(const Dataset& ds);

struct AnnotationCostParams {
  double cost_per_person_image = 1.0;  // b
  double cost_per_video = 1.0;         // b'
  double persons_per_image = 1.0;      // p
  double frames_per_video = 1.0;       // f
  double videos = 1.0;                 // n
};

struct AnnotationCost {
  double strong = 0.0;
  double weak = 0.0;
  double improvement_percent = 0.0;
};

AnnotationCost annotation_cost(const AnnotationCostParams& params);

FeatureFile to_feature_file(const Dataset& ds);

// num_identities is inferred as max(weak label) + 1 unless given.
Dataset from_feature_file(const FeatureFile& file, Split split,
                          std::optional<int> num_identities = std::nullopt);

void save_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& path, Split split,
                     std::optional<int> num_identities = std::nullopt);

}  // namespace weakmil
