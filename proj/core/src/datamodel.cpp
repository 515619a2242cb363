#include "weakmil/datamodel.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "weakmil/errors.hpp"

namespace weakmil {
namespace {

std::uint64_t split_stream(Split split) {
  switch (split) {
    case Split::train: return 0x747261696eULL;
    case Split::probe: return 0x70726f6265ULL;
    case Split::gallery: return 0x67616c6c72ULL;
  }
  return 0;
}

std::vector<int> sorted_unique(std::vector<int> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

int common_identity(std::span<const int> frames, const std::vector<int>& hidden) {
  int id = hidden[static_cast<std::size_t>(frames.front())];
  for (int f : frames) {
    if (hidden[static_cast<std::size_t>(f)] != id) return -1;
  }
  return id;
}

Matrix gather_columns(const Matrix& m, std::span<const int> cols) {
  Matrix out(m.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < cols.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = m.col(cols[i]);
  return out;
}

// Assigns identities to bag slots so every identity occupies `copies`
// distinct bags; remaining slots get random identities absent from the bag.
std::vector<std::vector<int>> assign_identities(const std::vector<int>& counts, int num_identities,
                                                int copies, Rng& rng) {
  const std::size_t n_bags = counts.size();
  std::vector<std::vector<int>> members(n_bags);
  std::vector<int> order(static_cast<std::size_t>(num_identities));
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(std::span<int>(order));

  std::vector<std::size_t> bag_order(n_bags);
  for (int id : order) {
    std::vector<double> key(n_bags);
    for (auto& k : key) k = rng.uniform();
    std::iota(bag_order.begin(), bag_order.end(), std::size_t{0});
    std::sort(bag_order.begin(), bag_order.end(), [&](std::size_t a, std::size_t b) {
      auto fa = counts[a] - static_cast<int>(members[a].size());
      auto fb = counts[b] - static_cast<int>(members[b].size());
      if (fa != fb) return fa > fb;
      return key[a] < key[b];
    });
    for (int c = 0; c < copies; ++c) {
      std::size_t b = bag_order[static_cast<std::size_t>(c)];
      if (counts[b] - static_cast<int>(members[b].size()) <= 0) {
        throw InfeasibleError("identity " + std::to_string(id) + " cannot be placed in " +
                              std::to_string(copies) + " bags: not enough free tracklet slots");
      }
      members[b].push_back(id);
    }
  }

  for (std::size_t b = 0; b < n_bags; ++b) {
    while (static_cast<int>(members[b].size()) < counts[b]) {
      int id = static_cast<int>(rng.below(static_cast<std::uint64_t>(num_identities)));
      if (std::find(members[b].begin(), members[b].end(), id) == members[b].end()) {
        members[b].push_back(id);
      }
    }
    rng.shuffle(std::span<int>(members[b]));
  }
  return members;
}

}  // namespace

std::vector<int> Bag::true_occupants() const {
  std::vector<int> ids;
  for (int id : hidden_frame_ids) {
    if (id >= 0) ids.push_back(id);
  }
  return sorted_unique(std::move(ids));
}

void validate_bag(const Bag& bag) {
  const int n = bag.frames();
  if (static_cast<int>(bag.hidden_frame_ids.size()) != n) {
    throw ValidationError("bag " + std::to_string(bag.bag_id) + ": hidden ids do not match frame count");
  }
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  for (const auto& tr : bag.tracklets) {
    if (tr.frames.empty()) throw ValidationError("bag " + std::to_string(bag.bag_id) + ": empty tracklet");
    for (int f : tr.frames) {
      if (f < 0 || f >= n || seen[static_cast<std::size_t>(f)]) {
        throw ValidationError("bag " + std::to_string(bag.bag_id) + ": tracklets do not partition frames");
      }
      seen[static_cast<std::size_t>(f)] = 1;
    }
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end()) {
    throw ValidationError("bag " + std::to_string(bag.bag_id) + ": tracklets do not cover all frames");
  }
  if (!std::is_sorted(bag.weak_labels.begin(), bag.weak_labels.end()) ||
      std::adjacent_find(bag.weak_labels.begin(), bag.weak_labels.end()) != bag.weak_labels.end()) {
    throw ValidationError("bag " + std::to_string(bag.bag_id) + ": weak labels must be sorted and unique");
  }
  if (!bag.weak_labels.empty() && bag.weak_labels.front() < 0) {
    throw ValidationError("bag " + std::to_string(bag.bag_id) + ": negative weak label");
  }
}

std::string to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::probe: return "probe";
    case Split::gallery: return "gallery";
  }
  return "train";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "probe") return Split::probe;
  if (s == "gallery") return Split::gallery;
  throw ValidationError("unknown split '" + s + "'");
}

void BuildConfig::validate() const {
  if (n_bags < 1) throw ValidationError("n_bags must be >= 1");
  if (min_tracklets < 1 || max_tracklets < min_tracklets) {
    throw ValidationError("tracklets per bag range is invalid");
  }
  if (min_frames < 1 || max_frames < min_frames) throw ValidationError("frames per tracklet range is invalid");
  if (num_cameras < 1) throw ValidationError("num_cameras must be >= 1");
  if (min_bags_per_identity < 1) throw ValidationError("min_bags_per_identity must be >= 1");
  if (split_factor < 1) throw ValidationError("split_factor must be >= 1");
  if (min_frames < split_factor) {
    throw ValidationError("min_frames must be >= split_factor so every part keeps a frame");
  }
}

Dataset build_weak_dataset(const FeatureProvider& provider, int num_identities,
                           const BuildConfig& cfg, Split split) {
  cfg.validate();
  if (num_identities < 1) throw ValidationError("empty identity universe");
  if (provider.identities() < num_identities) {
    throw ValidationError("feature provider knows fewer identities than requested");
  }
  if (cfg.min_tracklets > num_identities) {
    throw InfeasibleError("bags need " + std::to_string(cfg.min_tracklets) +
                          " distinct identities but only " + std::to_string(num_identities) + " exist");
  }
  const int max_tracklets = std::min(cfg.max_tracklets, num_identities);
  const int copies = cfg.min_bags_per_identity;
  if (copies > cfg.n_bags) {
    throw InfeasibleError("identity 0 cannot appear in " + std::to_string(copies) + " bags: only " +
                          std::to_string(cfg.n_bags) + " bags requested");
  }
  const long capacity = static_cast<long>(cfg.n_bags) * max_tracklets;
  if (capacity < static_cast<long>(num_identities) * copies) {
    throw InfeasibleError("identity " + std::to_string(capacity / copies) + " cannot appear in " +
                          std::to_string(copies) + " bags: " + std::to_string(cfg.n_bags) +
                          " bags hold at most " + std::to_string(capacity) + " tracklets");
  }

  Rng rng(derive_seed(cfg.seed, split_stream(split)));
  std::vector<int> counts(static_cast<std::size_t>(cfg.n_bags));
  for (auto& c : counts) c = rng.range(cfg.min_tracklets, max_tracklets);
  long total = std::accumulate(counts.begin(), counts.end(), 0L);
  while (total < static_cast<long>(num_identities) * copies) {
    auto b = static_cast<std::size_t>(rng.below(counts.size()));
    if (counts[b] < max_tracklets) {
      ++counts[b];
      ++total;
    }
  }
  auto members = assign_identities(counts, num_identities, copies, rng);

  Dataset ds;
  ds.num_identities = num_identities;
  ds.split = split;
  const int parts = cfg.split_factor;
  for (int b = 0; b < cfg.n_bags; ++b) {
    int camera = rng.range(0, cfg.num_cameras - 1);
    std::vector<FeatureMatrix> tracks;
    for (int id : members[static_cast<std::size_t>(b)]) {
      tracks.push_back(provider.tracklet(id, camera, rng.range(cfg.min_frames, cfg.max_frames), rng));
    }
    for (int p = 0; p < parts; ++p) {
      std::vector<Tracklet> tracklets;
      std::vector<int> hidden;
      std::vector<Eigen::Index> starts, lens;
      int n = 0;
      for (std::size_t i = 0; i < tracks.size(); ++i) {
        Eigen::Index len = tracks[i].frames() / parts;
        Eigen::Index start = len * p;
        if (p == parts - 1) len = tracks[i].frames() - start;
        starts.push_back(start);
        lens.push_back(len);
        Tracklet tr;
        tr.identity = members[static_cast<std::size_t>(b)][i];
        tr.camera_id = camera;
        for (Eigen::Index t = 0; t < len; ++t) {
          tr.frames.push_back(n++);
          hidden.push_back(tr.identity);
        }
        tracklets.push_back(std::move(tr));
      }
      Matrix data(provider.dim(), n);
      Eigen::Index col = 0;
      for (std::size_t i = 0; i < tracks.size(); ++i) {
        data.middleCols(col, lens[i]) = tracks[i].matrix().middleCols(starts[i], lens[i]);
        col += lens[i];
      }
      ds.bags.push_back(Bag{cfg.first_bag_id + b * parts + p, camera, FeatureMatrix(std::move(data)),
                            std::move(tracklets), sorted_unique(members[static_cast<std::size_t>(b)]),
                            std::move(hidden)});
    }
  }
  return ds;
}

Bag corrupt_missing_annotation(const Bag& bag, const FeatureProvider& provider,
                               std::span<const int> distractor_ids, Rng& rng,
                               const MissingAnnotationConfig& cfg) {
  if (distractor_ids.empty()) throw ValidationError("missing-annotation corruption needs distractor identities");
  for (int id : distractor_ids) {
    if (std::binary_search(bag.weak_labels.begin(), bag.weak_labels.end(), id)) {
      throw ValidationError("distractor identity " + std::to_string(id) + " is a weak label of bag " +
                            std::to_string(bag.bag_id));
    }
  }
  if (provider.dim() != bag.features.dim()) throw ShapeError("distractor provider dimension mismatch");

  int count = rng.range(cfg.min_tracklets, cfg.max_tracklets);
  std::vector<int> pool(distractor_ids.begin(), distractor_ids.end());
  rng.shuffle(std::span<int>(pool));
  std::vector<int> picked;
  for (int i = 0; i < count; ++i) {
    // Identities are distinct while the pool lasts.
    picked.push_back(static_cast<std::size_t>(i) < pool.size() ? pool[static_cast<std::size_t>(i)]
                                                                : pool[rng.below(pool.size())]);
  }

  Bag out = bag;
  std::vector<Matrix> extra;
  int n = bag.frames();
  Eigen::Index added = 0;
  for (int id : picked) {
    FeatureMatrix fm = provider.tracklet(id, bag.camera_id, rng.range(cfg.min_frames, cfg.max_frames), rng);
    Tracklet tr{{}, id, bag.camera_id};
    for (Eigen::Index t = 0; t < fm.frames(); ++t) {
      tr.frames.push_back(n++);
      out.hidden_frame_ids.push_back(id);
    }
    out.tracklets.push_back(std::move(tr));
    added += fm.frames();
    extra.push_back(fm.matrix());
  }
  Matrix data(bag.features.dim(), bag.features.frames() + added);
  data.leftCols(bag.features.frames()) = bag.features.matrix();
  Eigen::Index col = bag.features.frames();
  for (const auto& m : extra) {
    data.middleCols(col, m.cols()) = m;
    col += m.cols();
  }
  out.features = FeatureMatrix(std::move(data));
  return out;
}

Bag corrupt_noisy_tracking(const Bag& bag, int parts, Rng& rng) {
  if (parts < 1) throw ValidationError("parts must be >= 1");
  const int n = bag.frames();
  if (n < parts) {
    throw ValidationError("bag " + std::to_string(bag.bag_id) + " has " + std::to_string(n) +
                          " frames, fewer than " + std::to_string(parts) + " parts");
  }
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(std::span<int>(perm));

  Bag out = bag;
  out.tracklets.clear();
  const int size = n / parts;
  for (int p = 0; p < parts; ++p) {
    auto first = perm.begin() + p * size;
    auto last = (p == parts - 1) ? perm.end() : first + size;
    Tracklet tr{std::vector<int>(first, last), -1, bag.camera_id};
    std::sort(tr.frames.begin(), tr.frames.end());
    tr.identity = common_identity(tr.frames, bag.hidden_frame_ids);
    out.tracklets.push_back(std::move(tr));
  }
  return out;
}

Bag to_tracklet_setting(const Bag& bag) {
  if (bag.tracklets.empty()) throw ValidationError("bag has no tracklet segmentation");
  const auto m = static_cast<Eigen::Index>(bag.tracklets.size());
  Matrix pooled(bag.features.dim(), m);
  Bag out{bag.bag_id, bag.camera_id, bag.features, {}, bag.weak_labels, {}};
  for (Eigen::Index k = 0; k < m; ++k) {
    const auto& tr = bag.tracklets[static_cast<std::size_t>(k)];
    Vector sum = Vector::Zero(bag.features.dim());
    for (int f : tr.frames) sum += bag.features.col(f);
    pooled.col(k) = sum / static_cast<double>(tr.frames.size());
    out.tracklets.push_back({{static_cast<int>(k)}, tr.identity, tr.camera_id});
    out.hidden_frame_ids.push_back(tr.identity);
  }
  out.features = FeatureMatrix(std::move(pooled));
  return out;
}

std::vector<int> subsample_indices(int n, int cap, Rng& rng) {
  if (cap < 1) throw ValidationError("subsample cap must be >= 1");
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  if (n <= cap) return idx;
  for (int i = 0; i < cap; ++i) {
    auto j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(n - i)));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  idx.resize(static_cast<std::size_t>(cap));
  std::sort(idx.begin(), idx.end());
  return idx;
}

Bag subsample_bag(const Bag& bag, int cap, Rng& rng) {
  auto keep = subsample_indices(bag.frames(), cap, rng);
  if (static_cast<int>(keep.size()) == bag.frames()) return bag;
  std::vector<int> remap(static_cast<std::size_t>(bag.frames()), -1);
  for (std::size_t i = 0; i < keep.size(); ++i) remap[static_cast<std::size_t>(keep[i])] = static_cast<int>(i);

  Bag out{bag.bag_id, bag.camera_id, FeatureMatrix(gather_columns(bag.features.matrix(), keep)), {},
          bag.weak_labels, {}};
  for (int f : keep) out.hidden_frame_ids.push_back(bag.hidden_frame_ids[static_cast<std::size_t>(f)]);
  for (const auto& tr : bag.tracklets) {
    Tracklet t{{}, tr.identity, tr.camera_id};
    for (int f : tr.frames) {
      if (remap[static_cast<std::size_t>(f)] >= 0) t.frames.push_back(remap[static_cast<std::size_t>(f)]);
    }
    if (!t.frames.empty()) {
      std::sort(t.frames.begin(), t.frames.end());
      out.tracklets.push_back(std::move(t));
    }
  }
  return out;
}

BagView subsample_bag(const BagView& bag, int cap, Rng& rng) {
  auto keep = subsample_indices(static_cast<int>(bag.features.frames()), cap, rng);
  if (static_cast<Eigen::Index>(keep.size()) == bag.features.frames()) return bag;
  return {bag.bag_id, bag.camera_id, FeatureMatrix(gather_columns(bag.features.matrix(), keep)),
          bag.weak_labels};
}

std::string to_string(Corruption c) {
  switch (c) {
    case Corruption::none: return "none";
    case Corruption::missing: return "missing";
    case Corruption::noisy: return "noisy";
  }
  return "none";
}

Corruption corruption_from_string(const std::string& s) {
  if (s == "none") return Corruption::none;
  if (s == "missing") return Corruption::missing;
  if (s == "noisy") return Corruption::noisy;
  throw ValidationError("unknown corruption '" + s + "' (expected none, missing or noisy)");
}

Dataset corrupt_dataset(const Dataset& ds, Corruption kind, Rng& rng, const FeatureProvider* provider,
                        std::span<const int> distractor_ids, int noisy_parts) {
  Dataset out{ds.num_identities, {}, ds.split};
  out.bags.reserve(ds.bags.size());
  for (const auto& bag : ds.bags) {
    switch (kind) {
      case Corruption::none:
        out.bags.push_back(bag);
        break;
      case Corruption::missing:
        if (provider == nullptr) throw ValidationError("missing-annotation corruption needs a feature provider");
        out.bags.push_back(corrupt_missing_annotation(bag, *provider, distractor_ids, rng));
        break;
      case Corruption::noisy:
        out.bags.push_back(corrupt_noisy_tracking(bag, noisy_parts, rng));
        break;
    }
  }
  return out;
}

Dataset to_tracklet_setting(const Dataset& ds) {
  Dataset out{ds.num_identities, {}, ds.split};
  out.bags.reserve(ds.bags.size());
  for (const auto& bag : ds.bags) out.bags.push_back(to_tracklet_setting(bag));
  return out;
}

AnnotationCost annotation_cost(const AnnotationCostParams& p) {
  for (double v : {p.cost_per_person_image, p.cost_per_video, p.persons_per_image, p.frames_per_video,
                   p.videos}) {
    if (!(v > 0.0)) throw ValidationError("annotation cost parameters must be positive");
  }
  AnnotationCost c;
  c.strong = p.frames_per_video * p.persons_per_image * p.videos * p.cost_per_person_image;
  c.weak = p.videos * p.cost_per_video;
  c.improvement_percent = p.frames_per_video * p.persons_per_image * p.cost_per_person_image /
                          p.cost_per_video * 100.0;
  return c;
}

FeatureFile to_feature_file(const Dataset& ds) {
  FeatureFile file;
  for (const auto& bag : ds.bags) {
    if (file.dim == 0) file.dim = static_cast<int>(bag.features.dim());
    // Tracklets are stored as consecutive runs, so frames are written in
    // tracklet order.
    std::vector<int> order;
    std::vector<int> runs;
    for (const auto& tr : bag.tracklets) {
      order.insert(order.end(), tr.frames.begin(), tr.frames.end());
      runs.push_back(static_cast<int>(tr.frames.size()));
    }
    if (bag.tracklets.empty()) {
      order.resize(static_cast<std::size_t>(bag.frames()));
      std::iota(order.begin(), order.end(), 0);
      runs = {bag.frames()};
    }
    bool identity_order = true;
    for (std::size_t i = 0; i < order.size(); ++i) identity_order &= order[i] == static_cast<int>(i);

    FeatureRecord rec{bag.bag_id, bag.camera_id,
                      identity_order ? bag.features : FeatureMatrix(gather_columns(bag.features.matrix(), order)),
                      {}, std::move(runs), bag.weak_labels};
    for (int f : order) rec.frame_ids.push_back(bag.hidden_frame_ids[static_cast<std::size_t>(f)]);
    file.records.push_back(std::move(rec));
  }
  return file;
}

Dataset from_feature_file(const FeatureFile& file, Split split, std::optional<int> num_identities) {
  Dataset ds;
  ds.split = split;
  int max_label = -1;
  std::set<int> ids;
  for (const auto& rec : file.records) {
    if (!ids.insert(rec.bag_id).second) throw ParseError("duplicate bag id " + std::to_string(rec.bag_id));
    Bag bag{rec.bag_id, rec.camera_id, rec.features, {}, sorted_unique(rec.labels), rec.frame_ids};
    int start = 0;
    for (int run : rec.track_runs) {
      Tracklet tr{{}, -1, rec.camera_id};
      for (int t = 0; t < run; ++t) tr.frames.push_back(start + t);
      tr.identity = common_identity(tr.frames, bag.hidden_frame_ids);
      bag.tracklets.push_back(std::move(tr));
      start += run;
    }
    validate_bag(bag);
    if (!bag.weak_labels.empty()) max_label = std::max(max_label, bag.weak_labels.back());
    ds.bags.push_back(std::move(bag));
  }
  ds.num_identities = num_identities.value_or(max_label + 1);
  if (max_label >= ds.num_identities) {
    throw ValidationError("weak label " + std::to_string(max_label) + " exceeds identity count " +
                          std::to_string(ds.num_identities));
  }
  return ds;
}

void save_dataset(const std::filesystem::path& path, const Dataset& ds) {
  write_feature_file(path, to_feature_file(ds));
}

Dataset load_dataset(const std::filesystem::path& path, Split split, std::optional<int> num_identities) {
  return from_feature_file(read_feature_file(path), split, num_identities);
}

}  // namespace weakmil
