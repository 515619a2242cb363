#include "weakmil/embedding.hpp"

#include <cmath>
#include <string>

#include "weakmil/errors.hpp"
#include "weakmil/feature_file.hpp"

namespace weakmil {
namespace {

constexpr std::uint64_t kPrototypeStream = 0x70726f746fULL;
constexpr std::uint64_t kCameraStream = 0x63616d6572610000ULL;

Vector gaussian(int dim, double sigma, Rng& rng) {
  Vector v(dim);
  for (int i = 0; i < dim; ++i) v[i] = sigma * rng.normal();
  return v;
}

}  // namespace

FeatureMatrix::FeatureMatrix(Matrix data) : data_(std::move(data)) {
  if (data_.rows() < 1 || data_.cols() < 1) {
    throw ShapeError("FeatureMatrix needs d >= 1 and n >= 1, got " +
                     std::to_string(data_.rows()) + "x" + std::to_string(data_.cols()));
  }
  if (!data_.allFinite()) throw NumericError("FeatureMatrix contains NaN or Inf");
}

void EmbeddingConfig::validate() const {
  if (dim < 2) throw ValidationError("embedding dim must be >= 2");
  if (!(noise_sigma >= 0.0)) throw ValidationError("noise_sigma must be >= 0");
  if (!(camera_shift_sigma >= 0.0)) throw ValidationError("camera_shift_sigma must be >= 0");
}

std::vector<IdentityPrototype> make_prototypes(int count, const EmbeddingConfig& cfg) {
  cfg.validate();
  if (count < 1) throw ValidationError("empty identity universe: need at least one prototype");
  Rng rng(derive_seed(cfg.seed, kPrototypeStream));
  std::vector<IdentityPrototype> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int id = 0; id < count; ++id) {
    Vector v;
    double norm = 0.0;
    do {
      v = gaussian(cfg.dim, 1.0, rng);
      norm = v.norm();
    } while (norm < 1e-12);
    out.push_back({id, v / norm});
  }
  return out;
}

Vector camera_bias(int camera_id, const EmbeddingConfig& cfg) {
  if (cfg.camera_shift_sigma == 0.0) return Vector::Zero(cfg.dim);
  Rng rng(derive_seed(cfg.seed, kCameraStream + static_cast<std::uint64_t>(camera_id)));
  return gaussian(cfg.dim, cfg.camera_shift_sigma, rng);
}

Vector sample_frame(const IdentityPrototype& proto, int camera_id, const EmbeddingConfig& cfg,
                    Rng& rng) {
  if (proto.direction.size() != cfg.dim) {
    throw ShapeError("prototype dimension does not match embedding config");
  }
  Vector v = proto.direction + camera_bias(camera_id, cfg);
  if (cfg.noise_sigma > 0.0) v += gaussian(cfg.dim, cfg.noise_sigma, rng);
  double norm = v.norm();
  if (!(norm > 1e-12)) throw NumericError("sampled frame collapsed to the zero vector");
  return v / norm;
}

SyntheticProvider::SyntheticProvider(EmbeddingConfig cfg, int identities)
    : cfg_(cfg), prototypes_(make_prototypes(identities, cfg)) {}

FeatureMatrix SyntheticProvider::tracklet(int identity, int camera_id, int frames,
                                          Rng& rng) const {
  if (identity < 0 || identity >= identities()) {
    throw ValidationError("unknown identity " + std::to_string(identity));
  }
  if (frames < 1) throw ValidationError("tracklet needs at least one frame");
  // The camera shift is fixed per camera; computing it once per tracklet
  // avoids regenerating it for every frame.
  Vector shift = camera_bias(camera_id, cfg_);
  const Vector& dir = prototypes_[static_cast<std::size_t>(identity)].direction;
  Matrix out(cfg_.dim, frames);
  for (int t = 0; t < frames; ++t) {
    Vector v = dir + shift;
    if (cfg_.noise_sigma > 0.0) v += gaussian(cfg_.dim, cfg_.noise_sigma, rng);
    double norm = v.norm();
    if (!(norm > 1e-12)) throw NumericError("sampled frame collapsed to the zero vector");
    out.col(t) = v / norm;
  }
  return FeatureMatrix(std::move(out));
}

PrecomputedProvider::PrecomputedProvider(const FeatureFile& file) : dim_(file.dim) {
  for (const auto& rec : file.records) {
    for (Eigen::Index t = 0; t < rec.features.frames(); ++t) {
      int id = rec.frame_ids[static_cast<std::size_t>(t)];
      if (id < 0) continue;
      if (static_cast<std::size_t>(id) >= pools_.size()) pools_.resize(static_cast<std::size_t>(id) + 1);
      pools_[static_cast<std::size_t>(id)].push_back({rec.camera_id, rec.features.col(t)});
    }
  }
}

FeatureMatrix PrecomputedProvider::tracklet(int identity, int camera_id, int frames,
                                            Rng& rng) const {
  if (identity < 0 || identity >= identities() || pools_[static_cast<std::size_t>(identity)].empty()) {
    throw ValidationError("no precomputed frames for identity " + std::to_string(identity));
  }
  if (frames < 1) throw ValidationError("tracklet needs at least one frame");
  const auto& pool = pools_[static_cast<std::size_t>(identity)];
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (pool[i].camera_id == camera_id) candidates.push_back(i);
  }
  if (candidates.empty()) {
    candidates.resize(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) candidates[i] = i;
  }
  Matrix out(dim_, frames);
  for (int t = 0; t < frames; ++t) {
    out.col(t) = pool[candidates[static_cast<std::size_t>(rng.below(candidates.size()))]].feature;
  }
  return FeatureMatrix(std::move(out));
}

}  // namespace weakmil
