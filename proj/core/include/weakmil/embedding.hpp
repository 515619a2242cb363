#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "weakmil/rng.hpp"

namespace weakmil {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// d x n column stack of per-frame embeddings for one bag or tracklet.
// Always holds at least one frame and only finite values.
class FeatureMatrix {
 public:
  explicit FeatureMatrix(Matrix data);

  Eigen::Index dim() const { return data_.rows(); }
  Eigen::Index frames() const { return data_.cols(); }
  const Matrix& matrix() const { return data_; }
  auto col(Eigen::Index t) const { return data_.col(t); }

  friend bool operator==(const FeatureMatrix& a, const FeatureMatrix& b) {
    return a.data_.rows() == b.data_.rows() && a.data_.cols() == b.data_.cols() &&
           a.data_ == b.data_;
  }

 private:
  Matrix data_;
};

struct EmbeddingConfig {
  int dim = 64;
  double noise_sigma = 0.1;
  double camera_shift_sigma = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct IdentityPrototype {
  int identity_id = 0;
  Vector direction;  // unit norm
};

// Draws `count` unit directions. Prefix-stable: the first m prototypes of a
// larger universe equal the prototypes of a universe of size m.
std::vector<IdentityPrototype> make_prototypes(int count, const EmbeddingConfig& cfg);

// Fixed additive shift of one camera; zero when camera_shift_sigma == 0.
Vector camera_bias(int camera_id, const EmbeddingConfig& cfg);

// normalize(direction + camera_bias + N(0, noise_sigma^2 I)).
Vector sample_frame(const IdentityPrototype& proto, int camera_id, const EmbeddingConfig& cfg,
                    Rng& rng);

// Source of per-frame features for tracklets of a given identity and camera.
class FeatureProvider {
 public:
  virtual ~FeatureProvider() = default;

  virtual int dim() const = 0;
  virtual int identities() const = 0;
  virtual FeatureMatrix tracklet(int identity, int camera_id, int frames, Rng& rng) const = 0;
};

class SyntheticProvider final : public FeatureProvider {
 public:
  SyntheticProvider(EmbeddingConfig cfg, int identities);

  int dim() const override { return cfg_.dim; }
  int identities() const override { return static_cast<int>(prototypes_.size()); }
  FeatureMatrix tracklet(int identity, int camera_id, int frames, Rng& rng) const override;

  const EmbeddingConfig& config() const { return cfg_; }
  const std::vector<IdentityPrototype>& prototypes() const { return prototypes_; }

 private:
  EmbeddingConfig cfg_;
  std::vector<IdentityPrototype> prototypes_;
};

struct FeatureFile;

// Serves frames pooled by ground-truth identity from precomputed features.
// Same-camera frames are preferred; other cameras are used when the identity
// was never observed by the requested camera.
class PrecomputedProvider final : public FeatureProvider {
 public:
  explicit PrecomputedProvider(const FeatureFile& file);

  int dim() const override { return dim_; }
  int identities() const override { return static_cast<int>(pools_.size()); }
  FeatureMatrix tracklet(int identity, int camera_id, int frames, Rng& rng) const override;

 private:
  struct Frame {
    int camera_id;
    Vector feature;
  };
  int dim_ = 0;
  std::vector<std::vector<Frame>> pools_;  // indexed by identity
};

}  // namespace weakmil
