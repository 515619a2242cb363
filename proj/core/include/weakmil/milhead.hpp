#pragma once

#include <span>
#include <vector>

#include "weakmil/datamodel.hpp"
#include "weakmil/embedding.hpp"
#include "weakmil/rng.hpp"

namespace weakmil {

// C x n identity-wise activations of one bag.
using ActivationMatrix = Matrix;

struct ParamGradients {
  Matrix weight;   // C x d
  Vector bias;     // C
  Matrix adapter;  // d x d, empty when the adapter is disabled

  static ParamGradients zeros(int classes, int dim, bool adapter = false);

  ParamGradients& operator+=(const ParamGradients& other);
  ParamGradients& operator*=(double s);
  bool all_finite() const { return weight.allFinite() && bias.allFinite() && adapter.allFinite(); }
};

// Fully connected projection from feature space to identity space, with an
// optional learnable linear adapter applied to the features first:
// activations = weight * (adapter * X) + bias.
struct ProjectionParams {
  Matrix weight;   // C x d
  Vector bias;     // C
  Matrix adapter;  // d x d or empty
  ParamGradients grad;

  int classes() const { return static_cast<int>(weight.rows()); }
  int dim() const { return static_cast<int>(weight.cols()); }
  bool has_adapter() const { return adapter.size() > 0; }

  static ProjectionParams zeros(int classes, int dim, bool adapter = false);
  // Uniform weights in [-1/sqrt(d), 1/sqrt(d)], zero bias, identity adapter.
  static ProjectionParams initialize(int classes, int dim, Rng& rng, bool adapter = false);
};

// adapter * X, or X itself without an adapter.
Matrix adapted_features(const ProjectionParams& params, const FeatureMatrix& x);

ActivationMatrix project(const ProjectionParams& params, const FeatureMatrix& x);

struct PooledScore {
  double value = 0.0;
  std::vector<int> indices;  // ascending frame indices of the selected entries
};

// Mean of the min(k, n) largest entries; ties go to the lowest index.
PooledScore kmax_mean_pool(std::span<const double> row, int k);

// Softmax with max subtraction.
Vector class_pmf(const Vector& scores);

struct BagPrediction {
  Vector pooled;                         // p_i, one score per identity
  Vector pmf;                            // softmax(pooled)
  std::vector<std::vector<int>> topk;    // selected frames per identity
};

BagPrediction predict_bag(const ActivationMatrix& activations, int k);

// Smallest gap between the k-th and (k+1)-th largest activation over all
// rows; +inf when every row has n <= k. Finite-difference checks need this
// gap to stay clear of the perturbation size.
double topk_boundary_gap(const ActivationMatrix& activations, int k);

// Weak label set as a vector with uniform mass 1/|labels| on the labels.
Vector normalized_labels(std::span<const int> weak_labels, int classes);

struct LossResult {
  double value = 0.0;
  ParamGradients grad;
};

// Mean over the batch of the cross entropy between normalized weak labels
// and the bag pmf. Gradients reach only the selected top-k frames.
LossResult mil_loss(std::span<const BagView> batch, const ProjectionParams& params, int k);

}  // namespace weakmil
