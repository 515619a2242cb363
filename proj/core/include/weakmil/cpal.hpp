#pragma once

#include <optional>
#include <span>
#include <vector>

#include "weakmil/datamodel.hpp"
#include "weakmil/milhead.hpp"

namespace weakmil {

// C x n, each row a softmax over the frame axis.
using AttentionMatrix = Matrix;

AttentionMatrix frame_attention(const ActivationMatrix& activations);

// Softmax of a single activation row over frames.
Vector frame_attention_row(const Vector& logits);

class AttentionFeatures {
 public:
  AttentionFeatures(Vector high, std::optional<Vector> low)
      : high_(std::move(high)), low_(std::move(low)) {}

  const Vector& high() const { return high_; }
  bool has_low() const { return low_.has_value(); }
  // Throws UndefinedLowError for single-frame bags.
  const Vector& low() const;

 private:
  Vector high_;
  std::optional<Vector> low_;
};

// high = X a, low = X (1 - a) / (n - 1); low is absent when n == 1.
AttentionFeatures attention_features(const FeatureMatrix& x, const Vector& attention);

double cosine_sim(const Vector& a, const Vector& b);

enum class HingeSign {
  // Penalize when a high/low similarity plus the margin exceeds the
  // high/high similarity.
  standard,
  // Flipped: penalizes high/high similarity.
  inverted,
};

struct CpalOptions {
  double margin = 0.5;
  HingeSign sign = HingeSign::standard;
};

struct CoIdentityPair {
  int bag_m = 0;  // positions in the batch
  int bag_n = 0;
  int identity = 0;
};

struct PairLoss {
  double value = 0.0;
  Vector grad_logits_m;  // d loss / d activation row of the shared identity
  Vector grad_logits_n;
  Matrix grad_features_m;  // direct d loss / d X through the pooled features
  Matrix grad_features_n;
  double min_hinge_gap = 0.0;  // distance of the closest hinge argument to 0
};

// Ranking hinge between two bags sharing one identity. `logits_*` are the
// activation rows of that identity. Throws UndefinedLowError when either bag
// has a single frame.
PairLoss cpal_pair_loss(const FeatureMatrix& xm, const Vector& logits_m, const FeatureMatrix& xn,
                        const Vector& logits_n, const CpalOptions& opts = {});

// All unordered (m < n, identity) triples whose bags share the identity.
std::vector<CoIdentityPair> enumerate_pairs(std::span<const BagView> batch);

struct CpalTotal {
  double value = 0.0;
  ParamGradients grad;
  int identities = 0;         // identities contributing at least one pair
  int valid_pairs = 0;
  int skipped_single_frame = 0;
  bool no_pairs = true;
  double min_hinge_gap = 0.0;
};

// Per-identity mean over in-batch pairs, then mean over identities with at
// least one valid pair. Pairs touching a single-frame bag are skipped.
// Pooled features live in adapter space when the params carry an adapter.
CpalTotal cpal_total(std::span<const BagView> batch, const ProjectionParams& params,
                     const CpalOptions& opts = {});

}  // namespace weakmil
