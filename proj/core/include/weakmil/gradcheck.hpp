#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "weakmil/datamodel.hpp"
#include "weakmil/milhead.hpp"
#include "weakmil/rng.hpp"
#include "weakmil/trainer.hpp"

namespace weakmil {

// |a - n| / max(|a|, |n|, floor): relative where the gradient is sizeable,
// absolute (scaled by 1/floor) where both values are tiny.
double relative_error(double analytic, double numeric, double floor = 1e-6);

using ScalarLoss = std::function<double(const ProjectionParams&)>;

// Central differences of `loss` over every weight and bias entry.
ParamGradients numeric_gradient(const ScalarLoss& loss, const ProjectionParams& at, double step);

double max_relative_error(const ParamGradients& analytic, const ParamGradients& numeric, double floor = 1e-6);

struct GradCheckOptions {
  int trials = 100;
  std::uint64_t seed = 0;
  double step = 1e-5;
  double tolerance = 1e-4;
  // Minimum distance of top-k boundaries and hinge arguments from their kinks.
  double kink_margin = 1e-4;
  int max_resamples_per_trial = 1000;
  int min_classes = 2, max_classes = 8;
  int min_dim = 4, max_dim = 16;
  int min_frames = 2, max_frames = 12;
  int min_k = 1, max_k = 5;
  // Share of instances that also carry a learnable feature adapter.
  double adapter_fraction = 0.5;
};

struct GradInstance {
  std::vector<BagView> batch;
  ProjectionParams params;
  TrainConfig config;
};

// Random batch of 2-4 bags (the first two share an identity) with random
// projection parameters and lambda.
GradInstance random_instance(const GradCheckOptions& opts, Rng& rng);

// Distance of the instance from the nearest top-k or hinge kink.
double kink_distance(const GradInstance& inst);

struct GradCheckReport {
  int trials = 0;
  int resampled = 0;
  double worst_mil = 0.0;
  double worst_cpal = 0.0;
  double worst_joint = 0.0;
  bool passed = true;

  double worst() const;
};

GradCheckReport run_gradcheck(const GradCheckOptions& opts);

}  // namespace weakmil
