#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "weakmil/cpal.hpp"
#include "weakmil/datamodel.hpp"
#include "weakmil/milhead.hpp"
#include "weakmil/rng.hpp"

namespace weakmil {

struct TrainConfig {
  double lambda = 0.5;  // weight of the MIL term
  int k = 5;
  double margin = 0.5;
  HingeSign sign = HingeSign::standard;
  int batch_size = 10;
  int min_co_pairs = 3;
  double lr_initial = 0.01;
  double lr_after = 0.001;
  int lr_switch_epoch = 10;
  double momentum = 0.9;
  int epochs = 20;
  int bag_cap = 100;
  int max_batch_retries = 1000;
  bool adapter = false;  // also learn a d x d linear map over the features
  std::uint64_t seed = 0;

  void validate() const;
  CpalOptions cpal_options() const { return {margin, sign}; }
};

// Bags reachable by the optimizer: weak labels only.
struct TrainingSet {
  int num_identities = 0;
  std::vector<BagView> bags;
};

TrainingSet training_set(const Dataset& ds);

struct OptimizerState {
  ParamGradients velocity;
  long step = 0;
  int epoch = 0;
};

double learning_rate(const TrainConfig& cfg, int epoch);

// Unordered bag pairs in the batch sharing at least one identity.
int count_co_pairs(std::span<const BagView> batch);

struct Batch {
  std::vector<BagView> bags;
  int co_pairs = 0;
};

// batch_size distinct bags with at least min_co_pairs co-identity pairs,
// each capped at bag_cap frames.
Batch sample_batch(const TrainingSet& data, const TrainConfig& cfg, Rng& rng);

struct JointLoss {
  double value = 0.0;
  double mil = 0.0;
  double cpal = 0.0;
  ParamGradients grad;
  int cpal_pairs = 0;
  int skipped_single_frame = 0;
  bool no_pairs = false;
  double min_hinge_gap = 0.0;
};

// lambda * L_mil + (1 - lambda) * L_cpal and the matching gradient mix.
JointLoss joint_loss(std::span<const BagView> batch, const ProjectionParams& params, const TrainConfig& cfg);

// Heavy-ball momentum: v <- m v + g; theta <- theta - lr(epoch) v.
void sgd_step(ProjectionParams& params, const ParamGradients& grad, OptimizerState& state,
              const TrainConfig& cfg);

struct EpochMetrics {
  int epoch = 0;
  double loss = 0.0;
  double loss_mil = 0.0;
  double loss_cpal = 0.0;
  double lr = 0.0;
  double pairs_per_batch_mean = 0.0;
  int no_pair_batches = 0;
};

struct Checkpoint {
  TrainConfig config;
  int num_identities = 0;
  ProjectionParams params;
  OptimizerState optimizer;
  std::string rng_state;
  int epoch = 0;
  std::vector<EpochMetrics> history;
};

using WarningSink = std::function<void(const std::string&)>;

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<std::string> warnings;
};

TrainResult train(const TrainingSet& data, const TrainConfig& cfg, const WarningSink& warn = {});
TrainResult train(const Dataset& ds, const TrainConfig& cfg, const WarningSink& warn = {});

}  // namespace weakmil
