#include "weakmil/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "weakmil/errors.hpp"

namespace weakmil {
namespace {

constexpr std::uint64_t kInitStream = 0x696e6974ULL;

bool share_identity(const BagView& a, const BagView& b) {
  auto i = a.weak_labels.begin();
  auto j = b.weak_labels.begin();
  while (i != a.weak_labels.end() && j != b.weak_labels.end()) {
    if (*i == *j) return true;
    if (*i < *j) ++i;
    else ++j;
  }
  return false;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ValidationError("lambda must lie in [0, 1]");
  if (k < 1) throw ValidationError("k must be >= 1");
  if (!(margin >= 0.0)) throw ValidationError("margin must be >= 0");
  if (batch_size < 2) throw ValidationError("batch_size must be >= 2");
  if (min_co_pairs < 0) throw ValidationError("min_co_pairs must be >= 0");
  if (!(lr_initial > 0.0) || !(lr_after > 0.0)) throw ValidationError("learning rates must be positive");
  if (lr_switch_epoch < 0) throw ValidationError("lr_switch_epoch must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("momentum must lie in [0, 1)");
  if (epochs < 0) throw ValidationError("epochs must be >= 0");
  if (bag_cap < 1) throw ValidationError("bag_cap must be >= 1");
  if (max_batch_retries < 1) throw ValidationError("max_batch_retries must be >= 1");
}

TrainingSet training_set(const Dataset& ds) {
  TrainingSet out{ds.num_identities, {}};
  out.bags.reserve(ds.bags.size());
  for (const auto& bag : ds.bags) out.bags.push_back(bag.view());
  return out;
}

double learning_rate(const TrainConfig& cfg, int epoch) {
  return epoch < cfg.lr_switch_epoch ? cfg.lr_initial : cfg.lr_after;
}

int count_co_pairs(std::span<const BagView> batch) {
  int pairs = 0;
  for (std::size_t m = 0; m < batch.size(); ++m) {
    for (std::size_t n = m + 1; n < batch.size(); ++n) pairs += share_identity(batch[m], batch[n]);
  }
  return pairs;
}

Batch sample_batch(const TrainingSet& data, const TrainConfig& cfg, Rng& rng) {
  const std::size_t total = data.bags.size();
  const auto size = static_cast<std::size_t>(cfg.batch_size);
  if (total < size) {
    throw InfeasibleError("batch of " + std::to_string(size) + " bags requested from " +
                          std::to_string(total) + " training bags");
  }
  std::vector<std::size_t> chosen;
  std::vector<char> used(total);
  for (int attempt = 0; attempt < cfg.max_batch_retries; ++attempt) {
    chosen.clear();
    std::fill(used.begin(), used.end(), 0);
    auto take = [&](std::size_t b) {
      chosen.push_back(b);
      used[b] = 1;
    };
    // Grow co-identity pairs first by pulling in a partner of a random member.
    take(static_cast<std::size_t>(rng.below(total)));
    int links = 0;
    while (links < cfg.min_co_pairs && chosen.size() < size) {
      const auto& anchor = data.bags[chosen[rng.below(chosen.size())]];
      std::vector<std::size_t> partners;
      for (std::size_t b = 0; b < total; ++b) {
        if (!used[b] && share_identity(anchor, data.bags[b])) partners.push_back(b);
      }
      if (partners.empty()) break;
      take(partners[rng.below(partners.size())]);
      ++links;
    }
    while (chosen.size() < size) {
      auto b = static_cast<std::size_t>(rng.below(total));
      if (!used[b]) take(b);
    }

    Batch batch;
    for (std::size_t b : chosen) batch.bags.push_back(data.bags[b]);
    batch.co_pairs = count_co_pairs(batch.bags);
    if (batch.co_pairs >= cfg.min_co_pairs) {
      for (auto& bag : batch.bags) bag = subsample_bag(bag, cfg.bag_cap, rng);
      return batch;
    }
  }
  throw InfeasibleError("could not form a batch of " + std::to_string(size) + " bags with at least " +
                        std::to_string(cfg.min_co_pairs) + " co-identity pairs after " +
                        std::to_string(cfg.max_batch_retries) + " attempts");
}

JointLoss joint_loss(std::span<const BagView> batch, const ProjectionParams& params, const TrainConfig& cfg) {
  LossResult mil = mil_loss(batch, params, cfg.k);
  CpalTotal cpal = cpal_total(batch, params, cfg.cpal_options());
  JointLoss out;
  out.mil = mil.value;
  out.cpal = cpal.value;
  out.value = cfg.lambda * mil.value + (1.0 - cfg.lambda) * cpal.value;
  out.grad = mil.grad;
  out.grad *= cfg.lambda;
  cpal.grad *= (1.0 - cfg.lambda);
  out.grad += cpal.grad;
  out.cpal_pairs = cpal.valid_pairs;
  out.skipped_single_frame = cpal.skipped_single_frame;
  out.no_pairs = cpal.no_pairs;
  out.min_hinge_gap = cpal.min_hinge_gap;
  return out;
}

void sgd_step(ProjectionParams& params, const ParamGradients& grad, OptimizerState& state,
              const TrainConfig& cfg) {
  if (!grad.all_finite()) {
    std::ostringstream os;
    os << "non-finite gradient at step " << state.step << " (epoch " << state.epoch
       << "): |grad W|=" << grad.weight.norm() << " |grad b|=" << grad.bias.norm();
    throw NumericError(os.str());
  }
  if (grad.weight.rows() != params.weight.rows() || grad.weight.cols() != params.weight.cols() ||
      grad.adapter.size() != params.adapter.size()) {
    throw ShapeError("gradient shapes do not match parameters");
  }
  if (state.velocity.weight.rows() != grad.weight.rows() || state.velocity.weight.cols() != grad.weight.cols() ||
      state.velocity.adapter.size() != grad.adapter.size()) {
    state.velocity = ParamGradients::zeros(params.classes(), params.dim(), params.has_adapter());
  }
  const double lr = learning_rate(cfg, state.epoch);
  state.velocity *= cfg.momentum;
  state.velocity += grad;
  params.weight -= lr * state.velocity.weight;
  params.bias -= lr * state.velocity.bias;
  if (params.has_adapter()) params.adapter -= lr * state.velocity.adapter;
  params.grad = grad;
  ++state.step;
}

TrainResult train(const TrainingSet& data, const TrainConfig& cfg, const WarningSink& warn) {
  cfg.validate();
  if (data.bags.empty()) throw ValidationError("training set is empty");
  if (data.num_identities < 1) throw ValidationError("training set has no identities");
  const int dim = static_cast<int>(data.bags.front().features.dim());
  for (const auto& bag : data.bags) {
    if (bag.features.dim() != dim) throw ShapeError("training bags have mixed feature dimensions");
  }

  TrainResult result;
  auto emit = [&](const std::string& msg) {
    result.warnings.push_back(msg);
    if (warn) warn(msg);
  };

  Rng init_rng(derive_seed(cfg.seed, kInitStream));
  Checkpoint& ck = result.checkpoint;
  ck.config = cfg;
  ck.num_identities = data.num_identities;
  ck.params = ProjectionParams::initialize(data.num_identities, dim, init_rng, cfg.adapter);
  ck.optimizer.velocity = ParamGradients::zeros(data.num_identities, dim, cfg.adapter);

  Rng rng(cfg.seed);
  const auto steps = static_cast<int>((data.bags.size() + static_cast<std::size_t>(cfg.batch_size) - 1) /
                                      static_cast<std::size_t>(cfg.batch_size));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    ck.optimizer.epoch = epoch;
    EpochMetrics m;
    m.epoch = epoch;
    m.lr = learning_rate(cfg, epoch);
    for (int s = 0; s < steps; ++s) {
      Batch batch = sample_batch(data, cfg, rng);
      JointLoss loss = joint_loss(batch.bags, ck.params, cfg);
      if (loss.skipped_single_frame > 0) {
        emit("epoch " + std::to_string(epoch) + " step " + std::to_string(s) + ": skipped " +
             std::to_string(loss.skipped_single_frame) + " CPAL pair(s) with a single-frame bag");
      }
      if (loss.no_pairs) {
        ++m.no_pair_batches;
        emit("epoch " + std::to_string(epoch) + " step " + std::to_string(s) +
             ": batch has no valid CPAL pair; CPAL term is 0");
      }
      sgd_step(ck.params, loss.grad, ck.optimizer, cfg);
      m.loss += loss.value;
      m.loss_mil += loss.mil;
      m.loss_cpal += loss.cpal;
      m.pairs_per_batch_mean += loss.cpal_pairs;
    }
    const double inv = 1.0 / steps;
    m.loss *= inv;
    m.loss_mil *= inv;
    m.loss_cpal *= inv;
    m.pairs_per_batch_mean *= inv;
    ck.history.push_back(m);
    ck.epoch = epoch + 1;
  }
  ck.optimizer.epoch = ck.epoch;
  ck.rng_state = rng.serialize();
  return result;
}

TrainResult train(const Dataset& ds, const TrainConfig& cfg, const WarningSink& warn) {
  return train(training_set(ds), cfg, warn);
}

}  // namespace weakmil
