#include "weakmil/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "weakmil/cpal.hpp"
#include "weakmil/errors.hpp"

namespace weakmil {

double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

ParamGradients numeric_gradient(const ScalarLoss& loss, const ProjectionParams& at, double step) {
  ProjectionParams p = at;
  auto central = [&](double& slot) {
    const double saved = slot;
    slot = saved + step;
    const double up = loss(p);
    slot = saved - step;
    const double down = loss(p);
    slot = saved;
    return (up - down) / (2.0 * step);
  };
  ParamGradients g = ParamGradients::zeros(at.classes(), at.dim(), at.has_adapter());
  for (Eigen::Index j = 0; j < p.weight.rows(); ++j) {
    for (Eigen::Index i = 0; i < p.weight.cols(); ++i) g.weight(j, i) = central(p.weight(j, i));
    g.bias[j] = central(p.bias[j]);
  }
  for (Eigen::Index r = 0; r < p.adapter.rows(); ++r) {
    for (Eigen::Index c = 0; c < p.adapter.cols(); ++c) g.adapter(r, c) = central(p.adapter(r, c));
  }
  return g;
}

double max_relative_error(const ParamGradients& analytic, const ParamGradients& numeric, double floor) {
  double worst = 0.0;
  for (Eigen::Index j = 0; j < analytic.weight.rows(); ++j) {
    for (Eigen::Index i = 0; i < analytic.weight.cols(); ++i) {
      worst = std::max(worst, relative_error(analytic.weight(j, i), numeric.weight(j, i), floor));
    }
    worst = std::max(worst, relative_error(analytic.bias[j], numeric.bias[j], floor));
  }
  if (analytic.adapter.size() != numeric.adapter.size()) throw ShapeError("adapter gradient shapes differ");
  for (Eigen::Index r = 0; r < analytic.adapter.rows(); ++r) {
    for (Eigen::Index c = 0; c < analytic.adapter.cols(); ++c) {
      worst = std::max(worst, relative_error(analytic.adapter(r, c), numeric.adapter(r, c), floor));
    }
  }
  return worst;
}

GradInstance random_instance(const GradCheckOptions& opts, Rng& rng) {
  const int classes = rng.range(opts.min_classes, opts.max_classes);
  const int dim = rng.range(opts.min_dim, opts.max_dim);
  const int bags = rng.range(2, 4);

  GradInstance inst;
  inst.config.k = rng.range(opts.min_k, opts.max_k);
  inst.config.lambda = 0.1 + 0.8 * rng.uniform();
  const bool adapter = opts.adapter_fraction > 0.0 && rng.uniform() < opts.adapter_fraction;
  inst.config.adapter = adapter;
  inst.params = ProjectionParams::zeros(classes, dim, adapter);
  for (Eigen::Index j = 0; j < classes; ++j) {
    for (Eigen::Index i = 0; i < dim; ++i) inst.params.weight(j, i) = rng.normal();
    inst.params.bias[j] = 0.5 * rng.normal();
  }
  if (adapter) {
    inst.params.adapter = Matrix::Identity(dim, dim);
    for (Eigen::Index r = 0; r < dim; ++r) {
      for (Eigen::Index c = 0; c < dim; ++c) inst.params.adapter(r, c) += 0.3 * rng.normal();
    }
  }

  const int shared = rng.range(0, classes - 1);
  for (int b = 0; b < bags; ++b) {
    const int n = rng.range(opts.min_frames, opts.max_frames);
    Matrix x(dim, n);
    for (Eigen::Index t = 0; t < n; ++t) {
      for (Eigen::Index i = 0; i < dim; ++i) x(i, t) = rng.normal();
    }
    std::vector<int> labels;
    if (b < 2) labels.push_back(shared);
    const int extra = rng.range(b < 2 ? 0 : 1, std::min(3, classes));
    for (int e = 0; e < extra; ++e) labels.push_back(rng.range(0, classes - 1));
    std::sort(labels.begin(), labels.end());
    labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
    inst.batch.push_back({b, 0, FeatureMatrix(std::move(x)), std::move(labels)});
  }
  return inst;
}

double kink_distance(const GradInstance& inst) {
  double gap = std::numeric_limits<double>::infinity();
  for (const auto& bag : inst.batch) {
    gap = std::min(gap, topk_boundary_gap(project(inst.params, bag.features), inst.config.k));
  }
  CpalTotal c = cpal_total(inst.batch, inst.params, inst.config.cpal_options());
  return std::min(gap, c.min_hinge_gap);
}

double GradCheckReport::worst() const { return std::max({worst_mil, worst_cpal, worst_joint}); }

GradCheckReport run_gradcheck(const GradCheckOptions& opts) {
  GradCheckReport rep;
  Rng rng(opts.seed);
  for (int trial = 0; trial < opts.trials; ++trial) {
    GradInstance inst = random_instance(opts, rng);
    int attempts = 0;
    while (kink_distance(inst) < opts.kink_margin) {
      if (++attempts > opts.max_resamples_per_trial) {
        throw InfeasibleError("gradient check could not find a point away from kinks");
      }
      ++rep.resampled;
      inst = random_instance(opts, rng);
    }
    const auto& batch = inst.batch;
    const auto& cfg = inst.config;

    LossResult mil = mil_loss(batch, inst.params, cfg.k);
    auto mil_num = numeric_gradient([&](const ProjectionParams& p) { return mil_loss(batch, p, cfg.k).value; },
                                    inst.params, opts.step);
    rep.worst_mil = std::max(rep.worst_mil, max_relative_error(mil.grad, mil_num));

    CpalTotal cpal = cpal_total(batch, inst.params, cfg.cpal_options());
    auto cpal_num = numeric_gradient(
        [&](const ProjectionParams& p) { return cpal_total(batch, p, cfg.cpal_options()).value; }, inst.params,
        opts.step);
    rep.worst_cpal = std::max(rep.worst_cpal, max_relative_error(cpal.grad, cpal_num));

    JointLoss joint = joint_loss(batch, inst.params, cfg);
    auto joint_num = numeric_gradient([&](const ProjectionParams& p) { return joint_loss(batch, p, cfg).value; },
                                      inst.params, opts.step);
    rep.worst_joint = std::max(rep.worst_joint, max_relative_error(joint.grad, joint_num));
    ++rep.trials;
  }
  rep.passed = rep.worst() < opts.tolerance;
  return rep;
}

}  // namespace weakmil
