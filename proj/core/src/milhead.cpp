#include "weakmil/milhead.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "weakmil/errors.hpp"

namespace weakmil {
namespace {

constexpr double kLogFloor = 1e-30;

std::vector<double> row_of(const ActivationMatrix& m, Eigen::Index j) {
  std::vector<double> row(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index t = 0; t < m.cols(); ++t) row[static_cast<std::size_t>(t)] = m(j, t);
  return row;
}

// Frame indices ordered by activation descending, lowest index first on ties.
std::vector<int> descending_order(std::span<const double> row) {
  std::vector<int> order(row.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return row[static_cast<std::size_t>(a)] > row[static_cast<std::size_t>(b)];
  });
  return order;
}

}  // namespace

ParamGradients ParamGradients::zeros(int classes, int dim, bool adapter) {
  return {Matrix::Zero(classes, dim), Vector::Zero(classes), adapter ? Matrix::Zero(dim, dim) : Matrix()};
}

ParamGradients& ParamGradients::operator+=(const ParamGradients& other) {
  weight += other.weight;
  bias += other.bias;
  if (other.adapter.size() > 0) {
    if (adapter.size() == 0) adapter = Matrix::Zero(other.adapter.rows(), other.adapter.cols());
    adapter += other.adapter;
  }
  return *this;
}

ParamGradients& ParamGradients::operator*=(double s) {
  weight *= s;
  bias *= s;
  adapter *= s;
  return *this;
}

ProjectionParams ProjectionParams::zeros(int classes, int dim, bool adapter) {
  if (classes < 1 || dim < 1) throw ShapeError("projection needs C >= 1 and d >= 1");
  return {Matrix::Zero(classes, dim), Vector::Zero(classes), adapter ? Matrix::Zero(dim, dim) : Matrix(),
          ParamGradients::zeros(classes, dim, adapter)};
}

ProjectionParams ProjectionParams::initialize(int classes, int dim, Rng& rng, bool adapter) {
  ProjectionParams p = zeros(classes, dim, adapter);
  if (adapter) p.adapter = Matrix::Identity(dim, dim);
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  for (Eigen::Index j = 0; j < p.weight.rows(); ++j) {
    for (Eigen::Index i = 0; i < p.weight.cols(); ++i) p.weight(j, i) = bound * (2.0 * rng.uniform() - 1.0);
  }
  return p;
}

Matrix adapted_features(const ProjectionParams& params, const FeatureMatrix& x) {
  if (x.dim() != params.dim()) {
    throw ShapeError("feature dimension " + std::to_string(x.dim()) + " does not match projection input " +
                     std::to_string(params.dim()));
  }
  if (!params.has_adapter()) return x.matrix();
  return params.adapter * x.matrix();
}

ActivationMatrix project(const ProjectionParams& params, const FeatureMatrix& x) {
  ActivationMatrix w = params.weight * adapted_features(params, x);
  w.colwise() += params.bias;
  return w;
}

PooledScore kmax_mean_pool(std::span<const double> row, int k) {
  if (row.empty()) throw ValidationError("k-max-mean pooling of an empty row");
  if (k < 1) throw ValidationError("k must be >= 1");
  const auto keff = std::min<std::size_t>(static_cast<std::size_t>(k), row.size());
  auto order = descending_order(row);
  PooledScore out;
  out.indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keff));
  std::sort(out.indices.begin(), out.indices.end());
  // Summing in index order makes k >= n reproduce the plain row mean exactly.
  double sum = 0.0;
  for (int t : out.indices) sum += row[static_cast<std::size_t>(t)];
  out.value = sum / static_cast<double>(keff);
  return out;
}

Vector class_pmf(const Vector& scores) {
  if (scores.size() == 0) return scores;
  if (!scores.allFinite()) throw NumericError("class_pmf: non-finite score");
  Vector e = (scores.array() - scores.maxCoeff()).exp();
  return e / e.sum();
}

BagPrediction predict_bag(const ActivationMatrix& activations, int k) {
  BagPrediction pred;
  pred.pooled.resize(activations.rows());
  pred.topk.reserve(static_cast<std::size_t>(activations.rows()));
  for (Eigen::Index j = 0; j < activations.rows(); ++j) {
    auto row = row_of(activations, j);
    auto pooled = kmax_mean_pool(row, k);
    pred.pooled[j] = pooled.value;
    pred.topk.push_back(std::move(pooled.indices));
  }
  pred.pmf = class_pmf(pred.pooled);
  return pred;
}

double topk_boundary_gap(const ActivationMatrix& activations, int k) {
  double gap = std::numeric_limits<double>::infinity();
  if (activations.cols() <= k) return gap;
  for (Eigen::Index j = 0; j < activations.rows(); ++j) {
    auto row = row_of(activations, j);
    auto order = descending_order(row);
    gap = std::min(gap, row[static_cast<std::size_t>(order[static_cast<std::size_t>(k - 1)])] -
                            row[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])]);
  }
  return gap;
}

Vector normalized_labels(std::span<const int> weak_labels, int classes) {
  if (weak_labels.empty()) throw ValidationError("bag has an empty weak label set");
  Vector y = Vector::Zero(classes);
  for (int j : weak_labels) {
    if (j < 0 || j >= classes) {
      throw ValidationError("weak label " + std::to_string(j) + " outside [0, " + std::to_string(classes) + ")");
    }
    y[j] = 1.0;
  }
  return y / y.sum();
}

LossResult mil_loss(std::span<const BagView> batch, const ProjectionParams& params, int k) {
  if (batch.empty()) throw ValidationError("mil_loss needs a non-empty batch");
  const int classes = params.classes();
  const bool adapter = params.has_adapter();
  LossResult out{0.0, ParamGradients::zeros(classes, params.dim(), adapter)};
  for (const auto& bag : batch) {
    Vector y = normalized_labels(bag.weak_labels, classes);
    Matrix f = adapted_features(params, bag.features);
    ActivationMatrix w = params.weight * f;
    w.colwise() += params.bias;
    BagPrediction pred = predict_bag(w, k);
    for (int j = 0; j < classes; ++j) {
      if (y[j] > 0.0) out.value -= y[j] * std::log(std::max(pred.pmf[j], kLogFloor));
    }
    // d/dp of the cross entropy is pmf - y since y sums to one.
    Vector dp = pred.pmf - y;
    Matrix grad_f;
    if (adapter) grad_f = Matrix::Zero(f.rows(), f.cols());
    for (int j = 0; j < classes; ++j) {
      const auto& sel = pred.topk[static_cast<std::size_t>(j)];
      const double g = dp[j] / static_cast<double>(sel.size());
      for (int t : sel) {
        out.grad.weight.row(j) += g * f.col(t).transpose();
        if (adapter) grad_f.col(t) += g * params.weight.row(j).transpose();
      }
      out.grad.bias[j] += dp[j];
    }
    if (adapter) out.grad.adapter += grad_f * bag.features.matrix().transpose();
  }
  const double scale = 1.0 / static_cast<double>(batch.size());
  out.value *= scale;
  out.grad *= scale;
  return out;
}

}  // namespace weakmil
