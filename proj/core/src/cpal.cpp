#include "weakmil/cpal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "weakmil/errors.hpp"

namespace weakmil {
namespace {

constexpr double kMinNorm = 1e-12;

// Gradient of cos(a, b) with respect to a.
Vector cosine_grad(const Vector& a, const Vector& b, double cos) {
  const double na = a.norm();
  const double nb = b.norm();
  return b / (na * nb) - cos * a / (na * na);
}

struct Side {
  Vector attention;
  AttentionFeatures features;
};

Side forward_side(const FeatureMatrix& x, const Vector& logits) {
  if (logits.size() != x.frames()) throw ShapeError("activation row length differs from frame count");
  Vector a = frame_attention_row(logits);
  return {a, attention_features(x, a)};
}

// Maps d loss / dH and d loss / dL back to the activation row.
Vector backward_logits(const FeatureMatrix& x, const Vector& attention, const Vector& g_high,
                       const Vector& g_low) {
  const double n = static_cast<double>(x.frames());
  Vector g_att = x.matrix().transpose() * g_high - x.matrix().transpose() * g_low / (n - 1.0);
  return attention.array() * (g_att.array() - attention.dot(g_att));
}

// d loss / dX with the attention held fixed.
Matrix backward_features(const Vector& attention, const Vector& g_high, const Vector& g_low) {
  const double n = static_cast<double>(attention.size());
  Vector rest = (Vector::Ones(attention.size()) - attention) / (n - 1.0);
  return g_high * attention.transpose() + g_low * rest.transpose();
}

}  // namespace

Vector frame_attention_row(const Vector& logits) {
  if (logits.size() == 0) throw ShapeError("attention over zero frames");
  Vector e = (logits.array() - logits.maxCoeff()).exp();
  return e / e.sum();
}

AttentionMatrix frame_attention(const ActivationMatrix& activations) {
  if (activations.cols() == 0) throw ShapeError("attention over zero frames");
  AttentionMatrix out(activations.rows(), activations.cols());
  for (Eigen::Index j = 0; j < activations.rows(); ++j) {
    out.row(j) = frame_attention_row(activations.row(j).transpose()).transpose();
  }
  return out;
}

const Vector& AttentionFeatures::low() const {
  if (!low_) throw UndefinedLowError("low-attention feature is undefined for a single-frame bag");
  return *low_;
}

AttentionFeatures attention_features(const FeatureMatrix& x, const Vector& attention) {
  if (attention.size() != x.frames()) throw ShapeError("attention length differs from frame count");
  Vector high = x.matrix() * attention;
  if (x.frames() == 1) return {std::move(high), std::nullopt};
  Vector low = x.matrix() * (Vector::Ones(attention.size()) - attention) /
               static_cast<double>(x.frames() - 1);
  return {std::move(high), std::move(low)};
}

double cosine_sim(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw ShapeError("cosine of vectors with different sizes");
  const double na = a.norm();
  const double nb = b.norm();
  if (!(na > kMinNorm) || !(nb > kMinNorm)) throw NumericError("cosine similarity of a zero vector");
  return a.dot(b) / (na * nb);
}

PairLoss cpal_pair_loss(const FeatureMatrix& xm, const Vector& logits_m, const FeatureMatrix& xn,
                        const Vector& logits_n, const CpalOptions& opts) {
  if (xm.dim() != xn.dim()) throw ShapeError("paired bags have different feature dimensions");
  Side m = forward_side(xm, logits_m);
  Side n = forward_side(xn, logits_n);
  const Vector& hm = m.features.high();
  const Vector& hn = n.features.high();
  const Vector& lm = m.features.low();
  const Vector& ln = n.features.low();

  const double s_hh = cosine_sim(hm, hn);
  const double s_hl = cosine_sim(hm, ln);
  const double s_lh = cosine_sim(lm, hn);
  const double sign = opts.sign == HingeSign::standard ? 1.0 : -1.0;
  const double t1 = opts.margin + sign * (s_hl - s_hh);
  const double t2 = opts.margin + sign * (s_lh - s_hh);

  PairLoss out;
  out.value = 0.5 * (std::max(0.0, t1) + std::max(0.0, t2));
  out.min_hinge_gap = std::min(std::abs(t1), std::abs(t2));

  const Eigen::Index d = xm.dim();
  Vector g_hm = Vector::Zero(d), g_lm = Vector::Zero(d), g_hn = Vector::Zero(d), g_ln = Vector::Zero(d);
  const double c1 = t1 > 0.0 ? 0.5 * sign : 0.0;
  const double c2 = t2 > 0.0 ? 0.5 * sign : 0.0;
  if (c1 != 0.0 || c2 != 0.0) {
    // Both terms subtract s(Hm, Hn).
    g_hm -= (c1 + c2) * cosine_grad(hm, hn, s_hh);
    g_hn -= (c1 + c2) * cosine_grad(hn, hm, s_hh);
  }
  if (c1 != 0.0) {
    g_hm += c1 * cosine_grad(hm, ln, s_hl);
    g_ln += c1 * cosine_grad(ln, hm, s_hl);
  }
  if (c2 != 0.0) {
    g_lm += c2 * cosine_grad(lm, hn, s_lh);
    g_hn += c2 * cosine_grad(hn, lm, s_lh);
  }
  out.grad_logits_m = backward_logits(xm, m.attention, g_hm, g_lm);
  out.grad_logits_n = backward_logits(xn, n.attention, g_hn, g_ln);
  out.grad_features_m = backward_features(m.attention, g_hm, g_lm);
  out.grad_features_n = backward_features(n.attention, g_hn, g_ln);
  return out;
}

std::vector<CoIdentityPair> enumerate_pairs(std::span<const BagView> batch) {
  std::vector<CoIdentityPair> pairs;
  for (std::size_t m = 0; m < batch.size(); ++m) {
    for (std::size_t n = m + 1; n < batch.size(); ++n) {
      const auto& a = batch[m].weak_labels;
      const auto& b = batch[n].weak_labels;
      std::vector<int> shared;
      std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(shared));
      for (int j : shared) pairs.push_back({static_cast<int>(m), static_cast<int>(n), j});
    }
  }
  return pairs;
}

CpalTotal cpal_total(std::span<const BagView> batch, const ProjectionParams& params,
                     const CpalOptions& opts) {
  const int classes = params.classes();
  const bool adapter = params.has_adapter();
  CpalTotal out;
  out.grad = ParamGradients::zeros(classes, params.dim(), adapter);
  out.min_hinge_gap = std::numeric_limits<double>::infinity();

  std::vector<FeatureMatrix> feats;
  std::vector<ActivationMatrix> acts;
  feats.reserve(batch.size());
  acts.reserve(batch.size());
  for (const auto& bag : batch) {
    feats.emplace_back(adapted_features(params, bag.features));
    ActivationMatrix w = params.weight * feats.back().matrix();
    w.colwise() += params.bias;
    acts.push_back(std::move(w));
  }

  // identity -> pair losses, in enumeration order for a stable reduction.
  std::map<int, std::vector<std::pair<CoIdentityPair, PairLoss>>> buckets;
  for (const auto& pair : enumerate_pairs(batch)) {
    if (pair.identity < 0 || pair.identity >= classes) {
      throw ValidationError("shared identity " + std::to_string(pair.identity) + " outside projection range");
    }
    const auto m = static_cast<std::size_t>(pair.bag_m);
    const auto n = static_cast<std::size_t>(pair.bag_n);
    try {
      PairLoss loss = cpal_pair_loss(feats[m], acts[m].row(pair.identity).transpose(), feats[n],
                                     acts[n].row(pair.identity).transpose(), opts);
      buckets[pair.identity].emplace_back(pair, std::move(loss));
    } catch (const UndefinedLowError&) {
      ++out.skipped_single_frame;
    }
  }

  for (const auto& [identity, losses] : buckets) {
    const double w = 1.0 / static_cast<double>(losses.size());
    double sum = 0.0;
    for (const auto& [pair, loss] : losses) {
      sum += loss.value;
      out.min_hinge_gap = std::min(out.min_hinge_gap, loss.min_hinge_gap);
      const auto m = static_cast<std::size_t>(pair.bag_m);
      const auto n = static_cast<std::size_t>(pair.bag_n);
      const Matrix& fm = feats[m].matrix();
      const Matrix& fn = feats[n].matrix();
      out.grad.weight.row(identity) += w * (fm * loss.grad_logits_m).transpose();
      out.grad.weight.row(identity) += w * (fn * loss.grad_logits_n).transpose();
      out.grad.bias[identity] += w * (loss.grad_logits_m.sum() + loss.grad_logits_n.sum());
      if (adapter) {
        const auto wj = params.weight.row(identity).transpose();
        Matrix gm = loss.grad_features_m + wj * loss.grad_logits_m.transpose();
        Matrix gn = loss.grad_features_n + wj * loss.grad_logits_n.transpose();
        out.grad.adapter += w * (gm * batch[m].features.matrix().transpose() +
                                 gn * batch[n].features.matrix().transpose());
      }
    }
    out.value += w * sum;
    out.valid_pairs += static_cast<int>(losses.size());
    ++out.identities;
  }
  if (out.identities > 0) {
    out.no_pairs = false;
    const double s = 1.0 / static_cast<double>(out.identities);
    out.value *= s;
    out.grad *= s;
  }
  return out;
}

}  // namespace weakmil
