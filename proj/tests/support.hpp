#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "weakmil/datamodel.hpp"
#include "weakmil/milhead.hpp"
#include "weakmil/rng.hpp"

namespace testing {

namespace fs = std::filesystem;
using weakmil::BagView;
using weakmil::FeatureMatrix;
using weakmil::Matrix;
using weakmil::ParamGradients;
using weakmil::ProjectionParams;
using weakmil::Rng;
using weakmil::Vector;

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("weakmil-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Matrix gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = scale * rng.normal();
  }
  return m;
}

inline FeatureMatrix features(std::initializer_list<std::initializer_list<double>> columns) {
  const auto n = static_cast<Eigen::Index>(columns.size());
  const auto d = static_cast<Eigen::Index>(columns.begin()->size());
  Matrix m(d, n);
  Eigen::Index c = 0;
  for (const auto& col : columns) {
    Eigen::Index r = 0;
    for (double v : col) m(r++, c) = v;
    ++c;
  }
  return FeatureMatrix(std::move(m));
}

inline BagView view(int id, std::vector<int> labels, FeatureMatrix x) {
  return BagView{id, 0, std::move(x), std::move(labels)};
}

inline ProjectionParams random_params(int classes, int dim, Rng& rng, bool adapter = false) {
  ProjectionParams p = ProjectionParams::zeros(classes, dim, adapter);
  p.weight = gaussian(classes, dim, rng);
  p.bias = gaussian(classes, 1, rng, 0.5);
  if (adapter) p.adapter = Matrix::Identity(dim, dim) + gaussian(dim, dim, rng, 0.3);
  return p;
}

// Central differences, written independently of the library's checker.
inline ParamGradients finite_difference(const std::function<double(const ProjectionParams&)>& f,
                                        const ProjectionParams& at, double h = 1e-5) {
  ProjectionParams p = at;
  ParamGradients g = ParamGradients::zeros(at.classes(), at.dim(), at.has_adapter());
  auto probe = [&](double& slot) {
    const double keep = slot;
    slot = keep + h;
    const double up = f(p);
    slot = keep - h;
    const double down = f(p);
    slot = keep;
    return (up - down) / (2 * h);
  };
  for (Eigen::Index r = 0; r < p.weight.rows(); ++r) {
    for (Eigen::Index c = 0; c < p.weight.cols(); ++c) g.weight(r, c) = probe(p.weight(r, c));
  }
  for (Eigen::Index r = 0; r < p.bias.size(); ++r) g.bias[r] = probe(p.bias[r]);
  for (Eigen::Index r = 0; r < p.adapter.rows(); ++r) {
    for (Eigen::Index c = 0; c < p.adapter.cols(); ++c) g.adapter(r, c) = probe(p.adapter(r, c));
  }
  return g;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

inline double worst_rel_err(const ParamGradients& a, const ParamGradients& b) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.weight.size(); ++i) worst = std::max(worst, rel_err(a.weight(i), b.weight(i)));
  for (Eigen::Index i = 0; i < a.bias.size(); ++i) worst = std::max(worst, rel_err(a.bias(i), b.bias(i)));
  for (Eigen::Index i = 0; i < a.adapter.size(); ++i) {
    worst = std::max(worst, rel_err(a.adapter(i), b.adapter(i)));
  }
  return worst;
}

}  // namespace testing
