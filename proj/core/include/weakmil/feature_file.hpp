#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <vector>

#include "weakmil/embedding.hpp"

namespace weakmil {

// One `bag` block of the line-oriented feature file:
//
//   dims d=<int>
//   bag <id> camera=<int> n=<int>
//   <n lines of d floats>
//   frames <n ints>          per-frame ground truth, -1 = unknown
//   tracks <r1,r2,...>       tracklet lengths, consecutive runs summing to n
//   labels <ints>            weak label set, may be empty
struct FeatureRecord {
  int bag_id = 0;
  int camera_id = 0;
  FeatureMatrix features;
  std::vector<int> frame_ids;
  std::vector<int> track_runs;
  std::vector<int> labels;
};

struct FeatureFile {
  int dim = 0;  // 0 only for a file without a header
  std::vector<FeatureRecord> records;
};

FeatureFile read_feature_file(std::istream& in);
FeatureFile read_feature_file(const std::filesystem::path& path);

// Floats are written with 9 significant digits.
void write_feature_file(std::ostream& out, const FeatureFile& file);
void write_feature_file(const std::filesystem::path& path, const FeatureFile& file);

std::map<int, FeatureMatrix> load_features(const std::filesystem::path& path);

// Writes bare feature matrices: unknown frame ids, one run per bag, no labels.
void save_features(const std::filesystem::path& path, const std::map<int, FeatureMatrix>& bags);

}  // namespace weakmil
