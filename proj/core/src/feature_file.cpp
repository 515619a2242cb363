#include "weakmil/feature_file.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <string>
#include <string_view>

#include "weakmil/errors.hpp"

namespace weakmil {
namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

class LineReader {
 public:
  explicit LineReader(std::istream& in) : in_(in) {}

  // Next non-blank line; false at end of input.
  bool next(std::string& line) {
    while (std::getline(in_, line)) {
      ++number_;
      if (line.find_first_not_of(" \t\r") != std::string::npos) return true;
    }
    return false;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError("line " + std::to_string(number_) + ": " + what);
  }

  std::size_t number() const { return number_; }

 private:
  std::istream& in_;
  std::size_t number_ = 0;
};

int parse_int(std::string_view tok, const LineReader& r) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) {
    r.fail("expected integer, got '" + std::string(tok) + "'");
  }
  return v;
}

double parse_double(std::string_view tok, const LineReader& r) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) {
    r.fail("expected number, got '" + std::string(tok) + "'");
  }
  if (!std::isfinite(v)) {
    throw NanPayloadError("line " + std::to_string(r.number()) + ": non-finite feature value");
  }
  return v;
}

int parse_keyed(std::string_view tok, std::string_view key, const LineReader& r) {
  if (tok.size() <= key.size() + 1 || tok.substr(0, key.size()) != key || tok[key.size()] != '=') {
    r.fail("expected " + std::string(key) + "=<int>, got '" + std::string(tok) + "'");
  }
  return parse_int(tok.substr(key.size() + 1), r);
}

std::vector<std::string_view> expect_keyword(const std::string& line, std::string_view keyword,
                                             const LineReader& r) {
  auto toks = split_ws(line);
  if (toks.empty() || toks[0] != keyword) r.fail("expected '" + std::string(keyword) + "' line");
  return toks;
}

void append_double(std::string& out, double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 9);
  out.append(buf, ptr);
}

}  // namespace

FeatureFile read_feature_file(std::istream& in) {
  FeatureFile file;
  LineReader reader(in);
  std::string line;
  if (!reader.next(line)) return file;

  auto header = split_ws(line);
  if (header.size() != 2 || header[0] != "dims") reader.fail("expected header 'dims d=<int>'");
  file.dim = parse_keyed(header[1], "d", reader);
  if (file.dim < 1) reader.fail("dimension must be positive");

  while (reader.next(line)) {
    auto toks = split_ws(line);
    if (toks.size() != 4 || toks[0] != "bag") reader.fail("expected 'bag <id> camera=<int> n=<int>'");
    int bag_id = parse_int(toks[1], reader);
    int camera = parse_keyed(toks[2], "camera", reader);
    int n = parse_keyed(toks[3], "n", reader);
    if (n < 1) reader.fail("bag must contain at least one frame");

    Matrix data(file.dim, n);
    for (int t = 0; t < n; ++t) {
      if (!reader.next(line)) reader.fail("unexpected end of file inside bag " + std::to_string(bag_id));
      auto vals = split_ws(line);
      if (static_cast<int>(vals.size()) != file.dim) {
        throw DimensionMismatchError("line " + std::to_string(reader.number()) + ": expected " +
                                     std::to_string(file.dim) + " values, got " +
                                     std::to_string(vals.size()));
      }
      for (int i = 0; i < file.dim; ++i) data(i, t) = parse_double(vals[static_cast<std::size_t>(i)], reader);
    }

    if (!reader.next(line)) reader.fail("missing 'frames' line");
    auto frames = expect_keyword(line, "frames", reader);
    if (static_cast<int>(frames.size()) - 1 != n) reader.fail("'frames' must list n ids");
    std::vector<int> frame_ids;
    for (std::size_t i = 1; i < frames.size(); ++i) frame_ids.push_back(parse_int(frames[i], reader));

    if (!reader.next(line)) reader.fail("missing 'tracks' line");
    auto tracks = expect_keyword(line, "tracks", reader);
    if (tracks.size() != 2) reader.fail("'tracks' expects one comma-separated list");
    std::vector<int> runs;
    std::string_view runs_text = tracks[1];
    while (!runs_text.empty()) {
      auto comma = runs_text.find(',');
      runs.push_back(parse_int(runs_text.substr(0, comma), reader));
      if (runs.back() < 1) reader.fail("tracklet runs must be positive");
      if (comma == std::string_view::npos) break;
      runs_text.remove_prefix(comma + 1);
    }
    if (std::accumulate(runs.begin(), runs.end(), 0) != n) reader.fail("tracklet runs must sum to n");

    if (!reader.next(line)) reader.fail("missing 'labels' line");
    auto labels = expect_keyword(line, "labels", reader);
    std::vector<int> label_ids;
    for (std::size_t i = 1; i < labels.size(); ++i) label_ids.push_back(parse_int(labels[i], reader));

    file.records.push_back({bag_id, camera, FeatureMatrix(std::move(data)), std::move(frame_ids),
                            std::move(runs), std::move(label_ids)});
  }
  return file;
}

FeatureFile read_feature_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return read_feature_file(in);
}

void write_feature_file(std::ostream& out, const FeatureFile& file) {
  if (file.records.empty() && file.dim == 0) return;
  std::string buf;
  buf += "dims d=" + std::to_string(file.dim) + "\n";
  for (const auto& rec : file.records) {
    const Matrix& m = rec.features.matrix();
    if (m.rows() != file.dim) throw ShapeError("record dimension differs from file dimension");
    if (rec.frame_ids.size() != static_cast<std::size_t>(m.cols())) {
      throw ShapeError("frame id count differs from frame count");
    }
    buf += "bag " + std::to_string(rec.bag_id) + " camera=" + std::to_string(rec.camera_id) +
           " n=" + std::to_string(m.cols()) + "\n";
    for (Eigen::Index t = 0; t < m.cols(); ++t) {
      for (Eigen::Index i = 0; i < m.rows(); ++i) {
        if (i) buf += ' ';
        append_double(buf, m(i, t));
      }
      buf += '\n';
    }
    buf += "frames";
    for (int id : rec.frame_ids) buf += " " + std::to_string(id);
    buf += "\ntracks ";
    for (std::size_t i = 0; i < rec.track_runs.size(); ++i) {
      if (i) buf += ',';
      buf += std::to_string(rec.track_runs[i]);
    }
    buf += "\nlabels";
    for (int id : rec.labels) buf += " " + std::to_string(id);
    buf += '\n';
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    buf.clear();
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

void write_feature_file(const std::filesystem::path& path, const FeatureFile& file) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  write_feature_file(out, file);
  if (!out) throw Error("write failed for " + path.string());
}

std::map<int, FeatureMatrix> load_features(const std::filesystem::path& path) {
  std::map<int, FeatureMatrix> out;
  for (auto& rec : read_feature_file(path).records) {
    if (!out.emplace(rec.bag_id, std::move(rec.features)).second) {
      throw ParseError("duplicate bag id " + std::to_string(rec.bag_id));
    }
  }
  return out;
}

void save_features(const std::filesystem::path& path, const std::map<int, FeatureMatrix>& bags) {
  FeatureFile file;
  for (const auto& [id, fm] : bags) {
    if (file.dim == 0) file.dim = static_cast<int>(fm.dim());
    auto n = static_cast<int>(fm.frames());
    file.records.push_back({id, 0, fm, std::vector<int>(static_cast<std::size_t>(n), -1), {n}, {}});
  }
  write_feature_file(path, file);
}

}  // namespace weakmil
