#include "weakmil/checkpoint.hpp"

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "weakmil/errors.hpp"
#include "weakmil/format.hpp"

namespace weakmil {
namespace {

constexpr const char* kMagic = "weakmil-checkpoint";
constexpr int kVersion = 1;

void write_row(std::ostream& out, const auto& row) {
  for (Eigen::Index i = 0; i < row.size(); ++i) {
    if (i) out << ' ';
    out << format_exact(row[i]);
  }
  out << '\n';
}

void write_matrix(std::ostream& out, const char* name, const Matrix& m) {
  out << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
  for (Eigen::Index r = 0; r < m.rows(); ++r) write_row(out, m.row(r));
}

void write_vector(std::ostream& out, const char* name, const Vector& v) {
  out << name << ' ' << v.size() << '\n';
  write_row(out, v);
}

std::string expect_line(std::istream& in, const char* what) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(std::string("checkpoint truncated before ") + what);
  return line;
}

std::istringstream expect_keyword(std::istream& in, const std::string& keyword) {
  std::istringstream ls(expect_line(in, keyword.c_str()));
  std::string word;
  ls >> word;
  if (word != keyword) throw ParseError("checkpoint: expected '" + keyword + "', got '" + word + "'");
  return ls;
}

// strtod rather than stod: subnormal velocities set ERANGE but parse fine.
double to_double(const std::string& s) {
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw ParseError("checkpoint: bad number '" + s + "'");
  return v;
}

Matrix read_matrix(std::istream& in, const std::string& name) {
  auto ls = expect_keyword(in, name);
  Eigen::Index rows = 0, cols = 0;
  if (!(ls >> rows >> cols)) throw ParseError("checkpoint: bad shape for " + name);
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    std::istringstream row(expect_line(in, name.c_str()));
    std::string tok;
    for (Eigen::Index c = 0; c < cols; ++c) {
      if (!(row >> tok)) throw ParseError("checkpoint: short row in " + name);
      m(r, c) = to_double(tok);
    }
  }
  return m;
}

Vector read_vector(std::istream& in, const std::string& name) {
  auto ls = expect_keyword(in, name);
  Eigen::Index size = 0;
  if (!(ls >> size)) throw ParseError("checkpoint: bad size for " + name);
  Vector v(size);
  std::istringstream row(expect_line(in, name.c_str()));
  std::string tok;
  for (Eigen::Index i = 0; i < size; ++i) {
    if (!(row >> tok)) throw ParseError("checkpoint: short vector " + name);
    v[i] = to_double(tok);
  }
  return v;
}

std::string config_line(const TrainConfig& c) {
  std::ostringstream os;
  os << "lambda=" << format_exact(c.lambda) << " k=" << c.k << " margin=" << format_exact(c.margin)
     << " sign=" << (c.sign == HingeSign::standard ? "standard" : "inverted") << " batch_size=" << c.batch_size
     << " min_co_pairs=" << c.min_co_pairs << " lr_initial=" << format_exact(c.lr_initial)
     << " lr_after=" << format_exact(c.lr_after) << " lr_switch_epoch=" << c.lr_switch_epoch
     << " momentum=" << format_exact(c.momentum) << " epochs=" << c.epochs << " bag_cap=" << c.bag_cap
     << " max_batch_retries=" << c.max_batch_retries << " adapter=" << (c.adapter ? 1 : 0)
     << " seed=" << c.seed;
  return os.str();
}

TrainConfig parse_config(std::istringstream& ls) {
  std::map<std::string, std::string> kv;
  std::string tok;
  while (ls >> tok) {
    auto eq = tok.find('=');
    if (eq == std::string::npos) throw ParseError("checkpoint: bad config token '" + tok + "'");
    kv[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw ParseError("checkpoint: config lacks '" + key + "'");
    return it->second;
  };
  TrainConfig c;
  c.lambda = to_double(get("lambda"));
  c.k = std::stoi(get("k"));
  c.margin = to_double(get("margin"));
  const auto& sign = get("sign");
  if (sign != "standard" && sign != "inverted") throw ParseError("checkpoint: unknown sign '" + sign + "'");
  c.sign = sign == "standard" ? HingeSign::standard : HingeSign::inverted;
  c.batch_size = std::stoi(get("batch_size"));
  c.min_co_pairs = std::stoi(get("min_co_pairs"));
  c.lr_initial = to_double(get("lr_initial"));
  c.lr_after = to_double(get("lr_after"));
  c.lr_switch_epoch = std::stoi(get("lr_switch_epoch"));
  c.momentum = to_double(get("momentum"));
  c.epochs = std::stoi(get("epochs"));
  c.bag_cap = std::stoi(get("bag_cap"));
  c.max_batch_retries = std::stoi(get("max_batch_retries"));
  const auto& adapter = get("adapter");
  if (adapter != "0" && adapter != "1") throw ParseError("checkpoint: bad adapter flag '" + adapter + "'");
  c.adapter = adapter == "1";
  c.seed = std::stoull(get("seed"));
  return c;
}

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& ck) {
  out << kMagic << ' ' << kVersion << '\n';
  out << "config " << config_line(ck.config) << '\n';
  out << "num_identities " << ck.num_identities << '\n';
  out << "epoch " << ck.epoch << '\n';
  out << "optimizer_step " << ck.optimizer.step << " optimizer_epoch " << ck.optimizer.epoch << '\n';
  write_matrix(out, "weight", ck.params.weight);
  write_vector(out, "bias", ck.params.bias);
  write_matrix(out, "adapter", ck.params.adapter);
  write_matrix(out, "velocity_weight", ck.optimizer.velocity.weight);
  write_vector(out, "velocity_bias", ck.optimizer.velocity.bias);
  write_matrix(out, "velocity_adapter", ck.optimizer.velocity.adapter);
  out << "rng " << ck.rng_state << '\n';
  out << "history " << ck.history.size() << '\n';
  for (const auto& m : ck.history) {
    out << m.epoch << ' ' << format_exact(m.loss) << ' ' << format_exact(m.loss_mil) << ' '
        << format_exact(m.loss_cpal) << ' ' << format_exact(m.lr) << ' ' << format_exact(m.pairs_per_batch_mean)
        << ' ' << m.no_pair_batches << '\n';
  }
}

Checkpoint read_checkpoint(std::istream& in) {
  Checkpoint ck;
  {
    auto ls = expect_keyword(in, kMagic);
    int version = 0;
    if (!(ls >> version) || version != kVersion) throw ParseError("unsupported checkpoint version");
  }
  {
    auto ls = expect_keyword(in, "config");
    ck.config = parse_config(ls);
  }
  expect_keyword(in, "num_identities") >> ck.num_identities;
  expect_keyword(in, "epoch") >> ck.epoch;
  {
    auto ls = expect_keyword(in, "optimizer_step");
    std::string word;
    ls >> ck.optimizer.step >> word >> ck.optimizer.epoch;
    if (word != "optimizer_epoch") throw ParseError("checkpoint: malformed optimizer line");
  }
  ck.params.weight = read_matrix(in, "weight");
  ck.params.bias = read_vector(in, "bias");
  ck.params.adapter = read_matrix(in, "adapter");
  ck.optimizer.velocity.weight = read_matrix(in, "velocity_weight");
  ck.optimizer.velocity.bias = read_vector(in, "velocity_bias");
  ck.optimizer.velocity.adapter = read_matrix(in, "velocity_adapter");
  {
    std::string line = expect_line(in, "rng");
    if (line.rfind("rng ", 0) != 0) throw ParseError("checkpoint: expected 'rng'");
    ck.rng_state = line.substr(4);
  }
  std::size_t count = 0;
  expect_keyword(in, "history") >> count;
  for (std::size_t i = 0; i < count; ++i) {
    std::istringstream ls(expect_line(in, "history row"));
    EpochMetrics m;
    std::string loss, mil, cpal, lr, pairs;
    if (!(ls >> m.epoch >> loss >> mil >> cpal >> lr >> pairs >> m.no_pair_batches)) {
      throw ParseError("checkpoint: malformed history row");
    }
    m.loss = to_double(loss);
    m.loss_mil = to_double(mil);
    m.loss_cpal = to_double(cpal);
    m.lr = to_double(lr);
    m.pairs_per_batch_mean = to_double(pairs);
    ck.history.push_back(m);
  }

  const auto classes = ck.params.weight.rows();
  const auto dim = ck.params.weight.cols();
  if (ck.params.bias.size() != classes || ck.optimizer.velocity.weight.rows() != classes ||
      ck.optimizer.velocity.weight.cols() != dim || ck.optimizer.velocity.bias.size() != classes ||
      classes != ck.num_identities) {
    throw ParseError("checkpoint: inconsistent parameter shapes");
  }
  const Eigen::Index adim = ck.config.adapter ? dim : 0;
  if (ck.params.adapter.rows() != adim || ck.params.adapter.cols() != adim ||
      ck.optimizer.velocity.adapter.rows() != adim || ck.optimizer.velocity.adapter.cols() != adim) {
    throw ParseError("checkpoint: adapter shape does not match the adapter flag");
  }
  if (!ck.params.weight.allFinite() || !ck.params.bias.allFinite() || !ck.params.adapter.allFinite()) {
    throw ParseError("checkpoint: non-finite parameters");
  }
  ck.params.grad = ParamGradients::zeros(static_cast<int>(classes), static_cast<int>(dim), ck.config.adapter);
  return ck;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  std::ostringstream os;
  write_checkpoint(os, ck);
  write_file_atomic(path, os.str());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  try {
    return read_checkpoint(in);
  } catch (const std::invalid_argument&) {
    throw ParseError("checkpoint: malformed number in " + path.string());
  } catch (const std::out_of_range&) {
    throw ParseError("checkpoint: number out of range in " + path.string());
  }
}

void write_metrics_log(std::ostream& out, std::span<const EpochMetrics> log) {
  out << "epoch,loss,loss_mil,loss_cpal,lr,pairs_per_batch_mean\n";
  for (const auto& m : log) {
    out << m.epoch << ',' << format_double(m.loss) << ',' << format_double(m.loss_mil) << ','
        << format_double(m.loss_cpal) << ',' << format_double(m.lr) << ','
        << format_double(m.pairs_per_batch_mean) << '\n';
  }
}

void save_metrics_log(const std::filesystem::path& path, std::span<const EpochMetrics> log) {
  std::ostringstream os;
  write_metrics_log(os, log);
  write_file_atomic(path, os.str());
}

}  // namespace weakmil
