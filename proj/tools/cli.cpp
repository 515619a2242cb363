#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <memory>
#include <numeric>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "weakmil/checkpoint.hpp"
#include "weakmil/datamodel.hpp"
#include "weakmil/errors.hpp"
#include "weakmil/evalkit.hpp"
#include "weakmil/format.hpp"
#include "weakmil/gradcheck.hpp"
#include "weakmil/trainer.hpp"
#include "weakmil/version.hpp"

namespace weakmil::cli {
namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

constexpr std::uint64_t kCorruptStream = 0x636c692d636f72ULL;
constexpr std::size_t kMaxPrintedWarnings = 20;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Everything a manifest needs beyond the parsed options.
struct RunRecord {
  std::string command;
  std::vector<std::string> args;
  std::uint64_t seed = 0;
  json artifacts = json::object();
  std::vector<std::string> warnings;
  std::string started_at = utc_timestamp();
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
};

json resolved_options(const CLI::App& sub) {
  json cfg = json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    if (opt->get_lnames().empty()) continue;
    const std::string& name = opt->get_lnames().front();
    if (name == "help" || name == "config" || name == "manifest") continue;
    if (opt->count() > 0) {
      const auto& res = opt->results();
      cfg[name] = res.empty() ? std::string("true") : res.back();
    } else if (opt->get_expected_min() == 0 && opt->get_default_str().empty()) {
      cfg[name] = "false";
    } else {
      cfg[name] = opt->get_default_str();
    }
  }
  return cfg;
}

void write_manifest(const fs::path& path, const RunRecord& run, const CLI::App& sub) {
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - run.start).count();
  std::string echo = "weakmil";
  for (const auto& a : run.args) echo += " " + a;
  json m;
  m["command"] = run.command;
  m["command_line"] = echo;
  m["args"] = run.args;
  m["config"] = resolved_options(sub);
  m["seed"] = run.seed;
  m["artifacts"] = run.artifacts;
  m["warnings"] = run.warnings.size();
  m["started_at"] = run.started_at;
  m["wall_clock_seconds"] = seconds;
  m["library_version"] = kVersion;
  write_file_atomic(path, m.dump(2) + "\n");
}

fs::path manifest_path(const std::string& flag, const std::string& out, const std::string& command) {
  if (!flag.empty()) return flag;
  if (!out.empty()) return out + ".manifest.json";
  return "weakmil-" + command + ".manifest.json";
}

struct Common {
  std::uint64_t seed = 0;
  std::string manifest;
  std::string config;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--seed", c.seed, "Seed for the command's single random generator")
      ->envname("WEAKMIL_SEED");
  sub->add_option("--manifest", c.manifest, "Manifest path (default: <out>.manifest.json)");
  sub->add_option("--config", c.config, "Flat key=value file mirroring the flags; flags override it");
}

void add_train_options(CLI::App* sub, TrainConfig& t, bool& inverted) {
  sub->add_option("--lambda", t.lambda, "Weight of the MIL term in the joint loss")->check(CLI::Range(0.0, 1.0));
  sub->add_option("--k", t.k, "Frames averaged by k-max-mean pooling")->check(CLI::PositiveNumber);
  sub->add_option("--margin", t.margin, "Hinge margin of the co-attention loss")->check(CLI::NonNegativeNumber);
  sub->add_flag("--inverted-hinge", inverted,
                "Flip the hinge to penalize high/high similarity instead of cross similarity");
  sub->add_option("--batch-size", t.batch_size, "Bags per batch")->check(CLI::Range(2, 1 << 20));
  sub->add_option("--min-co-pairs", t.min_co_pairs, "Minimum bag pairs sharing an identity per batch")
      ->check(CLI::NonNegativeNumber);
  sub->add_option("--lr", t.lr_initial, "Initial learning rate")->check(CLI::PositiveNumber);
  sub->add_option("--lr-after", t.lr_after, "Learning rate from --lr-switch-epoch on")->check(CLI::PositiveNumber);
  sub->add_option("--lr-switch-epoch", t.lr_switch_epoch, "Epoch at which the learning rate drops")
      ->check(CLI::NonNegativeNumber);
  sub->add_option("--momentum", t.momentum, "Heavy-ball momentum")->check(CLI::Range(0.0, 1.0));
  sub->add_option("--epochs", t.epochs, "Training epochs")->check(CLI::NonNegativeNumber);
  sub->add_option("--bag-cap", t.bag_cap, "Frames kept per bag in a batch")->check(CLI::PositiveNumber);
  sub->add_option("--max-batch-retries", t.max_batch_retries, "Resampling budget per batch")
      ->check(CLI::PositiveNumber);
  sub->add_flag("--adapter", t.adapter, "Also learn a linear d x d adapter over the input features");
}

struct EvalFlags {
  int max_rank = 20;
  bool keep_same_camera = false;
  bool allow_noisy = false;
  std::string space = "activations";
  int threads = 0;
};

void add_eval_options(CLI::App* sub, EvalFlags& e) {
  sub->add_option("--max-rank", e.max_rank, "Longest CMC rank reported")->check(CLI::PositiveNumber);
  sub->add_flag("--keep-same-camera", e.keep_same_camera,
                "Fine protocol: keep gallery tracklets from the probe's camera and identity");
  sub->add_flag("--allow-noisy-tracklets", e.allow_noisy,
                "Fine protocol: accept mixed-identity gallery tracklets (they never match)");
  sub->add_option("--space", e.space, "Retrieval embedding: activations, features or raw")
      ->check(CLI::IsMember({"activations", "features", "raw"}));
  sub->add_option("--threads", e.threads, "Worker threads for ranking probes, 0 = all cores")
      ->check(CLI::NonNegativeNumber);
}

EvalOptions to_eval_options(const EvalFlags& e, Protocol protocol) {
  EvalOptions o;
  o.protocol = protocol;
  o.max_rank = e.max_rank;
  o.exclude_same_camera = !e.keep_same_camera;
  o.allow_noisy_tracklets = e.allow_noisy;
  o.space = embedding_space_from_string(e.space);
  o.threads = e.threads;
  return o;
}

// Source of unlabeled distractor identities for the missing-annotation
// corruption: ids [C, C + count) of the synthetic universe, or every pooled
// identity >= C of a precomputed feature file.
struct DistractorFlags {
  int count = 16;
  double noise = 0.1;
  double camera_shift = 0.0;
  std::uint64_t embedding_seed = 0;
  std::string features;
};

void add_distractor_options(CLI::App* sub, DistractorFlags& d) {
  sub->add_option("--distractors", d.count, "Synthetic distractor identities (ids >= C)")
      ->check(CLI::PositiveNumber);
  sub->add_option("--noise", d.noise, "Frame noise of the synthetic distractors")->check(CLI::NonNegativeNumber);
  sub->add_option("--camera-shift", d.camera_shift, "Camera shift of the synthetic distractors")
      ->check(CLI::NonNegativeNumber);
  sub->add_option("--embedding-seed", d.embedding_seed, "Seed the data was synthesized with (default: --seed)");
  sub->add_option("--features", d.features, "Draw distractors from this precomputed feature file instead");
}

struct DistractorSource {
  std::unique_ptr<FeatureProvider> provider;
  std::vector<int> ids;
};

DistractorSource make_distractors(const DistractorFlags& d, const Dataset& ds, std::uint64_t seed, bool seed_set) {
  DistractorSource src;
  const int classes = ds.num_identities;
  if (!d.features.empty()) {
    src.provider = std::make_unique<PrecomputedProvider>(read_feature_file(d.features));
    for (int id = classes; id < src.provider->identities(); ++id) src.ids.push_back(id);
    if (src.ids.empty()) {
      throw ValidationError("feature file " + d.features + " has no identity >= " + std::to_string(classes) +
                            " to use as a distractor");
    }
  } else {
    if (ds.bags.empty()) throw ValidationError("dataset is empty");
    EmbeddingConfig ec;
    ec.dim = static_cast<int>(ds.bags.front().features.dim());
    ec.noise_sigma = d.noise;
    ec.camera_shift_sigma = d.camera_shift;
    ec.seed = seed_set ? d.embedding_seed : seed;
    src.provider = std::make_unique<SyntheticProvider>(ec, classes + d.count);
    src.ids.resize(static_cast<std::size_t>(d.count));
    std::iota(src.ids.begin(), src.ids.end(), classes);
  }
  return src;
}

class WarningLog {
 public:
  WarningLog(std::ostream& err, RunRecord& run) : err_(err), run_(run) {}
  void operator()(const std::string& msg) {
    if (run_.warnings.size() < kMaxPrintedWarnings) err_ << "warning: " << msg << '\n';
    run_.warnings.push_back(msg);
  }
  void finish() {
    if (run_.warnings.size() > kMaxPrintedWarnings) {
      err_ << "warning: " << run_.warnings.size() - kMaxPrintedWarnings << " more warning(s) not shown\n";
    }
  }
  WarningSink sink() {
    return [this](const std::string& m) { (*this)(m); };
  }

 private:
  std::ostream& err_;
  RunRecord& run_;
};

std::string join_doubles(std::initializer_list<double> xs) {
  std::string s;
  for (double x : xs) s += (s.empty() ? "" : " ") + format_double(x, 6);
  return s;
}

}  // namespace

std::vector<std::pair<std::string, std::string>> read_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file " + path.string());
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.rfind("--", 0) == 0) key = key.substr(2);
    if (value.size() >= 2 && (value.front() == '"' || value.front() == '\'') && value.back() == value.front()) {
      value = value.substr(1, value.size() - 2);
    }
    if (key.empty()) throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": empty key");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  if (args.empty()) return args;
  std::vector<std::string> rest;
  std::vector<std::string> injected;
  for (std::size_t i = 1; i < args.size(); ++i) {
    std::string file;
    if (args[i] == "--config" && i + 1 < args.size()) {
      file = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      file = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
      continue;
    }
    for (const auto& [k, v] : read_config(file)) injected.push_back("--" + k + "=" + v);
  }
  std::vector<std::string> out{args.front()};
  out.insert(out.end(), injected.begin(), injected.end());
  out.insert(out.end(), rest.begin(), rest.end());
  return out;
}

int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Weakly supervised multiple-instance re-identification toolkit", "weakmil"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));
  app.option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  // synth
  Common synth_c;
  BuildConfig build;
  EmbeddingConfig embed_cfg;
  int synth_classes = 16;
  std::string synth_split = "train", synth_features, synth_out;
  auto* synth = app.add_subcommand("synth", "Generate a weakly labeled dataset file");
  synth->add_option("--classes", synth_classes, "Labeled identities C")->check(CLI::PositiveNumber);
  synth->add_option("--bags", build.n_bags, "Source bags to build")->check(CLI::PositiveNumber);
  synth->add_option("--dim", embed_cfg.dim, "Feature dimension d")->check(CLI::Range(2, 1 << 16));
  synth->add_option("--noise", embed_cfg.noise_sigma, "Per-coordinate frame noise std")
      ->check(CLI::NonNegativeNumber);
  synth->add_option("--camera-shift", embed_cfg.camera_shift_sigma, "Per-camera bias std")
      ->check(CLI::NonNegativeNumber);
  synth->add_option("--cameras", build.num_cameras, "Camera count")->check(CLI::PositiveNumber);
  synth->add_option("--tracklets-min", build.min_tracklets, "Fewest tracklets per bag")->check(CLI::PositiveNumber);
  synth->add_option("--tracklets-max", build.max_tracklets, "Most tracklets per bag")->check(CLI::PositiveNumber);
  synth->add_option("--frames-min", build.min_frames, "Fewest frames per tracklet")->check(CLI::PositiveNumber);
  synth->add_option("--frames-max", build.max_frames, "Most frames per tracklet")->check(CLI::PositiveNumber);
  synth->add_option("--min-bags-per-identity", build.min_bags_per_identity, "Bags each identity must appear in")
      ->check(CLI::PositiveNumber);
  synth->add_option("--split", synth_split, "Split tag: train, probe or gallery")
      ->check(CLI::IsMember({"train", "probe", "gallery"}));
  synth->add_option("--split-factor", build.split_factor, "Cut every bag into this many part-bags")
      ->check(CLI::PositiveNumber);
  synth->add_option("--first-bag-id", build.first_bag_id, "Id of the first generated bag")
      ->check(CLI::NonNegativeNumber);
  synth->add_option("--features", synth_features, "Sample frames from a precomputed feature file");
  synth->add_option("--out", synth_out, "Dataset file to write")->required();
  add_common(synth, synth_c);

  // corrupt
  Common corrupt_c;
  DistractorFlags corrupt_d;
  std::string corrupt_data, corrupt_kind, corrupt_split = "train", corrupt_out;
  int corrupt_parts = 4;
  auto* corrupt = app.add_subcommand("corrupt", "Apply a corruption protocol to a dataset file");
  corrupt->add_option("--data", corrupt_data, "Dataset file to read")->required();
  corrupt->add_option("--kind", corrupt_kind,
                      "missing (inject unlabeled tracklets), noisy (random re-segmentation) or "
                      "tracklet (mean-pool every tracklet)")
      ->required()
      ->check(CLI::IsMember({"missing", "noisy", "tracklet"}));
  corrupt->add_option("--parts", corrupt_parts, "Groups per bag for noisy tracking")->check(CLI::PositiveNumber);
  corrupt->add_option("--split", corrupt_split, "Split tag written with the data")
      ->check(CLI::IsMember({"train", "probe", "gallery"}));
  corrupt->add_option("--out", corrupt_out, "Dataset file to write")->required();
  add_distractor_options(corrupt, corrupt_d);
  add_common(corrupt, corrupt_c);

  // train
  Common train_c;
  TrainConfig train_cfg;
  bool train_inverted = false;
  std::string train_data, train_out, train_log;
  auto* train_cmd = app.add_subcommand("train", "Train the projection head on a dataset file");
  train_cmd->add_option("--data", train_data, "Training dataset file")->required();
  train_cmd->add_option("--out", train_out, "Checkpoint to write")->required();
  train_cmd->add_option("--log", train_log, "Per-epoch metrics CSV (default: <out>.metrics.csv)");
  add_train_options(train_cmd, train_cfg, train_inverted);
  add_common(train_cmd, train_c);

  // eval
  Common eval_c;
  EvalFlags eval_f;
  std::string eval_ck, eval_probe, eval_gallery, eval_protocol = "coarse", eval_out, eval_cmc;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint with the coarse or fine protocol");
  eval_cmd->add_option("--checkpoint", eval_ck, "Checkpoint file")->required();
  eval_cmd->add_option("--probe", eval_probe, "Probe dataset file")->required();
  eval_cmd->add_option("--gallery", eval_gallery, "Gallery dataset file")->required();
  eval_cmd->add_option("--protocol", eval_protocol, "coarse (gallery bags) or fine (gallery tracklets)")
      ->check(CLI::IsMember({"coarse", "fine"}));
  eval_cmd->add_option("--out", eval_out, "Metrics CSV to write")->required();
  eval_cmd->add_option("--cmc", eval_cmc, "Also write the CMC curve to this CSV");
  add_eval_options(eval_cmd, eval_f);
  add_common(eval_cmd, eval_c);

  // ablate
  Common ablate_c;
  TrainConfig ablate_cfg;
  bool ablate_inverted = false;
  EvalFlags ablate_f;
  DistractorFlags ablate_d;
  std::string ablate_train, ablate_probe, ablate_gallery, ablate_axis, ablate_values, ablate_seeds,
      ablate_protocol = "both", ablate_out;
  auto* ablate = app.add_subcommand("ablate", "Sweep one factor and evaluate every trained model");
  ablate->add_option("--train", ablate_train, "Training dataset file")->required();
  ablate->add_option("--probe", ablate_probe, "Probe dataset file")->required();
  ablate->add_option("--gallery", ablate_gallery, "Gallery dataset file")->required();
  ablate->add_option("--axis", ablate_axis, "lambda, k, loss or corruption")
      ->required()
      ->check(CLI::IsMember({"lambda", "k", "loss", "corruption"}));
  ablate->add_option("--values", ablate_values,
                     "Comma-separated values; loss: MIL,CPAL,MIL+CPAL; corruption: none,missing,noisy,tracklet")
      ->required();
  ablate->add_option("--seeds", ablate_seeds, "Comma-separated seeds (default: --seed)");
  ablate->add_option("--protocol", ablate_protocol, "coarse, fine or both")
      ->check(CLI::IsMember({"coarse", "fine", "both"}));
  ablate->add_option("--out", ablate_out, "Sweep CSV to write")->required();
  add_train_options(ablate, ablate_cfg, ablate_inverted);
  add_eval_options(ablate, ablate_f);
  add_distractor_options(ablate, ablate_d);
  add_common(ablate, ablate_c);

  // gradcheck
  Common gc_c;
  GradCheckOptions gc_opts;
  std::string gc_out;
  auto* gc = app.add_subcommand("gradcheck", "Compare analytic gradients with central finite differences");
  gc->add_option("--trials", gc_opts.trials, "Random instances to check")->check(CLI::NonNegativeNumber);
  gc->add_option("--step", gc_opts.step, "Finite-difference step h")->check(CLI::PositiveNumber);
  gc->add_option("--tolerance", gc_opts.tolerance, "Largest accepted relative error")->check(CLI::PositiveNumber);
  gc->add_option("--kink-margin", gc_opts.kink_margin, "Resample points closer than this to a kink")
      ->check(CLI::NonNegativeNumber);
  gc->add_option("--adapter-fraction", gc_opts.adapter_fraction, "Share of instances with a feature adapter")
      ->check(CLI::Range(0.0, 1.0));
  gc->add_option("--out", gc_out, "Also write the report as JSON");
  add_common(gc, gc_c);

  // cost
  Common cost_c;
  AnnotationCostParams cost_p;
  std::string cost_out;
  auto* cost = app.add_subcommand("cost", "Annotation cost of strong versus weak labels");
  cost->add_option("--f", cost_p.frames_per_video, "Average frames per video")->required();
  cost->add_option("--p", cost_p.persons_per_image, "Average persons per image")->required();
  cost->add_option("--n", cost_p.videos, "Number of videos")->required();
  cost->add_option("--b", cost_p.cost_per_person_image, "Cost to label one person in one image")->required();
  cost->add_option("--bprime", cost_p.cost_per_video, "Cost to label one video with its identity set")
      ->required();
  cost->add_option("--out", cost_out, "Also write the report as JSON");
  add_common(cost, cost_c);

  std::vector<std::string> args;
  try {
    args = expand_config(raw_args);
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kOk : kValidation;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kValidation;
  }

  RunRecord run;
  run.args = args;
  int code = kOk;
  try {
    if (synth->parsed()) {
      run.command = "synth";
      run.seed = synth_c.seed;
      embed_cfg.seed = synth_c.seed;
      build.seed = synth_c.seed;
      std::unique_ptr<FeatureProvider> provider;
      if (!synth_features.empty()) {
        provider = std::make_unique<PrecomputedProvider>(read_feature_file(synth_features));
        if (provider->identities() < synth_classes) {
          throw ValidationError("feature file " + synth_features + " pools only " +
                                std::to_string(provider->identities()) + " identities, need " +
                                std::to_string(synth_classes));
        }
      } else {
        embed_cfg.validate();
        provider = std::make_unique<SyntheticProvider>(embed_cfg, synth_classes);
      }
      Dataset ds = build_weak_dataset(*provider, synth_classes, build, split_from_string(synth_split));
      save_dataset(synth_out, ds);
      long frames = 0;
      for (const auto& b : ds.bags) frames += b.frames();
      out << "wrote " << ds.bags.size() << " bags (" << frames << " frames, " << synth_classes << " identities) to "
          << synth_out << '\n';
      run.artifacts["dataset"] = synth_out;
      write_manifest(manifest_path(synth_c.manifest, synth_out, run.command), run, *synth);
    } else if (corrupt->parsed()) {
      run.command = "corrupt";
      run.seed = corrupt_c.seed;
      const Split split = split_from_string(corrupt_split);
      Dataset ds = load_dataset(corrupt_data, split);
      Rng rng(derive_seed(corrupt_c.seed, kCorruptStream));
      Dataset result;
      if (corrupt_kind == "tracklet") {
        result = to_tracklet_setting(ds);
      } else if (corrupt_kind == "noisy") {
        result = corrupt_dataset(ds, Corruption::noisy, rng, nullptr, {}, corrupt_parts);
      } else {
        const bool seed_set = corrupt->count("--embedding-seed") > 0;
        DistractorSource src = make_distractors(corrupt_d, ds, corrupt_c.seed, seed_set);
        result = corrupt_dataset(ds, Corruption::missing, rng, src.provider.get(), src.ids);
      }
      result.split = split;
      save_dataset(corrupt_out, result);
      out << "wrote " << result.bags.size() << " " << corrupt_kind << " bags to " << corrupt_out << '\n';
      run.artifacts["input"] = corrupt_data;
      run.artifacts["dataset"] = corrupt_out;
      write_manifest(manifest_path(corrupt_c.manifest, corrupt_out, run.command), run, *corrupt);
    } else if (train_cmd->parsed()) {
      run.command = "train";
      run.seed = train_c.seed;
      train_cfg.seed = train_c.seed;
      train_cfg.sign = train_inverted ? HingeSign::inverted : HingeSign::standard;
      train_cfg.validate();
      Dataset ds = load_dataset(train_data, Split::train);
      WarningLog log(err, run);
      TrainResult res = train(ds, train_cfg, log.sink());
      log.finish();
      const std::string metrics = train_log.empty() ? train_out + ".metrics.csv" : train_log;
      save_checkpoint(train_out, res.checkpoint);
      save_metrics_log(metrics, res.checkpoint.history);
      if (!res.checkpoint.history.empty()) {
        const auto& last = res.checkpoint.history.back();
        out << "epoch " << last.epoch << " loss " << join_doubles({last.loss}) << " (mil "
            << join_doubles({last.loss_mil}) << ", cpal " << join_doubles({last.loss_cpal}) << ")\n";
      } else {
        out << "0 epochs: checkpoint holds the initial parameters\n";
      }
      out << "wrote " << train_out << " and " << metrics << '\n';
      run.artifacts["data"] = train_data;
      run.artifacts["checkpoint"] = train_out;
      run.artifacts["metrics_log"] = metrics;
      write_manifest(manifest_path(train_c.manifest, train_out, run.command), run, *train_cmd);
    } else if (eval_cmd->parsed()) {
      run.command = "eval";
      Checkpoint ck = load_checkpoint(eval_ck);
      run.seed = eval_cmd->count("--seed") > 0 ? eval_c.seed : ck.config.seed;
      const Protocol protocol = protocol_from_string(eval_protocol);
      Dataset probe = load_dataset(eval_probe, Split::probe);
      Dataset gallery = load_dataset(eval_gallery, Split::gallery);
      WarningLog log(err, run);
      Evaluation ev = evaluate(ck.params, probe, gallery, to_eval_options(eval_f, protocol), log.sink());
      log.finish();
      std::vector<AblationRow> rows{make_row(ev.report, protocol, "eval", eval_f.space, run.seed)};
      std::ostringstream csv;
      write_metrics_csv(csv, rows);
      write_file_atomic(eval_out, csv.str());
      out << eval_protocol << ": rank1 " << join_doubles({ev.report.rank(1)}) << " rank5 "
          << join_doubles({ev.report.rank(5)}) << " mAP " << join_doubles({ev.report.map}) << " over "
          << ev.report.evaluated << " probe(s)\n";
      run.artifacts["checkpoint"] = eval_ck;
      run.artifacts["probe"] = eval_probe;
      run.artifacts["gallery"] = eval_gallery;
      run.artifacts["metrics"] = eval_out;
      if (!eval_cmc.empty()) {
        std::ostringstream cmc;
        write_cmc_csv(cmc, ev.report);
        write_file_atomic(eval_cmc, cmc.str());
        run.artifacts["cmc"] = eval_cmc;
      }
      write_manifest(manifest_path(eval_c.manifest, eval_out, run.command), run, *eval_cmd);
    } else if (ablate->parsed()) {
      run.command = "ablate";
      run.seed = ablate_c.seed;
      ablate_cfg.seed = ablate_c.seed;
      ablate_cfg.sign = ablate_inverted ? HingeSign::inverted : HingeSign::standard;
      ablate_cfg.validate();
      std::vector<std::uint64_t> seeds;
      if (ablate_seeds.empty()) {
        seeds.push_back(ablate_c.seed);
      } else {
        for (const auto& s : split_list(ablate_seeds)) {
          try {
            std::size_t pos = 0;
            seeds.push_back(std::stoull(s, &pos));
            if (pos != s.size()) throw std::invalid_argument(s);
          } catch (const std::logic_error&) {
            throw ValidationError("bad seed '" + s + "'");
          }
        }
      }
      const std::vector<std::string> values = split_list(ablate_values);
      const AblationAxis axis = ablation_axis_from_string(ablate_axis);
      Dataset train_set = load_dataset(ablate_train, Split::train);
      Dataset probe = load_dataset(ablate_probe, Split::probe);
      Dataset gallery = load_dataset(ablate_gallery, Split::gallery);
      DistractorSource src;
      if (axis == AblationAxis::corruption && std::find(values.begin(), values.end(), "missing") != values.end()) {
        src = make_distractors(ablate_d, train_set, ablate_c.seed, ablate->count("--embedding-seed") > 0);
      }
      AblationData data{train_set, probe, gallery, src.provider.get(), src.ids};
      if (ablate_protocol != "both") data.protocols = {protocol_from_string(ablate_protocol)};
      WarningLog log(err, run);
      auto rows = ablation_sweep(data, ablate_cfg, axis, values, seeds, to_eval_options(ablate_f, Protocol::fine),
                                 log.sink());
      log.finish();
      std::ostringstream csv;
      write_metrics_csv(csv, rows);
      write_file_atomic(ablate_out, csv.str());
      for (const auto& r : rows) {
        out << r.protocol << ' ' << r.axis << '=' << r.value << " seed " << r.seed << ": rank1 "
            << join_doubles({r.rank1}) << " mAP " << join_doubles({r.map}) << '\n';
      }
      run.artifacts["train"] = ablate_train;
      run.artifacts["probe"] = ablate_probe;
      run.artifacts["gallery"] = ablate_gallery;
      run.artifacts["metrics"] = ablate_out;
      write_manifest(manifest_path(ablate_c.manifest, ablate_out, run.command), run, *ablate);
    } else if (gc->parsed()) {
      run.command = "gradcheck";
      run.seed = gc_c.seed;
      gc_opts.seed = gc_c.seed;
      if (gc_opts.trials == 0) {
        err << "warning: 0 trials requested; the check passes vacuously\n";
        run.warnings.push_back("0 trials requested; the check passes vacuously");
      }
      GradCheckReport rep = run_gradcheck(gc_opts);
      out << "trials " << rep.trials << ", resampled near kinks " << rep.resampled << '\n';
      out << "worst relative error: mil " << format_double(rep.worst_mil, 3) << ", cpal "
          << format_double(rep.worst_cpal, 3) << ", joint " << format_double(rep.worst_joint, 3)
          << " (tolerance " << format_double(gc_opts.tolerance, 3) << ")\n";
      out << (rep.passed ? "PASS" : "FAIL") << '\n';
      if (!gc_out.empty()) {
        json r;
        r["trials"] = rep.trials;
        r["resampled"] = rep.resampled;
        r["worst_mil"] = rep.worst_mil;
        r["worst_cpal"] = rep.worst_cpal;
        r["worst_joint"] = rep.worst_joint;
        r["tolerance"] = gc_opts.tolerance;
        r["passed"] = rep.passed;
        write_file_atomic(gc_out, r.dump(2) + "\n");
        run.artifacts["report"] = gc_out;
      }
      write_manifest(manifest_path(gc_c.manifest, gc_out, run.command), run, *gc);
      if (!rep.passed) code = kCheckFailed;
    } else if (cost->parsed()) {
      run.command = "cost";
      run.seed = cost_c.seed;
      AnnotationCost c = annotation_cost(cost_p);
      out << "strong_cost " << format_double(c.strong) << '\n';
      out << "weak_cost " << format_double(c.weak) << '\n';
      out << "improvement_percent " << format_double(c.improvement_percent) << '\n';
      if (!cost_out.empty()) {
        json r;
        r["strong_cost"] = c.strong;
        r["weak_cost"] = c.weak;
        r["improvement_percent"] = c.improvement_percent;
        write_file_atomic(cost_out, r.dump(2) + "\n");
        run.artifacts["report"] = cost_out;
      }
      write_manifest(manifest_path(cost_c.manifest, cost_out, run.command), run, *cost);
    }
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const InfeasibleError& e) {
    err << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return code;
}

}  // namespace weakmil::cli
