// osod — command-line front end for the open-set detection alignment library.
//
// Subcommands:
//   generate   write a synthetic dataset checkpoint
//   train      train the toy detector on a synthetic dataset, write the model
//   evaluate   end-to-end: generate, train, predict, score; write a report
//   metrics    score detection/ground-truth files; write a report
//   ablate     train and score every loss-switch combination; write the table
//   gradcheck  verify analytic gradients against finite differences
//
// Exit codes: 0 success, 1 domain/computation error, 2 usage error.

#include <CLI11.hpp>

#include <cstdint>
#include <exception>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "osod/embeddings.hpp"
#include "osod/harness.hpp"
#include "osod/io.hpp"
#include "osod/losses.hpp"
#include "osod/metrics.hpp"

namespace {

// Invocation mistakes (bad flag values, unknown --set keys, unreadable input
// paths) exit 2; errors raised by the library while computing exit 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

double parse_real(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(value, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != value.size() || value.empty()) {
    throw UsageError("--set " + key + ": invalid real '" + value + "'");
  }
  return v;
}

int parse_int(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(value, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != value.size() || value.empty()) {
    throw UsageError("--set " + key + ": invalid integer '" + value + "'");
  }
  return static_cast<int>(v);
}

std::uint64_t parse_seed(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(value, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != value.size() || value.empty() || value.front() == '-') {
    throw UsageError("--set " + key + ": invalid seed '" + value + "'");
  }
  return v;
}

bool parse_flag(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true" || value == "on") return true;
  if (value == "0" || value == "false" || value == "off") return false;
  throw UsageError("--set " + key + ": expected 0/1/true/false, got '" + value + "'");
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::istringstream in(s);
  std::string part;
  while (std::getline(in, part, sep)) parts.push_back(part);
  return parts;
}

osod::Combiner parse_combiner(const std::string& value) {
  if (value == "geometric_mean") return osod::Combiner::kGeometricMean;
  if (value == "sum") return osod::Combiner::kSum;
  if (value == "product") return osod::Combiner::kProduct;
  if (value == "objectness_only") return osod::Combiner::kObjectnessOnly;
  if (value == "centerness_only") return osod::Combiner::kCenternessOnly;
  throw UsageError("--set combiner: unknown combiner '" + value + "'");
}

// Applies one `key=value` override to the dataset spec / training config.
void apply_set(const std::string& item, osod::DatasetSpec& spec, osod::TrainConfig& cfg) {
  const std::size_t eq = item.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw UsageError("--set expects key=value, got '" + item + "'");
  }
  const std::string key = item.substr(0, eq);
  const std::string value = item.substr(eq + 1);

  if (key == "known_classes") {
    spec.known_classes = split(value, ',');
  } else if (key == "unknown_classes") {
    spec.unknown_classes = value.empty() ? std::vector<std::string>{} : split(value, ',');
  } else if (key == "feature_dim") {
    spec.feature_dim = parse_int(key, value);
  } else if (key == "objects_min") {
    spec.objects_min = parse_int(key, value);
  } else if (key == "objects_max") {
    spec.objects_max = parse_int(key, value);
  } else if (key == "images_train") {
    spec.images_train = parse_int(key, value);
  } else if (key == "images_test") {
    spec.images_test = parse_int(key, value);
  } else if (key == "wilderness_ratio") {
    spec.wilderness_ratio = parse_real(key, value);
  } else if (key == "noise_sigma") {
    spec.noise_sigma = parse_real(key, value);
  } else if (key == "proximity_pairs") {
    spec.proximity_pairs.clear();
    if (!value.empty()) {
      for (const std::string& entry : split(value, ',')) {
        const std::vector<std::string> fields = split(entry, ':');
        if (fields.size() != 3) {
          throw UsageError("--set proximity_pairs: expected unknown:known:cosine, got '" +
                           entry + "'");
        }
        spec.proximity_pairs.push_back(
            {fields[0], fields[1], parse_real(key, fields[2])});
      }
    }
  } else if (key == "seed") {
    spec.seed = parse_seed(key, value);
  } else if (key == "learning_rate") {
    cfg.learning_rate = parse_real(key, value);
  } else if (key == "iterations") {
    cfg.iterations = parse_int(key, value);
  } else if (key == "batch_images") {
    cfg.batch_images = parse_int(key, value);
  } else if (key == "enable_sc") {
    cfg.enable_sc = parse_flag(key, value);
  } else if (key == "enable_cd") {
    cfg.enable_cd = parse_flag(key, value);
  } else if (key == "enable_of") {
    cfg.enable_of = parse_flag(key, value);
  } else if (key == "train_seed") {
    cfg.seed = parse_seed(key, value);
  } else if (key == "alpha1") {
    cfg.loss.alpha1 = parse_real(key, value);
  } else if (key == "alpha2") {
    cfg.loss.alpha2 = parse_real(key, value);
  } else if (key == "alpha3") {
    cfg.loss.alpha3 = parse_real(key, value);
  } else if (key == "combiner") {
    cfg.loss.combiner = parse_combiner(value);
  } else if (key == "decorrelation_temperature") {
    cfg.loss.decorrelation_temperature = parse_real(key, value);
  } else if (key == "centerness_eps") {
    cfg.loss.centerness_eps = parse_real(key, value);
  } else if (key == "gm_eps") {
    cfg.loss.gm_eps = parse_real(key, value);
  } else {
    throw UsageError("--set: unknown key '" + key + "'");
  }
}

std::optional<double> parse_entropy_threshold(const std::string& value) {
  if (value == "none") return std::nullopt;
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(value, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != value.size() || value.empty()) {
    throw UsageError("--entropy-threshold expects a real or 'none', got '" + value + "'");
  }
  return v;
}

// All file outputs funnel through here: build the full byte string first,
// then write atomically so readers never observe a partial file. An empty
// path means stdout.
void deliver(const std::string& path, const std::string& content) {
  if (path.empty()) {
    std::cout << content;
  } else {
    osod::write_file_atomic(path, content);
  }
}

std::ifstream open_input(const std::string& path, const char* what) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw UsageError(std::string("cannot open ") + what + " file '" + path + "'");
  return f;
}

struct CommonArgs {
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out;
};

// --seed first, then --set overrides in order, then spec/config validation.
void resolve(const CommonArgs& args, osod::DatasetSpec& spec, osod::TrainConfig& cfg) {
  if (args.seed_given) {
    spec.seed = args.seed;
    cfg.seed = args.seed;
  }
  for (const std::string& item : args.sets) apply_set(item, spec, cfg);
  spec.validate();
  cfg.validate();
}

int run_generate(const CommonArgs& args, const std::string& embeddings_out) {
  osod::DatasetSpec spec;
  osod::TrainConfig cfg;
  resolve(args, spec, cfg);
  if (args.out.empty()) throw UsageError("generate requires --out");
  const osod::Dataset ds = osod::generate_dataset(spec);
  std::ostringstream body;
  osod::save_dataset(ds, body);
  deliver(args.out, body.str());
  if (!embeddings_out.empty()) {
    std::ostringstream emb;
    osod::save_embeddings(ds.embeddings, emb);
    deliver(embeddings_out, emb.str());
  }
  return 0;
}

int run_train(const CommonArgs& args) {
  osod::DatasetSpec spec;
  osod::TrainConfig cfg;
  resolve(args, spec, cfg);
  if (args.out.empty()) throw UsageError("train requires --out");
  const osod::TrainResult result = osod::train(spec, cfg);
  std::ostringstream body;
  osod::save_model(result.model, body);
  deliver(args.out, body.str());
  if (!result.loss_trajectory.empty()) {
    std::printf("trained %d iterations, loss %.6f -> %.6f\n", cfg.iterations,
                result.loss_trajectory.front(), result.loss_trajectory.back());
  }
  return 0;
}

int run_evaluate(const CommonArgs& args, const std::string& entropy_raw, double iou,
                 double recall_level, const std::string& dets_out,
                 const std::string& gts_out) {
  osod::DatasetSpec spec;
  osod::TrainConfig cfg;
  resolve(args, spec, cfg);
  const std::optional<double> entropy = parse_entropy_threshold(entropy_raw);

  const osod::Dataset ds = osod::generate_dataset(spec);
  const osod::TrainResult result = osod::train(spec, cfg);
  const std::vector<osod::Detection> dets =
      osod::predict_all(result.model, ds.test, entropy);
  const std::vector<osod::GroundTruthObject> gts = osod::collect_ground_truth(ds.test);

  osod::EvalOptions opts;
  opts.iou_thresh = iou;
  opts.recall_level = recall_level;
  // Relabeling already happened inside predict; do not threshold twice.
  opts.entropy_threshold = std::nullopt;
  const osod::EvalReport report = osod::evaluate(dets, gts, opts);

  std::ostringstream body;
  osod::emit_report(report, spec.known_classes, body);
  deliver(args.out, body.str());
  if (!dets_out.empty()) {
    std::ostringstream d;
    osod::save_detections(dets, spec.known_classes, d);
    deliver(dets_out, d.str());
  }
  if (!gts_out.empty()) {
    std::ostringstream g;
    osod::save_ground_truth(gts, spec.known_classes, g);
    deliver(gts_out, g.str());
  }
  return 0;
}

int run_metrics(const CommonArgs& args, const std::string& dets_path,
                const std::string& gts_path, const std::string& entropy_raw, double iou,
                double recall_level) {
  if (dets_path.empty() || gts_path.empty()) {
    throw UsageError("metrics requires --dets and --gts");
  }
  const std::optional<double> entropy = parse_entropy_threshold(entropy_raw);
  std::ifstream dets_in = open_input(dets_path, "detections");
  std::ifstream gts_in = open_input(gts_path, "ground-truth");
  const osod::AnnotationSet ann = osod::load_annotations(dets_in, gts_in);

  osod::EvalOptions opts;
  opts.iou_thresh = iou;
  opts.recall_level = recall_level;
  opts.entropy_threshold = entropy;
  const osod::EvalReport report = osod::evaluate(ann.dets, ann.gts, opts);

  std::ostringstream body;
  osod::emit_report(report, ann.class_names, body);
  deliver(args.out, body.str());
  return 0;
}

int run_ablate(const CommonArgs& args, const std::string& entropy_raw) {
  osod::DatasetSpec spec;
  osod::TrainConfig cfg;
  resolve(args, spec, cfg);
  const std::optional<double> entropy = parse_entropy_threshold(entropy_raw);
  const std::vector<osod::AblationRow> rows = osod::ablate(spec, cfg, entropy);
  std::ostringstream body;
  osod::emit_ablation(rows, body);
  deliver(args.out, body.str());
  return 0;
}

// -- gradcheck ---------------------------------------------------------------

// Deterministic uniforms in [-1, 1]; depends only on the engine's output so
// the table is reproducible across standard libraries.
class UniformStream {
 public:
  explicit UniformStream(std::uint64_t seed) : rng_(seed) {}

  double operator()() { return 2.0 * ((rng_() >> 11) * 0x1.0p-53) - 1.0; }

  Eigen::MatrixXd matrix(Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = (*this)();
    }
    return m;
  }

 private:
  std::mt19937_64 rng_;
};

int run_gradcheck(const CommonArgs& args) {
  const std::uint64_t seed = args.seed_given ? args.seed : 1;
  UniformStream u(seed);

  constexpr Eigen::Index kDim = 8;
  constexpr Eigen::Index kBatch = 6;
  constexpr int kClasses = 4;
  const osod::ClassEmbeddingTable table =
      osod::synth_embeddings({"a", "b", "c", "d"}, static_cast<int>(kDim), seed);
  const std::vector<int> labels = {0, 1, 2, 3, 0, 1};
  const std::vector<bool> is_object = {true, false, true, true, false, true};

  osod::TensorMap inputs;
  inputs["features"] = u.matrix(kBatch, kDim);
  inputs["sampled_features"] = u.matrix(kClasses, kDim);
  inputs["centerness_logits"] = u.matrix(kBatch, 1);
  inputs["objectness_logits"] = u.matrix(kBatch, 1);
  inputs["class_logits"] = u.matrix(kBatch, kClasses + 1);
  inputs["pred_deltas"] = u.matrix(kBatch, 4);
  const Eigen::MatrixXd target_deltas = u.matrix(kBatch, 4);
  Eigen::VectorXd centerness_targets(kBatch);
  for (Eigen::Index i = 0; i < kBatch; ++i) centerness_targets(i) = 0.5 * (u() + 1.0);

  auto sc_fn = [&](const osod::TensorMap& t) {
    return osod::semantic_clustering_loss({t.at("features"), labels}, table);
  };
  auto cd_fn = [&](const osod::TensorMap& t) {
    return osod::class_decorrelation_loss({t.at("sampled_features"), {0, 1, 2, 3}});
  };
  auto ctr_fn = [&](const osod::TensorMap& t) {
    return osod::centerness_loss(t.at("centerness_logits").col(0), centerness_targets);
  };
  auto obj_fn = [&](const osod::TensorMap& t) {
    return osod::objectness_loss(t.at("objectness_logits").col(0), is_object);
  };
  auto cls_fn = [&](const osod::TensorMap& t) {
    return osod::classification_loss(t.at("class_logits"), labels);
  };
  auto reg_fn = [&](const osod::TensorMap& t) {
    return osod::regression_loss(t.at("pred_deltas"), target_deltas);
  };
  auto of_fn = [&](const osod::TensorMap& t) {
    return osod::object_focus_loss(ctr_fn(t), obj_fn(t));
  };
  auto total_fn = [&](const osod::TensorMap& t) {
    osod::LossParts parts;
    parts.object_focus = of_fn(t);
    parts.semantic_clustering = sc_fn(t);
    parts.class_decorrelation = cd_fn(t);
    parts.classification = cls_fn(t);
    parts.regression = reg_fn(t);
    return osod::total_loss(parts, std::nullopt, osod::LossConfig{});
  };

  struct Case {
    const char* name;
    std::function<osod::DifferentiableScalar(const osod::TensorMap&)> fn;
  };
  const Case cases[] = {
      {"semantic_clustering", sc_fn}, {"class_decorrelation", cd_fn},
      {"centerness", ctr_fn},         {"objectness", obj_fn},
      {"classification", cls_fn},     {"regression", reg_fn},
      {"object_focus", of_fn},        {"total", total_fn},
  };

  constexpr double kTolerance = 1e-4;
  std::vector<osod::GradCheckLine> lines;
  bool all_ok = true;
  for (const Case& c : cases) {
    const osod::GradCheckReport report = osod::finite_difference_check(c.fn, inputs);
    const bool ok = report.max_rel_error <= kTolerance;
    all_ok = all_ok && ok;
    lines.push_back({c.name, report.max_rel_error, ok});
  }

  std::ostringstream body;
  osod::emit_gradcheck(lines, body);
  deliver(args.out, body.str());
  return all_ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"open-set detection alignment toolkit"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string entropy_raw = "none";
  double iou = 0.5;
  double recall_level = 0.8;
  std::string dets_path;
  std::string gts_path;
  std::string embeddings_out;

  auto add_common = [&](CLI::App* cmd, bool takes_out) {
    cmd->add_option("--seed", args.seed, "seed for dataset generation and training")
        ->each([&args](const std::string&) { args.seed_given = true; });
    cmd->add_option("--set", args.sets, "override a spec/config key (key=value)");
    if (takes_out) {
      cmd->add_option("--out", args.out, "output file (default: stdout)");
    }
  };

  CLI::App* gen = app.add_subcommand("generate", "write a synthetic dataset checkpoint");
  add_common(gen, true);
  gen->add_option("--embeddings", embeddings_out, "also write the class-embedding table");

  CLI::App* trn = app.add_subcommand("train", "train the toy detector, write the model");
  add_common(trn, true);

  CLI::App* eva = app.add_subcommand(
      "evaluate", "generate, train, predict, and score; write a report");
  add_common(eva, true);
  eva->add_option("--entropy-threshold", entropy_raw,
                  "relabel detections above this entropy as unknown ('none' disables)");
  eva->add_option("--iou", iou, "IoU threshold for AP matching");
  eva->add_option("--recall-level", recall_level, "recall level for wilderness impact");
  eva->add_option("--dets", dets_path, "also write the predicted detections here");
  eva->add_option("--gts", gts_path, "also write the test ground truth here");

  CLI::App* met = app.add_subcommand("metrics", "score annotation files, write a report");
  add_common(met, true);
  met->add_option("--dets", dets_path, "detections file");
  met->add_option("--gts", gts_path, "ground-truth file");
  met->add_option("--entropy-threshold", entropy_raw,
                  "relabel detections above this entropy as unknown ('none' disables)");
  met->add_option("--iou", iou, "IoU threshold for AP matching");
  met->add_option("--recall-level", recall_level, "recall level for wilderness impact");

  CLI::App* abl = app.add_subcommand("ablate", "loss-switch ablation table");
  add_common(abl, true);
  std::string ablate_entropy = "0.85";
  abl->add_option("--entropy-threshold", ablate_entropy,
                  "threshold for the component rows ('none' disables)");

  CLI::App* grd = app.add_subcommand("gradcheck", "finite-difference gradient audit");
  add_common(grd, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) return run_generate(args, embeddings_out);
    if (trn->parsed()) return run_train(args);
    if (eva->parsed()) {
      return run_evaluate(args, entropy_raw, iou, recall_level, dets_path, gts_path);
    }
    if (met->parsed()) {
      return run_metrics(args, dets_path, gts_path, entropy_raw, iou, recall_level);
    }
    if (abl->parsed()) return run_ablate(args, ablate_entropy);
    if (grd->parsed()) return run_gradcheck(args);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;  // unreachable with require_subcommand(1)
}
