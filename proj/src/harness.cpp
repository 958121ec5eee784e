#include "osod/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iterator>
#include <random>
#include <set>
#include <stdexcept>
#include <string>

namespace osod {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;
constexpr double kProjectorInitScale = 3.0;
constexpr double kLatentNoiseFraction = 0.4;

// Self-contained draws on top of mt19937_64 so streams depend only on the
// engine, not on library-specific distribution internals.
struct RandomStream {
  std::mt19937_64 rng;

  explicit RandomStream(std::uint64_t seed) : rng(seed) {}

  double u01() { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }
  double uniform(double a, double b) { return a + (b - a) * u01(); }
  std::uint64_t randint(std::uint64_t n) { return rng() % n; }

  double normal() {
    double u1 = u01();
    while (u1 <= 0.0) u1 = u01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u01());
  }

  Eigen::VectorXd gaussian(Eigen::Index n) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = normal();
    return v;
  }
};

void check_class_names(const std::vector<std::string>& knowns,
                       const std::vector<std::string>& unknowns) {
  std::set<std::string> seen;
  auto check = [&seen](const std::string& name) {
    if (name.empty()) throw std::invalid_argument("class names must be non-empty");
    if (name.find_first_of(" \t\r\n") != std::string::npos) {
      throw std::invalid_argument("class name contains whitespace: '" + name + "'");
    }
    if (name == "__unknown__") {
      throw std::invalid_argument("'__unknown__' is reserved for the unknown label");
    }
    if (!seen.insert(name).second) {
      throw std::invalid_argument("duplicate class name: '" + name + "'");
    }
  };
  for (const std::string& n : knowns) check(n);
  for (const std::string& n : unknowns) check(n);
}

Box random_box(RandomStream& rs) {
  const double w = rs.uniform(10.0, 30.0);
  const double h = rs.uniform(10.0, 30.0);
  const double cx = rs.uniform(20.0, 80.0);
  const double cy = rs.uniform(20.0, 80.0);
  return to_corner({cx, cy, w, h});
}

SyntheticScene make_scene(int image_id, const std::vector<int>& anchor_pool,
                          const ClassEmbeddingTable& table, const DatasetSpec& spec,
                          RandomStream& rs) {
  const int k = static_cast<int>(spec.known_classes.size());
  const Eigen::Index dim = table.dim();
  SyntheticScene scene;
  scene.image_id = image_id;

  const int n_objects =
      spec.objects_min +
      static_cast<int>(rs.randint(static_cast<std::uint64_t>(spec.objects_max - spec.objects_min + 1)));
  for (int o = 0; o < n_objects; ++o) {
    const int anchor = anchor_pool[rs.randint(anchor_pool.size())];
    SceneObject obj;
    obj.anchor_index = anchor;
    obj.gt.image_id = image_id;
    obj.gt.label = anchor < k ? anchor : kUnknownLabel;
    obj.gt.box = random_box(rs);
    // Class identity lives in the latent: mild anchor noise keeps the mean
    // cosine to the class anchor close to its configured value, while the
    // full noise_sigma goes into per-proposal observation noise below.
    obj.latent = table.vectors().row(anchor).transpose() +
                 kLatentNoiseFraction * spec.noise_sigma * rs.gaussian(dim);
    scene.objects.push_back(std::move(obj));
  }

  // Positives: one exact copy per object plus three jittered copies whose
  // deltas relative to the GT box are drawn directly (magnitude <= 0.15, so
  // every positive still overlaps its object at IoU > 0.5).
  for (std::size_t oi = 0; oi < scene.objects.size(); ++oi) {
    const SceneObject& obj = scene.objects[oi];
    const CenterBox g = to_center(obj.gt.box);
    for (int j = 0; j < 4; ++j) {
      BoxDeltas d{};
      if (j > 0) {
        auto draw = [&rs] {
          const double magnitude = rs.uniform(0.02, 0.15);
          return rs.u01() < 0.5 ? -magnitude : magnitude;
        };
        d = {draw(), draw(), draw(), draw()};
      }
      CenterBox p;
      p.w = g.w / std::exp(d.dw);
      p.h = g.h / std::exp(d.dh);
      p.cx = g.cx - d.dx * p.w;
      p.cy = g.cy - d.dy * p.h;
      Proposal prop;
      prop.box = to_corner(p);
      prop.feature = obj.latent + spec.noise_sigma * rs.gaussian(dim);
      prop.is_object = true;
      prop.gt_index = static_cast<int>(oi);
      scene.proposals.push_back(std::move(prop));
    }
  }

  // Negatives: random clutter boxes kept clear of the objects.
  const int n_negatives = 2 * n_objects + 2;
  for (int n = 0; n < n_negatives; ++n) {
    Box b = random_box(rs);
    for (int attempt = 0; attempt < 20; ++attempt) {
      double worst = 0.0;
      for (const SceneObject& obj : scene.objects) {
        worst = std::max(worst, iou(b, obj.gt.box));
      }
      if (worst <= 0.3) break;
      b = random_box(rs);
    }
    Proposal prop;
    prop.box = b;
    prop.feature = 0.5 * rs.gaussian(dim);
    prop.is_object = false;
    prop.gt_index = -1;
    scene.proposals.push_back(std::move(prop));
  }
  return scene;
}

struct Batch {
  Eigen::MatrixXd X;                   // n x input_dim, positives first
  std::vector<bool> is_object;         // n
  std::vector<int> class_labels;       // n, background = k
  Eigen::Index positives = 0;          // rows [0, positives) are positives
  Eigen::MatrixXd reg_targets;         // positives x 4
  std::vector<Eigen::Index> ctr_rows;  // rows with a (non-filtered) target
  Eigen::VectorXd ctr_targets;
};

Batch assemble_batch(const std::vector<const SyntheticScene*>& scenes, int k,
                     const LossConfig& loss_cfg) {
  std::vector<const Proposal*> pos;
  std::vector<const Proposal*> neg;
  std::vector<const SyntheticScene*> pos_scene;
  for (const SyntheticScene* s : scenes) {
    for (const Proposal& p : s->proposals) {
      if (p.gt_index >= 0) {
        pos.push_back(&p);
        pos_scene.push_back(s);
      } else {
        neg.push_back(&p);
      }
    }
  }
  if (neg.size() > 3 * pos.size()) neg.resize(3 * pos.size());  // 1:3 cap

  const Eigen::Index n = static_cast<Eigen::Index>(pos.size() + neg.size());
  if (n == 0) throw std::invalid_argument("batch contains no proposals");
  const Eigen::Index dim = pos.empty() ? neg.front()->feature.size() : pos.front()->feature.size();

  Batch b;
  b.X.resize(n, dim);
  b.is_object.resize(static_cast<std::size_t>(n));
  b.class_labels.resize(static_cast<std::size_t>(n));
  b.positives = static_cast<Eigen::Index>(pos.size());
  b.reg_targets.resize(b.positives, 4);
  std::vector<double> ctr_values;

  for (std::size_t i = 0; i < pos.size(); ++i) {
    const Proposal& p = *pos[i];
    const SceneObject& obj = pos_scene[i]->objects[static_cast<std::size_t>(p.gt_index)];
    if (obj.gt.label < 0) {
      throw std::invalid_argument("training scenes must contain known objects only");
    }
    const Eigen::Index row = static_cast<Eigen::Index>(i);
    b.X.row(row) = p.feature.transpose();
    b.is_object[i] = true;
    b.class_labels[i] = obj.gt.label;
    const BoxDeltas d = box_deltas(to_center(obj.gt.box), to_center(p.box));
    b.reg_targets.row(row) << d.dx, d.dy, d.dw, d.dh;
    if (const auto target = centerness_target(d, loss_cfg.centerness_eps)) {
      b.ctr_rows.push_back(row);
      ctr_values.push_back(*target);
    }
  }
  for (std::size_t i = 0; i < neg.size(); ++i) {
    const Eigen::Index row = b.positives + static_cast<Eigen::Index>(i);
    b.X.row(row) = neg[i]->feature.transpose();
    b.is_object[static_cast<std::size_t>(row)] = false;
    b.class_labels[static_cast<std::size_t>(row)] = k;
  }
  b.ctr_targets.resize(static_cast<Eigen::Index>(ctr_values.size()));
  for (std::size_t i = 0; i < ctr_values.size(); ++i) {
    b.ctr_targets(static_cast<Eigen::Index>(i)) = ctr_values[i];
  }
  return b;
}

Eigen::VectorXd gather(const Eigen::VectorXd& v, const std::vector<Eigen::Index>& rows) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) out(static_cast<Eigen::Index>(i)) = v(rows[i]);
  return out;
}

Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& m, const std::vector<Eigen::Index>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

TrainResult train_on(const Dataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  const ClassEmbeddingTable known_table = ds.embeddings.subset(ds.spec.known_classes);
  const int k = known_table.size();
  ToyDetector model = init_detector(ds.spec.feature_dim, known_table.dim(), k);

  std::mt19937_64 rng(cfg.seed);
  TrainResult result;
  result.loss_trajectory.reserve(static_cast<std::size_t>(cfg.iterations));

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    std::vector<const SyntheticScene*> batch;
    batch.reserve(static_cast<std::size_t>(cfg.batch_images));
    for (int i = 0; i < cfg.batch_images; ++i) {
      batch.push_back(&ds.train[rng() % ds.train.size()]);
    }
    // Drawn every iteration regardless of switches, so the scene stream is
    // identical across ablation configurations.
    const std::uint64_t cd_seed = rng();

    const ObjectiveResult step = training_objective(model, batch, known_table, cfg, cd_seed);
    result.loss_trajectory.push_back(step.value);
    if (!std::isfinite(step.value)) {
      char buf[256];
      std::snprintf(buf, sizeof(buf),
                    "non-finite training loss at iteration %d: object_focus=%g "
                    "semantic_clustering=%g class_decorrelation=%g regression=%g "
                    "classification=%g",
                    iter, step.parts.object_focus.value,
                    step.parts.semantic_clustering.value,
                    step.parts.class_decorrelation.value, step.parts.regression.value,
                    step.parts.classification.value);
      throw std::runtime_error(buf);
    }

    const double lr = cfg.learning_rate;
    model.projector_weight -= lr * step.gradients.projector_weight;
    model.projector_bias -= lr * step.gradients.projector_bias;
    model.class_weight -= lr * step.gradients.class_weight;
    model.class_bias -= lr * step.gradients.class_bias;
    model.reg_weight -= lr * step.gradients.reg_weight;
    model.reg_bias -= lr * step.gradients.reg_bias;
    model.objectness_weight -= lr * step.gradients.objectness_weight;
    model.objectness_bias -= lr * step.gradients.objectness_bias;
    model.centerness_weight -= lr * step.gradients.centerness_weight;
    model.centerness_bias -= lr * step.gradients.centerness_bias;
  }
  result.model = std::move(model);
  return result;
}

}  // namespace

void DatasetSpec::validate() const {
  if (known_classes.empty()) {
    throw std::invalid_argument("at least one known class is required");
  }
  check_class_names(known_classes, unknown_classes);
  if (feature_dim < 1) throw std::invalid_argument("feature_dim must be positive");
  if (objects_min < 1 || objects_max < objects_min) {
    throw std::invalid_argument("objects range requires 1 <= objects_min <= objects_max");
  }
  if (images_train < 1) throw std::invalid_argument("images_train must be positive");
  if (images_test < 0) throw std::invalid_argument("images_test must be non-negative");
  if (!std::isfinite(wilderness_ratio) || wilderness_ratio < 0.0) {
    throw std::invalid_argument("wilderness_ratio must be finite and non-negative");
  }
  if (!std::isfinite(noise_sigma) || noise_sigma <= 0.0) {
    throw std::invalid_argument("noise_sigma must be finite and positive");
  }
  if (std::llround(wilderness_ratio * images_test) > 0 && unknown_classes.empty()) {
    throw std::invalid_argument("wilderness scenes require at least one unknown class");
  }
  std::set<std::string> paired;
  for (const ProximityPair& p : proximity_pairs) {
    if (std::find(unknown_classes.begin(), unknown_classes.end(), p.unknown) ==
        unknown_classes.end()) {
      throw std::invalid_argument("proximity pair names no unknown class: '" + p.unknown + "'");
    }
    if (std::find(known_classes.begin(), known_classes.end(), p.known) ==
        known_classes.end()) {
      throw std::invalid_argument("proximity pair names no known class: '" + p.known + "'");
    }
    if (!(p.cosine > -1.0 && p.cosine < 1.0)) {
      throw std::invalid_argument("proximity cosine must lie in (-1,1)");
    }
    if (!paired.insert(p.unknown).second) {
      throw std::invalid_argument("unknown class paired twice: '" + p.unknown + "'");
    }
  }
}

void TrainConfig::validate() const {
  loss.validate();
  if (!std::isfinite(learning_rate) || learning_rate < 0.0) {
    throw std::invalid_argument("learning_rate must be finite and non-negative");
  }
  if (iterations < 1) throw std::invalid_argument("iterations must be >= 1");
  if (batch_images < 1) throw std::invalid_argument("batch_images must be >= 1");
}

void ToyDetector::validate() const {
  const Eigen::Index d = projector_weight.cols();
  const bool shapes_ok =
      projector_bias.size() == d && class_weight.rows() == d && class_weight.cols() >= 2 &&
      class_bias.size() == class_weight.cols() && reg_weight.rows() == d &&
      reg_weight.cols() == 4 && reg_bias.size() == 4 && objectness_weight.rows() == d &&
      objectness_weight.cols() == 1 && objectness_bias.size() == 1 &&
      centerness_weight.rows() == d && centerness_weight.cols() == 1 &&
      centerness_bias.size() == 1;
  if (!shapes_ok) throw std::invalid_argument("detector parameter shapes are inconsistent");
  const bool finite =
      projector_weight.allFinite() && projector_bias.allFinite() &&
      class_weight.allFinite() && class_bias.allFinite() && reg_weight.allFinite() &&
      reg_bias.allFinite() && objectness_weight.allFinite() &&
      objectness_bias.allFinite() && centerness_weight.allFinite() &&
      centerness_bias.allFinite();
  if (!finite) throw std::invalid_argument("detector parameters must be finite");
}

ToyDetector init_detector(int input_dim, int emb_dim, int known_classes) {
  if (input_dim < 1 || emb_dim < 1 || known_classes < 1) {
    throw std::invalid_argument("detector dimensions must be positive");
  }
  ToyDetector m;
  // The scaled-identity start stretches projected features, which multiplies
  // the effective step size of the zero-initialized linear heads; plain SGD
  // at the default learning rate then separates the clusters within the
  // default iteration budget.
  m.projector_weight = kProjectorInitScale * Eigen::MatrixXd::Identity(input_dim, emb_dim);
  m.projector_bias = Eigen::RowVectorXd::Zero(emb_dim);
  m.class_weight = Eigen::MatrixXd::Zero(emb_dim, known_classes + 1);
  m.class_bias = Eigen::RowVectorXd::Zero(known_classes + 1);
  m.reg_weight = Eigen::MatrixXd::Zero(emb_dim, 4);
  m.reg_bias = Eigen::RowVectorXd::Zero(4);
  m.objectness_weight = Eigen::MatrixXd::Zero(emb_dim, 1);
  m.objectness_bias = Eigen::RowVectorXd::Zero(1);
  m.centerness_weight = Eigen::MatrixXd::Zero(emb_dim, 1);
  m.centerness_bias = Eigen::RowVectorXd::Zero(1);
  return m;
}

Dataset generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  std::vector<std::string> all_names = spec.known_classes;
  all_names.insert(all_names.end(), spec.unknown_classes.begin(), spec.unknown_classes.end());
  std::vector<SimilarityPair> pairs;
  pairs.reserve(spec.proximity_pairs.size());
  for (const ProximityPair& p : spec.proximity_pairs) {
    pairs.push_back({p.unknown, p.known, p.cosine});
  }
  ClassEmbeddingTable table =
      synth_embeddings(all_names, spec.feature_dim, spec.seed, pairs);

  const int k = static_cast<int>(spec.known_classes.size());
  std::vector<int> known_pool(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) known_pool[static_cast<std::size_t>(i)] = i;
  std::vector<int> unknown_pool;
  for (int i = 0; i < static_cast<int>(spec.unknown_classes.size()); ++i) {
    unknown_pool.push_back(k + i);
  }

  RandomStream rs(spec.seed ^ 0x9e3779b97f4a7c15ULL);
  Dataset ds{spec, std::move(table), {}, {}};
  int image_id = 0;
  for (int i = 0; i < spec.images_train; ++i) {
    ds.train.push_back(make_scene(image_id++, known_pool, ds.embeddings, spec, rs));
  }
  for (int i = 0; i < spec.images_test; ++i) {
    ds.test.push_back(make_scene(image_id++, known_pool, ds.embeddings, spec, rs));
  }
  const long long wilderness = std::llround(spec.wilderness_ratio * spec.images_test);
  for (long long i = 0; i < wilderness; ++i) {
    ds.test.push_back(make_scene(image_id++, unknown_pool, ds.embeddings, spec, rs));
  }
  return ds;
}

ForwardOutputs forward_features(const ToyDetector& model, const Eigen::MatrixXd& X) {
  if (X.cols() != model.projector_weight.rows()) {
    throw std::invalid_argument("feature dimension does not match the projector");
  }
  ForwardOutputs out;
  out.features = (X * model.projector_weight).rowwise() + model.projector_bias;
  out.class_logits = (out.features * model.class_weight).rowwise() + model.class_bias;
  out.class_probs.resize(out.class_logits.rows(), out.class_logits.cols());
  for (Eigen::Index i = 0; i < out.class_logits.rows(); ++i) {
    const Eigen::ArrayXd shifted =
        out.class_logits.row(i).array() - out.class_logits.row(i).maxCoeff();
    const Eigen::ArrayXd e = shifted.exp();
    out.class_probs.row(i) = (e / e.sum()).matrix().transpose();
  }
  out.box_deltas = (out.features * model.reg_weight).rowwise() + model.reg_bias;
  out.objectness_logits =
      ((out.features * model.objectness_weight).rowwise() + model.objectness_bias).col(0);
  out.centerness_logits =
      ((out.features * model.centerness_weight).rowwise() + model.centerness_bias).col(0);
  return out;
}

ForwardOutputs forward(const ToyDetector& model, const SyntheticScene& scene) {
  Eigen::MatrixXd X(static_cast<Eigen::Index>(scene.proposals.size()),
                    model.projector_weight.rows());
  for (std::size_t i = 0; i < scene.proposals.size(); ++i) {
    if (scene.proposals[i].feature.size() != X.cols()) {
      throw std::invalid_argument("proposal feature dimension mismatch");
    }
    X.row(static_cast<Eigen::Index>(i)) = scene.proposals[i].feature.transpose();
  }
  return forward_features(model, X);
}

ObjectiveResult training_objective(const ToyDetector& model,
                                   const std::vector<const SyntheticScene*>& scenes,
                                   const ClassEmbeddingTable& known_table,
                                   const TrainConfig& cfg, std::uint64_t cd_sample_seed) {
  model.validate();
  const int k = model.known_classes();
  if (known_table.size() != k) {
    throw std::invalid_argument("embedding table size does not match the class head");
  }
  const Batch batch = assemble_batch(scenes, k, cfg.loss);
  const ForwardOutputs f = forward_features(model, batch.X);
  const Eigen::Index npos = batch.positives;

  LabeledFeatures positives;
  positives.features = f.features.topRows(npos);
  positives.labels.assign(batch.class_labels.begin(), batch.class_labels.begin() + npos);

  const DifferentiableScalar lc =
      centerness_loss(gather(f.centerness_logits, batch.ctr_rows), batch.ctr_targets);
  const DifferentiableScalar lobj = objectness_loss(f.objectness_logits, batch.is_object);
  const Combiner combiner = cfg.enable_of ? cfg.loss.combiner : Combiner::kObjectnessOnly;

  LossParts parts;
  parts.object_focus = object_focus_loss(lc, lobj, combiner, cfg.loss.gm_eps);
  parts.rpn_reg = zero_scalar();  // proposals arrive pre-regressed; no RPN box branch
  std::vector<Eigen::Index> cd_picks;
  if (npos > 0) {
    if (cfg.enable_sc) {
      parts.semantic_clustering = semantic_clustering_loss(positives, known_table);
    }
    if (cfg.enable_cd) {
      cd_picks = sample_per_class_indices(positives, cd_sample_seed);
      LabeledFeatures sampled;
      sampled.features.resize(static_cast<Eigen::Index>(cd_picks.size()),
                              positives.features.cols());
      for (std::size_t i = 0; i < cd_picks.size(); ++i) {
        sampled.features.row(static_cast<Eigen::Index>(i)) = positives.features.row(cd_picks[i]);
        sampled.labels.push_back(positives.labels[static_cast<std::size_t>(cd_picks[i])]);
      }
      parts.class_decorrelation =
          class_decorrelation_loss(sampled, cfg.loss.decorrelation_temperature);
    }
    parts.regression = regression_loss(f.box_deltas.topRows(npos), batch.reg_targets);
  }
  parts.classification = classification_loss(f.class_logits, batch.class_labels);

  ObjectiveResult out;
  out.parts = parts;
  const DifferentiableScalar total = total_loss(parts, std::nullopt, cfg.loss);
  out.value = total.value;

  // Chain the input-tensor gradients through the heads and the projector.
  const Eigen::Index n = batch.X.rows();
  const Eigen::Index d = model.projector_weight.cols();
  Eigen::MatrixXd dF = Eigen::MatrixXd::Zero(n, d);
  ToyDetector& g = out.gradients;
  g = init_detector(static_cast<int>(batch.X.cols()), static_cast<int>(d), k);
  g.projector_weight.setZero();

  if (auto it = total.grads.find("class_logits"); it != total.grads.end()) {
    const Eigen::MatrixXd& G = it->second;  // n x (k+1)
    g.class_weight = f.features.transpose() * G;
    g.class_bias = G.colwise().sum();
    dF += G * model.class_weight.transpose();
  }
  if (auto it = total.grads.find("pred_deltas"); it != total.grads.end()) {
    const Eigen::MatrixXd& G = it->second;  // npos x 4
    g.reg_weight = f.features.topRows(npos).transpose() * G;
    g.reg_bias = G.colwise().sum();
    dF.topRows(npos) += G * model.reg_weight.transpose();
  }
  if (auto it = total.grads.find("objectness_logits"); it != total.grads.end()) {
    const Eigen::MatrixXd& G = it->second;  // n x 1
    g.objectness_weight = f.features.transpose() * G;
    g.objectness_bias(0) = G.sum();
    dF += G * model.objectness_weight.transpose();
  }
  if (auto it = total.grads.find("centerness_logits"); it != total.grads.end()) {
    const Eigen::MatrixXd& G = it->second;  // nctr x 1
    const Eigen::MatrixXd Fctr = gather_rows(f.features, batch.ctr_rows);
    g.centerness_weight = Fctr.transpose() * G;
    g.centerness_bias(0) = G.sum();
    for (std::size_t i = 0; i < batch.ctr_rows.size(); ++i) {
      dF.row(batch.ctr_rows[i]) +=
          G(static_cast<Eigen::Index>(i), 0) * model.centerness_weight.transpose();
    }
  }
  if (auto it = total.grads.find("features"); it != total.grads.end()) {
    dF.topRows(npos) += it->second;  // semantic clustering acts on positives
  }
  if (auto it = total.grads.find("sampled_features"); it != total.grads.end()) {
    const Eigen::MatrixXd& G = it->second;  // one row per sampled class
    for (std::size_t i = 0; i < cd_picks.size(); ++i) {
      dF.row(cd_picks[i]) += G.row(static_cast<Eigen::Index>(i));
    }
  }
  g.projector_weight = batch.X.transpose() * dF;
  g.projector_bias = dF.colwise().sum();
  return out;
}

TrainResult train(const DatasetSpec& spec, const TrainConfig& cfg) {
  return train_on(generate_dataset(spec), cfg);
}

std::vector<Detection> predict(const ToyDetector& model, const SyntheticScene& scene,
                               std::optional<double> entropy_thr) {
  model.validate();
  std::vector<Detection> dets;
  if (scene.proposals.empty()) return dets;
  const ForwardOutputs f = forward(model, scene);
  const int k = model.known_classes();
  for (std::size_t i = 0; i < scene.proposals.size(); ++i) {
    const Eigen::Index row = static_cast<Eigen::Index>(i);
    Eigen::Index argmax = 0;
    const double best = f.class_probs.row(row).maxCoeff(&argmax);
    if (static_cast<int>(argmax) == k) continue;  // background wins: no detection

    const CenterBox p = to_center(scene.proposals[i].box);
    auto bounded = [](double v) { return std::clamp(v, -4.0, 4.0); };
    const double dx = bounded(f.box_deltas(row, 0));
    const double dy = bounded(f.box_deltas(row, 1));
    const double dw = bounded(f.box_deltas(row, 2));
    const double dh = bounded(f.box_deltas(row, 3));
    const CenterBox decoded{p.cx + dx * p.w, p.cy + dy * p.h, p.w * std::exp(dw),
                            p.h * std::exp(dh)};

    Detection det;
    det.image_id = scene.image_id;
    det.label = static_cast<int>(argmax);
    det.score = best;
    det.box = to_corner(decoded);
    det.class_probs.resize(static_cast<std::size_t>(f.class_probs.cols()));
    for (Eigen::Index c = 0; c < f.class_probs.cols(); ++c) {
      det.class_probs[static_cast<std::size_t>(c)] = f.class_probs(row, c);
    }
    dets.push_back(std::move(det));
  }
  if (entropy_thr) dets = entropy_threshold(dets, *entropy_thr);
  return dets;
}

std::vector<Detection> predict_all(const ToyDetector& model,
                                   const std::vector<SyntheticScene>& scenes,
                                   std::optional<double> entropy_thr) {
  std::vector<Detection> all;
  for (const SyntheticScene& scene : scenes) {
    std::vector<Detection> d = predict(model, scene, entropy_thr);
    all.insert(all.end(), std::make_move_iterator(d.begin()),
               std::make_move_iterator(d.end()));
  }
  return all;
}

std::vector<GroundTruthObject> collect_ground_truth(
    const std::vector<SyntheticScene>& scenes) {
  std::vector<GroundTruthObject> gts;
  for (const SyntheticScene& scene : scenes) {
    for (const SceneObject& obj : scene.objects) gts.push_back(obj.gt);
  }
  return gts;
}

std::vector<AblationRow> ablate(const DatasetSpec& spec, const TrainConfig& base_cfg,
                                std::optional<double> entropy_thr) {
  struct Case {
    const char* name;
    bool sc, cd, of;
  };
  static constexpr Case kCases[] = {
      {"sc", true, false, false},      {"cd", false, true, false},
      {"of", false, false, true},      {"sc+cd", true, true, false},
      {"sc+of", true, false, true},    {"cd+of", false, true, true},
      {"sc+cd+of", true, true, true},  {"none", false, false, false},
  };

  const Dataset ds = generate_dataset(spec);
  const std::vector<GroundTruthObject> gts = collect_ground_truth(ds.test);

  std::vector<AblationRow> rows;
  rows.reserve(std::size(kCases));
  for (const Case& c : kCases) {
    TrainConfig cfg = base_cfg;
    cfg.enable_sc = c.sc;
    cfg.enable_cd = c.cd;
    cfg.enable_of = c.of;
    const TrainResult tr = train_on(ds, cfg);
    const bool all_off = !c.sc && !c.cd && !c.of;
    const std::optional<double> thr = all_off ? std::nullopt : entropy_thr;
    const std::vector<Detection> dets = predict_all(tr.model, ds.test, thr);

    AblationRow row;
    row.name = c.name;
    row.enable_sc = c.sc;
    row.enable_cd = c.cd;
    row.enable_of = c.of;
    row.report = evaluate(dets, gts, EvalOptions{});
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace osod
