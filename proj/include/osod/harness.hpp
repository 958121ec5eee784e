#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "osod/embeddings.hpp"
#include "osod/geometry.hpp"
#include "osod/losses.hpp"
#include "osod/metrics.hpp"

namespace osod {

/// Places `unknown`'s class anchor at the given cosine to `known`'s anchor.
struct ProximityPair {
  std::string unknown;
  std::string known;
  double cosine = 0.0;
};

struct DatasetSpec {
  std::vector<std::string> known_classes = {"aeroplane", "bicycle", "bird", "boat",
                                            "car",       "cat",     "dog",  "horse"};
  std::vector<std::string> unknown_classes = {"zebra", "elephant", "sofa"};
  int feature_dim = 16;
  int objects_min = 1;  // objects per image, inclusive range
  int objects_max = 3;
  int images_train = 200;
  int images_test = 100;
  // Unknown-only scenes appended to the test split, as a ratio of
  // images_test: round(wilderness_ratio * images_test) scenes.
  double wilderness_ratio = 1.0;
  double noise_sigma = 0.25;  // spread of class-conditional feature clusters
  std::vector<ProximityPair> proximity_pairs = {{"zebra", "horse", 0.8}};
  std::uint64_t seed = 7;

  void validate() const;
};

struct SceneObject {
  GroundTruthObject gt;    // label is a known-class index or kUnknownLabel
  Eigen::VectorXd latent;  // class anchor + Gaussian noise, length feature_dim
  int anchor_index = 0;    // row in the full (known+unknown) embedding table
};

struct Proposal {
  Box box;
  Eigen::VectorXd feature;  // length feature_dim
  bool is_object = false;
  int gt_index = -1;  // index into the scene's objects, -1 for negatives
};

struct SyntheticScene {
  int image_id = 0;
  std::vector<SceneObject> objects;
  std::vector<Proposal> proposals;
};

struct Dataset {
  DatasetSpec spec;
  ClassEmbeddingTable embeddings;  // known classes first, then unknown
  std::vector<SyntheticScene> train;
  std::vector<SyntheticScene> test;
};

/// Linear detector: an affine projector into embedding space followed by
/// affine class/regression/objectness/centerness heads.
struct ToyDetector {
  Eigen::MatrixXd projector_weight;    // input_dim x emb_dim
  Eigen::RowVectorXd projector_bias;   // emb_dim
  Eigen::MatrixXd class_weight;        // emb_dim x (k+1); last column = background
  Eigen::RowVectorXd class_bias;       // k+1
  Eigen::MatrixXd reg_weight;          // emb_dim x 4
  Eigen::RowVectorXd reg_bias;         // 4
  Eigen::MatrixXd objectness_weight;   // emb_dim x 1
  Eigen::RowVectorXd objectness_bias;  // 1
  Eigen::MatrixXd centerness_weight;   // emb_dim x 1
  Eigen::RowVectorXd centerness_bias;  // 1

  int known_classes() const { return static_cast<int>(class_weight.cols()) - 1; }
  void validate() const;
};

/// Scaled-identity projector, zero heads: uniform class probabilities, zero
/// logits at the start of training.
ToyDetector init_detector(int input_dim, int emb_dim, int known_classes);

struct TrainConfig {
  LossConfig loss;
  double learning_rate = 0.01;
  int iterations = 2000;
  int batch_images = 4;
  bool enable_sc = true;
  bool enable_cd = true;
  bool enable_of = true;
  std::uint64_t seed = 1;

  void validate() const;
};

struct ForwardOutputs {
  Eigen::MatrixXd features;           // n x emb_dim (projected)
  Eigen::MatrixXd class_logits;       // n x (k+1)
  Eigen::MatrixXd class_probs;        // n x (k+1), row softmax
  Eigen::MatrixXd box_deltas;         // n x 4
  Eigen::VectorXd objectness_logits;  // n
  Eigen::VectorXd centerness_logits;  // n
};

/// Deterministic synthetic splits; class anchors are the synthesized
/// embeddings, unknown anchors sit at the configured proximity cosines.
Dataset generate_dataset(const DatasetSpec& spec);

/// Affine maps + softmax over rows of X (n x input_dim).
ForwardOutputs forward_features(const ToyDetector& model, const Eigen::MatrixXd& X);

/// forward_features over the scene's proposals, order-preserving.
ForwardOutputs forward(const ToyDetector& model, const SyntheticScene& scene);

/// One evaluation of the combined training objective on a batch of scenes:
/// loss value, per-term record, and analytic gradients w.r.t. every model
/// parameter (in a ToyDetector-shaped container). train() applies plain SGD
/// on exactly these gradients; exposed so they can be verified numerically.
struct ObjectiveResult {
  double value = 0.0;
  LossParts parts;
  ToyDetector gradients;
};

ObjectiveResult training_objective(const ToyDetector& model,
                                   const std::vector<const SyntheticScene*>& scenes,
                                   const ClassEmbeddingTable& known_table,
                                   const TrainConfig& cfg, std::uint64_t cd_sample_seed);

struct TrainResult {
  ToyDetector model;
  std::vector<double> loss_trajectory;  // total loss per iteration
};

/// Plain SGD on the combined loss over the spec's train split. Disabled
/// switches zero their term exactly; disabled object focus falls back to the
/// objectness loss alone. Throws std::runtime_error with per-term diagnostics
/// if the loss turns non-finite.
TrainResult train(const DatasetSpec& spec, const TrainConfig& cfg);

/// Class-head argmax per proposal with score = max probability; proposals
/// whose argmax is the background slot are dropped; boxes decoded from the
/// regression head (offsets clamped to ±4); entropy relabeling applied when a
/// threshold is given. No NMS.
std::vector<Detection> predict(const ToyDetector& model, const SyntheticScene& scene,
                               std::optional<double> entropy_threshold);

std::vector<Detection> predict_all(const ToyDetector& model,
                                   const std::vector<SyntheticScene>& scenes,
                                   std::optional<double> entropy_threshold);

std::vector<GroundTruthObject> collect_ground_truth(
    const std::vector<SyntheticScene>& scenes);

struct AblationRow {
  std::string name;  // "sc", "cd", "of", "sc+cd", ..., "none"
  bool enable_sc = false;
  bool enable_cd = false;
  bool enable_of = false;
  EvalReport report;
};

/// Trains and evaluates the switch grid {SC},{CD},{OF},{SC,CD},{SC,OF},
/// {CD,OF},{SC,CD,OF},{} with shared seeds. Component rows are evaluated with
/// the given entropy threshold; the all-off row is evaluated closed-set (no
/// thresholding), so it has no unknown mechanism at all.
std::vector<AblationRow> ablate(const DatasetSpec& spec, const TrainConfig& base_cfg,
                                std::optional<double> entropy_threshold = 0.85);

}  // namespace osod
