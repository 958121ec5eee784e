#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "osod/embeddings.hpp"

namespace osod {

/// Named input tensors. Vectors are stored as n x 1 matrices.
using TensorMap = std::map<std::string, Eigen::MatrixXd>;

/// A loss value together with its gradient w.r.t. each named input tensor.
/// Every gradient has the same shape as the input it differentiates.
struct DifferentiableScalar {
  double value = 0.0;
  TensorMap grads;
};

inline DifferentiableScalar zero_scalar() { return {}; }

/// Moves the gradient stored under `from` to the key `to`.
DifferentiableScalar rename_grad(DifferentiableScalar s, const std::string& from,
                                 const std::string& to);

enum class Combiner {
  kGeometricMean,
  kSum,
  kProduct,
  kObjectnessOnly,
  kCenternessOnly,
};

enum class Reduction { kMean, kSum };

struct LossConfig {
  double alpha1 = 0.05;  // semantic clustering weight
  double alpha2 = 0.05;  // class decorrelation weight
  double alpha3 = 1.0;   // object focus weight
  double centerness_eps = 1e-8;
  double gm_eps = 1e-12;
  double decorrelation_temperature = 1.0;
  Combiner combiner = Combiner::kGeometricMean;
  Reduction reduction = Reduction::kMean;

  void validate() const;
};

/// A batch of proposal features with their known-class labels.
struct LabeledFeatures {
  Eigen::MatrixXd features;  // m x d
  std::vector<int> labels;   // length m, each in [0, k)
};

/// Cross-entropy over cosine similarities between each feature row and the
/// class embeddings; pulls features toward their class's semantic anchor.
/// Gradient key: "features" (embeddings are constants).
DifferentiableScalar semantic_clustering_loss(const LabeledFeatures& lf,
                                              const ClassEmbeddingTable& table,
                                              Reduction reduction = Reduction::kMean);

/// Row indices chosen by sample_per_class, ascending label order.
std::vector<Eigen::Index> sample_per_class_indices(const LabeledFeatures& lf,
                                                   std::uint64_t seed);

/// One uniformly sampled row per distinct label, ascending label order;
/// deterministic for a fixed seed.
LabeledFeatures sample_per_class(const LabeledFeatures& lf, std::uint64_t seed);

/// Cross-entropy between the row-softmaxed cosine-similarity matrix of the
/// sampled rows and the identity; pushes the rows toward mutual
/// orthogonality. Mean-reduced over rows. Gradient key: "sampled_features".
DifferentiableScalar class_decorrelation_loss(const LabeledFeatures& sampled,
                                              double temperature = 1.0);

/// L1 disparity between centerness logits and targets.
/// Gradient key: "centerness_logits" (subgradient 0 at ties).
DifferentiableScalar centerness_loss(const Eigen::VectorXd& logits,
                                     const Eigen::VectorXd& targets,
                                     Reduction reduction = Reduction::kMean);

/// Binary cross-entropy of sigmoid(logit) against 0/1 objectness targets,
/// in the numerically stable log-sum-exp form. Gradient key:
/// "objectness_logits".
DifferentiableScalar objectness_loss(const Eigen::VectorXd& logits,
                                     const std::vector<bool>& is_object,
                                     Reduction reduction = Reduction::kMean);

/// Combines the centerness and objectness losses; the default geometric mean
/// sqrt((L_C+eps)(L_Obj+eps)) keeps gradients finite when one side is zero.
/// Gradients are chained to both constituents' inputs.
DifferentiableScalar object_focus_loss(const DifferentiableScalar& lc,
                                       const DifferentiableScalar& lobj,
                                       Combiner combiner = Combiner::kGeometricMean,
                                       double gm_eps = 1e-12);

/// Mean softmax cross-entropy over k known classes plus one
/// unknown/background slot. Gradient key: "class_logits".
DifferentiableScalar classification_loss(const Eigen::MatrixXd& class_logits,
                                         const std::vector<int>& labels);

/// Mean smooth-L1 (transition 1.0) over all 4n delta entries.
/// Gradient key: "pred_deltas".
DifferentiableScalar regression_loss(const Eigen::MatrixXd& pred_deltas,
                                     const Eigen::MatrixXd& target_deltas);

/// The constituent losses entering the combined objective.
struct LossParts {
  DifferentiableScalar object_focus;
  DifferentiableScalar rpn_reg;
  DifferentiableScalar semantic_clustering;
  DifferentiableScalar class_decorrelation;
  DifferentiableScalar regression;
  DifferentiableScalar classification;
};

/// L_Final = [a3*L_ObjFocus + L_RPN-Reg] + [a1*L_SC + a2*L_CD + L_UPL + L_Reg
/// + L_CE]. The unknown-probability plug-in defaults to the zero scalar.
/// Gradients are the weighted sums of the constituents' gradients; terms with
/// an exactly-zero weight contribute no gradient entries.
DifferentiableScalar total_loss(const LossParts& parts,
                                const std::optional<DifferentiableScalar>& upl,
                                const LossConfig& cfg);

/// Unknown-probability plug-in slot: class logits + labels -> loss.
using UnknownProbabilityLoss = std::function<DifferentiableScalar(
    const Eigen::MatrixXd& class_logits, const std::vector<int>& labels)>;

/// Default plug-in: contributes nothing.
DifferentiableScalar zero_unknown_probability_loss(const Eigen::MatrixXd&,
                                                   const std::vector<int>&);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_input;
  Eigen::Index worst_row = -1;
  Eigen::Index worst_col = -1;
  // Coordinates excluded because one-sided differences disagree (the loss is
  // not differentiable there, e.g. an L1 tie).
  std::vector<std::tuple<std::string, Eigen::Index, Eigen::Index>> excluded;
};

/// Central-difference check of the analytic gradients of `loss_fn` at
/// `inputs`. Checks every tensor named in the returned gradient map and
/// reports max(|analytic - numeric| / max(1e-8, |numeric|)). Throws if the
/// loss is non-finite anywhere during probing.
GradCheckReport finite_difference_check(
    const std::function<DifferentiableScalar(const TensorMap&)>& loss_fn,
    const TensorMap& inputs, double step = 1e-5);

}  // namespace osod
