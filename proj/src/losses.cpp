#include "osod/losses.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <stdexcept>

namespace osod {

namespace {

// log(sum(exp(v))) with the usual max shift.
double logsumexp(const Eigen::VectorXd& v) {
  const double m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().sum());
}

Eigen::VectorXd softmax(const Eigen::VectorXd& v) {
  const double m = v.maxCoeff();
  Eigen::VectorXd e = (v.array() - m).exp();
  return e / e.sum();
}

double stable_sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// acc[name] += weight * grad, creating zero-initialized entries as needed.
void accumulate(TensorMap& acc, const TensorMap& grads, double weight) {
  for (const auto& [name, g] : grads) {
    auto it = acc.find(name);
    if (it == acc.end()) {
      acc.emplace(name, weight * g);
    } else {
      if (it->second.rows() != g.rows() || it->second.cols() != g.cols()) {
        throw std::invalid_argument("gradient shape mismatch for input '" + name + "'");
      }
      it->second += weight * g;
    }
  }
}

void check_labeled(const LabeledFeatures& lf) {
  if (static_cast<Eigen::Index>(lf.labels.size()) != lf.features.rows()) {
    throw std::invalid_argument("labels size must match feature row count");
  }
  if (!lf.features.allFinite()) {
    throw std::invalid_argument("features must be finite");
  }
}

}  // namespace

DifferentiableScalar rename_grad(DifferentiableScalar s, const std::string& from,
                                 const std::string& to) {
  if (from == to) return s;
  auto it = s.grads.find(from);
  if (it == s.grads.end()) {
    throw std::invalid_argument("rename_grad: no gradient named '" + from + "'");
  }
  if (s.grads.count(to) != 0) {
    throw std::invalid_argument("rename_grad: gradient '" + to + "' already present");
  }
  Eigen::MatrixXd g = std::move(it->second);
  s.grads.erase(it);
  s.grads.emplace(to, std::move(g));
  return s;
}

void LossConfig::validate() const {
  auto finite_nonneg = [](double v, const char* what) {
    if (!std::isfinite(v) || v < 0.0) {
      throw std::invalid_argument(std::string(what) + " must be finite and non-negative");
    }
  };
  finite_nonneg(alpha1, "alpha1");
  finite_nonneg(alpha2, "alpha2");
  finite_nonneg(alpha3, "alpha3");
  finite_nonneg(centerness_eps, "centerness_eps");
  finite_nonneg(gm_eps, "gm_eps");
  if (!std::isfinite(decorrelation_temperature) || decorrelation_temperature <= 0.0) {
    throw std::invalid_argument("decorrelation_temperature must be finite and positive");
  }
}

DifferentiableScalar semantic_clustering_loss(const LabeledFeatures& lf,
                                              const ClassEmbeddingTable& table,
                                              Reduction reduction) {
  check_labeled(lf);
  const Eigen::Index m = lf.features.rows();
  if (m == 0) return zero_scalar();
  if (lf.features.cols() != table.dim()) {
    throw std::invalid_argument("feature dimension must match embedding dimension");
  }
  const Eigen::Index k = table.size();
  for (int label : lf.labels) {
    if (label < 0 || label >= static_cast<int>(k)) {
      throw std::invalid_argument("semantic clustering label out of range");
    }
  }

  const Eigen::MatrixXd& T = table.vectors();  // k x d, unit rows
  const double scale = (reduction == Reduction::kMean) ? 1.0 / static_cast<double>(m) : 1.0;

  double value = 0.0;
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(m, lf.features.cols());
  for (Eigen::Index i = 0; i < m; ++i) {
    const Eigen::VectorXd f = lf.features.row(i).transpose();
    const double r = f.norm();
    if (r == 0.0) {
      throw std::domain_error("semantic clustering feature has zero norm");
    }
    const Eigen::VectorXd fhat = f / r;
    const Eigen::VectorXd cosines = T * fhat;  // k
    const int y = lf.labels[static_cast<std::size_t>(i)];
    value += logsumexp(cosines) - cosines(y);

    Eigen::VectorXd g = softmax(cosines);  // dloss/dcosines = p - onehot
    g(y) -= 1.0;
    grad.row(i) = ((T.transpose() * g - (cosines.dot(g)) * fhat) / r).transpose();
  }
  DifferentiableScalar out;
  out.value = value * scale;
  out.grads.emplace("features", grad * scale);
  return out;
}

std::vector<Eigen::Index> sample_per_class_indices(const LabeledFeatures& lf,
                                                   std::uint64_t seed) {
  check_labeled(lf);
  std::map<int, std::vector<Eigen::Index>> groups;  // ascending label order
  for (Eigen::Index i = 0; i < lf.features.rows(); ++i) {
    groups[lf.labels[static_cast<std::size_t>(i)]].push_back(i);
  }
  std::mt19937_64 rng(seed);
  std::vector<Eigen::Index> picks;
  picks.reserve(groups.size());
  for (const auto& [label, rows] : groups) {
    picks.push_back(rows[static_cast<std::size_t>(rng() % rows.size())]);
  }
  return picks;
}

LabeledFeatures sample_per_class(const LabeledFeatures& lf, std::uint64_t seed) {
  const std::vector<Eigen::Index> picks = sample_per_class_indices(lf, seed);
  LabeledFeatures out;
  out.features.resize(static_cast<Eigen::Index>(picks.size()), lf.features.cols());
  out.labels.reserve(picks.size());
  for (std::size_t i = 0; i < picks.size(); ++i) {
    out.features.row(static_cast<Eigen::Index>(i)) = lf.features.row(picks[i]);
    out.labels.push_back(lf.labels[static_cast<std::size_t>(picks[i])]);
  }
  return out;
}

DifferentiableScalar class_decorrelation_loss(const LabeledFeatures& sampled,
                                              double temperature) {
  check_labeled(sampled);
  if (!std::isfinite(temperature) || temperature <= 0.0) {
    throw std::invalid_argument("temperature must be finite and positive");
  }
  const Eigen::Index s = sampled.features.rows();
  if (s == 0) return zero_scalar();
  {
    std::vector<int> sorted = sampled.labels;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw std::invalid_argument("class decorrelation rows must have distinct labels");
    }
  }

  const Eigen::Index d = sampled.features.cols();
  Eigen::VectorXd norms(s);
  Eigen::MatrixXd xhat(s, d);
  for (Eigen::Index i = 0; i < s; ++i) {
    const double r = sampled.features.row(i).norm();
    if (r == 0.0) throw std::domain_error("class decorrelation feature has zero norm");
    norms(i) = r;
    xhat.row(i) = sampled.features.row(i) / r;
  }
  Eigen::MatrixXd sim = xhat * xhat.transpose();
  sim.diagonal().setOnes();  // exact self-similarity, constant w.r.t. inputs

  // Mean over rows of CE(row-softmax(sim / tau), identity row).
  const Eigen::MatrixXd Z = sim / temperature;
  double value = 0.0;
  Eigen::MatrixXd G(s, s);  // dvalue/dZ
  for (Eigen::Index i = 0; i < s; ++i) {
    const Eigen::VectorXd row = Z.row(i).transpose();
    value += logsumexp(row) - row(i);
    Eigen::VectorXd p = softmax(row);
    p(i) -= 1.0;
    G.row(i) = p.transpose();
  }
  value /= static_cast<double>(s);
  G /= static_cast<double>(s);

  // dvalue/dsim = G / tau; sim_ij = xhat_i . xhat_j with d(sim_ij)/d(x_i)
  // = (xhat_j - sim_ij xhat_i) / norm_i. Diagonal entries are constant.
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(s, d);
  for (Eigen::Index i = 0; i < s; ++i) {
    for (Eigen::Index j = 0; j < s; ++j) {
      if (j == i) continue;
      const double w = (G(i, j) + G(j, i)) / temperature;
      grad.row(i) += w * (xhat.row(j) - sim(i, j) * xhat.row(i)) / norms(i);
    }
  }

  DifferentiableScalar out;
  out.value = value;
  out.grads.emplace("sampled_features", std::move(grad));
  return out;
}

DifferentiableScalar centerness_loss(const Eigen::VectorXd& logits,
                                     const Eigen::VectorXd& targets,
                                     Reduction reduction) {
  if (logits.size() != targets.size()) {
    throw std::invalid_argument("centerness logits and targets must match in length");
  }
  const Eigen::Index n = logits.size();
  if (n == 0) return zero_scalar();
  if (!logits.allFinite() || !targets.allFinite()) {
    throw std::invalid_argument("centerness inputs must be finite");
  }
  const double scale = (reduction == Reduction::kMean) ? 1.0 / static_cast<double>(n) : 1.0;

  const Eigen::VectorXd diff = logits - targets;
  DifferentiableScalar out;
  out.value = diff.array().abs().sum() * scale;
  Eigen::MatrixXd grad(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    grad(i, 0) = (diff(i) > 0.0 ? 1.0 : (diff(i) < 0.0 ? -1.0 : 0.0)) * scale;
  }
  out.grads.emplace("centerness_logits", std::move(grad));
  return out;
}

DifferentiableScalar objectness_loss(const Eigen::VectorXd& logits,
                                     const std::vector<bool>& is_object,
                                     Reduction reduction) {
  if (static_cast<Eigen::Index>(is_object.size()) != logits.size()) {
    throw std::invalid_argument("objectness logits and targets must match in length");
  }
  const Eigen::Index n = logits.size();
  if (n == 0) return zero_scalar();
  if (!logits.allFinite()) {
    throw std::invalid_argument("objectness logits must be finite");
  }
  const double scale = (reduction == Reduction::kMean) ? 1.0 / static_cast<double>(n) : 1.0;

  double value = 0.0;
  Eigen::MatrixXd grad(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double z = logits(i);
    const double y = is_object[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    value += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    grad(i, 0) = (stable_sigmoid(z) - y) * scale;
  }
  DifferentiableScalar out;
  out.value = value * scale;
  out.grads.emplace("objectness_logits", std::move(grad));
  return out;
}

DifferentiableScalar object_focus_loss(const DifferentiableScalar& lc,
                                       const DifferentiableScalar& lobj,
                                       Combiner combiner, double gm_eps) {
  if (!std::isfinite(lc.value) || !std::isfinite(lobj.value)) {
    throw std::invalid_argument("object focus constituents must be finite");
  }
  if (lc.value < 0.0 || lobj.value < 0.0) {
    throw std::domain_error("object focus constituents must be non-negative");
  }
  if (!std::isfinite(gm_eps) || gm_eps < 0.0) {
    throw std::invalid_argument("gm_eps must be finite and non-negative");
  }

  double value = 0.0;
  double dc = 0.0;    // dvalue / dlc
  double dobj = 0.0;  // dvalue / dlobj
  switch (combiner) {
    case Combiner::kGeometricMean: {
      const double a = lc.value + gm_eps;
      const double b = lobj.value + gm_eps;
      value = std::sqrt(a * b);
      if (value > 0.0) {
        dc = b / (2.0 * value);
        dobj = a / (2.0 * value);
      }
      break;
    }
    case Combiner::kSum:
      value = lc.value + lobj.value;
      dc = 1.0;
      dobj = 1.0;
      break;
    case Combiner::kProduct:
      value = lc.value * lobj.value;
      dc = lobj.value;
      dobj = lc.value;
      break;
    case Combiner::kObjectnessOnly:
      value = lobj.value;
      dobj = 1.0;
      break;
    case Combiner::kCenternessOnly:
      value = lc.value;
      dc = 1.0;
      break;
  }

  DifferentiableScalar out;
  out.value = value;
  if (dc != 0.0) accumulate(out.grads, lc.grads, dc);
  if (dobj != 0.0) accumulate(out.grads, lobj.grads, dobj);
  return out;
}

DifferentiableScalar classification_loss(const Eigen::MatrixXd& class_logits,
                                         const std::vector<int>& labels) {
  if (static_cast<Eigen::Index>(labels.size()) != class_logits.rows()) {
    throw std::invalid_argument("labels size must match logit row count");
  }
  const Eigen::Index m = class_logits.rows();
  if (m == 0) return zero_scalar();
  if (class_logits.cols() < 2) {
    throw std::invalid_argument("classification needs at least two classes");
  }
  if (!class_logits.allFinite()) {
    throw std::invalid_argument("class logits must be finite");
  }
  for (int label : labels) {
    if (label < 0 || label >= static_cast<int>(class_logits.cols())) {
      throw std::invalid_argument("classification label out of range");
    }
  }

  double value = 0.0;
  Eigen::MatrixXd grad(m, class_logits.cols());
  for (Eigen::Index i = 0; i < m; ++i) {
    const Eigen::VectorXd row = class_logits.row(i).transpose();
    const int y = labels[static_cast<std::size_t>(i)];
    value += logsumexp(row) - row(y);
    Eigen::VectorXd p = softmax(row);
    p(y) -= 1.0;
    grad.row(i) = p.transpose();
  }
  const double scale = 1.0 / static_cast<double>(m);
  DifferentiableScalar out;
  out.value = value * scale;
  out.grads.emplace("class_logits", grad * scale);
  return out;
}

DifferentiableScalar regression_loss(const Eigen::MatrixXd& pred_deltas,
                                     const Eigen::MatrixXd& target_deltas) {
  if (pred_deltas.rows() != target_deltas.rows() ||
      pred_deltas.cols() != target_deltas.cols()) {
    throw std::invalid_argument("prediction and target delta shapes must match");
  }
  if (pred_deltas.cols() != 4) {
    throw std::invalid_argument("box deltas must have four columns");
  }
  const Eigen::Index m = pred_deltas.rows();
  if (m == 0) return zero_scalar();
  if (!pred_deltas.allFinite() || !target_deltas.allFinite()) {
    throw std::invalid_argument("regression inputs must be finite");
  }

  const double scale = 1.0 / static_cast<double>(4 * m);
  double value = 0.0;
  Eigen::MatrixXd grad(m, 4);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < 4; ++j) {
      const double e = pred_deltas(i, j) - target_deltas(i, j);
      if (std::abs(e) < 1.0) {
        value += 0.5 * e * e;
        grad(i, j) = e * scale;
      } else {
        value += std::abs(e) - 0.5;
        grad(i, j) = (e > 0.0 ? 1.0 : -1.0) * scale;
      }
    }
  }
  DifferentiableScalar out;
  out.value = value * scale;
  out.grads.emplace("pred_deltas", std::move(grad));
  return out;
}

DifferentiableScalar total_loss(const LossParts& parts,
                                const std::optional<DifferentiableScalar>& upl,
                                const LossConfig& cfg) {
  cfg.validate();
  static const DifferentiableScalar kZero{};
  const DifferentiableScalar& upl_term = upl ? *upl : kZero;

  DifferentiableScalar out;
  out.value = cfg.alpha3 * parts.object_focus.value + parts.rpn_reg.value +
              cfg.alpha1 * parts.semantic_clustering.value +
              cfg.alpha2 * parts.class_decorrelation.value + upl_term.value +
              parts.regression.value + parts.classification.value;

  // Fixed accumulation order keeps summation bit-reproducible; exactly-zero
  // weights contribute neither value rounding nor gradient entries.
  if (cfg.alpha3 != 0.0) accumulate(out.grads, parts.object_focus.grads, cfg.alpha3);
  accumulate(out.grads, parts.rpn_reg.grads, 1.0);
  if (cfg.alpha1 != 0.0) {
    accumulate(out.grads, parts.semantic_clustering.grads, cfg.alpha1);
  }
  if (cfg.alpha2 != 0.0) {
    accumulate(out.grads, parts.class_decorrelation.grads, cfg.alpha2);
  }
  accumulate(out.grads, upl_term.grads, 1.0);
  accumulate(out.grads, parts.regression.grads, 1.0);
  accumulate(out.grads, parts.classification.grads, 1.0);
  return out;
}

DifferentiableScalar zero_unknown_probability_loss(const Eigen::MatrixXd&,
                                                   const std::vector<int>&) {
  return zero_scalar();
}

GradCheckReport finite_difference_check(
    const std::function<DifferentiableScalar(const TensorMap&)>& loss_fn,
    const TensorMap& inputs, double step) {
  if (!std::isfinite(step) || step <= 0.0) {
    throw std::invalid_argument("step must be finite and positive");
  }
  const DifferentiableScalar base = loss_fn(inputs);
  if (!std::isfinite(base.value)) {
    throw std::domain_error("loss is non-finite at the probe point");
  }

  GradCheckReport report;
  for (const auto& [name, analytic] : base.grads) {
    auto it = inputs.find(name);
    if (it == inputs.end()) {
      throw std::invalid_argument("gradient reported for unknown input '" + name + "'");
    }
    if (it->second.rows() != analytic.rows() || it->second.cols() != analytic.cols()) {
      throw std::invalid_argument("gradient shape mismatch for input '" + name + "'");
    }
    for (Eigen::Index r = 0; r < analytic.rows(); ++r) {
      for (Eigen::Index c = 0; c < analytic.cols(); ++c) {
        TensorMap probe = inputs;
        probe[name](r, c) = it->second(r, c) + step;
        const double fplus = loss_fn(probe).value;
        probe[name](r, c) = it->second(r, c) - step;
        const double fminus = loss_fn(probe).value;
        if (!std::isfinite(fplus) || !std::isfinite(fminus)) {
          throw std::domain_error("loss is non-finite near the probe point");
        }
        const double dplus = (fplus - base.value) / step;
        const double dminus = (base.value - fminus) / step;
        if (std::abs(dplus - dminus) >
            0.05 * std::max({1.0, std::abs(dplus), std::abs(dminus)})) {
          report.excluded.emplace_back(name, r, c);  // non-differentiable point
          continue;
        }
        const double numeric = (fplus - fminus) / (2.0 * step);
        const double rel =
            std::abs(analytic(r, c) - numeric) / std::max(1e-8, std::abs(numeric));
        if (rel > report.max_rel_error) {
          report.max_rel_error = rel;
          report.worst_input = name;
          report.worst_row = r;
          report.worst_col = c;
        }
      }
    }
  }
  return report;
}

}  // namespace osod
