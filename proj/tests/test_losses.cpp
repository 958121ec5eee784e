#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <set>
#include <stdexcept>

#include "osod/losses.hpp"

using namespace osod;

namespace {

// Raw-draw uniform in [a, b); engine output is identical across platforms.
struct Uniform {
  std::mt19937_64 rng;
  explicit Uniform(std::uint64_t seed) : rng(seed) {}
  double operator()(double a, double b) {
    return a + (b - a) * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
  }
  Eigen::MatrixXd matrix(Eigen::Index r, Eigen::Index c, double a, double b) {
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < c; ++j) m(i, j) = (*this)(a, b);
    return m;
  }
};

ClassEmbeddingTable identity_table(int k) {
  std::vector<std::string> names;
  for (int i = 0; i < k; ++i) names.push_back(std::string(1, static_cast<char>('a' + i)));
  return ClassEmbeddingTable(names, Eigen::MatrixXd::Identity(k, k));
}

}  // namespace

TEST_CASE("semantic clustering: hand value on an orthonormal table") {
  // Feature aligned with its own anchor, k = 3 orthonormal anchors:
  // cosines (1, 0, 0), cross-entropy log(e + 2) - 1.
  LabeledFeatures lf;
  lf.features = Eigen::MatrixXd::Zero(1, 3);
  lf.features(0, 0) = 1.0;
  lf.labels = {0};
  const auto out = semantic_clustering_loss(lf, identity_table(3));
  CHECK(out.value == doctest::Approx(std::log(std::exp(1.0) + 2.0) - 1.0).epsilon(1e-12));
  CHECK(out.value == doctest::Approx(0.5514447139320511).epsilon(1e-12));
  CHECK(out.grads.count("features") == 1);
  CHECK(out.grads.at("features").rows() == 1);
  CHECK(out.grads.at("features").cols() == 3);

  // Feature length must not matter: cosine similarity ignores scale.
  LabeledFeatures scaled = lf;
  scaled.features *= 7.5;
  CHECK(semantic_clustering_loss(scaled, identity_table(3)).value ==
        doctest::Approx(out.value).epsilon(1e-12));
}

TEST_CASE("semantic clustering: reductions, empties, and contract errors") {
  LabeledFeatures lf;
  lf.features = Eigen::MatrixXd::Identity(2, 3);
  lf.labels = {0, 1};
  const double mean = semantic_clustering_loss(lf, identity_table(3)).value;
  const double sum =
      semantic_clustering_loss(lf, identity_table(3), Reduction::kSum).value;
  CHECK(sum == doctest::Approx(2.0 * mean).epsilon(1e-12));

  LabeledFeatures empty;
  empty.features = Eigen::MatrixXd::Zero(0, 3);
  const auto z = semantic_clustering_loss(empty, identity_table(3));
  CHECK(z.value == 0.0);
  CHECK(z.grads.empty());

  LabeledFeatures bad = lf;
  bad.labels = {0};
  CHECK_THROWS_AS(semantic_clustering_loss(bad, identity_table(3)), std::invalid_argument);
  bad = lf;
  bad.labels = {0, 3};
  CHECK_THROWS_AS(semantic_clustering_loss(bad, identity_table(3)), std::invalid_argument);
  bad = lf;
  bad.features = Eigen::MatrixXd::Identity(2, 4);
  CHECK_THROWS_AS(semantic_clustering_loss(bad, identity_table(3)), std::invalid_argument);
  bad = lf;
  bad.features.row(1).setZero();
  CHECK_THROWS_AS(semantic_clustering_loss(bad, identity_table(3)), std::domain_error);
  bad = lf;
  bad.features(0, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(semantic_clustering_loss(bad, identity_table(3)), std::invalid_argument);
}

TEST_CASE("semantic clustering: per-sample floor over random inputs") {
  // With unit anchors every cosine lies in [-1, 1], so each sample's
  // cross-entropy is at least log(1 + (k - 1) exp(-2)).
  Uniform u(11);
  const int k = 4;
  const auto table = synth_embeddings({"a", "b", "c", "d"}, 6, 5);
  const double floor = std::log(1.0 + (k - 1) * std::exp(-2.0));
  for (int trial = 0; trial < 500; ++trial) {
    LabeledFeatures lf;
    lf.features = u.matrix(1, 6, -2.0, 2.0);
    if (lf.features.norm() == 0.0) continue;
    lf.labels = {static_cast<int>(u.rng() % k)};
    CHECK(semantic_clustering_loss(lf, table).value >= floor);
  }
}

TEST_CASE("sample_per_class: one row per label, ascending, deterministic") {
  LabeledFeatures lf;
  lf.features = Eigen::MatrixXd::Zero(6, 2);
  for (int i = 0; i < 6; ++i) lf.features(i, 0) = i;
  lf.labels = {2, 0, 2, 1, 0, 2};

  const auto picks = sample_per_class_indices(lf, 42);
  REQUIRE(picks.size() == 3);
  // Ascending label order, each pick drawn from that label's rows.
  const std::set<Eigen::Index> label0 = {1, 4};
  const std::set<Eigen::Index> label1 = {3};
  const std::set<Eigen::Index> label2 = {0, 2, 5};
  CHECK(label0.count(picks[0]) == 1);
  CHECK(label1.count(picks[1]) == 1);
  CHECK(label2.count(picks[2]) == 1);

  const auto again = sample_per_class_indices(lf, 42);
  CHECK(picks == again);

  const auto sampled = sample_per_class(lf, 42);
  REQUIRE(sampled.labels.size() == 3);
  CHECK(sampled.labels == std::vector<int>{0, 1, 2});
  for (int i = 0; i < 3; ++i) {
    CHECK(sampled.features(i, 0) == static_cast<double>(picks[static_cast<std::size_t>(i)]));
  }
}

TEST_CASE("class decorrelation: hand value on orthonormal rows") {
  // Two orthonormal rows at temperature 1: each row's softmax target gap is
  // log(e + 1) - 1.
  LabeledFeatures s;
  s.features = Eigen::MatrixXd::Identity(2, 4);
  s.labels = {0, 1};
  const auto out = class_decorrelation_loss(s);
  CHECK(out.value == doctest::Approx(std::log(std::exp(1.0) + 1.0) - 1.0).epsilon(1e-12));
  CHECK(out.value == doctest::Approx(0.3132616875182228).epsilon(1e-12));
  CHECK(out.grads.count("sampled_features") == 1);

  // Sharper temperature widens the same logit gap.
  const auto sharp = class_decorrelation_loss(s, 0.5);
  CHECK(sharp.value == doctest::Approx(std::log(std::exp(2.0) + 1.0) - 2.0).epsilon(1e-12));

  // Row scale is irrelevant; only directions enter.
  LabeledFeatures scaled = s;
  scaled.features.row(0) *= 3.0;
  CHECK(class_decorrelation_loss(scaled).value == doctest::Approx(out.value).epsilon(1e-12));
}

TEST_CASE("class decorrelation: contract errors, empty, per-row floor") {
  LabeledFeatures s;
  s.features = Eigen::MatrixXd::Identity(2, 4);
  s.labels = {0, 0};
  CHECK_THROWS_AS(class_decorrelation_loss(s), std::invalid_argument);
  s.labels = {0, 1};
  CHECK_THROWS_AS(class_decorrelation_loss(s, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(class_decorrelation_loss(s, -1.0), std::invalid_argument);
  s.features.row(1).setZero();
  CHECK_THROWS_AS(class_decorrelation_loss(s), std::domain_error);

  LabeledFeatures empty;
  empty.features = Eigen::MatrixXd::Zero(0, 4);
  CHECK(class_decorrelation_loss(empty).value == 0.0);

  // Off-diagonal cosines live in [-1, 1], so at temperature 1 every row's
  // term is at least log(1 + (s - 1) exp(-2)); the mean inherits the bound.
  Uniform u(7);
  const double floor = std::log(1.0 + 2.0 * std::exp(-2.0));
  for (int trial = 0; trial < 200; ++trial) {
    LabeledFeatures r;
    r.features = u.matrix(3, 5, -1.0, 1.0);
    bool ok = true;
    for (int i = 0; i < 3; ++i) ok = ok && r.features.row(i).norm() > 0.0;
    if (!ok) continue;
    r.labels = {0, 1, 2};
    CHECK(class_decorrelation_loss(r).value >= floor);
  }
}

TEST_CASE("centerness loss: L1 values, tie subgradient, errors") {
  Eigen::VectorXd logits(2), targets(2);
  logits << 0.2, 0.8;
  targets << 0.5, 0.3;
  const auto mean = centerness_loss(logits, targets);
  CHECK(mean.value == doctest::Approx(0.4).epsilon(1e-12));
  const auto sum = centerness_loss(logits, targets, Reduction::kSum);
  CHECK(sum.value == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(mean.grads.at("centerness_logits")(0, 0) == doctest::Approx(-0.5));
  CHECK(mean.grads.at("centerness_logits")(1, 0) == doctest::Approx(0.5));

  Eigen::VectorXd tie(1), tie_t(1);
  tie << 0.7;
  tie_t << 0.7;
  const auto at_tie = centerness_loss(tie, tie_t);
  CHECK(at_tie.value == 0.0);
  CHECK(at_tie.grads.at("centerness_logits")(0, 0) == 0.0);

  Eigen::VectorXd short_t(1);
  short_t << 0.5;
  CHECK_THROWS_AS(centerness_loss(logits, short_t), std::invalid_argument);
  Eigen::VectorXd nan_l(2);
  nan_l << 0.1, std::nan("");
  CHECK_THROWS_AS(centerness_loss(nan_l, targets), std::invalid_argument);
  CHECK(centerness_loss(Eigen::VectorXd(0), Eigen::VectorXd(0)).value == 0.0);
}

TEST_CASE("objectness loss: hand values and saturation") {
  Eigen::VectorXd zero(1);
  zero << 0.0;
  CHECK(objectness_loss(zero, {true}).value == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(objectness_loss(zero, {false}).value ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // Confidently right is nearly free; confidently wrong costs the logit.
  Eigen::VectorXd sat(1);
  sat << 30.0;
  CHECK(objectness_loss(sat, {true}).value < 1e-12);
  CHECK(objectness_loss(sat, {false}).value == doctest::Approx(30.0).epsilon(1e-9));

  Eigen::VectorXd two(2);
  two << 1.0, -1.0;
  const double per = std::log1p(std::exp(-1.0));
  CHECK(objectness_loss(two, {true, false}).value == doctest::Approx(per).epsilon(1e-12));
  CHECK(objectness_loss(two, {true, false}, Reduction::kSum).value ==
        doctest::Approx(2.0 * per).epsilon(1e-12));

  CHECK_THROWS_AS(objectness_loss(two, {true}), std::invalid_argument);
  Eigen::VectorXd inf(1);
  inf << std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(objectness_loss(inf, {true}), std::invalid_argument);
  CHECK(objectness_loss(Eigen::VectorXd(0), {}).value == 0.0);
}

TEST_CASE("object focus: all five combiners on fixed constituents") {
  DifferentiableScalar lc;
  lc.value = 0.04;
  lc.grads.emplace("centerness_logits", Eigen::MatrixXd::Constant(1, 1, 0.7));
  DifferentiableScalar lobj;
  lobj.value = 0.09;
  lobj.grads.emplace("objectness_logits", Eigen::MatrixXd::Constant(1, 1, -0.2));

  const auto gm = object_focus_loss(lc, lobj, Combiner::kGeometricMean, 1e-12);
  CHECK(gm.value == doctest::Approx(0.06).epsilon(1e-9));
  // Chain rule through sqrt((a+eps)(b+eps)).
  const double a = 0.04 + 1e-12, b = 0.09 + 1e-12, v = std::sqrt(a * b);
  CHECK(gm.grads.at("centerness_logits")(0, 0) ==
        doctest::Approx(b / (2.0 * v) * 0.7).epsilon(1e-9));
  CHECK(gm.grads.at("objectness_logits")(0, 0) ==
        doctest::Approx(a / (2.0 * v) * -0.2).epsilon(1e-9));

  const auto sum = object_focus_loss(lc, lobj, Combiner::kSum);
  CHECK(sum.value == doctest::Approx(0.13).epsilon(1e-12));
  CHECK(sum.grads.at("centerness_logits")(0, 0) == doctest::Approx(0.7));
  CHECK(sum.grads.at("objectness_logits")(0, 0) == doctest::Approx(-0.2));

  const auto prod = object_focus_loss(lc, lobj, Combiner::kProduct);
  CHECK(prod.value == doctest::Approx(0.0036).epsilon(1e-12));
  CHECK(prod.grads.at("centerness_logits")(0, 0) == doctest::Approx(0.09 * 0.7));

  const auto obj_only = object_focus_loss(lc, lobj, Combiner::kObjectnessOnly);
  CHECK(obj_only.value == doctest::Approx(0.09));
  CHECK(obj_only.grads.count("centerness_logits") == 0);
  CHECK(obj_only.grads.at("objectness_logits")(0, 0) == doctest::Approx(-0.2));

  const auto ctr_only = object_focus_loss(lc, lobj, Combiner::kCenternessOnly);
  CHECK(ctr_only.value == doctest::Approx(0.04));
  CHECK(ctr_only.grads.count("objectness_logits") == 0);

  DifferentiableScalar neg;
  neg.value = -0.1;
  CHECK_THROWS_AS(object_focus_loss(neg, lobj), std::domain_error);
  CHECK_THROWS_AS(object_focus_loss(lc, neg), std::domain_error);
  DifferentiableScalar nan;
  nan.value = std::nan("");
  CHECK_THROWS_AS(object_focus_loss(nan, lobj), std::invalid_argument);
  CHECK_THROWS_AS(object_focus_loss(lc, lobj, Combiner::kGeometricMean, -1.0),
                  std::invalid_argument);
}

TEST_CASE("object focus: zero sides stay finite, GM never beats the mean") {
  DifferentiableScalar zero_c;
  zero_c.grads.emplace("centerness_logits", Eigen::MatrixXd::Constant(1, 1, 1.0));
  DifferentiableScalar lobj;
  lobj.value = 0.5;
  lobj.grads.emplace("objectness_logits", Eigen::MatrixXd::Constant(1, 1, 1.0));

  const auto gm = object_focus_loss(zero_c, lobj, Combiner::kGeometricMean, 1e-12);
  CHECK(std::isfinite(gm.value));
  CHECK(std::isfinite(gm.grads.at("centerness_logits")(0, 0)));
  CHECK(std::isfinite(gm.grads.at("objectness_logits")(0, 0)));

  Uniform u(3);
  for (int trial = 0; trial < 1000; ++trial) {
    DifferentiableScalar x, y;
    x.value = u(0.0, 5.0);
    y.value = u(0.0, 5.0);
    const double gm_v = object_focus_loss(x, y, Combiner::kGeometricMean, 1e-12).value;
    CHECK(gm_v <= 0.5 * (x.value + y.value) + 1e-9);
  }
}

TEST_CASE("classification loss: hand values and validation") {
  Eigen::MatrixXd logits(1, 2);
  logits << 0.0, 0.0;
  CHECK(classification_loss(logits, {0}).value ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Eigen::MatrixXd three(2, 3);
  three << 1.0, 0.0, 0.0, 0.0, 1.0, 0.0;
  const double per = std::log(std::exp(1.0) + 2.0) - 1.0;
  const auto out = classification_loss(three, {0, 1});
  CHECK(out.value == doctest::Approx(per).epsilon(1e-12));
  // Softmax gradient rows sum to zero.
  CHECK(out.grads.at("class_logits").rowwise().sum().norm() ==
        doctest::Approx(0.0).epsilon(1e-12));

  CHECK_THROWS_AS(classification_loss(three, {0}), std::invalid_argument);
  CHECK_THROWS_AS(classification_loss(three, {0, 3}), std::invalid_argument);
  Eigen::MatrixXd one_col(1, 1);
  one_col << 0.0;
  CHECK_THROWS_AS(classification_loss(one_col, {0}), std::invalid_argument);
  CHECK(classification_loss(Eigen::MatrixXd(0, 3), {}).value == 0.0);
}

TEST_CASE("regression loss: smooth-L1 hand values") {
  Eigen::MatrixXd pred(1, 4), target(1, 4);
  pred << 0.5, 0.0, 0.0, 0.0;
  target.setZero();
  const auto small = regression_loss(pred, target);
  CHECK(small.value == doctest::Approx(0.03125).epsilon(1e-12));
  CHECK(small.grads.at("pred_deltas")(0, 0) == doctest::Approx(0.5 / 4.0).epsilon(1e-12));

  pred << 2.0, 0.0, 0.0, 0.0;  // beyond the transition: linear branch
  const auto large = regression_loss(pred, target);
  CHECK(large.value == doctest::Approx(1.5 / 4.0).epsilon(1e-12));
  CHECK(large.grads.at("pred_deltas")(0, 0) == doctest::Approx(1.0 / 4.0).epsilon(1e-12));

  Eigen::MatrixXd bad(1, 3);
  bad.setZero();
  CHECK_THROWS_AS(regression_loss(bad, bad), std::invalid_argument);
  Eigen::MatrixXd two_rows(2, 4);
  two_rows.setZero();
  CHECK_THROWS_AS(regression_loss(pred, two_rows), std::invalid_argument);
  CHECK(regression_loss(Eigen::MatrixXd(0, 4), Eigen::MatrixXd(0, 4)).value == 0.0);
}

TEST_CASE("total loss: weighted composition and zero-weight gradient pruning") {
  auto constant = [](double v, const std::string& key, double g) {
    DifferentiableScalar s;
    s.value = v;
    s.grads.emplace(key, Eigen::MatrixXd::Constant(1, 1, g));
    return s;
  };
  LossParts parts;
  parts.object_focus = constant(0.3, "objectness_logits", 1.0);
  parts.rpn_reg = constant(0.11, "rpn", 2.0);
  parts.semantic_clustering = constant(2.0, "features", 3.0);
  parts.class_decorrelation = constant(0.7, "sampled_features", 4.0);
  parts.regression = constant(0.13, "pred_deltas", 5.0);
  parts.classification = constant(0.17, "class_logits", 6.0);

  LossConfig cfg;  // alpha1 = alpha2 = 0.05, alpha3 = 1.0
  const auto total = total_loss(parts, std::nullopt, cfg);
  CHECK(total.value == doctest::Approx(1.0 * 0.3 + 0.11 + 0.05 * 2.0 + 0.05 * 0.7 +
                                       0.13 + 0.17)
                           .epsilon(1e-12));
  CHECK(total.grads.at("objectness_logits")(0, 0) == doctest::Approx(1.0));
  CHECK(total.grads.at("features")(0, 0) == doctest::Approx(0.05 * 3.0));
  CHECK(total.grads.at("sampled_features")(0, 0) == doctest::Approx(0.05 * 4.0));
  CHECK(total.grads.at("pred_deltas")(0, 0) == doctest::Approx(5.0));

  // The plug-in term enters unweighted.
  const auto upl = constant(0.5, "class_logits", 1.0);
  const auto with_upl = total_loss(parts, upl, cfg);
  CHECK(with_upl.value == doctest::Approx(total.value + 0.5).epsilon(1e-12));
  CHECK(with_upl.grads.at("class_logits")(0, 0) == doctest::Approx(6.0 + 1.0));

  // Exactly-zero weights are pruned from the gradient map, not just scaled.
  LossConfig off = cfg;
  off.alpha1 = 0.0;
  off.alpha2 = 0.0;
  off.alpha3 = 0.0;
  const auto trimmed = total_loss(parts, std::nullopt, off);
  CHECK(trimmed.value == doctest::Approx(0.11 + 0.13 + 0.17).epsilon(1e-12));
  CHECK(trimmed.grads.count("features") == 0);
  CHECK(trimmed.grads.count("sampled_features") == 0);
  CHECK(trimmed.grads.count("objectness_logits") == 0);
  CHECK(trimmed.grads.count("pred_deltas") == 1);

  LossConfig bad = cfg;
  bad.alpha1 = -0.5;
  CHECK_THROWS_AS(total_loss(parts, std::nullopt, bad), std::invalid_argument);
  bad = cfg;
  bad.decorrelation_temperature = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  const auto nothing = zero_unknown_probability_loss(Eigen::MatrixXd(2, 3), {0, 1});
  CHECK(nothing.value == 0.0);
  CHECK(nothing.grads.empty());
}

TEST_CASE("rename_grad moves exactly one key") {
  DifferentiableScalar s;
  s.value = 1.0;
  s.grads.emplace("features", Eigen::MatrixXd::Constant(2, 2, 3.0));
  const auto moved = rename_grad(s, "features", "sampled_features");
  CHECK(moved.grads.count("features") == 0);
  CHECK(moved.grads.at("sampled_features")(1, 1) == doctest::Approx(3.0));
  const auto same = rename_grad(moved, "sampled_features", "sampled_features");
  CHECK(same.grads.count("sampled_features") == 1);
  CHECK_THROWS_AS(rename_grad(moved, "missing", "x"), std::invalid_argument);
  DifferentiableScalar collide;
  collide.grads.emplace("a", Eigen::MatrixXd::Zero(1, 1));
  collide.grads.emplace("b", Eigen::MatrixXd::Zero(1, 1));
  CHECK_THROWS_AS(rename_grad(collide, "a", "b"), std::invalid_argument);
}

TEST_CASE("finite differences agree with every analytic gradient") {
  Uniform u(19);
  const auto table = synth_embeddings({"a", "b", "c", "d"}, 6, 23);

  TensorMap inputs;
  inputs["features"] = u.matrix(5, 6, 0.25, 1.75);
  inputs["sampled_features"] = u.matrix(3, 6, 0.25, 1.75);
  inputs["centerness_logits"] = u.matrix(6, 1, -1.5, 1.5);
  inputs["objectness_logits"] = u.matrix(6, 1, -2.0, 2.0);
  inputs["class_logits"] = u.matrix(5, 5, -2.0, 2.0);
  inputs["pred_deltas"] = u.matrix(4, 4, 0.1, 0.9);

  const std::vector<int> labels = {0, 1, 2, 3, 0};
  const std::vector<int> cd_labels = {0, 1, 2};
  const std::vector<bool> is_object = {true, false, true, true, false, true};
  Eigen::VectorXd ctr_targets(6);
  ctr_targets << 0.9, 0.1, 0.7, 0.4, 0.2, 0.55;
  const Eigen::MatrixXd delta_targets = u.matrix(4, 4, -0.9, -0.1);

  auto check_loss = [&](const char* name,
                        const std::function<DifferentiableScalar(const TensorMap&)>& fn) {
    INFO(name);
    const auto report = finite_difference_check(fn, inputs);
    CHECK(report.excluded.empty());
    CHECK(report.max_rel_error <= 1e-5);
  };

  check_loss("semantic_clustering", [&](const TensorMap& in) {
    return semantic_clustering_loss({in.at("features"), labels}, table);
  });
  check_loss("class_decorrelation", [&](const TensorMap& in) {
    return class_decorrelation_loss({in.at("sampled_features"), cd_labels}, 0.7);
  });
  check_loss("centerness", [&](const TensorMap& in) {
    return centerness_loss(in.at("centerness_logits").col(0), ctr_targets);
  });
  check_loss("objectness", [&](const TensorMap& in) {
    return objectness_loss(in.at("objectness_logits").col(0), is_object);
  });
  check_loss("classification", [&](const TensorMap& in) {
    return classification_loss(in.at("class_logits"), labels);
  });
  check_loss("regression", [&](const TensorMap& in) {
    return regression_loss(in.at("pred_deltas"), delta_targets);
  });
  for (Combiner comb : {Combiner::kGeometricMean, Combiner::kSum, Combiner::kProduct,
                        Combiner::kObjectnessOnly, Combiner::kCenternessOnly}) {
    check_loss("object_focus", [&](const TensorMap& in) {
      return object_focus_loss(
          centerness_loss(in.at("centerness_logits").col(0), ctr_targets),
          objectness_loss(in.at("objectness_logits").col(0), is_object), comb);
    });
  }
  check_loss("total", [&](const TensorMap& in) {
    LossConfig cfg;
    LossParts parts;
    parts.object_focus = object_focus_loss(
        centerness_loss(in.at("centerness_logits").col(0), ctr_targets),
        objectness_loss(in.at("objectness_logits").col(0), is_object), cfg.combiner,
        cfg.gm_eps);
    parts.semantic_clustering =
        semantic_clustering_loss({in.at("features"), labels}, table);
    parts.class_decorrelation = class_decorrelation_loss(
        {in.at("sampled_features"), cd_labels}, cfg.decorrelation_temperature);
    parts.regression = regression_loss(in.at("pred_deltas"), delta_targets);
    parts.classification = classification_loss(in.at("class_logits"), labels);
    return total_loss(parts, std::nullopt, cfg);
  });
}

TEST_CASE("finite_difference_check: kink exclusion and failure modes") {
  // An exact L1 tie is non-differentiable; the checker must skip that
  // coordinate instead of reporting a bogus mismatch.
  Eigen::VectorXd targets(2);
  targets << 0.5, 0.2;
  TensorMap inputs;
  Eigen::MatrixXd logits(2, 1);
  logits << 0.5, 0.8;  // first coordinate sits exactly on the tie
  inputs["centerness_logits"] = logits;
  const auto report = finite_difference_check(
      [&](const TensorMap& in) {
        return centerness_loss(in.at("centerness_logits").col(0), targets);
      },
      inputs);
  REQUIRE(report.excluded.size() == 1);
  CHECK(std::get<0>(report.excluded[0]) == "centerness_logits");
  CHECK(std::get<1>(report.excluded[0]) == 0);
  CHECK(report.max_rel_error <= 1e-5);

  auto flat = [](const TensorMap&) {
    DifferentiableScalar s;
    s.value = std::numeric_limits<double>::quiet_NaN();
    return s;
  };
  CHECK_THROWS_AS(finite_difference_check(flat, inputs), std::domain_error);

  auto stray = [](const TensorMap&) {
    DifferentiableScalar s;
    s.grads.emplace("ghost", Eigen::MatrixXd::Zero(1, 1));
    return s;
  };
  CHECK_THROWS_AS(finite_difference_check(stray, inputs), std::invalid_argument);

  CHECK_THROWS_AS(finite_difference_check(
                      [&](const TensorMap& in) {
                        return centerness_loss(in.at("centerness_logits").col(0), targets);
                      },
                      inputs, 0.0),
                  std::invalid_argument);
}
