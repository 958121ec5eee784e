#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "osod/harness.hpp"
#include "osod/io.hpp"

using namespace osod;

namespace {

DatasetSpec tiny_spec() {
  DatasetSpec s;
  s.known_classes = {"cat", "dog"};
  s.unknown_classes = {"owl"};
  s.feature_dim = 5;
  s.objects_min = 1;
  s.objects_max = 2;
  s.images_train = 3;
  s.images_test = 2;
  s.wilderness_ratio = 1.0;
  s.proximity_pairs = {{"owl", "cat", 0.6}};
  s.seed = 11;
  return s;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

TEST_CASE("annotations: save/load round-trip with joint name resolution") {
  // Names are resolved over both streams into one sorted table, so labels
  // written against a sorted name list survive the trip unchanged.
  const std::vector<std::string> names = {"cat", "dog"};
  std::vector<Detection> dets;
  Detection d0;
  d0.image_id = 2;
  d0.label = 1;
  d0.score = 0.8125;
  d0.box = {1.5, 2.25, 10.0, 12.0};
  d0.class_probs = {0.125, 0.625, 0.25};
  dets.push_back(d0);
  Detection d1;
  d1.image_id = 0;
  d1.label = kUnknownLabel;
  d1.score = 0.0625;
  d1.box = {0.0, 0.0, 3.0, 3.0};
  dets.push_back(d1);

  std::vector<GroundTruthObject> gts;
  gts.push_back({2, 0, {1.0, 2.0, 9.0, 11.0}});
  gts.push_back({0, kUnknownLabel, {0.5, 0.5, 2.5, 2.5}});

  std::ostringstream ds, gs;
  save_detections(dets, names, ds);
  save_ground_truth(gts, names, gs);

  std::istringstream dsi(ds.str()), gsi(gs.str());
  const AnnotationSet set = load_annotations(dsi, gsi);
  CHECK(set.class_names == names);
  REQUIRE(set.dets.size() == 2);
  CHECK(set.dets[0].image_id == 2);
  CHECK(set.dets[0].label == 1);
  CHECK(set.dets[0].score == 0.8125);  // shortest round-trip form is exact
  CHECK(set.dets[0].box.x1 == 1.5);
  CHECK(set.dets[0].class_probs == std::vector<double>{0.125, 0.625, 0.25});
  CHECK(set.dets[1].label == kUnknownLabel);
  CHECK(set.dets[1].class_probs.empty());
  REQUIRE(set.gts.size() == 2);
  CHECK(set.gts[0].label == 0);
  CHECK(set.gts[1].label == kUnknownLabel);

  // Either record type is accepted in either stream.
  std::istringstream mixed_d("G 1 cat 0 0 4 4\n"), mixed_g("D 1 dog 0.5 0 0 4 4\n");
  const AnnotationSet crossed = load_annotations(mixed_d, mixed_g);
  REQUIRE(crossed.dets.size() == 1);
  REQUIRE(crossed.gts.size() == 1);
  CHECK(crossed.gts[0].label == 0);  // "cat" sorts first
  CHECK(crossed.dets[0].label == 1);

  // Names seen only in one stream still shape the joint table.
  std::istringstream only_d("D 0 dog 0.5 0 0 4 4\n"), only_g("G 0 cat 0 0 4 4\n");
  const AnnotationSet joint = load_annotations(only_d, only_g);
  CHECK(joint.class_names == std::vector<std::string>{"cat", "dog"});
  CHECK(joint.dets[0].label == 1);
  CHECK(joint.gts[0].label == 0);
}

TEST_CASE("annotations: malformed input names the stream and line") {
  auto load = [](const std::string& det_text, const std::string& gt_text) {
    std::istringstream d(det_text), g(gt_text);
    return load_annotations(d, g);
  };
  CHECK_THROWS_WITH_AS(load("D 0 cat\n", ""), doctest::Contains("detections line 1"),
                       std::runtime_error);
  CHECK_THROWS_WITH_AS(load("", "G 0 cat 0 0 4 4\nG 0 cat 0 0 bogus 4\n"),
                       doctest::Contains("ground truth line 2"), std::runtime_error);
  CHECK_THROWS_WITH_AS(load("X 0 cat 0.5 0 0 4 4\n", ""),
                       doctest::Contains("detections line 1"), std::runtime_error);
  // Blank lines are not records and do not advance the error line count wrongly.
  CHECK_NOTHROW(load("\n\nD 0 cat 0.5 0 0 4 4\n", ""));
}

TEST_CASE("dataset checkpoint: bit-exact round-trip") {
  const Dataset ds = generate_dataset(tiny_spec());
  std::ostringstream first;
  save_dataset(ds, first);

  std::istringstream in(first.str());
  const Dataset loaded = load_dataset(in);
  std::ostringstream second;
  save_dataset(loaded, second);
  CHECK(first.str() == second.str());

  CHECK(loaded.spec.known_classes == ds.spec.known_classes);
  CHECK(loaded.spec.seed == ds.spec.seed);
  CHECK(loaded.embeddings.size() == ds.embeddings.size());
  CHECK((loaded.embeddings.vectors() - ds.embeddings.vectors()).norm() == 0.0);
  REQUIRE(loaded.train.size() == ds.train.size());
  REQUIRE(loaded.test.size() == ds.test.size());
  const SyntheticScene& a = ds.train[0];
  const SyntheticScene& b = loaded.train[0];
  REQUIRE(a.proposals.size() == b.proposals.size());
  CHECK((a.proposals[0].feature - b.proposals[0].feature).norm() == 0.0);
  CHECK(a.objects[0].gt.label == b.objects[0].gt.label);
  CHECK((a.objects[0].latent - b.objects[0].latent).norm() == 0.0);

  std::istringstream bad("not a dataset\n");
  CHECK_THROWS_WITH_AS(load_dataset(bad), doctest::Contains("line 1"), std::runtime_error);
}

TEST_CASE("model checkpoint: bit-exact round-trip") {
  ToyDetector m = init_detector(5, 5, 2);
  m.projector_weight(0, 1) = -0.123456789123456789;
  m.class_bias << 0.1, -0.25, 1e-17;
  m.reg_weight(4, 3) = 3.5e300;

  std::ostringstream out;
  save_model(m, out);
  std::istringstream in(out.str());
  const ToyDetector loaded = load_model(in);
  CHECK((loaded.projector_weight - m.projector_weight).norm() == 0.0);
  CHECK((loaded.class_bias - m.class_bias).norm() == 0.0);
  CHECK(loaded.reg_weight(4, 3) == 3.5e300);

  std::ostringstream again;
  save_model(loaded, again);
  CHECK(out.str() == again.str());

  std::istringstream bad("model v2\n");
  CHECK_THROWS_WITH_AS(load_model(bad), doctest::Contains("line 1"), std::runtime_error);
}

TEST_CASE("report emission: exact layout and round-trip") {
  EvalReport r;
  r.wi = 9.55;
  r.aose = 9267;
  r.map_k = 58.52;
  r.ap_u = 18.45;
  r.hmp = 28.05;
  r.per_class_ap[0] = 58.52;
  r.unknown_gt_present = true;

  std::ostringstream out;
  const std::size_t bytes = emit_report(r, {"horse"}, out);
  CHECK(out.str() ==
        "WI AOSE mAP_k AP_u HMP\n"
        "9.55 9267 58.52 18.45 28.05\n"
        "AP horse 58.52\n"
        "unknown_gt present\n");
  CHECK(bytes == out.str().size());

  std::istringstream in(out.str());
  const ParsedReport parsed = parse_report(in);
  CHECK(parsed.report.wi == 9.55);
  CHECK(parsed.report.aose == 9267);
  CHECK(parsed.report.map_k == 58.52);
  CHECK(parsed.report.ap_u == 18.45);
  CHECK(parsed.report.hmp == 28.05);
  CHECK(parsed.report.unknown_gt_present);
  CHECK(parsed.class_names == std::vector<std::string>{"horse"});
  REQUIRE(parsed.report.per_class_ap.size() == 1);
  CHECK(parsed.report.per_class_ap.at(0) == 58.52);

  // All-zero report, nameless overload, absent unknowns.
  std::ostringstream zero;
  emit_report(EvalReport{}, zero);
  CHECK(zero.str() ==
        "WI AOSE mAP_k AP_u HMP\n"
        "0.00 0 0.00 0.00 0.00\n"
        "unknown_gt absent\n");

  // Class indices beyond the name table print as bare indices; negatives too.
  EvalReport sparse;
  sparse.per_class_ap[7] = 12.5;
  sparse.wi = -3.21;
  std::ostringstream sp;
  emit_report(sparse, {"only"}, sp);
  CHECK(sp.str() ==
        "WI AOSE mAP_k AP_u HMP\n"
        "-3.21 0 0.00 0.00 0.00\n"
        "AP 7 12.50\n"
        "unknown_gt absent\n");

  std::istringstream garbage("nope\n");
  CHECK_THROWS_WITH_AS(parse_report(garbage), doctest::Contains("line 1"),
                       std::runtime_error);
  std::istringstream short_row("WI AOSE mAP_k AP_u HMP\n1.0 2 3.0\n");
  CHECK_THROWS_WITH_AS(parse_report(short_row), doctest::Contains("line 2"),
                       std::runtime_error);
  std::istringstream bad_flag(
      "WI AOSE mAP_k AP_u HMP\n0.00 0 0.00 0.00 0.00\nunknown_gt maybe\n");
  CHECK_THROWS_WITH_AS(parse_report(bad_flag), doctest::Contains("line 3"),
                       std::runtime_error);
}

TEST_CASE("ablation table: exact layout, switch recovery, round-trip") {
  AblationRow a;
  a.name = "sc+of";
  a.enable_sc = true;
  a.enable_of = true;
  a.report.wi = 1.25;
  a.report.aose = 14;
  a.report.map_k = 45.5;
  a.report.ap_u = 3.75;
  a.report.hmp = 6.93;
  AblationRow b;
  b.name = "none";
  b.report.map_k = 58.0;

  std::ostringstream out;
  const std::size_t bytes = emit_ablation({a, b}, out);
  CHECK(out.str() ==
        "case WI AOSE mAP_k AP_u HMP\n"
        "sc+of 1.25 14 45.50 3.75 6.93\n"
        "none 0.00 0 58.00 0.00 0.00\n");
  CHECK(bytes == out.str().size());

  std::istringstream in(out.str());
  const auto rows = parse_ablation(in);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].name == "sc+of");
  CHECK(rows[0].enable_sc);
  CHECK_FALSE(rows[0].enable_cd);
  CHECK(rows[0].enable_of);
  CHECK(rows[0].report.aose == 14);
  CHECK(rows[0].report.ap_u == 3.75);
  CHECK(rows[1].name == "none");
  CHECK_FALSE(rows[1].enable_sc);
  CHECK_FALSE(rows[1].enable_cd);
  CHECK_FALSE(rows[1].enable_of);
  CHECK(rows[1].report.map_k == 58.0);

  std::istringstream bad("case WI AOSE\n");
  CHECK_THROWS_WITH_AS(parse_ablation(bad), doctest::Contains("line 1"),
                       std::runtime_error);
  std::istringstream short_row("case WI AOSE mAP_k AP_u HMP\nsc 1.0 2\n");
  CHECK_THROWS_WITH_AS(parse_ablation(short_row), doctest::Contains("line 2"),
                       std::runtime_error);
}

TEST_CASE("gradient-check table: exact layout and round-trip") {
  std::ostringstream out;
  const std::size_t bytes = emit_gradcheck(
      {{"semantic_clustering", 8.3e-07, true}, {"total", 2e-3, false}}, out);
  CHECK(out.str() ==
        "loss max_rel_error status\n"
        "semantic_clustering 8.300e-07 ok\n"
        "total 2.000e-03 FAIL\n");
  CHECK(bytes == out.str().size());

  std::istringstream in(out.str());
  const auto lines = parse_gradcheck(in);
  REQUIRE(lines.size() == 2);
  CHECK(lines[0].name == "semantic_clustering");
  CHECK(lines[0].ok);
  CHECK(lines[0].max_rel_error == doctest::Approx(8.3e-07).epsilon(1e-12));
  CHECK(lines[1].name == "total");
  CHECK_FALSE(lines[1].ok);

  std::istringstream bad_status("loss max_rel_error status\nx 1.0e-05 meh\n");
  CHECK_THROWS_WITH_AS(parse_gradcheck(bad_status), doctest::Contains("line 2"),
                       std::runtime_error);
}

TEST_CASE("write_file_atomic replaces content without leftovers") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "osod_io_test";
  fs::create_directories(dir);
  const fs::path target = dir / "report.txt";

  write_file_atomic(target, "first\n");
  CHECK(read_file(target) == "first\n");
  write_file_atomic(target, "second version\n");
  CHECK(read_file(target) == "second version\n");
  CHECK_FALSE(fs::exists(target.string() + ".tmp"));

  // Unwritable destination surfaces as an error, not silent data loss.
  CHECK_THROWS_AS(write_file_atomic(dir / "missing_subdir" / "x.txt", "data"),
                  std::runtime_error);
  fs::remove_all(dir);
}
