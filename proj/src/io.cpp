#include "osod/io.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace osod {

namespace {

constexpr const char* kUnknownName = "__unknown__";

// Shortest decimal form that parses back to the same double.
void append_number(std::string& out, double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string sci3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3e", v);
  return buf;
}

// Skips blank lines, strips trailing CR, and tracks line numbers so parse
// errors can name their location.
class LineReader {
 public:
  explicit LineReader(std::istream& in) : in_(in) {}

  bool next(std::string& line) {
    while (std::getline(in_, line)) {
      ++line_no_;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      return true;
    }
    return false;
  }

  std::string require(const char* what) {
    std::string line;
    if (!next(line)) {
      fail(std::string("unexpected end of input, expected ") + what);
    }
    return line;
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw std::runtime_error("line " + std::to_string(line_no_) + ": " + msg);
  }

 private:
  std::istream& in_;
  int line_no_ = 0;
};

// Whitespace tokenizer over a single line with typed extraction.
class Tokens {
 public:
  Tokens(const std::string& line, const LineReader& reader)
      : stream_(line), reader_(reader) {}

  std::string word(const char* what) {
    std::string t;
    if (!(stream_ >> t)) reader_.fail(std::string("missing ") + what);
    return t;
  }

  double real(const char* what) {
    const std::string t = word(what);
    std::size_t pos = 0;
    double v = 0.0;
    try {
      v = std::stod(t, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != t.size()) {
      reader_.fail(std::string("invalid ") + what + ": '" + t + "'");
    }
    return v;
  }

  long long integer(const char* what) {
    const std::string t = word(what);
    std::size_t pos = 0;
    long long v = 0;
    try {
      v = std::stoll(t, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != t.size() || t.empty()) {
      reader_.fail(std::string("invalid ") + what + ": '" + t + "'");
    }
    return v;
  }

  std::uint64_t unsigned64(const char* what) {
    const std::string t = word(what);
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(t, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != t.size() || t.empty() || t.front() == '-') {
      reader_.fail(std::string("invalid ") + what + ": '" + t + "'");
    }
    return v;
  }

  bool more() {
    stream_ >> std::ws;
    return stream_.good() && stream_.peek() != EOF;
  }

  void expect_end(const char* what) {
    if (more()) reader_.fail(std::string("trailing tokens after ") + what);
  }

 private:
  std::istringstream stream_;
  const LineReader& reader_;
};

std::string label_name(int label, const std::vector<std::string>& class_names) {
  if (label == kUnknownLabel) return kUnknownName;
  if (label < 0 || label >= static_cast<int>(class_names.size())) {
    throw std::invalid_argument("label has no class name: " + std::to_string(label));
  }
  return class_names[static_cast<std::size_t>(label)];
}

Tokens expect_key(LineReader& reader, std::string& line, const char* key) {
  line = reader.require(key);
  Tokens t(line, reader);
  const std::string got = t.word("keyword");
  if (got != key) {
    reader.fail(std::string("expected '") + key + "', got '" + got + "'");
  }
  return t;
}

void append_box(std::string& out, const Box& b) {
  out += ' ';
  append_number(out, b.x1);
  out += ' ';
  append_number(out, b.y1);
  out += ' ';
  append_number(out, b.x2);
  out += ' ';
  append_number(out, b.y2);
}

Box read_box(Tokens& t) {
  const double x1 = t.real("x1");
  const double y1 = t.real("y1");
  const double x2 = t.real("x2");
  const double y2 = t.real("y2");
  return {x1, y1, x2, y2};
}

struct RawDetection {
  int image_id = 0;
  std::string label;
  double score = 0.0;
  Box box;
  std::vector<double> probs;
};

struct RawGroundTruth {
  int image_id = 0;
  std::string label;
  Box box;
};

void parse_annotation_stream(std::istream& in, std::vector<RawDetection>& dets,
                             std::vector<RawGroundTruth>& gts) {
  LineReader reader(in);
  std::string line;
  while (reader.next(line)) {
    Tokens t(line, reader);
    const std::string tag = t.word("record tag");
    if (tag == "D") {
      RawDetection d;
      d.image_id = static_cast<int>(t.integer("image id"));
      d.label = t.word("label");
      d.score = t.real("score");
      d.box = read_box(t);
      while (t.more()) d.probs.push_back(t.real("class probability"));
      dets.push_back(std::move(d));
    } else if (tag == "G") {
      RawGroundTruth g;
      g.image_id = static_cast<int>(t.integer("image id"));
      g.label = t.word("label");
      g.box = read_box(t);
      t.expect_end("ground-truth record");
      gts.push_back(std::move(g));
    } else {
      reader.fail("unknown record tag '" + tag + "'");
    }
  }
}

Eigen::VectorXd read_vector(Tokens& t, Eigen::Index n, const char* what) {
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = t.real(what);
  return v;
}

void append_vector(std::string& out, const Eigen::VectorXd& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    out += ' ';
    append_number(out, v(i));
  }
}

void save_scene(std::string& out, const SyntheticScene& scene,
                const std::vector<std::string>& known_names) {
  out += "scene " + std::to_string(scene.image_id) + ' ' +
         std::to_string(scene.objects.size()) + ' ' +
         std::to_string(scene.proposals.size()) + '\n';
  for (const SceneObject& obj : scene.objects) {
    out += "O " + label_name(obj.gt.label, known_names) + ' ' +
           std::to_string(obj.anchor_index);
    append_box(out, obj.gt.box);
    append_vector(out, obj.latent);
    out += '\n';
  }
  for (const Proposal& p : scene.proposals) {
    out += "P " + std::to_string(p.gt_index) + ' ' + (p.is_object ? "1" : "0");
    append_box(out, p.box);
    append_vector(out, p.feature);
    out += '\n';
  }
}

SyntheticScene load_scene(LineReader& reader, const DatasetSpec& spec) {
  std::string line;
  Tokens header = expect_key(reader, line, "scene");
  SyntheticScene scene;
  scene.image_id = static_cast<int>(header.integer("image id"));
  const long long n_objects = header.integer("object count");
  const long long n_proposals = header.integer("proposal count");
  header.expect_end("scene header");

  for (long long i = 0; i < n_objects; ++i) {
    const std::string obj_line = reader.require("object record");
    Tokens t(obj_line, reader);
    if (t.word("record tag") != "O") reader.fail("expected object record");
    const std::string name = t.word("label");
    SceneObject obj;
    if (name == kUnknownName) {
      obj.gt.label = kUnknownLabel;
    } else {
      const auto it =
          std::find(spec.known_classes.begin(), spec.known_classes.end(), name);
      if (it == spec.known_classes.end()) {
        reader.fail("object label '" + name + "' is not a known class");
      }
      obj.gt.label = static_cast<int>(it - spec.known_classes.begin());
    }
    obj.anchor_index = static_cast<int>(t.integer("anchor index"));
    obj.gt.image_id = scene.image_id;
    obj.gt.box = read_box(t);
    obj.latent = read_vector(t, spec.feature_dim, "latent component");
    t.expect_end("object record");
    scene.objects.push_back(std::move(obj));
  }
  for (long long i = 0; i < n_proposals; ++i) {
    const std::string prop_line = reader.require("proposal record");
    Tokens t(prop_line, reader);
    if (t.word("record tag") != "P") reader.fail("expected proposal record");
    Proposal p;
    p.gt_index = static_cast<int>(t.integer("gt index"));
    p.is_object = t.integer("is_object flag") != 0;
    p.box = read_box(t);
    p.feature = read_vector(t, spec.feature_dim, "feature component");
    t.expect_end("proposal record");
    scene.proposals.push_back(std::move(p));
  }
  return scene;
}

void append_matrix_param(std::string& out, const char* name, const Eigen::MatrixXd& m) {
  out += "param ";
  out += name;
  out += ' ' + std::to_string(m.rows()) + ' ' + std::to_string(m.cols()) + '\n';
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c > 0) out += ' ';
      append_number(out, m(r, c));
    }
    out += '\n';
  }
}

Eigen::MatrixXd read_matrix_param(LineReader& reader, const char* name) {
  std::string line;
  Tokens t = expect_key(reader, line, "param");
  const std::string got = t.word("parameter name");
  if (got != name) {
    reader.fail(std::string("expected parameter '") + name + "', got '" + got + "'");
  }
  const long long rows = t.integer("row count");
  const long long cols = t.integer("column count");
  if (rows < 0 || cols < 1) reader.fail("invalid parameter shape");
  t.expect_end("parameter header");
  Eigen::MatrixXd m(rows, cols);
  for (long long r = 0; r < rows; ++r) {
    const std::string row_line = reader.require("parameter row");
    Tokens rt(row_line, reader);
    for (long long c = 0; c < cols; ++c) {
      m(r, c) = rt.real("parameter value");
    }
    rt.expect_end("parameter row");
  }
  return m;
}

}  // namespace

void save_detections(const std::vector<Detection>& dets,
                     const std::vector<std::string>& class_names, std::ostream& out) {
  std::string buf;
  for (const Detection& d : dets) {
    buf += "D " + std::to_string(d.image_id) + ' ' + label_name(d.label, class_names) + ' ';
    append_number(buf, d.score);
    append_box(buf, d.box);
    for (double p : d.class_probs) {
      buf += ' ';
      append_number(buf, p);
    }
    buf += '\n';
  }
  out << buf;
}

void save_ground_truth(const std::vector<GroundTruthObject>& gts,
                       const std::vector<std::string>& class_names, std::ostream& out) {
  std::string buf;
  for (const GroundTruthObject& g : gts) {
    buf += "G " + std::to_string(g.image_id) + ' ' + label_name(g.label, class_names);
    append_box(buf, g.box);
    buf += '\n';
  }
  out << buf;
}

AnnotationSet load_annotations(std::istream& dets_in, std::istream& gts_in) {
  std::vector<RawDetection> raw_dets;
  std::vector<RawGroundTruth> raw_gts;
  try {
    parse_annotation_stream(dets_in, raw_dets, raw_gts);
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(std::string("detections ") + e.what());
  }
  try {
    parse_annotation_stream(gts_in, raw_dets, raw_gts);
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(std::string("ground truth ") + e.what());
  }

  std::set<std::string> names;
  for (const RawDetection& d : raw_dets) {
    if (d.label != kUnknownName) names.insert(d.label);
  }
  for (const RawGroundTruth& g : raw_gts) {
    if (g.label != kUnknownName) names.insert(g.label);
  }

  AnnotationSet out;
  out.class_names.assign(names.begin(), names.end());
  std::map<std::string, int> index;
  for (int i = 0; i < static_cast<int>(out.class_names.size()); ++i) {
    index[out.class_names[static_cast<std::size_t>(i)]] = i;
  }
  auto to_label = [&index](const std::string& name) {
    return name == kUnknownName ? kUnknownLabel : index.at(name);
  };

  out.dets.reserve(raw_dets.size());
  for (RawDetection& d : raw_dets) {
    Detection det;
    det.image_id = d.image_id;
    det.label = to_label(d.label);
    det.score = d.score;
    det.box = d.box;
    det.class_probs = std::move(d.probs);
    out.dets.push_back(std::move(det));
  }
  out.gts.reserve(raw_gts.size());
  for (const RawGroundTruth& g : raw_gts) {
    out.gts.push_back({g.image_id, to_label(g.label), g.box});
  }
  return out;
}

void save_dataset(const Dataset& ds, std::ostream& out) {
  const DatasetSpec& s = ds.spec;
  std::string buf = "dataset v1\n";
  buf += "known " + std::to_string(s.known_classes.size());
  for (const std::string& n : s.known_classes) buf += ' ' + n;
  buf += "\nunknown " + std::to_string(s.unknown_classes.size());
  for (const std::string& n : s.unknown_classes) buf += ' ' + n;
  buf += "\nfeature_dim " + std::to_string(s.feature_dim);
  buf += "\nobjects_min " + std::to_string(s.objects_min);
  buf += "\nobjects_max " + std::to_string(s.objects_max);
  buf += "\nimages_train " + std::to_string(s.images_train);
  buf += "\nimages_test " + std::to_string(s.images_test);
  buf += "\nwilderness_ratio ";
  append_number(buf, s.wilderness_ratio);
  buf += "\nnoise_sigma ";
  append_number(buf, s.noise_sigma);
  buf += "\nseed " + std::to_string(s.seed);
  buf += "\npairs " + std::to_string(s.proximity_pairs.size()) + '\n';
  for (const ProximityPair& p : s.proximity_pairs) {
    buf += "pair " + p.unknown + ' ' + p.known + ' ';
    append_number(buf, p.cosine);
    buf += '\n';
  }
  buf += "embeddings " + std::to_string(ds.embeddings.size()) + ' ' +
         std::to_string(ds.embeddings.dim()) + '\n';
  for (int j = 0; j < ds.embeddings.size(); ++j) {
    buf += ds.embeddings.name(j);
    append_vector(buf, ds.embeddings.vectors().row(j).transpose());
    buf += '\n';
  }
  buf += "train " + std::to_string(ds.train.size()) + '\n';
  for (const SyntheticScene& scene : ds.train) save_scene(buf, scene, s.known_classes);
  buf += "test " + std::to_string(ds.test.size()) + '\n';
  for (const SyntheticScene& scene : ds.test) save_scene(buf, scene, s.known_classes);
  buf += "end\n";
  out << buf;
}

Dataset load_dataset(std::istream& in) {
  LineReader reader(in);
  const std::string header = reader.require("dataset header");
  if (header != "dataset v1") {
    reader.fail("expected 'dataset v1' header, got '" + header + "'");
  }

  DatasetSpec spec;
  spec.known_classes.clear();
  spec.unknown_classes.clear();
  spec.proximity_pairs.clear();
  std::string line;
  {
    Tokens t = expect_key(reader, line, "known");
    const long long n = t.integer("known class count");
    for (long long i = 0; i < n; ++i) spec.known_classes.push_back(t.word("class name"));
    t.expect_end("known class list");
  }
  {
    Tokens t = expect_key(reader, line, "unknown");
    const long long n = t.integer("unknown class count");
    for (long long i = 0; i < n; ++i) {
      spec.unknown_classes.push_back(t.word("class name"));
    }
    t.expect_end("unknown class list");
  }
  spec.feature_dim = static_cast<int>(expect_key(reader, line, "feature_dim").integer("feature_dim"));
  spec.objects_min = static_cast<int>(expect_key(reader, line, "objects_min").integer("objects_min"));
  spec.objects_max = static_cast<int>(expect_key(reader, line, "objects_max").integer("objects_max"));
  spec.images_train = static_cast<int>(expect_key(reader, line, "images_train").integer("images_train"));
  spec.images_test = static_cast<int>(expect_key(reader, line, "images_test").integer("images_test"));
  spec.wilderness_ratio = expect_key(reader, line, "wilderness_ratio").real("wilderness_ratio");
  spec.noise_sigma = expect_key(reader, line, "noise_sigma").real("noise_sigma");
  spec.seed = expect_key(reader, line, "seed").unsigned64("seed");
  {
    const long long n = expect_key(reader, line, "pairs").integer("pair count");
    for (long long i = 0; i < n; ++i) {
      Tokens t = expect_key(reader, line, "pair");
      ProximityPair p;
      p.unknown = t.word("unknown class");
      p.known = t.word("known class");
      p.cosine = t.real("cosine");
      t.expect_end("proximity pair");
      spec.proximity_pairs.push_back(std::move(p));
    }
  }
  spec.validate();

  Tokens emb_header = expect_key(reader, line, "embeddings");
  const long long emb_count = emb_header.integer("embedding count");
  const long long emb_dim = emb_header.integer("embedding dimension");
  emb_header.expect_end("embeddings header");
  if (emb_count != static_cast<long long>(spec.known_classes.size() +
                                          spec.unknown_classes.size()) ||
      emb_dim != spec.feature_dim) {
    reader.fail("embedding table shape does not match the spec");
  }
  std::vector<std::string> emb_names;
  Eigen::MatrixXd emb(emb_count, emb_dim);
  for (long long i = 0; i < emb_count; ++i) {
    const std::string row_line = reader.require("embedding row");
    Tokens t(row_line, reader);
    emb_names.push_back(t.word("class name"));
    for (long long c = 0; c < emb_dim; ++c) emb(i, c) = t.real("embedding component");
    t.expect_end("embedding row");
  }
  std::vector<std::string> expected_names = spec.known_classes;
  expected_names.insert(expected_names.end(), spec.unknown_classes.begin(),
                        spec.unknown_classes.end());
  if (emb_names != expected_names) {
    reader.fail("embedding class names do not match the spec's class lists");
  }

  auto load_split = [&](const char* key) {
    Tokens t = expect_key(reader, line, key);
    const long long n = t.integer("scene count");
    t.expect_end("split header");
    std::vector<SyntheticScene> scenes;
    scenes.reserve(static_cast<std::size_t>(n));
    for (long long i = 0; i < n; ++i) scenes.push_back(load_scene(reader, spec));
    return scenes;
  };
  std::vector<SyntheticScene> train = load_split("train");
  std::vector<SyntheticScene> test = load_split("test");
  if (reader.require("end marker") != "end") reader.fail("expected 'end' marker");

  return Dataset{std::move(spec),
                 ClassEmbeddingTable(std::move(emb_names), std::move(emb)),
                 std::move(train), std::move(test)};
}

void save_model(const ToyDetector& model, std::ostream& out) {
  model.validate();
  std::string buf = "model v1\n";
  append_matrix_param(buf, "projector_weight", model.projector_weight);
  append_matrix_param(buf, "projector_bias", model.projector_bias);
  append_matrix_param(buf, "class_weight", model.class_weight);
  append_matrix_param(buf, "class_bias", model.class_bias);
  append_matrix_param(buf, "reg_weight", model.reg_weight);
  append_matrix_param(buf, "reg_bias", model.reg_bias);
  append_matrix_param(buf, "objectness_weight", model.objectness_weight);
  append_matrix_param(buf, "objectness_bias", model.objectness_bias);
  append_matrix_param(buf, "centerness_weight", model.centerness_weight);
  append_matrix_param(buf, "centerness_bias", model.centerness_bias);
  buf += "end\n";
  out << buf;
}

ToyDetector load_model(std::istream& in) {
  LineReader reader(in);
  const std::string header = reader.require("model header");
  if (header != "model v1") {
    reader.fail("expected 'model v1' header, got '" + header + "'");
  }
  ToyDetector m;
  m.projector_weight = read_matrix_param(reader, "projector_weight");
  m.projector_bias = read_matrix_param(reader, "projector_bias");
  m.class_weight = read_matrix_param(reader, "class_weight");
  m.class_bias = read_matrix_param(reader, "class_bias");
  m.reg_weight = read_matrix_param(reader, "reg_weight");
  m.reg_bias = read_matrix_param(reader, "reg_bias");
  m.objectness_weight = read_matrix_param(reader, "objectness_weight");
  m.objectness_bias = read_matrix_param(reader, "objectness_bias");
  m.centerness_weight = read_matrix_param(reader, "centerness_weight");
  m.centerness_bias = read_matrix_param(reader, "centerness_bias");
  if (reader.require("end marker") != "end") reader.fail("expected 'end' marker");
  try {
    m.validate();
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(std::string("model: ") + e.what());
  }
  return m;
}

static std::string report_row(const EvalReport& r) {
  return fixed2(r.wi) + ' ' + std::to_string(r.aose) + ' ' + fixed2(r.map_k) + ' ' +
         fixed2(r.ap_u) + ' ' + fixed2(r.hmp);
}

std::size_t emit_report(const EvalReport& report,
                        const std::vector<std::string>& class_names, std::ostream& out) {
  std::string buf = "WI AOSE mAP_k AP_u HMP\n";
  buf += report_row(report) + '\n';
  for (const auto& [cls, ap] : report.per_class_ap) {
    const bool named = cls >= 0 && cls < static_cast<int>(class_names.size());
    buf += "AP " + (named ? class_names[static_cast<std::size_t>(cls)] : std::to_string(cls)) +
           ' ' + fixed2(ap) + '\n';
  }
  buf += std::string("unknown_gt ") + (report.unknown_gt_present ? "present" : "absent") + '\n';
  out << buf;
  return buf.size();
}

std::size_t emit_report(const EvalReport& report, std::ostream& out) {
  return emit_report(report, {}, out);
}

ParsedReport parse_report(std::istream& in) {
  LineReader reader(in);
  const std::string header = reader.require("report header");
  if (header != "WI AOSE mAP_k AP_u HMP") {
    reader.fail("expected report header, got '" + header + "'");
  }
  ParsedReport out;
  {
    const std::string row = reader.require("report row");
    Tokens t(row, reader);
    out.report.wi = t.real("WI");
    out.report.aose = t.integer("AOSE");
    out.report.map_k = t.real("mAP_k");
    out.report.ap_u = t.real("AP_u");
    out.report.hmp = t.real("HMP");
    t.expect_end("report row");
  }
  std::string line;
  while (true) {
    line = reader.require("per-class AP block or unknown_gt line");
    Tokens t(line, reader);
    const std::string tag = t.word("line tag");
    if (tag == "AP") {
      const std::string name = t.word("class name");
      const double ap = t.real("AP value");
      t.expect_end("per-class AP line");
      out.report.per_class_ap[static_cast<int>(out.class_names.size())] = ap;
      out.class_names.push_back(name);
    } else if (tag == "unknown_gt") {
      const std::string flag = t.word("unknown_gt flag");
      if (flag != "present" && flag != "absent") {
        reader.fail("unknown_gt must be 'present' or 'absent'");
      }
      out.report.unknown_gt_present = flag == "present";
      t.expect_end("unknown_gt line");
      break;
    } else {
      reader.fail("unexpected line tag '" + tag + "'");
    }
  }
  return out;
}

std::size_t emit_ablation(const std::vector<AblationRow>& rows, std::ostream& out) {
  std::string buf = "case WI AOSE mAP_k AP_u HMP\n";
  for (const AblationRow& row : rows) {
    buf += row.name + ' ' + report_row(row.report) + '\n';
  }
  out << buf;
  return buf.size();
}

std::vector<AblationRow> parse_ablation(std::istream& in) {
  LineReader reader(in);
  const std::string header = reader.require("ablation header");
  if (header != "case WI AOSE mAP_k AP_u HMP") {
    reader.fail("expected ablation header, got '" + header + "'");
  }
  std::vector<AblationRow> rows;
  std::string line;
  while (reader.next(line)) {
    Tokens t(line, reader);
    AblationRow row;
    row.name = t.word("case name");
    row.report.wi = t.real("WI");
    row.report.aose = t.integer("AOSE");
    row.report.map_k = t.real("mAP_k");
    row.report.ap_u = t.real("AP_u");
    row.report.hmp = t.real("HMP");
    t.expect_end("ablation row");
    // Switch flags are encoded in the case name ("sc+of", "none", ...).
    std::istringstream parts(row.name);
    std::string part;
    while (std::getline(parts, part, '+')) {
      if (part == "sc") row.enable_sc = true;
      if (part == "cd") row.enable_cd = true;
      if (part == "of") row.enable_of = true;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::size_t emit_gradcheck(const std::vector<GradCheckLine>& lines, std::ostream& out) {
  std::string buf = "loss max_rel_error status\n";
  for (const GradCheckLine& l : lines) {
    buf += l.name + ' ' + sci3(l.max_rel_error) + ' ' + (l.ok ? "ok" : "FAIL") + '\n';
  }
  out << buf;
  return buf.size();
}

std::vector<GradCheckLine> parse_gradcheck(std::istream& in) {
  LineReader reader(in);
  const std::string header = reader.require("gradcheck header");
  if (header != "loss max_rel_error status") {
    reader.fail("expected gradcheck header, got '" + header + "'");
  }
  std::vector<GradCheckLine> lines;
  std::string line;
  while (reader.next(line)) {
    Tokens t(line, reader);
    GradCheckLine l;
    l.name = t.word("loss name");
    l.max_rel_error = t.real("max_rel_error");
    const std::string status = t.word("status");
    if (status != "ok" && status != "FAIL") reader.fail("invalid status '" + status + "'");
    l.ok = status == "ok";
    t.expect_end("gradcheck row");
    lines.push_back(std::move(l));
  }
  return lines;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open '" + tmp.string() + "' for writing");
    f << content;
    f.flush();
    if (!f) throw std::runtime_error("failed writing '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    throw std::runtime_error("cannot rename '" + tmp.string() + "' to '" + path.string() +
                             "': " + ec.message());
  }
}

}  // namespace osod
