#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "osod/harness.hpp"
#include "osod/metrics.hpp"

namespace osod {

/// Detections and ground truth with the shared known-class name table that
/// maps file labels to indices (sorted unique names; `__unknown__` maps to
/// kUnknownLabel).
struct AnnotationSet {
  std::vector<std::string> class_names;
  std::vector<Detection> dets;
  std::vector<GroundTruthObject> gts;
};

/// Line-oriented annotation format:
///   `D <image_id> <label> <score> <x1> <y1> <x2> <y2> [p_0 ... p_k]`
///   `G <image_id> <label> <x1> <y1> <x2> <y2>`
/// where label is a class name or the literal `__unknown__`. Numbers are
/// written in shortest round-trip form. Loading reads both streams, accepts
/// either record type in either stream, and resolves names jointly.
void save_detections(const std::vector<Detection>& dets,
                     const std::vector<std::string>& class_names, std::ostream& out);
void save_ground_truth(const std::vector<GroundTruthObject>& gts,
                       const std::vector<std::string>& class_names, std::ostream& out);
AnnotationSet load_annotations(std::istream& dets_in, std::istream& gts_in);

/// Dataset checkpoint (spec, embeddings, both splits); load(save(d))
/// reproduces d bit-exactly.
void save_dataset(const Dataset& ds, std::ostream& out);
Dataset load_dataset(std::istream& in);

/// Model checkpoint; load(save(m)) reproduces m bit-exactly.
void save_model(const ToyDetector& model, std::ostream& out);
ToyDetector load_model(std::istream& in);

/// Report format: header `WI AOSE mAP_k AP_u HMP`, one 2-decimal value row
/// (AOSE as an integer), a per-class block of `AP <name> <value>` lines, and
/// an `unknown_gt present|absent` line. Returns bytes written. Class indices
/// without a name in `class_names` print as bare indices.
std::size_t emit_report(const EvalReport& report,
                        const std::vector<std::string>& class_names, std::ostream& out);
std::size_t emit_report(const EvalReport& report, std::ostream& out);

struct ParsedReport {
  EvalReport report;
  std::vector<std::string> class_names;  // per-class AP names in file order
};
ParsedReport parse_report(std::istream& in);

/// Ablation table: header `case WI AOSE mAP_k AP_u HMP` plus one row per
/// switch combination, 2-decimal values. Returns bytes written.
std::size_t emit_ablation(const std::vector<AblationRow>& rows, std::ostream& out);
std::vector<AblationRow> parse_ablation(std::istream& in);

struct GradCheckLine {
  std::string name;
  double max_rel_error = 0.0;
  bool ok = false;
};

/// Gradient-check table: header `loss max_rel_error status`, one row per
/// loss, error in scientific notation, status `ok` or `FAIL`.
std::size_t emit_gradcheck(const std::vector<GradCheckLine>& lines, std::ostream& out);
std::vector<GradCheckLine> parse_gradcheck(std::istream& in);

/// Writes content to `<path>.tmp` in the same directory, then renames it over
/// `path`, so readers never observe a partial file.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

}  // namespace osod
