#include "osod/embeddings.hpp"

#include <charconv>
#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>
#include <utility>

namespace osod {

namespace {

// Shortest decimal form that parses back to the same double.
void append_double(std::string& out, double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

}  // namespace

ClassEmbeddingTable::ClassEmbeddingTable(std::vector<std::string> names,
                                         Eigen::MatrixXd vectors)
    : names_(std::move(names)), vectors_(std::move(vectors)) {
  if (names_.empty()) throw std::invalid_argument("embedding table: no entries");
  if (static_cast<Eigen::Index>(names_.size()) != vectors_.rows())
    throw std::invalid_argument("embedding table: name/vector count mismatch");
  if (vectors_.cols() < 1)
    throw std::invalid_argument("embedding table: dimension must be positive");
  for (int j = 0; j < size(); ++j) {
    const double n = vectors_.row(j).norm();
    if (n == 0.0 || !std::isfinite(n))
      throw std::invalid_argument("embedding table: cannot normalize vector for class '" +
                                  names_[static_cast<size_t>(j)] + "'");
    // Skip the division for rows that are already unit so normalization is
    // idempotent and save/load round-trips are bit-exact.
    if (std::abs(n - 1.0) > 1e-12) vectors_.row(j) /= n;
    if (!index_.emplace(names_[static_cast<size_t>(j)], j).second)
      throw std::invalid_argument("embedding table: duplicate class name '" +
                                  names_[static_cast<size_t>(j)] + "'");
  }
}

int ClassEmbeddingTable::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end())
    throw std::out_of_range("embedding table: unknown class '" + name + "'");
  return it->second;
}

ClassEmbeddingTable ClassEmbeddingTable::subset(
    const std::vector<std::string>& names) const {
  Eigen::MatrixXd vecs(static_cast<Eigen::Index>(names.size()), dim());
  for (size_t i = 0; i < names.size(); ++i)
    vecs.row(static_cast<Eigen::Index>(i)) = vectors_.row(index_of(names[i]));
  return ClassEmbeddingTable(names, std::move(vecs));
}

ClassEmbeddingTable load_embeddings(std::istream& in) {
  std::string line;
  int line_no = 0;
  if (!std::getline(in, line))
    throw std::runtime_error("embeddings: empty input");
  ++line_no;
  int dim = 0;
  if (line.rfind("dim=", 0) != 0 ||
      std::from_chars(line.data() + 4, line.data() + line.size(), dim).ec !=
          std::errc{} ||
      dim < 1)
    throw std::runtime_error("embeddings line 1: expected 'dim=<positive int>'");

  std::vector<std::string> names;
  std::vector<double> values;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string name;
    ls >> name;
    if (name.empty())
      throw std::runtime_error("embeddings line " + std::to_string(line_no) +
                               ": missing class name");
    std::vector<double> v;
    double x;
    while (ls >> x) v.push_back(x);
    if (!ls.eof())
      throw std::runtime_error("embeddings line " + std::to_string(line_no) +
                               ": malformed number");
    if (static_cast<int>(v.size()) != dim)
      throw std::runtime_error("embeddings line " + std::to_string(line_no) +
                               ": expected " + std::to_string(dim) +
                               " components, got " + std::to_string(v.size()));
    names.push_back(name);
    values.insert(values.end(), v.begin(), v.end());
  }
  if (names.empty()) throw std::runtime_error("embeddings: no records");

  Eigen::MatrixXd vecs(static_cast<Eigen::Index>(names.size()), dim);
  for (Eigen::Index i = 0; i < vecs.rows(); ++i)
    for (Eigen::Index j = 0; j < dim; ++j)
      vecs(i, j) = values[static_cast<size_t>(i * dim + j)];

  try {
    return ClassEmbeddingTable(std::move(names), std::move(vecs));
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(std::string("embeddings: ") + e.what());
  }
}

void save_embeddings(const ClassEmbeddingTable& table, std::ostream& out) {
  std::string buf = "dim=" + std::to_string(table.dim()) + "\n";
  for (int j = 0; j < table.size(); ++j) {
    buf += table.name(j);
    for (int c = 0; c < table.dim(); ++c) {
      buf += ' ';
      append_double(buf, table.vectors()(j, c));
    }
    buf += '\n';
  }
  out << buf;
}

ClassEmbeddingTable synth_embeddings(
    const std::vector<std::string>& class_names, int dim, std::uint64_t seed,
    const std::vector<SimilarityPair>& similarity_pairs) {
  const int k = static_cast<int>(class_names.size());
  if (k < 1) throw std::invalid_argument("synth_embeddings: no classes");
  if (dim < k)
    throw std::invalid_argument(
        "synth_embeddings: dim " + std::to_string(dim) +
        " too small for " + std::to_string(k) + " classes");

  // Raw engine draws plus Box-Muller keep the sampled values identical across
  // standard-library implementations, unlike std::normal_distribution.
  std::mt19937_64 rng(seed);
  auto u01 = [&rng] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
  auto gauss = [&] {
    double u1 = u01();
    while (u1 <= 0.0) u1 = u01();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u01());
  };
  Eigen::MatrixXd vecs(k, dim);
  for (int i = 0; i < k; ++i) {
    // Gram-Schmidt against the previously accepted rows; redraw on
    // numerically dependent samples.
    for (;;) {
      for (int c = 0; c < dim; ++c) vecs(i, c) = gauss();
      for (int p = 0; p < i; ++p)
        vecs.row(i) -= vecs.row(i).dot(vecs.row(p)) * vecs.row(p);
      const double n = vecs.row(i).norm();
      if (n > 1e-8) {
        vecs.row(i) /= n;
        break;
      }
    }
  }

  ClassEmbeddingTable base(class_names, std::move(vecs));
  Eigen::MatrixXd rotated = base.vectors();
  for (const auto& pair : similarity_pairs) {
    if (!(pair.cosine > -1.0 && pair.cosine < 1.0))
      throw std::invalid_argument("synth_embeddings: target cosine must be in (-1,1)");
    const int a = base.index_of(pair.first);
    const int b = base.index_of(pair.second);
    if (a == b)
      throw std::invalid_argument("synth_embeddings: pair references class '" +
                                  pair.first + "' twice");
    rotated.row(a) = pair.cosine * rotated.row(b) +
                     std::sqrt(1.0 - pair.cosine * pair.cosine) *
                         base.vectors().row(a);
  }
  return ClassEmbeddingTable(class_names, std::move(rotated));
}

}  // namespace osod
