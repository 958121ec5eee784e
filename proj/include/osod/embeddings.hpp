#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace osod {

template <typename DerivedA, typename DerivedB>
double cosine_similarity(const Eigen::MatrixBase<DerivedA>& u,
                         const Eigen::MatrixBase<DerivedB>& v) {
  if (u.size() != v.size())
    throw std::invalid_argument("cosine_similarity: length mismatch");
  const double nu = u.norm();
  const double nv = v.norm();
  if (nu == 0.0 || nv == 0.0)
    throw std::domain_error("cosine_similarity: zero-norm input");
  return u.dot(v) / (nu * nv);
}

/// Ordered table of unit-norm class embedding vectors, one per class name.
/// Immutable after construction; rows of `vectors()` follow insertion order.
class ClassEmbeddingTable {
 public:
  ClassEmbeddingTable(std::vector<std::string> names, Eigen::MatrixXd vectors);

  int dim() const { return static_cast<int>(vectors_.cols()); }
  int size() const { return static_cast<int>(names_.size()); }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& name(int j) const { return names_.at(static_cast<size_t>(j)); }
  /// k x dim matrix, one unit-norm row per class.
  const Eigen::MatrixXd& vectors() const { return vectors_; }
  Eigen::MatrixXd::ConstRowXpr vector(int j) const { return vectors_.row(j); }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  int index_of(const std::string& name) const;

  /// Table restricted to the given class names, preserving the given order.
  ClassEmbeddingTable subset(const std::vector<std::string>& names) const;

 private:
  std::vector<std::string> names_;
  Eigen::MatrixXd vectors_;
  std::unordered_map<std::string, int> index_;
};

/// Reads the line-oriented embedding format: `dim=<d>` header, then one
/// `<class_name> <v1> ... <v_d>` record per line. Vectors are re-normalized
/// to unit norm on load. Throws std::runtime_error naming the failing line.
ClassEmbeddingTable load_embeddings(std::istream& in);

/// Writes the same format with shortest round-trip number formatting, so
/// load(save(t)) reproduces t bit-exactly.
void save_embeddings(const ClassEmbeddingTable& table, std::ostream& out);

struct SimilarityPair {
  std::string first;   // class rotated toward `second`
  std::string second;
  double cosine = 0.0;
};

/// Deterministically synthesizes unit embeddings: unpaired classes mutually
/// orthogonal (Gram-Schmidt over a seeded Gaussian draw), then each pair's
/// first member is re-mixed in the plane of the two so cos(first,second)
/// hits the target exactly. Requires dim >= number of classes.
ClassEmbeddingTable synth_embeddings(const std::vector<std::string>& class_names,
                                     int dim, std::uint64_t seed,
                                     const std::vector<SimilarityPair>& similarity_pairs = {});

}  // namespace osod
