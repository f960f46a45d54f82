#pragma once

// Embedding index and exact cosine nearest-neighbor retrieval.
//
// The index is a plain in-memory table (the demonstration pool is ~20k
// records; exact brute-force search keeps retrieval fully reproducible).
// Vectors are stored single precision; all similarity math runs in double.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ike/corpus.hpp"

namespace ike::retrieval {

using Vector = std::vector<float>;

/** Immutable-after-build table of case_id -> embedding, uniform dimension. */
class EmbeddingIndex {
 public:
  explicit EmbeddingIndex(std::size_t dimension);

  /** Adds one vector; validates dimension, finiteness, norm, id uniqueness. */
  void add(std::int64_t case_id, Vector vector);

  std::size_t dimension() const { return dimension_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  /** Vector for a case_id, or nullptr if absent. */
  const Vector* find(std::int64_t case_id) const;

  struct Entry {
    std::int64_t case_id;
    Vector vector;
  };
  /** Entries sorted by ascending case_id. */
  const std::vector<Entry>& entries() const { return entries_; }

 private:
  std::size_t dimension_;
  std::vector<Entry> entries_;  // kept sorted by case_id
};

struct ScoredNeighbor {
  std::int64_t case_id;
  double similarity;
};

/** kNN output: neighbors sorted by descending similarity (ties: ascending id). */
struct RetrievalResult {
  std::vector<ScoredNeighbor> neighbors;
};

/**
 * Retrieval key for a record: rendered target prompt, original object, and
 * edited object joined by single spaces.
 */
std::string encode_key(const corpus::EditRecord& record);

/** Cosine similarity in double precision; throws on dimension/norm violations. */
double cosine(std::span<const float> u, std::span<const float> v);

/**
 * Exact top-k by cosine similarity over the whole index, descending,
 * ties broken by ascending case_id.  k is clamped to the index size.
 */
RetrievalResult knn(const EmbeddingIndex& index, std::span<const float> query,
                    std::size_t k);

/**
 * Left-to-right context order: ascending similarity, so the most similar
 * record ends up rightmost (adjacent to the query).  Ties: ascending case_id.
 */
std::vector<std::int64_t> order_for_context(const RetrievalResult& result);

/**
 * Deterministic stand-in for an external sentence encoder: expands a stable
 * hash of (text, seed) into a unit vector.  Pure integer arithmetic, so the
 * output is bitwise identical on every platform.
 */
Vector stub_embed(std::string_view text, std::size_t dimension,
                  std::uint64_t seed);

/**
 * Reads an embedding file: UTF-8 lines of `case_id<TAB>v1 v2 ... vd`.
 * Validates uniform dimension, finite entries, positive norm, unique ids.
 */
EmbeddingIndex load_embedding_file(const std::filesystem::path& file);

/** Writes an index in the same line format, ascending case_id. */
void write_embedding_file(const EmbeddingIndex& index,
                          const std::filesystem::path& file);

}  // namespace ike::retrieval
