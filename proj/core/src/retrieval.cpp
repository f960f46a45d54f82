#include "ike/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ike/error.hpp"
#include "ike/rng.hpp"

namespace ike::retrieval {
namespace {

void validate_vector(const Vector& v, std::size_t dimension) {
  if (v.size() != dimension) {
    throw ContractError("embedding dimension mismatch: got " +
                        std::to_string(v.size()) + ", index holds " +
                        std::to_string(dimension));
  }
  double norm_sq = 0.0;
  for (float x : v) {
    if (!std::isfinite(x)) throw ValidationError("embedding entry is not finite");
    norm_sq += static_cast<double>(x) * static_cast<double>(x);
  }
  if (norm_sq <= 0.0) throw ValidationError("embedding has zero norm");
}

}  // namespace

EmbeddingIndex::EmbeddingIndex(std::size_t dimension) : dimension_(dimension) {
  if (dimension == 0) throw ContractError("index dimension must be positive");
}

void EmbeddingIndex::add(std::int64_t case_id, Vector vector) {
  validate_vector(vector, dimension_);
  auto it = std::lower_bound(entries_.begin(), entries_.end(), case_id,
                             [](const Entry& e, std::int64_t id) { return e.case_id < id; });
  if (it != entries_.end() && it->case_id == case_id) {
    throw ValidationError("duplicate case_id in index: " + std::to_string(case_id));
  }
  entries_.insert(it, Entry{case_id, std::move(vector)});
}

const Vector* EmbeddingIndex::find(std::int64_t case_id) const {
  auto it = std::lower_bound(entries_.begin(), entries_.end(), case_id,
                             [](const Entry& e, std::int64_t id) { return e.case_id < id; });
  if (it == entries_.end() || it->case_id != case_id) return nullptr;
  return &it->vector;
}

std::string encode_key(const corpus::EditRecord& record) {
  std::string prompt = corpus::trim(corpus::render_target_prompt(record));
  return prompt + " " + corpus::trim(record.target_true) + " " +
         corpus::trim(record.target_new);
}

double cosine(std::span<const float> u, std::span<const float> v) {
  if (u.size() != v.size()) {
    throw ContractError("cosine: dimension mismatch (" + std::to_string(u.size()) +
                        " vs " + std::to_string(v.size()) + ")");
  }
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    double a = u[i], b = v[i];
    dot += a * b;
    nu += a * a;
    nv += b * b;
  }
  if (nu <= 0.0 || nv <= 0.0) throw ContractError("cosine: zero-norm vector");
  return dot / (std::sqrt(nu) * std::sqrt(nv));
}

RetrievalResult knn(const EmbeddingIndex& index, std::span<const float> query,
                    std::size_t k) {
  if (index.empty()) throw ContractError("knn: index is empty");
  if (k == 0) throw ContractError("knn: k must be >= 1");

  std::vector<ScoredNeighbor> scored;
  scored.reserve(index.size());
  for (const auto& entry : index.entries()) {
    scored.push_back({entry.case_id, cosine(query, entry.vector)});
  }
  std::sort(scored.begin(), scored.end(),
            [](const ScoredNeighbor& a, const ScoredNeighbor& b) {
              if (a.similarity != b.similarity) return a.similarity > b.similarity;
              return a.case_id < b.case_id;
            });
  if (scored.size() > k) scored.resize(k);
  return RetrievalResult{std::move(scored)};
}

std::vector<std::int64_t> order_for_context(const RetrievalResult& result) {
  if (result.neighbors.empty()) {
    throw ContractError("order_for_context: empty retrieval result");
  }
  std::vector<ScoredNeighbor> sorted = result.neighbors;
  std::sort(sorted.begin(), sorted.end(),
            [](const ScoredNeighbor& a, const ScoredNeighbor& b) {
              if (a.similarity != b.similarity) return a.similarity < b.similarity;
              return a.case_id < b.case_id;
            });
  std::vector<std::int64_t> ids;
  ids.reserve(sorted.size());
  for (const auto& n : sorted) ids.push_back(n.case_id);
  return ids;
}

Vector stub_embed(std::string_view text, std::size_t dimension,
                  std::uint64_t seed) {
  if (dimension == 0) throw ContractError("stub_embed: dimension must be >= 1");
  std::uint64_t state = rng::mix(rng::fnv1a64(text), seed);
  std::vector<double> raw(dimension);
  double norm_sq = 0.0;
  for (std::size_t i = 0; i < dimension; ++i) {
    // Uniform in [-1, 1) from the top 53 bits of a splitmix64 draw.
    double u = static_cast<double>(rng::splitmix64(state) >> 11) * 0x1.0p-53;
    raw[i] = 2.0 * u - 1.0;
    norm_sq += raw[i] * raw[i];
  }
  if (norm_sq == 0.0) {  // astronomically unlikely; keep the norm invariant anyway
    raw[0] = 1.0;
    norm_sq = 1.0;
  }
  double inv_norm = 1.0 / std::sqrt(norm_sq);
  Vector out(dimension);
  for (std::size_t i = 0; i < dimension; ++i) {
    out[i] = static_cast<float>(raw[i] * inv_norm);
  }
  return out;
}

EmbeddingIndex load_embedding_file(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open embedding file: " + file.string());

  std::vector<std::pair<std::int64_t, Vector>> rows;
  std::size_t dimension = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (corpus::trim(line).empty()) continue;
    std::size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      throw ParseError("embedding file line " + std::to_string(line_no) +
                       ": missing tab separator");
    }
    std::int64_t case_id = 0;
    try {
      case_id = std::stoll(line.substr(0, tab));
    } catch (const std::exception&) {
      throw ParseError("embedding file line " + std::to_string(line_no) +
                       ": bad case_id");
    }
    Vector v;
    std::istringstream values(line.substr(tab + 1));
    std::string tok;
    while (values >> tok) {
      try {
        std::size_t used = 0;
        float x = std::stof(tok, &used);
        if (used != tok.size()) throw std::invalid_argument(tok);
        v.push_back(x);
      } catch (const std::exception&) {
        throw ParseError("embedding file line " + std::to_string(line_no) +
                         ": bad float \"" + tok + "\"");
      }
    }
    if (v.empty()) {
      throw ParseError("embedding file line " + std::to_string(line_no) +
                       ": no vector entries");
    }
    if (dimension == 0) dimension = v.size();
    if (v.size() != dimension) {
      throw ValidationError("embedding file line " + std::to_string(line_no) +
                            ": dimension " + std::to_string(v.size()) +
                            " does not match " + std::to_string(dimension));
    }
    rows.emplace_back(case_id, std::move(v));
  }
  if (rows.empty()) throw ValidationError("embedding file is empty: " + file.string());

  EmbeddingIndex index(dimension);
  for (auto& [id, v] : rows) {
    try {
      index.add(id, std::move(v));
    } catch (const Error& e) {
      throw ValidationError("embedding for case_id " + std::to_string(id) + ": " +
                            e.what());
    }
  }
  return index;
}

void write_embedding_file(const EmbeddingIndex& index,
                          const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write embedding file: " + file.string());
  char buf[64];
  for (const auto& entry : index.entries()) {
    out << entry.case_id << '\t';
    for (std::size_t i = 0; i < entry.vector.size(); ++i) {
      // 9 significant digits round-trip single precision exactly.
      std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(entry.vector[i]));
      if (i) out << ' ';
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + file.string());
}

}  // namespace ike::retrieval
