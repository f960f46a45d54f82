#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "ike/error.hpp"
#include "ike/retrieval.hpp"
#include "ike/rng.hpp"
#include "testutil.hpp"

using namespace ike;
using retrieval::Vector;

TEST_CASE("encode_key joins prompt, original object, edited object") {
  corpus::EditRecord rec;
  rec.case_id = 0;
  rec.subject = "Danielle Darrieux";
  rec.prompt_template = "The mother tongue of {} is";
  rec.target_true = "French";
  rec.target_new = "English";
  CHECK(retrieval::encode_key(rec) ==
        "The mother tongue of Danielle Darrieux is French English");
}

TEST_CASE("encode_key normalizes to single spaces between segments") {
  corpus::EditRecord rec;
  rec.subject = "X";
  rec.prompt_template = "{} is ";  // rendered prompt ends in a space
  rec.target_true = "a";
  rec.target_new = "b";
  CHECK(retrieval::encode_key(rec) == "X is a b");
}

TEST_CASE("encode_key differs when only the edited object differs") {
  auto rec = testutil::make_record(1);
  auto other = rec;
  other.target_new = rec.target_new + "X";
  CHECK(retrieval::encode_key(rec) != retrieval::encode_key(other));
}

TEST_CASE("cosine similarity basics") {
  const Vector ex{1.0f, 0.0f};
  const Vector ey{0.0f, 1.0f};
  const Vector diag{1.0f, 1.0f};
  const Vector scaled{2.0f, 0.0f};
  CHECK(retrieval::cosine(ex, ey) == doctest::Approx(0.0));
  CHECK(retrieval::cosine(scaled, ex) == doctest::Approx(1.0));
  CHECK(retrieval::cosine(diag, ex) == doctest::Approx(0.70711).epsilon(1e-5));

  const Vector three{1.0f, 0.0f, 0.0f};
  CHECK_THROWS_AS(retrieval::cosine(ex, three), ContractError);
  const Vector zero{0.0f, 0.0f};
  CHECK_THROWS_AS(retrieval::cosine(ex, zero), ContractError);
}

TEST_CASE("cosine is invariant under positive scaling") {
  rng::SplitMix gen(11);
  for (int trial = 0; trial < 50; ++trial) {
    Vector v(8);
    for (auto& x : v) {
      x = static_cast<float>(gen.next_unit() * 2.0 - 1.0);
    }
    if (std::all_of(v.begin(), v.end(), [](float x) { return x == 0.0f; })) {
      continue;
    }
    const float alpha = static_cast<float>(gen.next_unit() * 9.0 + 0.5);
    Vector scaled = v;
    for (auto& x : scaled) x *= alpha;
    CHECK(retrieval::cosine(v, scaled) == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("index validates entries") {
  retrieval::EmbeddingIndex index(2);
  index.add(1, {1.0f, 0.0f});
  CHECK_THROWS_AS(index.add(1, {0.0f, 1.0f}), ValidationError);  // dup id
  CHECK_THROWS_AS(index.add(2, {1.0f}), ContractError);          // bad dim
  CHECK_THROWS_AS(index.add(3, {0.0f, 0.0f}), ValidationError);  // zero norm
  const float inf = std::numeric_limits<float>::infinity();
  CHECK_THROWS_AS(index.add(4, {inf, 0.0f}), ValidationError);
  CHECK_THROWS_AS(retrieval::EmbeddingIndex(0), ContractError);
  CHECK(index.size() == 1);
  CHECK(index.find(1) != nullptr);
  CHECK(index.find(99) == nullptr);
}

TEST_CASE("knn worked example with tie-free ordering") {
  retrieval::EmbeddingIndex index(2);
  index.add(1, {1.0f, 0.0f});
  index.add(2, {0.0f, 1.0f});
  index.add(3, {0.9f, 0.1f});
  const Vector query{1.0f, 0.0f};

  const auto result = retrieval::knn(index, query, 2);
  REQUIRE(result.neighbors.size() == 2);
  CHECK(result.neighbors[0].case_id == 1);
  CHECK(result.neighbors[0].similarity == doctest::Approx(1.0));
  CHECK(result.neighbors[1].case_id == 3);
  CHECK(result.neighbors[1].similarity ==
        doctest::Approx(0.99388).epsilon(1e-5));

  const auto all = retrieval::knn(index, query, 10);
  CHECK(all.neighbors.size() == 3);
  CHECK(all.neighbors[2].case_id == 2);

  CHECK_THROWS_AS(retrieval::knn(index, query, 0), ContractError);
  retrieval::EmbeddingIndex empty(2);
  CHECK_THROWS_AS(retrieval::knn(empty, query, 1), ContractError);
}

TEST_CASE("knn breaks similarity ties by ascending case_id") {
  retrieval::EmbeddingIndex index(2);
  index.add(7, {1.0f, 0.0f});
  index.add(3, {2.0f, 0.0f});  // same direction => same similarity
  index.add(5, {3.0f, 0.0f});
  const auto result = retrieval::knn(index, Vector{1.0f, 0.0f}, 3);
  REQUIRE(result.neighbors.size() == 3);
  CHECK(result.neighbors[0].case_id == 3);
  CHECK(result.neighbors[1].case_id == 5);
  CHECK(result.neighbors[2].case_id == 7);
}

TEST_CASE("order_for_context places the most similar record last") {
  retrieval::RetrievalResult result;
  result.neighbors = {{1, 1.0}, {3, 0.99}, {7, 0.42}};
  CHECK(retrieval::order_for_context(result) ==
        std::vector<std::int64_t>{7, 3, 1});

  retrieval::RetrievalResult single;
  single.neighbors = {{4, 0.5}};
  CHECK(retrieval::order_for_context(single) == std::vector<std::int64_t>{4});

  retrieval::RetrievalResult tied;
  tied.neighbors = {{2, 0.5}, {9, 0.5}, {1, 0.5}};
  CHECK(retrieval::order_for_context(tied) ==
        std::vector<std::int64_t>{1, 2, 9});

  retrieval::RetrievalResult empty;
  CHECK_THROWS_AS(retrieval::order_for_context(empty), ContractError);
}

TEST_CASE("order_for_context reverses knn order when similarities differ") {
  rng::SplitMix gen(23);
  retrieval::EmbeddingIndex index(4);
  for (std::int64_t id = 1; id <= 20; ++id) {
    Vector v(4);
    for (auto& x : v) {
      x = static_cast<float>(gen.next_unit() * 2.0 - 1.0);
    }
    index.add(id, std::move(v));
  }
  const Vector query{0.3f, -0.2f, 0.9f, 0.1f};
  const auto result = retrieval::knn(index, query, 8);

  bool distinct = true;
  for (std::size_t i = 0; i + 1 < result.neighbors.size(); ++i) {
    if (result.neighbors[i].similarity == result.neighbors[i + 1].similarity) {
      distinct = false;
    }
  }
  REQUIRE(distinct);

  auto ordered = retrieval::order_for_context(result);
  std::reverse(ordered.begin(), ordered.end());
  for (std::size_t i = 0; i < ordered.size(); ++i) {
    CHECK(ordered[i] == result.neighbors[i].case_id);
  }
}

TEST_CASE("knn equals an independent full-sort oracle on random indexes") {
  rng::SplitMix gen(99);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t dim = 1 + gen.next_below(16);
    const std::size_t size = 1 + gen.next_below(300);
    retrieval::EmbeddingIndex index(dim);
    std::vector<std::pair<std::int64_t, Vector>> rows;
    Vector shared(dim);
    for (auto& x : shared) {
      x = static_cast<float>(gen.next_unit() * 2.0 - 1.0);
    }
    if (std::all_of(shared.begin(), shared.end(),
                    [](float x) { return x == 0.0f; })) {
      shared[0] = 1.0f;
    }
    for (std::size_t i = 0; i < size; ++i) {
      const std::int64_t id = static_cast<std::int64_t>(i * 3 + 1);
      Vector v;
      if (gen.next_below(4) == 0) {
        v = shared;  // deliberate duplicates to exercise tie-breaking
      } else {
        v.resize(dim);
        for (auto& x : v) {
          x = static_cast<float>(gen.next_unit() * 2.0 - 1.0);
        }
        bool zero = std::all_of(v.begin(), v.end(),
                                [](float x) { return x == 0.0f; });
        if (zero) v[0] = 0.5f;
      }
      rows.emplace_back(id, v);
      index.add(id, std::move(v));
    }
    Vector query(dim);
    for (auto& x : query) {
      x = static_cast<float>(gen.next_unit() * 2.0 - 1.0);
    }
    bool zero = std::all_of(query.begin(), query.end(),
                            [](float x) { return x == 0.0f; });
    if (zero) query[0] = 1.0f;
    const std::size_t k = 1 + gen.next_below(size + 4);

    // Oracle: score everything, full sort, truncate.
    std::vector<retrieval::ScoredNeighbor> oracle;
    oracle.reserve(rows.size());
    for (const auto& [id, v] : rows) {
      oracle.push_back({id, retrieval::cosine(v, query)});
    }
    std::sort(oracle.begin(), oracle.end(),
              [](const retrieval::ScoredNeighbor& a,
                 const retrieval::ScoredNeighbor& b) {
                if (a.similarity != b.similarity) {
                  return a.similarity > b.similarity;
                }
                return a.case_id < b.case_id;
              });
    oracle.resize(std::min(k, oracle.size()));

    const auto got = retrieval::knn(index, query, k);
    REQUIRE(got.neighbors.size() == oracle.size());
    for (std::size_t i = 0; i < oracle.size(); ++i) {
      CHECK(got.neighbors[i].case_id == oracle[i].case_id);
      CHECK(got.neighbors[i].similarity == oracle[i].similarity);
    }
  }
}

TEST_CASE("stub embeddings are deterministic unit vectors") {
  const auto a1 = retrieval::stub_embed("some text", 32, 5);
  const auto a2 = retrieval::stub_embed("some text", 32, 5);
  CHECK(a1 == a2);  // bitwise

  double norm = 0.0;
  for (const float x : a1) norm += static_cast<double>(x) * x;
  CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-6));

  const auto b = retrieval::stub_embed("b", 32, 5);
  const auto a = retrieval::stub_embed("a", 32, 5);
  CHECK(a != b);

  const auto seeded = retrieval::stub_embed("a", 32, 6);
  CHECK(a != seeded);

  CHECK(retrieval::stub_embed("x", 1, 0).size() == 1);
  CHECK_THROWS_AS(retrieval::stub_embed("x", 0, 0), ContractError);
}

TEST_CASE("embedding file round trip is bitwise exact") {
  testutil::TempDir dir("embfile");
  retrieval::EmbeddingIndex index(3);
  index.add(10, retrieval::stub_embed("ten", 3, 1));
  index.add(2, retrieval::stub_embed("two", 3, 1));
  index.add(7, {0.25f, -0.5f, 0.125f});
  retrieval::write_embedding_file(index, dir.file("e.tsv"));

  const auto loaded = retrieval::load_embedding_file(dir.file("e.tsv"));
  CHECK(loaded.dimension() == 3);
  REQUIRE(loaded.size() == 3);
  CHECK(loaded.entries()[0].case_id == 2);  // ascending id order
  CHECK(loaded.entries()[1].case_id == 7);
  CHECK(loaded.entries()[2].case_id == 10);
  for (const auto& entry : index.entries()) {
    const auto* vec = loaded.find(entry.case_id);
    REQUIRE(vec != nullptr);
    CHECK(*vec == entry.vector);  // bitwise float equality
  }
}

TEST_CASE("embedding file loader reports malformed lines precisely") {
  testutil::TempDir dir("embbad");
  auto write = [&](const std::string& name, const std::string& body) {
    std::ofstream out(dir.file(name), std::ios::binary);
    out << body;
    return dir.file(name);
  };

  CHECK_THROWS_AS(
      retrieval::load_embedding_file(write("notab.tsv", "1 0.5 0.5\n")),
      ParseError);
  CHECK_THROWS_AS(
      retrieval::load_embedding_file(write("badid.tsv", "x\t0.5 0.5\n")),
      ParseError);
  CHECK_THROWS_AS(
      retrieval::load_embedding_file(write("badfloat.tsv", "1\t0.5 zz\n")),
      ParseError);
  CHECK_THROWS_AS(retrieval::load_embedding_file(
                      write("dimmix.tsv", "1\t0.5 0.5\n2\t0.5\n")),
                  ValidationError);
  CHECK_THROWS_AS(retrieval::load_embedding_file(
                      write("nonfinite.tsv", "1\tinf 0.5\n")),
                  ValidationError);
  CHECK_THROWS_AS(retrieval::load_embedding_file(
                      write("dup.tsv", "1\t0.5 0.5\n1\t0.5 0.5\n")),
                  ValidationError);
  CHECK_THROWS_AS(retrieval::load_embedding_file(write("empty.tsv", "")),
                  ValidationError);
  CHECK_THROWS_AS(
      retrieval::load_embedding_file(write("zeronorm.tsv", "1\t0 0\n")),
      ValidationError);
  CHECK_THROWS_AS(retrieval::load_embedding_file(dir.file("missing.tsv")),
                  IoError);

  // Line numbers are carried in the message.
  try {
    retrieval::load_embedding_file(write("lineinfo.tsv",
                                         "1\t0.5 0.5\n2\tbad 1\n"));
    FAIL("expected ParseError");
  } catch (const ParseError& error) {
    CHECK(std::string(error.what()).find("line 2") != std::string::npos);
  }
}
