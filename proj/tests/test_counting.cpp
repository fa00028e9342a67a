#include <catch2/catch_amalgamated.hpp>

#include "minalign/counting.hpp"

using namespace minalign;

namespace {

FiniteDomain masses_only(const Vec& masses) {
  FiniteDomain d;
  d.masses = masses;
  for (std::size_t i = 0; i < masses.size(); ++i) d.points.push_back(Vec{double(i)});
  return d;
}

// independent oracle: minimum clique cover by enumerating all set partitions
std::size_t brute_force_cover(const SimilarityGraph& g) {
  const std::size_t n = g.size();
  std::vector<std::size_t> assign(n, 0);
  std::size_t best = n;
  std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t i, std::size_t used) {
    if (i == n) {
      best = std::min(best, used);
      return;
    }
    for (std::size_t c = 0; c <= used && c < n; ++c) {
      bool ok = true;
      for (std::size_t j = 0; j < i && ok; ++j)
        if (assign[j] == c && !g.similar(i, j)) ok = false;
      if (!ok) continue;
      assign[i] = c;
      rec(i + 1, std::max(used, c + 1));
    }
  };
  rec(0, 0);
  return best;
}

SimilarityGraph random_graph(std::size_t n, double p, RngStream& rng) {
  SimilarityGraph g(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (rng.uniform01() < p) g.set_similar(i, j);
  return g;
}

}  // namespace

TEST_CASE("uniform four-point domain admits all permutations") {
  const auto census = dpm_census_finite(masses_only(Vec{0.25, 0.25, 0.25, 0.25}), 0.0);
  REQUIRE(census.size() == 24);
}

TEST_CASE("distinct masses admit only the identity") {
  const auto census = dpm_census_finite(masses_only(Vec{0.5, 0.3, 0.2}), 0.0);
  REQUIRE(census.size() == 1);
  REQUIRE(census[0] == std::vector<std::size_t>{0, 1, 2});
}

TEST_CASE("a tied pair of masses admits exactly the swap") {
  const auto census = dpm_census_finite(masses_only(Vec{0.4, 0.4, 0.2}), 0.0);
  REQUIRE(census.size() == 2);
  REQUIRE(census[0] == std::vector<std::size_t>{0, 1, 2});
  REQUIRE(census[1] == std::vector<std::size_t>{1, 0, 2});
}

TEST_CASE("census contains the identity and respects relabeling") {
  RngStream rng(1);
  Vec masses{0.3, 0.3, 0.2, 0.2};
  const auto census = dpm_census_finite(masses_only(masses), 0.0);
  bool has_identity = false;
  for (const auto& p : census)
    if (p == std::vector<std::size_t>{0, 1, 2, 3}) has_identity = true;
  REQUIRE(has_identity);
  // relabeled equal-mass support gives the same census size
  const auto census2 = dpm_census_finite(masses_only(Vec{0.2, 0.3, 0.2, 0.3}), 0.0);
  REQUIRE(census2.size() == census.size());
}

TEST_CASE("census with slack admits near-preserving swaps") {
  const auto strict = dpm_census_finite(masses_only(Vec{0.41, 0.39, 0.2}), 0.0);
  REQUIRE(strict.size() == 1);
  const auto slack = dpm_census_finite(masses_only(Vec{0.41, 0.39, 0.2}), 0.05);
  REQUIRE(slack.size() == 2);
}

TEST_CASE("census rejects oversized supports") {
  REQUIRE_THROWS_AS(dpm_census_finite(masses_only(Vec(11, 1.0 / 11)), 0.0), SupportTooLarge);
}

TEST_CASE("covering number of the equality relation counts items") {
  const SimilarityGraph g(5);
  const CoveringResult res = covering_number(g);
  REQUIRE(res.number == 5);
  REQUIRE(res.exact);
}

TEST_CASE("covering number of the complete relation is one") {
  SimilarityGraph g(6);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = i + 1; j < 6; ++j) g.set_similar(i, j);
  REQUIRE(covering_number(g).number == 1);
}

TEST_CASE("covering number of a path needs two classes") {
  SimilarityGraph g(3);
  g.set_similar(0, 1);
  g.set_similar(1, 2);
  const CoveringResult res = covering_number(g);
  REQUIRE(res.number == 2);
  REQUIRE(res.number == brute_force_cover(g));
}

TEST_CASE("exact solver agrees with brute force on random instances") {
  RngStream rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.uniform_index(5);
    const SimilarityGraph g = random_graph(n, rng.uniform01(), rng);
    const CoveringResult res = covering_number(g);
    REQUIRE(res.number == brute_force_cover(g));
  }
}

TEST_CASE("greedy covering upper-bounds the exact covering") {
  RngStream rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.uniform_index(7);
    const SimilarityGraph g = random_graph(n, rng.uniform01(), rng);
    const CoveringResult exact = covering_number(g, CoveringMode::exact);
    const CoveringResult greedy = covering_number(g, CoveringMode::greedy);
    REQUIRE(greedy.number >= exact.number);
    REQUIRE_FALSE(greedy.exact);
  }
}

TEST_CASE("exact mode enforces the size cap") {
  const SimilarityGraph g(20);
  REQUIRE_THROWS_AS(covering_number(g, CoveringMode::exact), TooLargeForExact);
  REQUIRE(covering_number(g, CoveringMode::exact, 32).number == 20);
}

TEST_CASE("product of the equality relation is equality on pairs") {
  const SimilarityGraph g(4);
  const SimilarityGraph p = product_graph(g);
  REQUIRE(p.size() == 16);
  REQUIRE(covering_number(p, CoveringMode::exact, 16).number == 16);
}

TEST_CASE("product of the complete relation stays complete") {
  SimilarityGraph g(3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = i + 1; j < 3; ++j) g.set_similar(i, j);
  const SimilarityGraph p = product_graph(g);
  REQUIRE(covering_number(p, CoveringMode::exact, 9).number == 1);
}

TEST_CASE("product covering numbers satisfy both inequalities") {
  RngStream rng(4);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t n = 2 + rng.uniform_index(5);  // up to 6
    const SimilarityGraph g = random_graph(n, rng.uniform01(), rng);
    const std::size_t base = covering_number(g).number;
    const SimilarityGraph p = product_graph(g);
    const std::size_t prod = covering_number(p, CoveringMode::exact, n * n).number;
    REQUIRE(base <= prod);
    REQUIRE(prod <= base * base);
  }
}

TEST_CASE("restriction never increases the covering number") {
  RngStream rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.uniform_index(9);  // up to 10
    const SimilarityGraph g = random_graph(n, rng.uniform01(), rng);
    std::vector<std::size_t> subset;
    for (std::size_t i = 0; i < n; ++i)
      if (rng.uniform01() < 0.6) subset.push_back(i);
    if (subset.empty()) subset.push_back(0);
    const SimilarityGraph r = restrict_graph(g, subset);
    REQUIRE(covering_number(r).number <= covering_number(g).number);
  }
}

TEST_CASE("restriction edge cases") {
  RngStream rng(6);
  const SimilarityGraph g = random_graph(5, 0.5, rng);
  std::vector<std::size_t> all{0, 1, 2, 3, 4};
  const SimilarityGraph same = restrict_graph(g, all);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) REQUIRE(same.similar(i, j) == g.similar(i, j));
  std::vector<std::size_t> one{3};
  REQUIRE(covering_number(restrict_graph(g, one)).number == 1);
}

TEST_CASE("layerwise similarity is reflexive") {
  RngStream rng(7);
  const ScmNet f = random_net(2, 2, 0.2, rng, true);
  const auto samples = sample(make_segment_pair().a, 300, rng);
  REQUIRE(layerwise_similarity(f, f, samples, 0.01));
}

TEST_CASE("layerwise similarity accepts invariant-gauged copies") {
  RngStream rng(8);
  const DomainPair pair = make_segment_pair();
  const auto samples = sample(pair.a, 400, rng);
  for (int trial = 0; trial < 5; ++trial) {
    const ScmNet f = random_net(2, 2, 0.2, rng);
    std::vector<InvariantMap> taus{random_invariant(2, rng), random_invariant(2, rng)};
    const ScmNet g = apply_gauge(f, taus);
    REQUIRE(layerwise_similarity(f, g, samples, 0.05));
  }
}

TEST_CASE("layerwise similarity separates the two segment solutions") {
  const DomainPair pair = make_segment_pair();
  RngStream rng(9);
  const auto samples = sample(pair.a, 500, rng);
  const ScmNet straight = *pair.y_ab_net;
  const ScmNet flipped = segment_flip_solution_net();
  REQUIRE_FALSE(layerwise_similarity(straight, flipped, samples, 0.1));
}

TEST_CASE("layerwise similarity groups members of the same solution family") {
  // two members of the straight family with different biases compute the
  // same map on the segment; the relation must identify them
  const DomainPair pair = make_segment_pair();
  RngStream rng(10);
  const auto samples = sample(pair.a, 500, rng);
  auto family_member = [&](double b1, double b2) {
    Matrix w = Matrix::from_rows({{1.0, -2.0 * b1}, {0.0, 4.0 - 2.0 * b2}});
    std::vector<AffineLayer> layers;
    layers.push_back(AffineLayer{std::move(w), Vec{b1, b2}});
    layers.push_back(AffineLayer{Matrix::identity(2), std::nullopt});
    return ScmNet(0.2, std::move(layers));
  };
  const ScmNet m0 = family_member(0.0, 0.0);
  const ScmNet m1 = family_member(0.4, -0.3);
  REQUIRE(layerwise_similarity(m0, m1, samples, 0.1));
}

TEST_CASE("layerwise similarity requires equal depth") {
  RngStream rng(11);
  const ScmNet f = random_net(2, 1, 0.2, rng);
  const ScmNet g = random_net(2, 2, 0.2, rng);
  const std::vector<Vec> samples = {Vec{0.1, 0.5}};
  REQUIRE_THROWS_AS(layerwise_similarity(f, g, samples, 0.1), DepthMismatch);
}
