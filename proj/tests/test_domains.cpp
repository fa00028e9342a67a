#include <catch2/catch_amalgamated.hpp>

#include <cstdio>

#include "minalign/domains.hpp"

using namespace minalign;

TEST_CASE("segment samples sit on the segment") {
  const DomainPair pair = make_segment_pair();
  RngStream rng(1);
  const auto xs = sample(pair.a, 3, rng);
  for (const Vec& x : xs) {
    REQUIRE(x[1] == 0.5);
    REQUIRE(x[0] >= 0.0);
    REQUIRE(x[0] < 1.0);
  }
}

TEST_CASE("segment ground truth and its flipped alternative") {
  const DomainPair pair = make_segment_pair();
  const Vec x{0.3, 0.5};
  const Vec y = pair.y_ab(x);
  REQUIRE(y[0] == Catch::Approx(0.3));
  REQUIRE(y[1] == Catch::Approx(2.0));
  const Vec y2 = pair.y_ab_alt(x);
  REQUIRE(y2[0] == Catch::Approx(0.7));
  REQUIRE(y2[1] == Catch::Approx(2.0));
}

TEST_CASE("toy-family nets realize both segment solutions") {
  const DomainPair pair = make_segment_pair();
  RngStream rng(2);
  const auto xs = sample(pair.a, 200, rng);
  for (const Vec& x : xs) {
    const Vec y = pair.y_ab_net->eval(x);
    REQUIRE(y[0] == Catch::Approx(x[0]).margin(1e-12));
    REQUIRE(y[1] == Catch::Approx(2.0).margin(1e-12));
  }
  const ScmNet flip = segment_flip_solution_net();
  for (const Vec& x : xs) {
    const Vec y = flip.eval(x);
    REQUIRE(y[0] == Catch::Approx(1.0 - x[0]).margin(1e-12));
    REQUIRE(y[1] == Catch::Approx(2.0).margin(1e-12));
  }
}

TEST_CASE("sampling is deterministic given the stream") {
  const DomainPair pair = make_segment_pair();
  RngStream r1(9), r2(9);
  REQUIRE(sample(pair.a, 100, r1) == sample(pair.a, 100, r2));
}

TEST_CASE("uniform segment first-coordinate mean") {
  const DomainPair pair = make_segment_pair();
  RngStream rng(10);
  const auto xs = sample(pair.a, 10000, rng);
  double mean = 0.0;
  for (const Vec& x : xs) mean += x[0];
  mean /= static_cast<double>(xs.size());
  REQUIRE(std::abs(mean - 0.5) <= 0.02);
}

TEST_CASE("triangular segment breaks the flip symmetry") {
  const DomainPair pair = make_asym_segment_pair();
  RngStream rng(11);
  const auto xs = sample(pair.a, 20000, rng);
  double mean = 0.0;
  for (const Vec& x : xs) mean += x[0];
  mean /= static_cast<double>(xs.size());
  // density 2t has mean 2/3
  REQUIRE(std::abs(mean - 2.0 / 3.0) <= 0.02);
  REQUIRE_FALSE(static_cast<bool>(pair.y_ab_alt));

  // the flip map visibly changes the triangular distribution
  const auto grid = grid_sample(pair.a, 512);
  const ScmNet flip = segment_flip_net(pair.a);
  std::vector<Vec> flipped;
  for (const Vec& x : grid) flipped.push_back(flip.eval(x));
  REQUIRE(discrepancy_grid_oracle(grid, flipped) > 0.2);
}

TEST_CASE("the flip is an exact symmetry of the uniform segment grid") {
  const DomainPair pair = make_segment_pair();
  const auto grid = grid_sample(pair.b, 512);
  const ScmNet flip = segment_flip_net(pair.b);
  std::vector<Vec> flipped;
  for (const Vec& x : grid) flipped.push_back(flip.eval(x));
  REQUIRE(discrepancy_grid_oracle(grid, flipped) == 0.0);
}

TEST_CASE("finite domains reproduce their masses") {
  const Domain dom = Domain::finite({Vec{0.0}, Vec{1.0}, Vec{2.0}}, Vec{0.5, 0.3, 0.2});
  RngStream rng(12);
  const auto xs = sample(dom, 20000, rng);
  Vec freq(3, 0.0);
  for (const Vec& x : xs) freq[static_cast<std::size_t>(x[0])] += 1.0;
  for (double& f : freq) f /= static_cast<double>(xs.size());
  const Vec masses{0.5, 0.3, 0.2};
  for (std::size_t i = 0; i < 3; ++i) {
    const double sigma = std::sqrt(masses[i] * (1.0 - masses[i]) / 20000.0);
    REQUIRE(std::abs(freq[i] - masses[i]) <= 3.0 * sigma);
  }
}

TEST_CASE("latent pair with equal decoders has identity ground truth") {
  RngStream rng(13);
  const ScmNet dec = random_net(2, 1, 0.2, rng);
  const Domain z = Domain::segment(SegmentSpec{0.0, 1.0, 1.0, 2, false});
  const DomainPair pair = make_latent_pair(z, dec, dec);
  RngStream eval_rng(14);
  const AlignmentError err = alignment_error(ScmNet::identity(0.2, 2), pair, 500, eval_rng);
  REQUIRE(err.primary <= 1e-18);
}

TEST_CASE("latent decoders round trip") {
  const DomainPair pair = make_zigzag_pair();
  RngStream rng(15);
  const ScmNet inv = invert_net(*pair.y_b);
  for (int i = 0; i < 1000; ++i) {
    const Vec z = draw(*pair.latent, rng);
    const Vec back = inv.eval(pair.y_b->eval(z));
    REQUIRE(norm_inf(back - z) <= 1e-9);
  }
}

TEST_CASE("generative consistency of the preset pairs") {
  for (const std::string& name : preset_names()) {
    const DomainPair pair = preset_pair(name);
    if (!pair.latent) continue;
    RngStream r1(16), r2(17);
    // decode latent draws by hand and compare against the domain sampler
    std::vector<Vec> decoded;
    for (int i = 0; i < 5000; ++i) decoded.push_back(pair.y_a->eval(draw(*pair.latent, r1)));
    const auto direct = sample(pair.a, 5000, r2);
    REQUIRE(energy_distance(decoded, direct) <= 0.05);
  }
}

TEST_CASE("ground-truth alignment error vanishes") {
  for (const std::string& name : preset_names()) {
    const DomainPair pair = preset_pair(name);
    RngStream rng(18);
    const AlignmentError err = alignment_error(*pair.y_ab_net, pair, 1000, rng);
    REQUIRE(err.primary <= 1e-10);
    REQUIRE(err.best <= 1e-10);
  }
}

TEST_CASE("constant map alignment error matches the closed form") {
  const DomainPair pair = make_segment_pair();
  const Vec c{0.2, 1.0};
  const auto const_map = [&c](const Vec&) { return c; };
  RngStream rng(19);
  const AlignmentError err = alignment_error(const_map, pair, 200000, rng);
  // E (t - c1)^2 + (2 - c2)^2 over t ~ U[0,1)
  const double expected = (c[0] * c[0] - c[0] + 1.0 / 3.0) + (2.0 - c[1]) * (2.0 - c[1]);
  REQUIRE(err.primary == Catch::Approx(expected).epsilon(0.02));
}

TEST_CASE("alignment error without ground truth raises") {
  DomainPair pair = make_segment_pair();
  pair.y_ab = nullptr;
  RngStream rng(20);
  REQUIRE_THROWS_AS(alignment_error(ScmNet::identity(0.2, 2), pair, 10, rng), NoGroundTruth);
}

TEST_CASE("zigzag ground truth is a four-piece fold") {
  const DomainPair pair = make_zigzag_pair();
  REQUIRE(pair.y_ab_net->depth() == 2);
  REQUIRE(pair.y_ab_net->bias_free());
  // direction changes of the image polyline at the three kinks
  auto image = [&](double t) { return pair.y_b->eval(Vec{t, 1.0}); };
  auto direction = [&](double t0, double t1) {
    const Vec p = image(t0), q = image(t1);
    const double dx = q[0] - p[0], dy = q[1] - p[1];
    const double n = std::sqrt(dx * dx + dy * dy);
    return std::pair<double, double>{dx / n, dy / n};
  };
  const std::vector<std::pair<double, double>> mids = {
      direction(-1.0, -0.51), direction(-0.49, -0.01), direction(0.01, 0.49),
      direction(0.51, 1.0)};
  for (std::size_t i = 0; i + 1 < mids.size(); ++i) {
    const double cross = mids[i].first * mids[i + 1].second - mids[i].second * mids[i + 1].first;
    REQUIRE(std::abs(cross) > 0.05);  // a genuine turn at every kink
  }
  // Lipschitz bound of the ground truth stays modest
  double lip = 1.0;
  for (const auto& l : pair.y_ab_net->layers()) {
    double rowmax = 0.0;
    for (std::size_t r = 0; r < l.W.rows(); ++r) rowmax = std::max(rowmax, norm2(l.W.row(r)));
    lip *= rowmax * std::sqrt(2.0);
  }
  REQUIRE(lip <= 10.0 * std::sqrt(2.0) * std::sqrt(2.0));
}

TEST_CASE("csv loading and errors") {
  const std::string good = "/tmp/minalign_good.csv";
  {
    std::ofstream out(good);
    for (int i = 0; i < 100; ++i) out << i * 0.25 << "," << -i * 0.5 << "\n";
  }
  const Domain dom = load_points_csv(good);
  REQUIRE(dom.dim == 2);
  REQUIRE(std::get<FiniteSupport>(dom.spec).points.size() == 100);

  const std::string ragged = "/tmp/minalign_ragged.csv";
  {
    std::ofstream out(ragged);
    out << "1,2\n3,4\n5\n";
  }
  try {
    load_points_csv(ragged);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    REQUIRE(std::string(e.what()).find("row 3") != std::string::npos);
  }

  const std::string junk = "/tmp/minalign_junk.csv";
  {
    std::ofstream out(junk);
    out << "1,2\n3,oops\n";
  }
  REQUIRE_THROWS_AS(load_points_csv(junk), ParseError);
}

TEST_CASE("csv round trip preserves values bit exactly") {
  RngStream rng(21);
  std::vector<Vec> rows;
  for (int i = 0; i < 50; ++i) rows.push_back(normal_vec(3, rng));
  const std::string path = "/tmp/minalign_roundtrip.csv";
  save_points_csv(path, rows);
  const Domain dom = load_points_csv(path);
  const auto& support = std::get<FiniteSupport>(dom.spec).points;
  REQUIRE(support == rows);
}

TEST_CASE("reversed pairs invert the ground truth") {
  const DomainPair pair = make_segment_pair();
  const DomainPair rev = reversed(pair);
  RngStream rng(22);
  const auto xs = sample(rev.a, 100, rng);
  for (const Vec& x : xs) {
    const Vec y = rev.y_ab(x);
    REQUIRE(y[0] == Catch::Approx(x[0]).margin(1e-9));
    REQUIRE(y[1] == Catch::Approx(0.5).margin(1e-9));
  }
}
