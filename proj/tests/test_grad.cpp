#include <catch2/catch_amalgamated.hpp>

#include "minalign/grad.hpp"

using namespace minalign;

namespace {

// batches whose pre-activations stay away from the kink
std::vector<Vec> kink_free_batch(const ScmNet& net, std::size_t n, RngStream& rng,
                                 double margin = 0.05) {
  std::vector<Vec> batch;
  while (batch.size() < n) {
    const Vec x = normal_vec(net.dim(), rng);
    const ScmForward f = scm_forward(net, x);
    bool ok = true;
    for (const Vec& pre : f.preacts)
      for (double v : pre)
        if (std::abs(v) < margin) ok = false;
    if (ok) batch.push_back(x);
  }
  return batch;
}

}  // namespace

TEST_CASE("risk to target at the minimum has zero gradients") {
  RngStream rng(70);
  const auto net = std::make_shared<ScmNet>(random_net(2, 1, 0.2, rng, true));
  LossSpec spec;
  spec.kind = LossKind::risk_to_target;
  spec.target = net;
  const std::vector<Vec> batch = {Vec{0.5, -0.3}, Vec{1.0, 2.0}};
  const GradResult res = gradients(*net, nullptr, spec, batch);
  REQUIRE(res.loss == 0.0);
  for (double g : res.net_grads) REQUIRE(g == 0.0);
}

TEST_CASE("one-parameter quadratic loss matches the analytic derivative") {
  // net(x) = w x, target(x) = 3 x, loss = mean (w x - 3 x)^2
  const double w = 1.5;
  const ScmNet net(0.2, {AffineLayer{Matrix::from_rows({{w}}), std::nullopt}});
  LossSpec spec;
  spec.kind = LossKind::risk_to_target;
  spec.target = std::make_shared<ScmNet>(
      ScmNet(0.2, {AffineLayer{Matrix::from_rows({{3.0}}), std::nullopt}}));
  const std::vector<Vec> batch = {Vec{1.0}, Vec{2.0}, Vec{-0.5}};
  const GradResult res = gradients(net, nullptr, spec, batch);
  double analytic = 0.0;
  for (const Vec& x : batch) analytic += 2.0 * (w - 3.0) * x[0] * x[0] / batch.size();
  REQUIRE(std::abs(res.net_grads[0] - analytic) <= 1e-12);
}

TEST_CASE("finite differences agree for the mapper losses") {
  RngStream rng(71);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t dim = 2 + rng.uniform_index(3);
    const std::size_t depth = 1 + rng.uniform_index(3);
    const ScmNet net = random_net(dim, depth, 0.2, rng, true);
    const auto batch = kink_free_batch(net, 8, rng);

    LossSpec spec;
    switch (trial % 3) {
      case 0: {
        spec.kind = LossKind::risk_to_target;
        spec.target = std::make_shared<ScmNet>(random_net(dim, 1, 0.2, rng, true));
        break;
      }
      case 1: {
        spec.kind = LossKind::anti_identity;
        break;
      }
      default: {
        spec.kind = LossKind::alg1_composite;
        spec.lambda = 0.7;
        spec.target = std::make_shared<ScmNet>(random_net(dim, 1, 0.2, rng, true));
        spec.critic = std::make_shared<Mlp>(Mlp::make(dim, 2, 8, 0.2, rng));
        break;
      }
    }
    REQUIRE(grad_check(net, nullptr, spec, batch) <= 1e-4);
  }
}

TEST_CASE("finite differences agree for the critic loss") {
  RngStream rng(72);
  const std::size_t dim = 2;
  const ScmNet net = random_net(dim, 1, 0.2, rng, true);
  const Mlp critic = Mlp::make(dim, 2, 8, 0.2, rng);
  LossSpec spec;
  spec.kind = LossKind::gan_critic;
  spec.real_batch = kink_free_batch(net, 8, rng);
  const auto fake = kink_free_batch(net, 8, rng);
  REQUIRE(grad_check(net, &critic, spec, fake) <= 1e-4);
}

TEST_CASE("grad_check rejects out-of-range steps") {
  RngStream rng(73);
  const ScmNet net = random_net(2, 0, 0.2, rng);
  LossSpec spec;
  spec.kind = LossKind::anti_identity;
  const std::vector<Vec> batch = {Vec{1.0, 1.0}};
  REQUIRE_THROWS_AS(grad_check(net, nullptr, spec, batch, 1e-8), Error);
}

TEST_CASE("alg1 composite with lambda zero equals the generator loss") {
  RngStream rng(74);
  const ScmNet net = random_net(2, 1, 0.2, rng, true);
  const auto critic = std::make_shared<Mlp>(Mlp::make(2, 2, 8, 0.2, rng));
  const auto batch = kink_free_batch(net, 16, rng);

  LossSpec gen;
  gen.kind = LossKind::gan_generator;
  gen.critic = critic;
  LossSpec composite;
  composite.kind = LossKind::alg1_composite;
  composite.lambda = 0.0;
  composite.critic = critic;

  const GradResult a = gradients(net, nullptr, gen, batch);
  const GradResult b = gradients(net, nullptr, composite, batch);
  REQUIRE(a.loss == b.loss);
  REQUIRE(a.net_grads == b.net_grads);
}

TEST_CASE("non-finite intermediates raise NonFiniteLoss") {
  const ScmNet net(0.2, {AffineLayer{Matrix::from_rows({{1e200}}), std::nullopt}});
  LossSpec spec;
  spec.kind = LossKind::risk_to_target;
  spec.target = std::make_shared<ScmNet>(ScmNet::identity(0.2, 1));
  const std::vector<Vec> batch = {Vec{1e200}};
  REQUIRE_THROWS_AS(gradients(net, nullptr, spec, batch), NonFiniteLoss);
}

TEST_CASE("adam leaves parameters alone under zero gradients") {
  Vec params{1.0, -2.0, 3.0};
  const Vec grads(3, 0.0);
  OptState st(3);
  optimize_step(params, grads, st);
  REQUIRE(params == Vec{1.0, -2.0, 3.0});
}

TEST_CASE("adam moves against the gradient sign") {
  Vec params{0.0, 0.0};
  OptState st(2, 1e-2);
  const Vec grads{1.0, -2.0};
  for (int i = 0; i < 100; ++i) optimize_step(params, grads, st);
  REQUIRE(params[0] < 0.0);
  REQUIRE(params[1] > 0.0);
}

TEST_CASE("adam converges on a quadratic bowl") {
  // minimize mean (w x - 3 x)^2 over the scalar w
  ScmNet net(0.2, {AffineLayer{Matrix::from_rows({{2.0}}), std::nullopt}});
  LossSpec spec;
  spec.kind = LossKind::risk_to_target;
  spec.target = std::make_shared<ScmNet>(
      ScmNet(0.2, {AffineLayer{Matrix::from_rows({{3.0}}), std::nullopt}}));
  const std::vector<Vec> batch = {Vec{1.0}, Vec{0.5}, Vec{2.0}};

  Vec params = pack(net);
  OptState st(params.size());
  int steps = 0;
  for (; steps < 5000; ++steps) {
    unpack(net, params);
    const GradResult res = gradients(net, nullptr, spec, batch);
    optimize_step(params, res.net_grads, st);
    if (std::abs(params[0] - 3.0) <= 1e-4) break;
  }
  REQUIRE(std::abs(params[0] - 3.0) <= 1e-4);
  REQUIRE(steps < 5000);
}

TEST_CASE("guarded trainer rejects steps into singular layers") {
  const Matrix w = Matrix::from_rows({{1.0, 0.0}, {0.0, 1e-9}});
  const ScmNet net(0.2, {AffineLayer{w, std::nullopt}});
  GuardedNetTrainer trainer(net, 1e-9);
  const Vec grads{0.0, 0.0, 0.0, 1.0};
  trainer.step(grads);
  REQUIRE(trainer.guard_trips() == 1);
  REQUIRE(trainer.net().layers()[0].W(1, 1) == 1e-9);
  REQUIRE(is_invertible(trainer.net().layers()[0].W, 1e-10));
}

TEST_CASE("guarded trainer keeps ordinary steps") {
  RngStream rng(75);
  const ScmNet net = random_net(2, 1, 0.2, rng);
  GuardedNetTrainer trainer(net, 1e-3);
  Vec grads(pack(net).size(), 0.1);
  for (int i = 0; i < 50; ++i) trainer.step(grads);
  REQUIRE(trainer.guard_trips() == 0);
  for (const auto& l : trainer.net().layers()) REQUIRE(is_invertible(l.W, 1e-10));
}

TEST_CASE("scm backward matches the input gradient numerically") {
  RngStream rng(76);
  const ScmNet net = random_net(3, 2, 0.2, rng, true);
  const Vec x = kink_free_batch(net, 1, rng)[0];
  const ScmForward f = scm_forward(net, x);
  // scalar probe loss: sum of outputs
  Vec grads;
  const Vec din = scm_backward(net, f, Vec(3, 1.0), grads);
  const double h = 1e-6;
  for (std::size_t i = 0; i < x.size(); ++i) {
    Vec xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    double up = 0.0, dn = 0.0;
    for (double v : net.eval(xp)) up += v;
    for (double v : net.eval(xm)) dn += v;
    const double fd = (up - dn) / (2.0 * h);
    REQUIRE(din[i] == Catch::Approx(fd).margin(1e-5));
  }
}
