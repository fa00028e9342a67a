// Training pipelines: adversarial mapping (GAN-only), the circularity
// baseline with its permutation-ambiguity demo, the two-stage
// complexity-regularized algorithm, complexity sweeps, self-map runs with an
// anti-identity penalty, and the empirical mapping census.
//
// Every pipeline is a deterministic function of (domain pair, config,
// stream): batches, inits and evaluation sets are all drawn from forks of
// the passed stream.
#pragma once

#include <atomic>
#include <chrono>
#include <thread>

#include "minalign/counting.hpp"

namespace minalign {

class NoDepthSatisfies : public Error {
 public:
  using Error::Error;
};

struct TrainConfig {
  int epochs = 50;
  int steps_per_epoch = 120;
  int batch = 64;
  double lr_gen = 2e-3;
  double lr_critic = 4e-3;
  int critic_depth = 2;  // m of the discriminator class
  int critic_steps = 2;  // critic updates per generator step
  double lambda = 1.0;   // stage-2 regularizer weight
  double eps0 = 0.1;     // discrepancy threshold on the grid-oracle scale
  double anti_identity_weight = 1.0;
  double anneal_tail = 0.1;  // final fraction of epochs with the penalty off
  double lr_decay = 0.1;       // generator lr anneals to lr * lr_decay
  double critic_lr_decay = 1.0;  // critic lr schedule (1 = constant)
  double logdet_weight = 1e-3;  // soft conditioning pressure on mapper layers
  int restarts = 2;          // independent inits per run; best final disc kept
  double init_noise = 0.3;   // mapper init: W = I + noise * N(0,1)
  double ema_decay = 0.998;  // weight averaging of the mapper across steps
  double ema_start = 0.3;    // fraction of training before averaging begins
  double instance_noise = 0.05;  // critic-input noise, annealed linearly to 0
  std::size_t train_samples = 2048;
  std::size_t eval_samples = 2048;
  GridOracleConfig grid{};
  DiscrepancyConfig adversarial{};
  int workers = 1;  // sweep/census parallelism

  nlohmann::json to_json() const {
    return nlohmann::json{{"epochs", epochs},
                          {"steps_per_epoch", steps_per_epoch},
                          {"batch", batch},
                          {"lr_gen", lr_gen},
                          {"lr_critic", lr_critic},
                          {"critic_depth", critic_depth},
                          {"critic_steps", critic_steps},
                          {"lambda", lambda},
                          {"eps0", eps0},
                          {"anti_identity_weight", anti_identity_weight},
                          {"anneal_tail", anneal_tail},
                          {"lr_decay", lr_decay},
                          {"critic_lr_decay", critic_lr_decay},
                          {"logdet_weight", logdet_weight},
                          {"restarts", restarts},
                          {"init_noise", init_noise},
                          {"ema_decay", ema_decay},
                          {"ema_start", ema_start},
                          {"instance_noise", instance_noise},
                          {"train_samples", train_samples},
                          {"eval_samples", eval_samples},
                          {"grid_directions", grid.directions},
                          {"grid_thresholds", grid.thresholds},
                          {"workers", workers}};
  }
};

struct RunRecord {
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::uint64_t substream = 0;
  double wall_seconds = 0.0;
  std::vector<double> disc_trace;    // grid-oracle discrepancy per eval epoch
  std::vector<double> align_trace;   // best alignment error per eval epoch
  std::vector<double> risk_g_trace;  // distance to the frozen g per eval epoch
  double final_grid_disc = -1.0;
  double final_adv_disc = -1.0;
  double final_align_primary = -1.0;
  double final_align_best = -1.0;
  double risk_to_g = -1.0;
  double cycle_risk_a = -1.0;
  double cycle_risk_b = -1.0;
  double identity_distance = -1.0;
  int guard_trips = 0;
  nlohmann::json nets;

  nlohmann::json to_json() const {
    return nlohmann::json{{"config", config},
                          {"seed", seed},
                          {"substream", substream},
                          {"wall_seconds", wall_seconds},
                          {"disc_trace", disc_trace},
                          {"align_trace", align_trace},
                          {"risk_g_trace", risk_g_trace},
                          {"final_grid_disc", final_grid_disc},
                          {"final_adv_disc", final_adv_disc},
                          {"final_align_primary", final_align_primary},
                          {"final_align_best", final_align_best},
                          {"risk_to_g", risk_to_g},
                          {"cycle_risk_a", cycle_risk_a},
                          {"cycle_risk_b", cycle_risk_b},
                          {"identity_distance", identity_distance},
                          {"guard_trips", guard_trips},
                          {"nets", nets}};
  }
};

namespace detail {

inline ScmNet init_mapper(std::size_t dim, std::size_t depth, double leak, double noise,
                          RngStream& rng) {
  std::vector<AffineLayer> layers;
  layers.reserve(depth + 1);
  for (std::size_t i = 0; i <= depth; ++i) {
    for (int attempt = 0;; ++attempt) {
      Matrix w = Matrix::identity(dim);
      for (double& v : w.data()) v += noise * rng.normal();
      if (condition_estimate(w) <= 1e4) {
        AffineLayer l{std::move(w), Vec(dim, 0.0)};
        layers.push_back(std::move(l));
        break;
      }
      if (attempt > 200) throw Error("init_mapper: cannot draw a well-conditioned init");
    }
  }
  return ScmNet(leak, std::move(layers));
}

inline const Vec& pick(const std::vector<Vec>& pool, RngStream& rng) {
  return pool[rng.uniform_index(pool.size())];
}

// Volume anchor mu * (log|det W|)^2 per layer; its gradient is
// 2 mu log|det W| * W^{-T}. Pushes layers away from both collapse and
// blow-up, with zero force at unit volume.
inline void add_logdet_barrier(const ScmNet& net, double mu, Vec& grads) {
  if (mu == 0.0) return;
  const NetLayout layout = layout_of(net);
  for (std::size_t li = 0; li < net.layers().size(); ++li) {
    const auto lu = lu_factor(net.layers()[li].W);
    double log_abs_det = 0.0;
    for (std::size_t i = 0; i < lu.perm.size(); ++i)
      log_abs_det += std::log(std::abs(lu.lu(i, i)));
    const Matrix inv = invert_matrix(net.layers()[li].W);
    const std::size_t m = inv.rows();
    const double coeff = 2.0 * mu * log_abs_det;
    double* gw = grads.data() + layout.layers[li].offset;
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < m; ++c) gw[r * m + c] += coeff * inv(c, r);
  }
}

inline double epoch_decay(double decay, int epoch, int epochs) {
  if (epochs <= 1 || decay >= 1.0) return 1.0;
  const double frac = static_cast<double>(epoch) / static_cast<double>(epochs - 1);
  return std::pow(decay, frac);
}

inline Vec jitter(Vec x, double sigma, RngStream& rng) {
  if (sigma > 0.0)
    for (double& v : x) v += sigma * rng.normal();
  return x;
}

inline void critic_update(Mlp& critic, Vec& params, OptState& opt, const ScmNet& mapper,
                          const std::vector<Vec>& pool_src, const std::vector<Vec>& pool_real,
                          int batch, double noise, RngStream& rng) {
  Vec grads(critic.param_count(), 0.0);
  const double inv = 1.0 / static_cast<double>(batch);
  double loss = 0.0;
  for (int i = 0; i < batch; ++i) {
    const MlpForward fr = mlp_forward(critic, jitter(pick(pool_real, rng), noise, rng));
    loss += (fr.output - 1.0) * (fr.output - 1.0) * inv;
    mlp_backward(critic, fr, 2.0 * (fr.output - 1.0) * inv, grads);
    const MlpForward ff =
        mlp_forward(critic, jitter(mapper.eval(pick(pool_src, rng)), noise, rng));
    loss += ff.output * ff.output * inv;
    mlp_backward(critic, ff, 2.0 * ff.output * inv, grads);
  }
  if (!std::isfinite(loss)) throw TrainingDiverged("critic loss diverged");
  optimize_step(params, grads, opt);
  unpack(critic, params);
}

// Exponential moving average of the mapper parameters: near the adversarial
// equilibrium the raw iterate orbits it, and the average lands much closer.
struct EmaTracker {
  Vec avg;
  double decay = 0.998;
  bool active = false;

  void update(const Vec& params) {
    if (!active) {
      avg = params;
      active = true;
      return;
    }
    for (std::size_t i = 0; i < params.size(); ++i)
      avg[i] = decay * avg[i] + (1.0 - decay) * params[i];
  }
};

struct MapperTrainOutcome {
  ScmNet net;
  RunRecord record;
  double final_disc = 2.0;  // grid-oracle value used for restart selection
};

// Core adversarial mapper training: h minimizes the generator loss plus an
// optional distance-to-g term (stage 2), plus an optional anti-identity
// penalty (self-map runs). One restart.
inline MapperTrainOutcome train_mapper_once(const DomainPair& pair, std::size_t depth,
                                            const TrainConfig& cfg,
                                            const ScmNet* frozen_g, double lambda,
                                            double anti_identity_weight, RngStream run_rng) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t dim = pair.a.dim;
  RngStream data_rng = run_rng.fork(0);
  RngStream init_rng = run_rng.fork(1);
  RngStream batch_rng = run_rng.fork(2);
  RngStream eval_rng = run_rng.fork(3);

  const std::vector<Vec> pool_a = sample(pair.a, cfg.train_samples, data_rng);
  const std::vector<Vec> pool_b = sample(pair.b, cfg.train_samples, data_rng);
  const std::vector<Vec> eval_a = sample(pair.a, cfg.eval_samples, eval_rng);
  const std::vector<Vec> eval_b = sample(pair.b, cfg.eval_samples, eval_rng);

  GuardedNetTrainer gen(init_mapper(dim, depth, pair.leak, cfg.init_noise, init_rng),
                        cfg.lr_gen);
  // least-squares adversarial objective: the training critic has a linear
  // head (a squashed head saturates and starves the generator of gradient)
  Mlp critic = Mlp::make(dim, static_cast<std::size_t>(cfg.critic_depth),
                         std::max<std::size_t>(8, 4 * dim), pair.leak, init_rng,
                         /*sigmoid_head=*/false);
  Vec critic_params = pack(critic);
  OptState critic_opt(critic_params.size(), cfg.lr_critic);

  RunRecord rec;
  rec.config = cfg.to_json();
  rec.seed = run_rng.seed();
  rec.substream = run_rng.substream();

  const int anneal_start = cfg.epochs - static_cast<int>(cfg.anneal_tail * cfg.epochs);
  const int ema_start_epoch = static_cast<int>(cfg.ema_start * cfg.epochs);
  EmaTracker ema;
  ema.decay = cfg.ema_decay;
  std::vector<Vec> pushed(eval_a.size());

  auto eval_disc = [&](const ScmNet& h) {
    for (std::size_t i = 0; i < eval_a.size(); ++i) pushed[i] = h.eval(eval_a[i]);
    return discrepancy_grid_oracle(pushed, eval_b, cfg.grid);
  };

  // the reported mapper is the averaged net at its best evaluation epoch
  std::optional<ScmNet> best_net;
  double best_disc = 2.0;

  auto averaged_net = [&]() -> std::optional<ScmNet> {
    if (!ema.active) return std::nullopt;
    ScmNet candidate = gen.net();
    try {
      unpack(candidate, ema.avg);
      for (const auto& l : candidate.layers())
        if (!is_invertible(l.W, 1e-10)) return std::nullopt;
    } catch (const Error&) {
      return std::nullopt;
    }
    return candidate;
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double anti_w = (epoch < anneal_start) ? anti_identity_weight : 0.0;
    gen.opt().lr = cfg.lr_gen * epoch_decay(cfg.lr_decay, epoch, cfg.epochs);
    critic_opt.lr = cfg.lr_critic * epoch_decay(cfg.critic_lr_decay, epoch, cfg.epochs);
    const double noise =
        cfg.instance_noise * (1.0 - static_cast<double>(epoch) / cfg.epochs);
    for (int step = 0; step < cfg.steps_per_epoch; ++step) {
      for (int cs = 0; cs < cfg.critic_steps; ++cs)
        critic_update(critic, critic_params, critic_opt, gen.net(), pool_a, pool_b, cfg.batch,
                      noise, batch_rng);

      Vec grads(pack(gen.net()).size(), 0.0);
      const double inv = 1.0 / static_cast<double>(cfg.batch);
      double loss = 0.0;
      for (int i = 0; i < cfg.batch; ++i) {
        const Vec& x = pick(pool_a, batch_rng);
        const ScmForward f = scm_forward(gen.net(), x);
        const MlpForward cf = mlp_forward(critic, f.output);
        const double d = cf.output - 1.0;
        loss += d * d * inv;
        Vec scratch(critic.param_count(), 0.0);
        Vec dout = mlp_backward(critic, cf, 2.0 * d * inv, scratch);
        if (frozen_g && lambda != 0.0) {
          const Vec t = frozen_g->eval(x);
          for (std::size_t c = 0; c < dim; ++c) {
            const double r = f.output[c] - t[c];
            loss += lambda * r * r * inv;
            dout[c] += lambda * 2.0 * r * inv;
          }
        }
        if (anti_w != 0.0) {
          for (std::size_t c = 0; c < dim; ++c) {
            const double d1 = x[c] - f.output[c];
            loss -= anti_w * std::abs(d1) * inv;
            dout[c] += anti_w * (d1 > 0.0 ? 1.0 : (d1 < 0.0 ? -1.0 : 0.0)) * inv;
          }
        }
        scm_backward(gen.net(), f, std::move(dout), grads);
      }
      if (!std::isfinite(loss)) throw TrainingDiverged("generator loss diverged");
      add_logdet_barrier(gen.net(), cfg.logdet_weight, grads);
      gen.step(grads);
      if (epoch >= ema_start_epoch) ema.update(pack(gen.net()));
    }

    const std::optional<ScmNet> avg = averaged_net();
    const ScmNet& eval_net = avg ? *avg : gen.net();
    const double disc_now = eval_disc(eval_net);
    rec.disc_trace.push_back(disc_now);
    if (disc_now < best_disc) {
      best_disc = disc_now;
      best_net = eval_net;
    }
    if (pair.has_ground_truth()) {
      double acc = 0.0;
      for (std::size_t i = 0; i < eval_a.size(); ++i)
        acc += sq_dist(eval_net.eval(eval_a[i]), pair.y_ab(eval_a[i]));
      double best = acc / static_cast<double>(eval_a.size());
      if (pair.y_ab_alt) {
        acc = 0.0;
        for (std::size_t i = 0; i < eval_a.size(); ++i)
          acc += sq_dist(eval_net.eval(eval_a[i]), pair.y_ab_alt(eval_a[i]));
        best = std::min(best, acc / static_cast<double>(eval_a.size()));
      }
      rec.align_trace.push_back(best);
    }
    if (frozen_g) {
      double acc = 0.0;
      for (std::size_t i = 0; i < eval_a.size(); ++i)
        acc += sq_dist(eval_net.eval(eval_a[i]), frozen_g->eval(eval_a[i]));
      rec.risk_g_trace.push_back(acc / static_cast<double>(eval_a.size()));
    }
  }

  const ScmNet selected = best_net ? *best_net : gen.net();
  rec.final_grid_disc = best_disc < 2.0 ? best_disc : eval_disc(selected);
  if (pair.has_ground_truth()) {
    double acc = 0.0;
    for (std::size_t i = 0; i < eval_a.size(); ++i)
      acc += sq_dist(selected.eval(eval_a[i]), pair.y_ab(eval_a[i]));
    rec.final_align_primary = acc / static_cast<double>(eval_a.size());
    rec.final_align_best = rec.final_align_primary;
    if (pair.y_ab_alt) {
      acc = 0.0;
      for (std::size_t i = 0; i < eval_a.size(); ++i)
        acc += sq_dist(selected.eval(eval_a[i]), pair.y_ab_alt(eval_a[i]));
      rec.final_align_best =
          std::min(rec.final_align_best, acc / static_cast<double>(eval_a.size()));
    }
  }
  if (frozen_g) {
    double acc = 0.0;
    for (std::size_t i = 0; i < eval_a.size(); ++i)
      acc += sq_dist(selected.eval(eval_a[i]), frozen_g->eval(eval_a[i]));
    rec.risk_to_g = acc / static_cast<double>(eval_a.size());
  }
  rec.guard_trips = gen.guard_trips();
  rec.nets = nlohmann::json{{"h", minalign::to_json(selected)}};
  rec.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  MapperTrainOutcome out{selected, std::move(rec), 0.0};
  out.final_disc = out.record.final_grid_disc;
  return out;
}

inline MapperTrainOutcome train_mapper(const DomainPair& pair, std::size_t depth,
                                       const TrainConfig& cfg, const ScmNet* frozen_g,
                                       double lambda, double anti_identity_weight,
                                       RngStream stream) {
  std::optional<MapperTrainOutcome> best;
  for (int r = 0; r < std::max(1, cfg.restarts); ++r) {
    MapperTrainOutcome out = train_mapper_once(pair, depth, cfg, frozen_g, lambda,
                                               anti_identity_weight, stream.fork(100 + r));
    if (!best || out.final_disc < best->final_disc) best = std::move(out);
  }
  return std::move(*best);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// GAN-only mapping

struct MapperRun {
  ScmNet net;
  RunRecord record;
};

inline MapperRun gan_train(const DomainPair& pair, std::size_t depth, const TrainConfig& cfg,
                           RngStream stream) {
  detail::MapperTrainOutcome out =
      detail::train_mapper(pair, depth, cfg, nullptr, 0.0, 0.0, stream);
  // post-hoc adversarial lower bound with a fresh critic and fresh samples
  RngStream adv_rng = stream.fork(7777);
  std::vector<Vec> xs = sample(pair.a, cfg.eval_samples, adv_rng);
  for (Vec& x : xs) x = out.net.eval(x);
  const std::vector<Vec> ys = sample(pair.b, cfg.eval_samples, adv_rng);
  out.record.final_adv_disc =
      discrepancy_adversarial(xs, ys, static_cast<std::size_t>(cfg.critic_depth),
                              cfg.adversarial, adv_rng)
          .estimate;
  return MapperRun{std::move(out.net), std::move(out.record)};
}

// ---------------------------------------------------------------------------
// circularity training (two mappers, two critics, cycle risks)

struct CycleRun {
  ScmNet h;        // A -> B
  ScmNet h_prime;  // B -> A
  RunRecord record;
};

inline CycleRun cycle_train(const DomainPair& pair, std::size_t depth, const TrainConfig& cfg,
                            RngStream stream, double anti_identity_weight = 0.0) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t dim = pair.a.dim;
  RngStream data_rng = stream.fork(0);
  RngStream init_rng = stream.fork(1);
  RngStream batch_rng = stream.fork(2);
  RngStream eval_rng = stream.fork(3);

  const std::vector<Vec> pool_a = sample(pair.a, cfg.train_samples, data_rng);
  const std::vector<Vec> pool_b = sample(pair.b, cfg.train_samples, data_rng);
  const std::vector<Vec> eval_a = sample(pair.a, cfg.eval_samples, eval_rng);
  const std::vector<Vec> eval_b = sample(pair.b, cfg.eval_samples, eval_rng);

  GuardedNetTrainer gen_h(detail::init_mapper(dim, depth, pair.leak, cfg.init_noise, init_rng),
                          cfg.lr_gen);
  GuardedNetTrainer gen_hp(detail::init_mapper(dim, depth, pair.leak, cfg.init_noise, init_rng),
                           cfg.lr_gen);
  Mlp critic_b = Mlp::make(dim, static_cast<std::size_t>(cfg.critic_depth),
                           std::max<std::size_t>(8, 4 * dim), pair.leak, init_rng,
                           /*sigmoid_head=*/false);
  Mlp critic_a = Mlp::make(dim, static_cast<std::size_t>(cfg.critic_depth),
                           std::max<std::size_t>(8, 4 * dim), pair.leak, init_rng,
                           /*sigmoid_head=*/false);
  Vec cb_params = pack(critic_b), ca_params = pack(critic_a);
  OptState cb_opt(cb_params.size(), cfg.lr_critic), ca_opt(ca_params.size(), cfg.lr_critic);

  RunRecord rec;
  rec.config = cfg.to_json();
  rec.seed = stream.seed();
  rec.substream = stream.substream();

  const int anneal_start = cfg.epochs - static_cast<int>(cfg.anneal_tail * cfg.epochs);
  const double inv = 1.0 / static_cast<double>(cfg.batch);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double anti_w = (epoch < anneal_start) ? anti_identity_weight : 0.0;
    const double gen_lr = cfg.lr_gen * detail::epoch_decay(cfg.lr_decay, epoch, cfg.epochs);
    const double critic_lr =
        cfg.lr_critic * detail::epoch_decay(cfg.critic_lr_decay, epoch, cfg.epochs);
    gen_h.opt().lr = gen_lr;
    gen_hp.opt().lr = gen_lr;
    cb_opt.lr = critic_lr;
    ca_opt.lr = critic_lr;
    const double noise =
        cfg.instance_noise * (1.0 - static_cast<double>(epoch) / cfg.epochs);
    for (int step = 0; step < cfg.steps_per_epoch; ++step) {
      for (int cs = 0; cs < cfg.critic_steps; ++cs) {
        detail::critic_update(critic_b, cb_params, cb_opt, gen_h.net(), pool_a, pool_b,
                              cfg.batch, noise, batch_rng);
        detail::critic_update(critic_a, ca_params, ca_opt, gen_hp.net(), pool_b, pool_a,
                              cfg.batch, noise, batch_rng);
      }

      Vec grads_h(pack(gen_h.net()).size(), 0.0);
      Vec grads_hp(pack(gen_hp.net()).size(), 0.0);
      double loss = 0.0;
      Vec scratch;
      for (int i = 0; i < cfg.batch; ++i) {
        const Vec& xa = detail::pick(pool_a, batch_rng);
        const Vec& xb = detail::pick(pool_b, batch_rng);

        // adversarial terms
        {
          const ScmForward fh = scm_forward(gen_h.net(), xa);
          const MlpForward cf = mlp_forward(critic_b, fh.output);
          const double d = cf.output - 1.0;
          loss += d * d * inv;
          scratch.assign(critic_b.param_count(), 0.0);
          Vec dout = mlp_backward(critic_b, cf, 2.0 * d * inv, scratch);
          if (anti_w != 0.0) {
            for (std::size_t c = 0; c < dim; ++c) {
              const double d1 = xa[c] - fh.output[c];
              loss -= anti_w * std::abs(d1) * inv;
              dout[c] += anti_w * (d1 > 0.0 ? 1.0 : (d1 < 0.0 ? -1.0 : 0.0)) * inv;
            }
          }
          scm_backward(gen_h.net(), fh, std::move(dout), grads_h);
        }
        {
          const ScmForward fp = scm_forward(gen_hp.net(), xb);
          const MlpForward cf = mlp_forward(critic_a, fp.output);
          const double d = cf.output - 1.0;
          loss += d * d * inv;
          scratch.assign(critic_a.param_count(), 0.0);
          Vec dout = mlp_backward(critic_a, cf, 2.0 * d * inv, scratch);
          scm_backward(gen_hp.net(), fp, std::move(dout), grads_hp);
        }

        // cycle risks: h' o h on A and h o h' on B
        {
          const ScmForward fh = scm_forward(gen_h.net(), xa);
          const ScmForward fp = scm_forward(gen_hp.net(), fh.output);
          Vec dout(dim);
          for (std::size_t c = 0; c < dim; ++c) {
            const double r = fp.output[c] - xa[c];
            loss += r * r * inv;
            dout[c] = 2.0 * r * inv;
          }
          const Vec dmid = scm_backward(gen_hp.net(), fp, std::move(dout), grads_hp);
          scm_backward(gen_h.net(), fh, dmid, grads_h);
        }
        {
          const ScmForward fp = scm_forward(gen_hp.net(), xb);
          const ScmForward fh = scm_forward(gen_h.net(), fp.output);
          Vec dout(dim);
          for (std::size_t c = 0; c < dim; ++c) {
            const double r = fh.output[c] - xb[c];
            loss += r * r * inv;
            dout[c] = 2.0 * r * inv;
          }
          const Vec dmid = scm_backward(gen_h.net(), fh, std::move(dout), grads_h);
          scm_backward(gen_hp.net(), fp, dmid, grads_hp);
        }
      }
      if (!std::isfinite(loss)) throw TrainingDiverged("cycle loss diverged");
      detail::add_logdet_barrier(gen_h.net(), cfg.logdet_weight, grads_h);
      detail::add_logdet_barrier(gen_hp.net(), cfg.logdet_weight, grads_hp);
      gen_h.step(grads_h);
      gen_hp.step(grads_hp);
    }

    // trace: discrepancy of h's pushforward
    std::vector<Vec> pushed(eval_a.size());
    for (std::size_t i = 0; i < eval_a.size(); ++i) pushed[i] = gen_h.net().eval(eval_a[i]);
    rec.disc_trace.push_back(discrepancy_grid_oracle(pushed, eval_b, cfg.grid));
    if (pair.has_ground_truth()) {
      double primary = 0.0;
      for (std::size_t i = 0; i < eval_a.size(); ++i)
        primary += sq_dist(gen_h.net().eval(eval_a[i]), pair.y_ab(eval_a[i]));
      primary /= static_cast<double>(eval_a.size());
      double best = primary;
      if (pair.y_ab_alt) {
        double alt = 0.0;
        for (std::size_t i = 0; i < eval_a.size(); ++i)
          alt += sq_dist(gen_h.net().eval(eval_a[i]), pair.y_ab_alt(eval_a[i]));
        best = std::min(best, alt / static_cast<double>(eval_a.size()));
      }
      rec.align_trace.push_back(best);
      rec.final_align_primary = primary;
      rec.final_align_best = best;
    }
  }

  // per-term report
  rec.final_grid_disc = rec.disc_trace.back();
  {
    double ca = 0.0, cb = 0.0, idist = 0.0;
    for (const Vec& xa : eval_a) {
      const Vec round = gen_hp.net().eval(gen_h.net().eval(xa));
      ca += sq_dist(round, xa);
      const Vec hx = gen_h.net().eval(xa);
      for (std::size_t c = 0; c < dim; ++c) idist += std::abs(xa[c] - hx[c]);
    }
    for (const Vec& xb : eval_b) cb += sq_dist(gen_h.net().eval(gen_hp.net().eval(xb)), xb);
    rec.cycle_risk_a = ca / static_cast<double>(eval_a.size());
    rec.cycle_risk_b = cb / static_cast<double>(eval_b.size());
    rec.identity_distance = idist / static_cast<double>(eval_a.size());
  }
  rec.guard_trips = gen_h.guard_trips() + gen_hp.guard_trips();
  rec.nets = nlohmann::json{{"h", minalign::to_json(gen_h.net())},
                            {"h_prime", minalign::to_json(gen_hp.net())}};
  rec.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return CycleRun{gen_h.net(), gen_hp.net(), std::move(rec)};
}

// ---------------------------------------------------------------------------
// permutation-ambiguity demo (no training; midpoint grids keep the flip of a
// uniform segment an exact symmetry of the evaluation set)

struct AmbiguityReport {
  double objective_base = 0.0;
  double objective_mapped = 0.0;
  double delta = 0.0;
  double disc_ab_base = 0.0, disc_ab_mapped = 0.0;
  double disc_ba_base = 0.0, disc_ba_mapped = 0.0;
};

inline AmbiguityReport ambiguity_demo(const ScmNet& h, const ScmNet& h_prime, const ScmNet& pi,
                                      const DomainPair& pair, std::size_t n,
                                      const GridOracleConfig& grid = {}) {
  const std::vector<Vec> xs = grid_sample(pair.a, n);
  const std::vector<Vec> ys = grid_sample(pair.b, n);

  const ScmNet pi_inv = invert_net(pi);
  const ScmNet h_tilde = compose(pi, h);
  const ScmNet hp_tilde = compose(h_prime, pi_inv);

  auto objective = [&](const ScmNet& f, const ScmNet& fp, AmbiguityReport& rep, bool mapped) {
    std::vector<Vec> push_a(xs.size()), push_b(ys.size());
    for (std::size_t i = 0; i < xs.size(); ++i) push_a[i] = f.eval(xs[i]);
    for (std::size_t i = 0; i < ys.size(); ++i) push_b[i] = fp.eval(ys[i]);
    const double disc_ab = discrepancy_grid_oracle(push_a, ys, grid);
    const double disc_ba = discrepancy_grid_oracle(push_b, xs, grid);
    double cyc_a = 0.0, cyc_b = 0.0;
    for (const Vec& x : xs) cyc_a += sq_dist(fp.eval(f.eval(x)), x);
    for (const Vec& y : ys) cyc_b += sq_dist(f.eval(fp.eval(y)), y);
    cyc_a /= static_cast<double>(xs.size());
    cyc_b /= static_cast<double>(ys.size());
    (mapped ? rep.disc_ab_mapped : rep.disc_ab_base) = disc_ab;
    (mapped ? rep.disc_ba_mapped : rep.disc_ba_base) = disc_ba;
    return disc_ab + disc_ba + cyc_a + cyc_b;
  };

  AmbiguityReport rep;
  rep.objective_base = objective(h, h_prime, rep, false);
  rep.objective_mapped = objective(h_tilde, hp_tilde, rep, true);
  rep.delta = rep.objective_mapped - rep.objective_base;
  return rep;
}

// ---------------------------------------------------------------------------
// minimal-complexity search

struct DepthTableRow {
  std::size_t depth = 0;
  std::uint64_t seed = 0;
  double grid_disc = 0.0;
  double align_best = -1.0;
};

struct MinComplexityResult {
  std::size_t k1 = 0;
  std::vector<DepthTableRow> table;
  std::vector<double> best_per_depth;
};

inline MinComplexityResult find_min_complexity(const DomainPair& pair, double eps0,
                                               std::size_t k_max, std::size_t n_seeds,
                                               const TrainConfig& cfg, RngStream stream) {
  if (!(eps0 > 0.0)) throw Error("find_min_complexity: eps0 must be positive");
  MinComplexityResult res;
  for (std::size_t k = 0; k <= k_max; ++k) {
    double best = 2.0;
    for (std::size_t s = 0; s < n_seeds; ++s) {
      const MapperRun run = gan_train(pair, k, cfg, stream.fork(k).fork(s));
      res.table.push_back(DepthTableRow{k, s, run.record.final_grid_disc,
                                        run.record.final_align_best});
      best = std::min(best, run.record.final_grid_disc);
    }
    res.best_per_depth.push_back(best);
    if (best <= eps0) {
      res.k1 = k;
      return res;
    }
  }
  throw NoDepthSatisfies("find_min_complexity: no depth up to " + std::to_string(k_max) +
                         " reaches eps0 = " + std::to_string(eps0));
}

// ---------------------------------------------------------------------------
// the two-stage algorithm: train g at the minimal depth, then train h at a
// larger depth against the frozen g

struct Alg1Run {
  ScmNet g;
  ScmNet h;
  RunRecord record_g;
  RunRecord record_h;
};

inline Alg1Run alg1(const DomainPair& pair, std::size_t k1, std::size_t k2, double lambda,
                    const TrainConfig& cfg, RngStream stream) {
  if (k2 < k1) throw Error("alg1: k2 must be >= k1");
  if (lambda < 0.0) throw Error("alg1: lambda must be >= 0");
  MapperRun stage1 = gan_train(pair, k1, cfg, stream.fork(1));
  detail::MapperTrainOutcome stage2 =
      detail::train_mapper(pair, k2, cfg, &stage1.net, lambda, 0.0, stream.fork(2));
  RngStream adv_rng = stream.fork(2).fork(7777);
  std::vector<Vec> xs = sample(pair.a, cfg.eval_samples, adv_rng);
  for (Vec& x : xs) x = stage2.net.eval(x);
  const std::vector<Vec> ys = sample(pair.b, cfg.eval_samples, adv_rng);
  stage2.record.final_adv_disc =
      discrepancy_adversarial(xs, ys, static_cast<std::size_t>(cfg.critic_depth),
                              cfg.adversarial, adv_rng)
          .estimate;
  return Alg1Run{std::move(stage1.net), std::move(stage2.net), std::move(stage1.record),
                 std::move(stage2.record)};
}

// ---------------------------------------------------------------------------
// complexity sweep

struct SweepCell {
  std::size_t depth = 0;
  std::uint64_t seed = 0;
  double grid_disc = -1.0;
  double adv_disc = -1.0;
  double align_primary = -1.0;
  double align_best = -1.0;
  RunRecord record;
};

struct SweepTable {
  std::vector<SweepCell> cells;  // sorted by (depth, seed)
};

inline SweepTable complexity_sweep(const DomainPair& pair, std::span<const std::size_t> ks,
                                   std::span<const std::uint64_t> seeds, const TrainConfig& cfg,
                                   RngStream stream) {
  if (ks.empty() || seeds.empty()) throw Error("complexity_sweep: empty depth or seed list");
  SweepTable table;
  table.cells.resize(ks.size() * seeds.size());
  std::vector<std::pair<std::size_t, std::size_t>> cells;
  for (std::size_t ki = 0; ki < ks.size(); ++ki)
    for (std::size_t si = 0; si < seeds.size(); ++si) cells.emplace_back(ki, si);

  const int workers = std::max(1, cfg.workers);
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t idx = next.fetch_add(1);
      if (idx >= cells.size()) return;
      const auto [ki, si] = cells[idx];
      const std::size_t k = ks[ki];
      const std::uint64_t seed = seeds[si];
      const MapperRun run = gan_train(pair, k, cfg, stream.fork(k).fork(seed));
      SweepCell cell;
      cell.depth = k;
      cell.seed = seed;
      cell.grid_disc = run.record.final_grid_disc;
      cell.adv_disc = run.record.final_adv_disc;
      cell.align_primary = run.record.final_align_primary;
      cell.align_best = run.record.final_align_best;
      cell.record = run.record;
      table.cells[ki * seeds.size() + si] = std::move(cell);
    }
  };
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (int w = 0; w < workers; ++w) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  return table;
}

inline double median_of(std::vector<double> v) {
  if (v.empty()) throw Error("median_of: empty");
  std::sort(v.begin(), v.end());
  return v.size() % 2 ? v[v.size() / 2]
                      : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
}

inline double sweep_median(const SweepTable& table, std::size_t depth,
                           double SweepCell::*field) {
  std::vector<double> vals;
  for (const SweepCell& c : table.cells)
    if (c.depth == depth) vals.push_back(c.*field);
  return median_of(std::move(vals));
}

// ---------------------------------------------------------------------------
// self-map runs with the anti-identity penalty

struct SelfMapRun {
  double identity_distance = 0.0;  // mean  ||x - h(x)||_1  on the eval pool
  double grid_disc = 0.0;
  CycleRun cycle;
};

inline SelfMapRun selfmap_anti_identity(const Domain& domain, std::size_t depth,
                                        const TrainConfig& cfg, RngStream stream) {
  DomainPair pair;
  pair.name = "selfmap";
  pair.a = domain;
  pair.b = domain;
  CycleRun run = cycle_train(pair, depth, cfg, stream, cfg.anti_identity_weight);
  return SelfMapRun{run.record.identity_distance, run.record.final_grid_disc, std::move(run)};
}

// ---------------------------------------------------------------------------
// mapping census: train across seeds, keep low-discrepancy runs, cluster
// them under the layerwise similarity relation and cover exactly

struct CensusResult {
  std::size_t covering = 0;
  bool exact = true;
  std::vector<std::size_t> qualifying_seeds;
  std::vector<std::size_t> representatives;  // one qualifying-run index per class
  SimilarityGraph graph{0};
  std::vector<MapperRun> runs;  // all runs, qualifying or not
};

inline CensusResult mapping_census(const DomainPair& pair, std::size_t depth,
                                   std::size_t n_seeds, double eps, const TrainConfig& cfg,
                                   RngStream stream) {
  if (n_seeds < 1) throw Error("mapping_census: need at least one seed");
  CensusResult res;
  res.runs.reserve(n_seeds);

  const int workers = std::max(1, cfg.workers);
  std::vector<MapperRun> runs(n_seeds, MapperRun{ScmNet::identity(pair.leak, pair.a.dim), {}});
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t s = next.fetch_add(1);
      if (s >= n_seeds) return;
      runs[s] = gan_train(pair, depth, cfg, stream.fork(depth).fork(s));
    }
  };
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (int w = 0; w < workers; ++w) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }

  std::vector<std::size_t> keep;
  for (std::size_t s = 0; s < n_seeds; ++s)
    if (runs[s].record.final_grid_disc <= eps) keep.push_back(s);
  res.qualifying_seeds = keep;
  res.runs = std::move(runs);

  if (keep.empty()) {
    res.covering = 0;
    return res;
  }

  RngStream sim_rng = stream.fork(424242);
  const std::vector<Vec> samples = sample(pair.a, 1024, sim_rng);
  SimilarityConfig sim_cfg;
  sim_cfg.grid = cfg.grid;
  SimilarityGraph graph(keep.size());
  for (std::size_t i = 0; i < keep.size(); ++i)
    for (std::size_t j = i + 1; j < keep.size(); ++j)
      if (layerwise_similarity(res.runs[keep[i]].net, res.runs[keep[j]].net, samples, eps,
                               sim_cfg))
        graph.set_similar(i, j);

  const CoveringMode mode = keep.size() <= 16 ? CoveringMode::exact : CoveringMode::greedy;
  const CoveringResult cover = covering_number(graph, mode);
  res.covering = cover.number;
  res.exact = cover.exact;
  res.graph = graph;
  res.representatives.assign(cover.number, SIZE_MAX);
  for (std::size_t i = 0; i < keep.size(); ++i)
    if (res.representatives[cover.assignment[i]] == SIZE_MAX)
      res.representatives[cover.assignment[i]] = keep[i];
  return res;
}

}  // namespace minalign
