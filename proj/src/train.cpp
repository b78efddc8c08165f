#include "refit/train.hpp"

#include <cmath>

#include "refit/errors.hpp"
#include "refit/rng.hpp"

namespace refit {

void adam_step(ParamSet& params, double lr, int64_t t, double beta1, double beta2, double eps) {
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (const auto& p : params.all()) {
    if (p->m.empty()) {
      p->m.assign(p->val.size(), 0.0);
      p->v.assign(p->val.size(), 0.0);
    }
    for (size_t i = 0; i < p->val.size(); ++i) {
      const double g = p->grad[i];
      p->m[i] = beta1 * p->m[i] + (1.0 - beta1) * g;
      p->v[i] = beta2 * p->v[i] + (1.0 - beta2) * g * g;
      p->val[i] -= lr * (p->m[i] / bc1) / (std::sqrt(p->v[i] / bc2) + eps);
    }
  }
}

TrainStats train_loop(const Config& cfg, Nets& nets, const DiffModel& dm,
                      const std::vector<Sample>& samples, int64_t start_iter, std::ostream* log,
                      const std::function<void(int64_t)>& snapshot_cb) {
  if (samples.empty()) throw DataError("train: empty dataset");
  const int64_t iters = cfg.get_int("train.iters");
  const int batch = static_cast<int>(cfg.get_int("train.batch"));
  const double lr = cfg.get_double("train.lr");
  const uint64_t seed = static_cast<uint64_t>(cfg.get_int("train.seed"));
  const int64_t log_every = cfg.get_int("train.log_every");
  const int64_t save_every = cfg.get_int("train.save_every");
  if (batch < 1) throw InvalidConfig("train.batch must be >= 1");

  LossWeights lw = LossWeights::from(cfg);
  FitOptions opt;
  opt.steps = lw.steps;
  opt.training = true;
  opt.dropout_p = cfg.get_double("feedback.dropout_p");
  opt.camera_mode = cfg.get_str("cam.mode");

  TrainStats stats;
  double ema = -1.0;
  for (int64_t iter = start_iter; iter < iters; ++iter) {
    nets.params.zero_grad();
    double batch_loss = 0.0;
    for (int b = 0; b < batch; ++b) {
      const uint64_t draw = Rng::mix(seed, static_cast<uint64_t>(iter), static_cast<uint64_t>(b));
      const Sample& s = samples[draw % samples.size()];
      opt.dropout_seed = Rng::mix(draw, 0xd0);
      ad::Tape tape;
      Unrolled u = unroll(tape, dm, nets, s.image.data(), s.camera, opt);
      ad::Tensor loss = loss_total(tape, u, s, lw);
      tape.backward(loss);
      batch_loss += loss.scalar();
    }
    batch_loss /= batch;
    if (!std::isfinite(batch_loss))
      throw NonFinite("train: non-finite loss at iteration " + std::to_string(iter));
    const double scale = 1.0 / batch;
    for (const auto& p : nets.params.all())
      for (auto& g : p->grad) {
        g *= scale;
        if (!std::isfinite(g))
          throw NonFinite("train: non-finite gradient at iteration " + std::to_string(iter));
      }
    adam_step(nets.params, lr, iter + 1);

    ema = ema < 0 ? batch_loss : 0.98 * ema + 0.02 * batch_loss;
    if (log_every > 0 && (iter % log_every == 0 || iter + 1 == iters)) {
      stats.loss_log.emplace_back(iter, batch_loss);
      if (log)
        (*log) << "iter " << iter << " loss " << batch_loss << " ema " << ema << "\n" << std::flush;
    }
    if (snapshot_cb && save_every > 0 && iter + 1 < iters && (iter + 1) % save_every == 0)
      snapshot_cb(iter + 1);
  }
  stats.iterations = iters;
  return stats;
}

}  // namespace refit
