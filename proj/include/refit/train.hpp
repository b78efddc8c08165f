#pragma once

#include <functional>
#include <ostream>
#include <vector>

#include "refit/config.hpp"
#include "refit/nets.hpp"
#include "refit/refit_loop.hpp"
#include "refit/synthdata.hpp"

namespace refit {

struct TrainStats {
  std::vector<std::pair<int64_t, double>> loss_log;  // (iteration, batch loss)
  int64_t iterations = 0;
};

void adam_step(ParamSet& params, double lr, int64_t t, double beta1 = 0.9, double beta2 = 0.999,
               double eps = 1e-8);

// First-order training of the full loop. Sample order and dropout are keyed
// on (train.seed, iteration, slot), so runs resume exactly and reproduce
// bitwise on one device. Aborts with NonFinite naming the iteration if the
// loss or a gradient leaves the reals.
TrainStats train_loop(const Config& cfg, Nets& nets, const DiffModel& dm,
                      const std::vector<Sample>& samples, int64_t start_iter = 0,
                      std::ostream* log = nullptr,
                      const std::function<void(int64_t)>& snapshot_cb = {});

}  // namespace refit
