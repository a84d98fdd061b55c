#pragma once

#include "dop/algo/stochastic.hpp"

namespace dop::baselines {

// "DOP with common tree backup": the tree-backup expectation of Q_tot is a
// Monte-Carlo average over `samples` joint actions drawn from pi instead of
// the decomposed sum.
inline algo::StochasticConfig ablation_common_tree_backup(algo::StochasticConfig cfg, int samples = 200) {
  if (samples < 1) throw ConfigError("common tree backup needs at least one sample");
  cfg.expectation.mode = algo::ExpectationMode::Sampled;
  cfg.expectation.samples = samples;
  return cfg;
}

// Exhaustive variant: the expectation enumerates all |A|^n joint actions.
inline algo::StochasticConfig ablation_exhaustive_tree_backup(algo::StochasticConfig cfg) {
  cfg.expectation.mode = algo::ExpectationMode::Exhaustive;
  return cfg;
}

}  // namespace dop::baselines
