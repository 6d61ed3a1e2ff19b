// Copyright (c) 2026, The ReCo-KD Authors
// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference gradient checks.
//
// rel_err = |analytic - numeric| / max(|analytic|, |numeric|, 1e-6 max(1, |L|))
// where L is the loss at the unperturbed point; the last term keeps
// components that are exactly zero (e.g. a conv bias feeding a group norm)
// from being judged on rounding noise of order eps |L| / h. A
// coordinate whose +h and -h evaluations take different branches at some
// relu/abs/max is skipped and another one is drawn.

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "recokd/rng.hpp"
#include "recokd/tensor.hpp"

namespace recokd::gradcheck {

struct NamedTensor {
  std::string name;
  Tensor value;  // leaf with requires_grad
};

struct CheckResult {
  std::string loss;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool passed = true;
};

struct Options {
  std::size_t coords = 40;
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Give up on a loss after this many kink skips in a row.
  std::size_t max_skips = 200;
};

/// `loss` must rebuild the graph from the current parameter values on every
/// call. Coordinates are drawn uniformly over all parameter elements.
CheckResult check(const std::string& name, const std::function<Tensor()>& loss, std::vector<NamedTensor> params,
                  Rng& rng, const Options& options);

struct SuiteConfig {
  std::uint64_t seed = 0;
  std::size_t channels = 4;  // teacher channels; the student has half
  std::size_t size = 4;      // toy volume edge
  std::size_t classes = 3;   // including background
  Options options;
};

/// Randomized toy instances of every distillation and task loss plus the
/// total objective through a two-stage student network.
std::vector<CheckResult> run_suite(const SuiteConfig& config);

}  // namespace recokd::gradcheck
