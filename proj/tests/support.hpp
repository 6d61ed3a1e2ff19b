// Copyright (c) 2026, The ReCo-KD Authors
// SPDX-License-Identifier: Apache-2.0
//
// Glue between the library types and the loop oracles.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "recokd/distill.hpp"
#include "recokd/rng.hpp"
#include "recokd/tensor.hpp"
#include "recokd/volumes.hpp"

namespace support {

inline recokd::Tensor to_tensor(const oracle::Feat& f, bool grad = false) {
  return recokd::Tensor::from({f.c, f.s.d, f.s.h, f.s.w}, f.v, grad);
}

inline std::vector<double> values(const recokd::Tensor& t) { return {t.data().begin(), t.data().end()}; }

inline oracle::GC to_oracle(const recokd::distill::GCBlockParams& p) {
  oracle::GC g;
  g.c = p.channels();
  g.cb = p.v1_weight.shape()[0];
  g.wk = values(p.key_weight);
  g.w1 = values(p.v1_weight);
  g.b1 = values(p.v1_bias);
  g.g = values(p.norm_gain);
  g.beta = values(p.norm_bias);
  g.w2 = values(p.v2_weight);
  g.b2 = values(p.v2_bias);
  return g;
}

/// GC block with every parameter random, including the usually zero ones.
inline recokd::distill::GCBlockParams random_gc(std::size_t channels, recokd::Rng& rng) {
  auto p = recokd::distill::GCBlockParams::create(channels, 4, rng, false);
  for (auto* t : {&p.v1_bias, &p.norm_gain, &p.norm_bias, &p.v2_bias}) {
    for (auto& x : t->mutable_data()) x = rng.uniform(-1.0, 1.0);
  }
  return p;
}

inline std::vector<std::int32_t> random_ids(std::size_t n, std::size_t classes, recokd::Rng& rng) {
  std::vector<std::int32_t> ids(n);
  for (auto& x : ids) x = static_cast<std::int32_t>(rng.below(classes));
  return ids;
}

inline recokd::io::LabelVolume labels(recokd::io::Dims3 s, std::size_t classes, std::vector<std::int32_t> ids) {
  return recokd::io::LabelVolume::exclusive(s, classes - 1, std::move(ids));
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("recokd_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace support
