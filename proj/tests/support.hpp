#pragma once

// Shared helpers for the test binaries: small model configs, random inputs,
// and brute-force oracles.

#include "dwtk/metrics.hpp"
#include "dwtk/model.hpp"
#include "dwtk/random.hpp"
#include "dwtk/signal.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

namespace testing {

inline dwtk::ModelConfig tiny_config(int vocab = 12, int dec_layers = 2) {
  dwtk::ModelConfig c;
  c.enc_layers = 2;
  c.dec_layers = dec_layers;
  c.width = 8;
  c.heads = 2;
  c.vocab = vocab;
  c.max_positions = 48;
  c.input_dim = 6;
  c.max_source_positions = 32;
  c.ffn_width = 16;
  return c;
}

inline dwtk::FeatureSequence random_features(dwtk::Rng& rng, int frames, int dim) {
  dwtk::FeatureSequence f;
  f.frames.resize(frames, dim);
  for (int i = 0; i < frames; ++i) {
    for (int j = 0; j < dim; ++j) f.frames(i, j) = rng.normal();
  }
  return f;
}

/// Copy of `params` with every entry nudged by scale * N(0, 1).
inline dwtk::ModelParams perturbed(const dwtk::ModelParams& params, double scale, std::uint64_t seed) {
  dwtk::ModelParams out = params;
  dwtk::Rng rng(seed);
  for (auto& t : dwtk::tensors(out)) {
    for (double& v : t.values) v += scale * rng.normal();
  }
  return out;
}

/// Minimum edit cost by exhaustive recursion over every alignment.
inline std::size_t edit_oracle(const dwtk::NormalizedText& a, std::size_t i, const dwtk::NormalizedText& b,
                               std::size_t j) {
  if (i == a.size()) return b.size() - j;
  if (j == b.size()) return a.size() - i;
  const std::size_t sub = edit_oracle(a, i + 1, b, j + 1) + (a[i] == b[j] ? 0 : 1);
  const std::size_t del = edit_oracle(a, i + 1, b, j) + 1;
  const std::size_t ins = edit_oracle(a, i, b, j + 1) + 1;
  return std::min({sub, del, ins});
}

inline dwtk::NormalizedText random_words(dwtk::Rng& rng, std::size_t max_len, int alphabet) {
  dwtk::NormalizedText out(rng.below(max_len + 1));
  for (auto& w : out) w = std::string(1, static_cast<char>('a' + rng.below(static_cast<std::uint64_t>(alphabet))));
  return out;
}

/// Relative error between an analytic and a central-difference directional
/// derivative. The denominator includes the round-off level of the difference
/// quotient, eps * |f| / h per ulp of f, so derivatives that are zero in exact
/// arithmetic are judged against that floor instead of against zero.
inline double gradient_error(double analytic, double numeric, double f_scale, double h, double tolerance = 1e-5) {
  const double roundoff = 8.0 * std::numeric_limits<double>::epsilon() * std::abs(f_scale) / h;
  return std::abs(analytic - numeric) / (std::max(std::abs(analytic), std::abs(numeric)) + roundoff / tolerance);
}

/// Fresh empty directory under the system temp dir.
inline std::string temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("dwtk_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

}  // namespace testing
