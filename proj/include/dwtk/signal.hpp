#pragma once

#include "dwtk/types.hpp"

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace dwtk {

struct Waveform {
  std::vector<double> samples;
  double sample_rate = 256.0;

  double seconds() const { return static_cast<double>(samples.size()) / sample_rate; }
};

/// Mean of squared samples. Throws on an empty waveform.
double power(const Waveform& w);
double power(const std::vector<double>& samples);

/// Noise generator. White noise is N(0, 1) drawn from the seed; file noise
/// loops over the buffer from a seeded offset; babble is a seeded sum of
/// amplitude-modulated tones standing in for crowd noise.
struct NoiseSource {
  enum class Kind { white, file, babble };

  Kind kind = Kind::white;
  std::vector<double> buffer;

  static NoiseSource white() { return {}; }
  static NoiseSource babble() { return {Kind::babble, {}}; }
  static NoiseSource from_samples(std::vector<double> samples);

  std::vector<double> render(std::size_t count, std::uint64_t seed, double sample_rate) const;
};

NoiseSource::Kind parse_noise_kind(const std::string& name);

/// Sentinel SNR meaning "leave the signal untouched".
inline constexpr double kNoNoise = std::numeric_limits<double>::infinity();

/// Adds noise scaled so that 10 log10(P_signal / P_noise) == snr_db over the
/// whole instance. snr_db == kNoNoise returns the input unchanged.
/// Throws ValidationError("undefined SNR") for a silent signal.
Waveform add_noise(const Waveform& signal, const NoiseSource& noise, double snr_db, std::uint64_t seed);

/// 10 log10(P_clean / P(noisy - clean)).
double measured_snr_db(const Waveform& clean, const Waveform& noisy);

/// Linear analysis/synthesis pair between feature frames and waveform
/// samples. Each frame is frame_samples samples; feature k is the coefficient
/// of the k-th orthonormal cosine basis vector (DCT-II, skipping DC), so
/// analyze(synthesize(f)) == f up to rounding.
struct FrontEnd {
  int input_dim = 16;
  int frame_samples = 32;
  double frame_rate = 8.0;

  double sample_rate() const { return frame_rate * frame_samples; }
  Matrix basis() const;  // frame_samples x input_dim
};

Waveform synthesize(const FeatureSequence& features, const FrontEnd& front_end);
FeatureSequence analyze(const Waveform& waveform, const FrontEnd& front_end);

/// Waveform-domain noise injection expressed on features: synthesize, add
/// noise at snr_db, analyze. kNoNoise returns the features untouched.
FeatureSequence add_noise_to_features(const FeatureSequence& features, const NoiseSource& noise,
                                      double snr_db, std::uint64_t seed, const FrontEnd& front_end);

enum class TaskKind { copy, reverse, mapped };

TaskKind parse_task_kind(const std::string& name);
std::string to_string(TaskKind kind);

/// Knobs of the synthetic speech stand-in. Every word token owns a seeded
/// Gaussian prototype in R^input_dim; a token occupies two frames, each its
/// prototype plus jitter * N(0, I).
struct SynthConfig {
  int vocab = 64;
  int input_dim = 16;
  double jitter = 0.3;
  double frame_rate = 8.0;
  std::uint64_t codebook_seed = 0x5eedc0deULL;
};

struct SynthSample {
  FeatureSequence features;
  TokenSequence spoken;      // tokens rendered into the features
  TokenSequence transcript;  // target: spoken (copy), reversed, or permuted
};

SynthSample synth_task(TaskKind kind, std::uint64_t seed, int length, const SynthConfig& config = {});

/// vocab x input_dim prototype table (rows for <s>, </s> are zero).
Matrix codebook(const SynthConfig& config);

/// Seeded permutation of word tokens used by the mapped task; special
/// tokens map to themselves.
TokenSequence token_permutation(const SynthConfig& config);

/// Hand-coded decoder for the copy task: mean-pool frame pairs and pick the
/// nearest prototype. No end marker is appended.
TokenSequence nearest_prototype_decode(const FeatureSequence& features, const SynthConfig& config);

}  // namespace dwtk
