#include "dwtk/signal.hpp"

#include "dwtk/random.hpp"

#include <algorithm>
#include <cmath>

namespace dwtk {

double power(const std::vector<double>& samples) {
  if (samples.empty()) throw ValidationError("power of an empty waveform");
  double sum = 0.0;
  for (double s : samples) sum += s * s;
  return sum / static_cast<double>(samples.size());
}

double power(const Waveform& w) { return power(w.samples); }

NoiseSource NoiseSource::from_samples(std::vector<double> samples) {
  if (samples.empty()) throw ValidationError("noise file is empty");
  return {Kind::file, std::move(samples)};
}

NoiseSource::Kind parse_noise_kind(const std::string& name) {
  if (name == "white") return NoiseSource::Kind::white;
  if (name == "babble") return NoiseSource::Kind::babble;
  if (name == "file") return NoiseSource::Kind::file;
  throw ValidationError("unknown noise kind: " + name);
}

std::vector<double> NoiseSource::render(std::size_t count, std::uint64_t seed, double sample_rate) const {
  std::vector<double> out(count);
  Rng rng(seed);
  switch (kind) {
    case Kind::white:
      for (auto& s : out) s = rng.normal();
      break;
    case Kind::file: {
      std::size_t pos = static_cast<std::size_t>(rng.below(buffer.size()));
      for (auto& s : out) {
        s = buffer[pos];
        pos = (pos + 1) % buffer.size();
      }
      break;
    }
    case Kind::babble: {
      constexpr int kTalkers = 6;
      constexpr int kTonesPerTalker = 3;
      const double nyquist = sample_rate / 2.0;
      for (int talker = 0; talker < kTalkers; ++talker) {
        const double syllable_rate = rng.uniform(2.0, 6.0);
        const double syllable_phase = rng.uniform(0.0, 2.0 * M_PI);
        for (int tone = 0; tone < kTonesPerTalker; ++tone) {
          const double freq = rng.uniform(0.05, 0.45) * 2.0 * nyquist;
          const double phase = rng.uniform(0.0, 2.0 * M_PI);
          for (std::size_t i = 0; i < count; ++i) {
            const double t = static_cast<double>(i) / sample_rate;
            const double envelope = 0.5 * (1.0 + std::sin(2.0 * M_PI * syllable_rate * t + syllable_phase));
            out[i] += envelope * std::sin(2.0 * M_PI * freq * t + phase);
          }
        }
      }
      break;
    }
  }
  return out;
}

Waveform add_noise(const Waveform& signal, const NoiseSource& noise, double snr_db, std::uint64_t seed) {
  if (snr_db == kNoNoise) return signal;
  if (std::isnan(snr_db)) throw ValidationError("SNR is NaN");
  const double signal_power = power(signal);
  if (signal_power <= 0.0) throw ValidationError("undefined SNR");
  auto samples = noise.render(signal.samples.size(), seed, signal.sample_rate);
  const double noise_power = power(samples);
  if (noise_power <= 0.0) throw ValidationError("noise source is silent");
  const double gain = std::sqrt(signal_power / (noise_power * std::pow(10.0, snr_db / 10.0)));
  Waveform out = signal;
  for (std::size_t i = 0; i < samples.size(); ++i) out.samples[i] += gain * samples[i];
  return out;
}

double measured_snr_db(const Waveform& clean, const Waveform& noisy) {
  if (clean.samples.size() != noisy.samples.size()) throw ValidationError("length mismatch");
  std::vector<double> residual(clean.samples.size());
  for (std::size_t i = 0; i < residual.size(); ++i) residual[i] = noisy.samples[i] - clean.samples[i];
  return 10.0 * std::log10(power(clean) / power(residual));
}

Matrix FrontEnd::basis() const {
  if (input_dim >= frame_samples) throw ValidationError("front end needs frame_samples > input_dim");
  Matrix b(frame_samples, input_dim);
  const double n = frame_samples;
  for (int k = 0; k < input_dim; ++k) {
    for (int i = 0; i < frame_samples; ++i) {
      b(i, k) = std::sqrt(2.0 / n) * std::cos(M_PI * (i + 0.5) * (k + 1) / n);
    }
  }
  return b;
}

Waveform synthesize(const FeatureSequence& features, const FrontEnd& front_end) {
  if (features.dim() != front_end.input_dim) throw ValidationError("feature width does not match front end");
  const Matrix frames = features.frames * front_end.basis().transpose();  // T x frame_samples
  Waveform w;
  w.sample_rate = front_end.sample_rate();
  w.samples.resize(static_cast<std::size_t>(frames.size()));
  for (Eigen::Index t = 0; t < frames.rows(); ++t) {
    for (Eigen::Index i = 0; i < frames.cols(); ++i) {
      w.samples[static_cast<std::size_t>(t * frames.cols() + i)] = frames(t, i);
    }
  }
  return w;
}

FeatureSequence analyze(const Waveform& waveform, const FrontEnd& front_end) {
  const auto frame = static_cast<std::size_t>(front_end.frame_samples);
  const std::size_t count = (waveform.samples.size() + frame - 1) / frame;
  if (count == 0) throw ValidationError("waveform shorter than one frame");
  Matrix frames = Matrix::Zero(static_cast<Eigen::Index>(count), front_end.frame_samples);
  for (std::size_t i = 0; i < waveform.samples.size(); ++i) {
    frames(static_cast<Eigen::Index>(i / frame), static_cast<Eigen::Index>(i % frame)) = waveform.samples[i];
  }
  return FeatureSequence{frames * front_end.basis(), front_end.frame_rate};
}

FeatureSequence add_noise_to_features(const FeatureSequence& features, const NoiseSource& noise,
                                      double snr_db, std::uint64_t seed, const FrontEnd& front_end) {
  if (snr_db == kNoNoise) return features;
  return analyze(add_noise(synthesize(features, front_end), noise, snr_db, seed), front_end);
}

TaskKind parse_task_kind(const std::string& name) {
  if (name == "copy") return TaskKind::copy;
  if (name == "reverse") return TaskKind::reverse;
  if (name == "mapped") return TaskKind::mapped;
  throw ValidationError("unknown task kind: " + name);
}

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::copy: return "copy";
    case TaskKind::reverse: return "reverse";
    case TaskKind::mapped: return "mapped";
  }
  return "copy";
}

Matrix codebook(const SynthConfig& config) {
  Rng rng(derive_seed(config.codebook_seed, "codebook"));
  Matrix table = Matrix::Zero(config.vocab, config.input_dim);
  for (int t = kFirstWordToken; t < config.vocab; ++t) {
    for (int k = 0; k < config.input_dim; ++k) table(t, k) = rng.normal();
  }
  return table;
}

TokenSequence token_permutation(const SynthConfig& config) {
  Rng rng(derive_seed(config.codebook_seed, "permutation"));
  const auto order = permutation(static_cast<std::size_t>(config.vocab - kFirstWordToken), rng);
  TokenSequence map(static_cast<std::size_t>(config.vocab));
  for (Token t = 0; t < kFirstWordToken; ++t) map[static_cast<std::size_t>(t)] = t;
  for (std::size_t i = 0; i < order.size(); ++i) {
    map[i + kFirstWordToken] = static_cast<Token>(order[i]) + kFirstWordToken;
  }
  return map;
}

SynthSample synth_task(TaskKind kind, std::uint64_t seed, int length, const SynthConfig& config) {
  if (length < 1) throw ValidationError("synthetic task length must be at least 1");
  if (config.vocab <= kFirstWordToken) throw ValidationError("synthetic task needs word tokens");
  Rng token_rng(derive_seed(seed, "tokens"));
  Rng jitter_rng(derive_seed(seed, "jitter"));
  const Matrix table = codebook(config);

  SynthSample sample;
  const auto words = static_cast<std::uint64_t>(config.vocab - kFirstWordToken);
  for (int i = 0; i < length; ++i) {
    sample.spoken.push_back(static_cast<Token>(token_rng.below(words)) + kFirstWordToken);
  }
  sample.features.frame_rate = config.frame_rate;
  sample.features.frames.resize(2 * length, config.input_dim);
  for (int i = 0; i < 2 * length; ++i) {
    const Token t = sample.spoken[static_cast<std::size_t>(i / 2)];
    for (int k = 0; k < config.input_dim; ++k) {
      sample.features.frames(i, k) = table(t, k) + config.jitter * jitter_rng.normal();
    }
  }

  sample.transcript = sample.spoken;
  if (kind == TaskKind::reverse) {
    std::reverse(sample.transcript.begin(), sample.transcript.end());
  } else if (kind == TaskKind::mapped) {
    const auto map = token_permutation(config);
    for (auto& t : sample.transcript) t = map[static_cast<std::size_t>(t)];
  }
  return sample;
}

TokenSequence nearest_prototype_decode(const FeatureSequence& features, const SynthConfig& config) {
  if (features.dim() != config.input_dim) throw ValidationError("feature width does not match codebook");
  const Matrix table = codebook(config);
  TokenSequence out;
  for (int start = 0; start < features.length(); start += 2) {
    const int span = std::min(2, features.length() - start);
    const Vector pooled = features.frames.middleRows(start, span).colwise().mean().transpose();
    Token best = kFirstWordToken;
    double best_dist = std::numeric_limits<double>::infinity();
    for (Token t = kFirstWordToken; t < config.vocab; ++t) {
      const double dist = (table.row(t).transpose() - pooled).squaredNorm();
      if (dist < best_dist) {
        best_dist = dist;
        best = t;
      }
    }
    out.push_back(best);
  }
  return out;
}

}  // namespace dwtk
