#pragma once

#include "dwtk/signal.hpp"

#include <string>

namespace dwtk {

enum class WavFormat { pcm16, float32 };

/// Mono RIFF/WAVE, 16-bit PCM or 32-bit IEEE float. PCM samples map to
/// [-1, 1); float samples are stored as-is.
Waveform read_wav(const std::string& path);
void write_wav(const std::string& path, const Waveform& waveform, WavFormat format = WavFormat::float32);

}  // namespace dwtk
