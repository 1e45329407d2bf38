#include "dwtk/wav.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

namespace dwtk {
namespace {

static_assert(std::endian::native == std::endian::little, "WAV I/O assumes a little-endian host");

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

template <typename T>
T read_le(const std::vector<char>& bytes, std::size_t offset) {
  if (offset + sizeof(T) > bytes.size()) throw ValidationError("truncated WAV file");
  T value;
  std::memcpy(&value, bytes.data() + offset, sizeof(T));
  return value;
}

template <typename T>
void write_le(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

}  // namespace

Waveform read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeError("cannot open " + path);
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw ValidationError(path + ": not a RIFF/WAVE file");
  }

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const char* data = nullptr;
  std::uint32_t data_size = 0;
  for (std::size_t pos = 12; pos + 8 <= bytes.size();) {
    const std::uint32_t size = read_le<std::uint32_t>(bytes, pos + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(bytes.data() + pos, "fmt ", 4) == 0) {
      format = read_le<std::uint16_t>(bytes, body);
      channels = read_le<std::uint16_t>(bytes, body + 2);
      rate = read_le<std::uint32_t>(bytes, body + 4);
      bits = read_le<std::uint16_t>(bytes, body + 14);
      if (format == kFormatExtensible) format = read_le<std::uint16_t>(bytes, body + 24);
    } else if (std::memcmp(bytes.data() + pos, "data", 4) == 0) {
      data = bytes.data() + body;
      data_size = static_cast<std::uint32_t>(std::min<std::size_t>(size, bytes.size() - body));
    }
    pos = body + size + (size & 1u);
  }
  if (data == nullptr || rate == 0) throw ValidationError(path + ": missing fmt or data chunk");
  if (channels != 1) throw ValidationError(path + ": only single-channel audio is supported");

  Waveform w;
  w.sample_rate = rate;
  if (format == kFormatPcm && bits == 16) {
    w.samples.resize(data_size / 2);
    for (std::size_t i = 0; i < w.samples.size(); ++i) {
      std::int16_t s;
      std::memcpy(&s, data + 2 * i, 2);
      w.samples[i] = s / 32768.0;
    }
  } else if (format == kFormatFloat && bits == 32) {
    w.samples.resize(data_size / 4);
    for (std::size_t i = 0; i < w.samples.size(); ++i) {
      float s;
      std::memcpy(&s, data + 4 * i, 4);
      w.samples[i] = s;
    }
  } else {
    throw ValidationError(path + ": unsupported sample format");
  }
  return w;
}

void write_wav(const std::string& path, const Waveform& waveform, WavFormat format) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeError("cannot write " + path);
  const std::uint16_t bytes_per_sample = format == WavFormat::pcm16 ? 2 : 4;
  const auto data_size = static_cast<std::uint32_t>(waveform.samples.size() * bytes_per_sample);
  const auto rate = static_cast<std::uint32_t>(std::lround(waveform.sample_rate));

  out.write("RIFF", 4);
  write_le<std::uint32_t>(out, 36 + data_size);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  write_le<std::uint32_t>(out, 16);
  write_le<std::uint16_t>(out, format == WavFormat::pcm16 ? kFormatPcm : kFormatFloat);
  write_le<std::uint16_t>(out, 1);
  write_le<std::uint32_t>(out, rate);
  write_le<std::uint32_t>(out, rate * bytes_per_sample);
  write_le<std::uint16_t>(out, bytes_per_sample);
  write_le<std::uint16_t>(out, static_cast<std::uint16_t>(8 * bytes_per_sample));
  out.write("data", 4);
  write_le<std::uint32_t>(out, data_size);
  for (double s : waveform.samples) {
    if (format == WavFormat::pcm16) {
      const double scaled = std::clamp(std::round(s * 32768.0), -32768.0, 32767.0);
      write_le<std::int16_t>(out, static_cast<std::int16_t>(scaled));
    } else {
      write_le<float>(out, static_cast<float>(s));
    }
  }
  if (!out) throw RuntimeError("failed writing " + path);
}

}  // namespace dwtk
