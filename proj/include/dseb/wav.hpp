#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dseb/frontend.hpp"

namespace dseb {

/// Mono 16-bit signed little-endian PCM reader. Amplitudes map to [-1, 1]
/// by dividing by 32768. Any source rate is accepted; resampling is the
/// caller's job.
inline Waveform read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open wav file: " + path);
  auto read_bytes = [&](char* dst, std::size_t n) {
    in.read(dst, static_cast<std::streamsize>(n));
    if (in.gcount() != static_cast<std::streamsize>(n))
      throw std::runtime_error("truncated wav file: " + path);
  };
  auto read_u32 = [&]() {
    unsigned char b[4];
    read_bytes(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) |
           (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
  };
  auto read_u16 = [&]() {
    unsigned char b[2];
    read_bytes(reinterpret_cast<char*>(b), 2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  };

  char tag[5] = {0};
  read_bytes(tag, 4);
  if (std::strncmp(tag, "RIFF", 4) != 0)
    throw std::runtime_error("not a RIFF file: " + path);
  read_u32();  // chunk size
  read_bytes(tag, 4);
  if (std::strncmp(tag, "WAVE", 4) != 0)
    throw std::runtime_error("not a WAVE file: " + path);

  std::uint16_t channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  Waveform wav;
  while (in.peek() != EOF) {
    read_bytes(tag, 4);
    const std::uint32_t size = read_u32();
    if (std::strncmp(tag, "fmt ", 4) == 0) {
      const std::uint16_t format = read_u16();
      channels = read_u16();
      rate = read_u32();
      read_u32();  // byte rate
      read_u16();  // block align
      bits = read_u16();
      if (size > 16) in.seekg(size - 16, std::ios::cur);
      if (format != 1)
        throw std::runtime_error("wav is not PCM: " + path);
      if (channels != 1)
        throw std::runtime_error("wav is not mono: " + path);
      if (bits != 16)
        throw std::runtime_error("wav is not 16-bit: " + path);
      have_fmt = true;
    } else if (std::strncmp(tag, "data", 4) == 0) {
      if (!have_fmt)
        throw std::runtime_error("wav data before fmt chunk: " + path);
      const std::size_t count = size / 2;
      wav.samples.resize(count);
      std::vector<char> raw(size);
      read_bytes(raw.data(), size);
      for (std::size_t i = 0; i < count; ++i) {
        const auto lo = static_cast<unsigned char>(raw[2 * i]);
        const auto hi = static_cast<unsigned char>(raw[2 * i + 1]);
        const auto s = static_cast<std::int16_t>(
            static_cast<std::uint16_t>(lo | (hi << 8)));
        wav.samples[i] = static_cast<double>(s) / 32768.0;
      }
      wav.sample_rate = static_cast<double>(rate);
      return wav;
    } else {
      in.seekg(size + (size & 1), std::ios::cur);
    }
  }
  throw std::runtime_error("wav has no data chunk: " + path);
}

/// Writer for fixtures and synthetic corpora; clamps to [-1, 1].
inline void write_wav(const std::string& path, const Waveform& wav) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write wav file: " + path);
  auto put_u32 = [&](std::uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                 static_cast<char>((v >> 16) & 0xff),
                 static_cast<char>((v >> 24) & 0xff)};
    out.write(b, 4);
  };
  auto put_u16 = [&](std::uint16_t v) {
    char b[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
    out.write(b, 2);
  };
  const auto n = static_cast<std::uint32_t>(wav.samples.size());
  const auto rate = static_cast<std::uint32_t>(wav.sample_rate);
  out.write("RIFF", 4);
  put_u32(36 + 2 * n);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  put_u32(16);
  put_u16(1);  // PCM
  put_u16(1);  // mono
  put_u32(rate);
  put_u32(rate * 2);
  put_u16(2);
  put_u16(16);
  out.write("data", 4);
  put_u32(2 * n);
  for (double s : wav.samples) {
    double clamped = s;
    if (clamped > 1.0) clamped = 1.0;
    if (clamped < -1.0) clamped = -1.0;
    auto v = static_cast<std::int16_t>(std::llround(clamped * 32767.0));
    put_u16(static_cast<std::uint16_t>(v));
  }
}

}  // namespace dseb
