#pragma once

// PNG (libpng simplified API) and 16-bit PCM WAV file access.

#include <png.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "avsbg/errors.hpp"

namespace avsbg::io {

/// Interleaved 8-bit image; channels is 1 (gray) or 3 (RGB).
struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;
};

inline Image8 read_png(const std::filesystem::path& path, int channels) {
  if (channels != 1 && channels != 3) throw ArgumentError("read_png: channels must be 1 or 3");
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw std::runtime_error("cannot read PNG " + path.string() + ": " + img.message);
  img.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  Image8 out{static_cast<int>(img.width), static_cast<int>(img.height), channels, {}};
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&img);
    throw std::runtime_error("cannot decode PNG " + path.string() + ": " + img.message);
  }
  return out;
}

inline void write_png(const std::filesystem::path& path, const Image8& image) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (image.pixels.size() != static_cast<std::size_t>(image.width) * image.height * image.channels)
    throw ArgumentError("write_png: pixel buffer size mismatch");
  if (!png_image_write_to_file(&img, path.c_str(), 0, image.pixels.data(), 0, nullptr))
    throw std::runtime_error("cannot write PNG " + path.string() + ": " + img.message);
}

struct PcmAudio {
  int sample_rate = 0;
  std::vector<std::int16_t> samples;  // mono
};

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}
inline void put_u16(std::ostream& os, std::uint16_t v) {
  const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
  os.write(b, 2);
}
inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace detail

inline void write_wav(const std::filesystem::path& path, const PcmAudio& audio) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const auto data_bytes = static_cast<std::uint32_t>(audio.samples.size() * 2);
  os.write("RIFF", 4);
  detail::put_u32(os, 36 + data_bytes);
  os.write("WAVEfmt ", 8);
  detail::put_u32(os, 16);
  detail::put_u16(os, 1);  // PCM
  detail::put_u16(os, 1);  // mono
  detail::put_u32(os, static_cast<std::uint32_t>(audio.sample_rate));
  detail::put_u32(os, static_cast<std::uint32_t>(audio.sample_rate * 2));
  detail::put_u16(os, 2);
  detail::put_u16(os, 16);
  os.write("data", 4);
  detail::put_u32(os, data_bytes);
  for (std::int16_t s : audio.samples) detail::put_u16(os, static_cast<std::uint16_t>(s));
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

/// Reads 16-bit PCM WAV; multi-channel input is averaged to mono.
inline PcmAudio read_wav(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) || std::memcmp(buf.data() + 8, "WAVE", 4))
    throw std::runtime_error(path.string() + ": not a RIFF/WAVE file");
  PcmAudio out;
  int channels = 0, bits = 0;
  std::size_t pos = 12;
  bool have_fmt = false;
  while (pos + 8 <= buf.size()) {
    const std::uint32_t len = detail::get_u32(buf.data() + pos + 4);
    const unsigned char* body = buf.data() + pos + 8;
    if (pos + 8 + len > buf.size()) throw std::runtime_error(path.string() + ": truncated chunk");
    if (!std::memcmp(buf.data() + pos, "fmt ", 4)) {
      if (detail::get_u16(body) != 1) throw std::runtime_error(path.string() + ": only PCM WAV supported");
      channels = detail::get_u16(body + 2);
      out.sample_rate = static_cast<int>(detail::get_u32(body + 4));
      bits = detail::get_u16(body + 14);
      have_fmt = true;
    } else if (!std::memcmp(buf.data() + pos, "data", 4)) {
      if (!have_fmt || bits != 16 || channels < 1)
        throw std::runtime_error(path.string() + ": expected 16-bit PCM with fmt chunk before data");
      const std::size_t frames = len / (2u * static_cast<unsigned>(channels));
      out.samples.resize(frames);
      for (std::size_t i = 0; i < frames; ++i) {
        int acc = 0;
        for (int c = 0; c < channels; ++c)
          acc += static_cast<std::int16_t>(detail::get_u16(body + 2 * (i * static_cast<unsigned>(channels) + static_cast<unsigned>(c))));
        out.samples[i] = static_cast<std::int16_t>(acc / channels);
      }
      return out;
    }
    pos += 8 + len + (len & 1u);
  }
  throw std::runtime_error(path.string() + ": no data chunk");
}

}  // namespace avsbg::io
