#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "msfuse/data/atomic_file.hpp"
#include "msfuse/data/image_io.hpp"
#include "msfuse/errors.hpp"

namespace msfuse {

namespace fs = std::filesystem;

void write_file_atomic(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw InputError("failed writing " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw InputError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string format_float(float v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

namespace {

std::string netpbm(const char* magic, const nn::Tensor& t, std::size_t channels) {
  const nn::Shape s = t.shape();
  if (s.n != 1 || s.c != channels) {
    throw ContractViolation(std::string("cannot write tensor ") + s.str() + " as " + magic);
  }
  std::string out = std::string(magic) + "\n" + std::to_string(s.w) + " " + std::to_string(s.h) +
                    "\n255\n";
  const std::size_t plane = s.plane();
  out.reserve(out.size() + plane * channels);
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < channels; ++c) {
      const float v = std::clamp(t[c * plane + i], 0.0f, 1.0f);
      out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f))));
    }
  }
  return out;
}

nn::Tensor load_netpbm(const fs::path& path, const char* magic, std::size_t channels) {
  const std::string data = read_file(path);
  std::size_t pos = 0;
  auto fail = [&](const std::string& what) {
    throw ParseError(path.string() + ": " + what);
  };
  // header tokens, skipping whitespace and comments
  auto token = [&]() {
    while (pos < data.size()) {
      if (data[pos] == '#') {
        while (pos < data.size() && data[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(data[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < data.size() && !std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
    return data.substr(start, pos - start);
  };
  auto number = [&](const char* field) {
    const std::string t = token();
    std::size_t v = 0;
    const auto r = std::from_chars(t.data(), t.data() + t.size(), v);
    if (r.ec != std::errc() || r.ptr != t.data() + t.size() || v == 0) {
      fail(std::string("header field '") + field + "': expected a positive integer, got '" + t +
           "'");
    }
    return v;
  };
  const std::string m = token();
  if (m != magic) fail("expected magic " + std::string(magic) + ", got '" + m + "'");
  const std::size_t w = number("width");
  const std::size_t h = number("height");
  const std::size_t maxval = number("maxval");
  if (maxval != 255) fail("only 8-bit images (maxval 255) are supported, got " + std::to_string(maxval));
  if (pos >= data.size()) fail("missing pixel data");
  ++pos;  // single whitespace byte after maxval
  const std::size_t need = w * h * channels;
  if (data.size() - pos < need) {
    fail("pixel data holds " + std::to_string(data.size() - pos) + " bytes, expected " +
         std::to_string(need));
  }
  nn::Tensor t({1, channels, h, w});
  const std::size_t plane = w * h;
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < channels; ++c) {
      const auto level = static_cast<unsigned char>(data[pos + i * channels + c]);
      t[c * plane + i] = static_cast<float>(level) / 255.0f;
    }
  }
  return t;
}

}  // namespace

void save_ppm(const fs::path& path, const nn::Tensor& color) {
  write_file_atomic(path, netpbm("P6", color, 3));
}

void save_pgm(const fs::path& path, const nn::Tensor& gray) {
  write_file_atomic(path, netpbm("P5", gray, 1));
}

nn::Tensor load_ppm(const fs::path& path) { return load_netpbm(path, "P6", 3); }
nn::Tensor load_pgm(const fs::path& path) { return load_netpbm(path, "P5", 1); }

}  // namespace msfuse
