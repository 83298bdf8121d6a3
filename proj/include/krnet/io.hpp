#pragma once

#include "krnet/numkit.hpp"

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace krnet {

// FNV-1a over the canonical config dump; embedded in every result file so
// artifacts from different configurations cannot be compared by accident.
inline uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hash_hex(uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// shortest round-trippable decimal text for a double
inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// ------------------------------------------------------------------- base64

namespace detail {
inline constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

inline std::string base64_encode(const unsigned char* data, size_t len) {
  std::string out;
  out.reserve((len + 2) / 3 * 4);
  for (size_t i = 0; i < len; i += 3) {
    uint32_t v = data[i] << 16;
    if (i + 1 < len) v |= data[i + 1] << 8;
    if (i + 2 < len) v |= data[i + 2];
    out.push_back(detail::kB64[(v >> 18) & 63]);
    out.push_back(detail::kB64[(v >> 12) & 63]);
    out.push_back(i + 1 < len ? detail::kB64[(v >> 6) & 63] : '=');
    out.push_back(i + 2 < len ? detail::kB64[v & 63] : '=');
  }
  return out;
}

inline std::vector<unsigned char> base64_decode(const std::string& s) {
  auto val = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  std::vector<unsigned char> out;
  int buf = 0, bits = 0;
  for (char c : s) {
    if (c == '=') break;
    const int v = val(c);
    if (v < 0) continue;
    buf = (buf << 6) | v;
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<unsigned char>((buf >> bits) & 0xff));
    }
  }
  return out;
}

// doubles serialized as little-endian 64-bit words
inline std::string encode_doubles(const Vec& v) {
  std::vector<unsigned char> bytes(v.size() * 8);
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    uint64_t bits;
    std::memcpy(&bits, &v[i], 8);
    for (int b = 0; b < 8; ++b) bytes[i * 8 + b] = static_cast<unsigned char>(bits >> (8 * b));
  }
  return base64_encode(bytes.data(), bytes.size());
}

inline Vec decode_doubles(const std::string& s) {
  std::vector<unsigned char> bytes = base64_decode(s);
  if (bytes.size() % 8 != 0) throw std::runtime_error("decode_doubles: truncated block");
  Vec v(bytes.size() / 8);
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<uint64_t>(bytes[i * 8 + b]) << (8 * b);
    std::memcpy(&v[i], &bits, 8);
  }
  return v;
}

// ----------------------------------------------------------------- csv / svg

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << content;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for reading: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// one sample per row; column names in the header; provenance on a comment line
inline void write_samples_csv(const std::string& path, const Mat& y,
                              const std::vector<std::string>& names,
                              const std::string& config_hash, uint64_t seed) {
  std::ostringstream out;
  out << "# config_hash=" << config_hash << " seed=" << seed << "\n";
  for (size_t j = 0; j < names.size(); ++j) {
    out << names[j] << (j + 1 < names.size() ? "," : "\n");
  }
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    for (Eigen::Index j = 0; j < y.cols(); ++j) {
      out << fmt_double(y(i, j)) << (j + 1 < y.cols() ? "," : "\n");
    }
  }
  write_text_file(path, out.str());
}

// minimal scatter plot of two columns, no external dependencies
inline void write_svg_scatter(const std::string& path, const Mat& pts, int dim_x, int dim_y,
                              const std::string& title) {
  const int w = 640, h = 640, margin = 40;
  double lo_x = pts.col(dim_x).minCoeff(), hi_x = pts.col(dim_x).maxCoeff();
  double lo_y = pts.col(dim_y).minCoeff(), hi_y = pts.col(dim_y).maxCoeff();
  const double pad_x = 0.05 * (hi_x - lo_x + 1e-12), pad_y = 0.05 * (hi_y - lo_y + 1e-12);
  lo_x -= pad_x;
  hi_x += pad_x;
  lo_y -= pad_y;
  hi_y += pad_y;
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << w / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << title
      << "</text>\n";
  const Eigen::Index cap = std::min<Eigen::Index>(pts.rows(), 20000);
  for (Eigen::Index i = 0; i < cap; ++i) {
    const double px = margin + (pts(i, dim_x) - lo_x) / (hi_x - lo_x) * (w - 2 * margin);
    const double py = h - margin - (pts(i, dim_y) - lo_y) / (hi_y - lo_y) * (h - 2 * margin);
    out << "<circle cx=\"" << static_cast<int>(px * 10) / 10.0 << "\" cy=\""
        << static_cast<int>(py * 10) / 10.0 << "\" r=\"1.2\" fill=\"#1f6fb2\" fill-opacity=\"0.5\"/>\n";
  }
  out << "</svg>\n";
  write_text_file(path, out.str());
}

}  // namespace krnet
