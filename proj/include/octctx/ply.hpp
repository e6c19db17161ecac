#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "octctx/error.hpp"
#include "octctx/geometry.hpp"

namespace octctx::ply {

static_assert(std::endian::native == std::endian::little,
              "binary PLY I/O assumes a little-endian host");

enum class Format { ascii, binary_little_endian };

namespace detail {

enum class Scalar { i8, u8, i16, u16, i32, u32, f32, f64 };

inline Scalar parse_scalar(const std::string& t) {
  if (t == "char" || t == "int8") return Scalar::i8;
  if (t == "uchar" || t == "uint8") return Scalar::u8;
  if (t == "short" || t == "int16") return Scalar::i16;
  if (t == "ushort" || t == "uint16") return Scalar::u16;
  if (t == "int" || t == "int32") return Scalar::i32;
  if (t == "uint" || t == "uint32") return Scalar::u32;
  if (t == "float" || t == "float32") return Scalar::f32;
  if (t == "double" || t == "float64") return Scalar::f64;
  throw ParseError("unknown property type '" + t + "'");
}

inline std::size_t scalar_size(Scalar s) {
  switch (s) {
    case Scalar::i8:
    case Scalar::u8: return 1;
    case Scalar::i16:
    case Scalar::u16: return 2;
    case Scalar::i32:
    case Scalar::u32:
    case Scalar::f32: return 4;
    case Scalar::f64: return 8;
  }
  return 0;
}

struct Property {
  std::string name;
  Scalar type = Scalar::f32;
  bool is_list = false;
  Scalar count_type = Scalar::u8;
};

struct Element {
  std::string name;
  std::size_t count = 0;
  std::vector<Property> props;
};

template <class T>
double load_as(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return static_cast<double>(v);
}

inline double read_binary(std::istream& in, Scalar s) {
  char buf[8];
  const auto n = scalar_size(s);
  if (!in.read(buf, static_cast<std::streamsize>(n))) throw ParseError("truncated binary body");
  switch (s) {
    case Scalar::i8: return load_as<std::int8_t>(buf);
    case Scalar::u8: return load_as<std::uint8_t>(buf);
    case Scalar::i16: return load_as<std::int16_t>(buf);
    case Scalar::u16: return load_as<std::uint16_t>(buf);
    case Scalar::i32: return load_as<std::int32_t>(buf);
    case Scalar::u32: return load_as<std::uint32_t>(buf);
    case Scalar::f32: return load_as<float>(buf);
    case Scalar::f64: return load_as<double>(buf);
  }
  return 0.0;
}

inline double read_ascii(std::istream& in) {
  std::string tok;
  if (!(in >> tok)) throw ParseError("truncated ascii body");
  try {
    std::size_t used = 0;
    const double v = std::stod(tok, &used);
    if (used != tok.size()) throw ParseError("bad number '" + tok + "'");
    return v;
  } catch (const std::logic_error&) {
    throw ParseError("bad number '" + tok + "'");
  }
}

}  // namespace detail

inline RawPointCloud read(std::istream& in, std::string source_id = "stream") {
  using namespace detail;
  std::string line;
  if (!std::getline(in, line) || line.substr(0, 3) != "ply")
    throw ParseError("missing 'ply' magic");

  Format fmt{};
  bool have_format = false;
  std::vector<Element> elements;
  for (;;) {
    if (!std::getline(in, line)) throw ParseError("header not terminated by end_header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string kw;
    ls >> kw;
    if (kw.empty() || kw == "comment" || kw == "obj_info") continue;
    if (kw == "end_header") break;
    if (kw == "format") {
      std::string f, ver;
      ls >> f >> ver;
      if (f == "ascii") fmt = Format::ascii;
      else if (f == "binary_little_endian") fmt = Format::binary_little_endian;
      else throw ParseError("unsupported format '" + f + "'");
      have_format = true;
    } else if (kw == "element") {
      Element e;
      long long count = -1;
      ls >> e.name >> count;
      if (e.name.empty() || count < 0) throw ParseError("malformed element line: " + line);
      e.count = static_cast<std::size_t>(count);
      elements.push_back(std::move(e));
    } else if (kw == "property") {
      if (elements.empty()) throw ParseError("property before any element");
      Property p;
      std::string t;
      ls >> t;
      if (t == "list") {
        std::string ct, it;
        ls >> ct >> it >> p.name;
        p.is_list = true;
        p.count_type = parse_scalar(ct);
        p.type = parse_scalar(it);
      } else {
        p.type = parse_scalar(t);
        ls >> p.name;
      }
      if (p.name.empty()) throw ParseError("property without name: " + line);
      elements.back().props.push_back(p);
    } else {
      throw ParseError("unexpected header keyword '" + kw + "'");
    }
  }
  if (!have_format) throw ParseError("missing format line");

  RawPointCloud pc;
  pc.source_id = std::move(source_id);
  bool found_vertex = false;
  for (const auto& e : elements) {
    const bool is_vertex = e.name == "vertex";
    int ix = -1, iy = -1, iz = -1;
    if (is_vertex) {
      found_vertex = true;
      for (std::size_t k = 0; k < e.props.size(); ++k) {
        if (e.props[k].is_list) continue;
        if (e.props[k].name == "x") ix = static_cast<int>(k);
        if (e.props[k].name == "y") iy = static_cast<int>(k);
        if (e.props[k].name == "z") iz = static_cast<int>(k);
      }
      if (ix < 0 || iy < 0 || iz < 0) throw ParseError("vertex element lacks x/y/z");
      pc.points.reserve(e.count);
    }
    for (std::size_t r = 0; r < e.count; ++r) {
      Vec3 p{};
      for (std::size_t k = 0; k < e.props.size(); ++k) {
        const auto& prop = e.props[k];
        std::size_t reps = 1;
        if (prop.is_list) {
          const double c = fmt == Format::ascii ? read_ascii(in) : read_binary(in, prop.count_type);
          if (c < 0) throw ParseError("negative list count");
          reps = static_cast<std::size_t>(c);
        }
        for (std::size_t j = 0; j < reps; ++j) {
          const double v = fmt == Format::ascii ? read_ascii(in) : read_binary(in, prop.type);
          if (!prop.is_list && is_vertex) {
            const int ki = static_cast<int>(k);
            if (ki == ix) p[0] = v;
            if (ki == iy) p[1] = v;
            if (ki == iz) p[2] = v;
          }
        }
      }
      if (is_vertex) pc.points.push_back(p);
    }
    if (is_vertex) break;
  }
  if (!found_vertex) throw ParseError("no vertex element");
  return pc;
}

inline RawPointCloud read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path + "'");
  return read(in, path);
}

// Writes x/y/z as doubles so a write/read round trip is exact.
inline void write(std::ostream& out, const RawPointCloud& pc, Format fmt = Format::binary_little_endian) {
  out << "ply\n"
      << "format " << (fmt == Format::ascii ? "ascii" : "binary_little_endian") << " 1.0\n"
      << "element vertex " << pc.size() << "\n"
      << "property double x\nproperty double y\nproperty double z\n"
      << "end_header\n";
  if (fmt == Format::ascii) {
    out << std::setprecision(std::numeric_limits<double>::max_digits10);
    for (const auto& p : pc.points) out << p[0] << ' ' << p[1] << ' ' << p[2] << '\n';
  } else {
    for (const auto& p : pc.points) out.write(reinterpret_cast<const char*>(p.data()), sizeof(double) * 3);
  }
}

inline void write_file(const std::string& path, const RawPointCloud& pc,
                       Format fmt = Format::binary_little_endian) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write '" + path + "'");
  write(out, pc, fmt);
  if (!out) throw InvalidInput("write failed for '" + path + "'");
}

}  // namespace octctx::ply
