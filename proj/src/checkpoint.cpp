#include "edt/checkpoint.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace edt {

namespace {
constexpr const char* kMagic = "edt-params";
constexpr int kVersion = 1;
}  // namespace

std::string format_double(double x) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  if (ec != std::errc()) throw FormatError("cannot format double");
  return std::string(buf, end);
}

double parse_double(const std::string& s) {
  double x = 0.0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
  if (ec != std::errc() || end != s.data() + s.size()) {
    throw FormatError("malformed number '" + s + "'");
  }
  return x;
}

void write_parameters(std::ostream& os, const ParameterSet& params,
                      const std::map<std::string, std::string>& metadata) {
  os << kMagic << ' ' << kVersion << '\n';
  for (const auto& [k, v] : metadata) {
    if (k.find_first_of(" \n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw FormatError("metadata key/value contains whitespace: '" + k + "'");
    }
    os << "meta " << k << ' ' << v << '\n';
  }
  for (const auto& e : params.entries()) {
    os << "param " << e.name << ' ' << e.value.rows() << ' ' << e.value.cols() << ' '
       << (e.trainable ? 1 : 0) << '\n';
    for (Index i = 0; i < e.value.rows(); ++i) {
      for (Index j = 0; j < e.value.cols(); ++j) {
        if (j) os << ' ';
        os << format_double(e.value(i, j));
      }
      os << '\n';
    }
  }
  os << "end\n";
}

ParameterFile read_parameters(std::istream& is) {
  ParameterFile out;
  std::string magic;
  int version = 0;
  if (!(is >> magic >> version) || magic != kMagic) throw FormatError("not a parameter file");
  if (version != kVersion) {
    throw FormatError("parameter file version " + std::to_string(version) + ", expected " +
                      std::to_string(kVersion));
  }
  std::string tag;
  while (is >> tag) {
    if (tag == "end") return out;
    if (tag == "meta") {
      std::string key, value;
      is >> key;
      std::getline(is >> std::ws, value);
      out.metadata[key] = value;
    } else if (tag == "param") {
      std::string name;
      Index rows = 0, cols = 0;
      int trainable = 1;
      if (!(is >> name >> rows >> cols >> trainable) || rows < 0 || cols < 0) {
        throw FormatError("malformed param header");
      }
      Matrix m(rows, cols);
      std::string tok;
      for (Index i = 0; i < rows; ++i) {
        for (Index j = 0; j < cols; ++j) {
          if (!(is >> tok)) throw FormatError("truncated values for '" + name + "'");
          m(i, j) = parse_double(tok);
        }
      }
      out.params.add(name, std::move(m), trainable != 0);
    } else {
      throw FormatError("unexpected token '" + tag + "'");
    }
  }
  throw FormatError("parameter file missing 'end'");
}

void save_parameters(const std::string& path, const ParameterSet& params,
                     const std::map<std::string, std::string>& metadata) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  write_parameters(os, params, metadata);
}

ParameterFile load_parameters(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open '" + path + "'");
  return read_parameters(is);
}

}  // namespace edt
