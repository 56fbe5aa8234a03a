#pragma once

#include <iosfwd>
#include <map>
#include <string>

#include "edt/tape.hpp"

namespace edt {

/// Text container: a header line, free-form `key value` metadata lines, then one
/// `param <name> <rows> <cols> <trainable>` line per tensor followed by its
/// values in shortest round-trip decimal form. Loading reproduces every value
/// bit-exactly.
struct ParameterFile {
  std::map<std::string, std::string> metadata;
  ParameterSet params;
};

void write_parameters(std::ostream& os, const ParameterSet& params,
                      const std::map<std::string, std::string>& metadata = {});
ParameterFile read_parameters(std::istream& is);

void save_parameters(const std::string& path, const ParameterSet& params,
                     const std::map<std::string, std::string>& metadata = {});
ParameterFile load_parameters(const std::string& path);

/// Shortest decimal string that parses back to exactly `x`.
std::string format_double(double x);
double parse_double(const std::string& s);

}  // namespace edt
