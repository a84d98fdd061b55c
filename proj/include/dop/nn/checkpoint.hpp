#pragma once

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dop/nn/mlp.hpp"

namespace dop::nn {

// Checkpoint text format, one tensor per record:
//
//   dop-checkpoint 1
//   component <name> <key>=<value> ...      (optional manifest lines)
//   tensor <name> <rows> <cols>
//   <rows*cols hex-float values, column-major, space separated>
//   end
//
// Values are written with std::hexfloat so a save/load cycle is bit-exact.
struct NamedTensor {
  std::string name;
  Matrix value;
};

struct Checkpoint {
  std::vector<std::string> manifest;  // "component ..." lines, verbatim after the keyword
  std::vector<NamedTensor> tensors;

  const Matrix& at(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return t.value;
    throw InputError("checkpoint has no tensor named '" + name + "'");
  }
};

inline void write_checkpoint(std::ostream& os, const Checkpoint& ck) {
  os << "dop-checkpoint 1\n";
  for (const auto& m : ck.manifest) os << "component " << m << "\n";
  for (const auto& t : ck.tensors) {
    if (t.name.empty() || t.name.find_first_of(" \t\n") != std::string::npos)
      throw InputError("checkpoint tensor names must be non-empty and contain no whitespace");
    os << "tensor " << t.name << " " << t.value.rows() << " " << t.value.cols() << "\n";
    os << std::hexfloat;
    for (Eigen::Index k = 0; k < t.value.size(); ++k) os << (k ? " " : "") << t.value.data()[k];
    os << std::defaultfloat << "\n";
  }
  os << "end\n";
}

inline Checkpoint read_checkpoint(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "dop-checkpoint 1") throw InputError("not a dop checkpoint");
  Checkpoint ck;
  while (std::getline(is, line)) {
    if (line == "end") return ck;
    std::istringstream ls(line);
    std::string kw;
    ls >> kw;
    if (kw == "component") {
      std::string rest;
      std::getline(ls >> std::ws, rest);
      ck.manifest.push_back(rest);
    } else if (kw == "tensor") {
      NamedTensor t;
      long rows = -1, cols = -1;
      ls >> t.name >> rows >> cols;
      if (!ls || rows < 0 || cols < 0) throw InputError("malformed tensor header: " + line);
      t.value.resize(rows, cols);
      std::string values;
      std::getline(is, values);
      std::istringstream vs(values);
      std::string tok;
      for (Eigen::Index k = 0; k < t.value.size(); ++k) {
        if (!(vs >> tok)) throw InputError("tensor '" + t.name + "' is truncated");
        // strtod parses hex floats; operator>> with hexfloat is unreliable.
        char* end = nullptr;
        t.value.data()[k] = std::strtod(tok.c_str(), &end);
        if (end == tok.c_str()) throw InputError("bad value in tensor '" + t.name + "'");
      }
      ck.tensors.push_back(std::move(t));
    } else if (!kw.empty()) {
      throw InputError("unexpected checkpoint record: " + kw);
    }
  }
  throw InputError("checkpoint is missing its end marker");
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream os(path);
  if (!os) throw InputError("cannot open " + path + " for writing");
  write_checkpoint(os, ck);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot open " + path);
  return read_checkpoint(is);
}

// Appends `net`'s tensors as <prefix>.W<l> / <prefix>.b<l> plus a manifest line.
inline void add_network(Checkpoint& ck, const std::string& prefix, const Mlp& net) {
  std::ostringstream m;
  m << prefix << " widths=";
  for (std::size_t i = 0; i < net.widths().size(); ++i) m << (i ? "," : "") << net.widths()[i];
  m << " output=" << to_string(net.output_activation());
  ck.manifest.push_back(m.str());
  for (int l = 0; l < net.n_layers(); ++l) {
    ck.tensors.push_back({prefix + ".W" + std::to_string(l), net.weight(l)});
    ck.tensors.push_back({prefix + ".b" + std::to_string(l), net.bias(l)});
  }
}

inline void load_network(const Checkpoint& ck, const std::string& prefix, Mlp& net) {
  for (int l = 0; l < net.n_layers(); ++l) {
    const Matrix& w = ck.at(prefix + ".W" + std::to_string(l));
    const Matrix& b = ck.at(prefix + ".b" + std::to_string(l));
    if (w.rows() != net.weight(l).rows() || w.cols() != net.weight(l).cols() || b.rows() != net.bias(l).rows())
      throw ShapeError("checkpoint tensor shape does not match network " + prefix);
    net.weight(l) = w;
    net.bias(l) = b;
  }
}

}  // namespace dop::nn
