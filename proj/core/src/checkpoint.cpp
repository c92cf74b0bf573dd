#include "cgdp/checkpoint.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace cgdp {

std::string format_exact(double x) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  if (ec != std::errc()) throw std::runtime_error("format_exact: conversion failed");
  return std::string(buf, ptr);
}

std::string format_metric(double x) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x, std::chars_format::general, 9);
  if (ec != std::errc()) throw std::runtime_error("format_metric: conversion failed");
  return std::string(buf, ptr);
}

double parse_real(std::string_view text) {
  double value = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    throw std::runtime_error("parse_real: cannot parse '" + std::string(text) + "'");
  }
  return value;
}

void Checkpoint::put(const std::string& name, Matrix value) {
  for (auto& [key, stored] : arrays_) {
    if (key == name) {
      stored = std::move(value);
      return;
    }
  }
  arrays_.emplace_back(name, std::move(value));
}

void Checkpoint::put_vector(const std::string& name, const Vector& value) {
  put(name, Matrix(value));
}

void Checkpoint::put_meta(const std::string& key, std::string value) {
  if (key.find_first_of(" \t\n") != std::string::npos ||
      value.find('\n') != std::string::npos) {
    throw std::invalid_argument("Checkpoint::put_meta: key/value contains whitespace");
  }
  for (auto& [k, v] : meta_) {
    if (k == key) {
      v = std::move(value);
      return;
    }
  }
  meta_.emplace_back(key, std::move(value));
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& [key, value] : arrays_) {
    if (key == name) return true;
  }
  return false;
}

const Matrix& Checkpoint::get(const std::string& name) const {
  for (const auto& [key, value] : arrays_) {
    if (key == name) return value;
  }
  throw std::out_of_range("Checkpoint: no array named '" + name + "'");
}

Vector Checkpoint::get_vector(const std::string& name) const {
  const Matrix& m = get(name);
  if (m.cols() != 1) throw std::runtime_error("Checkpoint: '" + name + "' is not a vector");
  return m.col(0);
}

const std::string& Checkpoint::meta(const std::string& key) const {
  for (const auto& [k, v] : meta_) {
    if (k == key) return v;
  }
  throw std::out_of_range("Checkpoint: no metadata key '" + key + "'");
}

void Checkpoint::write(std::ostream& out) const {
  out << "cgdp-checkpoint " << kVersion << ' ' << kind_ << '\n';
  for (const auto& [key, value] : meta_) out << "meta " << key << ' ' << value << '\n';
  for (const auto& [name, m] : arrays_) {
    out << "array " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        if (j > 0) out << ' ';
        out << format_exact(m(i, j));
      }
      out << '\n';
    }
  }
}

Checkpoint Checkpoint::read(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("Checkpoint: empty input");
  std::istringstream header(line);
  std::string magic;
  int version = 0;
  std::string kind;
  header >> magic >> version >> kind;
  if (magic != "cgdp-checkpoint") throw std::runtime_error("Checkpoint: bad magic '" + magic + "'");
  if (version != kVersion) {
    throw std::runtime_error("Checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint ck(kind);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "meta") {
      std::string key;
      ls >> key;
      std::string value;
      std::getline(ls, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      ck.meta_.emplace_back(key, value);
    } else if (tag == "array") {
      std::string name;
      Eigen::Index rows = -1;
      Eigen::Index cols = -1;
      ls >> name >> rows >> cols;
      if (!ls || rows < 0 || cols < 0) throw std::runtime_error("Checkpoint: bad array header");
      Matrix m(rows, cols);
      for (Eigen::Index i = 0; i < rows; ++i) {
        if (!std::getline(in, line)) throw std::runtime_error("Checkpoint: truncated array " + name);
        std::istringstream row(line);
        std::string tok;
        for (Eigen::Index j = 0; j < cols; ++j) {
          if (!(row >> tok)) throw std::runtime_error("Checkpoint: short row in " + name);
          m(i, j) = parse_real(tok);
        }
      }
      ck.arrays_.emplace_back(name, std::move(m));
    } else {
      throw std::runtime_error("Checkpoint: unexpected line '" + line + "'");
    }
  }
  return ck;
}

void Checkpoint::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("Checkpoint: cannot write " + path);
  write(out);
  if (!out) throw std::runtime_error("Checkpoint: write failed for " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("Checkpoint: cannot open " + path);
  return read(in);
}

}  // namespace cgdp
