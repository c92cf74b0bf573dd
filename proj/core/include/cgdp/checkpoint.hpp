#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "cgdp/linalg.hpp"

namespace cgdp {

/// Versioned text container shared by every persisted artifact: a header
/// line, string metadata, then named dense arrays. Reals are written in
/// shortest round-trip form, so write/read is bit-exact.
///
///   cgdp-checkpoint 1 <kind>
///   meta <key> <value>
///   array <name> <rows> <cols>
///   <row 0 values>
///   ...
class Checkpoint {
 public:
  static constexpr int kVersion = 1;

  Checkpoint() = default;
  explicit Checkpoint(std::string kind) : kind_(std::move(kind)) {}

  const std::string& kind() const { return kind_; }

  void put(const std::string& name, Matrix value);
  void put_vector(const std::string& name, const Vector& value);
  void put_meta(const std::string& key, std::string value);

  bool has(const std::string& name) const;
  const Matrix& get(const std::string& name) const;
  Vector get_vector(const std::string& name) const;
  const std::string& meta(const std::string& key) const;

  void write(std::ostream& out) const;
  static Checkpoint read(std::istream& in);

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

 private:
  std::string kind_;
  std::vector<std::pair<std::string, std::string>> meta_;
  std::vector<std::pair<std::string, Matrix>> arrays_;
};

/// Shortest decimal text that parses back to exactly `x`.
std::string format_exact(double x);
/// Nine significant digits, the precision of every emitted metric.
std::string format_metric(double x);

/// Parses text produced by format_exact (or any decimal); throws on junk.
double parse_real(std::string_view text);

}  // namespace cgdp
