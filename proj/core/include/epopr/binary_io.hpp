#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

namespace epopr::io {

// Little-endian, fixed-width primitives for the checkpoint formats
// (QRF1, CAL1, NN1, STASAC1).
class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& os) : os_(os) {}

  void magic(const std::string& tag);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void i64(std::int64_t v);
  void f64(double v);
  void str(const std::string& s);
  void f64s(const std::vector<double>& v);

 private:
  std::ostream& os_;
};

class BinaryReader {
 public:
  explicit BinaryReader(std::istream& is) : is_(is) {}

  // Throws Error(kFormat) if the next bytes are not `tag`.
  void expect_magic(const std::string& tag);
  // Returns true and consumes the tag if it is next; otherwise leaves the
  // stream untouched.
  bool try_magic(const std::string& tag);
  std::uint32_t u32();
  std::uint64_t u64();
  std::int64_t i64();
  double f64();
  std::string str();
  std::vector<double> f64s();
  bool at_end();

 private:
  void read_raw(void* dst, std::size_t n);
  std::istream& is_;
};

}  // namespace epopr::io
