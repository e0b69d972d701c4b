#include "epopr/binary_io.hpp"

#include <bit>
#include <cstring>

#include "epopr/error.hpp"

namespace epopr::io {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint formats assume a little-endian host");

constexpr std::uint64_t kMaxArray = 1ULL << 32;

}  // namespace

void BinaryWriter::magic(const std::string& tag) {
  os_.write(tag.data(), static_cast<std::streamsize>(tag.size()));
}

void BinaryWriter::u32(std::uint32_t v) {
  os_.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void BinaryWriter::u64(std::uint64_t v) {
  os_.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void BinaryWriter::i64(std::int64_t v) {
  os_.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void BinaryWriter::f64(double v) {
  os_.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void BinaryWriter::str(const std::string& s) {
  u64(s.size());
  os_.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void BinaryWriter::f64s(const std::vector<double>& v) {
  u64(v.size());
  if (!v.empty()) {
    os_.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
}

void BinaryReader::read_raw(void* dst, std::size_t n) {
  is_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is_.gcount()) != n) {
    throw Error(Errc::kFormat, "unexpected end of checkpoint data");
  }
}

void BinaryReader::expect_magic(const std::string& tag) {
  std::string got(tag.size(), '\0');
  read_raw(got.data(), got.size());
  if (got != tag) {
    throw Error(Errc::kFormat, "expected section '" + tag + "'");
  }
}

bool BinaryReader::try_magic(const std::string& tag) {
  const auto start = is_.tellg();
  std::string got(tag.size(), '\0');
  is_.read(got.data(), static_cast<std::streamsize>(got.size()));
  if (static_cast<std::size_t>(is_.gcount()) == tag.size() && got == tag) {
    return true;
  }
  is_.clear();
  is_.seekg(start);
  return false;
}

std::uint32_t BinaryReader::u32() {
  std::uint32_t v;
  read_raw(&v, sizeof v);
  return v;
}

std::uint64_t BinaryReader::u64() {
  std::uint64_t v;
  read_raw(&v, sizeof v);
  return v;
}

std::int64_t BinaryReader::i64() {
  std::int64_t v;
  read_raw(&v, sizeof v);
  return v;
}

double BinaryReader::f64() {
  double v;
  read_raw(&v, sizeof v);
  return v;
}

std::string BinaryReader::str() {
  const auto n = u64();
  if (n > kMaxArray) throw Error(Errc::kFormat, "string length out of range");
  std::string s(n, '\0');
  if (n) read_raw(s.data(), n);
  return s;
}

std::vector<double> BinaryReader::f64s() {
  const auto n = u64();
  if (n > kMaxArray) throw Error(Errc::kFormat, "array length out of range");
  std::vector<double> v(n);
  if (n) read_raw(v.data(), n * sizeof(double));
  return v;
}

bool BinaryReader::at_end() {
  return is_.peek() == std::char_traits<char>::eof();
}

}  // namespace epopr::io
