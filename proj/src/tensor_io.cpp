#include "instseg/tensor_io.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace instseg {

namespace {

constexpr char kMagic[4] = {'F', 'C', 'R', 'T'};
constexpr unsigned char kVersion = 0x01;
constexpr unsigned char kDtypeF32 = 0x01;

void put_u32_le(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

std::uint32_t get_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

float get_f32_le(const unsigned char* p) {
  const std::uint32_t bits = get_u32_le(p);
  float f;
  std::memcpy(&f, &bits, sizeof(f));
  return f;
}

void put_f32_le(std::string& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, sizeof(bits));
  put_u32_le(out, bits);
}

}  // namespace

const char* io_error_name(IoErrorCode code) {
  switch (code) {
    case IoErrorCode::kOpenFailed: return "open failed";
    case IoErrorCode::kBadMagic: return "bad magic";
    case IoErrorCode::kBadVersion: return "bad version";
    case IoErrorCode::kBadDtype: return "bad dtype";
    case IoErrorCode::kBadRank: return "bad rank";
    case IoErrorCode::kBadExtent: return "bad extent";
    case IoErrorCode::kTruncated: return "truncated";
    case IoErrorCode::kTrailingBytes: return "trailing bytes";
    case IoErrorCode::kNonFinite: return "non-finite value";
  }
  return "unknown";
}

Tensor decode_tensor(const std::string& bytes, const std::string& context) {
  auto fail = [&](IoErrorCode code) -> IoError {
    return IoError(code, std::string(io_error_name(code)) + " in tensor file " + context);
  };
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t n = bytes.size();
  if (n < 4 || std::memcmp(p, kMagic, 4) != 0) throw fail(IoErrorCode::kBadMagic);
  if (n < 5) throw fail(IoErrorCode::kTruncated);
  if (p[4] != kVersion) throw fail(IoErrorCode::kBadVersion);
  if (n < 6) throw fail(IoErrorCode::kTruncated);
  if (p[5] != kDtypeF32) throw fail(IoErrorCode::kBadDtype);
  if (n < 7) throw fail(IoErrorCode::kTruncated);
  const unsigned rank = p[6];
  if (rank < 1 || rank > 4) throw fail(IoErrorCode::kBadRank);
  const std::size_t header = 7 + 4ull * rank;
  if (n < header) throw fail(IoErrorCode::kTruncated);
  std::vector<int> dims(rank);
  std::uint64_t count = 1;
  for (unsigned i = 0; i < rank; ++i) {
    const std::uint32_t e = get_u32_le(p + 7 + 4 * i);
    if (e < 1 || e > 0x7fffffffu) throw fail(IoErrorCode::kBadExtent);
    dims[i] = static_cast<int>(e);
    count *= e;
    if (count > (1ull << 33)) throw fail(IoErrorCode::kBadExtent);
  }
  const std::size_t expected = header + 4ull * count;
  if (n < expected) throw fail(IoErrorCode::kTruncated);
  if (n > expected) throw fail(IoErrorCode::kTrailingBytes);
  std::vector<double> data(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const float f = get_f32_le(p + header + 4 * i);
    if (!std::isfinite(f)) throw fail(IoErrorCode::kNonFinite);
    data[i] = static_cast<double>(f);
  }
  return Tensor(std::move(dims), std::move(data));
}

std::string encode_tensor(const Tensor& t, const std::string& context) {
  if (t.rank() < 1 || t.rank() > 4) {
    throw IoError(IoErrorCode::kBadRank,
                  std::string(io_error_name(IoErrorCode::kBadRank)) + " writing tensor " + context);
  }
  std::string out;
  out.reserve(7 + 4ull * t.rank() + 4ull * static_cast<std::size_t>(t.size()));
  out.append(kMagic, 4);
  out.push_back(static_cast<char>(kVersion));
  out.push_back(static_cast<char>(kDtypeF32));
  out.push_back(static_cast<char>(t.rank()));
  for (int d : t.dims()) put_u32_le(out, static_cast<std::uint32_t>(d));
  for (std::int64_t i = 0; i < t.size(); ++i) {
    const double v = t[i];
    if (!std::isfinite(v)) {
      throw IoError(IoErrorCode::kNonFinite, std::string(io_error_name(IoErrorCode::kNonFinite)) +
                                                 " writing tensor " + context);
    }
    put_f32_le(out, static_cast<float>(v));
  }
  return out;
}

Tensor read_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError(IoErrorCode::kOpenFailed, "cannot open tensor file " + path);
  }
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_tensor(bytes, path);
}

void write_tensor(const std::string& path, const Tensor& t) {
  const std::string bytes = encode_tensor(t, path);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError(IoErrorCode::kOpenFailed, "cannot open tensor file for writing " + path);
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw IoError(IoErrorCode::kOpenFailed, "short write to tensor file " + path);
  }
}

}  // namespace instseg
