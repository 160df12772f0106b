#pragma once

#include <stdexcept>
#include <string>

#include "instseg/tensor.hpp"

namespace instseg {

enum class IoErrorCode {
  kOpenFailed,
  kBadMagic,
  kBadVersion,
  kBadDtype,
  kBadRank,
  kBadExtent,
  kTruncated,
  kTrailingBytes,
  kNonFinite,
};

const char* io_error_name(IoErrorCode code);

class IoError : public std::runtime_error {
 public:
  IoError(IoErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}
  IoErrorCode code() const { return code_; }

 private:
  IoErrorCode code_;
};

// Binary tensor format: magic "FCRT", version byte 0x01, dtype byte 0x01
// (f32), rank byte (1-4), rank x u32 little-endian extents, then row-major
// f32 little-endian payload. No padding, no trailing bytes.

Tensor read_tensor(const std::string& path);
void write_tensor(const std::string& path, const Tensor& t);

// In-memory codecs for the same format, used by the file functions and
// directly testable.
Tensor decode_tensor(const std::string& bytes, const std::string& context);
std::string encode_tensor(const Tensor& t, const std::string& context);

}  // namespace instseg
