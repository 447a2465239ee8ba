#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace plac {

// Base of every exception thrown by the library. The CLI maps it to the
// "data error" exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class PlyErrorKind {
  kMalformedHeader,
  kUnsupportedLayout,
  kCountMismatch,
  kTruncatedPayload,
  kBadValue,
};

class PlyError : public Error {
 public:
  PlyError(PlyErrorKind kind, std::size_t offset, const std::string& what)
      : Error("ply: " + what + " (at byte " + std::to_string(offset) + ")"),
        kind_(kind),
        offset_(offset) {}

  PlyErrorKind kind() const noexcept { return kind_; }
  std::size_t offset() const noexcept { return offset_; }

 private:
  PlyErrorKind kind_;
  std::size_t offset_;
};

enum class WeightsErrorKind {
  kBadMagic,
  kTruncated,
  kHashMismatch,
  kConfigMismatch,
};

class WeightsError : public Error {
 public:
  WeightsError(WeightsErrorKind kind, const std::string& what)
      : Error("weights: " + what), kind_(kind) {}
  WeightsErrorKind kind() const noexcept { return kind_; }

 private:
  WeightsErrorKind kind_;
};

enum class StreamErrorKind {
  kBadMagic,
  kBadVersion,
  kWeightsMismatch,
  kGeometryMismatch,
  kTruncated,
  kCorrupt,
  kInvalidInput,
};

class StreamError : public Error {
 public:
  StreamError(StreamErrorKind kind, const std::string& what)
      : Error("stream: " + what), kind_(kind) {}
  StreamErrorKind kind() const noexcept { return kind_; }

 private:
  StreamErrorKind kind_;
};

}  // namespace plac
