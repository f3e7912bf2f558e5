#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace msmil {

/// Broad failure category; the CLI maps these onto exit codes.
enum class ErrorKind {
  kUsage,      // bad flags or config keys
  kData,       // unreadable input, format or dimension problems, tissue scarcity
  kNumerical,  // solver failure, degenerate labels
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& w) : Error(ErrorKind::kData, w) {}
};

struct GeometryError : Error {
  explicit GeometryError(const std::string& w) : Error(ErrorKind::kData, w) {}
};

struct TissueScarcityError : Error {
  TissueScarcityError(const std::string& slide_id, std::size_t attempts)
      : Error(ErrorKind::kData,
              "tissue scarcity on slide '" + slide_id + "': " +
                  std::to_string(attempts) + " consecutive rejections"),
        slide_id(slide_id) {}
  std::string slide_id;
};

struct BackendError : Error {
  BackendError(const std::string& w, std::size_t patch_index)
      : Error(ErrorKind::kData,
              w + " (patch " + std::to_string(patch_index) + ")"),
        patch_index(patch_index) {}
  std::size_t patch_index;
};

struct ModelShapeError : Error {
  explicit ModelShapeError(const std::string& w) : Error(ErrorKind::kData, w) {}
};

/// Binary or text file failed validation at a given byte offset.
struct FormatError : Error {
  FormatError(const std::string& w, std::uint64_t offset)
      : Error(ErrorKind::kData,
              w + " at byte offset " + std::to_string(offset)),
        offset(offset) {}
  std::uint64_t offset;
};

struct SizeError : Error {
  explicit SizeError(const std::string& w) : Error(ErrorKind::kData, w) {}
};

struct DataError : Error {
  explicit DataError(const std::string& w) : Error(ErrorKind::kData, w) {}
};

struct DegenerateLabelError : Error {
  explicit DegenerateLabelError(const std::string& w)
      : Error(ErrorKind::kNumerical, w) {}
};

struct NumericalError : Error {
  explicit NumericalError(const std::string& w)
      : Error(ErrorKind::kNumerical, w) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorKind::kUsage, w) {}
};

}  // namespace msmil
