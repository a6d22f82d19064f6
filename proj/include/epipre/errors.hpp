#pragma once

#include <stdexcept>
#include <string>

namespace epipre {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The point configuration does not determine a unique model.
class DegenerateConfiguration : public Error {
 public:
  using Error::Error;
};

/// Two cameras share a center, so no epipolar geometry exists.
class NoEpipolarGeometry : public Error {
 public:
  using Error::Error;
};

class InvalidFeature : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Malformed feature file, CSV or manifest. Carries the offending record.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, long record = -1)
      : Error(record >= 0 ? what + " (record " + std::to_string(record) + ")"
                          : what),
        record_(record) {}

  long record() const noexcept { return record_; }

 private:
  long record_;
};

/// Clustering was asked to run on natural-orientation descriptors.
class ModeError : public Error {
 public:
  using Error::Error;
};

class RollUnavailable : public Error {
 public:
  using Error::Error;
};

class ModelSchemaError : public Error {
 public:
  using Error::Error;
};

class ModelLoadError : public Error {
 public:
  using Error::Error;
};

class FoldError : public Error {
 public:
  using Error::Error;
};

class InsufficientData : public Error {
 public:
  using Error::Error;
};

class EmptyScene : public Error {
 public:
  using Error::Error;
};

/// A fixed-orientation feature set for `angle_rad` is needed but absent.
class ExtractionRequired : public Error {
 public:
  ExtractionRequired(std::string image, double angle_rad)
      : Error("fixed-orientation features of image '" + image +
              "' at angle " + std::to_string(angle_rad) + " rad required"),
        image_(std::move(image)),
        angle_rad_(angle_rad) {}

  const std::string& image() const noexcept { return image_; }
  double angle_rad() const noexcept { return angle_rad_; }

 private:
  std::string image_;
  double angle_rad_;
};

}  // namespace epipre
