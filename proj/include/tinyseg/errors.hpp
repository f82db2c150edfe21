#pragma once

#include <stdexcept>
#include <string>

namespace tinyseg {

// Typed errors, one class per failure category. The CLI maps these to
// exit codes (config -> 2, data -> 3, diverged -> 4).

struct ShapeMismatch : std::invalid_argument {
    explicit ShapeMismatch(const std::string& what) : std::invalid_argument(what) {}
};

struct EmptyTensor : std::invalid_argument {
    explicit EmptyTensor(const std::string& what) : std::invalid_argument(what) {}
};

struct NotScalar : std::invalid_argument {
    explicit NotScalar(const std::string& what) : std::invalid_argument(what) {}
};

struct DetachedTensor : std::invalid_argument {
    explicit DetachedTensor(const std::string& what) : std::invalid_argument(what) {}
};

struct DomainError : std::domain_error {
    explicit DomainError(const std::string& what) : std::domain_error(what) {}
};

struct NonFiniteGradient : std::runtime_error {
    explicit NonFiniteGradient(const std::string& what) : std::runtime_error(what) {}
};

struct InvalidGeometry : std::invalid_argument {
    explicit InvalidGeometry(const std::string& what) : std::invalid_argument(what) {}
};

struct OddSpatialDim : std::invalid_argument {
    explicit OddSpatialDim(const std::string& what) : std::invalid_argument(what) {}
};

struct DegenerateBatch : std::invalid_argument {
    explicit DegenerateBatch(const std::string& what) : std::invalid_argument(what) {}
};

struct CropLargerThanInput : std::invalid_argument {
    explicit CropLargerThanInput(const std::string& what) : std::invalid_argument(what) {}
};

struct NonBinaryMask : std::invalid_argument {
    explicit NonBinaryMask(const std::string& what) : std::invalid_argument(what) {}
};

struct NegativeGamma : std::invalid_argument {
    explicit NegativeGamma(const std::string& what) : std::invalid_argument(what) {}
};

struct DepthTooDeep : std::invalid_argument {
    explicit DepthTooDeep(const std::string& what) : std::invalid_argument(what) {}
};

struct InvalidConfig : std::invalid_argument {
    explicit InvalidConfig(const std::string& what) : std::invalid_argument(what) {}
};

struct EpochOutOfRange : std::out_of_range {
    explicit EpochOutOfRange(const std::string& what) : std::out_of_range(what) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

struct FileNotFound : DataError {
    explicit FileNotFound(const std::string& what) : DataError(what) {}
};

struct UnsupportedFormat : DataError {
    explicit UnsupportedFormat(const std::string& what) : DataError(what) {}
};

struct DimensionMismatch : DataError {
    explicit DimensionMismatch(const std::string& what) : DataError(what) {}
};

struct EmptyDataset : DataError {
    explicit EmptyDataset(const std::string& what) : DataError(what) {}
};

struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

struct VersionUnsupported : FormatError {
    explicit VersionUnsupported(const std::string& what) : FormatError(what) {}
};

struct DivergedLoss : std::runtime_error {
    explicit DivergedLoss(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace tinyseg
