#pragma once

#include <stdexcept>
#include <string>

namespace fmrgc {

struct ShapeMismatchError : std::runtime_error {
    explicit ShapeMismatchError(const std::string& what) : std::runtime_error(what) {}
};

struct NonFiniteError : std::runtime_error {
    explicit NonFiniteError(const std::string& what) : std::runtime_error(what) {}
};

struct NotScalarError : std::runtime_error {
    explicit NotScalarError(const std::string& what) : std::runtime_error(what) {}
};

struct BadKernelError : std::runtime_error {
    explicit BadKernelError(const std::string& what) : std::runtime_error(what) {}
};

struct KTooLargeError : std::runtime_error {
    explicit KTooLargeError(const std::string& what) : std::runtime_error(what) {}
};

struct BadConfigError : std::runtime_error {
    explicit BadConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct TruncatedFileError : std::runtime_error {
    explicit TruncatedFileError(const std::string& what) : std::runtime_error(what) {}
};

struct BadLabelError : std::runtime_error {
    explicit BadLabelError(const std::string& what) : std::runtime_error(what) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace fmrgc
