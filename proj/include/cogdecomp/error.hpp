#pragma once

#include <functional>
#include <iostream>
#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>

namespace cogdecomp {

enum class Errc {
  IoError,
  MalformedHeader,
  UnsupportedDatatype,
  DimensionError,
  InvalidData,
  InvalidLevels,
  ZeroOffset,
  EmptyGlcm,
  NotNormalized,
  EmptyInput,
  InvalidK,
  InvalidSide,
  ModelLoadError,
  ShapeMismatch,
  ParseError,
  EmptyFile,
  DegenerateInput,
  RangeTooShort,
  ClassTooSmall,
  UnknownSublabel,
  TooFewSubjects,
  MissingSubclass,
  DimMismatch,
  EmptyTestSet,
  InvalidConfig,
  InvalidArgument,
};

constexpr std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::IoError: return "IoError";
    case Errc::MalformedHeader: return "MalformedHeader";
    case Errc::UnsupportedDatatype: return "UnsupportedDatatype";
    case Errc::DimensionError: return "DimensionError";
    case Errc::InvalidData: return "InvalidData";
    case Errc::InvalidLevels: return "InvalidLevels";
    case Errc::ZeroOffset: return "ZeroOffset";
    case Errc::EmptyGlcm: return "EmptyGlcm";
    case Errc::NotNormalized: return "NotNormalized";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::InvalidK: return "InvalidK";
    case Errc::InvalidSide: return "InvalidSide";
    case Errc::ModelLoadError: return "ModelLoadError";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::ParseError: return "ParseError";
    case Errc::EmptyFile: return "EmptyFile";
    case Errc::DegenerateInput: return "DegenerateInput";
    case Errc::RangeTooShort: return "RangeTooShort";
    case Errc::ClassTooSmall: return "ClassTooSmall";
    case Errc::UnknownSublabel: return "UnknownSublabel";
    case Errc::TooFewSubjects: return "TooFewSubjects";
    case Errc::MissingSubclass: return "MissingSubclass";
    case Errc::DimMismatch: return "DimMismatch";
    case Errc::EmptyTestSet: return "EmptyTestSet";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

/// Single exception type for the library; `code()` identifies the failure.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code), message_(message) {}

  Errc code() const noexcept { return code_; }
  /// what() without the code prefix.
  const std::string& message() const noexcept { return message_; }

 private:
  Errc code_;
  std::string message_;
};

// ---------------------------------------------------------------------------
// Warnings

using WarningSink = std::function<void(std::string_view)>;

namespace detail {

inline std::mutex& warning_mutex() {
  static std::mutex m;
  return m;
}

inline WarningSink& warning_sink_storage() {
  static WarningSink sink = [](std::string_view msg) {
    std::clog << "warning: " << msg << '\n';
  };
  return sink;
}

}  // namespace detail

/// Replaces the process-wide warning sink; returns the previous one.
inline WarningSink set_warning_sink(WarningSink sink) {
  std::lock_guard lock(detail::warning_mutex());
  auto previous = std::move(detail::warning_sink_storage());
  detail::warning_sink_storage() = std::move(sink);
  return previous;
}

inline void warn(std::string_view message) {
  std::lock_guard lock(detail::warning_mutex());
  if (auto& sink = detail::warning_sink_storage()) sink(message);
}

}  // namespace cogdecomp
