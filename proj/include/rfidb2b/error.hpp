#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rfidb2b {

enum class Errc {
  // tag_codec
  RecordMismatch,
  HeaderMismatch,
  TruncatedImage,
  SyntaxError,
  SemanticError,
  // rfid_sim
  DuplicateUid,
  TagNotInField,
  RangeError,
  WriteProtected,
  // modbus_rtu
  FrameTooLong,
  BadAddress,
  CrcMismatch,
  TooShort,
  Timeout,
  DeviceException,
  // control_gate
  TooManyRules,
  CapabilityDenied,
  DecodeFailure,
  // traceability
  DuplicateTagId,
  UnknownTagId,
  CycleDetected,
  InvalidRecord,
  // enterprise
  BadQuantity,
  UnknownOrder,
  AlreadyConfirmed,
  IllegalTransition,
  UnknownEntity,
  UnknownEnterprise,
  // scenario
  ReferenceError,
  StepFailure,
  IoError,
};

std::string_view errc_name(Errc code) noexcept;

/// Every failure raised by the library carries one of the Errc codes above;
/// the message holds the human-readable detail.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

/// Parse failures additionally carry a 1-based source position.
class ParseError : public Error {
 public:
  ParseError(Errc code, int line, int column, const std::string& what)
      : Error(code, std::to_string(line) + ":" + std::to_string(column) + ": " + what),
        line_(line),
        column_(column) {}

  int line() const noexcept { return line_; }
  int column() const noexcept { return column_; }

 private:
  int line_;
  int column_;
};

}  // namespace rfidb2b
