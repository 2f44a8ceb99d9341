#include "rfidb2b/error.hpp"

namespace rfidb2b {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::RecordMismatch: return "RecordMismatch";
    case Errc::HeaderMismatch: return "HeaderMismatch";
    case Errc::TruncatedImage: return "TruncatedImage";
    case Errc::SyntaxError: return "SyntaxError";
    case Errc::SemanticError: return "SemanticError";
    case Errc::DuplicateUid: return "DuplicateUid";
    case Errc::TagNotInField: return "TagNotInField";
    case Errc::RangeError: return "RangeError";
    case Errc::WriteProtected: return "WriteProtected";
    case Errc::FrameTooLong: return "FrameTooLong";
    case Errc::BadAddress: return "BadAddress";
    case Errc::CrcMismatch: return "CrcMismatch";
    case Errc::TooShort: return "TooShort";
    case Errc::Timeout: return "Timeout";
    case Errc::DeviceException: return "DeviceException";
    case Errc::TooManyRules: return "TooManyRules";
    case Errc::CapabilityDenied: return "CapabilityDenied";
    case Errc::DecodeFailure: return "DecodeFailure";
    case Errc::DuplicateTagId: return "DuplicateTagId";
    case Errc::UnknownTagId: return "UnknownTagId";
    case Errc::CycleDetected: return "CycleDetected";
    case Errc::InvalidRecord: return "InvalidRecord";
    case Errc::BadQuantity: return "BadQuantity";
    case Errc::UnknownOrder: return "UnknownOrder";
    case Errc::AlreadyConfirmed: return "AlreadyConfirmed";
    case Errc::IllegalTransition: return "IllegalTransition";
    case Errc::UnknownEntity: return "UnknownEntity";
    case Errc::UnknownEnterprise: return "UnknownEnterprise";
    case Errc::ReferenceError: return "ReferenceError";
    case Errc::StepFailure: return "StepFailure";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace rfidb2b
