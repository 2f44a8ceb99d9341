#pragma once

#include <json.hpp>

#include "rfidb2b/tag_codec.hpp"

namespace rfidb2b::tag {

/// Template as the JSON object of the transfer file.
nlohmann::ordered_json template_to_json(const TagTemplate& t);
/// Structural parse only; callers decide whether to validate.
TagTemplate template_from_json(const nlohmann::json& j);

/// Record values keyed by field name. Characters are one-byte strings (or
/// integer codes), dates are epoch seconds.
nlohmann::json record_to_json(const TagTemplate& t, const TagRecord& r);
TagRecord record_from_json(const TagTemplate& t, const nlohmann::json& j);
FieldValue value_from_json(FieldType type, const nlohmann::json& j);
nlohmann::json value_to_json(const FieldValue& v);

nlohmann::json image_to_json(const TagImage& img);
TagImage image_from_json(const nlohmann::json& j);

}  // namespace rfidb2b::tag
