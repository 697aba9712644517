#pragma once

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "facecorpus/metadata.hpp"

namespace facecorpus {

// The eight annotation targets, in the order the corpus enumerates them.
// DetailGeneral is the open-ended description and always comes last.
enum class FeatureKind {
  kDemographicAttributes,
  kFacialStructure,
  kSkinTexture,
  kExpressionAndEmotion,
  kLightingAndImageQuality,
  kFacePose,
  kForensicConsiderations,
  kDetailGeneral,
};

inline constexpr std::size_t kFeatureCount = 8;

const std::array<FeatureKind, kFeatureCount>& all_features();

// Lowercase phrase used in template slots, e.g. "skin texture".
std::string_view feature_phrase(FeatureKind feature);

// Stable identifier used in file schemas and task keys, e.g. "skin_texture".
std::string_view feature_slug(FeatureKind feature);

std::optional<FeatureKind> parse_feature_slug(std::string_view slug);

bool is_general_feature(FeatureKind feature);

struct PromptError : std::runtime_error {
  explicit PromptError(const std::string& message) : std::runtime_error(message) {}
};

struct PromptBundle {
  FeatureKind feature = FeatureKind::kDetailGeneral;
  std::string system_prompt;
  std::string user_prompt;  // carries the record's metadata
  std::string question;     // metadata-free form stored in the corpus

  bool operator==(const PromptBundle&) const = default;
};

// Byte-stable system prompt used for every annotation request.
const std::string& system_prompt();

// Display forms injected into the user-prompt metadata preamble.
// Gender renders as a lowercase noun; age renders with an en dash
// ("3–9"), except "more than 70" which stays verbatim.
std::string gender_word(Gender gender);
std::string age_display(AgeBucket age);

// The metadata-free question for a feature. Identical for every record.
std::string question_for(FeatureKind feature);

// Attribute-aware prompt for one of the seven specific features.
// Throws PromptError for kDetailGeneral.
PromptBundle specific_prompt(const FaceRecord& record, FeatureKind feature);

// Open-ended prompt; the stored question is just "Describe this image."
PromptBundle general_prompt(const FaceRecord& record);

// All eight bundles for a record, in enumeration order.
std::vector<PromptBundle> prompt_set(const FaceRecord& record);

}  // namespace facecorpus
