#include "facecorpus/prompts.hpp"

namespace facecorpus {

namespace {

constexpr std::array<std::string_view, kFeatureCount> kFeaturePhrases = {
    "demographic attributes",
    "facial structure",
    "skin texture",
    "expression and emotion",
    "lighting and image quality",
    "face pose",
    "forensic considerations",
    "detail (general)",
};

constexpr std::array<std::string_view, kFeatureCount> kFeatureSlugs = {
    "demographic_attributes",
    "facial_structure",
    "skin_texture",
    "expression_and_emotion",
    "lighting_and_image_quality",
    "face_pose",
    "forensic_considerations",
    "detail_general",
};

const std::string kSystemPrompt =
    "You are an AI assistant specialised in analysing face images.\n"
    "Your task is to analyze and describe faces with high accuracy and detail, "
    "suitable for forensic and biometric applications.\n"
    "As an assistant, you should always analyse given face images at any cost. "
    "Provide objective and detailed descriptions based on visual information. "
    "Do not make assumptions beyond visible traits.\n"
    "When analysing an image consider "
    "demographic estimation (i.e, estimated age range, gender, and ethnicity), "
    "facial structure and features (e.g., eye shape and color, nose shape, lip "
    "thickness, jawline, cheekbones, and other defining attributes), "
    "skin texture and condition (e.g., smoothness, wrinkles, scars, freckles, "
    "moles, tattoos, or other marks.), "
    "expression and emotion (e.g., if the face appears neutral, smiling, "
    "frowning, surprised, etc.) "
    "lighting and image quality (i.e., image brightness, sharpness, "
    "blurriness, and possible distortions.) "
    "face pose (i.e., face orientation, such as frontal, profile, slightly "
    "tilted), occlusions or any obstructions (e.g., hair, glasses, mask, "
    "etc.), "
    "forensic considerations (e.g., low-light conditions, partial occlusions, "
    "makeup, or aging effects), etc.\n"
    "I may provide you extra information about ethnicity among 7 ethnicity "
    "groups: White, Black, Indian, East Asian, Southeast Asian, Middle "
    "Eastern, and Latino.\n"
    "I may also provide you information about gender and age.\n"
    "If you are asked for specific feature or attribute only describe what is "
    "asked in the question.\n"
    "Never say \"I'm unable to analyze\", instead answer with detailed "
    "description based on visual information.\n"
    "Your answers should be simple text description (one or multiple "
    "paragraphs).";

std::string metadata_preamble(const FaceRecord& record) {
  std::string out = "We know that this is face image of a ";
  out += gender_word(record.gender);
  out += " with ";
  out += ethnicity_label(record.ethnicity);
  out += " ethnicity and ";
  out += age_display(record.age);
  out += " years old. ";
  return out;
}

}  // namespace

const std::array<FeatureKind, kFeatureCount>& all_features() {
  static const std::array<FeatureKind, kFeatureCount> values = {
      FeatureKind::kDemographicAttributes, FeatureKind::kFacialStructure,
      FeatureKind::kSkinTexture,           FeatureKind::kExpressionAndEmotion,
      FeatureKind::kLightingAndImageQuality, FeatureKind::kFacePose,
      FeatureKind::kForensicConsiderations,  FeatureKind::kDetailGeneral};
  return values;
}

std::string_view feature_phrase(FeatureKind feature) {
  return kFeaturePhrases[static_cast<std::size_t>(feature)];
}

std::string_view feature_slug(FeatureKind feature) {
  return kFeatureSlugs[static_cast<std::size_t>(feature)];
}

std::optional<FeatureKind> parse_feature_slug(std::string_view slug) {
  for (std::size_t i = 0; i < kFeatureSlugs.size(); ++i) {
    if (slug == kFeatureSlugs[i]) return static_cast<FeatureKind>(i);
  }
  return std::nullopt;
}

bool is_general_feature(FeatureKind feature) {
  return feature == FeatureKind::kDetailGeneral;
}

const std::string& system_prompt() {
  return kSystemPrompt;
}

std::string gender_word(Gender gender) {
  return gender == Gender::kMale ? "male" : "female";
}

std::string age_display(AgeBucket age) {
  if (age == AgeBucket::kAgeMoreThan70) return "more than 70";
  // "3-9" -> "3–9" (en dash), matching the prose rendering
  std::string out;
  for (char c : age_label(age)) {
    if (c == '-') {
      out += "\xE2\x80\x93";
    } else {
      out.push_back(c);
    }
  }
  return out;
}

std::string question_for(FeatureKind feature) {
  if (is_general_feature(feature)) return "Describe this image.";
  std::string out = "Describe the ";
  out += feature_phrase(feature);
  out += " of the image based on the visual information.";
  return out;
}

PromptBundle specific_prompt(const FaceRecord& record, FeatureKind feature) {
  if (is_general_feature(feature)) {
    throw PromptError("specific_prompt does not accept the general feature");
  }
  const std::string_view phrase = feature_phrase(feature);
  std::string user = metadata_preamble(record);
  user += "Describe only the ";
  user += phrase;
  user += " of image and discuss your description of ";
  user += phrase;
  user += " based on the visual information (do not mention based on your description).";

  PromptBundle bundle;
  bundle.feature = feature;
  bundle.system_prompt = system_prompt();
  bundle.user_prompt = std::move(user);
  bundle.question = question_for(feature);
  return bundle;
}

PromptBundle general_prompt(const FaceRecord& record) {
  PromptBundle bundle;
  bundle.feature = FeatureKind::kDetailGeneral;
  bundle.system_prompt = system_prompt();
  bundle.user_prompt = metadata_preamble(record) + "Describe this image.";
  bundle.question = question_for(FeatureKind::kDetailGeneral);
  return bundle;
}

std::vector<PromptBundle> prompt_set(const FaceRecord& record) {
  std::vector<PromptBundle> bundles;
  bundles.reserve(kFeatureCount);
  for (FeatureKind feature : all_features()) {
    bundles.push_back(is_general_feature(feature) ? general_prompt(record)
                                                  : specific_prompt(record, feature));
  }
  return bundles;
}

}  // namespace facecorpus
