#include <doctest.h>

#include <random>
#include <set>

#include "facecorpus/prompts.hpp"
#include "facecorpus/text_util.hpp"

using namespace facecorpus;

namespace {

const FaceRecord kBoyRecord{"val/1.jpg", AgeBucket::kAge3To9, Gender::kMale,
                            Ethnicity::kEastAsian};

// Golden question strings, one per feature, in enumeration order.
const std::array<std::string, kFeatureCount> kGoldenQuestions = {
    "Describe the demographic attributes of the image based on the visual information.",
    "Describe the facial structure of the image based on the visual information.",
    "Describe the skin texture of the image based on the visual information.",
    "Describe the expression and emotion of the image based on the visual information.",
    "Describe the lighting and image quality of the image based on the visual information.",
    "Describe the face pose of the image based on the visual information.",
    "Describe the forensic considerations of the image based on the visual information.",
    "Describe this image.",
};

FaceRecord random_record(std::mt19937_64& rng, std::size_t index) {
  FaceRecord record;
  record.image_ref = "val/" + std::to_string(index) + ".jpg";
  record.age = all_age_buckets()[rng() % kAgeBucketCount];
  record.gender = all_genders()[rng() % kGenderCount];
  record.ethnicity = all_ethnicities()[rng() % kEthnicityCount];
  return record;
}

}  // namespace

TEST_CASE("system prompt is a byte-stable constant with the key instructions") {
  const std::string& prompt = system_prompt();
  CHECK(prompt.rfind("You are an AI assistant specialised in analysing face images.", 0) == 0);
  CHECK(prompt.find("7 ethnicity groups") != std::string::npos);
  CHECK(prompt.find("White, Black, Indian, East Asian, Southeast Asian, Middle Eastern, "
                    "and Latino") != std::string::npos);
  CHECK(prompt.find("Never say \"I'm unable to analyze\"") != std::string::npos);
  CHECK(system_prompt() == prompt);
  CHECK(&system_prompt() == &system_prompt());
}

TEST_CASE("questions match the golden table rows exactly") {
  for (std::size_t i = 0; i < kFeatureCount; ++i) {
    CAPTURE(i);
    CHECK(question_for(all_features()[i]) == kGoldenQuestions[i]);
  }
}

TEST_CASE("specific prompt substitutes metadata and derives the clean question") {
  const PromptBundle bundle = specific_prompt(kBoyRecord, FeatureKind::kSkinTexture);
  CHECK(bundle.feature == FeatureKind::kSkinTexture);
  CHECK(bundle.system_prompt == system_prompt());
  CHECK(bundle.user_prompt ==
        "We know that this is face image of a male with East Asian ethnicity and "
        "3\xE2\x80\x93"
        "9 years old. Describe only the skin texture of image and discuss your "
        "description of skin texture based on the visual information (do not mention "
        "based on your description).");
  CHECK(bundle.question ==
        "Describe the skin texture of the image based on the visual information.");

  CHECK(specific_prompt(kBoyRecord, FeatureKind::kFacePose).question ==
        "Describe the face pose of the image based on the visual information.");
}

TEST_CASE("specific prompt rejects the general feature") {
  CHECK_THROWS_AS(specific_prompt(kBoyRecord, FeatureKind::kDetailGeneral), PromptError);
}

TEST_CASE("general prompt keeps only the open-ended question") {
  const PromptBundle bundle = general_prompt(kBoyRecord);
  CHECK(bundle.question == "Describe this image.");
  CHECK(bundle.user_prompt ==
        "We know that this is face image of a male with East Asian ethnicity and "
        "3\xE2\x80\x93"
        "9 years old. Describe this image.");

  const FaceRecord latina{"val/2.jpg", AgeBucket::kAge20To29, Gender::kFemale,
                          Ethnicity::kLatino};
  const PromptBundle other = general_prompt(latina);
  CHECK(other.user_prompt.find("Latino") != std::string::npos);
  CHECK(other.user_prompt.find("female") != std::string::npos);
  CHECK(other.question.find("Latino") == std::string::npos);
}

TEST_CASE("age display uses the en dash except the open-ended bucket") {
  CHECK(age_display(AgeBucket::kAge3To9) == "3\xE2\x80\x93\x39");
  CHECK(age_display(AgeBucket::kAge0To2) == "0\xE2\x80\x93\x32");
  CHECK(age_display(AgeBucket::kAgeMoreThan70) == "more than 70");
}

TEST_CASE("prompt set yields eight bundles in enumeration order") {
  const std::vector<PromptBundle> bundles = prompt_set(kBoyRecord);
  REQUIRE(bundles.size() == kFeatureCount);
  std::size_t general_count = 0;
  for (std::size_t i = 0; i < bundles.size(); ++i) {
    CHECK(bundles[i].feature == all_features()[i]);
    CHECK(bundles[i].question == kGoldenQuestions[i]);
    if (is_general_feature(bundles[i].feature)) ++general_count;
  }
  CHECK(general_count == 1);
  CHECK(prompt_set(kBoyRecord) == bundles);
}

TEST_CASE("sanitization: questions never leak the record metadata") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    const FaceRecord record = random_record(rng, static_cast<std::size_t>(trial));
    for (const PromptBundle& bundle : prompt_set(record)) {
      CAPTURE(bundle.question);
      CHECK(!contains_word_ci(bundle.question, gender_word(record.gender)));
      CHECK(!contains_ci(bundle.question, ethnicity_label(record.ethnicity)));
      CHECK(!contains_ci(bundle.question, age_label(record.age)));
      CHECK(!contains_ci(bundle.question, age_display(record.age)));
      CHECK(!contains_ci(bundle.question, "We know that"));
      CHECK(!contains_ci(bundle.question, "only the"));
      CHECK(!contains_ci(bundle.question, "do not mention"));
    }
  }
}

TEST_CASE("metadata completeness: every user prompt carries all three values") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    const FaceRecord record = random_record(rng, static_cast<std::size_t>(trial));
    for (const PromptBundle& bundle : prompt_set(record)) {
      CHECK(bundle.user_prompt.find(gender_word(record.gender)) != std::string::npos);
      CHECK(bundle.user_prompt.find(ethnicity_label(record.ethnicity)) != std::string::npos);
      CHECK(bundle.user_prompt.find(age_display(record.age)) != std::string::npos);
    }
  }
}

TEST_CASE("the question depends only on the feature, never the record") {
  std::mt19937_64 rng(17);
  for (FeatureKind feature : all_features()) {
    std::set<std::string> questions;
    for (int trial = 0; trial < 50; ++trial) {
      const FaceRecord record = random_record(rng, static_cast<std::size_t>(trial));
      questions.insert(is_general_feature(feature)
                           ? general_prompt(record).question
                           : specific_prompt(record, feature).question);
    }
    CHECK(questions.size() == 1);
    CHECK(*questions.begin() == question_for(feature));
  }
}

TEST_CASE("feature slugs round-trip and phrases are the template forms") {
  for (FeatureKind feature : all_features()) {
    CHECK(parse_feature_slug(feature_slug(feature)) == feature);
  }
  CHECK(!parse_feature_slug("nope").has_value());
  CHECK(feature_phrase(FeatureKind::kSkinTexture) == "skin texture");
  CHECK(feature_phrase(FeatureKind::kExpressionAndEmotion) == "expression and emotion");
  CHECK(feature_phrase(FeatureKind::kDemographicAttributes) == "demographic attributes");
}
