#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace facecorpus {

// Closed FairFace vocabularies. The CSV labels below are canonical; any
// display formatting (en dash age ranges, lowercase gender nouns) is owned
// by the prompt renderer.

enum class AgeBucket {
  kAge0To2,
  kAge3To9,
  kAge10To19,
  kAge20To29,
  kAge30To39,
  kAge40To49,
  kAge50To59,
  kAge60To69,
  kAgeMoreThan70,
};

enum class Gender { kMale, kFemale };

enum class Ethnicity {
  kWhite,
  kBlack,
  kIndian,
  kEastAsian,
  kSoutheastAsian,
  kMiddleEastern,
  kLatino,
};

inline constexpr std::size_t kAgeBucketCount = 9;
inline constexpr std::size_t kGenderCount = 2;
inline constexpr std::size_t kEthnicityCount = 7;

const std::array<AgeBucket, kAgeBucketCount>& all_age_buckets();
const std::array<Gender, kGenderCount>& all_genders();
const std::array<Ethnicity, kEthnicityCount>& all_ethnicities();

std::string_view age_label(AgeBucket age);
std::string_view gender_label(Gender gender);
std::string_view ethnicity_label(Ethnicity ethnicity);

std::optional<AgeBucket> parse_age_label(std::string_view label);
std::optional<Gender> parse_gender_label(std::string_view label);
std::optional<Ethnicity> parse_ethnicity_label(std::string_view label);

struct FaceRecord {
  std::string image_ref;  // relative path, no ".." segments
  AgeBucket age = AgeBucket::kAge0To2;
  Gender gender = Gender::kMale;
  Ethnicity ethnicity = Ethnicity::kWhite;

  bool operator==(const FaceRecord&) const = default;
};

// True iff image_ref is non-empty, relative, and free of ".." segments.
bool valid_image_ref(std::string_view image_ref);

enum class MetadataFormat { kFairFaceCsv };

struct MetadataError : std::runtime_error {
  enum class Kind { kMissingColumn, kBadLabel, kMalformedRow };

  MetadataError(Kind kind, std::string message, std::size_t line = 0,
                std::string column = {}, std::string value = {})
      : std::runtime_error(std::move(message)),
        kind(kind),
        line(line),
        column(std::move(column)),
        value(std::move(value)) {}

  Kind kind;
  std::size_t line;    // 1-based physical line in the file (header is line 1)
  std::string column;  // offending column for kBadLabel / kMissingColumn
  std::string value;   // offending cell for kBadLabel
};

// Parses "file,age,gender,race" CSV (extra columns tolerated, LF or CRLF,
// minimal RFC 4180 quoting). Labels must match the closed vocabularies
// exactly after ASCII trim; invalid image refs are reported as bad "file"
// labels. Throws MetadataError.
std::vector<FaceRecord> parse_metadata(std::istream& source,
                                       MetadataFormat format = MetadataFormat::kFairFaceCsv);
std::vector<FaceRecord> parse_metadata_string(std::string_view source,
                                              MetadataFormat format = MetadataFormat::kFairFaceCsv);
std::vector<FaceRecord> parse_metadata_file(const std::string& path,
                                            MetadataFormat format = MetadataFormat::kFairFaceCsv);

// Canonical writer; parse_metadata_string(serialize_metadata(r)) == r.
std::string serialize_metadata(const std::vector<FaceRecord>& records);

struct DistributionStats {
  // (attribute, value) -> count, attribute in {"age", "gender", "ethnicity"}
  std::map<std::pair<std::string, std::string>, std::size_t> counts;
  std::size_t total = 0;

  bool operator==(const DistributionStats&) const = default;
};

DistributionStats demographic_summary(const std::vector<FaceRecord>& records);

}  // namespace facecorpus
