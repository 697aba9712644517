#include "facecorpus/metadata.hpp"

#include <fstream>
#include <istream>
#include <sstream>

#include "facecorpus/text_util.hpp"

namespace facecorpus {

namespace {

constexpr std::array<std::string_view, kAgeBucketCount> kAgeLabels = {
    "0-2", "3-9", "10-19", "20-29", "30-39", "40-49", "50-59", "60-69", "more than 70"};

constexpr std::array<std::string_view, kGenderCount> kGenderLabels = {"Male", "Female"};

constexpr std::array<std::string_view, kEthnicityCount> kEthnicityLabels = {
    "White", "Black", "Indian", "East Asian", "Southeast Asian", "Middle Eastern", "Latino"};

}  // namespace

const std::array<AgeBucket, kAgeBucketCount>& all_age_buckets() {
  static const std::array<AgeBucket, kAgeBucketCount> values = {
      AgeBucket::kAge0To2,   AgeBucket::kAge3To9,   AgeBucket::kAge10To19,
      AgeBucket::kAge20To29, AgeBucket::kAge30To39, AgeBucket::kAge40To49,
      AgeBucket::kAge50To59, AgeBucket::kAge60To69, AgeBucket::kAgeMoreThan70};
  return values;
}

const std::array<Gender, kGenderCount>& all_genders() {
  static const std::array<Gender, kGenderCount> values = {Gender::kMale, Gender::kFemale};
  return values;
}

const std::array<Ethnicity, kEthnicityCount>& all_ethnicities() {
  static const std::array<Ethnicity, kEthnicityCount> values = {
      Ethnicity::kWhite,          Ethnicity::kBlack,         Ethnicity::kIndian,
      Ethnicity::kEastAsian,      Ethnicity::kSoutheastAsian, Ethnicity::kMiddleEastern,
      Ethnicity::kLatino};
  return values;
}

std::string_view age_label(AgeBucket age) {
  return kAgeLabels[static_cast<std::size_t>(age)];
}

std::string_view gender_label(Gender gender) {
  return kGenderLabels[static_cast<std::size_t>(gender)];
}

std::string_view ethnicity_label(Ethnicity ethnicity) {
  return kEthnicityLabels[static_cast<std::size_t>(ethnicity)];
}

std::optional<AgeBucket> parse_age_label(std::string_view label) {
  for (std::size_t i = 0; i < kAgeLabels.size(); ++i) {
    if (label == kAgeLabels[i]) return static_cast<AgeBucket>(i);
  }
  return std::nullopt;
}

std::optional<Gender> parse_gender_label(std::string_view label) {
  for (std::size_t i = 0; i < kGenderLabels.size(); ++i) {
    if (label == kGenderLabels[i]) return static_cast<Gender>(i);
  }
  return std::nullopt;
}

std::optional<Ethnicity> parse_ethnicity_label(std::string_view label) {
  for (std::size_t i = 0; i < kEthnicityLabels.size(); ++i) {
    if (label == kEthnicityLabels[i]) return static_cast<Ethnicity>(i);
  }
  return std::nullopt;
}

bool valid_image_ref(std::string_view image_ref) {
  if (image_ref.empty()) return false;
  if (image_ref.front() == '/' || image_ref.front() == '\\') return false;
  std::string segment;
  auto flush = [&segment]() {
    const bool traversal = segment == "..";
    segment.clear();
    return traversal;
  };
  for (char c : image_ref) {
    if (c == '/' || c == '\\') {
      if (flush()) return false;
    } else {
      segment.push_back(c);
    }
  }
  return !flush();
}

namespace {

struct ColumnIndexes {
  std::size_t file;
  std::size_t age;
  std::size_t gender;
  std::size_t race;
  std::size_t required_cells;
};

ColumnIndexes resolve_columns(const std::vector<std::string>& header) {
  auto find = [&header](std::string_view name) -> std::size_t {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (trim_ascii(header[i]) == name) return i;
    }
    throw MetadataError(MetadataError::Kind::kMissingColumn,
                        "metadata header is missing column '" + std::string(name) + "'",
                        1, std::string(name));
  };
  ColumnIndexes idx{};
  idx.file = find("file");
  idx.age = find("age");
  idx.gender = find("gender");
  idx.race = find("race");
  idx.required_cells = std::max({idx.file, idx.age, idx.gender, idx.race}) + 1;
  return idx;
}

FaceRecord parse_row(const std::vector<std::string>& cells, const ColumnIndexes& idx,
                     std::size_t line, std::size_t header_cells) {
  if (cells.size() != header_cells || cells.size() < idx.required_cells) {
    throw MetadataError(MetadataError::Kind::kMalformedRow,
                        "row " + std::to_string(line) + " has " + std::to_string(cells.size()) +
                            " cells, header has " + std::to_string(header_cells),
                        line);
  }
  auto bad = [line](std::string_view column, std::string value) -> MetadataError {
    return MetadataError(MetadataError::Kind::kBadLabel,
                         "row " + std::to_string(line) + ": bad " + std::string(column) +
                             " value '" + value + "'",
                         line, std::string(column), std::move(value));
  };

  FaceRecord record;
  record.image_ref = trim_ascii(cells[idx.file]);
  if (!valid_image_ref(record.image_ref)) throw bad("file", record.image_ref);

  const std::string age = trim_ascii(cells[idx.age]);
  const auto age_value = parse_age_label(age);
  if (!age_value) throw bad("age", age);
  record.age = *age_value;

  const std::string gender = trim_ascii(cells[idx.gender]);
  const auto gender_value = parse_gender_label(gender);
  if (!gender_value) throw bad("gender", gender);
  record.gender = *gender_value;

  const std::string race = trim_ascii(cells[idx.race]);
  const auto race_value = parse_ethnicity_label(race);
  if (!race_value) throw bad("race", race);
  record.ethnicity = *race_value;

  return record;
}

}  // namespace

std::vector<FaceRecord> parse_metadata(std::istream& source, MetadataFormat format) {
  (void)format;  // kFairFaceCsv is the only format
  std::string line;
  if (!std::getline(source, line)) {
    throw MetadataError(MetadataError::Kind::kMissingColumn, "metadata source is empty", 0);
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();
  // strip a UTF-8 BOM if present
  if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);

  const std::vector<std::string> header = split_csv_line(line);
  const ColumnIndexes idx = resolve_columns(header);

  std::vector<FaceRecord> records;
  std::size_t line_no = 1;
  while (std::getline(source, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    records.push_back(parse_row(split_csv_line(line), idx, line_no, header.size()));
  }
  return records;
}

std::vector<FaceRecord> parse_metadata_string(std::string_view source, MetadataFormat format) {
  std::istringstream stream{std::string(source)};
  return parse_metadata(stream, format);
}

std::vector<FaceRecord> parse_metadata_file(const std::string& path, MetadataFormat format) {
  std::ifstream stream(path, std::ios::binary);
  if (!stream) {
    throw MetadataError(MetadataError::Kind::kMalformedRow,
                        "cannot open metadata file: " + path, 0);
  }
  return parse_metadata(stream, format);
}

std::string serialize_metadata(const std::vector<FaceRecord>& records) {
  std::string out = "file,age,gender,race\n";
  for (const FaceRecord& record : records) {
    out += record.image_ref;
    out += ',';
    out += age_label(record.age);
    out += ',';
    out += gender_label(record.gender);
    out += ',';
    out += ethnicity_label(record.ethnicity);
    out += '\n';
  }
  return out;
}

DistributionStats demographic_summary(const std::vector<FaceRecord>& records) {
  DistributionStats stats;
  stats.total = records.size();
  for (const FaceRecord& record : records) {
    ++stats.counts[{"age", std::string(age_label(record.age))}];
    ++stats.counts[{"gender", std::string(gender_label(record.gender))}];
    ++stats.counts[{"ethnicity", std::string(ethnicity_label(record.ethnicity))}];
  }
  return stats;
}

}  // namespace facecorpus
