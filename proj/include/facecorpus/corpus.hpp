#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "facecorpus/annotation.hpp"
#include "facecorpus/metadata.hpp"
#include "facecorpus/prompts.hpp"

namespace facecorpus {

struct CorpusError : std::runtime_error {
  enum class Kind { kOrphanResult, kDuplicateKey, kIoFailure, kBadRecord };

  CorpusError(Kind kind, const std::string& message)
      : std::runtime_error(message), kind(kind) {}

  Kind kind;
};

struct QAPair {
  std::string id;  // image_ref + "#" + feature slug
  std::string image_ref;
  FeatureKind feature = FeatureKind::kDetailGeneral;
  std::string question;
  std::string answer;
  // source metadata, canonical CSV labels
  AgeBucket age = AgeBucket::kAge0To2;
  Gender gender = Gender::kMale;
  Ethnicity ethnicity = Ethnicity::kWhite;
  // generation provenance
  std::string model_name;
  std::string timestamp;
  int attempt_count = 0;

  bool operator==(const QAPair&) const = default;
};

struct CorpusManifest {
  std::string schema_version = "1";
  std::size_t n_images = 0;
  std::size_t n_pairs = 0;
  std::map<FeatureKind, std::size_t> per_feature_counts;
  DistributionStats per_group_counts;  // over distinct images
  std::string checksum;                // fnv1a64 of the JSONL body

  bool operator==(const CorpusManifest&) const = default;
};

struct AssembleOutput {
  std::vector<QAPair> corpus;  // sorted by (image_ref, feature)
  CorpusManifest manifest;
  std::vector<AnswerResult> rejects;             // non-Ok results, input order
  std::vector<std::string> incomplete_images;    // images with fewer than 8 pairs
};

// Joins Ok results with record metadata into QAPairs; non-Ok results land
// in rejects. Questions are regenerated from the feature so they always
// match the prompt templates. Throws kOrphanResult for results whose
// image_ref is not in records and kDuplicateKey for a repeated Ok key.
AssembleOutput assemble(const std::vector<AnswerResult>& results,
                        const std::vector<FaceRecord>& records);

struct Violation {
  std::string field;   // "gender", "ethnicity" or "age"
  std::string needle;  // matched metadata string

  bool operator==(const Violation&) const = default;
};

// Flags the pair's own gender word, ethnicity label, or age bucket (CSV or
// display form) appearing in the question; word-boundary, case-insensitive.
std::vector<Violation> leakage_check(const QAPair& pair);

// One compact JSON object per line, key order (id, image, feature,
// question, answer, meta, gen), UTF-8, LF. Byte-identical on re-export.
std::string corpus_to_jsonl(const std::vector<QAPair>& corpus);
std::string manifest_to_json(const CorpusManifest& manifest);

void export_jsonl(const std::vector<QAPair>& corpus, const CorpusManifest& manifest,
                  const std::string& corpus_path, const std::string& manifest_path);
void export_rejects(const std::vector<AnswerResult>& rejects, const std::string& path);

std::vector<QAPair> import_jsonl(std::istream& source);
std::vector<QAPair> import_jsonl_string(std::string_view jsonl);
std::vector<QAPair> import_jsonl_file(const std::string& path);
CorpusManifest import_manifest_file(const std::string& path);

// Recomputes the manifest from the pairs; equals the assembly manifest.
CorpusManifest corpus_stats(const std::vector<QAPair>& corpus);

}  // namespace facecorpus
