#include "facecorpus/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "facecorpus/encoding.hpp"
#include "facecorpus/text_util.hpp"

namespace facecorpus {

namespace {

using ordered_json = nlohmann::ordered_json;
using json = nlohmann::json;

QAPair pair_from_result(const AnswerResult& result, const FaceRecord& record) {
  QAPair pair;
  pair.id = result.key();
  pair.image_ref = result.image_ref;
  pair.feature = result.feature;
  pair.question = question_for(result.feature);
  pair.answer = result.answer;
  pair.age = record.age;
  pair.gender = record.gender;
  pair.ethnicity = record.ethnicity;
  pair.model_name = result.model_name;
  pair.timestamp = result.timestamp;
  pair.attempt_count = result.attempt_count;
  return pair;
}

}  // namespace

AssembleOutput assemble(const std::vector<AnswerResult>& results,
                        const std::vector<FaceRecord>& records) {
  std::map<std::string, const FaceRecord*> by_ref;
  for (const FaceRecord& record : records) {
    by_ref[record.image_ref] = &record;
  }

  AssembleOutput output;
  std::set<std::string> seen_keys;
  for (const AnswerResult& result : results) {
    const auto record_it = by_ref.find(result.image_ref);
    if (record_it == by_ref.end()) {
      throw CorpusError(CorpusError::Kind::kOrphanResult,
                        "result for unknown image: " + result.image_ref);
    }
    if (result.status != ResultStatus::kOk) {
      output.rejects.push_back(result);
      continue;
    }
    if (!seen_keys.insert(result.key()).second) {
      throw CorpusError(CorpusError::Kind::kDuplicateKey,
                        "duplicate ok result for " + result.key());
    }
    if (trim_ascii(result.answer).empty()) {
      throw CorpusError(CorpusError::Kind::kBadRecord,
                        "ok result with empty answer for " + result.key());
    }
    output.corpus.push_back(pair_from_result(result, *record_it->second));
  }

  std::sort(output.corpus.begin(), output.corpus.end(),
            [](const QAPair& a, const QAPair& b) {
              if (a.image_ref != b.image_ref) return a.image_ref < b.image_ref;
              return a.feature < b.feature;
            });

  output.manifest = corpus_stats(output.corpus);

  std::map<std::string, std::size_t> pairs_per_image;
  for (const QAPair& pair : output.corpus) ++pairs_per_image[pair.image_ref];
  for (const auto& [image_ref, count] : pairs_per_image) {
    if (count < kFeatureCount) output.incomplete_images.push_back(image_ref);
  }
  return output;
}

std::vector<Violation> leakage_check(const QAPair& pair) {
  std::vector<Violation> violations;
  auto probe = [&violations, &pair](std::string_view field, std::string needle) {
    if (contains_word_ci(pair.question, needle)) {
      violations.push_back(Violation{std::string(field), std::move(needle)});
    }
  };
  probe("gender", gender_word(pair.gender));
  probe("ethnicity", std::string(ethnicity_label(pair.ethnicity)));
  probe("age", std::string(age_label(pair.age)));
  const std::string display = age_display(pair.age);
  if (display != age_label(pair.age)) {
    probe("age", display);
  }
  return violations;
}

std::string corpus_to_jsonl(const std::vector<QAPair>& corpus) {
  std::string out;
  for (const QAPair& pair : corpus) {
    ordered_json line;
    line["id"] = pair.id;
    line["image"] = pair.image_ref;
    line["feature"] = std::string(feature_slug(pair.feature));
    line["question"] = pair.question;
    line["answer"] = pair.answer;
    line["meta"] = ordered_json{{"age", std::string(age_label(pair.age))},
                                {"gender", std::string(gender_label(pair.gender))},
                                {"ethnicity", std::string(ethnicity_label(pair.ethnicity))}};
    line["gen"] = ordered_json{{"model_name", pair.model_name},
                               {"timestamp", pair.timestamp},
                               {"attempt_count", pair.attempt_count}};
    out += line.dump();
    out += '\n';
  }
  return out;
}

std::string manifest_to_json(const CorpusManifest& manifest) {
  ordered_json doc;
  doc["schema_version"] = manifest.schema_version;
  doc["n_images"] = manifest.n_images;
  doc["n_pairs"] = manifest.n_pairs;

  ordered_json features = ordered_json::object();
  for (FeatureKind feature : all_features()) {
    const auto it = manifest.per_feature_counts.find(feature);
    features[std::string(feature_slug(feature))] =
        it == manifest.per_feature_counts.end() ? 0 : it->second;
  }
  doc["per_feature_counts"] = std::move(features);

  ordered_json groups = ordered_json::object();
  groups["total"] = manifest.per_group_counts.total;
  auto emit_attribute = [&groups, &manifest](const std::string& attribute,
                                             auto labels_of) {
    ordered_json values = ordered_json::object();
    for (const auto& label : labels_of()) {
      const auto it = manifest.per_group_counts.counts.find({attribute, std::string(label)});
      if (it != manifest.per_group_counts.counts.end()) {
        values[std::string(label)] = it->second;
      }
    }
    groups[attribute] = std::move(values);
  };
  emit_attribute("age", [] {
    std::vector<std::string_view> labels;
    for (AgeBucket age : all_age_buckets()) labels.push_back(age_label(age));
    return labels;
  });
  emit_attribute("gender", [] {
    std::vector<std::string_view> labels;
    for (Gender gender : all_genders()) labels.push_back(gender_label(gender));
    return labels;
  });
  emit_attribute("ethnicity", [] {
    std::vector<std::string_view> labels;
    for (Ethnicity ethnicity : all_ethnicities()) labels.push_back(ethnicity_label(ethnicity));
    return labels;
  });
  doc["per_group_counts"] = std::move(groups);
  doc["checksum"] = manifest.checksum;
  return doc.dump(2) + "\n";
}

void export_jsonl(const std::vector<QAPair>& corpus, const CorpusManifest& manifest,
                  const std::string& corpus_path, const std::string& manifest_path) {
  {
    std::ofstream out(corpus_path, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw CorpusError(CorpusError::Kind::kIoFailure, "cannot write " + corpus_path);
    }
    out << corpus_to_jsonl(corpus);
    if (!out) {
      throw CorpusError(CorpusError::Kind::kIoFailure, "short write to " + corpus_path);
    }
  }
  std::ofstream out(manifest_path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw CorpusError(CorpusError::Kind::kIoFailure, "cannot write " + manifest_path);
  }
  out << manifest_to_json(manifest);
  if (!out) {
    throw CorpusError(CorpusError::Kind::kIoFailure, "short write to " + manifest_path);
  }
}

void export_rejects(const std::vector<AnswerResult>& rejects, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw CorpusError(CorpusError::Kind::kIoFailure, "cannot write " + path);
  }
  for (const AnswerResult& reject : rejects) {
    out << serialize_answer_result(reject) << '\n';
  }
}

namespace {

QAPair parse_pair_line(const json& line, std::size_t line_no) {
  auto bad = [line_no](const std::string& what) -> CorpusError {
    return CorpusError(CorpusError::Kind::kBadRecord,
                       "corpus line " + std::to_string(line_no) + ": " + what);
  };

  QAPair pair;
  pair.id = line.at("id").get<std::string>();
  pair.image_ref = line.at("image").get<std::string>();
  const auto feature = parse_feature_slug(line.at("feature").get<std::string>());
  if (!feature) throw bad("unknown feature slug");
  pair.feature = *feature;
  if (pair.id != task_key(pair.image_ref, pair.feature)) {
    throw bad("id does not match image and feature");
  }
  pair.question = line.at("question").get<std::string>();
  pair.answer = line.at("answer").get<std::string>();
  if (trim_ascii(pair.answer).empty()) throw bad("empty answer");

  const json& meta = line.at("meta");
  const auto age = parse_age_label(meta.at("age").get<std::string>());
  const auto gender = parse_gender_label(meta.at("gender").get<std::string>());
  const auto ethnicity = parse_ethnicity_label(meta.at("ethnicity").get<std::string>());
  if (!age || !gender || !ethnicity) throw bad("meta label outside vocabulary");
  pair.age = *age;
  pair.gender = *gender;
  pair.ethnicity = *ethnicity;

  const json& gen = line.at("gen");
  pair.model_name = gen.at("model_name").get<std::string>();
  pair.timestamp = gen.at("timestamp").get<std::string>();
  pair.attempt_count = gen.at("attempt_count").get<int>();
  return pair;
}

}  // namespace

std::vector<QAPair> import_jsonl(std::istream& source) {
  std::vector<QAPair> corpus;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(source, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim_ascii(line).empty()) continue;
    json parsed = json::parse(line, nullptr, false);
    if (parsed.is_discarded()) {
      throw CorpusError(CorpusError::Kind::kBadRecord,
                        "corpus line " + std::to_string(line_no) + ": invalid JSON");
    }
    try {
      corpus.push_back(parse_pair_line(parsed, line_no));
    } catch (const json::exception& e) {
      throw CorpusError(CorpusError::Kind::kBadRecord,
                        "corpus line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return corpus;
}

std::vector<QAPair> import_jsonl_string(std::string_view jsonl) {
  std::istringstream stream{std::string(jsonl)};
  return import_jsonl(stream);
}

std::vector<QAPair> import_jsonl_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw CorpusError(CorpusError::Kind::kIoFailure, "cannot read " + path);
  }
  return import_jsonl(in);
}

CorpusManifest import_manifest_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw CorpusError(CorpusError::Kind::kIoFailure, "cannot read " + path);
  }
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw CorpusError(CorpusError::Kind::kBadRecord,
                      "invalid manifest " + path + ": " + e.what());
  }
  CorpusManifest manifest;
  manifest.schema_version = doc.at("schema_version").get<std::string>();
  manifest.n_images = doc.at("n_images").get<std::size_t>();
  manifest.n_pairs = doc.at("n_pairs").get<std::size_t>();
  for (FeatureKind feature : all_features()) {
    const std::string slug(feature_slug(feature));
    if (doc.at("per_feature_counts").contains(slug)) {
      manifest.per_feature_counts[feature] =
          doc.at("per_feature_counts").at(slug).get<std::size_t>();
    }
  }
  const json& groups = doc.at("per_group_counts");
  manifest.per_group_counts.total = groups.at("total").get<std::size_t>();
  for (const std::string attribute : {"age", "gender", "ethnicity"}) {
    if (!groups.contains(attribute)) continue;
    for (const auto& [label, count] : groups.at(attribute).items()) {
      manifest.per_group_counts.counts[{attribute, label}] = count.get<std::size_t>();
    }
  }
  manifest.checksum = doc.at("checksum").get<std::string>();
  return manifest;
}

CorpusManifest corpus_stats(const std::vector<QAPair>& corpus) {
  CorpusManifest manifest;
  manifest.n_pairs = corpus.size();

  std::map<std::string, FaceRecord> images;
  for (const QAPair& pair : corpus) {
    ++manifest.per_feature_counts[pair.feature];
    images.emplace(pair.image_ref,
                   FaceRecord{pair.image_ref, pair.age, pair.gender, pair.ethnicity});
  }
  manifest.n_images = images.size();

  std::vector<FaceRecord> records;
  records.reserve(images.size());
  for (const auto& [ref, record] : images) records.push_back(record);
  manifest.per_group_counts = demographic_summary(records);

  manifest.checksum = fnv1a64_hex(corpus_to_jsonl(corpus));
  return manifest;
}

}  // namespace facecorpus
