#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "facecorpus/annotation.hpp"

namespace facecorpus::eval {

// FaceXBench-style task taxonomy: six top-level categories.
enum class CategoryTag {
  kBiasAndFairness,
  kFaceRecognition,
  kFaceAuthentication,
  kFaceAnalysis,
  kFaceLocalization,
  kFaceToolsUse,
};

inline constexpr std::size_t kCategoryCount = 6;

const std::array<CategoryTag, kCategoryCount>& all_categories();
std::string_view category_label(CategoryTag tag);
std::optional<CategoryTag> parse_category_label(std::string_view label);

struct BenchmarkError : std::runtime_error {
  enum class Kind { kSchemaViolation, kBadCategory, kDuplicateItem, kIoFailure };

  BenchmarkError(Kind kind, const std::string& message)
      : std::runtime_error(message), kind(kind) {}

  Kind kind;
};

struct MCQItem {
  std::string item_id;
  std::string question;
  std::vector<std::string> options;  // 2..6 entries, lettered A, B, ...
  std::size_t correct_index = 0;
  std::vector<std::string> images;  // may be empty (text-only tools-use items)
  CategoryTag task = CategoryTag::kBiasAndFairness;
  std::string subtask;
  std::string dataset;

  bool operator==(const MCQItem&) const = default;
};

// JSONL, one item per line: {"item_id", "question", "options",
// "correct_index", "images"?, "task", "subtask", "dataset"}.
std::vector<MCQItem> load_benchmark(std::istream& source);
std::vector<MCQItem> load_benchmark_string(std::string_view jsonl);
std::vector<MCQItem> load_benchmark_file(const std::string& path);

enum class ExtractionMethod { kLetterPattern, kOptionTextMatch, kUnresolved };

struct ExtractedChoice {
  std::string raw_response;
  std::optional<std::size_t> choice;  // empty = unresolved, no credit
  ExtractionMethod method = ExtractionMethod::kUnresolved;

  bool operator==(const ExtractedChoice&) const = default;
};

// Rule 1: the first standalone option letter wins, covering the forms
// "(X)", "X.", "X)", "answer is X" and a bare word-boundary letter,
// case-insensitive. Rule 2: otherwise a unique case-insensitive substring
// match of exactly one option's text. Otherwise unresolved.
ExtractedChoice extract_choice(const std::string& raw, const std::vector<std::string>& options);

// "Question:\n{q}\nOptions:\n(A) ...\n(B) ...\nAnswer with the option letter."
std::string render_mcq_prompt(const MCQItem& item);

struct Transcript {
  std::string item_id;
  std::string raw_response;  // empty when the request failed outright
  std::string status;        // "ok" or "failed"
  int attempts = 0;
  std::string error;

  bool operator==(const Transcript&) const = default;
};

std::string transcripts_to_jsonl(const std::vector<Transcript>& transcripts);
std::vector<Transcript> transcripts_from_jsonl(std::string_view jsonl);

// Runs one chat-completions query per item (annotation wire format: user
// message with the rendered question plus one image part per image ref
// under image_root). Item-level failures become empty transcripts; only
// AuthError aborts. Transcripts come back in item order.
std::vector<Transcript> run_eval(const std::vector<MCQItem>& items,
                                 const std::filesystem::path& image_root,
                                 const AnnotationConfig& config, ChatTransport& transport);

using ScoredItem = std::pair<MCQItem, ExtractedChoice>;

// Deterministic re-scoring from persisted raw responses; items without a
// transcript score as unresolved.
std::vector<ScoredItem> rescore(const std::vector<MCQItem>& items,
                                const std::vector<Transcript>& transcripts);

struct SubtaskScore {
  CategoryTag category = CategoryTag::kBiasAndFairness;
  std::size_t n_items = 0;
  std::size_t n_correct = 0;
  double accuracy = 0.0;  // percent, rounded half-up to 2 decimals

  bool operator==(const SubtaskScore&) const = default;
};

struct CategoryScore {
  std::size_t n_items = 0;
  std::size_t n_correct = 0;
  double accuracy = 0.0;

  bool operator==(const CategoryScore&) const = default;
};

struct CategoryReport {
  std::map<std::string, SubtaskScore> per_subtask;
  std::map<CategoryTag, CategoryScore> per_category;
  std::size_t n_items = 0;
  std::size_t n_correct = 0;
  double overall = 0.0;  // item-weighted, never a mean of category means
  std::size_t n_unresolved = 0;

  bool operator==(const CategoryReport&) const = default;
};

// 100 * correct / items, rounded half-up to 2 decimals.
double accuracy_percent(std::size_t n_correct, std::size_t n_items);

// Unresolved counts as incorrect.
CategoryReport score(const std::vector<ScoredItem>& pairs);

std::string report_to_json(const CategoryReport& report);
CategoryReport report_from_json(std::string_view text);
CategoryReport report_from_json_file(const std::string& path);

struct RenderedReport {
  std::string markdown;
  std::string json;
};

// Markdown table with one row per model (label first, baselines sorted by
// name) and columns Overall + the six categories; the best value in each
// column is emboldened when the table has more than one row. The JSON
// mirror carries the same rows.
RenderedReport render_report(const CategoryReport& report,
                             const std::map<std::string, CategoryReport>& baselines = {},
                             const std::string& label = "evaluated");

}  // namespace facecorpus::eval
