#include "facecorpus/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "facecorpus/text_util.hpp"

namespace facecorpus::eval {

namespace {

using ordered_json = nlohmann::ordered_json;
using json = nlohmann::json;

constexpr std::array<std::string_view, kCategoryCount> kCategoryLabels = {
    "Bias & Fairness",    "Face Recognition", "Face Authentication",
    "Face Analysis",      "Face Localization", "Face Tools Use",
};

}  // namespace

const std::array<CategoryTag, kCategoryCount>& all_categories() {
  static const std::array<CategoryTag, kCategoryCount> values = {
      CategoryTag::kBiasAndFairness,    CategoryTag::kFaceRecognition,
      CategoryTag::kFaceAuthentication, CategoryTag::kFaceAnalysis,
      CategoryTag::kFaceLocalization,   CategoryTag::kFaceToolsUse};
  return values;
}

std::string_view category_label(CategoryTag tag) {
  return kCategoryLabels[static_cast<std::size_t>(tag)];
}

std::optional<CategoryTag> parse_category_label(std::string_view label) {
  for (std::size_t i = 0; i < kCategoryLabels.size(); ++i) {
    if (label == kCategoryLabels[i]) return static_cast<CategoryTag>(i);
  }
  return std::nullopt;
}

namespace {

MCQItem parse_item(const json& line, std::size_t line_no) {
  auto bad = [line_no](const std::string& what) -> BenchmarkError {
    return BenchmarkError(BenchmarkError::Kind::kSchemaViolation,
                          "benchmark line " + std::to_string(line_no) + ": " + what);
  };

  MCQItem item;
  item.item_id = line.at("item_id").get<std::string>();
  if (item.item_id.empty()) throw bad("empty item_id");
  item.question = line.at("question").get<std::string>();
  if (item.question.empty()) throw bad("empty question");

  for (const auto& option : line.at("options")) {
    item.options.push_back(option.get<std::string>());
    if (trim_ascii(item.options.back()).empty()) throw bad("empty option text");
  }
  if (item.options.size() < 2 || item.options.size() > 6) {
    throw bad("options count must be 2..6, got " + std::to_string(item.options.size()));
  }

  const auto correct = line.at("correct_index").get<std::int64_t>();
  if (correct < 0 || static_cast<std::size_t>(correct) >= item.options.size()) {
    throw bad("correct_index out of range");
  }
  item.correct_index = static_cast<std::size_t>(correct);

  if (line.contains("images")) {
    for (const auto& image : line.at("images")) {
      item.images.push_back(image.get<std::string>());
      if (!valid_image_ref(item.images.back())) throw bad("invalid image ref");
    }
  }

  const std::string task = line.at("task").get<std::string>();
  const auto tag = parse_category_label(task);
  if (!tag) {
    throw BenchmarkError(BenchmarkError::Kind::kBadCategory,
                         "benchmark line " + std::to_string(line_no) +
                             ": unknown task category '" + task + "'");
  }
  item.task = *tag;
  // only the tools-use task has text-only items
  if (item.images.empty() && item.task != CategoryTag::kFaceToolsUse) {
    throw bad("non-tools-use item without images");
  }

  item.subtask = line.at("subtask").get<std::string>();
  if (item.subtask.empty()) throw bad("empty subtask");
  item.dataset = line.at("dataset").get<std::string>();
  if (item.dataset.empty()) throw bad("empty dataset");
  return item;
}

}  // namespace

std::vector<MCQItem> load_benchmark(std::istream& source) {
  std::vector<MCQItem> items;
  std::set<std::string> seen_ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(source, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim_ascii(line).empty()) continue;
    json parsed = json::parse(line, nullptr, false);
    if (parsed.is_discarded()) {
      throw BenchmarkError(BenchmarkError::Kind::kSchemaViolation,
                           "benchmark line " + std::to_string(line_no) + ": invalid JSON");
    }
    MCQItem item;
    try {
      item = parse_item(parsed, line_no);
    } catch (const json::exception& e) {
      throw BenchmarkError(BenchmarkError::Kind::kSchemaViolation,
                           "benchmark line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!seen_ids.insert(item.item_id).second) {
      throw BenchmarkError(BenchmarkError::Kind::kDuplicateItem,
                           "duplicate item_id '" + item.item_id + "'");
    }
    items.push_back(std::move(item));
  }
  return items;
}

std::vector<MCQItem> load_benchmark_string(std::string_view jsonl) {
  std::istringstream stream{std::string(jsonl)};
  return load_benchmark(stream);
}

std::vector<MCQItem> load_benchmark_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw BenchmarkError(BenchmarkError::Kind::kIoFailure, "cannot read " + path);
  }
  return load_benchmark(in);
}

namespace {

// Word characters for letter detection; apostrophes bind so contractions
// such as "don't" never expose a standalone trailing letter.
bool letter_word_byte(unsigned char c) {
  return std::isalnum(c) != 0 || c == '_' || c == '\'';
}

}  // namespace

ExtractedChoice extract_choice(const std::string& raw, const std::vector<std::string>& options) {
  ExtractedChoice extracted;
  extracted.raw_response = raw;
  const std::size_t n = options.size();

  for (std::size_t i = 0; i < raw.size(); ++i) {
    const char c = raw[i];
    const char upper = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (upper < 'A' || upper >= static_cast<char>('A' + n)) continue;
    const bool left_ok =
        i == 0 || !letter_word_byte(static_cast<unsigned char>(raw[i - 1]));
    const bool right_ok =
        i + 1 >= raw.size() || !letter_word_byte(static_cast<unsigned char>(raw[i + 1]));
    if (left_ok && right_ok) {
      extracted.choice = static_cast<std::size_t>(upper - 'A');
      extracted.method = ExtractionMethod::kLetterPattern;
      return extracted;
    }
  }

  std::optional<std::size_t> unique_match;
  for (std::size_t i = 0; i < n; ++i) {
    if (contains_ci(raw, options[i])) {
      if (unique_match) {
        unique_match.reset();
        break;
      }
      unique_match = i;
    }
  }
  if (unique_match) {
    extracted.choice = unique_match;
    extracted.method = ExtractionMethod::kOptionTextMatch;
  }
  return extracted;
}

std::string render_mcq_prompt(const MCQItem& item) {
  std::string out = "Question:\n";
  out += item.question;
  out += "\nOptions:\n";
  for (std::size_t i = 0; i < item.options.size(); ++i) {
    out += '(';
    out += static_cast<char>('A' + i);
    out += ") ";
    out += item.options[i];
    out += '\n';
  }
  out += "Answer with the option letter.";
  return out;
}

std::string transcripts_to_jsonl(const std::vector<Transcript>& transcripts) {
  std::string out;
  for (const Transcript& transcript : transcripts) {
    ordered_json line;
    line["item_id"] = transcript.item_id;
    line["raw_response"] = transcript.raw_response;
    line["status"] = transcript.status;
    line["attempts"] = transcript.attempts;
    if (!transcript.error.empty()) line["error"] = transcript.error;
    out += line.dump();
    out += '\n';
  }
  return out;
}

std::vector<Transcript> transcripts_from_jsonl(std::string_view jsonl) {
  std::vector<Transcript> transcripts;
  std::istringstream stream{std::string(jsonl)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(stream, line)) {
    ++line_no;
    if (trim_ascii(line).empty()) continue;
    json parsed = json::parse(line, nullptr, false);
    if (parsed.is_discarded()) {
      throw BenchmarkError(BenchmarkError::Kind::kSchemaViolation,
                           "transcript line " + std::to_string(line_no) + ": invalid JSON");
    }
    Transcript transcript;
    transcript.item_id = parsed.at("item_id").get<std::string>();
    transcript.raw_response = parsed.at("raw_response").get<std::string>();
    transcript.status = parsed.at("status").get<std::string>();
    transcript.attempts = parsed.value("attempts", 0);
    transcript.error = parsed.value("error", "");
    transcripts.push_back(std::move(transcript));
  }
  return transcripts;
}

namespace {

std::optional<std::string> eval_media_type(const std::filesystem::path& path) {
  std::string ext = to_lower_ascii(path.extension().string());
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".png") return "image/png";
  return std::nullopt;
}

}  // namespace

std::vector<Transcript> run_eval(const std::vector<MCQItem>& items,
                                 const std::filesystem::path& image_root,
                                 const AnnotationConfig& config, ChatTransport& transport) {
  std::vector<Transcript> transcripts(items.size());
  if (items.empty()) return transcripts;

  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::mutex error_mutex;
  std::exception_ptr abort_error;

  auto worker = [&]() {
    while (!stop.load(std::memory_order_relaxed)) {
      const std::size_t index = next.fetch_add(1, std::memory_order_relaxed);
      if (index >= items.size()) break;
      const MCQItem& item = items[index];

      Transcript transcript;
      transcript.item_id = item.item_id;
      try {
        std::vector<ImageBlob> blobs;
        bool images_ok = true;
        for (const std::string& ref : item.images) {
          const std::filesystem::path path = image_root / ref;
          const auto media = eval_media_type(path);
          std::ifstream in(path, std::ios::binary);
          if (!media || !in) {
            transcript.status = "failed";
            transcript.error = "image unreadable: " + ref;
            images_ok = false;
            break;
          }
          std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                          std::istreambuf_iterator<char>());
          blobs.push_back(ImageBlob{ref, std::move(bytes), *media});
        }
        if (images_ok) {
          const std::string body =
              build_chat_request(config.model_name, std::nullopt, render_mcq_prompt(item),
                                 blobs, config.temperature, config.max_tokens);
          const ChatCallResult call = call_chat(transport, config, body);
          transcript.attempts = call.attempts;
          if (call.status == ChatCallStatus::kOk) {
            transcript.status = "ok";
            transcript.raw_response = call.content;
          } else {
            transcript.status = "failed";
            transcript.error = call.error;
          }
        }
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!abort_error) abort_error = std::current_exception();
        stop.store(true, std::memory_order_relaxed);
        break;
      }
      transcripts[index] = std::move(transcript);
    }
  };

  const std::size_t worker_count =
      std::min<std::size_t>(std::max(config.max_concurrency, 1), items.size());
  std::vector<std::thread> workers;
  workers.reserve(worker_count);
  for (std::size_t i = 0; i < worker_count; ++i) workers.emplace_back(worker);
  for (std::thread& thread : workers) thread.join();

  if (abort_error) std::rethrow_exception(abort_error);
  return transcripts;
}

std::vector<ScoredItem> rescore(const std::vector<MCQItem>& items,
                                const std::vector<Transcript>& transcripts) {
  std::map<std::string, const Transcript*> by_id;
  for (const Transcript& transcript : transcripts) {
    by_id[transcript.item_id] = &transcript;
  }
  std::vector<ScoredItem> pairs;
  pairs.reserve(items.size());
  for (const MCQItem& item : items) {
    const auto it = by_id.find(item.item_id);
    if (it == by_id.end() || it->second->status != "ok") {
      ExtractedChoice unresolved;
      unresolved.raw_response = it == by_id.end() ? "" : it->second->raw_response;
      pairs.emplace_back(item, std::move(unresolved));
    } else {
      pairs.emplace_back(item, extract_choice(it->second->raw_response, item.options));
    }
  }
  return pairs;
}

double accuracy_percent(std::size_t n_correct, std::size_t n_items) {
  if (n_items == 0) return 0.0;
  const double percent = 100.0 * static_cast<double>(n_correct) / static_cast<double>(n_items);
  return std::floor(percent * 100.0 + 0.5) / 100.0;
}

CategoryReport score(const std::vector<ScoredItem>& pairs) {
  CategoryReport report;
  report.n_items = pairs.size();
  for (const auto& [item, choice] : pairs) {
    const bool correct = choice.choice && *choice.choice == item.correct_index;
    if (!choice.choice) ++report.n_unresolved;
    if (correct) ++report.n_correct;

    SubtaskScore& subtask = report.per_subtask[item.subtask];
    subtask.category = item.task;
    ++subtask.n_items;
    if (correct) ++subtask.n_correct;

    CategoryScore& category = report.per_category[item.task];
    ++category.n_items;
    if (correct) ++category.n_correct;
  }
  for (auto& [name, subtask] : report.per_subtask) {
    subtask.accuracy = accuracy_percent(subtask.n_correct, subtask.n_items);
  }
  for (auto& [tag, category] : report.per_category) {
    category.accuracy = accuracy_percent(category.n_correct, category.n_items);
  }
  report.overall = accuracy_percent(report.n_correct, report.n_items);
  return report;
}

namespace {

std::string format_accuracy(double value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", value);
  return std::string(buf);
}

}  // namespace

std::string report_to_json(const CategoryReport& report) {
  ordered_json doc;
  doc["overall"] = report.overall;
  doc["n_items"] = report.n_items;
  doc["n_correct"] = report.n_correct;
  doc["n_unresolved"] = report.n_unresolved;

  ordered_json categories = ordered_json::object();
  for (CategoryTag tag : all_categories()) {
    const auto it = report.per_category.find(tag);
    if (it == report.per_category.end()) continue;
    categories[std::string(category_label(tag))] =
        ordered_json{{"n_items", it->second.n_items},
                     {"n_correct", it->second.n_correct},
                     {"accuracy", it->second.accuracy}};
  }
  doc["per_category"] = std::move(categories);

  ordered_json subtasks = ordered_json::object();
  for (const auto& [name, subtask] : report.per_subtask) {
    subtasks[name] = ordered_json{{"category", std::string(category_label(subtask.category))},
                                  {"n_items", subtask.n_items},
                                  {"n_correct", subtask.n_correct},
                                  {"accuracy", subtask.accuracy}};
  }
  doc["per_subtask"] = std::move(subtasks);
  return doc.dump(2) + "\n";
}

CategoryReport report_from_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw BenchmarkError(BenchmarkError::Kind::kSchemaViolation,
                         std::string("invalid report JSON: ") + e.what());
  }
  CategoryReport report;
  report.overall = doc.at("overall").get<double>();
  report.n_items = doc.at("n_items").get<std::size_t>();
  report.n_correct = doc.at("n_correct").get<std::size_t>();
  report.n_unresolved = doc.at("n_unresolved").get<std::size_t>();
  for (const auto& [label, value] : doc.at("per_category").items()) {
    const auto tag = parse_category_label(label);
    if (!tag) {
      throw BenchmarkError(BenchmarkError::Kind::kBadCategory,
                           "unknown category in report: " + label);
    }
    CategoryScore score;
    score.n_items = value.at("n_items").get<std::size_t>();
    score.n_correct = value.at("n_correct").get<std::size_t>();
    score.accuracy = value.at("accuracy").get<double>();
    report.per_category[*tag] = score;
  }
  if (doc.contains("per_subtask")) {
    for (const auto& [name, value] : doc.at("per_subtask").items()) {
      SubtaskScore subtask;
      const auto tag = parse_category_label(value.at("category").get<std::string>());
      if (!tag) {
        throw BenchmarkError(BenchmarkError::Kind::kBadCategory,
                             "unknown category in report subtask: " + name);
      }
      subtask.category = *tag;
      subtask.n_items = value.at("n_items").get<std::size_t>();
      subtask.n_correct = value.at("n_correct").get<std::size_t>();
      subtask.accuracy = value.at("accuracy").get<double>();
      report.per_subtask[name] = subtask;
    }
  }
  return report;
}

CategoryReport report_from_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw BenchmarkError(BenchmarkError::Kind::kIoFailure, "cannot read " + path);
  }
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return report_from_json(content);
}

RenderedReport render_report(const CategoryReport& report,
                             const std::map<std::string, CategoryReport>& baselines,
                             const std::string& label) {
  struct Row {
    std::string name;
    std::array<std::optional<double>, kCategoryCount + 1> values;  // overall first
  };

  auto to_row = [](const std::string& name, const CategoryReport& source) {
    Row row;
    row.name = name;
    row.values[0] = source.overall;
    for (std::size_t i = 0; i < kCategoryCount; ++i) {
      const auto it = source.per_category.find(static_cast<CategoryTag>(i));
      if (it != source.per_category.end()) row.values[i + 1] = it->second.accuracy;
    }
    return row;
  };

  std::vector<Row> rows;
  rows.push_back(to_row(label, report));
  for (const auto& [name, baseline] : baselines) {
    rows.push_back(to_row(name, baseline));
  }

  std::array<std::optional<double>, kCategoryCount + 1> best;
  if (rows.size() > 1) {
    for (std::size_t column = 0; column <= kCategoryCount; ++column) {
      for (const Row& row : rows) {
        if (row.values[column] && (!best[column] || *row.values[column] > *best[column])) {
          best[column] = row.values[column];
        }
      }
    }
  }

  std::string markdown = "| Model | Overall";
  for (CategoryTag tag : all_categories()) {
    markdown += " | ";
    markdown += category_label(tag);
  }
  markdown += " |\n|---";
  for (std::size_t i = 0; i <= kCategoryCount; ++i) markdown += "|---";
  markdown += "|\n";
  for (const Row& row : rows) {
    markdown += "| ";
    markdown += row.name;
    for (std::size_t column = 0; column <= kCategoryCount; ++column) {
      markdown += " | ";
      if (!row.values[column]) {
        markdown += "-";
      } else {
        const std::string cell = format_accuracy(*row.values[column]);
        if (best[column] && *row.values[column] == *best[column]) {
          markdown += "**" + cell + "**";
        } else {
          markdown += cell;
        }
      }
    }
    markdown += " |\n";
  }

  ordered_json doc;
  ordered_json columns = ordered_json::array();
  columns.push_back("Overall");
  for (CategoryTag tag : all_categories()) columns.push_back(std::string(category_label(tag)));
  doc["columns"] = std::move(columns);
  ordered_json json_rows = ordered_json::array();
  for (const Row& row : rows) {
    ordered_json entry;
    entry["model"] = row.name;
    ordered_json values = ordered_json::array();
    for (const auto& value : row.values) {
      if (value) {
        values.push_back(*value);
      } else {
        values.push_back(nullptr);
      }
    }
    entry["values"] = std::move(values);
    json_rows.push_back(std::move(entry));
  }
  doc["rows"] = std::move(json_rows);

  RenderedReport rendered;
  rendered.markdown = std::move(markdown);
  rendered.json = doc.dump(2) + "\n";
  return rendered;
}

}  // namespace facecorpus::eval
