#include "facecorpus/annotation.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <random>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "facecorpus/encoding.hpp"
#include "facecorpus/text_util.hpp"

namespace facecorpus {

namespace {

using ordered_json = nlohmann::ordered_json;
using json = nlohmann::json;

constexpr std::string_view kChatPath = "/chat/completions";

std::string errno_message(std::string_view what) {
  return std::string(what) + ": " + std::strerror(errno);
}

}  // namespace

std::vector<std::string> default_refusal_phrases() {
  return {"i'm unable to analyze", "i cannot analyze", "i can't assist",
          "i'm sorry, but", "unable to help with"};
}

bool is_refusal(std::string_view answer) {
  static const std::vector<std::string> phrases = default_refusal_phrases();
  return is_refusal(answer, phrases);
}

bool is_refusal(std::string_view answer, const std::vector<std::string>& phrases) {
  if (trim_ascii(answer).empty()) return true;
  for (const std::string& phrase : phrases) {
    if (contains_ci(answer, phrase)) return true;
  }
  return false;
}

std::string AnnotationConfig::timestamp() const {
  return clock ? clock() : utc_timestamp_now();
}

std::chrono::milliseconds backoff_delay(std::chrono::milliseconds base, int attempt,
                                        double jitter) {
  const double exponent = attempt > 1 ? std::pow(2.0, attempt - 1) : 1.0;
  const double ms = static_cast<double>(base.count()) * exponent * jitter;
  return std::chrono::milliseconds(static_cast<std::int64_t>(ms));
}

std::chrono::milliseconds backoff_delay_jittered(std::chrono::milliseconds base, int attempt) {
  thread_local std::mt19937_64 rng{std::random_device{}()};
  std::uniform_real_distribution<double> jitter(0.5, 1.5);
  return backoff_delay(base, attempt, jitter(rng));
}

std::string_view result_status_label(ResultStatus status) {
  switch (status) {
    case ResultStatus::kOk: return "ok";
    case ResultStatus::kRefusalFlagged: return "refusal_flagged";
    case ResultStatus::kFailed: return "failed";
  }
  return "failed";
}

std::optional<ResultStatus> parse_result_status(std::string_view label) {
  if (label == "ok") return ResultStatus::kOk;
  if (label == "refusal_flagged") return ResultStatus::kRefusalFlagged;
  if (label == "failed") return ResultStatus::kFailed;
  return std::nullopt;
}

std::string task_key(std::string_view image_ref, FeatureKind feature) {
  std::string key(image_ref);
  key += '#';
  key += feature_slug(feature);
  return key;
}

std::string AnswerResult::key() const {
  return task_key(image_ref, feature);
}

HttpChatTransport::HttpChatTransport(std::string base_url, std::chrono::milliseconds timeout)
    : timeout_(timeout), api_key_(resolve_api_key()) {
  while (!base_url.empty() && base_url.back() == '/') base_url.pop_back();
  const std::size_t scheme = base_url.find("://");
  const std::size_t slash =
      base_url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
  if (slash == std::string::npos) {
    host_ = base_url;
  } else {
    host_ = base_url.substr(0, slash);
    path_prefix_ = base_url.substr(slash);
  }
}

std::string HttpChatTransport::resolve_api_key() {
  if (const char* key = std::getenv("FACECORPUS_API_KEY"); key && *key) return key;
  if (const char* key = std::getenv("OPENAI_API_KEY"); key && *key) return key;
  return {};
}

ChatTransport::Response HttpChatTransport::post_chat(const std::string& body) {
  httplib::Client client(host_);
  client.set_connection_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout_));
  client.set_read_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout_));
  client.set_write_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout_));

  httplib::Headers headers;
  if (!api_key_.empty()) {
    headers.emplace("Authorization", "Bearer " + api_key_);
  }

  const std::string path = path_prefix_ + std::string(kChatPath);
  auto result = client.Post(path, headers, body, "application/json");
  if (!result) {
    return Response{0, {}, "transport: " + httplib::to_string(result.error())};
  }
  return Response{result->status, result->body, {}};
}

std::string build_chat_request(const std::string& model,
                               const std::optional<std::string>& system_message,
                               const std::string& user_text,
                               const std::vector<ImageBlob>& images,
                               double temperature, int max_tokens) {
  ordered_json user_content = ordered_json::array();
  user_content.push_back({{"type", "text"}, {"text", user_text}});
  for (const ImageBlob& image : images) {
    std::string url = "data:" + image.media_type + ";base64," +
                      base64_encode(image.bytes);
    user_content.push_back(
        {{"type", "image_url"}, {"image_url", ordered_json{{"url", std::move(url)}}}});
  }

  ordered_json messages = ordered_json::array();
  if (system_message) {
    messages.push_back({{"role", "system"}, {"content", *system_message}});
  }
  messages.push_back({{"role", "user"}, {"content", std::move(user_content)}});

  ordered_json body;
  body["model"] = model;
  body["messages"] = std::move(messages);
  body["temperature"] = temperature;
  body["max_tokens"] = max_tokens;
  return body.dump();
}

namespace {

// choices[0].message.content, or nullopt when the body does not follow the
// chat-completions shape.
std::optional<std::string> extract_content(const std::string& body) {
  json payload = json::parse(body, nullptr, false);
  if (payload.is_discarded()) return std::nullopt;
  if (!payload.contains("choices") || !payload["choices"].is_array() ||
      payload["choices"].empty()) {
    return std::nullopt;
  }
  const json& message = payload["choices"][0].value("message", json::object());
  if (!message.contains("content") || !message["content"].is_string()) {
    return std::nullopt;
  }
  return message["content"].get<std::string>();
}

}  // namespace

ChatCallResult call_chat(ChatTransport& transport, const AnnotationConfig& config,
                         const std::string& body,
                         const std::function<bool(const std::string&)>& accept) {
  ChatCallResult result;
  bool last_was_rejection = false;

  for (int attempt = 1; attempt <= config.max_attempts; ++attempt) {
    result.attempts = attempt;
    const ChatTransport::Response response = transport.post_chat(body);
    bool retryable = false;

    if (!response.error.empty()) {
      result.error = response.error;
      last_was_rejection = false;
      retryable = true;
    } else if (response.status == 401 || response.status == 403) {
      throw AuthError("authentication failed (HTTP " + std::to_string(response.status) + ")");
    } else if (response.status == 200) {
      if (auto content = extract_content(response.body)) {
        if (!accept || accept(*content)) {
          result.status = ChatCallStatus::kOk;
          result.content = std::move(*content);
          return result;
        }
        result.content = std::move(*content);
        result.error = "response content rejected";
        last_was_rejection = true;
        retryable = true;
      } else {
        result.error = "malformed chat-completions response body";
        last_was_rejection = false;
        retryable = true;
      }
    } else if (response.status == 429 || response.status >= 500) {
      result.error = "HTTP " + std::to_string(response.status);
      last_was_rejection = false;
      retryable = true;
    } else {
      // other 4xx: the request itself is wrong, retrying cannot help
      result.error = "HTTP " + std::to_string(response.status);
      last_was_rejection = false;
      break;
    }

    if (retryable && attempt < config.max_attempts && config.backoff_base.count() > 0) {
      std::this_thread::sleep_for(backoff_delay_jittered(config.backoff_base, attempt));
    }
  }

  result.status = last_was_rejection ? ChatCallStatus::kContentRejected
                                     : ChatCallStatus::kFailed;
  return result;
}

AnswerResult annotate_one(const PromptBundle& bundle, const ImageBlob& image,
                          const AnnotationConfig& config, ChatTransport& transport) {
  if (image.bytes.empty()) {
    throw std::invalid_argument("annotate_one: image bytes are empty");
  }
  if (image.media_type != "image/jpeg" && image.media_type != "image/png") {
    throw std::invalid_argument("annotate_one: unsupported media type " + image.media_type);
  }

  const std::string body =
      build_chat_request(config.model_name, bundle.system_prompt, bundle.user_prompt,
                         {image}, config.temperature, config.max_tokens);
  const ChatCallResult call =
      call_chat(transport, config, body, [&config](const std::string& content) {
        return !is_refusal(content, config.refusal_phrases);
      });

  AnswerResult result;
  result.image_ref = image.image_ref;
  result.feature = bundle.feature;
  result.model_name = config.model_name;
  result.attempt_count = call.attempts;
  result.timestamp = config.timestamp();
  switch (call.status) {
    case ChatCallStatus::kOk:
      result.status = ResultStatus::kOk;
      result.answer = call.content;
      break;
    case ChatCallStatus::kContentRejected:
      result.status = ResultStatus::kRefusalFlagged;
      result.answer = call.content;  // last response, kept for audit
      result.error = call.error;
      break;
    case ChatCallStatus::kFailed:
      result.status = ResultStatus::kFailed;
      result.error = call.error;
      break;
  }
  return result;
}

std::string serialize_answer_result(const AnswerResult& result) {
  ordered_json line;
  line["image"] = result.image_ref;
  line["feature"] = std::string(feature_slug(result.feature));
  line["status"] = std::string(result_status_label(result.status));
  line["answer"] = result.answer;
  line["model_name"] = result.model_name;
  line["attempt_count"] = result.attempt_count;
  line["timestamp"] = result.timestamp;
  if (!result.error.empty()) {
    line["error"] = result.error;
  }
  return line.dump();
}

AnswerResult parse_answer_result(std::string_view line) {
  const json payload = json::parse(line);
  AnswerResult result;
  result.image_ref = payload.at("image").get<std::string>();
  const auto feature = parse_feature_slug(payload.at("feature").get<std::string>());
  if (!feature) throw std::runtime_error("unknown feature slug in state log");
  result.feature = *feature;
  const auto status = parse_result_status(payload.at("status").get<std::string>());
  if (!status) throw std::runtime_error("unknown status in state log");
  result.status = *status;
  result.answer = payload.at("answer").get<std::string>();
  result.model_name = payload.at("model_name").get<std::string>();
  result.attempt_count = payload.at("attempt_count").get<int>();
  result.timestamp = payload.at("timestamp").get<std::string>();
  result.error = payload.value("error", "");
  return result;
}

JobState::~JobState() {
  close_fd();
}

JobState::JobState(JobState&& other) noexcept {
  path_ = std::move(other.path_);
  fd_ = other.fd_;
  other.fd_ = -1;
  entries_ = std::move(other.entries_);
  ok_index_ = std::move(other.ok_index_);
  latest_index_ = std::move(other.latest_index_);
}

JobState& JobState::operator=(JobState&& other) noexcept {
  if (this != &other) {
    close_fd();
    path_ = std::move(other.path_);
    fd_ = other.fd_;
    other.fd_ = -1;
    entries_ = std::move(other.entries_);
    ok_index_ = std::move(other.ok_index_);
    latest_index_ = std::move(other.latest_index_);
  }
  return *this;
}

void JobState::close_fd() noexcept {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

JobState JobState::open(const std::filesystem::path& path) {
  JobState state;
  state.path_ = path;

  if (std::filesystem::exists(path)) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read job state: " + path.string());
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::size_t begin = 0;
    while (begin < content.size()) {
      const std::size_t end = content.find('\n', begin);
      if (end == std::string::npos) break;  // torn final line, dropped
      const std::string_view line(content.data() + begin, end - begin);
      begin = end + 1;
      if (trim_ascii(line).empty()) continue;
      AnswerResult result;
      try {
        result = parse_answer_result(line);
      } catch (const std::exception& e) {
        if (begin >= content.size()) break;  // unparsable tail, dropped
        throw std::runtime_error("corrupt job state line in " + path.string() + ": " + e.what());
      }
      const std::string key = result.key();
      if (result.status == ResultStatus::kOk && state.ok_index_.count(key) > 0) {
        throw std::runtime_error("job state has duplicate ok entry for " + key);
      }
      state.entries_.push_back(std::move(result));
      const std::size_t index = state.entries_.size() - 1;
      if (state.entries_[index].status == ResultStatus::kOk) {
        state.ok_index_[key] = index;
      }
      state.latest_index_[key] = index;
    }
  }

  state.fd_ = ::open(path.c_str(), O_CREAT | O_WRONLY | O_APPEND | O_CLOEXEC, 0644);
  if (state.fd_ < 0) {
    throw std::runtime_error(errno_message("cannot open job state " + path.string()));
  }
  return state;
}

void JobState::append(const AnswerResult& result) {
  const std::string line = serialize_answer_result(result) + "\n";
  std::lock_guard<std::mutex> lock(mutex_);

  const std::string key = result.key();
  if (result.status == ResultStatus::kOk && ok_index_.count(key) > 0) {
    throw std::logic_error("duplicate ok append for " + key);
  }

  std::size_t written = 0;
  while (written < line.size()) {
    const ssize_t n = ::write(fd_, line.data() + written, line.size() - written);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw std::runtime_error(errno_message("job state write failed"));
    }
    written += static_cast<std::size_t>(n);
  }
  if (::fdatasync(fd_) != 0) {
    throw std::runtime_error(errno_message("job state fsync failed"));
  }

  entries_.push_back(result);
  const std::size_t index = entries_.size() - 1;
  if (result.status == ResultStatus::kOk) {
    ok_index_[key] = index;
  }
  latest_index_[key] = index;
}

bool JobState::is_ok(std::string_view image_ref, FeatureKind feature) const {
  std::lock_guard<std::mutex> lock(mutex_);
  return ok_index_.count(task_key(image_ref, feature)) > 0;
}

std::size_t JobState::ok_count() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return ok_index_.size();
}

std::size_t JobState::entry_count() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return entries_.size();
}

std::vector<AnswerResult> JobState::final_results() const {
  std::lock_guard<std::mutex> lock(mutex_);
  std::vector<AnswerResult> results;
  std::vector<bool> emitted(entries_.size(), false);
  for (const AnswerResult& entry : entries_) {
    const std::string key = entry.key();
    const auto ok_it = ok_index_.find(key);
    const std::size_t index = ok_it != ok_index_.end() ? ok_it->second
                                                       : latest_index_.at(key);
    if (!emitted[index]) {
      emitted[index] = true;
      results.push_back(entries_[index]);
    }
  }
  return results;
}

std::size_t pending_task_count(const std::vector<FaceRecord>& records, const JobState& state) {
  std::size_t pending = 0;
  for (const FaceRecord& record : records) {
    for (FeatureKind feature : all_features()) {
      if (!state.is_ok(record.image_ref, feature)) ++pending;
    }
  }
  return pending;
}

namespace {

std::optional<std::string> media_type_for(const std::filesystem::path& path) {
  std::string ext = to_lower_ascii(path.extension().string());
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".png") return "image/png";
  return std::nullopt;
}

std::optional<std::vector<std::uint8_t>> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

}  // namespace

BatchSummary run_batch(const std::vector<FaceRecord>& records,
                       const std::filesystem::path& image_root,
                       const AnnotationConfig& config, JobState& state,
                       ChatTransport& transport,
                       const std::function<bool(const AnswerResult&)>& on_result) {
  if (!std::filesystem::is_directory(image_root)) {
    throw std::runtime_error("image root is not a readable directory: " + image_root.string());
  }

  struct Task {
    const FaceRecord* record;
    FeatureKind feature;
  };
  std::vector<Task> tasks;
  for (const FaceRecord& record : records) {
    for (FeatureKind feature : all_features()) {
      if (!state.is_ok(record.image_ref, feature)) {
        tasks.push_back(Task{&record, feature});
      }
    }
  }

  BatchSummary summary;
  summary.scheduled = tasks.size();
  if (tasks.empty()) return summary;

  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::mutex emit_mutex;
  std::exception_ptr abort_error;

  auto worker = [&]() {
    while (!stop.load(std::memory_order_relaxed)) {
      const std::size_t index = next.fetch_add(1, std::memory_order_relaxed);
      if (index >= tasks.size()) break;
      const Task& task = tasks[index];

      AnswerResult result;
      try {
        const std::filesystem::path image_path = image_root / task.record->image_ref;
        const auto media_type = media_type_for(image_path);
        const auto bytes = media_type ? read_file_bytes(image_path) : std::nullopt;
        if (!media_type || !bytes || bytes->empty()) {
          result.image_ref = task.record->image_ref;
          result.feature = task.feature;
          result.model_name = config.model_name;
          result.attempt_count = 1;
          result.timestamp = config.timestamp();
          result.status = ResultStatus::kFailed;
          result.error = !media_type ? "unsupported image extension"
                                     : "image unreadable: " + image_path.string();
        } else {
          const PromptBundle bundle =
              is_general_feature(task.feature)
                  ? general_prompt(*task.record)
                  : specific_prompt(*task.record, task.feature);
          ImageBlob blob{task.record->image_ref, std::move(*bytes), *media_type};
          result = annotate_one(bundle, blob, config, transport);
        }
      } catch (...) {
        std::lock_guard<std::mutex> lock(emit_mutex);
        if (!abort_error) abort_error = std::current_exception();
        stop.store(true, std::memory_order_relaxed);
        break;
      }

      std::lock_guard<std::mutex> lock(emit_mutex);
      state.append(result);
      switch (result.status) {
        case ResultStatus::kOk: ++summary.completed_ok; break;
        case ResultStatus::kRefusalFlagged: ++summary.refusal_flagged; break;
        case ResultStatus::kFailed: ++summary.failed; break;
      }
      if (on_result && !on_result(result)) {
        stop.store(true, std::memory_order_relaxed);
      }
    }
  };

  const std::size_t worker_count =
      std::min<std::size_t>(std::max(config.max_concurrency, 1), tasks.size());
  std::vector<std::thread> workers;
  workers.reserve(worker_count);
  for (std::size_t i = 0; i < worker_count; ++i) workers.emplace_back(worker);
  for (std::thread& thread : workers) thread.join();

  if (abort_error) std::rethrow_exception(abort_error);
  summary.stopped_early = stop.load();
  return summary;
}

}  // namespace facecorpus
