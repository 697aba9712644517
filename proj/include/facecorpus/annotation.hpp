#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "facecorpus/metadata.hpp"
#include "facecorpus/prompts.hpp"

namespace facecorpus {

std::vector<std::string> default_refusal_phrases();

// True iff the answer is empty/whitespace or contains a lexicon phrase
// case-insensitively.
bool is_refusal(std::string_view answer);
bool is_refusal(std::string_view answer, const std::vector<std::string>& phrases);

struct AnnotationConfig {
  std::string base_url = "http://127.0.0.1:8080/v1";
  std::string model_name = "gpt-4o";
  int max_concurrency = 4;
  int max_attempts = 5;
  std::chrono::milliseconds backoff_base{1000};
  double temperature = 0.0;
  int max_tokens = 1024;
  std::chrono::milliseconds timeout{120000};
  std::vector<std::string> refusal_phrases = default_refusal_phrases();
  // injectable for deterministic runs; defaults to the real clock
  std::function<std::string()> clock;

  std::string timestamp() const;
};

// backoff_base * 2^(attempt-1) * jitter, jitter uniform in [0.5, 1.5].
std::chrono::milliseconds backoff_delay(std::chrono::milliseconds base, int attempt,
                                        double jitter);
std::chrono::milliseconds backoff_delay_jittered(std::chrono::milliseconds base, int attempt);

enum class ResultStatus { kOk, kRefusalFlagged, kFailed };

std::string_view result_status_label(ResultStatus status);
std::optional<ResultStatus> parse_result_status(std::string_view label);

struct AnswerResult {
  std::string image_ref;
  FeatureKind feature = FeatureKind::kDetailGeneral;
  std::string answer;
  std::string model_name;
  int attempt_count = 0;
  std::string timestamp;
  ResultStatus status = ResultStatus::kFailed;
  std::string error;  // last failure detail for kFailed

  std::string key() const;  // image_ref + "#" + feature slug

  bool operator==(const AnswerResult&) const = default;
};

std::string task_key(std::string_view image_ref, FeatureKind feature);

// Raised on HTTP 401/403; never retried and aborts a batch.
struct AuthError : std::runtime_error {
  explicit AuthError(const std::string& message) : std::runtime_error(message) {}
};

// One POST to {base_url}/chat/completions. `error` non-empty means the
// request never produced an HTTP response (unreachable, timeout).
class ChatTransport {
 public:
  struct Response {
    int status = 0;
    std::string body;
    std::string error;
  };

  virtual ~ChatTransport() = default;
  virtual Response post_chat(const std::string& body) = 0;
};

// Production transport over cpp-httplib. Bearer token comes from
// FACECORPUS_API_KEY, falling back to OPENAI_API_KEY; no header is sent
// when neither is set (mock endpoints need no auth).
class HttpChatTransport : public ChatTransport {
 public:
  HttpChatTransport(std::string base_url, std::chrono::milliseconds timeout);
  Response post_chat(const std::string& body) override;

  static std::string resolve_api_key();

 private:
  std::string host_;         // scheme://host[:port]
  std::string path_prefix_;  // e.g. "/v1"
  std::chrono::milliseconds timeout_;
  std::string api_key_;
};

struct ImageBlob {
  std::string image_ref;
  std::vector<std::uint8_t> bytes;
  std::string media_type;  // image/jpeg or image/png
};

// Chat-completions request body: system message, then a user message whose
// content is a text part followed by one image_url part per image carrying
// a base64 data URL. Compact JSON, fixed key order.
std::string build_chat_request(const std::string& model,
                               const std::optional<std::string>& system_message,
                               const std::string& user_text,
                               const std::vector<ImageBlob>& images,
                               double temperature, int max_tokens);

enum class ChatCallStatus { kOk, kContentRejected, kFailed };

struct ChatCallResult {
  ChatCallStatus status = ChatCallStatus::kFailed;
  std::string content;  // last response content, if any
  std::string error;    // last failure detail
  int attempts = 0;
};

// Retry loop shared by annotation and evaluation: retries transport
// failures, HTTP 429/5xx, malformed bodies and accept() rejections up to
// max_attempts with jittered exponential backoff. Throws AuthError on
// 401/403; fails immediately on other 4xx.
ChatCallResult call_chat(ChatTransport& transport, const AnnotationConfig& config,
                         const std::string& body,
                         const std::function<bool(const std::string&)>& accept = {});

// Issues one annotation request and retries refusals. The bundle's system
// and user prompts become the two messages.
AnswerResult annotate_one(const PromptBundle& bundle, const ImageBlob& image,
                          const AnnotationConfig& config, ChatTransport& transport);

// Append-only newline-delimited JSON log of completed items. Appends are
// serialized and fdatasync'd; replaying the log reconstructs the completed
// set. A truncated final line (crash mid-append) is dropped on load.
class JobState {
 public:
  JobState() = default;
  ~JobState();
  JobState(JobState&& other) noexcept;
  JobState& operator=(JobState&& other) noexcept;
  JobState(const JobState&) = delete;
  JobState& operator=(const JobState&) = delete;

  static JobState open(const std::filesystem::path& path);

  void append(const AnswerResult& result);

  bool is_ok(std::string_view image_ref, FeatureKind feature) const;
  std::size_t ok_count() const;
  std::size_t entry_count() const;

  // Log order, every entry.
  const std::vector<AnswerResult>& entries() const { return entries_; }

  // One result per key: the Ok entry when present, otherwise the latest
  // attempt. Order follows first appearance in the log.
  std::vector<AnswerResult> final_results() const;

  const std::filesystem::path& path() const { return path_; }

 private:
  void close_fd() noexcept;

  std::filesystem::path path_;
  int fd_ = -1;
  mutable std::mutex mutex_;
  std::vector<AnswerResult> entries_;
  std::map<std::string, std::size_t> ok_index_;     // key -> entry index
  std::map<std::string, std::size_t> latest_index_; // key -> entry index
};

std::string serialize_answer_result(const AnswerResult& result);
AnswerResult parse_answer_result(std::string_view line);

struct BatchSummary {
  std::size_t scheduled = 0;
  std::size_t completed_ok = 0;
  std::size_t refusal_flagged = 0;
  std::size_t failed = 0;
  bool stopped_early = false;
};

// Number of (record, feature) tasks not yet Ok in the state.
std::size_t pending_task_count(const std::vector<FaceRecord>& records, const JobState& state);

// Runs every pending record x feature task with at most max_concurrency
// requests in flight. Each completion is appended to the state before
// on_result sees it; on_result returning false stops the batch after
// in-flight requests drain. Aborts only on AuthError or an unreadable
// image root; per-task failures are recorded and counted.
BatchSummary run_batch(const std::vector<FaceRecord>& records,
                       const std::filesystem::path& image_root,
                       const AnnotationConfig& config, JobState& state,
                       ChatTransport& transport,
                       const std::function<bool(const AnswerResult&)>& on_result = {});

}  // namespace facecorpus
