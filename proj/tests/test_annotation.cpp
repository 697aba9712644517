#include <doctest.h>

#include <cstdlib>
#include <nlohmann/json.hpp>

#include "facecorpus/annotation.hpp"
#include "facecorpus/encoding.hpp"
#include "test_support.hpp"

using namespace facecorpus;
using fctest::FakeChatTransport;
using fctest::MockChatServer;
using fctest::TempDir;
using json = nlohmann::json;

namespace {

const FaceRecord kRecord{"val/1.jpg", AgeBucket::kAge3To9, Gender::kMale,
                         Ethnicity::kEastAsian};

AnnotationConfig fast_config() {
  AnnotationConfig config;
  config.model_name = "mock-model";
  config.max_attempts = 5;
  config.backoff_base = std::chrono::milliseconds(0);
  config.clock = []() { return std::string("2026-01-01T00:00:00Z"); };
  return config;
}

ImageBlob tiny_jpeg(const std::string& ref = "val/1.jpg") {
  return ImageBlob{ref, {0xFF, 0xD8, 0xFF, 0xE0, 0x01, 0x02}, "image/jpeg"};
}

AnswerResult make_result(const std::string& ref, FeatureKind feature, ResultStatus status,
                         const std::string& answer) {
  AnswerResult result;
  result.image_ref = ref;
  result.feature = feature;
  result.answer = answer;
  result.model_name = "mock-model";
  result.attempt_count = 1;
  result.timestamp = "2026-01-01T00:00:00Z";
  result.status = status;
  if (status == ResultStatus::kFailed) result.error = "HTTP 500";
  return result;
}

}  // namespace

TEST_CASE("refusal detection") {
  CHECK(is_refusal("I'm unable to analyze this image."));
  CHECK(is_refusal(""));
  CHECK(is_refusal("   \n  "));
  CHECK(is_refusal("I'M UNABLE TO ANALYZE anything."));
  CHECK(is_refusal("I'm sorry, but I can't help with that."));
  CHECK(!is_refusal("The skin texture appears smooth and youthful, typical of a child."));
  CHECK(!is_refusal("A detailed description of the face."));

  const std::vector<std::string> custom = {"no comment"};
  CHECK(is_refusal("No comment.", custom));
  CHECK(!is_refusal("I'm unable to analyze this.", custom));
}

TEST_CASE("backoff grows exponentially under bounded jitter") {
  using ms = std::chrono::milliseconds;
  CHECK(backoff_delay(ms(1000), 1, 1.0) == ms(1000));
  CHECK(backoff_delay(ms(1000), 2, 1.0) == ms(2000));
  CHECK(backoff_delay(ms(1000), 3, 1.0) == ms(4000));
  CHECK(backoff_delay(ms(1000), 3, 0.5) == ms(2000));
  CHECK(backoff_delay(ms(1000), 3, 1.5) == ms(6000));

  for (int attempt = 1; attempt <= 5; ++attempt) {
    const auto delay = backoff_delay_jittered(ms(100), attempt);
    const auto low = backoff_delay(ms(100), attempt, 0.5);
    const auto high = backoff_delay(ms(100), attempt, 1.5);
    CHECK(delay >= low);
    CHECK(delay <= high);
  }
}

TEST_CASE("chat request body carries the documented shape") {
  const PromptBundle bundle = specific_prompt(kRecord, FeatureKind::kSkinTexture);
  const ImageBlob image = tiny_jpeg();
  const std::string body = build_chat_request("gpt-4o", bundle.system_prompt,
                                              bundle.user_prompt, {image}, 0.0, 1024);

  const json parsed = json::parse(body);
  CHECK(parsed.at("model") == "gpt-4o");
  CHECK(parsed.at("temperature") == 0.0);
  CHECK(parsed.at("max_tokens") == 1024);
  REQUIRE(parsed.at("messages").size() == 2);
  CHECK(parsed["messages"][0].at("role") == "system");
  CHECK(parsed["messages"][0].at("content") == system_prompt());
  CHECK(parsed["messages"][1].at("role") == "user");
  const json& content = parsed["messages"][1].at("content");
  REQUIRE(content.size() == 2);
  CHECK(content[0].at("type") == "text");
  CHECK(content[0].at("text") == bundle.user_prompt);
  CHECK(content[1].at("type") == "image_url");
  const std::string url = content[1].at("image_url").at("url").get<std::string>();
  const std::string prefix = "data:image/jpeg;base64,";
  REQUIRE(url.rfind(prefix, 0) == 0);
  CHECK(url.substr(prefix.size()) == base64_encode(image.bytes));

  // top-level key order is fixed
  CHECK(body.rfind("{\"model\":", 0) == 0);
  CHECK(body.find("\"messages\":") < body.find("\"temperature\":"));
  CHECK(body.find("\"temperature\":") < body.find("\"max_tokens\":"));
}

TEST_CASE("annotate_one returns the first good answer") {
  FakeChatTransport transport(FakeChatTransport::always_answer(
      [](const std::string&) { return "A clear description."; }));
  const AnswerResult result = annotate_one(specific_prompt(kRecord, FeatureKind::kFacePose),
                                           tiny_jpeg(), fast_config(), transport);
  CHECK(result.status == ResultStatus::kOk);
  CHECK(result.answer == "A clear description.");
  CHECK(result.attempt_count == 1);
  CHECK(result.image_ref == "val/1.jpg");
  CHECK(result.feature == FeatureKind::kFacePose);
  CHECK(result.model_name == "mock-model");
  CHECK(result.timestamp == "2026-01-01T00:00:00Z");
  CHECK(!is_refusal(result.answer));
}

TEST_CASE("annotate_one retries refusals until a real answer arrives") {
  FakeChatTransport transport([](const std::string&, std::size_t index) {
    const std::string content =
        index < 2 ? "I'm unable to analyze this image." : "The face is frontal.";
    return ChatTransport::Response{200, fctest::chat_response_body(content), {}};
  });
  const AnswerResult result = annotate_one(general_prompt(kRecord), tiny_jpeg(),
                                           fast_config(), transport);
  CHECK(result.status == ResultStatus::kOk);
  CHECK(result.attempt_count == 3);
  CHECK(result.answer == "The face is frontal.");
}

TEST_CASE("annotate_one flags an unbroken run of refusals") {
  FakeChatTransport transport(FakeChatTransport::always_answer(
      [](const std::string&) { return "I'm unable to analyze that."; }));
  AnnotationConfig config = fast_config();
  config.max_attempts = 3;
  const AnswerResult result =
      annotate_one(general_prompt(kRecord), tiny_jpeg(), config, transport);
  CHECK(result.status == ResultStatus::kRefusalFlagged);
  CHECK(result.attempt_count == 3);
  CHECK(result.answer == "I'm unable to analyze that.");  // last response kept
  CHECK(transport.call_count() == 3);
}

TEST_CASE("annotate_one exhausts retries on server errors") {
  FakeChatTransport transport([](const std::string&, std::size_t) {
    return ChatTransport::Response{500, "boom", {}};
  });
  AnnotationConfig config = fast_config();
  config.max_attempts = 4;
  const AnswerResult result =
      annotate_one(general_prompt(kRecord), tiny_jpeg(), config, transport);
  CHECK(result.status == ResultStatus::kFailed);
  CHECK(result.attempt_count == 4);
  CHECK(result.error == "HTTP 500");
  CHECK(transport.call_count() == 4);
}

TEST_CASE("transport failures and 429 are retried, recoverably") {
  FakeChatTransport transport([](const std::string&, std::size_t index) {
    if (index == 0) return ChatTransport::Response{0, "", "transport: connection refused"};
    if (index == 1) return ChatTransport::Response{429, "slow down", {}};
    return ChatTransport::Response{200, fctest::chat_response_body("Recovered answer."), {}};
  });
  const AnswerResult result =
      annotate_one(general_prompt(kRecord), tiny_jpeg(), fast_config(), transport);
  CHECK(result.status == ResultStatus::kOk);
  CHECK(result.attempt_count == 3);
}

TEST_CASE("auth failures are not retried") {
  FakeChatTransport transport([](const std::string&, std::size_t) {
    return ChatTransport::Response{401, "no", {}};
  });
  CHECK_THROWS_AS(annotate_one(general_prompt(kRecord), tiny_jpeg(), fast_config(), transport),
                  AuthError);
  CHECK(transport.call_count() == 1);
}

TEST_CASE("other client errors fail fast") {
  FakeChatTransport transport([](const std::string&, std::size_t) {
    return ChatTransport::Response{404, "missing", {}};
  });
  const AnswerResult result =
      annotate_one(general_prompt(kRecord), tiny_jpeg(), fast_config(), transport);
  CHECK(result.status == ResultStatus::kFailed);
  CHECK(result.attempt_count == 1);
  CHECK(transport.call_count() == 1);
}

TEST_CASE("malformed response bodies are retried") {
  FakeChatTransport transport([](const std::string&, std::size_t index) {
    if (index == 0) return ChatTransport::Response{200, "not json", {}};
    if (index == 1) return ChatTransport::Response{200, R"({"choices":[]})", {}};
    return ChatTransport::Response{200, fctest::chat_response_body("Fine now."), {}};
  });
  const AnswerResult result =
      annotate_one(general_prompt(kRecord), tiny_jpeg(), fast_config(), transport);
  CHECK(result.status == ResultStatus::kOk);
  CHECK(result.attempt_count == 3);
}

TEST_CASE("annotate_one validates its image preconditions") {
  FakeChatTransport transport(FakeChatTransport::always_answer(
      [](const std::string&) { return "x"; }));
  ImageBlob empty{"val/1.jpg", {}, "image/jpeg"};
  CHECK_THROWS_AS(annotate_one(general_prompt(kRecord), empty, fast_config(), transport),
                  std::invalid_argument);
  ImageBlob gif{"val/1.jpg", {1, 2, 3}, "image/gif"};
  CHECK_THROWS_AS(annotate_one(general_prompt(kRecord), gif, fast_config(), transport),
                  std::invalid_argument);
}

TEST_CASE("answer results round-trip through the log line format") {
  const AnswerResult result =
      make_result("val/7.jpg", FeatureKind::kForensicConsiderations, ResultStatus::kOk, "Text.");
  CHECK(parse_answer_result(serialize_answer_result(result)) == result);

  const AnswerResult failed =
      make_result("val/8.jpg", FeatureKind::kSkinTexture, ResultStatus::kFailed, "");
  CHECK(parse_answer_result(serialize_answer_result(failed)) == failed);
}

TEST_CASE("job state replays to the identical completed set") {
  TempDir dir;
  const auto state_path = dir / "state.ndjson";
  {
    JobState state = JobState::open(state_path);
    state.append(make_result("a.jpg", FeatureKind::kFacePose, ResultStatus::kOk, "one"));
    state.append(make_result("a.jpg", FeatureKind::kSkinTexture, ResultStatus::kFailed, ""));
    state.append(make_result("b.jpg", FeatureKind::kFacePose, ResultStatus::kOk, "two"));
    CHECK(state.ok_count() == 2);
    CHECK(state.is_ok("a.jpg", FeatureKind::kFacePose));
    CHECK(!state.is_ok("a.jpg", FeatureKind::kSkinTexture));
  }
  JobState reloaded = JobState::open(state_path);
  CHECK(reloaded.entry_count() == 3);
  CHECK(reloaded.ok_count() == 2);
  CHECK(reloaded.is_ok("b.jpg", FeatureKind::kFacePose));

  // byte-level replay: serialize all entries and compare with the file
  std::string expected;
  for (const AnswerResult& entry : reloaded.entries()) {
    expected += serialize_answer_result(entry) + "\n";
  }
  CHECK(fctest::read_file(state_path) == expected);
}

TEST_CASE("job state drops a torn final line") {
  TempDir dir;
  const auto state_path = dir / "state.ndjson";
  const std::string good =
      serialize_answer_result(
          make_result("a.jpg", FeatureKind::kFacePose, ResultStatus::kOk, "one")) +
      "\n";
  fctest::write_file(state_path, good + "{\"image\":\"b.jpg\",\"feat");

  JobState state = JobState::open(state_path);
  CHECK(state.entry_count() == 1);
  CHECK(state.ok_count() == 1);
}

TEST_CASE("job state refuses duplicate ok entries") {
  TempDir dir;
  JobState state = JobState::open(dir / "state.ndjson");
  state.append(make_result("a.jpg", FeatureKind::kFacePose, ResultStatus::kOk, "one"));
  CHECK_THROWS_AS(
      state.append(make_result("a.jpg", FeatureKind::kFacePose, ResultStatus::kOk, "two")),
      std::logic_error);
  // a failure following an ok is tolerated in the log, ok still wins
  state.append(make_result("c.jpg", FeatureKind::kFacePose, ResultStatus::kFailed, ""));
  state.append(make_result("c.jpg", FeatureKind::kFacePose, ResultStatus::kOk, "three"));
  const auto finals = state.final_results();
  REQUIRE(finals.size() == 2);
  CHECK(finals[1].status == ResultStatus::kOk);
  CHECK(finals[1].answer == "three");
}

namespace {

std::vector<FaceRecord> make_records(const TempDir& dir, std::size_t count) {
  std::vector<FaceRecord> records;
  for (std::size_t i = 0; i < count; ++i) {
    FaceRecord record;
    record.image_ref = "val/" + std::to_string(i + 1) + ".jpg";
    record.age = all_age_buckets()[i % kAgeBucketCount];
    record.gender = all_genders()[i % kGenderCount];
    record.ethnicity = all_ethnicities()[i % kEthnicityCount];
    records.push_back(record);
    fctest::write_file(dir.path() / record.image_ref,
                       "jpegbytes-" + std::to_string(i + 1));
  }
  return records;
}

}  // namespace

TEST_CASE("run_batch annotates every record x feature once") {
  TempDir dir;
  const auto records = make_records(dir, 3);
  JobState state = JobState::open(dir / "state.ndjson");
  FakeChatTransport transport(FakeChatTransport::always_answer([](const std::string& body) {
    return "Answer " + fnv1a64_hex(body);
  }));

  AnnotationConfig config = fast_config();
  config.max_concurrency = 4;
  const BatchSummary summary = run_batch(records, dir.path(), config, state, transport);
  CHECK(summary.scheduled == 24);
  CHECK(summary.completed_ok == 24);
  CHECK(summary.failed == 0);
  CHECK(state.ok_count() == 24);
  CHECK(transport.call_count() == 24);
  CHECK(pending_task_count(records, state) == 0);
}

TEST_CASE("resume schedules only the missing work") {
  TempDir dir;
  const auto records = make_records(dir, 3);
  JobState state = JobState::open(dir / "state.ndjson");
  // pre-complete everything except one task
  for (std::size_t i = 0; i < records.size(); ++i) {
    for (FeatureKind feature : all_features()) {
      if (i == 1 && feature == FeatureKind::kFacePose) continue;
      state.append(make_result(records[i].image_ref, feature, ResultStatus::kOk, "done"));
    }
  }
  CHECK(pending_task_count(records, state) == 1);

  FakeChatTransport transport(FakeChatTransport::always_answer(
      [](const std::string&) { return "The missing one."; }));
  const BatchSummary summary = run_batch(records, dir.path(), fast_config(), state, transport);
  CHECK(summary.scheduled == 1);
  CHECK(summary.completed_ok == 1);
  CHECK(transport.call_count() == 1);
  CHECK(state.ok_count() == 24);
}

TEST_CASE("the in-flight bound is respected") {
  TempDir dir;
  const auto records = make_records(dir, 8);
  JobState state = JobState::open(dir / "state.ndjson");
  FakeChatTransport transport(
      FakeChatTransport::always_answer([](const std::string&) { return "ok"; }),
      std::chrono::milliseconds(2));

  AnnotationConfig config = fast_config();
  config.max_concurrency = 3;
  run_batch(records, dir.path(), config, state, transport);
  CHECK(transport.max_in_flight() <= 3);
  CHECK(transport.call_count() == 64);
}

TEST_CASE("failures are recorded but do not abort the batch") {
  TempDir dir;
  auto records = make_records(dir, 2);
  // one record points at a missing image
  records.push_back(FaceRecord{"val/missing.jpg", AgeBucket::kAge3To9, Gender::kMale,
                               Ethnicity::kWhite});
  JobState state = JobState::open(dir / "state.ndjson");
  FakeChatTransport transport(FakeChatTransport::always_answer(
      [](const std::string&) { return "fine"; }));

  const BatchSummary summary = run_batch(records, dir.path(), fast_config(), state, transport);
  CHECK(summary.scheduled == 24);
  CHECK(summary.completed_ok == 16);
  CHECK(summary.failed == 8);
  CHECK(state.entry_count() == 24);
  // failed tasks stay pending for the next resume
  CHECK(pending_task_count(records, state) == 8);
}

TEST_CASE("an unreadable image root aborts before any request") {
  TempDir dir;
  const std::vector<FaceRecord> records = {kRecord};
  JobState state = JobState::open(dir / "state.ndjson");
  FakeChatTransport transport(FakeChatTransport::always_answer(
      [](const std::string&) { return "x"; }));
  CHECK_THROWS_AS(
      run_batch(records, dir.path() / "nowhere", fast_config(), state, transport),
      std::runtime_error);
  CHECK(transport.call_count() == 0);
}

TEST_CASE("auth failure aborts the batch") {
  TempDir dir;
  const auto records = make_records(dir, 2);
  JobState state = JobState::open(dir / "state.ndjson");
  FakeChatTransport transport([](const std::string&, std::size_t) {
    return ChatTransport::Response{403, "forbidden", {}};
  });
  AnnotationConfig config = fast_config();
  config.max_concurrency = 1;
  CHECK_THROWS_AS(run_batch(records, dir.path(), config, state, transport), AuthError);
  CHECK(state.entry_count() == 0);
}

TEST_CASE("the http transport talks the wire protocol against a live mock") {
  MockChatServer server([](const std::string&, std::size_t) {
    return std::make_pair(200, fctest::chat_response_body("From the wire."));
  });

  setenv("FACECORPUS_API_KEY", "test-key-123", 1);
  HttpChatTransport transport(server.base_url(), std::chrono::milliseconds(5000));
  unsetenv("FACECORPUS_API_KEY");

  AnnotationConfig config = fast_config();
  const AnswerResult result =
      annotate_one(general_prompt(kRecord), tiny_jpeg(), config, transport);
  CHECK(result.status == ResultStatus::kOk);
  CHECK(result.answer == "From the wire.");

  const auto requests = server.requests();
  REQUIRE(requests.size() == 1);
  CHECK(requests[0].path == "/v1/chat/completions");
  CHECK(requests[0].content_type == "application/json");
  CHECK(requests[0].headers.at("Authorization") == "Bearer test-key-123");
  const json body = json::parse(requests[0].body);
  CHECK(body.at("model") == "mock-model");
  CHECK(body.at("messages")[0].at("role") == "system");
}

TEST_CASE("the http transport reports unreachable endpoints") {
  // nothing listens on this port
  HttpChatTransport transport("http://127.0.0.1:1/v1", std::chrono::milliseconds(300));
  const ChatTransport::Response response = transport.post_chat("{}");
  CHECK(response.status == 0);
  CHECK(!response.error.empty());
}
