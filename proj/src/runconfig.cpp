#include "facecorpus/runconfig.hpp"

#include <cstdlib>
#include <fstream>
#include <ostream>

#include "facecorpus/text_util.hpp"

namespace facecorpus {

namespace {

int parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t consumed = 0;
    const int parsed = std::stoi(value, &consumed);
    if (consumed != value.size()) throw std::invalid_argument(value);
    return parsed;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' expects an integer, got '" + value + "'");
  }
}

double parse_real(const std::string& key, const std::string& value) {
  try {
    std::size_t consumed = 0;
    const double parsed = std::stod(value, &consumed);
    if (consumed != value.size()) throw std::invalid_argument(value);
    return parsed;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' expects a number, got '" + value + "'");
  }
}

std::string strip_section(const std::string& key) {
  const std::size_t dot = key.rfind('.');
  return dot == std::string::npos ? key : key.substr(dot + 1);
}

}  // namespace

void RunConfig::apply(const std::string& raw_key, const std::string& value) {
  const std::string key = strip_section(raw_key);
  if (key == "metadata_csv") {
    metadata_csv = value;
  } else if (key == "image_root") {
    image_root = value;
  } else if (key == "output_dir") {
    output_dir = value;
  } else if (key == "job_state") {
    job_state = value;
  } else if (key == "benchmark") {
    benchmark = value;
  } else if (key == "base_url") {
    base_url = value;
  } else if (key == "model") {
    model = value;
  } else if (key == "max_concurrency") {
    max_concurrency = parse_int(key, value);
  } else if (key == "max_attempts") {
    max_attempts = parse_int(key, value);
  } else if (key == "backoff_base_ms") {
    backoff_base_ms = parse_int(key, value);
  } else if (key == "temperature") {
    temperature = parse_real(key, value);
  } else if (key == "max_tokens") {
    max_tokens = parse_int(key, value);
  } else if (key == "timeout_ms") {
    timeout_ms = parse_int(key, value);
  } else {
    throw ConfigError("unknown config key '" + raw_key + "'");
  }
}

void RunConfig::validate() const {
  if (max_concurrency < 1) throw ConfigError("max_concurrency must be >= 1");
  if (max_attempts < 1) throw ConfigError("max_attempts must be >= 1");
  if (backoff_base_ms < 0) throw ConfigError("backoff_base_ms must be >= 0");
  if (temperature < 0.0) throw ConfigError("temperature must be >= 0");
  if (max_tokens < 1) throw ConfigError("max_tokens must be >= 1");
  if (timeout_ms < 1) throw ConfigError("timeout_ms must be >= 1");
  if (base_url.empty()) throw ConfigError("base_url must not be empty");
  if (model.empty()) throw ConfigError("model must not be empty");
}

std::string RunConfig::effective_job_state() const {
  return job_state.empty() ? output_dir + "/jobstate.ndjson" : job_state;
}

AnnotationConfig RunConfig::annotation_config() const {
  AnnotationConfig config;
  config.base_url = base_url;
  config.model_name = model;
  config.max_concurrency = max_concurrency;
  config.max_attempts = max_attempts;
  config.backoff_base = std::chrono::milliseconds(backoff_base_ms);
  config.temperature = temperature;
  config.max_tokens = max_tokens;
  config.timeout = std::chrono::milliseconds(timeout_ms);
  return config;
}

void RunConfig::print_effective(std::ostream& out) const {
  out << "metadata_csv = " << metadata_csv << '\n'
      << "image_root = " << image_root << '\n'
      << "output_dir = " << output_dir << '\n'
      << "job_state = " << effective_job_state() << '\n'
      << "benchmark = " << benchmark << '\n'
      << "base_url = " << base_url << '\n'
      << "model = " << model << '\n'
      << "max_concurrency = " << max_concurrency << '\n'
      << "max_attempts = " << max_attempts << '\n'
      << "backoff_base_ms = " << backoff_base_ms << '\n'
      << "temperature = " << temperature << '\n'
      << "max_tokens = " << max_tokens << '\n'
      << "timeout_ms = " << timeout_ms << '\n'
      << "api_key = " << (HttpChatTransport::resolve_api_key().empty() ? "(unset)" : "***")
      << '\n';
}

void load_config_file(RunConfig& config, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file: " + path);
  std::string line;
  std::string section;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = trim_ascii(line);
    if (stripped.empty() || stripped.front() == '#') continue;
    if (stripped.front() == '[') {
      if (stripped.back() != ']') {
        throw ConfigError(path + ":" + std::to_string(line_no) + ": malformed section header");
      }
      section = trim_ascii(stripped.substr(1, stripped.size() - 2));
      continue;
    }
    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim_ascii(stripped.substr(0, eq));
    const std::string value = trim_ascii(stripped.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": empty key");
    }
    config.apply(section.empty() ? key : section + "." + key, value);
  }
}

void load_config_env(RunConfig& config) {
  static const std::map<std::string, std::string> keys = {
      {"FACECORPUS_METADATA_CSV", "metadata_csv"},
      {"FACECORPUS_IMAGE_ROOT", "image_root"},
      {"FACECORPUS_OUTPUT_DIR", "output_dir"},
      {"FACECORPUS_JOB_STATE", "job_state"},
      {"FACECORPUS_BENCHMARK", "benchmark"},
      {"FACECORPUS_BASE_URL", "base_url"},
      {"FACECORPUS_MODEL", "model"},
      {"FACECORPUS_MAX_CONCURRENCY", "max_concurrency"},
      {"FACECORPUS_MAX_ATTEMPTS", "max_attempts"},
      {"FACECORPUS_BACKOFF_BASE_MS", "backoff_base_ms"},
      {"FACECORPUS_TEMPERATURE", "temperature"},
      {"FACECORPUS_MAX_TOKENS", "max_tokens"},
      {"FACECORPUS_TIMEOUT_MS", "timeout_ms"},
  };
  for (const auto& [env_name, key] : keys) {
    if (const char* value = std::getenv(env_name.c_str()); value && *value) {
      config.apply(key, value);
    }
  }
}

}  // namespace facecorpus
