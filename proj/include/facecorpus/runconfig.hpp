#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>

#include "facecorpus/annotation.hpp"

namespace facecorpus {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& message) : std::runtime_error(message) {}
};

// Merged tool settings; precedence defaults < config file < environment
// (FACECORPUS_<KEY>) < flags. Secrets travel only through FACECORPUS_API_KEY
// / OPENAI_API_KEY and are never accepted as keys here.
struct RunConfig {
  std::string metadata_csv;
  std::string image_root;
  std::string output_dir = "out";
  std::string job_state;  // defaults to <output_dir>/jobstate.ndjson
  std::string benchmark;

  std::string base_url = "http://127.0.0.1:8080/v1";
  std::string model = "gpt-4o";
  int max_concurrency = 4;
  int max_attempts = 5;
  int backoff_base_ms = 1000;
  double temperature = 0.0;
  int max_tokens = 1024;
  int timeout_ms = 120000;

  // Applies one "key = value" setting; throws ConfigError for unknown keys
  // or unparsable values.
  void apply(const std::string& key, const std::string& value);

  void validate() const;

  std::string effective_job_state() const;
  AnnotationConfig annotation_config() const;

  // Redacted "key = value" dump printed at startup.
  void print_effective(std::ostream& out) const;
};

// Flat "key = value" file with '#' comments; "[section]" headers prefix
// following keys as "section.key" (sections are accepted and flattened).
void load_config_file(RunConfig& config, const std::string& path);

// FACECORPUS_* variables for every config key.
void load_config_env(RunConfig& config);

}  // namespace facecorpus
