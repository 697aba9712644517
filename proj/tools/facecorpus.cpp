#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "facecorpus/annotation.hpp"
#include "facecorpus/corpus.hpp"
#include "facecorpus/encoding.hpp"
#include "facecorpus/eval.hpp"
#include "facecorpus/lora.hpp"
#include "facecorpus/metadata.hpp"
#include "facecorpus/prompts.hpp"
#include "facecorpus/runconfig.hpp"

namespace fc = facecorpus;
namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitEnvironment = 2;

struct FlagOverrides {
  std::optional<std::string> metadata_csv;
  std::optional<std::string> image_root;
  std::optional<std::string> output_dir;
  std::optional<std::string> job_state;
  std::optional<std::string> benchmark;
  std::optional<std::string> base_url;
  std::optional<std::string> model;
  std::optional<int> max_concurrency;
  std::optional<int> max_attempts;
  std::optional<int> backoff_base_ms;
  std::optional<double> temperature;
  std::optional<int> max_tokens;
  std::optional<int> timeout_ms;

  void apply_to(fc::RunConfig& config) const {
    if (metadata_csv) config.metadata_csv = *metadata_csv;
    if (image_root) config.image_root = *image_root;
    if (output_dir) config.output_dir = *output_dir;
    if (job_state) config.job_state = *job_state;
    if (benchmark) config.benchmark = *benchmark;
    if (base_url) config.base_url = *base_url;
    if (model) config.model = *model;
    if (max_concurrency) config.max_concurrency = *max_concurrency;
    if (max_attempts) config.max_attempts = *max_attempts;
    if (backoff_base_ms) config.backoff_base_ms = *backoff_base_ms;
    if (temperature) config.temperature = *temperature;
    if (max_tokens) config.max_tokens = *max_tokens;
    if (timeout_ms) config.timeout_ms = *timeout_ms;
  }
};

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
  if (!out) throw std::runtime_error("short write to " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

fc::AnnotationConfig annotation_config_for(const fc::RunConfig& config) {
  fc::AnnotationConfig annotation = config.annotation_config();
  // reproducible corpora for mock runs; real runs keep the live clock
  if (const char* fixed = std::getenv("FACECORPUS_FIXED_TIMESTAMP"); fixed && *fixed) {
    const std::string stamp = fixed;
    annotation.clock = [stamp]() { return stamp; };
  }
  return annotation;
}

std::vector<fc::FaceRecord> load_records(const fc::RunConfig& config) {
  if (config.metadata_csv.empty()) {
    throw fc::ConfigError("no metadata CSV configured (use --metadata)");
  }
  return fc::parse_metadata_file(config.metadata_csv);
}

void print_distribution(const fc::DistributionStats& stats, std::ostream& out) {
  std::string attribute;
  for (const auto& [key, count] : stats.counts) {
    if (key.first != attribute) {
      attribute = key.first;
      out << attribute << ":\n";
    }
    out << "  " << key.second << ": " << count << "\n";
  }
}

int cmd_ingest(const fc::RunConfig& config) {
  const std::vector<fc::FaceRecord> records = load_records(config);
  const fc::DistributionStats stats = fc::demographic_summary(records);
  std::cout << records.size() << " records\n";
  print_distribution(stats, std::cout);

  fs::create_directories(config.output_dir);
  const std::string cache_path = config.output_dir + "/records.csv";
  write_text_file(cache_path, fc::serialize_metadata(records));
  std::cout << "record cache: " << cache_path << "\n";
  return kExitOk;
}

int cmd_generate(const fc::RunConfig& config, bool resume, bool dry_run, bool verbose) {
  const std::vector<fc::FaceRecord> records = load_records(config);
  if (config.image_root.empty()) {
    throw fc::ConfigError("no image root configured (use --image-root)");
  }

  fs::create_directories(config.output_dir);
  const std::string state_path = config.effective_job_state();
  if (!resume && fs::exists(state_path) && fs::file_size(state_path) > 0) {
    throw fc::ConfigError("job state " + state_path +
                          " already exists; pass --resume to continue it");
  }
  fc::JobState state = fc::JobState::open(state_path);

  const std::size_t pending = fc::pending_task_count(records, state);
  if (dry_run) {
    std::cout << "dry run: " << records.size() << " records x " << fc::kFeatureCount
              << " features = " << records.size() * fc::kFeatureCount << " tasks, "
              << pending << " pending, " << state.ok_count() << " already complete\n";
    return kExitOk;
  }

  const fc::AnnotationConfig annotation = annotation_config_for(config);
  fc::HttpChatTransport transport(annotation.base_url, annotation.timeout);

  std::size_t done = 0;
  const fc::BatchSummary summary = fc::run_batch(
      records, config.image_root, annotation, state, transport,
      [&done, pending, verbose](const fc::AnswerResult&) {
        ++done;
        if (verbose && (done % 500 == 0 || done == pending)) {
          std::cerr << "progress: " << done << "/" << pending << "\n";
        }
        return true;
      });

  std::cout << "scheduled " << summary.scheduled << ", ok " << summary.completed_ok
            << ", refusals " << summary.refusal_flagged << ", failed " << summary.failed
            << "\n";
  std::cout << "job state: " << state_path << " (" << state.ok_count() << " complete)\n";
  return summary.failed == 0 && summary.refusal_flagged == 0 ? kExitOk : kExitEnvironment;
}

int cmd_assemble(const fc::RunConfig& config) {
  const std::vector<fc::FaceRecord> records = load_records(config);
  const std::string state_path = config.effective_job_state();
  if (!fs::exists(state_path)) {
    throw fc::ConfigError("job state not found: " + state_path);
  }
  const fc::JobState state = fc::JobState::open(state_path);
  const fc::AssembleOutput output = fc::assemble(state.final_results(), records);

  fs::create_directories(config.output_dir);
  const std::string corpus_path = config.output_dir + "/corpus.jsonl";
  const std::string manifest_path = config.output_dir + "/manifest.json";
  const std::string rejects_path = config.output_dir + "/rejects.jsonl";
  fc::export_jsonl(output.corpus, output.manifest, corpus_path, manifest_path);
  fc::export_rejects(output.rejects, rejects_path);

  std::cout << output.corpus.size() << " pairs\n";
  std::cout << output.manifest.n_images << " images, checksum " << output.manifest.checksum
            << "\n";
  if (!output.rejects.empty()) {
    std::cout << output.rejects.size() << " rejects -> " << rejects_path << "\n";
  }
  if (!output.incomplete_images.empty()) {
    std::cout << output.incomplete_images.size() << " incomplete images\n";
  }
  return kExitOk;
}

int cmd_stats(const fc::RunConfig& config, const std::string& corpus_flag) {
  const std::string corpus_path =
      corpus_flag.empty() ? config.output_dir + "/corpus.jsonl" : corpus_flag;
  const std::vector<fc::QAPair> corpus = fc::import_jsonl_file(corpus_path);
  const fc::CorpusManifest recomputed = fc::corpus_stats(corpus);

  std::cout << corpus.size() << " pairs, " << recomputed.n_images << " images\n";
  for (fc::FeatureKind feature : fc::all_features()) {
    const auto it = recomputed.per_feature_counts.find(feature);
    std::cout << "  " << fc::feature_slug(feature) << ": "
              << (it == recomputed.per_feature_counts.end() ? 0 : it->second) << "\n";
  }
  std::cout << "checksum " << recomputed.checksum << "\n";

  const std::string manifest_path =
      (fs::path(corpus_path).parent_path() / "manifest.json").string();
  if (fs::exists(manifest_path)) {
    const fc::CorpusManifest stored = fc::import_manifest_file(manifest_path);
    if (stored == recomputed) {
      std::cout << "manifest: consistent\n";
    } else {
      std::cout << "manifest: MISMATCH against " << manifest_path << "\n";
      return kExitValidation;
    }
  }

  std::size_t violations = 0;
  std::size_t refusals = 0;
  for (const fc::QAPair& pair : corpus) {
    const auto found = fc::leakage_check(pair);
    violations += found.size();
    if (fc::is_refusal(pair.answer)) ++refusals;
  }
  std::cout << "leakage violations: " << violations << "\n";
  std::cout << "refusal-like answers: " << refusals << "\n";
  return violations == 0 ? kExitOk : kExitValidation;
}

int cmd_lora_demo(const fc::RunConfig& config, Eigen::Index d, Eigen::Index k, int rank,
                  double alpha, std::uint64_t seed, const std::string& emit_tag) {
  namespace lora = fc::lora;
  std::cout << "low-rank update demo: d=" << d << " k=" << k << " r=" << rank
            << " alpha=" << alpha << " seed=" << seed << "\n";

  // keep the dense demo small even when the requested dims are model-sized
  const Eigen::Index dd = std::min<Eigen::Index>(d, 64);
  const Eigen::Index dk = std::min<Eigen::Index>(k, 64);
  const int dr = std::min<int>(rank, static_cast<int>(std::min(dd, dk)));

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gaussian(0.0, 1.0);
  lora::BaseMatrix base;
  base.weight.resize(dd, dk);
  for (Eigen::Index i = 0; i < dd; ++i) {
    for (Eigen::Index j = 0; j < dk; ++j) base.weight(i, j) = gaussian(rng);
  }

  lora::LoraAdapter adapter = lora::init_adapter(dd, dk, dr, alpha, seed);
  const lora::Matrix at_init = lora::effective_weight(base, adapter);
  std::cout << "zero-init check (" << dd << "x" << dk << ", r=" << dr
            << "): max|W~ - W| = " << (at_init - base.weight).cwiseAbs().maxCoeff() << "\n";

  const lora::ParamCounts counts = lora::trainable_param_count(d, k, rank);
  std::cout << "trainable params: " << counts.lora << " (low-rank) vs " << counts.full
            << " (full)\n";

  for (Eigen::Index i = 0; i < adapter.up.rows(); ++i) {
    for (Eigen::Index j = 0; j < adapter.up.cols(); ++j) adapter.up(i, j) = gaussian(rng);
  }
  const auto check = lora::grad_check(
      base, adapter, [](const lora::Matrix& w) { return 0.5 * w.squaredNorm(); },
      [](const lora::Matrix& w) { return lora::Matrix(w); });
  std::cout << "grad check (quadratic loss): max rel error = " << check.max_rel_error << "\n";

  if (!emit_tag.empty()) {
    fs::create_directories(config.output_dir);
    const std::string path = config.output_dir + "/train_config_" + emit_tag + ".conf";
    lora::emit_train_config(emit_tag, path);
    std::cout << "train config: " << path << "\n";
  }
  return kExitOk;
}

int cmd_eval(const fc::RunConfig& config) {
  if (config.benchmark.empty()) {
    throw fc::ConfigError("no benchmark configured (use --benchmark)");
  }
  const std::vector<fc::eval::MCQItem> items = fc::eval::load_benchmark_file(config.benchmark);

  const fc::AnnotationConfig annotation = annotation_config_for(config);
  fc::HttpChatTransport transport(annotation.base_url, annotation.timeout);
  const std::string image_root = config.image_root.empty() ? "." : config.image_root;
  const std::vector<fc::eval::Transcript> transcripts =
      fc::eval::run_eval(items, image_root, annotation, transport);

  const auto pairs = fc::eval::rescore(items, transcripts);
  const fc::eval::CategoryReport report = fc::eval::score(pairs);

  fs::create_directories(config.output_dir);
  write_text_file(config.output_dir + "/transcripts.jsonl",
                  fc::eval::transcripts_to_jsonl(transcripts));
  write_text_file(config.output_dir + "/report.json", fc::eval::report_to_json(report));
  const fc::eval::RenderedReport rendered =
      fc::eval::render_report(report, {}, config.model);
  write_text_file(config.output_dir + "/report.md", rendered.markdown);

  std::cout << items.size() << " items, overall " << fc::eval::accuracy_percent(
                   report.n_correct, report.n_items)
            << ", unresolved " << report.n_unresolved << "\n";
  std::cout << rendered.markdown;
  return kExitOk;
}

int cmd_report(const fc::RunConfig& config, const std::string& transcripts_path,
               const std::vector<std::string>& baseline_specs, const std::string& label) {
  if (config.benchmark.empty()) {
    throw fc::ConfigError("no benchmark configured (use --benchmark)");
  }
  const std::vector<fc::eval::MCQItem> items = fc::eval::load_benchmark_file(config.benchmark);
  const std::vector<fc::eval::Transcript> transcripts =
      fc::eval::transcripts_from_jsonl(read_text_file(transcripts_path));
  const fc::eval::CategoryReport report =
      fc::eval::score(fc::eval::rescore(items, transcripts));

  std::map<std::string, fc::eval::CategoryReport> baselines;
  for (const std::string& spec : baseline_specs) {
    const std::size_t eq = spec.find('=');
    if (eq == std::string::npos) {
      throw fc::ConfigError("baseline must be name=path, got '" + spec + "'");
    }
    baselines[spec.substr(0, eq)] = fc::eval::report_from_json_file(spec.substr(eq + 1));
  }

  const fc::eval::RenderedReport rendered = fc::eval::render_report(report, baselines, label);
  fs::create_directories(config.output_dir);
  write_text_file(config.output_dir + "/comparison.md", rendered.markdown);
  write_text_file(config.output_dir + "/comparison.json", rendered.json);
  std::cout << rendered.markdown;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FairFace-style face QA corpus builder, low-rank update kernel and "
               "multiple-choice evaluation harness"};
  app.fallthrough();

  std::string config_path;
  bool verbose = false;
  bool dry_run = false;
  bool resume = false;
  FlagOverrides flags;

  app.add_option("--config", config_path, "flat key = value config file");
  app.add_flag("--verbose", verbose, "progress logging to stderr");
  app.add_flag("--dry-run", dry_run, "plan only; no network traffic");
  app.add_flag("--resume", resume, "continue an existing job state");
  app.add_option("--output-dir", flags.output_dir, "output directory (default: out)");
  app.add_option("--metadata", flags.metadata_csv, "FairFace-style metadata CSV");
  app.add_option("--image-root", flags.image_root, "directory the image refs resolve against");
  app.add_option("--job-state", flags.job_state, "job state log path");
  app.add_option("--benchmark", flags.benchmark, "benchmark JSONL path");
  app.add_option("--base-url", flags.base_url, "chat endpoint base URL");
  app.add_option("--model", flags.model, "model name sent with each request");
  app.add_option("--max-concurrency", flags.max_concurrency, "requests in flight");
  app.add_option("--max-attempts", flags.max_attempts, "attempts per task");
  app.add_option("--backoff-ms", flags.backoff_base_ms, "base backoff in milliseconds");
  app.add_option("--temperature", flags.temperature, "sampling temperature");
  app.add_option("--max-tokens", flags.max_tokens, "response token cap");
  app.add_option("--timeout-ms", flags.timeout_ms, "request timeout in milliseconds");

  CLI::App* ingest = app.add_subcommand("ingest", "parse + validate metadata, print stats");
  CLI::App* generate =
      app.add_subcommand("generate", "run the annotation batch into the job state");
  CLI::App* assemble = app.add_subcommand("assemble", "build corpus JSONL from the job state");
  std::string stats_corpus;
  CLI::App* stats = app.add_subcommand("stats", "recompute manifest + leakage audit");
  stats->add_option("--corpus", stats_corpus, "corpus JSONL (default: <output-dir>/corpus.jsonl)");

  long long demo_d = 4096, demo_k = 4096;
  int demo_r = 8;
  double demo_alpha = 16.0;
  std::uint64_t demo_seed = 42;
  std::string demo_emit;
  CLI::App* lora_demo = app.add_subcommand("lora-demo", "low-rank update and grad-check demo");
  lora_demo->add_option("--d", demo_d, "base matrix rows");
  lora_demo->add_option("--k", demo_k, "base matrix cols");
  lora_demo->add_option("--r", demo_r, "adapter rank");
  lora_demo->add_option("--alpha", demo_alpha, "adapter scaling factor");
  lora_demo->add_option("--seed", demo_seed, "init seed");
  lora_demo->add_option("--emit-train-config", demo_emit, "also write a 1B/8B/38B train config");

  CLI::App* eval_cmd = app.add_subcommand("eval", "run a multiple-choice benchmark");
  std::string report_transcripts;
  std::vector<std::string> report_baselines;
  std::string report_label = "evaluated";
  CLI::App* report = app.add_subcommand("report", "re-score transcripts, compare baselines");
  report->add_option("--transcripts", report_transcripts, "transcripts JSONL")->required();
  report->add_option("--baseline", report_baselines, "baseline as name=report.json");
  report->add_option("--label", report_label, "row label for this run");

  app.require_subcommand(1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitValidation;
  }

  try {
    fc::RunConfig config;
    if (!config_path.empty()) fc::load_config_file(config, config_path);
    fc::load_config_env(config);
    flags.apply_to(config);
    config.validate();
    config.print_effective(std::cerr);

    if (ingest->parsed()) return cmd_ingest(config);
    if (generate->parsed()) return cmd_generate(config, resume, dry_run, verbose);
    if (assemble->parsed()) return cmd_assemble(config);
    if (stats->parsed()) return cmd_stats(config, stats_corpus);
    if (lora_demo->parsed()) {
      return cmd_lora_demo(config, demo_d, demo_k, demo_r, demo_alpha, demo_seed, demo_emit);
    }
    if (eval_cmd->parsed()) return cmd_eval(config);
    if (report->parsed()) {
      return cmd_report(config, report_transcripts, report_baselines, report_label);
    }
    std::cerr << "error: no subcommand\n";
    return kExitValidation;
  } catch (const fc::AuthError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitEnvironment;
  } catch (const fc::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const fc::MetadataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const fc::CorpusError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const fc::eval::BenchmarkError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const fc::lora::LoraError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const fc::PromptError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitEnvironment;
  }
}
