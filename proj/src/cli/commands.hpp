#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "rxtree/eval.hpp"
#include "rxtree/policy.hpp"

namespace rxtree::cli {

struct CohortInput {
  std::filesystem::path data;    // cohort CSV
  std::filesystem::path schema;  // schema/treatment sidecar JSON
};

struct PipelineOptions {
  CohortInput input;
  std::filesystem::path out;
  PipelineConfig config;  // config.seed is the run seed
  std::size_t bootstrap_iterations = 1000;
  double bootstrap_fraction = 0.95;
  bool bootstrap_with_replacement = true;
  std::size_t calibration_buckets = 10;
  bool verbose = false;
};

struct SelectOptions {
  CohortInput input;
  std::filesystem::path out;
  SelectionConfig config;
  bool verbose = false;
};

struct SynthOptions {
  std::string preset = "tavr_like";
  std::optional<std::filesystem::path> spec;  // overrides the preset
  std::size_t n = 2000;
  std::uint64_t seed = 0;
  std::filesystem::path out;
};

struct EvaluateOptions {
  std::filesystem::path tree;
  CohortInput input;
  std::optional<std::filesystem::path> rewards;
  ImputationMethod imputation = ImputationMethod::mean;
  std::size_t bootstrap_iterations = 0;
  std::uint64_t seed = 0;
  std::filesystem::path out;
};

struct ExportOptions {
  std::filesystem::path tree;
  std::filesystem::path out;
  std::optional<std::filesystem::path> bundle;  // static calculator files
  std::size_t parity_samples = 100;
  std::uint64_t seed = 0;
};

// Each command throws rxtree::Error on bad input and leaves no output
// directory behind on failure.
void cmd_pipeline(const PipelineOptions& options, std::ostream& log);
void cmd_select(const SelectOptions& options, std::ostream& log);
void cmd_synth(const SynthOptions& options, std::ostream& log);
void cmd_evaluate(const EvaluateOptions& options, std::ostream& log);
void cmd_export_calculator(const ExportOptions& options, std::ostream& log);

// Indented text rendering of a tree, one line per node.
std::string tree_text(const PolicyTree& tree);

// Golden routing cases for the calculator: `samples` random complete inputs
// plus both sides of every split boundary, with the library's answers.
std::string parity_json(const PolicyTree& tree, std::size_t samples, std::uint64_t seed);

// Exit codes: 0 success, 2 input or usage error, 1 anything else.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace rxtree::cli
