#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rxtree/matrix.hpp"

namespace rxtree {

enum class FeatureKind { numeric, binary, categorical };

std::string_view to_string(FeatureKind kind);
FeatureKind parse_feature_kind(std::string_view text);

struct Feature {
  std::string name;
  FeatureKind kind = FeatureKind::numeric;
  // Categorical only. Values are stored as the level's index.
  std::vector<std::string> levels;
  std::optional<std::string> unit;
  // Optional plausible range, surfaced to the calculator as a soft warning.
  std::optional<double> min;
  std::optional<double> max;

  bool operator==(const Feature&) const = default;
};

// Ordered feature list. Column order everywhere downstream follows it.
class FeatureSchema {
 public:
  FeatureSchema() = default;
  explicit FeatureSchema(std::vector<Feature> features);

  std::size_t size() const { return features_.size(); }
  const Feature& operator[](std::size_t i) const { return features_[i]; }
  const std::vector<Feature>& features() const { return features_; }

  std::optional<std::size_t> find(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;

  // True when `value` is admissible for feature i (finite numeric, 0/1 for
  // binary, a valid level index for categorical).
  bool admits(std::size_t i, double value) const;

  bool operator==(const FeatureSchema&) const = default;

 private:
  std::vector<Feature> features_;
};

// Ordered treatment names; the order fixes reward-matrix column order.
class TreatmentSet {
 public:
  TreatmentSet() = default;
  explicit TreatmentSet(std::vector<std::string> names);

  std::size_t size() const { return names_.size(); }
  const std::string& name(std::size_t t) const { return names_[t]; }
  const std::vector<std::string>& names() const { return names_; }
  std::optional<std::size_t> find(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;

  bool operator==(const TreatmentSet&) const = default;

 private:
  std::vector<std::string> names_;
};

using FeatureValue = std::optional<double>;

struct PatientRecord {
  std::string id;
  std::vector<FeatureValue> features;
  std::size_t treatment = 0;
  int outcome = 0;

  bool operator==(const PatientRecord&) const = default;
};

class Cohort {
 public:
  // Validates every record against the schema and treatment set.
  Cohort(FeatureSchema schema, TreatmentSet treatments,
         std::vector<PatientRecord> records);

  std::size_t size() const { return records_.size(); }
  const FeatureSchema& schema() const { return schema_; }
  const TreatmentSet& treatments() const { return treatments_; }
  const std::vector<PatientRecord>& records() const { return records_; }
  const PatientRecord& operator[](std::size_t i) const { return records_[i]; }

  Cohort subset(std::span<const std::size_t> rows) const;
  double outcome_rate() const;
  std::size_t missing_count() const;
  std::vector<std::size_t> treatment_counts() const;

  bool operator==(const Cohort&) const = default;

 private:
  FeatureSchema schema_;
  TreatmentSet treatments_;
  std::vector<PatientRecord> records_;
};

// Dense, complete view of a cohort's features for the learners.
struct FeatureMatrix {
  Matrix values;
  std::vector<FeatureKind> kinds;
  std::vector<std::size_t> level_counts;  // 0 for non-categorical

  std::size_t rows() const { return values.rows(); }
  std::size_t cols() const { return values.cols(); }
};

// Throws InvalidArgument naming the first missing cell.
FeatureMatrix feature_matrix(const Cohort& cohort);

// Sidecar describing the schema and treatment set of a cohort CSV.
struct CohortConfig {
  FeatureSchema schema;
  TreatmentSet treatments;
};

CohortConfig load_cohort_config(const std::filesystem::path& path);
void save_cohort_config(const CohortConfig& config,
                        const std::filesystem::path& path);
std::string cohort_config_json(const CohortConfig& config);
CohortConfig parse_cohort_config(std::string_view json_text);

// CSV layout: `id`, one column per feature in schema order, `treatment`,
// `outcome`. Empty cells are missing values.
Cohort load_cohort(const std::filesystem::path& path,
                   const FeatureSchema& schema,
                   const TreatmentSet& treatments);
Cohort parse_cohort_csv(std::string_view text, const FeatureSchema& schema,
                        const TreatmentSet& treatments);
std::string cohort_csv(const Cohort& cohort);
void save_cohort(const Cohort& cohort, const std::filesystem::path& path);

enum class ImputationMethod { mean, conditional_mean, forest };

std::string_view to_string(ImputationMethod method);
ImputationMethod parse_imputation_method(std::string_view text);

// Fills every missing cell of `cohort` using statistics computed on `fit_on`
// only. Numerics take the mean, binary and categorical features the mode
// (ties go to the lowest level). conditional_mean computes the statistics
// within the record's treatment arm; forest predicts each missing value from
// the remaining features with a bagged tree ensemble.
Cohort impute(const Cohort& cohort, ImputationMethod method,
              const Cohort& fit_on);

struct SplitSpec {
  double train_fraction = 0.5;
  std::uint64_t seed = 0;
};

struct CohortSplit {
  Cohort train;
  Cohort test;
  // Row indices into the source cohort, ascending.
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> test_rows;
};

// Seeded partition with |train| = round(n * train_fraction), kept within
// [1, n - 1]. Both halves preserve the source row order.
CohortSplit split(const Cohort& cohort, const SplitSpec& spec);

// Shortest decimal text that parses back to the same double.
std::string format_double(double value);

}  // namespace rxtree
