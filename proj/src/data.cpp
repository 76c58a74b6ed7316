#include "rxtree/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>

#include <json.hpp>

#include "rxtree/error.hpp"
#include "rxtree/random.hpp"
#include "rxtree/report.hpp"

namespace rxtree {

using nlohmann::json;

std::string_view to_string(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::numeric:
      return "numeric";
    case FeatureKind::binary:
      return "binary";
    case FeatureKind::categorical:
      return "categorical";
  }
  return "numeric";
}

FeatureKind parse_feature_kind(std::string_view text) {
  if (text == "numeric") return FeatureKind::numeric;
  if (text == "binary") return FeatureKind::binary;
  if (text == "categorical") return FeatureKind::categorical;
  throw InvalidArgument("unknown feature kind '" + std::string(text) + "'");
}

FeatureSchema::FeatureSchema(std::vector<Feature> features)
    : features_(std::move(features)) {
  std::set<std::string> names;
  for (const auto& f : features_) {
    if (f.name.empty()) throw InvalidArgument("schema: empty feature name");
    if (!names.insert(f.name).second) {
      throw InvalidArgument("schema: duplicate feature '" + f.name + "'");
    }
    if (f.kind == FeatureKind::categorical) {
      if (f.levels.empty()) {
        throw InvalidArgument("schema: categorical feature '" + f.name +
                              "' has no levels");
      }
      std::set<std::string> levels(f.levels.begin(), f.levels.end());
      if (levels.size() != f.levels.size()) {
        throw InvalidArgument("schema: duplicate level in '" + f.name + "'");
      }
    } else if (!f.levels.empty()) {
      throw InvalidArgument("schema: levels given for non-categorical '" +
                            f.name + "'");
    }
  }
}

std::optional<std::size_t> FeatureSchema::find(std::string_view name) const {
  for (std::size_t i = 0; i < features_.size(); ++i) {
    if (features_[i].name == name) return i;
  }
  return std::nullopt;
}

std::size_t FeatureSchema::index_of(std::string_view name) const {
  if (auto i = find(name)) return *i;
  throw InvalidArgument("unknown feature '" + std::string(name) + "'");
}

bool FeatureSchema::admits(std::size_t i, double value) const {
  const Feature& f = features_[i];
  switch (f.kind) {
    case FeatureKind::numeric:
      return std::isfinite(value);
    case FeatureKind::binary:
      return value == 0.0 || value == 1.0;
    case FeatureKind::categorical:
      return value >= 0.0 && value < static_cast<double>(f.levels.size()) &&
             value == std::floor(value);
  }
  return false;
}

TreatmentSet::TreatmentSet(std::vector<std::string> names)
    : names_(std::move(names)) {
  if (names_.size() < 2) {
    throw InvalidArgument("treatment set needs at least two treatments");
  }
  std::set<std::string> unique(names_.begin(), names_.end());
  if (unique.size() != names_.size()) {
    throw InvalidArgument("treatment set has duplicate names");
  }
}

std::optional<std::size_t> TreatmentSet::find(std::string_view name) const {
  for (std::size_t t = 0; t < names_.size(); ++t) {
    if (names_[t] == name) return t;
  }
  return std::nullopt;
}

std::size_t TreatmentSet::index_of(std::string_view name) const {
  if (auto t = find(name)) return *t;
  throw InvalidArgument("unknown treatment '" + std::string(name) + "'");
}

Cohort::Cohort(FeatureSchema schema, TreatmentSet treatments,
               std::vector<PatientRecord> records)
    : schema_(std::move(schema)),
      treatments_(std::move(treatments)),
      records_(std::move(records)) {
  if (records_.empty()) throw InvalidArgument("cohort has no records");
  for (std::size_t r = 0; r < records_.size(); ++r) {
    const auto& rec = records_[r];
    if (rec.features.size() != schema_.size()) {
      throw InvalidArgument("record " + rec.id + ": expected " +
                            std::to_string(schema_.size()) + " features, got " +
                            std::to_string(rec.features.size()));
    }
    if (rec.outcome != 0 && rec.outcome != 1) {
      throw InvalidArgument("record " + rec.id + ": outcome must be 0 or 1");
    }
    if (rec.treatment >= treatments_.size()) {
      throw InvalidArgument("record " + rec.id + ": treatment out of range");
    }
    for (std::size_t j = 0; j < schema_.size(); ++j) {
      if (rec.features[j] && !schema_.admits(j, *rec.features[j])) {
        throw InvalidArgument("record " + rec.id + ": invalid value for '" +
                              schema_[j].name + "'");
      }
    }
  }
}

Cohort Cohort::subset(std::span<const std::size_t> rows) const {
  std::vector<PatientRecord> picked;
  picked.reserve(rows.size());
  for (auto r : rows) picked.push_back(records_.at(r));
  return Cohort(schema_, treatments_, std::move(picked));
}

double Cohort::outcome_rate() const {
  double events = 0.0;
  for (const auto& rec : records_) events += rec.outcome;
  return events / static_cast<double>(records_.size());
}

std::size_t Cohort::missing_count() const {
  std::size_t missing = 0;
  for (const auto& rec : records_) {
    for (const auto& v : rec.features) missing += v.has_value() ? 0 : 1;
  }
  return missing;
}

std::vector<std::size_t> Cohort::treatment_counts() const {
  std::vector<std::size_t> counts(treatments_.size(), 0);
  for (const auto& rec : records_) ++counts[rec.treatment];
  return counts;
}

FeatureMatrix feature_matrix(const Cohort& cohort) {
  const auto& schema = cohort.schema();
  FeatureMatrix out;
  out.values = Matrix(cohort.size(), schema.size());
  for (std::size_t j = 0; j < schema.size(); ++j) {
    out.kinds.push_back(schema[j].kind);
    out.level_counts.push_back(schema[j].levels.size());
  }
  for (std::size_t r = 0; r < cohort.size(); ++r) {
    const auto& rec = cohort[r];
    for (std::size_t j = 0; j < schema.size(); ++j) {
      if (!rec.features[j]) {
        throw InvalidArgument("record " + rec.id + ": missing value for '" +
                              schema[j].name + "'; impute first");
      }
      out.values(r, j) = *rec.features[j];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sidecar config

std::string cohort_config_json(const CohortConfig& config) {
  json features = json::array();
  for (const auto& f : config.schema.features()) {
    json item = {{"name", f.name}, {"kind", std::string(to_string(f.kind))}};
    if (f.kind == FeatureKind::categorical) item["levels"] = f.levels;
    if (f.unit) item["unit"] = *f.unit;
    if (f.min) item["min"] = *f.min;
    if (f.max) item["max"] = *f.max;
    features.push_back(std::move(item));
  }
  json doc = {{"features", std::move(features)},
              {"treatments", config.treatments.names()}};
  return doc.dump(2) + "\n";
}

CohortConfig parse_cohort_config(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw LoadError(std::string("schema config: ") + e.what());
  }
  try {
    std::vector<Feature> features;
    for (const auto& item : doc.at("features")) {
      Feature f;
      f.name = item.at("name").get<std::string>();
      f.kind = parse_feature_kind(item.at("kind").get<std::string>());
      if (item.contains("levels")) {
        f.levels = item.at("levels").get<std::vector<std::string>>();
      }
      if (item.contains("unit")) f.unit = item.at("unit").get<std::string>();
      if (item.contains("min")) f.min = item.at("min").get<double>();
      if (item.contains("max")) f.max = item.at("max").get<double>();
      features.push_back(std::move(f));
    }
    return {FeatureSchema(std::move(features)),
            TreatmentSet(doc.at("treatments").get<std::vector<std::string>>())};
  } catch (const json::exception& e) {
    throw LoadError(std::string("schema config: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw LoadError(std::string("schema config: ") + e.what());
  }
}

CohortConfig load_cohort_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw LoadError("schema config not found: " + path.string());
  }
  return parse_cohort_config(read_text_file(path));
}

void save_cohort_config(const CohortConfig& config,
                        const std::filesystem::path& path) {
  write_text_file(path, cohort_config_json(config));
}

// ---------------------------------------------------------------------------
// CSV

std::string format_double(double value) {
  char buffer[64];
  auto [end, ec] = std::to_chars(buffer, buffer + sizeof(buffer), value);
  if (ec != std::errc()) throw Error("format_double failed");
  return std::string(buffer, end);
}

namespace {

std::string cell_error(std::size_t line, std::string_view column,
                       std::string_view message) {
  return "cohort csv: row " + std::to_string(line) + ", column '" +
         std::string(column) + "': " + std::string(message);
}

}  // namespace

Cohort parse_cohort_csv(std::string_view text, const FeatureSchema& schema,
                        const TreatmentSet& treatments) {
  const auto rows = parse_csv(text);
  if (rows.empty()) throw LoadError("cohort csv: empty file");

  CsvRow expected{"id"};
  for (const auto& f : schema.features()) expected.push_back(f.name);
  expected.push_back("treatment");
  expected.push_back("outcome");

  const CsvRow& header = rows.front();
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (std::find(expected.begin(), expected.end(), header[c]) ==
        expected.end()) {
      throw LoadError("cohort csv: unknown column '" + header[c] + "'");
    }
  }
  if (header != expected) {
    for (const auto& name : expected) {
      if (std::find(header.begin(), header.end(), name) == header.end()) {
        throw LoadError("cohort csv: missing column '" + name + "'");
      }
    }
    throw LoadError(
        "cohort csv: columns must be id, features in schema order, treatment, "
        "outcome");
  }

  std::vector<PatientRecord> records;
  records.reserve(rows.size() - 1);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const CsvRow& row = rows[r];
    // Data rows are numbered from 1, matching a spreadsheet view below the
    // header.
    const std::size_t line = r;
    if (row.size() == 1 && row[0].empty()) continue;
    if (row.size() != expected.size()) {
      throw LoadError("cohort csv: row " + std::to_string(line) + " has " +
                      std::to_string(row.size()) + " cells, expected " +
                      std::to_string(expected.size()));
    }
    PatientRecord rec;
    rec.id = row[0];
    rec.features.resize(schema.size());
    for (std::size_t j = 0; j < schema.size(); ++j) {
      const std::string& cell = row[j + 1];
      const Feature& f = schema[j];
      if (cell.empty()) continue;
      if (f.kind == FeatureKind::categorical) {
        auto it = std::find(f.levels.begin(), f.levels.end(), cell);
        if (it == f.levels.end()) {
          throw LoadError(cell_error(line, f.name, "unknown level '" + cell + "'"));
        }
        rec.features[j] = static_cast<double>(it - f.levels.begin());
        continue;
      }
      double value = 0.0;
      auto [end, ec] =
          std::from_chars(cell.data(), cell.data() + cell.size(), value);
      if (ec != std::errc() || end != cell.data() + cell.size() ||
          !std::isfinite(value)) {
        throw LoadError(cell_error(line, f.name, "unparseable number '" + cell + "'"));
      }
      if (f.kind == FeatureKind::binary && value != 0.0 && value != 1.0) {
        throw LoadError(cell_error(line, f.name, "binary value must be 0 or 1"));
      }
      rec.features[j] = value;
    }
    const std::string& treatment = row[schema.size() + 1];
    auto t = treatments.find(treatment);
    if (!t) {
      throw LoadError(cell_error(line, "treatment",
                                 "unknown treatment '" + treatment + "'"));
    }
    rec.treatment = *t;
    const std::string& outcome = row[schema.size() + 2];
    if (outcome == "0") {
      rec.outcome = 0;
    } else if (outcome == "1") {
      rec.outcome = 1;
    } else {
      throw LoadError(cell_error(line, "outcome",
                                 "outcome must be 0 or 1, got '" + outcome + "'"));
    }
    records.push_back(std::move(rec));
  }
  if (records.empty()) throw LoadError("cohort csv: no data rows");
  return Cohort(schema, treatments, std::move(records));
}

Cohort load_cohort(const std::filesystem::path& path,
                   const FeatureSchema& schema,
                   const TreatmentSet& treatments) {
  return parse_cohort_csv(read_text_file(path), schema, treatments);
}

std::string cohort_csv(const Cohort& cohort) {
  const auto& schema = cohort.schema();
  CsvRow header{"id"};
  for (const auto& f : schema.features()) header.push_back(f.name);
  header.push_back("treatment");
  header.push_back("outcome");
  CsvWriter writer(std::move(header));
  for (const auto& rec : cohort.records()) {
    CsvRow row{rec.id};
    for (std::size_t j = 0; j < schema.size(); ++j) {
      const auto& v = rec.features[j];
      if (!v) {
        row.emplace_back();
      } else if (schema[j].kind == FeatureKind::categorical) {
        row.push_back(schema[j].levels[static_cast<std::size_t>(*v)]);
      } else {
        row.push_back(format_double(*v));
      }
    }
    row.push_back(cohort.treatments().name(rec.treatment));
    row.push_back(std::to_string(rec.outcome));
    writer.add(std::move(row));
  }
  return writer.str();
}

void save_cohort(const Cohort& cohort, const std::filesystem::path& path) {
  write_text_file(path, cohort_csv(cohort));
}

// ---------------------------------------------------------------------------
// Imputation

std::string_view to_string(ImputationMethod method) {
  switch (method) {
    case ImputationMethod::mean:
      return "mean";
    case ImputationMethod::conditional_mean:
      return "conditional_mean";
    case ImputationMethod::forest:
      return "forest";
  }
  return "mean";
}

ImputationMethod parse_imputation_method(std::string_view text) {
  if (text == "mean") return ImputationMethod::mean;
  if (text == "conditional_mean") return ImputationMethod::conditional_mean;
  if (text == "forest") return ImputationMethod::forest;
  throw InvalidArgument("unknown imputation method '" + std::string(text) + "'");
}

namespace detail {

// Mean for numerics, mode for binary/categorical, over the given rows.
std::optional<double> fill_value(const Cohort& cohort, std::size_t feature,
                                 std::span<const std::size_t> rows) {
  const Feature& f = cohort.schema()[feature];
  if (f.kind == FeatureKind::numeric) {
    double total = 0.0;
    std::size_t count = 0;
    for (auto r : rows) {
      if (const auto& v = cohort[r].features[feature]) {
        total += *v;
        ++count;
      }
    }
    if (count == 0) return std::nullopt;
    return total / static_cast<double>(count);
  }
  const std::size_t levels =
      f.kind == FeatureKind::binary ? 2 : f.levels.size();
  std::vector<std::size_t> counts(levels, 0);
  std::size_t observed = 0;
  for (auto r : rows) {
    if (const auto& v = cohort[r].features[feature]) {
      ++counts[static_cast<std::size_t>(*v)];
      ++observed;
    }
  }
  if (observed == 0) return std::nullopt;
  // max_element returns the first maximum, so ties go to the lowest level.
  return static_cast<double>(std::max_element(counts.begin(), counts.end()) -
                             counts.begin());
}

Cohort impute_forest(const Cohort& cohort, const Cohort& fit_on);

}  // namespace detail

Cohort impute(const Cohort& cohort, ImputationMethod method,
              const Cohort& fit_on) {
  if (!(cohort.schema() == fit_on.schema())) {
    throw ImputationError("impute: fit_on cohort has a different schema");
  }
  if (method == ImputationMethod::forest) {
    return detail::impute_forest(cohort, fit_on);
  }
  const auto& schema = cohort.schema();
  const std::size_t groups =
      method == ImputationMethod::conditional_mean ? cohort.treatments().size() : 1;

  // fill[g][j]: statistic for feature j within conditioning group g.
  std::vector<std::vector<std::optional<double>>> fill(
      groups, std::vector<std::optional<double>>(schema.size()));
  for (std::size_t g = 0; g < groups; ++g) {
    std::vector<std::size_t> rows;
    for (std::size_t r = 0; r < fit_on.size(); ++r) {
      if (groups == 1 || fit_on[r].treatment == g) rows.push_back(r);
    }
    for (std::size_t j = 0; j < schema.size(); ++j) {
      fill[g][j] = detail::fill_value(fit_on, j, rows);
    }
  }

  std::vector<PatientRecord> records = cohort.records();
  for (auto& rec : records) {
    const std::size_t g = groups == 1 ? 0 : rec.treatment;
    for (std::size_t j = 0; j < schema.size(); ++j) {
      if (rec.features[j]) continue;
      if (!fill[g][j]) {
        std::string message = "impute: feature '" + schema[j].name +
                              "' has no observed values";
        if (groups > 1) {
          message += " for treatment '" + cohort.treatments().name(g) + "'";
        }
        throw ImputationError(message);
      }
      rec.features[j] = fill[g][j];
    }
  }
  return Cohort(schema, cohort.treatments(), std::move(records));
}

// ---------------------------------------------------------------------------
// Split

CohortSplit split(const Cohort& cohort, const SplitSpec& spec) {
  const std::size_t n = cohort.size();
  if (n < 2) throw InvalidArgument("split: cohort needs at least two records");
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
    throw InvalidArgument("split: train_fraction must lie in (0, 1)");
  }
  auto train_size = static_cast<std::size_t>(
      std::llround(static_cast<double>(n) * spec.train_fraction));
  train_size = std::clamp<std::size_t>(train_size, 1, n - 1);

  Rng rng(spec.seed);
  auto order = permutation(n, rng);
  CohortSplit out{cohort, cohort, {}, {}};
  out.train_rows.assign(order.begin(), order.begin() + train_size);
  out.test_rows.assign(order.begin() + train_size, order.end());
  std::sort(out.train_rows.begin(), out.train_rows.end());
  std::sort(out.test_rows.begin(), out.test_rows.end());
  out.train = cohort.subset(out.train_rows);
  out.test = cohort.subset(out.test_rows);
  return out;
}

}  // namespace rxtree
