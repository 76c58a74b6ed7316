#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rxtree/data.hpp"
#include "rxtree/matrix.hpp"
#include "rxtree/random.hpp"
#include "rxtree/reward.hpp"

namespace rxtree::testing {

inline Feature numeric(std::string name) { return {std::move(name), FeatureKind::numeric, {}, {}, {}, {}}; }
inline Feature binary(std::string name) { return {std::move(name), FeatureKind::binary, {}, {}, {}, {}}; }
inline Feature categorical(std::string name, std::vector<std::string> levels) {
  return {std::move(name), FeatureKind::categorical, std::move(levels), {}, {}, {}};
}

inline TreatmentSet two_arms() { return TreatmentSet({"A", "B"}); }

struct Row {
  std::vector<FeatureValue> x;
  std::size_t t = 0;
  int y = 0;
};

inline Cohort make_cohort(const FeatureSchema& schema, const TreatmentSet& treatments,
                          const std::vector<Row>& rows) {
  std::vector<PatientRecord> records;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    records.push_back({"r" + std::to_string(i), rows[i].x, rows[i].t, rows[i].y});
  }
  return Cohort(schema, treatments, std::move(records));
}

// One numeric feature, values as given, all on arm 0 with outcome 0.
inline Cohort line_cohort(const std::vector<double>& xs, const TreatmentSet& treatments) {
  std::vector<Row> rows;
  for (double x : xs) rows.push_back({{x}, 0, 0});
  return make_cohort(FeatureSchema({numeric("x")}), treatments, rows);
}

inline RewardMatrix reward_for(const Cohort& cohort, Matrix values) {
  std::vector<std::string> ids;
  for (const auto& r : cohort.records()) ids.push_back(r.id);
  return RewardMatrix(std::move(ids), cohort.treatments(), std::move(values),
                      RewardProvenance::doubly_robust);
}

// n rows over `features` numeric columns uniform on [0, 1) rounded to three
// decimals, random arms and outcomes; reward uniform on [0, 1).
struct RandomInstance {
  Cohort cohort;
  RewardMatrix reward;
};

inline RandomInstance random_instance(Rng& rng, std::size_t n, std::size_t features,
                                      std::size_t arms = 2) {
  std::vector<Feature> fs;
  for (std::size_t j = 0; j < features; ++j) fs.push_back(numeric("f" + std::to_string(j)));
  std::vector<std::string> names;
  for (std::size_t t = 0; t < arms; ++t) names.push_back("t" + std::to_string(t));
  std::vector<Row> rows;
  Matrix g(n, arms);
  for (std::size_t i = 0; i < n; ++i) {
    Row r;
    for (std::size_t j = 0; j < features; ++j) {
      r.x.push_back(static_cast<double>(rng.index(1000)) / 1000.0);
    }
    r.t = rng.index(arms);
    r.y = rng.bernoulli(0.3) ? 1 : 0;
    rows.push_back(r);
    for (std::size_t t = 0; t < arms; ++t) g(i, t) = rng.uniform();
  }
  Cohort c = make_cohort(FeatureSchema(fs), TreatmentSet(names), rows);
  RewardMatrix reward = reward_for(c, g);
  return {std::move(c), std::move(reward)};
}

// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag)
      : path_(std::filesystem::temp_directory_path() / ("rxtree_unit_" + tag)) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

}  // namespace rxtree::testing
