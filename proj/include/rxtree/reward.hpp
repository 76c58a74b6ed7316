#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "rxtree/data.hpp"
#include "rxtree/matrix.hpp"

namespace rxtree {

enum class RewardProvenance { doubly_robust, oracle };

std::string_view to_string(RewardProvenance provenance);

// n x n_t matrix of estimated outcomes per record and treatment. Entries are
// finite but not necessarily within [0, 1].
class RewardMatrix {
 public:
  RewardMatrix(std::vector<std::string> ids, TreatmentSet treatments,
               Matrix values, RewardProvenance provenance);

  std::size_t rows() const { return values_.rows(); }
  std::size_t treatment_count() const { return values_.cols(); }
  double operator()(std::size_t i, std::size_t t) const { return values_(i, t); }
  const Matrix& values() const { return values_; }
  const std::vector<std::string>& ids() const { return ids_; }
  const TreatmentSet& treatments() const { return treatments_; }
  RewardProvenance provenance() const { return provenance_; }

  double mean_abs() const;
  RewardMatrix select_rows(std::span<const std::size_t> rows) const;

  // Throws InvalidArgument unless ids and treatment order match the cohort.
  void check_aligned(const Cohort& cohort) const;

  bool operator==(const RewardMatrix&) const = default;

 private:
  std::vector<std::string> ids_;
  TreatmentSet treatments_;
  Matrix values_;
  RewardProvenance provenance_;
};

// CSV: `id` then one column per treatment in treatment-set order.
std::string reward_csv(const RewardMatrix& reward);
RewardMatrix parse_reward_csv(std::string_view text, const TreatmentSet& treatments,
                              RewardProvenance provenance);
RewardMatrix load_reward_csv(const std::filesystem::path& path,
                             const TreatmentSet& treatments,
                             RewardProvenance provenance);

}  // namespace rxtree
