#include "rxtree/reward.hpp"

#include <charconv>
#include <cmath>

#include "rxtree/error.hpp"
#include "rxtree/report.hpp"

namespace rxtree {

std::string_view to_string(RewardProvenance provenance) {
  return provenance == RewardProvenance::oracle ? "oracle" : "doubly_robust";
}

RewardMatrix::RewardMatrix(std::vector<std::string> ids, TreatmentSet treatments,
                           Matrix values, RewardProvenance provenance)
    : ids_(std::move(ids)),
      treatments_(std::move(treatments)),
      values_(std::move(values)),
      provenance_(provenance) {
  if (ids_.size() != values_.rows()) {
    throw InvalidArgument("reward matrix: id count differs from row count");
  }
  if (treatments_.size() != values_.cols()) {
    throw InvalidArgument("reward matrix: column count differs from treatment count");
  }
  for (double v : values_.values()) {
    if (!std::isfinite(v)) throw InvalidArgument("reward matrix: non-finite entry");
  }
}

double RewardMatrix::mean_abs() const {
  const auto& v = values_.values();
  if (v.empty()) return 0.0;
  double total = 0.0;
  for (double x : v) total += std::abs(x);
  return total / static_cast<double>(v.size());
}

RewardMatrix RewardMatrix::select_rows(std::span<const std::size_t> rows) const {
  std::vector<std::string> ids;
  ids.reserve(rows.size());
  for (auto r : rows) ids.push_back(ids_.at(r));
  return RewardMatrix(std::move(ids), treatments_, values_.select_rows(rows),
                      provenance_);
}

void RewardMatrix::check_aligned(const Cohort& cohort) const {
  if (!(treatments_ == cohort.treatments())) {
    throw InvalidArgument("reward matrix: treatment order differs from cohort");
  }
  if (rows() != cohort.size()) {
    throw InvalidArgument("reward matrix: " + std::to_string(rows()) +
                          " rows for a cohort of " + std::to_string(cohort.size()));
  }
  for (std::size_t i = 0; i < rows(); ++i) {
    if (ids_[i] != cohort[i].id) {
      throw InvalidArgument("reward matrix: row " + std::to_string(i + 1) +
                            " has id '" + ids_[i] + "', cohort has '" +
                            cohort[i].id + "'");
    }
  }
}

std::string reward_csv(const RewardMatrix& reward) {
  CsvRow header{"id"};
  for (const auto& name : reward.treatments().names()) header.push_back(name);
  CsvWriter writer(std::move(header));
  for (std::size_t i = 0; i < reward.rows(); ++i) {
    CsvRow row{reward.ids()[i]};
    for (std::size_t t = 0; t < reward.treatment_count(); ++t) {
      row.push_back(format_double(reward(i, t)));
    }
    writer.add(std::move(row));
  }
  return writer.str();
}

RewardMatrix parse_reward_csv(std::string_view text, const TreatmentSet& treatments,
                              RewardProvenance provenance) {
  const auto rows = parse_csv(text);
  if (rows.empty()) throw LoadError("reward csv: empty file");
  CsvRow expected{"id"};
  for (const auto& name : treatments.names()) expected.push_back(name);
  if (rows.front() != expected) {
    throw LoadError("reward csv: header must be id followed by the treatments in order");
  }
  std::vector<std::string> ids;
  Matrix values(rows.size() - 1, treatments.size());
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() != expected.size()) {
      throw LoadError("reward csv: row " + std::to_string(r) + " has wrong cell count");
    }
    ids.push_back(row[0]);
    for (std::size_t t = 0; t < treatments.size(); ++t) {
      const std::string& cell = row[t + 1];
      double v = 0.0;
      auto [end, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || end != cell.data() + cell.size()) {
        throw LoadError("reward csv: row " + std::to_string(r) + ", column '" +
                        expected[t + 1] + "': unparseable number");
      }
      values(r - 1, t) = v;
    }
  }
  try {
    return RewardMatrix(std::move(ids), treatments, std::move(values), provenance);
  } catch (const InvalidArgument& e) {
    throw LoadError(std::string("reward csv: ") + e.what());
  }
}

RewardMatrix load_reward_csv(const std::filesystem::path& path,
                             const TreatmentSet& treatments,
                             RewardProvenance provenance) {
  return parse_reward_csv(read_text_file(path), treatments, provenance);
}

}  // namespace rxtree
