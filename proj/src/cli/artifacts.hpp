#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace rxtree::cli {

// Output directory staged in a sibling temporary directory. Nothing appears
// at the final path until commit(); an uncommitted directory is removed on
// destruction.
class ArtifactDir {
 public:
  explicit ArtifactDir(std::filesystem::path target);
  ~ArtifactDir();
  ArtifactDir(const ArtifactDir&) = delete;
  ArtifactDir& operator=(const ArtifactDir&) = delete;

  const std::filesystem::path& target() const { return target_; }
  const std::filesystem::path& staging() const { return staging_; }

  // `relative` may contain subdirectories.
  void write(const std::filesystem::path& relative, std::string_view text);
  void copy_file(const std::filesystem::path& source, const std::filesystem::path& relative);

  // Writes manifest.json (the given document plus the file list) and moves
  // the staging directory into place, replacing any previous target.
  void commit(nlohmann::ordered_json manifest);

  const std::vector<std::filesystem::path>& files() const { return files_; }

 private:
  std::filesystem::path target_;
  std::filesystem::path staging_;
  std::vector<std::filesystem::path> files_;
  bool committed_ = false;
};

// 64-bit FNV-1a, hex encoded.
std::string fnv1a_hex(std::string_view bytes);

nlohmann::ordered_json manifest_header(std::string_view command);

}  // namespace rxtree::cli
