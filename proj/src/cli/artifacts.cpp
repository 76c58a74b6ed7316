#include "artifacts.hpp"

#include <algorithm>
#include <system_error>

#include "rxtree/error.hpp"
#include "rxtree/report.hpp"

namespace rxtree::cli {

namespace fs = std::filesystem;

namespace {

fs::path staging_path(const fs::path& target) {
  fs::path parent = target.parent_path();
  if (parent.empty()) parent = ".";
  return parent / ("." + target.filename().string() + ".partial");
}

}  // namespace

ArtifactDir::ArtifactDir(fs::path target) : target_(std::move(target)) {
  if (target_.empty() || target_.filename().empty()) {
    throw InvalidArgument("output directory path is empty");
  }
  staging_ = staging_path(target_);
  std::error_code ec;
  fs::remove_all(staging_, ec);
  fs::create_directories(staging_, ec);
  if (ec) {
    throw Error("cannot create output directory " + staging_.string() + ": " + ec.message());
  }
}

ArtifactDir::~ArtifactDir() {
  if (!committed_) {
    std::error_code ec;
    fs::remove_all(staging_, ec);
  }
}

void ArtifactDir::write(const fs::path& relative, std::string_view text) {
  const fs::path path = staging_ / relative;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_text_file(path, text);
  files_.push_back(relative);
}

void ArtifactDir::copy_file(const fs::path& source, const fs::path& relative) {
  write(relative, read_text_file(source));
}

void ArtifactDir::commit(nlohmann::ordered_json manifest) {
  std::vector<fs::path> sorted = files_;
  std::sort(sorted.begin(), sorted.end());
  nlohmann::ordered_json list = nlohmann::ordered_json::array();
  for (const auto& rel : sorted) {
    const std::string bytes = read_text_file(staging_ / rel);
    list.push_back({{"path", rel.generic_string()},
                    {"bytes", bytes.size()},
                    {"fnv1a64", fnv1a_hex(bytes)}});
  }
  manifest["files"] = std::move(list);
  write_text_file(staging_ / "manifest.json", manifest.dump(2) + "\n");

  std::error_code ec;
  fs::remove_all(target_, ec);
  fs::rename(staging_, target_, ec);
  if (ec) {
    throw Error("cannot move output into " + target_.string() + ": " + ec.message());
  }
  committed_ = true;
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[h & 0xf];
    h >>= 4;
  }
  return out;
}

nlohmann::ordered_json manifest_header(std::string_view command) {
  nlohmann::ordered_json m;
  m["tool"] = "rxtree";
  m["version"] = RXTREE_VERSION;
  m["command"] = std::string(command);
  return m;
}

}  // namespace rxtree::cli
