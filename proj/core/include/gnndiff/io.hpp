#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "gnndiff/tensor.hpp"

namespace gnndiff {

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t file_checksum(const std::filesystem::path& file);

/// Raw little-endian float32, no header.
void write_f32(const std::filesystem::path& file, std::span<const float> values);
/// Throws LoadError when the file is missing or its size is not `expected` floats (0 = any).
std::vector<float> read_f32(const std::filesystem::path& file, std::size_t expected = 0);

/// Writes through a temporary file and renames it into place.
void write_text_atomic(const std::filesystem::path& file, const std::string& text);
std::string read_text(const std::filesystem::path& file);

/// Run directory: `<name>.f32` tensors indexed by tensors.json, plain files,
/// and manifest.json listing completed stages with the checksum of every file
/// they produced.
class RunDirectory {
 public:
  /// `fingerprint` identifies the configuration; a manifest written under a
  /// different fingerprint is discarded.
  RunDirectory(std::filesystem::path root, std::string fingerprint);

  const std::filesystem::path& root() const noexcept { return root_; }
  /// False when the manifest was missing or written for another configuration.
  bool resumed() const noexcept { return resumed_; }

  void put_tensor(const std::string& name, const Tensor& t);
  Tensor get_tensor(const std::string& name) const;
  void put_tensors(const std::string& name, const std::vector<Tensor>& ts);
  std::vector<Tensor> get_tensors(const std::string& name) const;
  void put_text(const std::string& file, const std::string& text);
  std::string get_text(const std::string& file) const;

  /// True when the stage is recorded and every file still matches its checksum.
  bool stage_valid(const std::string& stage) const;
  /// Records `files` (relative names) under `stage`.
  void complete_stage(const std::string& stage, const std::vector<std::string>& files);
  /// Forgets `stage` and every stage recorded after it.
  void invalidate_from(const std::string& stage);
  std::vector<std::string> completed_stages() const;

 private:
  struct StageRecord {
    std::string name;
    std::map<std::string, std::string> checksums;
  };
  void save_manifest() const;
  void save_index() const;
  std::string file_name(const std::string& tensor) const { return tensor + ".f32"; }

  std::filesystem::path root_;
  std::string fingerprint_;
  bool resumed_ = false;
  std::vector<StageRecord> stages_;
  std::map<std::string, std::vector<Shape>> index_;
};

}  // namespace gnndiff
