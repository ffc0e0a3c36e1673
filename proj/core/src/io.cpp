#include "gnndiff/io.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "gnndiff/error.hpp"

namespace gnndiff {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t h) {
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t file_checksum(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw LoadError(file.string(), 0, "cannot open file");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  std::vector<unsigned char> buf(1 << 16);
  while (in) {
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    h = fnv1a64({buf.data(), static_cast<std::size_t>(in.gcount())}, h);
  }
  return h;
}

void write_f32(const fs::path& file, std::span<const float> values) {
  const auto tmp = fs::path(file).concat(".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw LoadError(tmp.string(), 0, "cannot write file");
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  }
  fs::rename(tmp, file);
}

std::vector<float> read_f32(const fs::path& file, std::size_t expected) {
  std::error_code ec;
  const auto bytes = fs::file_size(file, ec);
  if (ec) throw LoadError(file.string(), 0, "cannot open file");
  if (bytes % sizeof(float) != 0) throw LoadError(file.string(), 0, "size is not a multiple of 4 bytes");
  const std::size_t n = bytes / sizeof(float);
  if (expected && n != expected)
    throw LoadError(file.string(), 0, "holds " + std::to_string(n) + " floats, expected " + std::to_string(expected));
  std::vector<float> out(n);
  std::ifstream in(file, std::ios::binary);
  in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw LoadError(file.string(), 0, "short read");
  return out;
}

void write_text_atomic(const fs::path& file, const std::string& text) {
  const auto tmp = fs::path(file).concat(".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw LoadError(tmp.string(), 0, "cannot write file");
    out << text;
  }
  fs::rename(tmp, file);
}

std::string read_text(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw LoadError(file.string(), 0, "cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---- RunDirectory -----------------------------------------------------------

RunDirectory::RunDirectory(fs::path root, std::string fingerprint)
    : root_(std::move(root)), fingerprint_(std::move(fingerprint)) {
  fs::create_directories(root_);
  const auto manifest = root_ / "manifest.json";
  if (fs::exists(manifest)) {
    try {
      const auto j = Json::parse(read_text(manifest));
      resumed_ = j.at("fingerprint").get<std::string>() == fingerprint_;
      if (resumed_)
        for (const auto& s : j.at("stages")) {
          StageRecord r{s.at("name").get<std::string>(), {}};
          for (const auto& [f, c] : s.at("files").items()) r.checksums[f] = c.get<std::string>();
          stages_.push_back(std::move(r));
        }
    } catch (const nlohmann::json::exception&) {
      resumed_ = false;
      stages_.clear();
    }
  }
  const auto index = root_ / "tensors.json";
  if (!stages_.empty() && fs::exists(index)) {
    try {
      const auto j = Json::parse(read_text(index));
      for (const auto& [name, shapes] : j.items())
        index_[name] = shapes.get<std::vector<Shape>>();
    } catch (const nlohmann::json::exception&) {
      stages_.clear();
      index_.clear();
    }
  }
  save_manifest();
}

void RunDirectory::save_manifest() const {
  Json j;
  j["fingerprint"] = fingerprint_;
  j["stages"] = Json::array();
  for (const auto& s : stages_) {
    Json files = Json::object();
    for (const auto& [f, c] : s.checksums) files[f] = c;
    j["stages"].push_back({{"name", s.name}, {"files", files}});
  }
  write_text_atomic(root_ / "manifest.json", j.dump(2) + "\n");
}

void RunDirectory::save_index() const {
  Json j = Json::object();
  for (const auto& [name, shapes] : index_) j[name] = shapes;
  write_text_atomic(root_ / "tensors.json", j.dump(2) + "\n");
}

void RunDirectory::put_tensor(const std::string& name, const Tensor& t) { put_tensors(name, {t}); }

Tensor RunDirectory::get_tensor(const std::string& name) const {
  auto ts = get_tensors(name);
  if (ts.size() != 1) throw LoadError((root_ / file_name(name)).string(), 0, "expected a single tensor");
  return std::move(ts.front());
}

void RunDirectory::put_tensors(const std::string& name, const std::vector<Tensor>& ts) {
  std::vector<float> flat;
  std::vector<Shape> shapes;
  for (const auto& t : ts) {
    flat.insert(flat.end(), t.storage().begin(), t.storage().end());
    shapes.push_back(t.shape());
  }
  write_f32(root_ / file_name(name), flat);
  index_[name] = std::move(shapes);
  save_index();
}

std::vector<Tensor> RunDirectory::get_tensors(const std::string& name) const {
  const auto it = index_.find(name);
  const auto file = root_ / file_name(name);
  if (it == index_.end()) throw LoadError(file.string(), 0, "tensor '" + name + "' is not indexed");
  std::size_t total = 0;
  for (const auto& s : it->second) total += shape_numel(s);
  const auto flat = read_f32(file, total);
  std::vector<Tensor> out;
  std::size_t off = 0;
  for (const auto& s : it->second) {
    const std::size_t n = shape_numel(s);
    out.emplace_back(s, std::vector<float>(flat.begin() + static_cast<std::ptrdiff_t>(off),
                                           flat.begin() + static_cast<std::ptrdiff_t>(off + n)));
    off += n;
  }
  return out;
}

void RunDirectory::put_text(const std::string& file, const std::string& text) { write_text_atomic(root_ / file, text); }

std::string RunDirectory::get_text(const std::string& file) const { return read_text(root_ / file); }

bool RunDirectory::stage_valid(const std::string& stage) const {
  const auto it = std::find_if(stages_.begin(), stages_.end(), [&](const auto& s) { return s.name == stage; });
  if (it == stages_.end()) return false;
  for (const auto& [f, c] : it->checksums) {
    const auto path = root_ / f;
    if (!fs::exists(path)) return false;
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(file_checksum(path)));
    if (c != buf) return false;
  }
  return true;
}

void RunDirectory::complete_stage(const std::string& stage, const std::vector<std::string>& files) {
  invalidate_from(stage);
  StageRecord r{stage, {}};
  for (const auto& f : files) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(file_checksum(root_ / f)));
    r.checksums[f] = buf;
  }
  stages_.push_back(std::move(r));
  save_manifest();
}

void RunDirectory::invalidate_from(const std::string& stage) {
  const auto it = std::find_if(stages_.begin(), stages_.end(), [&](const auto& s) { return s.name == stage; });
  if (it == stages_.end()) return;
  stages_.erase(it, stages_.end());
  save_manifest();
}

std::vector<std::string> RunDirectory::completed_stages() const {
  std::vector<std::string> out;
  for (const auto& s : stages_) out.push_back(s.name);
  return out;
}

}  // namespace gnndiff
