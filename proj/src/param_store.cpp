#include "avvp/param_store.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace avvp {

static_assert(std::endian::native == std::endian::little,
              "checkpoint and dataset payloads are written in native byte order "
              "and the formats are little-endian");

namespace {
constexpr char kMagic[8] = {'A', 'V', 'V', 'P', 'C', 'K', 'P', '1'};
}

const char* group_name(Group g) {
  switch (g) {
    case Group::audio: return "audio";
    case Group::visual: return "visual";
    case Group::shared: return "shared";
  }
  return "?";
}

Group group_from_name(const std::string& s) {
  if (s == "audio") return Group::audio;
  if (s == "visual") return Group::visual;
  if (s == "shared") return Group::shared;
  throw ConfigError("unknown parameter group '" + s + "'");
}

Tensor& ParameterStore::add(const std::string& name, Group group, Shape shape) {
  if (has(name)) throw UsageError("parameter '" + name + "' already exists");
  entries_.push_back(Entry{name, group, Tensor(std::move(shape))});
  index_[name] = entries_.size() - 1;
  return entries_.back().tensor;
}

Tensor& ParameterStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw UsageError("unknown parameter '" + name + "'");
  return entries_[it->second].tensor;
}

const Tensor& ParameterStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw UsageError("unknown parameter '" + name + "'");
  return entries_[it->second].tensor;
}

Group ParameterStore::group_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw UsageError("unknown parameter '" + name + "'");
  return entries_[it->second].group;
}

std::size_t ParameterStore::total_values() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.size();
  return n;
}

void ParameterStore::zero_grads() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

void ParameterStore::save(const std::filesystem::path& path, const nlohmann::json& meta) const {
  nlohmann::json header;
  header["format"] = 1;
  if (!meta.is_null()) header["meta"] = meta;
  nlohmann::json entries = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& e : entries_) {
    entries.push_back({{"name", e.name},
                       {"group", group_name(e.group)},
                       {"shape", e.tensor.shape},
                       {"offset", offset},
                       {"count", e.tensor.size()}});
    offset += e.tensor.size() * sizeof(double);
  }
  header["entries"] = std::move(entries);
  header["payload_bytes"] = offset;
  const std::string hs = header.dump();

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open checkpoint for writing: " + path.string());
  f.write(kMagic, sizeof(kMagic));
  const std::uint64_t hlen = hs.size();
  f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& e : entries_) {
    f.write(reinterpret_cast<const char*>(e.tensor.values.data()),
            static_cast<std::streamsize>(e.tensor.size() * sizeof(double)));
  }
  if (!f) throw IoError("short write to checkpoint: " + path.string());
}

ParameterStore ParameterStore::load(const std::filesystem::path& path, nlohmann::json* meta_out) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path.string());
  char magic[8];
  if (!f.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError("not a checkpoint file (bad magic at byte 0): " + path.string());
  }
  std::uint64_t hlen = 0;
  if (!f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen))) {
    throw IoError("truncated checkpoint header length at byte 8: " + path.string());
  }
  std::string hs(hlen, '\0');
  if (!f.read(hs.data(), static_cast<std::streamsize>(hlen))) {
    throw IoError("truncated checkpoint header at byte 16: " + path.string());
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hs);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError("checkpoint header parse error at byte " +
                  std::to_string(16 + e.byte) + ": " + e.what());
  }
  ParameterStore ps;
  const std::size_t payload_start = 16 + hlen;
  for (const auto& je : header.at("entries")) {
    const std::string name = je.at("name").get<std::string>();
    const Group group = group_from_name(je.at("group").get<std::string>());
    const Shape shape = je.at("shape").get<Shape>();
    const std::size_t offset = je.at("offset").get<std::size_t>();
    const std::size_t count = je.at("count").get<std::size_t>();
    if (count != numel(shape)) {
      throw IoError("checkpoint entry '" + name + "' count " + std::to_string(count) +
                    " does not match shape " + shape_str(shape));
    }
    Tensor& t = ps.add(name, group, shape);
    f.seekg(static_cast<std::streamoff>(payload_start + offset));
    if (!f.read(reinterpret_cast<char*>(t.values.data()),
                static_cast<std::streamsize>(count * sizeof(double)))) {
      throw IoError("truncated checkpoint payload for '" + name + "' at byte " +
                    std::to_string(payload_start + offset) + ": " + path.string());
    }
    t.check_finite("checkpoint entry " + name);
  }
  if (meta_out) *meta_out = header.contains("meta") ? header["meta"] : nlohmann::json();
  return ps;
}

}  // namespace avvp
