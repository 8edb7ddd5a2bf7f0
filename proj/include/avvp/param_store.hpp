#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <string>
#include <unordered_map>

#include "json.hpp"

#include "avvp/tensor.hpp"

namespace avvp {

// Ownership group of a trainable tensor. audio/visual tensors are reachable
// only from their modality's input path before fusion; everything downstream
// of cross-attention is shared.
enum class Group : std::uint8_t { audio, visual, shared };

const char* group_name(Group g);
Group group_from_name(const std::string& s);

// Named trainable tensors with immutable ownership tags, iterated in creation
// order. Entry storage is reference-stable (tapes bind Tensor*).
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Group group;
    Tensor tensor;
  };

  Tensor& add(const std::string& name, Group group, Shape shape);
  bool has(const std::string& name) const { return index_.count(name) != 0; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  Group group_of(const std::string& name) const;

  std::deque<Entry>& entries() { return entries_; }
  const std::deque<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t total_values() const;

  void zero_grads();

  // Checkpoint file: magic, little-endian u64 header length, JSON header
  // indexing (name, group, shape, byte offset, count) per entry plus caller
  // metadata, then the raw little-endian f64 payload.
  void save(const std::filesystem::path& path, const nlohmann::json& meta = {}) const;
  static ParameterStore load(const std::filesystem::path& path, nlohmann::json* meta_out = nullptr);

 private:
  std::deque<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace avvp
