#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "adanec/network.hpp"

namespace adanec {

// Portable checkpoint container:
//
//   ADANEC-ARCHIVE 1
//   section <name>
//   meta <key>=<value>            (0..n lines)
//   text <label> <bytes>\n<raw bytes>\n
//   array <name> <rank> <d0> ... \n<count x little-endian float32>\n
//   end
//
// Values are stored as float32; parameters that are already float32-valued
// round-trip bitwise.
class Archive {
 public:
  struct Array {
    std::string name;
    std::vector<int> dims;
    std::vector<float> values;
  };

  explicit Archive(std::string section = "expert") : section_(std::move(section)) {}

  const std::string& section() const { return section_; }

  void set_meta(const std::string& key, const std::string& value);
  std::optional<std::string> meta(const std::string& key) const;
  std::string require_meta(const std::string& key) const;
  const std::vector<std::pair<std::string, std::string>>& meta_items() const { return meta_; }

  void set_text(const std::string& label, std::string body);
  std::string require_text(const std::string& label) const;

  void add_array(Array a);
  const std::vector<Array>& arrays() const { return arrays_; }

  // Parameters are stored as "<prefix><name>".
  void add_params(const std::string& prefix, const nn::ParamSet& params);
  nn::ParamSet extract_params(const std::string& prefix, const std::vector<nn::ParamShape>& expected) const;

  void save(const std::filesystem::path& path) const;
  static Archive load(const std::filesystem::path& path);

 private:
  std::string section_;
  std::vector<std::pair<std::string, std::string>> meta_;
  std::vector<std::pair<std::string, std::string>> texts_;
  std::vector<Array> arrays_;
};

}  // namespace adanec
