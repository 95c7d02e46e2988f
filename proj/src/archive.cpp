#include "adanec/archive.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "adanec/image.hpp"

namespace adanec {

void Archive::set_meta(const std::string& key, const std::string& value) {
  if (key.find_first_of("=\n ") != std::string::npos || value.find('\n') != std::string::npos) {
    throw std::invalid_argument("archive meta key/value contains a separator: " + key);
  }
  for (auto& kv : meta_) {
    if (kv.first == key) {
      kv.second = value;
      return;
    }
  }
  meta_.emplace_back(key, value);
}

std::optional<std::string> Archive::meta(const std::string& key) const {
  for (const auto& kv : meta_)
    if (kv.first == key) return kv.second;
  return std::nullopt;
}

std::string Archive::require_meta(const std::string& key) const {
  if (auto v = meta(key)) return *v;
  throw IoError("archive: missing meta '" + key + "'");
}

void Archive::set_text(const std::string& label, std::string body) {
  for (auto& kv : texts_) {
    if (kv.first == label) {
      kv.second = std::move(body);
      return;
    }
  }
  texts_.emplace_back(label, std::move(body));
}

std::string Archive::require_text(const std::string& label) const {
  for (const auto& kv : texts_)
    if (kv.first == label) return kv.second;
  throw IoError("archive: missing text block '" + label + "'");
}

void Archive::add_array(Array a) { arrays_.push_back(std::move(a)); }

void Archive::add_params(const std::string& prefix, const nn::ParamSet& params) {
  for (const auto& p : params.items()) {
    Array a{prefix + p.name, p.dims, {}};
    a.values.reserve(p.values.size());
    for (double v : p.values) a.values.push_back(static_cast<float>(v));
    add_array(std::move(a));
  }
}

nn::ParamSet Archive::extract_params(const std::string& prefix, const std::vector<nn::ParamShape>& expected) const {
  nn::ParamSet out;
  for (const auto& shape : expected) {
    const Array* found = nullptr;
    for (const auto& a : arrays_) {
      if (a.name == prefix + shape.name) {
        found = &a;
        break;
      }
    }
    if (!found) throw IoError("archive: missing parameter '" + prefix + shape.name + "'");
    if (found->dims != shape.dims) throw IoError("archive: parameter '" + prefix + shape.name + "' has the wrong shape");
    nn::Param p{shape.name, shape.dims, {}};
    p.values.assign(found->values.begin(), found->values.end());
    out.add(std::move(p));
  }
  return out;
}

void Archive::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("archive: cannot open " + path.string() + " for writing");
  os << "ADANEC-ARCHIVE 1\n";
  os << "section " << section_ << '\n';
  for (const auto& [k, v] : meta_) os << "meta " << k << '=' << v << '\n';
  for (const auto& [label, body] : texts_) {
    os << "text " << label << ' ' << body.size() << '\n';
    os.write(body.data(), static_cast<std::streamsize>(body.size()));
    os << '\n';
  }
  for (const auto& a : arrays_) {
    os << "array " << a.name << ' ' << a.dims.size();
    for (int d : a.dims) os << ' ' << d;
    os << '\n';
    std::string bytes(a.values.size() * 4, '\0');
    for (std::size_t i = 0; i < a.values.size(); ++i) {
      const auto u = std::bit_cast<std::uint32_t>(a.values[i]);
      for (int b = 0; b < 4; ++b) bytes[i * 4 + b] = static_cast<char>((u >> (8 * b)) & 0xffu);
    }
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    os << '\n';
  }
  os << "end\n";
  if (!os) throw IoError("archive: write failed for " + path.string());
}

Archive Archive::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("archive: cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != "ADANEC-ARCHIVE 1") throw IoError("archive: bad magic in " + path.string());
  if (!std::getline(is, line) || line.rfind("section ", 0) != 0) throw IoError("archive: missing section line");
  Archive ar(line.substr(8));
  bool finished = false;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "meta") {
      const auto body = line.substr(5);
      const auto eq = body.find('=');
      if (eq == std::string::npos) throw IoError("archive: malformed meta line");
      ar.meta_.emplace_back(body.substr(0, eq), body.substr(eq + 1));
    } else if (tag == "text") {
      std::string label;
      std::size_t n = 0;
      if (!(ls >> label >> n)) throw IoError("archive: malformed text header");
      std::string body(n, '\0');
      is.read(body.data(), static_cast<std::streamsize>(n));
      if (is.get() != '\n') throw IoError("archive: truncated text block '" + label + "'");
      ar.texts_.emplace_back(label, std::move(body));
    } else if (tag == "array") {
      Array a;
      std::size_t rank = 0;
      if (!(ls >> a.name >> rank)) throw IoError("archive: malformed array header");
      std::size_t count = 1;
      for (std::size_t r = 0; r < rank; ++r) {
        int d = 0;
        if (!(ls >> d) || d < 0) throw IoError("archive: bad dimension for '" + a.name + "'");
        a.dims.push_back(d);
        count *= static_cast<std::size_t>(d);
      }
      std::string bytes(count * 4, '\0');
      is.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
      if (!is || is.get() != '\n') throw IoError("archive: truncated array '" + a.name + "'");
      a.values.resize(count);
      for (std::size_t i = 0; i < count; ++i) {
        std::uint32_t u = 0;
        for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + b])) << (8 * b);
        a.values[i] = std::bit_cast<float>(u);
      }
      ar.arrays_.push_back(std::move(a));
    } else if (tag == "end") {
      finished = true;
      break;
    } else {
      throw IoError("archive: unknown record '" + tag + "'");
    }
  }
  if (!finished) throw IoError("archive: missing end marker in " + path.string());
  return ar;
}

}  // namespace adanec
