#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cola/core/autograd.hpp"
#include "cola/core/errors.hpp"

namespace cola {

// Single-file container: magic, format version, a JSON header (metadata plus
// tensor index) and the raw tensor bytes. Tensors keep their exact bits.
//
//   "COLAARCH" | u32 version | u64 header bytes | header JSON | data
class Archive {
 public:
  static constexpr std::uint32_t kVersion = 1;

  struct Tensor {
    std::string dtype;  // "f32" or "f64"
    std::int64_t rows = 0, cols = 0;
    std::vector<unsigned char> bytes;
  };

  nlohmann::json meta = nlohmann::json::object();

  template <class T>
  void put(const std::string& name, const Mat<T>& m) {
    Tensor t;
    t.dtype = dtype_of<T>();
    t.rows = m.rows();
    t.cols = m.cols();
    t.bytes.resize(static_cast<std::size_t>(m.size()) * sizeof(T));
    if (!t.bytes.empty()) std::memcpy(t.bytes.data(), m.data(), t.bytes.size());
    tensors_[name] = std::move(t);
  }

  template <class T>
  Mat<T> get(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw IoError("archive has no tensor '" + name + "'");
    const Tensor& t = it->second;
    Mat<T> m(t.rows, t.cols);
    if (t.dtype == dtype_of<T>()) {
      if (!t.bytes.empty()) std::memcpy(m.data(), t.bytes.data(), t.bytes.size());
    } else if (t.dtype == "f32") {
      const auto* p = reinterpret_cast<const float*>(t.bytes.data());
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(p[i]);
    } else if (t.dtype == "f64") {
      const auto* p = reinterpret_cast<const double*>(t.bytes.data());
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(p[i]);
    } else {
      throw IoError("tensor '" + name + "' has unknown dtype " + t.dtype);
    }
    return m;
  }

  bool has(const std::string& name) const { return tensors_.count(name) != 0; }

  std::vector<std::string> names(const std::string& prefix = "") const {
    std::vector<std::string> out;
    for (const auto& [n, _] : tensors_)
      if (n.rfind(prefix, 0) == 0) out.push_back(n);
    return out;
  }

  void write(const std::filesystem::path& path) const {
    nlohmann::json header;
    header["version"] = kVersion;
    header["meta"] = meta;
    nlohmann::json index = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : tensors_) {
      index.push_back({{"name", name}, {"dtype", t.dtype}, {"rows", t.rows}, {"cols", t.cols}, {"offset", offset},
                       {"bytes", t.bytes.size()}});
      offset += t.bytes.size();
    }
    header["tensors"] = index;
    const std::string text = header.dump();
    const auto tmp = path.string() + ".tmp";
    {
      std::ofstream os(tmp, std::ios::binary);
      if (!os) throw IoError("cannot write '" + tmp + "'");
      os.write("COLAARCH", 8);
      const std::uint32_t v = kVersion;
      os.write(reinterpret_cast<const char*>(&v), sizeof v);
      const std::uint64_t n = text.size();
      os.write(reinterpret_cast<const char*>(&n), sizeof n);
      os.write(text.data(), static_cast<std::streamsize>(text.size()));
      for (const auto& [_, t] : tensors_)
        os.write(reinterpret_cast<const char*>(t.bytes.data()), static_cast<std::streamsize>(t.bytes.size()));
      if (!os) throw IoError("short write to '" + tmp + "'");
    }
    std::filesystem::rename(tmp, path);
  }

  static Archive read(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read '" + path.string() + "'");
    char magic[8];
    is.read(magic, 8);
    if (!is || std::string(magic, 8) != "COLAARCH") throw IoError("'" + path.string() + "' is not a cola archive");
    std::uint32_t v = 0;
    std::uint64_t n = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    is.read(reinterpret_cast<char*>(&n), sizeof n);
    if (!is || v != kVersion)
      throw IoError("'" + path.string() + "': unsupported archive version " + std::to_string(v));
    std::string text(n, '\0');
    is.read(text.data(), static_cast<std::streamsize>(n));
    if (!is) throw IoError("'" + path.string() + "': truncated header");
    Archive a;
    nlohmann::json header;
    try {
      header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw IoError("'" + path.string() + "': bad header: " + e.what());
    }
    if (header.at("version").get<std::uint32_t>() != kVersion) throw IoError("archive version mismatch");
    a.meta = header.at("meta");
    for (const auto& e : header.at("tensors")) {
      Tensor t;
      t.dtype = e.at("dtype").get<std::string>();
      t.rows = e.at("rows").get<std::int64_t>();
      t.cols = e.at("cols").get<std::int64_t>();
      t.bytes.resize(e.at("bytes").get<std::size_t>());
      is.read(reinterpret_cast<char*>(t.bytes.data()), static_cast<std::streamsize>(t.bytes.size()));
      if (!is) throw IoError("'" + path.string() + "': truncated tensor data");
      a.tensors_[e.at("name").get<std::string>()] = std::move(t);
    }
    return a;
  }

  // FNV-1a over the serialized content, used to identify checkpoints.
  std::string hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto feed = [&](const void* p, std::size_t n) {
      const auto* b = static_cast<const unsigned char*>(p);
      for (std::size_t i = 0; i < n; ++i) h = (h ^ b[i]) * 1099511628211ULL;
    };
    const std::string m = meta.dump();
    feed(m.data(), m.size());
    for (const auto& [name, t] : tensors_) {
      feed(name.data(), name.size());
      feed(t.bytes.data(), t.bytes.size());
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }

 private:
  template <class T>
  static std::string dtype_of() {
    if constexpr (std::is_same_v<T, float>)
      return "f32";
    else
      return "f64";
  }

  std::map<std::string, Tensor> tensors_;
};

}  // namespace cola
