// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "gwm/core/params.hpp"

namespace gwm {

// Versioned binary checkpoint container (little-endian):
//
//   magic "GWMC" | u32 version | u64 config fingerprint
//   u32 n_meta   | n_meta x (string key, f64 value)
//   u32 n_groups | per group:
//       string name | i64 adam step | u32 n_params | per param:
//           string key | u8 ndim | i32 dims[ndim] | f32 values[numel]
//           u8 has_opt | (f32 m[numel], f32 v[numel]) when has_opt
//
// Strings are u32 length + raw bytes. Float payloads are raw IEEE-754 LE.
namespace ckpt {

constexpr uint32_t kVersion = 1;

inline void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
inline void write_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
inline void write_i64(std::ostream& os, int64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
inline void write_f64(std::ostream& os, double v) { os.write(reinterpret_cast<const char*>(&v), 8); }
inline void write_str(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline void write_f32s(std::ostream& os, const float* p, size_t n) {
  os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * 4));
}

inline uint32_t read_u32(std::istream& is) {
  uint32_t v;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
inline uint64_t read_u64(std::istream& is) {
  uint64_t v;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}
inline int64_t read_i64(std::istream& is) {
  int64_t v;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}
inline double read_f64(std::istream& is) {
  double v;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}
inline std::string read_str(std::istream& is) {
  uint32_t n = read_u32(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  return s;
}

}  // namespace ckpt

struct Checkpoint {
  uint64_t fingerprint = 0;
  std::map<std::string, double> meta;
  // group name -> store
  std::map<std::string, ParameterStore<float>> groups;

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    check(os.good(), "checkpoint: cannot open for write: " + path);
    os.write("GWMC", 4);
    ckpt::write_u32(os, ckpt::kVersion);
    ckpt::write_u64(os, fingerprint);
    ckpt::write_u32(os, static_cast<uint32_t>(meta.size()));
    for (auto& [k, v] : meta) {
      ckpt::write_str(os, k);
      ckpt::write_f64(os, v);
    }
    ckpt::write_u32(os, static_cast<uint32_t>(groups.size()));
    for (auto& [name, store] : groups) {
      ckpt::write_str(os, name);
      ckpt::write_i64(os, store.step_counter());
      ckpt::write_u32(os, static_cast<uint32_t>(store.all().size()));
      for (auto& [key, t] : store.all()) {
        ckpt::write_str(os, key);
        os.put(static_cast<char>(t.ndim()));
        for (int d : t.shape()) {
          int32_t di = d;
          os.write(reinterpret_cast<const char*>(&di), 4);
        }
        ckpt::write_f32s(os, t.data().data(), t.data().size());
        auto it = store.opt_state().find(key);
        bool has_opt = it != store.opt_state().end() && !it->second.m.empty();
        os.put(has_opt ? 1 : 0);
        if (has_opt) {
          ckpt::write_f32s(os, it->second.m.data(), it->second.m.size());
          ckpt::write_f32s(os, it->second.v.data(), it->second.v.size());
        }
      }
    }
    check(os.good(), "checkpoint: write failed: " + path);
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    check(is.good(), "checkpoint: cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    check(std::memcmp(magic, "GWMC", 4) == 0, "checkpoint: bad magic in " + path);
    uint32_t version = ckpt::read_u32(is);
    check(version == ckpt::kVersion, "checkpoint: unsupported version");
    Checkpoint out;
    out.fingerprint = ckpt::read_u64(is);
    uint32_t n_meta = ckpt::read_u32(is);
    for (uint32_t i = 0; i < n_meta; ++i) {
      std::string k = ckpt::read_str(is);
      out.meta[k] = ckpt::read_f64(is);
    }
    uint32_t n_groups = ckpt::read_u32(is);
    for (uint32_t gi = 0; gi < n_groups; ++gi) {
      std::string name = ckpt::read_str(is);
      ParameterStore<float>& store = out.groups[name];
      store.step_counter() = ckpt::read_i64(is);
      uint32_t n_params = ckpt::read_u32(is);
      Rng dummy(0);
      for (uint32_t pi = 0; pi < n_params; ++pi) {
        std::string key = ckpt::read_str(is);
        int ndim = is.get();
        std::vector<int> shape(static_cast<size_t>(ndim));
        for (int d = 0; d < ndim; ++d) {
          int32_t di;
          is.read(reinterpret_cast<char*>(&di), 4);
          shape[static_cast<size_t>(d)] = di;
        }
        Tensor<float> t = store.param(key, shape, Init::zeros, dummy);
        is.read(reinterpret_cast<char*>(t.data().data()),
                static_cast<std::streamsize>(t.data().size() * 4));
        bool has_opt = is.get() != 0;
        if (has_opt) {
          auto& st = store.opt_state()[key];
          st.m.resize(t.data().size());
          st.v.resize(t.data().size());
          is.read(reinterpret_cast<char*>(st.m.data()), static_cast<std::streamsize>(st.m.size() * 4));
          is.read(reinterpret_cast<char*>(st.v.data()), static_cast<std::streamsize>(st.v.size() * 4));
        }
      }
    }
    check(is.good(), "checkpoint: truncated file: " + path);
    return out;
  }

  // Installs loaded values into live stores (keys and shapes must match).
  void restore_group(const std::string& name, ParameterStore<float>& dst) const {
    auto it = groups.find(name);
    check(it != groups.end(), "checkpoint: missing group " + name);
    const ParameterStore<float>& src = it->second;
    check(src.all().size() == dst.all().size(), "checkpoint: param count mismatch in group " + name);
    for (auto& [key, t] : dst.all()) {
      check(src.has(key), "checkpoint: missing key " + key);
      Tensor<float> s = src.get(key);
      check(s.shape() == t.shape(), "checkpoint: shape mismatch at " + key);
      t.data() = s.data();
      auto oit = src.opt_state().find(key);
      if (oit != src.opt_state().end() && !oit->second.m.empty()) dst.opt_state()[key] = oit->second;
    }
    dst.step_counter() = src.step_counter();
  }
};

}  // namespace gwm
