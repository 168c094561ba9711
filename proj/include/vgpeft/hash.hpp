#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

namespace vgp {

// FNV-1a, 64-bit. Used for frozen-weight fingerprints and delta checksums,
// where we need a stable, dependency-free digest rather than crypto strength.
class Fnv1a64 {
 public:
  void update(const void* bytes, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
      state_ ^= p[i];
      state_ *= 0x100000001b3ULL;
    }
  }

  void update(const std::string& s) { update(s.data(), s.size()); }

  void update(const std::vector<double>& v) {
    update(v.data(), v.size() * sizeof(double));
  }

  std::uint64_t digest() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

}  // namespace vgp
