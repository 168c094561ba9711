#pragma once

#include <string>
#include <vector>

#include "vgpeft/error.hpp"

namespace vgp {

// The three tunable regions of the grounding model.
enum class ModuleTag { kTextEncoder, kImageEncoder, kDecoder };

inline const char* to_string(ModuleTag t) {
  switch (t) {
    case ModuleTag::kTextEncoder: return "text_encoder";
    case ModuleTag::kImageEncoder: return "image_encoder";
    case ModuleTag::kDecoder: return "decoder";
  }
  return "?";
}

inline ModuleTag module_tag_from(const std::string& s) {
  if (s == "text_encoder" || s == "text") return ModuleTag::kTextEncoder;
  if (s == "image_encoder" || s == "image") return ModuleTag::kImageEncoder;
  if (s == "decoder") return ModuleTag::kDecoder;
  throw ConfigError("unknown module tag '" + s +
                    "' (expected text, image, or decoder)");
}

inline std::vector<ModuleTag> all_module_tags() {
  return {ModuleTag::kTextEncoder, ModuleTag::kImageEncoder,
          ModuleTag::kDecoder};
}

// Box in normalized center form, every coordinate in (0, 1).
struct NormBox {
  double cx = 0.0, cy = 0.0, w = 0.0, h = 0.0;
};

}  // namespace vgp
