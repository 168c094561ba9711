#include "vgpeft/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>

#include <json.hpp>

#include "vgpeft/error.hpp"
#include "vgpeft/hash.hpp"
#include "vgpeft/peft.hpp"
#include "vgpeft/serde.hpp"

namespace vgp {

namespace {

using nlohmann::json;

constexpr char kFullMagic[4] = {'V', 'G', 'P', 'C'};
constexpr char kDeltaMagic[4] = {'V', 'G', 'P', 'D'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

void put_string(std::ostream& out, const std::string& s) {
  put_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void put_doubles(std::ostream& out, const std::vector<double>& v) {
  std::vector<unsigned char> buf(v.size() * 8);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(v[i]);
    for (int k = 0; k < 8; ++k)
      buf[i * 8 + static_cast<std::size_t>(k)] =
          static_cast<unsigned char>(bits >> (8 * k));
  }
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size()));
}

void need(std::istream& in, const std::string& path) {
  if (!in) throw ParseError(path + ": truncated checkpoint");
}

std::uint32_t take_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  need(in, path);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t take_u64(std::istream& in, const std::string& path) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  need(in, path);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

std::string take_string(std::istream& in, const std::string& path) {
  const std::uint64_t n = take_u64(in, path);
  if (n > (1ULL << 32)) throw ParseError(path + ": implausible string length");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  need(in, path);
  return s;
}

std::vector<double> take_doubles(std::istream& in, std::size_t count,
                                 const std::string& path) {
  std::vector<unsigned char> buf(count * 8);
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size()));
  need(in, path);
  std::vector<double> v(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k)
      bits |= static_cast<std::uint64_t>(buf[i * 8 + static_cast<std::size_t>(k)])
              << (8 * k);
    v[i] = std::bit_cast<double>(bits);
  }
  return v;
}

void put_param(std::ostream& out, const Parameter& p) {
  put_string(out, p.path);
  out.put(p.kind == ParamKind::kBias ? '\1' : '\0');
  out.put(p.trainable ? '\1' : '\0');
  put_u64(out, p.tensor.rank());
  for (std::size_t d : p.tensor.shape()) put_u64(out, d);
  put_doubles(out, p.tensor.data());
}

Parameter take_param(std::istream& in, const std::string& path) {
  Parameter p;
  p.path = take_string(in, path);
  int kind = in.get();
  int trainable = in.get();
  need(in, path);
  if (kind != 0 && kind != 1)
    throw ParseError(path + ": bad parameter kind for '" + p.path + "'");
  p.kind = kind == 1 ? ParamKind::kBias : ParamKind::kWeight;
  p.trainable = trainable != 0;

  const std::uint64_t rank = take_u64(in, path);
  if (rank > 8) throw ParseError(path + ": implausible tensor rank");
  std::vector<std::size_t> shape;
  std::size_t numel = 1;
  for (std::uint64_t i = 0; i < rank; ++i) {
    shape.push_back(take_u64(in, path));
    numel *= shape.back();
  }
  if (numel > (1ULL << 28))
    throw ParseError(path + ": implausible tensor size");
  p.tensor = Tensor(shape, take_doubles(in, numel, path), p.trainable);
  return p;
}

std::string hash_hex(std::uint64_t h) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

std::uint64_t hash_from_hex(const std::string& s, const std::string& path) {
  if (s.size() != 16) throw ParseError(path + ": malformed digest");
  char* end = nullptr;
  const std::uint64_t v = std::strtoull(s.c_str(), &end, 16);
  if (end != s.c_str() + s.size())
    throw ParseError(path + ": malformed digest");
  return v;
}

json read_header(std::istream& in, const char expect[4],
                 const std::string& path) {
  char magic[4];
  in.read(magic, 4);
  need(in, path);
  for (int i = 0; i < 4; ++i)
    if (magic[i] != expect[i])
      throw ParseError(path + ": not a " + std::string(expect, 4) + " file");
  const std::uint32_t version = take_u32(in, path);
  if (version != kVersion)
    throw ParseError(path + ": unsupported version " +
                     std::to_string(version));
  const std::string meta = take_string(in, path);
  try {
    return json::parse(meta);
  } catch (const json::exception& e) {
    throw ParseError(path + ": bad metadata: " + e.what());
  }
}

void write_header(std::ostream& out, const char magic[4], const json& meta) {
  out.write(magic, 4);
  put_u32(out, kVersion);
  put_string(out, meta.dump());
}

}  // namespace

void save_checkpoint(const GroundingModel& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path + "'");

  json meta{{"model", to_json(m.config())}};
  meta["peft"] = m.peft() ? to_json(*m.peft()) : json(nullptr);
  write_header(out, kFullMagic, meta);

  put_u64(out, m.params().size());
  for (const auto& p : m.params()) put_param(out, *p);
  if (!out) throw InputError("write to '" + path + "' failed");
}

GroundingModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path + "'");

  const json meta = read_header(in, kFullMagic, path);
  ModelConfig cfg;
  std::optional<PeftSpec> peft;
  try {
    cfg = model_config_from_json(meta.at("model"));
    if (meta.contains("peft") && !meta.at("peft").is_null())
      peft = peft_spec_from_json(meta.at("peft"));
  } catch (const json::exception& e) {
    throw ParseError(path + ": bad metadata: " + e.what());
  }

  GroundingModel m = GroundingModel::assemble(cfg, peft);
  const std::uint64_t n = take_u64(in, path);
  for (std::uint64_t i = 0; i < n; ++i) m.add_parameter(take_param(in, path));
  m.validate_complete();
  return m;
}

void save_delta(const GroundingModel& m, const std::string& path) {
  if (!m.peft())
    throw StateError("delta: model carries no adaptation to extract");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path + "'");

  json meta{{"model", to_json(m.config())},
            {"peft", to_json(*m.peft())},
            {"base_hash", hash_hex(m.frozen_hash())}};
  write_header(out, kDeltaMagic, meta);

  const auto trainable = m.trainable_params();
  put_u64(out, trainable.size());
  for (const auto& p : trainable) put_param(out, *p);
  if (!out) throw InputError("write to '" + path + "' failed");
}

GroundingModel apply_delta(const GroundingModel& base,
                           const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path + "'");

  const json meta = read_header(in, kDeltaMagic, path);
  ModelConfig cfg;
  PeftSpec spec;
  std::uint64_t base_hash = 0;
  try {
    cfg = model_config_from_json(meta.at("model"));
    spec = peft_spec_from_json(meta.at("peft"));
    base_hash = hash_from_hex(meta.at("base_hash").get<std::string>(), path);
  } catch (const json::exception& e) {
    throw ParseError(path + ": bad metadata: " + e.what());
  }

  if (!(cfg == base.config()))
    throw ValidationError(path + ": delta was built for a different model "
                          "configuration");
  if (base.peft())
    throw StateError("apply: base model already carries an adaptation");

  GroundingModel m = base.clone();
  inject(m, spec, /*seed=*/0);
  if (m.frozen_hash() != base_hash)
    throw ChecksumError(path + ": frozen-parameter digest mismatch; this "
                        "delta belongs to a different base");

  const std::uint64_t n = take_u64(in, path);
  const auto trainable = m.trainable_params();
  if (n != trainable.size())
    throw ValidationError(path + ": delta holds " + std::to_string(n) +
                          " tensors, adaptation expects " +
                          std::to_string(trainable.size()));
  for (std::uint64_t i = 0; i < n; ++i) {
    Parameter stored = take_param(in, path);
    if (!m.has_param(stored.path))
      throw ValidationError(path + ": unexpected tensor '" + stored.path +
                            "'");
    Parameter& dst = m.param(stored.path);
    if (!dst.trainable)
      throw ValidationError(path + ": tensor '" + stored.path +
                            "' is frozen in the adapted model");
    if (dst.tensor.shape() != stored.tensor.shape())
      throw ValidationError(path + ": tensor '" + stored.path +
                            "' has shape " + stored.tensor.shape_str() +
                            ", expected " + dst.tensor.shape_str());
    dst.tensor.data() = stored.tensor.data();
  }
  return m;
}

}  // namespace vgp
