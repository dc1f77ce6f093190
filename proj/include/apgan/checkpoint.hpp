#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "apgan/io.hpp"
#include "apgan/model.hpp"

namespace apgan {

class CheckpointError : public std::runtime_error {
 public:
  explicit CheckpointError(const std::string& msg) : std::runtime_error(msg) {}
};

// Versioned container: config echo, variant tag, dimensions and every
// parameter tensor by name with raw 64-bit little-endian values. Round trips
// bit-exact.
inline constexpr char kCheckpointMagic[8] = {'A', 'P', 'G', 'N', 'C', 'K', '0', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path, ModelBundle& bundle,
                            const std::string& config_echo = "") {
  std::string bytes;
  bytes.append(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_u32(bytes, kCheckpointVersion);
  detail::put_u32(bytes, static_cast<std::uint32_t>(bundle.variant));
  for (std::size_t dim : {bundle.dims.d_raw, bundle.dims.d_enc, bundle.dims.d_feat,
                          bundle.dims.d_hidden, bundle.dims.width1, bundle.dims.width2,
                          bundle.dims.n_classes, bundle.dims.segments}) {
    detail::put_u32(bytes, static_cast<std::uint32_t>(dim));
  }
  detail::put_u32(bytes, static_cast<std::uint32_t>(config_echo.size()));
  bytes += config_echo;

  const std::vector<Parameter*> params = bundle.parameters();
  detail::put_u32(bytes, static_cast<std::uint32_t>(params.size()));
  for (const Parameter* p : params) {
    detail::put_u32(bytes, static_cast<std::uint32_t>(p->name.size()));
    bytes += p->name;
    detail::put_u32(bytes, static_cast<std::uint32_t>(p->value.rank()));
    for (std::size_t d : p->value.shape()) detail::put_u32(bytes, static_cast<std::uint32_t>(d));
    for (std::size_t i = 0; i < p->value.size(); ++i) detail::put_f64(bytes, p->value[i]);
  }
  detail::write_file(path, bytes);
}

struct LoadedCheckpoint {
  ModelBundle bundle;
  std::string config_echo;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  const std::string bytes = detail::read_file(path);
  detail::ByteReader reader(bytes, path);

  if (reader.raw(sizeof(kCheckpointMagic)) != std::string(kCheckpointMagic, sizeof(kCheckpointMagic))) {
    throw CheckpointError(path + ": not a checkpoint file");
  }
  const std::uint32_t version = reader.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError(path + ": checkpoint version " + std::to_string(version) +
                          ", expected " + std::to_string(kCheckpointVersion));
  }
  const std::uint32_t variant_tag = reader.u32();
  if (variant_tag > static_cast<std::uint32_t>(Variant::full)) {
    throw CheckpointError(path + ": unknown variant tag " + std::to_string(variant_tag));
  }

  ModelDims dims;
  dims.d_raw = reader.u32();
  dims.d_enc = reader.u32();
  dims.d_feat = reader.u32();
  dims.d_hidden = reader.u32();
  dims.width1 = reader.u32();
  dims.width2 = reader.u32();
  dims.n_classes = reader.u32();
  dims.segments = reader.u32();

  LoadedCheckpoint out{ModelBundle(dims, static_cast<Variant>(variant_tag)), ""};
  out.config_echo = reader.raw(reader.u32());

  const std::uint32_t count = reader.u32();
  std::vector<Parameter*> params = out.bundle.parameters();
  if (count != params.size()) {
    throw CheckpointError(path + ": holds " + std::to_string(count) + " parameters, model needs " +
                          std::to_string(params.size()));
  }
  for (Parameter* p : params) {
    const std::string name = reader.raw(reader.u32());
    if (name != p->name) {
      throw CheckpointError(path + ": parameter '" + name + "' where '" + p->name + "' expected");
    }
    const std::uint32_t rank = reader.u32();
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = reader.u32();
    if (shape != p->value.shape()) {
      throw CheckpointError(path + ": parameter '" + name + "' has shape " +
                            Tensor::shape_string(shape) + ", expected " + p->value.shape_str());
    }
    for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] = reader.f64();
  }
  if (reader.remaining() != 0) {
    throw CheckpointError(path + ": trailing bytes after last parameter");
  }
  return out;
}

}  // namespace apgan
