#pragma once

#include <cstring>
#include <string>
#include <vector>

#include "emgcaps/dataio.hpp"
#include "emgcaps/models.hpp"

namespace emg::dataio {

// Versioned binary checkpoint: magic + version + spec hash, then named
// parameter blocks (name, shape, float32 values, little-endian).
struct CheckpointBlock {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

struct Checkpoint {
  std::uint64_t spec_hash = 0;
  std::vector<CheckpointBlock> blocks;

  const CheckpointBlock& find(const std::string& name) const {
    for (const auto& b : blocks)
      if (b.name == name) return b;
    throw InputError("checkpoint: missing block \"" + name + "\"");
  }
};

namespace ckpt_detail {

template <class T>
void put(std::string& buf, T v) {
  char raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  buf.append(raw, sizeof(T));
}

template <class T>
T get(const std::string& buf, std::size_t& off) {
  if (off + sizeof(T) > buf.size())
    throw InputError("checkpoint: truncated file");
  T v;
  std::memcpy(&v, buf.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

}  // namespace ckpt_detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::string buf;
  buf.append("EMGCKPT1", 8);
  ckpt_detail::put<std::uint32_t>(buf, kFormatVersion);
  ckpt_detail::put<std::uint64_t>(buf, ckpt.spec_hash);
  ckpt_detail::put<std::uint32_t>(buf, std::uint32_t(ckpt.blocks.size()));
  for (const auto& b : ckpt.blocks) {
    ckpt_detail::put<std::uint32_t>(buf, std::uint32_t(b.name.size()));
    buf.append(b.name);
    ckpt_detail::put<std::uint32_t>(buf, std::uint32_t(b.shape.size()));
    for (auto d : b.shape) ckpt_detail::put<std::uint64_t>(buf, d);
    for (float v : b.data) ckpt_detail::put(buf, v);
  }
  write_file(path, buf);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  const std::string buf = read_file(path);
  if (buf.size() < 8 || buf.compare(0, 8, "EMGCKPT1", 8) != 0)
    throw InputError("not a checkpoint file: " + path);
  std::size_t off = 8;
  const auto version = ckpt_detail::get<std::uint32_t>(buf, off);
  if (version != std::uint32_t(kFormatVersion))
    throw InputError("unknown checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.spec_hash = ckpt_detail::get<std::uint64_t>(buf, off);
  const auto n_blocks = ckpt_detail::get<std::uint32_t>(buf, off);
  ckpt.blocks.resize(n_blocks);
  for (auto& b : ckpt.blocks) {
    const auto name_len = ckpt_detail::get<std::uint32_t>(buf, off);
    if (off + name_len > buf.size()) throw InputError("checkpoint: truncated name");
    b.name = buf.substr(off, name_len);
    off += name_len;
    const auto ndim = ckpt_detail::get<std::uint32_t>(buf, off);
    b.shape.resize(ndim);
    for (auto& d : b.shape) d = ckpt_detail::get<std::uint64_t>(buf, off);
    b.data.resize(numel(b.shape));
    for (auto& v : b.data) v = ckpt_detail::get<float>(buf, off);
  }
  if (off != buf.size()) throw InputError("checkpoint: trailing bytes");
  return ckpt;
}

namespace ckpt_detail {

template <class T>
CheckpointBlock block_of(const std::string& name, const Shape& shape,
                         const std::vector<T>& values) {
  CheckpointBlock b;
  b.name = name;
  b.shape = shape;
  b.data.assign(values.begin(), values.end());
  return b;
}

template <class T>
void restore(std::vector<T>& dst, const CheckpointBlock& b) {
  if (dst.size() != b.data.size())
    throw InputError("checkpoint: block \"" + b.name + "\" has " +
                     std::to_string(b.data.size()) + " values, expected " +
                     std::to_string(dst.size()));
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = T(b.data[i]);
}

}  // namespace ckpt_detail

template <class T>
Checkpoint checkpoint_of(models::Cnn3d<T>& model) {
  Checkpoint ckpt;
  ckpt.spec_hash = model.spec_hash();
  for (std::size_t i = 0; i < model.parameters().size(); ++i)
    ckpt.blocks.push_back(ckpt_detail::block_of(model.parameter_names()[i],
                                                model.parameters()[i].shape(),
                                                model.parameters()[i].value()));
  return ckpt;
}

template <class T>
Checkpoint checkpoint_of(models::CapsNet<T>& model) {
  Checkpoint ckpt;
  ckpt.spec_hash = model.spec_hash();
  for (std::size_t i = 0; i < model.parameters().size(); ++i)
    ckpt.blocks.push_back(ckpt_detail::block_of(model.parameter_names()[i],
                                                model.parameters()[i].shape(),
                                                model.parameters()[i].value()));
  for (std::size_t i = 0; i < model.bn_states().size(); ++i) {
    auto& bn = model.bn_states()[i];
    const std::string tag = "bn" + std::to_string(i + 1);
    ckpt.blocks.push_back(ckpt_detail::block_of(
        tag + ".running_mean", {bn.running_mean.size()}, bn.running_mean));
    ckpt.blocks.push_back(ckpt_detail::block_of(
        tag + ".running_var", {bn.running_var.size()}, bn.running_var));
  }
  return ckpt;
}

template <class T>
void restore_model(models::Cnn3d<T>& model, const Checkpoint& ckpt) {
  if (ckpt.spec_hash != model.spec_hash())
    throw InputError("checkpoint: spec hash mismatch");
  for (std::size_t i = 0; i < model.parameters().size(); ++i)
    ckpt_detail::restore(model.parameters()[i].value(),
                         ckpt.find(model.parameter_names()[i]));
}

template <class T>
void restore_model(models::CapsNet<T>& model, const Checkpoint& ckpt) {
  if (ckpt.spec_hash != model.spec_hash())
    throw InputError("checkpoint: spec hash mismatch");
  for (std::size_t i = 0; i < model.parameters().size(); ++i)
    ckpt_detail::restore(model.parameters()[i].value(),
                         ckpt.find(model.parameter_names()[i]));
  for (std::size_t i = 0; i < model.bn_states().size(); ++i) {
    auto& bn = model.bn_states()[i];
    const std::string tag = "bn" + std::to_string(i + 1);
    ckpt_detail::restore(bn.running_mean, ckpt.find(tag + ".running_mean"));
    ckpt_detail::restore(bn.running_var, ckpt.find(tag + ".running_var"));
  }
}

}  // namespace emg::dataio
