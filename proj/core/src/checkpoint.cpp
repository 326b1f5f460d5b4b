#include "ink/checkpoint.hpp"

#include "ink/binary_io.hpp"
#include "ink/error.hpp"

namespace ink {

namespace {

constexpr char kMagic[4] = {'I', 'N', 'K', 'M'};
constexpr std::uint32_t kFormatVersion = 1;

void assign(ad::Parameter& p, const Matrix& value, const std::filesystem::path& path) {
  if (value.rows() != p.value.rows() || value.cols() != p.value.cols())
    throw FormatError(path.string() + ": tensor " + p.name + " has shape " + std::to_string(value.rows()) + "x" +
                      std::to_string(value.cols()) + ", expected " + std::to_string(p.value.rows()) + "x" +
                      std::to_string(p.value.cols()));
  p.value = value;
  p.zero_grad();
}

}  // namespace

void save_checkpoint(const Model& model, std::uint64_t vocab_hash, const std::filesystem::path& path,
                     CheckpointContent content) {
  std::vector<const ad::Parameter*> params;
  for (const ad::Parameter* p : model.parameters())
    if (content == CheckpointContent::all || p->name.starts_with("adapter.")) params.push_back(p);
  if (content == CheckpointContent::adapters_only && params.empty())
    throw StateError("save_checkpoint: model has no adapters to save");

  io::BinaryWriter w(path);
  w.bytes(kMagic, 4);
  w.u32(kFormatVersion);
  const ModelConfig& c = model.config();
  for (int v : {c.vocab_size, c.d_model, c.n_enc_layers, c.n_dec_layers, c.n_heads, c.d_ffn, c.adapter_inner,
                c.max_len})
    w.u32(static_cast<std::uint32_t>(v));
  w.u32(model.adapter_activation() == AdapterActivation::relu ? 0u : 1u);
  w.u64(vocab_hash);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const ad::Parameter* p : params) {
    w.string(p->name);
    w.u32(static_cast<std::uint32_t>(p->value.rows()));
    w.u32(static_cast<std::uint32_t>(p->value.cols()));
    for (Eigen::Index i = 0; i < p->value.size(); ++i) w.f32(static_cast<float>(p->value.data()[i]));
  }
  w.close();
}

CheckpointFile read_checkpoint(const std::filesystem::path& path) {
  io::BinaryReader r(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::string(magic, 4) != std::string(kMagic, 4)) throw FormatError(path.string() + ": not a checkpoint file");
  CheckpointFile file;
  file.header.format_version = r.u32();
  if (file.header.format_version != kFormatVersion)
    throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(file.header.format_version));
  ModelConfig& c = file.header.config;
  for (int* field : {&c.vocab_size, &c.d_model, &c.n_enc_layers, &c.n_dec_layers, &c.n_heads, &c.d_ffn,
                     &c.adapter_inner, &c.max_len})
    *field = static_cast<int>(r.u32());
  try {
    c.validate();
  } catch (const InputError& e) {
    throw FormatError(path.string() + ": invalid model config: " + e.what());
  }
  const std::uint32_t act = r.u32();
  if (act > 1) throw FormatError(path.string() + ": unknown adapter activation");
  file.header.activation = act == 0 ? AdapterActivation::relu : AdapterActivation::identity;
  file.header.vocab_hash = r.u64();
  const std::uint32_t count = r.u32();
  for (std::uint32_t t = 0; t < count; ++t) {
    std::string name = r.string();
    const std::uint32_t rows = r.u32(), cols = r.u32();
    if (static_cast<std::uint64_t>(rows) * cols * 4 > r.remaining())
      throw FormatError(path.string() + ": truncated tensor " + name);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = r.f32();
    if (!file.tensors.emplace(std::move(name), std::move(m)).second)
      throw FormatError(path.string() + ": duplicate tensor name");
  }
  if (r.remaining() != 0) throw FormatError(path.string() + ": trailing bytes after last tensor");
  return file;
}

Model load_model(const std::filesystem::path& path, std::uint64_t expected_vocab_hash) {
  CheckpointFile file = read_checkpoint(path);
  if (expected_vocab_hash != 0 && file.header.vocab_hash != expected_vocab_hash)
    throw FormatError(path.string() + ": checkpoint was trained with a different vocabulary");
  Model model(file.header.config, 0);
  model.set_adapter_activation(file.header.activation);
  bool adapters = false;
  for (const auto& [name, _] : file.tensors) adapters = adapters || name.starts_with("adapter.");
  if (adapters) model.attach_adapters(0);
  for (ad::Parameter* p : model.parameters()) {
    auto it = file.tensors.find(p->name);
    if (it == file.tensors.end()) throw FormatError(path.string() + ": missing tensor " + p->name);
    assign(*p, it->second, path);
  }
  if (file.tensors.size() != model.parameters().size())
    throw FormatError(path.string() + ": checkpoint holds tensors the model does not define");
  return model;
}

void load_adapters(Model& model, const std::filesystem::path& path, std::uint64_t expected_vocab_hash) {
  CheckpointFile file = read_checkpoint(path);
  if (!(file.header.config == model.config()))
    throw FormatError(path.string() + ": adapter file was written for a different model configuration");
  if (expected_vocab_hash != 0 && file.header.vocab_hash != expected_vocab_hash)
    throw FormatError(path.string() + ": adapter file was trained with a different vocabulary");
  if (!model.has_adapters()) model.attach_adapters(0);
  model.set_adapter_activation(file.header.activation);
  std::size_t used = 0;
  for (ad::Parameter* p : model.adapter_parameters()) {
    auto it = file.tensors.find(p->name);
    if (it == file.tensors.end()) throw FormatError(path.string() + ": missing tensor " + p->name);
    assign(*p, it->second, path);
    ++used;
  }
  if (used != file.tensors.size()) throw FormatError(path.string() + ": adapter file holds non-adapter tensors");
}

}  // namespace ink
