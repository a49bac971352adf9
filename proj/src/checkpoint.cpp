#include "transukan/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>
#include <vector>

#include "transukan/error.hpp"

namespace tukan {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  template <typename T>
  void put(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    bytes_.append(buf, sizeof(T));
  }
  void put_u32(std::size_t v) {
    if (v > std::numeric_limits<std::uint32_t>::max()) throw ContractError("checkpoint: value exceeds u32");
    put(static_cast<std::uint32_t>(v));
  }
  void raw(const void* p, std::size_t n) { bytes_.append(static_cast<const char*>(p), n); }
  const std::string& bytes() const { return bytes_; }

 private:
  std::string bytes_;
};

class Reader {
 public:
  Reader(const std::string& bytes, std::string name) : bytes_(bytes), name_(std::move(name)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void raw(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) {
    if (remaining() < n) throw CorruptionError(name_ + ": checkpoint truncated at byte " + std::to_string(pos_));
  }
  const std::string& bytes_;
  std::string name_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const TransUKanModel& model, const std::filesystem::path& path) {
  const ModelConfig& c = model.config;
  Writer w;
  w.raw(kCheckpointMagic, sizeof kCheckpointMagic);
  w.put(kCheckpointVersion);
  for (std::size_t v : {c.in_channels, c.n_classes, c.image_height, c.image_width, c.d_model, c.depth, c.n_heads,
                        c.grid.grid_size, c.grid.order}) {
    w.put_u32(v);
  }
  w.put(c.grid.range_lo);
  w.put(c.grid.range_hi);
  w.put(static_cast<std::uint8_t>(c.block_order));
  const std::vector<Tensor> params = model.parameters();
  w.put_u32(params.size());
  for (const Tensor& t : params) {
    w.put_u32(t.rank());
    for (std::size_t d : t.shape()) w.put(static_cast<std::uint64_t>(d));
    w.raw(t.data().data(), t.numel() * sizeof(double));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path.string() + ": cannot open for writing");
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw IoError(path.string() + ": write failed");
}

TransUKanModel load_checkpoint(const std::filesystem::path& path) {
  const std::string name = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(name + ": cannot open for reading");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(bytes, name);
  char magic[4];
  if (bytes.size() < sizeof magic) throw FormatError(name + ": not a checkpoint (file too short)");
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) throw FormatError(name + ": bad checkpoint magic");
  const auto version = r.get<std::uint8_t>();
  if (version != kCheckpointVersion) {
    throw FormatError(name + ": unsupported checkpoint version " + std::to_string(version));
  }
  ModelConfig c;
  c.in_channels = r.get<std::uint32_t>();
  c.n_classes = r.get<std::uint32_t>();
  c.image_height = r.get<std::uint32_t>();
  c.image_width = r.get<std::uint32_t>();
  c.d_model = r.get<std::uint32_t>();
  c.depth = r.get<std::uint32_t>();
  c.n_heads = r.get<std::uint32_t>();
  c.grid.grid_size = r.get<std::uint32_t>();
  c.grid.order = r.get<std::uint32_t>();
  c.grid.range_lo = r.get<double>();
  c.grid.range_hi = r.get<double>();
  const auto order = r.get<std::uint8_t>();
  if (order > static_cast<std::uint8_t>(BlockOrder::kPreNorm)) throw CorruptionError(name + ": bad block order");
  c.block_order = static_cast<BlockOrder>(order);
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw CorruptionError(name + ": stored config is invalid: " + e.what());
  }
  // Shapes come from the config; the stored shapes must agree.
  TransUKanModel model = TransUKanModel::create(c, 0);
  std::vector<Tensor> params = model.parameters();
  const auto count = r.get<std::uint32_t>();
  if (count != params.size()) {
    throw CorruptionError(name + ": " + std::to_string(count) + " tensors stored, config implies " +
                          std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto rank = r.get<std::uint32_t>();
    Shape shape;
    for (std::uint32_t k = 0; k < rank && k < 8; ++k) shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
    if (shape != params[i].shape()) {
      throw CorruptionError(name + ": tensor " + std::to_string(i) + " has shape " + shape_str(shape) + ", expected " +
                            shape_str(params[i].shape()));
    }
    r.raw(params[i].data().data(), params[i].numel() * sizeof(double));
  }
  if (r.remaining() != 0) throw CorruptionError(name + ": trailing bytes after last tensor");
  return model;
}

TransUKanModel load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  TransUKanModel model = load_checkpoint(path);
  if (!(model.config == expected)) {
    throw ConfigError(path.string() + ": checkpoint config (d_model " + std::to_string(model.config.d_model) +
                      ", classes " + std::to_string(model.config.n_classes) + ", depth " +
                      std::to_string(model.config.depth) + ") does not match the requested model");
  }
  return model;
}

}  // namespace tukan
