#include "mvp/ingest.hpp"

#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "mvp/error.hpp"

namespace mvp {

namespace {

constexpr std::uint16_t kVersion = 1;

class ByteWriter {
 public:
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void f32(float v) { put(std::bit_cast<std::uint32_t>(v), 4); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }

  std::vector<std::uint8_t> take() { return std::move(buf_); }
  const std::vector<std::uint8_t>& view() const { return buf_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }

  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> data, const char* format)
      : data_(data), format_(format) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

  void magic(std::string_view expected) {
    need(expected.size(), "magic");
    if (std::memcmp(data_.data(), expected.data(), expected.size()) != 0) {
      throw FormatError(std::string(format_) + ": bad magic, expected \"" +
                            std::string(expected) + "\"",
                        0);
    }
    pos_ += expected.size();
  }

  void version() {
    const std::size_t at = pos_;
    const std::uint16_t v = u16("version");
    if (v != kVersion) {
      throw FormatError(std::string(format_) + ": unsupported version " +
                            std::to_string(v),
                        at);
    }
  }

  std::uint8_t u8(const char* what) { return static_cast<std::uint8_t>(get(1, what)); }
  std::uint16_t u16(const char* what) { return static_cast<std::uint16_t>(get(2, what)); }
  std::uint32_t u32(const char* what) { return static_cast<std::uint32_t>(get(4, what)); }
  float f32(const char* what) {
    return std::bit_cast<float>(static_cast<std::uint32_t>(get(4, what)));
  }
  double f64(const char* what) { return std::bit_cast<double>(get(8, what)); }

  std::string string(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      throw FormatError(std::string(format_) + ": truncated while reading " +
                            what + " (need " + std::to_string(n) +
                            " bytes, " + std::to_string(remaining()) + " left)",
                        pos_);
    }
  }

  // Checks that `n` f32 values are available. On truncation the offset is
  // that of the first value that cannot be read completely.
  void floats(std::size_t n, const char* what) const {
    if (remaining() / 4 < n) {
      throw FormatError(std::string(format_) + ": truncated while reading " +
                            what,
                        pos_ + (remaining() / 4) * 4);
    }
  }

  void expect_end() const {
    if (remaining() != 0) {
      throw FormatError(std::string(format_) + ": " +
                            std::to_string(remaining()) +
                            " unexpected trailing bytes",
                        pos_);
    }
  }

 private:
  std::uint64_t get(int n, const char* what) {
    need(static_cast<std::size_t>(n), what);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t{data_[pos_ + i]} << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::span<const std::uint8_t> data_;
  const char* format_;
  std::size_t pos_ = 0;
};

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > UINT32_MAX) throw DataError(std::string(what) + " exceeds u32 range");
  return static_cast<std::uint32_t>(v);
}

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

// ---------------------------------------------------------------------------

void FeatureBank::validate() const {
  for (const auto& [id, video] : videos) {
    if (video.frames.rows() != frames || video.frames.cols() != channels) {
      throw DataError("video " + std::to_string(id) + " has " +
                      std::to_string(video.frames.rows()) + "x" +
                      std::to_string(video.frames.cols()) +
                      " frames, bank declares " + std::to_string(frames) +
                      "x" + std::to_string(channels));
    }
    if (!video.frames.all_finite()) {
      throw DataError("video " + std::to_string(id) + " has non-finite values");
    }
    if (!class_names.contains(video.label)) {
      throw DataError("video " + std::to_string(id) + " references class " +
                      std::to_string(video.label) + " which has no name");
    }
  }
}

std::vector<std::uint32_t> FeatureBank::class_ids() const {
  std::set<std::uint32_t> ids;
  for (const auto& [id, video] : videos) ids.insert(video.label);
  return {ids.begin(), ids.end()};
}

std::vector<std::uint32_t> FeatureBank::videos_of(std::uint32_t label) const {
  std::vector<std::uint32_t> out;
  for (const auto& [id, video] : videos)
    if (video.label == label) out.push_back(id);
  return out;
}

const Tensor& TextTable::at(std::uint32_t class_id) const {
  auto it = embeddings.find(class_id);
  if (it == embeddings.end()) {
    throw DataError("no text embedding for class " + std::to_string(class_id));
  }
  return it->second;
}

// ---------------------------------------------------------------------------
// MVPF

std::vector<std::uint8_t> encode_bank(const FeatureBank& bank) {
  bank.validate();
  ByteWriter w;
  w.bytes("MVPF");
  w.u16(kVersion);
  w.u16(0);
  w.u32(checked_u32(bank.videos.size(), "video count"));
  w.u32(checked_u32(bank.frames, "T"));
  w.u32(checked_u32(bank.channels, "C"));
  for (const auto& [id, video] : bank.videos) {
    w.u32(id);
    w.u32(video.label);
    for (Real v : video.frames.data()) w.f32(static_cast<float>(v));
  }
  w.u32(checked_u32(bank.class_names.size(), "class count"));
  for (const auto& [id, name] : bank.class_names) {
    if (name.size() > UINT16_MAX) {
      throw DataError("class name of class " + std::to_string(id) + " too long");
    }
    w.u32(id);
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name);
  }
  return w.take();
}

FeatureBank decode_bank(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "MVPF");
  r.magic("MVPF");
  r.version();
  r.u16("flags");
  const std::uint32_t count = r.u32("video count");
  FeatureBank bank;
  bank.frames = r.u32("T");
  bank.channels = r.u32("C");
  const std::size_t per_video = bank.frames * bank.channels;
  for (std::uint32_t v = 0; v < count; ++v) {
    const std::size_t at = r.offset();
    const std::uint32_t id = r.u32("video id");
    Video video;
    video.label = r.u32("video label");
    r.floats(per_video, "frame data");
    std::vector<Real> data(per_video);
    for (std::size_t k = 0; k < per_video; ++k) {
      const float f = r.f32("frame data");
      if (!std::isfinite(f)) {
        throw DataError("MVPF: non-finite value in video " + std::to_string(id) +
                        " (record at byte offset " + std::to_string(at) + ")");
      }
      data[k] = static_cast<Real>(f);
    }
    video.frames = Tensor({bank.frames, bank.channels}, std::move(data));
    if (!bank.videos.emplace(id, std::move(video)).second) {
      throw FormatError("MVPF: duplicate video id " + std::to_string(id), at);
    }
  }
  const std::uint32_t names = r.u32("class name count");
  for (std::uint32_t k = 0; k < names; ++k) {
    const std::size_t at = r.offset();
    const std::uint32_t id = r.u32("class id");
    const std::uint16_t len = r.u16("class name length");
    if (!bank.class_names.emplace(id, r.string(len, "class name")).second) {
      throw FormatError("MVPF: duplicate class id " + std::to_string(id), at);
    }
  }
  r.expect_end();
  for (const auto& [id, video] : bank.videos) {
    if (!bank.class_names.contains(video.label)) {
      throw DataError("MVPF: video " + std::to_string(id) +
                      " references unknown class id " +
                      std::to_string(video.label));
    }
  }
  return bank;
}

void write_bank(const FeatureBank& bank, const std::filesystem::path& path) {
  write_file(path, encode_bank(bank));
}

FeatureBank read_bank(const std::filesystem::path& path) {
  return decode_bank(read_file(path));
}

// ---------------------------------------------------------------------------
// MVPT

std::vector<std::uint8_t> encode_text_table(const TextTable& table) {
  ByteWriter w;
  w.bytes("MVPT");
  w.u16(kVersion);
  w.u32(checked_u32(table.embeddings.size(), "entry count"));
  w.u32(checked_u32(table.channels, "C"));
  for (const auto& [id, emb] : table.embeddings) {
    if (emb.size() != table.channels || !emb.all_finite()) {
      throw DataError("text embedding of class " + std::to_string(id) +
                      " is not a finite 1x" + std::to_string(table.channels) +
                      " row");
    }
    w.u32(id);
    for (Real v : emb.data()) w.f32(static_cast<float>(v));
  }
  return w.take();
}

TextTable decode_text_table(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "MVPT");
  r.magic("MVPT");
  r.version();
  const std::uint32_t count = r.u32("entry count");
  TextTable table;
  table.channels = r.u32("C");
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::size_t at = r.offset();
    const std::uint32_t id = r.u32("class id");
    r.floats(table.channels, "embedding");
    std::vector<Real> data(table.channels);
    for (Real& v : data) {
      const float f = r.f32("embedding");
      if (!std::isfinite(f)) {
        throw DataError("MVPT: non-finite embedding for class " +
                        std::to_string(id));
      }
      v = static_cast<Real>(f);
    }
    if (!table.embeddings
             .emplace(id, Tensor({1, table.channels}, std::move(data)))
             .second) {
      throw FormatError("MVPT: duplicate class id " + std::to_string(id), at);
    }
  }
  r.expect_end();
  return table;
}

void write_text_table(const TextTable& table, const std::filesystem::path& path) {
  write_file(path, encode_text_table(table));
}

TextTable read_text_table(const std::filesystem::path& path) {
  return decode_text_table(read_file(path));
}

void check_pairing(const FeatureBank& bank, const TextTable& table) {
  if (bank.channels != table.channels) {
    throw DataError("text table width C=" + std::to_string(table.channels) +
                    " does not match bank width C=" +
                    std::to_string(bank.channels));
  }
  for (std::uint32_t id : bank.class_ids()) {
    if (!table.embeddings.contains(id)) {
      throw DataError("bank references class id " + std::to_string(id) +
                      " which has no text embedding");
    }
  }
}

// ---------------------------------------------------------------------------
// MVPC

std::vector<std::uint8_t> encode_checkpoint(const ModelParams& model) {
  const ModelConfig& c = model.config;
  ByteWriter w;
  w.bytes("MVPC");
  w.u16(kVersion);
  for (std::size_t v : {c.channels, c.heads, c.levels, c.ffn_dim, c.mlp_dim,
                        c.frames}) {
    w.u32(checked_u32(v, "hyperparameter"));
  }
  const auto params = model.params();
  w.u32(checked_u32(params.size(), "parameter count"));
  for (const Param* p : params) {
    if (p->name.size() > UINT16_MAX) throw DataError("parameter name too long");
    w.u16(static_cast<std::uint16_t>(p->name.size()));
    w.bytes(p->name);
    w.u8(static_cast<std::uint8_t>(p->value.rank()));
    for (std::size_t d : p->value.shape()) w.u32(checked_u32(d, "dimension"));
    for (Real v : p->value.data()) w.f64(static_cast<double>(v));
  }
  const std::uint32_t crc = crc32_of(w.view());
  w.u32(crc);
  return w.take();
}

ModelParams decode_checkpoint(std::span<const std::uint8_t> bytes) {
  {
    ByteReader header(bytes, "MVPC");
    header.magic("MVPC");
    header.version();
  }
  if (bytes.size() < 4 + 2 + 4) {
    throw FormatError("MVPC: truncated before checksum", bytes.size());
  }
  const std::size_t body = bytes.size() - 4;
  {
    ByteReader tail(bytes.subspan(body), "MVPC");
    const std::uint32_t stored = tail.u32("checksum");
    if (stored != crc32_of(bytes.first(body))) {
      throw FormatError("MVPC: checksum mismatch", body);
    }
  }

  ByteReader r(bytes.first(body), "MVPC");
  r.magic("MVPC");
  r.version();
  ModelConfig cfg;
  cfg.channels = r.u32("C");
  cfg.heads = r.u32("H");
  cfg.levels = r.u32("N");
  cfg.ffn_dim = r.u32("C_ff");
  cfg.mlp_dim = r.u32("C_mlp");
  cfg.frames = r.u32("T");
  ModelParams model;
  try {
    model = zero_model(cfg);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("MVPC: invalid hyperparameters: ") + e.what(), 6);
  }
  if (model.config.ffn_dim != cfg.ffn_dim || model.config.mlp_dim != cfg.mlp_dim) {
    throw FormatError("MVPC: zero hidden width in hyperparameter block", 6);
  }

  const auto params = model.params();
  const std::size_t count_at = r.offset();
  const std::uint32_t count = r.u32("parameter count");
  if (count != params.size()) {
    throw FormatError("MVPC: " + std::to_string(count) +
                          " parameter records, model has " +
                          std::to_string(params.size()),
                      count_at);
  }
  for (Param* p : params) {
    const std::size_t at = r.offset();
    const std::uint16_t len = r.u16("name length");
    const std::string name = r.string(len, "parameter name");
    if (name != p->name) {
      throw FormatError("MVPC: expected parameter '" + p->name + "', found '" +
                            name + "'",
                        at);
    }
    const std::uint8_t rank = r.u8("rank");
    Shape shape;
    for (std::uint8_t k = 0; k < rank; ++k) shape.push_back(r.u32("dimension"));
    if (shape != p->value.shape()) {
      throw FormatError("MVPC: parameter '" + name + "' has shape " +
                            shape_string(shape) + ", model expects " +
                            shape_string(p->value.shape()),
                        at);
    }
    for (Real& v : p->value.data()) {
      const double d = r.f64("payload");
      if (!std::isfinite(d)) {
        throw DataError("MVPC: non-finite value in parameter '" + name + "'");
      }
      v = static_cast<Real>(d);
    }
  }
  r.expect_end();
  return model;
}

void save_checkpoint(const ModelParams& model, const std::filesystem::path& path) {
  write_file(path, encode_checkpoint(model));
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

ModelParams load_checkpoint(const std::filesystem::path& path,
                            const ModelConfig& expected) {
  ModelParams model = load_checkpoint(path);
  const ModelConfig want = expected.resolved();
  const ModelConfig& got = model.config;
  if (want.channels != got.channels || want.heads != got.heads ||
      want.levels != got.levels || want.ffn_dim != got.ffn_dim ||
      want.mlp_dim != got.mlp_dim || want.frames != got.frames) {
    throw ConfigError(
        "checkpoint hyperparameters (C=" + std::to_string(got.channels) +
        ", H=" + std::to_string(got.heads) + ", N=" + std::to_string(got.levels) +
        ", C_ff=" + std::to_string(got.ffn_dim) + ", C_mlp=" +
        std::to_string(got.mlp_dim) + ", T=" + std::to_string(got.frames) +
        ") do not match the requested configuration (C=" +
        std::to_string(want.channels) + ", H=" + std::to_string(want.heads) +
        ", N=" + std::to_string(want.levels) + ", C_ff=" +
        std::to_string(want.ffn_dim) + ", C_mlp=" + std::to_string(want.mlp_dim) +
        ", T=" + std::to_string(want.frames) + ")");
  }
  return model;
}

// ---------------------------------------------------------------------------

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path,
                std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

}  // namespace mvp
