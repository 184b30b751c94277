#pragma once

// On-disk formats. All integers and floats are little-endian.
//
// MVPF feature bank
//   "MVPF" u16 version=1 u16 flags u32 num_videos u32 T u32 C
//   per video:  u32 id, u32 label, T*C f32 row-major
//   class names: u32 count, per entry u32 id, u16 byte_len, UTF-8 bytes
//
// MVPT text table
//   "MVPT" u16 version=1 u32 count u32 C
//   per entry:  u32 class_id, C f32
//
// MVPC checkpoint
//   "MVPC" u16 version=1
//   u32 C, H, N, C_ff, C_mlp, T
//   u32 param_count
//   per param:  u16 name_len, name, u8 rank, rank * u32 dims, f64 payload
//   u32 CRC-32 (zlib polynomial) of every preceding byte

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mvp/sti.hpp"

namespace mvp {

struct Video {
  std::uint32_t label = 0;
  Tensor frames;  // T x C
};

struct FeatureBank {
  std::size_t frames = 0;    // T
  std::size_t channels = 0;  // C
  std::map<std::uint32_t, Video> videos;
  std::map<std::uint32_t, std::string> class_names;

  /// Throws DataError when a video has the wrong shape or non-finite values,
  /// or when a label has no class name.
  void validate() const;
  /// Distinct labels in ascending order.
  std::vector<std::uint32_t> class_ids() const;
  /// Video ids with the given label, ascending.
  std::vector<std::uint32_t> videos_of(std::uint32_t label) const;
};

struct TextTable {
  std::size_t channels = 0;
  std::map<std::uint32_t, Tensor> embeddings;  // each 1 x C

  const Tensor& at(std::uint32_t class_id) const;
};

std::vector<std::uint8_t> encode_bank(const FeatureBank& bank);
FeatureBank decode_bank(std::span<const std::uint8_t> bytes);
void write_bank(const FeatureBank& bank, const std::filesystem::path& path);
FeatureBank read_bank(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_text_table(const TextTable& table);
TextTable decode_text_table(std::span<const std::uint8_t> bytes);
void write_text_table(const TextTable& table, const std::filesystem::path& path);
TextTable read_text_table(const std::filesystem::path& path);

/// Guarded join of a bank with its text table: the widths must agree and
/// every class of the bank must have an embedding. Throws DataError.
void check_pairing(const FeatureBank& bank, const TextTable& table);

std::vector<std::uint8_t> encode_checkpoint(const ModelParams& model);
ModelParams decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const ModelParams& model, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);
/// Loads and requires the stored hyperparameters to equal `expected`
/// (after default resolution); throws ConfigError otherwise.
ModelParams load_checkpoint(const std::filesystem::path& path,
                            const ModelConfig& expected);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path,
                std::span<const std::uint8_t> bytes);

struct SyntheticSpec {
  std::size_t classes = 5;
  std::size_t per_class = 10;
  std::size_t frames = 8;
  std::size_t channels = 32;
  std::vector<double> speeds = {1.0};
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  /// Randomly permutes labels across videos after generation.
  bool shuffle_labels = false;
};

struct SyntheticData {
  FeatureBank bank;
  TextTable text;
};

/// Each class follows a smooth random trajectory in C-dim space. A video
/// traverses it at a speed drawn from `speeds`: frame t samples the
/// trajectory at phase min(1, speed * t / (T - 1)) by linear interpolation,
/// then Gaussian noise is added. The class text embedding is the mean of the
/// noiseless speed-1 frames.
SyntheticData make_synthetic(const SyntheticSpec& spec);

}  // namespace mvp
