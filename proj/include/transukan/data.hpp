#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "transukan/losses.hpp"
#include "transukan/tensor.hpp"

namespace tukan {

/// 8- or 16-bit grayscale raster as stored in a binary PGM.
struct GrayImage {
  std::size_t width = 0, height = 0;
  std::uint16_t maxval = 255;
  std::vector<std::uint16_t> pixels;  // row-major
};

/// Binary P5 only; '#' comments allowed in the header. Throws DataError
/// (naming the file) on malformed content and IoError when unreadable.
GrayImage read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const GrayImage& image);

struct SegSample {
  Tensor image;               // [C, H, W] in [0, 1]
  std::vector<Label> mask;    // H * W labels
  std::size_t height = 0, width = 0;
};

/// Raw mask value -> class label.
using LabelTable = std::map<std::uint16_t, Label>;

/// {0 -> 0, 255 -> 1} for binary masks; for n classes, value
/// k * floor(255 / (n - 1)) maps to class k.
LabelTable default_label_table(std::size_t n_classes);

/// Bilinear (align-corners) resize of a [C,H,W] image.
Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width);
/// Nearest-neighbour resize of a label map.
std::vector<Label> resize_nearest(const std::vector<Label>& mask, std::size_t height, std::size_t width,
                                  std::size_t out_height, std::size_t out_width);

/// Reads an image/mask pair, scales the image by 1/maxval, maps mask values
/// through `table`, and resizes both to (height, width) when they differ.
SegSample load_sample(const std::filesystem::path& image_path, const std::filesystem::path& mask_path,
                      const LabelTable& table, std::size_t height, std::size_t width);

enum class SynthTask { kBinaryBlob, kTwoClassShapes };

SynthTask parse_synth_task(const std::string& name);
std::string synth_task_name(SynthTask task);
std::size_t synth_task_classes(SynthTask task);

/// Reproducible single-channel samples of size x size. Blob task: one to
/// three ellipses on a noisy background; foreground fraction in [0.05, 0.6].
/// Shapes task: ellipses (class 1) and rectangles (class 2).
std::vector<SegSample> synth_dataset(std::uint64_t seed, std::size_t n, std::size_t size, SynthTask task);

/// images/NNN.pgm + masks/NNN.pgm.
void save_dataset(const std::filesystem::path& dir, const std::vector<SegSample>& samples, std::size_t n_classes);
std::vector<SegSample> load_dataset(const std::filesystem::path& dir, const LabelTable& table, std::size_t height,
                                    std::size_t width);

struct DataSplit {
  std::vector<std::size_t> train, val, test;  // indices into the dataset
};

/// Seeded shuffle, then floor(0.8 n) / floor(0.1 n) / remainder.
DataSplit split_indices(std::size_t n, std::uint64_t seed);

/// Applies the same random flip / 90-degree rotation to image and mask.
/// Rotation is skipped for non-square samples.
SegSample augment(const SegSample& sample, Rng& rng);

}  // namespace tukan
