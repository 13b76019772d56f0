#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "emotask/tensor.hpp"

namespace emotask {

// One sample's labels. Either label may be absent; a record with neither is
// excluded from training by the partitioner.
struct AnnotationRecord {
  std::string id;
  std::size_t image_index = 0;  // row into the companion ImageStore
  std::optional<int> expr;      // 0..6
  std::optional<std::array<std::uint8_t, 12>> aus;
};

// The disjoint index sets of the three-phase epoch: expression-only (E),
// AU-only (A) and both-labels (B).
struct DatasetPartition {
  std::vector<std::size_t> expr_only;
  std::vector<std::size_t> au_only;
  std::vector<std::size_t> both;
  std::size_t excluded = 0;
};

struct PreprocessConfig {
  std::size_t height = 112;
  std::size_t width = 112;
  std::array<double, 3> channel_means = {0.5, 0.5, 0.5};
  std::array<double, 3> channel_stds = {0.5, 0.5, 0.5};
};

// Raw uint8 images, HxWxC row-major, all the same size.
struct ImageStore {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 3;
  std::vector<std::uint8_t> pixels;

  std::size_t count() const {
    std::size_t per = height * width * channels;
    return per == 0 ? 0 : pixels.size() / per;
  }
  const std::uint8_t* image(std::size_t i) const {
    return pixels.data() + i * height * width * channels;
  }
};

struct Dataset {
  std::vector<AnnotationRecord> records;
  ImageStore images;
};

struct SynthConfig {
  std::size_t n_samples = 1000;
  std::uint64_t seed = 0;
  std::array<double, 12> au_base_rates = {0.05, 0.05, 0.05, 0.05, 0.05, 0.05,
                                          0.05, 0.05, 0.05, 0.05, 0.05, 0.05};
  // characteristic AU pattern per emotion; a modeling device, not FACS truth
  std::array<std::array<std::uint8_t, 12>, 7> emotion_prototypes = {{
      {1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0},
      {0, 0, 0, 1, 1, 1, 0, 0, 0, 0, 0, 0},
      {0, 0, 0, 0, 0, 0, 1, 1, 1, 0, 0, 0},
      {0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1},
      {1, 0, 0, 1, 0, 0, 1, 0, 0, 1, 0, 0},
      {0, 1, 0, 0, 1, 0, 0, 1, 0, 0, 1, 0},
      {0, 0, 1, 0, 0, 1, 0, 0, 1, 0, 0, 1},
  }};
  std::array<double, 7> emotion_weights = {1, 1, 1, 1, 1, 1, 1};
  double label_noise = 0.05;
  double frac_expr_only = 0.1;
  double frac_au_only = 0.7;
  double frac_both = 0.2;
  std::size_t image_size = 16;
  // rendering: each active AU adds patch_amplitude to its patch; every pixel
  // gets Gaussian noise. Their ratio sets how hard the images are to read.
  double patch_amplitude = 120.0;
  double pixel_noise = 8.0;
};

// Ground truth kept alongside the (possibly masked) records, for experiment
// reporting and oracle evaluation.
struct SynthDataset {
  Dataset data;
  std::vector<int> true_expr;
  std::vector<std::array<std::uint8_t, 12>> true_aus;
};

// Manifest CSV: one line per sample, `id,expr,au1;...;au12`. expr -1 or empty
// means absent; an empty AU field means absent.
std::vector<AnnotationRecord> load_annotations(const std::string& manifest_path);
void save_annotations(const std::vector<AnnotationRecord>& records,
                      const std::string& manifest_path);

DatasetPartition partition(const std::vector<AnnotationRecord>& records);

// (v/255 - mean_c)/std_c, channel-first output [3,H,W]. No resizing; a
// dimension mismatch is a hard error.
Tensor preprocess(const ImageStore& images, std::size_t index,
                  const PreprocessConfig& cfg);

// Deterministic shuffle of `indices` keyed on (seed, epoch), chunked into
// batches; the final partial batch is kept.
std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& indices,
                                                   std::size_t batch_size,
                                                   std::uint64_t seed, int epoch);

SynthDataset synth_generate(const SynthConfig& cfg);

// Binary image file: magic "EMIM", u32 version, u32 count, u32 height,
// u32 width, u32 channels, then raw bytes per image.
void save_images(const ImageStore& images, const std::string& path);
ImageStore load_images(const std::string& path);

}  // namespace emotask
