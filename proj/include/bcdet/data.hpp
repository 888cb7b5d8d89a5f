#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bcdet/detection.hpp"
#include "bcdet/rng.hpp"
#include "bcdet/tensor.hpp"

namespace bcdet {

// 8-bit RGB image, row-major HWC.
struct Image8 {
  int width = 0, height = 0;
  std::vector<uint8_t> pixels;

  uint8_t& at(int y, int x, int c) {
    return pixels[static_cast<size_t>((y * width + x) * 3 + c)];
  }
  uint8_t at(int y, int x, int c) const {
    return pixels[static_cast<size_t>((y * width + x) * 3 + c)];
  }
};

struct Sample {
  Image8 image;
  std::vector<Box> boxes;
  std::vector<int> labels;  // class ids, 0-based
  int image_id = 0;
  std::string source_path;
};

struct Dataset {
  std::vector<Sample> samples;
  std::vector<std::string> class_names;  // index = class id
};

// Canonical category order; COCO category_id = class id + 1.
const std::vector<std::string>& default_class_names();  // Platelets, RBC, WBC
int class_id_from_name(const std::string& name,
                       const std::vector<std::string>& class_names);

// ---- PPM (binary P6, maxval 255) ----
Image8 read_ppm(const std::string& path);
void write_ppm(const std::string& path, const Image8& image);

// ---- VOC XML ----
// Parses object/name and bndbox/{xmin,ymin,xmax,ymax}; 1-based VOC pixels
// become 0-based corners. Unknown class names are an error.
Sample parse_voc_xml(const std::string& path,
                     const std::vector<std::string>& class_names);

// All *.xml under dir in filename order, with image ids assigned 1..n.
Dataset voc_dir_to_dataset(const std::string& dir,
                           const std::vector<std::string>& class_names);

// ---- COCO JSON ----
void write_coco_json(const std::string& path, const Dataset& dataset);
// Reads annotations; when images_dir is nonempty, loads each file_name
// from there (PPM).
Dataset read_coco_json(const std::string& path,
                       const std::string& images_dir = "");

// ---- split ----
struct SplitRatios {
  double train = 0.7, val = 0.2, test = 0.1;
};

struct DatasetSplit {
  std::vector<int> train, val, test;
};

// Seeded shuffle (pinned generator) then contiguous slices at cumulative
// floor boundaries, so sizes stay within 1 of the exact ratios.
DatasetSplit split_dataset(const std::vector<int>& ids, const SplitRatios& r,
                           uint64_t seed);
void write_split(const std::string& path, const DatasetSplit& split);
DatasetSplit read_split(const std::string& path);

// ---- geometry / augmentation ----
// Bilinear non-aspect-preserving resize to R x R; boxes scaled and clipped.
Sample resize_to(const Sample& s, int r);

struct AugmentationConfig {
  double hflip_p = 0.5;
  double vflip_p = 0.5;
  double crop_max_frac = 0.15;  // independent per-side crop fraction
  double brightness_lo = 0.85, brightness_hi = 1.15;  // linear gain
  double exposure_lo = 0.85, exposure_hi = 1.15;      // gamma
};

Sample hflip(const Sample& s);
Sample vflip(const Sample& s);
// Order: hflip, vflip, crop (then resize back), brightness, exposure.
// Boxes reduced below 25% of their original area by the crop are dropped.
Sample augment(const Sample& s, const AugmentationConfig& cfg,
               SplitMix64& rng);

// x/255 then per-channel (x - mean)/std with ImageNet constants;
// output [3, H, W].
Tensor normalize_image(const Image8& image);

// ---- synthetic blob-cell data ----
// Deterministic per seed. Each image gets 0-2 large ellipses (WBC), 5-15
// medium circles (RBC) and 0-4 small dots (Platelets) on a textured
// background, with exact ground-truth boxes.
Dataset synth_generate(int n_images, uint64_t seed, int r);

// Writes images/<id>.ppm plus annotations.json under dir.
void save_dataset(const std::string& dir, const Dataset& dataset);

Dataset subset_by_ids(const Dataset& d, const std::vector<int>& ids);

}  // namespace bcdet
