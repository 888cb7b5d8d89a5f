#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "bcdet/data.hpp"

namespace bcdet {

// ---- split ----

DatasetSplit split_dataset(const std::vector<int>& ids, const SplitRatios& r,
                           uint64_t seed) {
  const double total = r.train + r.val + r.test;
  if (std::fabs(total - 1.0) > 1e-9)
    throw std::invalid_argument("split: ratios must sum to 1");
  if (ids.size() < 3)
    throw std::invalid_argument("split: need at least one id per subset");
  std::vector<int> shuffled = ids;
  SplitMix64 rng(seed);
  rng.shuffle(shuffled);
  const auto n = static_cast<double>(shuffled.size());
  const auto b1 = static_cast<size_t>(std::floor(n * r.train));
  const auto b2 = static_cast<size_t>(std::floor(n * (r.train + r.val)));
  DatasetSplit s;
  s.train.assign(shuffled.begin(), shuffled.begin() + b1);
  s.val.assign(shuffled.begin() + b1, shuffled.begin() + b2);
  s.test.assign(shuffled.begin() + b2, shuffled.end());
  return s;
}

void write_split(const std::string& path, const DatasetSplit& split) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("split: cannot write " + path);
  for (int id : split.train) os << id << "\ttrain\n";
  for (int id : split.val) os << id << "\tval\n";
  for (int id : split.test) os << id << "\ttest\n";
}

DatasetSplit read_split(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("split: cannot open " + path);
  DatasetSplit s;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw std::runtime_error("split: line " + std::to_string(lineno) +
                               " is not 'id<TAB>subset'");
    const int id = std::stoi(line.substr(0, tab));
    const std::string subset = line.substr(tab + 1);
    if (subset == "train") s.train.push_back(id);
    else if (subset == "val") s.val.push_back(id);
    else if (subset == "test") s.test.push_back(id);
    else
      throw std::runtime_error("split: unknown subset '" + subset + "'");
  }
  return s;
}

// ---- resize ----

namespace {

double clampd(double v, double lo, double hi) {
  return v < lo ? lo : (v > hi ? hi : v);
}

uint8_t to_u8(double v) {
  return static_cast<uint8_t>(clampd(std::lround(v), 0.0, 255.0));
}

Image8 resize_image(const Image8& src, int w, int h) {
  Image8 dst;
  dst.width = w;
  dst.height = h;
  dst.pixels.resize(static_cast<size_t>(w) * h * 3);
  const double sx = static_cast<double>(src.width) / w;
  const double sy = static_cast<double>(src.height) / h;
  for (int y = 0; y < h; ++y) {
    const double fy = clampd((y + 0.5) * sy - 0.5, 0.0, src.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < w; ++x) {
      const double fx = clampd((x + 0.5) * sx - 0.5, 0.0, src.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double v =
            (1 - wy) * ((1 - wx) * src.at(y0, x0, c) + wx * src.at(y0, x1, c)) +
            wy * ((1 - wx) * src.at(y1, x0, c) + wx * src.at(y1, x1, c));
        dst.at(y, x, c) = to_u8(v);
      }
    }
  }
  return dst;
}

void clip_boxes(std::vector<Box>& boxes, int w, int h) {
  for (Box& b : boxes) {
    b.x1 = clampd(b.x1, 0.0, w);
    b.y1 = clampd(b.y1, 0.0, h);
    b.x2 = clampd(b.x2, 0.0, w);
    b.y2 = clampd(b.y2, 0.0, h);
  }
}

}  // namespace

Sample resize_to(const Sample& s, int r) {
  if (r % 32 != 0)
    throw std::invalid_argument("resize: target " + std::to_string(r) +
                                " must be divisible by 32");
  Sample out = s;
  if (s.image.width == r && s.image.height == r) return out;
  out.image = resize_image(s.image, r, r);
  const double fx = static_cast<double>(r) / s.image.width;
  const double fy = static_cast<double>(r) / s.image.height;
  for (Box& b : out.boxes) {
    b.x1 *= fx;
    b.x2 *= fx;
    b.y1 *= fy;
    b.y2 *= fy;
  }
  clip_boxes(out.boxes, r, r);
  return out;
}

// ---- augmentation ----

Sample hflip(const Sample& s) {
  Sample out = s;
  const int w = s.image.width, h = s.image.height;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        out.image.at(y, x, c) = s.image.at(y, w - 1 - x, c);
  for (Box& b : out.boxes) {
    const double x1 = b.x1, x2 = b.x2;
    b.x1 = w - x2;
    b.x2 = w - x1;
  }
  return out;
}

Sample vflip(const Sample& s) {
  Sample out = s;
  const int w = s.image.width, h = s.image.height;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        out.image.at(y, x, c) = s.image.at(h - 1 - y, x, c);
  for (Box& b : out.boxes) {
    const double y1 = b.y1, y2 = b.y2;
    b.y1 = h - y2;
    b.y2 = h - y1;
  }
  return out;
}

namespace {

// Crop up to cfg.crop_max_frac from each side independently, drop boxes whose
// surviving area is under 25% of the original, then resize back.
Sample random_crop(const Sample& s, double max_frac, SplitMix64& rng) {
  const int w = s.image.width, h = s.image.height;
  const int left = static_cast<int>(std::floor(rng.uniform(0, max_frac) * w));
  const int right = static_cast<int>(std::floor(rng.uniform(0, max_frac) * w));
  const int top = static_cast<int>(std::floor(rng.uniform(0, max_frac) * h));
  const int bottom = static_cast<int>(std::floor(rng.uniform(0, max_frac) * h));
  const int cw = w - left - right;
  const int ch = h - top - bottom;
  if (cw <= 0 || ch <= 0) return s;

  Sample cropped;
  cropped.image_id = s.image_id;
  cropped.source_path = s.source_path;
  cropped.image.width = cw;
  cropped.image.height = ch;
  cropped.image.pixels.resize(static_cast<size_t>(cw) * ch * 3);
  for (int y = 0; y < ch; ++y)
    for (int x = 0; x < cw; ++x)
      for (int c = 0; c < 3; ++c)
        cropped.image.at(y, x, c) = s.image.at(y + top, x + left, c);

  for (size_t i = 0; i < s.boxes.size(); ++i) {
    Box b = s.boxes[i];
    const double orig_area = b.area();
    b.x1 -= left;
    b.x2 -= left;
    b.y1 -= top;
    b.y2 -= top;
    b.x1 = clampd(b.x1, 0.0, cw);
    b.x2 = clampd(b.x2, 0.0, cw);
    b.y1 = clampd(b.y1, 0.0, ch);
    b.y2 = clampd(b.y2, 0.0, ch);
    if (orig_area <= 0.0 || b.area() / orig_area < 0.25) continue;
    cropped.boxes.push_back(b);
    cropped.labels.push_back(s.labels[i]);
  }

  // Scale back to the original size so downstream shapes are unchanged.
  Sample out = cropped;
  out.image = resize_image(cropped.image, w, h);
  const double fx = static_cast<double>(w) / cw;
  const double fy = static_cast<double>(h) / ch;
  for (Box& b : out.boxes) {
    b.x1 *= fx;
    b.x2 *= fx;
    b.y1 *= fy;
    b.y2 *= fy;
  }
  clip_boxes(out.boxes, w, h);
  return out;
}

}  // namespace

Sample augment(const Sample& s, const AugmentationConfig& cfg,
               SplitMix64& rng) {
  if (cfg.crop_max_frac < 0.0 || cfg.crop_max_frac >= 0.5)
    throw std::invalid_argument("augment: crop_max_frac must be in [0, 0.5)");
  Sample out = s;
  if (rng.uniform01() < cfg.hflip_p) out = hflip(out);
  if (rng.uniform01() < cfg.vflip_p) out = vflip(out);
  if (cfg.crop_max_frac > 0.0) out = random_crop(out, cfg.crop_max_frac, rng);
  const double gain = rng.uniform(cfg.brightness_lo, cfg.brightness_hi);
  const double gamma = rng.uniform(cfg.exposure_lo, cfg.exposure_hi);
  for (uint8_t& p : out.image.pixels) {
    double v = p * gain;
    v = 255.0 * std::pow(clampd(v / 255.0, 0.0, 1.0), gamma);
    p = to_u8(v);
  }
  return out;
}

// ---- normalization ----

Tensor normalize_image(const Image8& image) {
  static const double kMean[3] = {0.485, 0.456, 0.406};
  static const double kStd[3] = {0.229, 0.224, 0.225};
  const int h = image.height, w = image.width;
  Tensor t({3, h, w});
  auto d = t.data();
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        d[static_cast<size_t>((c * h + y) * w + x)] =
            (image.at(y, x, c) / 255.0 - kMean[c]) / kStd[c];
  return t;
}

}  // namespace bcdet
