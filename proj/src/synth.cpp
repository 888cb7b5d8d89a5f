#include <algorithm>
#include <cmath>

#include "bcdet/data.hpp"

namespace bcdet {

namespace {

// Class ids follow default_class_names(): 0 Platelets, 1 RBC, 2 WBC.
constexpr int kPlatelet = 0;
constexpr int kRbc = 1;
constexpr int kWbc = 2;

struct Rgb {
  double r, g, b;
};

void put_pixel(Image8& img, int x, int y, const Rgb& c) {
  if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
  img.at(y, x, 0) = static_cast<uint8_t>(std::clamp(c.r, 0.0, 255.0));
  img.at(y, x, 1) = static_cast<uint8_t>(std::clamp(c.g, 0.0, 255.0));
  img.at(y, x, 2) = static_cast<uint8_t>(std::clamp(c.b, 0.0, 255.0));
}

// Axis-aligned filled ellipse; bounding box is exactly [cx-a, cy-b, cx+a, cy+b].
void fill_ellipse(Image8& img, double cx, double cy, double a, double b,
                  const Rgb& color, SplitMix64& rng, double noise) {
  const int x0 = static_cast<int>(std::floor(cx - a));
  const int x1 = static_cast<int>(std::ceil(cx + a));
  const int y0 = static_cast<int>(std::floor(cy - b));
  const int y1 = static_cast<int>(std::ceil(cy + b));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double dx = (x + 0.5 - cx) / a;
      const double dy = (y + 0.5 - cy) / b;
      if (dx * dx + dy * dy > 1.0) continue;
      const double n = noise > 0 ? rng.uniform(-noise, noise) : 0.0;
      put_pixel(img, x, y, {color.r + n, color.g + n, color.b + n});
    }
}

}  // namespace

Dataset synth_generate(int n_images, uint64_t seed, int r) {
  Dataset ds;
  ds.class_names = default_class_names();
  const double R = static_cast<double>(r);

  for (int idx = 0; idx < n_images; ++idx) {
    SplitMix64 rng = substream(seed, static_cast<uint64_t>(idx));
    Sample s;
    s.image_id = idx + 1;
    s.image.width = r;
    s.image.height = r;
    s.image.pixels.resize(static_cast<size_t>(r) * r * 3);

    // Textured plasma background: pale base with a soft gradient and noise.
    const double gx = rng.uniform(-20, 20), gy = rng.uniform(-20, 20);
    for (int y = 0; y < r; ++y)
      for (int x = 0; x < r; ++x) {
        const double n = rng.uniform(-10, 10);
        const double wave = gx * (x / R - 0.5) + gy * (y / R - 0.5);
        put_pixel(s.image, x, y,
                  {232 + wave + n, 224 + wave + n, 216 + wave + n});
      }

    auto place = [&](double diam_lo, double diam_hi, double& cx, double& cy,
                     double& ax, double& ay, bool squash) {
      ax = 0.5 * rng.uniform(diam_lo, diam_hi) * R;
      ay = squash ? ax * rng.uniform(0.75, 1.0) : ax;
      cx = rng.uniform(ax + 1, R - ax - 1);
      cy = rng.uniform(ay + 1, R - ay - 1);
    };
    auto record = [&](double cx, double cy, double ax, double ay, int label) {
      s.boxes.push_back({cx - ax, cy - ay, cx + ax, cy + ay});
      s.labels.push_back(label);
    };

    // Large white cells first so the denser red cells read on top of them.
    const int n_wbc = static_cast<int>(rng.uniform_int(3));  // 0-2
    for (int i = 0; i < n_wbc; ++i) {
      double cx, cy, ax, ay;
      place(0.35, 0.50, cx, cy, ax, ay, true);
      fill_ellipse(s.image, cx, cy, ax, ay, {150, 120, 195}, rng, 12);
      // Darker nucleus lobe, kept inside the cell body.
      fill_ellipse(s.image, cx + rng.uniform(-0.3, 0.3) * ax,
                   cy + rng.uniform(-0.3, 0.3) * ay, ax * 0.45, ay * 0.45,
                   {95, 60, 140}, rng, 10);
      record(cx, cy, ax, ay, kWbc);
    }

    const int n_rbc = 5 + static_cast<int>(rng.uniform_int(11));  // 5-15
    for (int i = 0; i < n_rbc; ++i) {
      double cx, cy, ax, ay;
      place(0.12, 0.20, cx, cy, ax, ay, false);
      fill_ellipse(s.image, cx, cy, ax, ay, {200, 95, 95}, rng, 10);
      // Central pallor.
      fill_ellipse(s.image, cx, cy, ax * 0.45, ay * 0.45, {225, 150, 150},
                   rng, 8);
      record(cx, cy, ax, ay, kRbc);
    }

    const int n_plt = static_cast<int>(rng.uniform_int(5));  // 0-4
    for (int i = 0; i < n_plt; ++i) {
      double cx, cy, ax, ay;
      place(0.03, 0.06, cx, cy, ax, ay, false);
      fill_ellipse(s.image, cx, cy, ax, ay, {120, 70, 155}, rng, 8);
      record(cx, cy, ax, ay, kPlatelet);
    }

    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace bcdet
