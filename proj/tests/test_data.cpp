#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "bcdet/data.hpp"
#include "doctest.h"

using namespace bcdet;
namespace fs = std::filesystem;

namespace {

const std::string kFixtures = BCDET_FIXTURE_DIR;

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Image8 random_image(int w, int h, uint64_t seed) {
  SplitMix64 rng(seed);
  Image8 img;
  img.width = w;
  img.height = h;
  img.pixels.resize(static_cast<size_t>(w) * h * 3);
  for (auto& p : img.pixels) p = static_cast<uint8_t>(rng.uniform_int(256));
  return img;
}

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

bool images_equal(const Image8& a, const Image8& b) {
  return a.width == b.width && a.height == b.height && a.pixels == b.pixels;
}

}  // namespace

TEST_CASE("ppm round-trip and header format") {
  const auto dir = temp_dir("bcdet_ppm");
  const Image8 img = random_image(13, 7, 1);
  const std::string path = (dir / "x.ppm").string();
  write_ppm(path, img);
  CHECK(images_equal(read_ppm(path), img));

  const std::string raw = read_file(path);
  CHECK(raw.substr(0, 11) == "P6\n13 7\n255");
  CHECK(raw[11] == '\n');
  CHECK(raw.size() == 12 + 13u * 7 * 3);

  // Only maxval 255 is supported.
  {
    std::ofstream os((dir / "bad.ppm").string(), std::ios::binary);
    os << "P6\n2 2\n127\n" << std::string(12, '\0');
  }
  CHECK_THROWS_WITH_AS(read_ppm((dir / "bad.ppm").string()),
                       doctest::Contains("maxval"), std::runtime_error);
  {
    std::ofstream os((dir / "p3.ppm").string());
    os << "P3\n1 1\n255\n0 0 0\n";
  }
  CHECK_THROWS_AS(read_ppm((dir / "p3.ppm").string()), std::runtime_error);
  fs::remove_all(dir);
}

TEST_CASE("voc parsing: coordinates, case folding, empty and error files") {
  const auto s1 =
      parse_voc_xml(kFixtures + "/voc/BloodImage_00001.xml",
                    default_class_names());
  REQUIRE(s1.boxes.size() == 2);
  CHECK(s1.boxes[0].x1 == 0.0);
  CHECK(s1.boxes[0].y1 == 0.0);
  CHECK(s1.boxes[0].x2 == 99.0);
  CHECK(s1.boxes[0].y2 == 99.0);
  CHECK(s1.labels[0] == 1);  // RBC
  CHECK(s1.labels[1] == 2);  // WBC
  CHECK(s1.image.width == 640);
  CHECK(s1.source_path == "BloodImage_00001.jpg");

  const auto s2 = parse_voc_xml(kFixtures + "/voc/BloodImage_00002.xml",
                                default_class_names());
  CHECK(s2.labels[0] == 1);  // "rbc" matches case-insensitively
  CHECK(s2.labels[1] == 0);  // "platelets"

  const auto s3 = parse_voc_xml(kFixtures + "/voc/BloodImage_00003.xml",
                                default_class_names());
  CHECK(s3.boxes.empty());

  CHECK_THROWS_WITH_AS(
      parse_voc_xml(kFixtures + "/voc_bad/bad_unknown_class.xml",
                    default_class_names()),
      doctest::Contains("Basophil"), std::invalid_argument);
  CHECK_THROWS_AS(parse_voc_xml(kFixtures + "/voc_bad/bad_degenerate.xml",
                                default_class_names()),
                  std::runtime_error);
  CHECK_THROWS_AS(parse_voc_xml(kFixtures + "/voc_bad/bad_malformed.xml",
                                default_class_names()),
                  std::runtime_error);
}

TEST_CASE("voc directory conversion matches the golden COCO file byte-for-byte") {
  const auto dir = temp_dir("bcdet_convert");
  const auto ds =
      voc_dir_to_dataset(kFixtures + "/voc", default_class_names());
  const std::string out = (dir / "converted.json").string();
  write_coco_json(out, ds);
  CHECK(read_file(out) == read_file(kFixtures + "/voc_golden.json"));
  fs::remove_all(dir);
}

TEST_CASE("coco json round-trip preserves all modeled fields") {
  const auto dir = temp_dir("bcdet_coco");
  Dataset ds;
  ds.class_names = default_class_names();
  for (int i = 0; i < 3; ++i) {
    Sample s;
    s.image_id = i + 1;
    s.source_path = "img" + std::to_string(i) + ".ppm";
    s.image.width = 64;
    s.image.height = 48;
    if (i != 2) {
      s.boxes = {{0, 0, 99, 99}, {10.5, 20.25, 30.5, 44.25}};
      s.labels = {1, i == 0 ? 0 : 2};
    }
    ds.samples.push_back(s);
  }
  const std::string path = (dir / "ann.json").string();
  write_coco_json(path, ds);
  Dataset back = read_coco_json(path);
  REQUIRE(back.samples.size() == ds.samples.size());
  CHECK(back.class_names == ds.class_names);
  for (size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& a = ds.samples[i];
    const auto& b = back.samples[i];
    CHECK(a.image_id == b.image_id);
    CHECK(a.source_path == b.source_path);
    CHECK(a.image.width == b.image.width);
    CHECK(a.image.height == b.image.height);
    REQUIRE(a.boxes.size() == b.boxes.size());
    for (size_t j = 0; j < a.boxes.size(); ++j) {
      CHECK(a.boxes[j].x1 == b.boxes[j].x1);
      CHECK(a.boxes[j].y2 == b.boxes[j].y2);
      CHECK(a.labels[j] == b.labels[j]);
    }
  }

  // Negative extents are rejected.
  {
    std::ofstream os(path);
    os << R"({"images":[{"id":1,"file_name":"x.ppm","width":4,"height":4}],
"annotations":[{"id":1,"image_id":1,"category_id":1,"bbox":[0,0,-3,2],
"area":6,"iscrowd":0}],
"categories":[{"id":1,"name":"Platelets"}]})";
  }
  CHECK_THROWS_WITH_AS(read_coco_json(path), doctest::Contains("negative"),
                       std::runtime_error);
  fs::remove_all(dir);
}

TEST_CASE("split sizes, determinism and manifest round-trip") {
  std::vector<int> ten(10);
  for (int i = 0; i < 10; ++i) ten[static_cast<size_t>(i)] = i + 1;
  const auto s10 = split_dataset(ten, {}, 7);
  CHECK(s10.train.size() == 7);
  CHECK(s10.val.size() == 2);
  CHECK(s10.test.size() == 1);

  std::vector<int> bccd(364);
  for (int i = 0; i < 364; ++i) bccd[static_cast<size_t>(i)] = i;
  const auto s364 = split_dataset(bccd, {}, 7);
  CHECK(s364.train.size() == 254);
  CHECK(s364.val.size() == 73);
  CHECK(s364.test.size() == 37);

  // Disjoint and exhaustive.
  std::set<int> seen;
  for (const auto* part : {&s364.train, &s364.val, &s364.test})
    for (int id : *part) CHECK(seen.insert(id).second);
  CHECK(seen.size() == 364);

  const auto again = split_dataset(bccd, {}, 7);
  CHECK(again.train == s364.train);
  CHECK(again.val == s364.val);
  CHECK(again.test == s364.test);
  const auto other = split_dataset(bccd, {}, 8);
  CHECK(other.train != s364.train);

  const auto dir = temp_dir("bcdet_split");
  const std::string path = (dir / "split.tsv").string();
  write_split(path, s364);
  const auto back = read_split(path);
  CHECK(back.train == s364.train);
  CHECK(back.val == s364.val);
  CHECK(back.test == s364.test);
  fs::remove_all(dir);

  CHECK_THROWS_AS(split_dataset({1, 2}, {}, 1), std::invalid_argument);
  CHECK_THROWS_AS(split_dataset(ten, {0.5, 0.2, 0.2}, 1),
                  std::invalid_argument);
}

TEST_CASE("resize scales boxes by the axis ratios") {
  Sample s;
  s.image = random_image(640, 480, 2);
  s.boxes = {{64, 48, 320, 240}, {639, 0, 640, 1}};  // incl. 1-px slivers
  s.labels = {1, 0};
  Sample r = resize_to(s, 416);
  CHECK(r.image.width == 416);
  CHECK(r.image.height == 416);
  CHECK(r.boxes[0].x1 == doctest::Approx(64.0 * 416 / 640));
  CHECK(r.boxes[0].y1 == doctest::Approx(48.0 * 416 / 480));
  CHECK(r.boxes[0].x2 == doctest::Approx(320.0 * 416 / 640));
  CHECK(r.boxes[1].x2 <= 416.0);
  CHECK(r.boxes[1].y2 <= 416.0);

  // Square identity.
  Sample sq;
  sq.image = random_image(416, 416, 3);
  sq.boxes = {{5, 6, 7, 8}};
  sq.labels = {0};
  Sample rq = resize_to(sq, 416);
  CHECK(images_equal(rq.image, sq.image));
  CHECK(rq.boxes[0].x1 == 5.0);

  CHECK_THROWS_AS(resize_to(s, 100), std::invalid_argument);
}

TEST_CASE("hflip involution and mirrored boxes") {
  Sample s;
  s.image = random_image(100, 50, 4);
  s.boxes = {{10, 0, 20, 10}};
  s.labels = {1};
  Sample f = hflip(s);
  CHECK(f.boxes[0].x1 == 80.0);
  CHECK(f.boxes[0].x2 == 90.0);
  CHECK(f.boxes[0].y1 == 0.0);
  Sample ff = hflip(f);
  CHECK(images_equal(ff.image, s.image));
  CHECK(ff.boxes[0].x1 == s.boxes[0].x1);
  CHECK(ff.boxes[0].x2 == s.boxes[0].x2);

  Sample vv = vflip(vflip(s));
  CHECK(images_equal(vv.image, s.image));
}

TEST_CASE("augment with neutral parameters is the identity") {
  Sample s;
  s.image = random_image(64, 64, 5);
  s.boxes = {{8, 8, 40, 40}};
  s.labels = {2};
  AugmentationConfig cfg;
  cfg.hflip_p = 0.0;
  cfg.vflip_p = 0.0;
  cfg.crop_max_frac = 0.0;
  cfg.brightness_lo = cfg.brightness_hi = 1.0;
  cfg.exposure_lo = cfg.exposure_hi = 1.0;
  SplitMix64 rng(6);
  Sample out = augment(s, cfg, rng);
  CHECK(images_equal(out.image, s.image));
  CHECK(out.boxes[0].x1 == 8.0);
}

TEST_CASE("augment keeps boxes inside bounds and is rng-deterministic") {
  Sample s;
  s.image = random_image(96, 80, 7);
  s.boxes = {{0, 0, 30, 30}, {50, 40, 90, 75}, {4, 60, 10, 70}};
  s.labels = {0, 1, 2};
  AugmentationConfig cfg;  // defaults: flips, crop 0.15, light jitter
  for (uint64_t seed = 0; seed < 20; ++seed) {
    SplitMix64 rng(seed);
    Sample out = augment(s, cfg, rng);
    CHECK(out.image.width == 96);
    CHECK(out.image.height == 80);
    CHECK(out.boxes.size() <= s.boxes.size());
    CHECK(out.boxes.size() == out.labels.size());
    for (const auto& b : out.boxes) {
      CHECK(b.x1 >= 0.0);
      CHECK(b.y1 >= 0.0);
      CHECK(b.x2 <= 96.0);
      CHECK(b.y2 <= 80.0);
      CHECK(b.x2 >= b.x1);
      CHECK(b.y2 >= b.y1);
    }
    SplitMix64 rng2(seed);
    Sample rep = augment(s, cfg, rng2);
    CHECK(images_equal(rep.image, out.image));
    CHECK(rep.boxes.size() == out.boxes.size());
  }
}

TEST_CASE("normalization constants and HWC->CHW order") {
  Image8 img;
  img.width = 2;
  img.height = 2;
  img.pixels.assign(12, 0);
  img.at(0, 0, 0) = 255;
  // 255 * mean(ch1) rounded: 0.456*255 = 116.28 -> use 116 and check near 0.
  img.at(0, 1, 1) = 116;
  Tensor t = normalize_image(img);
  REQUIRE(t.shape() == std::vector<int64_t>{3, 2, 2});
  CHECK(t.data()[0] == doctest::Approx((1.0 - 0.485) / 0.229).epsilon(1e-12));
  // Channel 1, pixel (0,1) lives at plane 1, offset 1.
  CHECK(t.data()[4 + 1] ==
        doctest::Approx((116.0 / 255 - 0.456) / 0.224).epsilon(1e-9));
  CHECK(std::fabs(t.data()[4 + 1]) < 0.01);
  // Everything else is the zero-pixel constant of its channel.
  CHECK(t.data()[1] == doctest::Approx((0.0 - 0.485) / 0.229));
  CHECK(t.data()[8] == doctest::Approx((0.0 - 0.406) / 0.225));
}

TEST_CASE("synthetic generator: determinism, structure and size bands") {
  const Dataset a = synth_generate(12, 99, 128);
  const Dataset b = synth_generate(12, 99, 128);
  REQUIRE(a.samples.size() == 12);
  CHECK(a.class_names == default_class_names());
  for (size_t i = 0; i < a.samples.size(); ++i) {
    CHECK(images_equal(a.samples[i].image, b.samples[i].image));
    CHECK(a.samples[i].boxes.size() == b.samples[i].boxes.size());
  }

  int rbc_total = 0;
  for (const auto& s : a.samples) {
    double min_wbc = 1e30, max_plt = -1;
    int rbc = 0;
    for (size_t i = 0; i < s.boxes.size(); ++i) {
      const Box& box = s.boxes[i];
      CHECK(box.x1 >= 0.0);
      CHECK(box.y1 >= 0.0);
      CHECK(box.x2 <= 128.0);
      CHECK(box.y2 <= 128.0);
      if (s.labels[i] == 2) min_wbc = std::min(min_wbc, box.area());
      if (s.labels[i] == 0) max_plt = std::max(max_plt, box.area());
      if (s.labels[i] == 1) ++rbc;
    }
    rbc_total += rbc;
    CHECK(rbc >= 5);
    CHECK(rbc <= 15);
    if (max_plt >= 0 && min_wbc < 1e30) CHECK(max_plt < min_wbc);
  }
  CHECK(rbc_total > 0);

  // A different seed changes the pixels.
  const Dataset c = synth_generate(1, 100, 128);
  CHECK_FALSE(images_equal(c.samples[0].image, a.samples[0].image));
}

TEST_CASE("save_dataset writes ppm files plus loadable annotations") {
  const auto dir = temp_dir("bcdet_synthset");
  const Dataset ds = synth_generate(4, 5, 64);
  save_dataset(dir.string(), ds);
  CHECK(fs::exists(dir / "images" / "1.ppm"));
  CHECK(fs::exists(dir / "images" / "4.ppm"));
  Dataset back =
      read_coco_json((dir / "annotations.json").string(), (dir / "images").string());
  REQUIRE(back.samples.size() == 4);
  CHECK(images_equal(back.samples[0].image, ds.samples[0].image));
  size_t total_boxes = 0, total_back = 0;
  for (const auto& s : ds.samples) total_boxes += s.boxes.size();
  for (const auto& s : back.samples) total_back += s.boxes.size();
  CHECK(total_boxes == total_back);
  fs::remove_all(dir);
}

TEST_CASE("subset_by_ids picks samples in id order") {
  const Dataset ds = synth_generate(5, 1, 64);
  const Dataset sub = subset_by_ids(ds, {4, 2});
  REQUIRE(sub.samples.size() == 2);
  CHECK(sub.samples[0].image_id == 4);
  CHECK(sub.samples[1].image_id == 2);
  CHECK_THROWS_AS(subset_by_ids(ds, {99}), std::invalid_argument);
}
