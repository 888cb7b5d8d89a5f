#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

#include "bcdet/data.hpp"
#include "json.hpp"

namespace bcdet {

using ordered_json = nlohmann::ordered_json;

void write_coco_json(const std::string& path, const Dataset& dataset) {
  ordered_json root;
  root["images"] = ordered_json::array();
  root["annotations"] = ordered_json::array();
  root["categories"] = ordered_json::array();

  for (const auto& s : dataset.samples) {
    std::string file_name =
        s.source_path.empty()
            ? std::to_string(s.image_id) + ".ppm"
            : std::filesystem::path(s.source_path).filename().string();
    root["images"].push_back({{"id", s.image_id},
                              {"file_name", file_name},
                              {"width", s.image.width},
                              {"height", s.image.height}});
  }

  int ann_id = 1;
  for (const auto& s : dataset.samples) {
    for (size_t i = 0; i < s.boxes.size(); ++i) {
      const Box& b = s.boxes[i];
      root["annotations"].push_back(
          {{"id", ann_id++},
           {"image_id", s.image_id},
           {"category_id", s.labels[i] + 1},
           {"bbox", {b.x1, b.y1, b.width(), b.height()}},
           {"area", b.area()},
           {"iscrowd", 0}});
    }
  }

  for (size_t i = 0; i < dataset.class_names.size(); ++i)
    root["categories"].push_back(
        {{"id", static_cast<int>(i) + 1}, {"name", dataset.class_names[i]}});

  std::ofstream os(path);
  if (!os) throw std::runtime_error("coco: cannot write " + path);
  os << root.dump(2) << "\n";
}

Dataset read_coco_json(const std::string& path,
                       const std::string& images_dir) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("coco: cannot open " + path);
  ordered_json root;
  try {
    is >> root;
  } catch (const std::exception& e) {
    throw std::runtime_error("coco: bad JSON in " + path + ": " + e.what());
  }
  for (const char* key : {"images", "annotations", "categories"})
    if (!root.contains(key))
      throw std::runtime_error("coco: missing key '" + std::string(key) +
                               "' in " + path);

  Dataset ds;
  // Categories sorted by id define the class-id order.
  std::vector<std::pair<int, std::string>> cats;
  for (const auto& c : root["categories"])
    cats.emplace_back(c.at("id").get<int>(), c.at("name").get<std::string>());
  std::sort(cats.begin(), cats.end());
  std::map<int, int> cat_to_class;
  for (size_t i = 0; i < cats.size(); ++i) {
    cat_to_class[cats[i].first] = static_cast<int>(i);
    ds.class_names.push_back(cats[i].second);
  }

  std::map<int, size_t> sample_index;
  for (const auto& im : root["images"]) {
    Sample s;
    s.image_id = im.at("id").get<int>();
    s.source_path = im.at("file_name").get<std::string>();
    s.image.width = im.at("width").get<int>();
    s.image.height = im.at("height").get<int>();
    if (!images_dir.empty()) {
      const auto full = std::filesystem::path(images_dir) / s.source_path;
      s.image = read_ppm(full.string());
      if (s.image.width != im.at("width").get<int>() ||
          s.image.height != im.at("height").get<int>())
        throw std::runtime_error("coco: image size mismatch for " +
                                 full.string());
    }
    sample_index[s.image_id] = ds.samples.size();
    ds.samples.push_back(std::move(s));
  }

  for (const auto& a : root["annotations"]) {
    const int image_id = a.at("image_id").get<int>();
    auto it = sample_index.find(image_id);
    if (it == sample_index.end())
      throw std::runtime_error("coco: annotation references unknown image " +
                               std::to_string(image_id));
    const auto& bbox = a.at("bbox");
    if (bbox.size() != 4)
      throw std::runtime_error("coco: bbox must have 4 entries");
    const double x = bbox[0].get<double>(), y = bbox[1].get<double>(),
                 w = bbox[2].get<double>(), h = bbox[3].get<double>();
    if (w < 0 || h < 0)
      throw std::runtime_error("coco: bbox with negative width/height");
    auto cit = cat_to_class.find(a.at("category_id").get<int>());
    if (cit == cat_to_class.end())
      throw std::runtime_error("coco: unknown category_id " +
                               std::to_string(a.at("category_id").get<int>()));
    Sample& s = ds.samples[it->second];
    s.boxes.push_back({x, y, x + w, y + h});
    s.labels.push_back(cit->second);
  }
  return ds;
}

void save_dataset(const std::string& dir, const Dataset& dataset) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");
  Dataset named = dataset;
  for (auto& s : named.samples) {
    const std::string file_name = std::to_string(s.image_id) + ".ppm";
    write_ppm((fs::path(dir) / "images" / file_name).string(), s.image);
    s.source_path = file_name;
  }
  write_coco_json((fs::path(dir) / "annotations.json").string(), named);
}

Dataset subset_by_ids(const Dataset& d, const std::vector<int>& ids) {
  Dataset out;
  out.class_names = d.class_names;
  std::map<int, const Sample*> by_id;
  for (const auto& s : d.samples) by_id[s.image_id] = &s;
  for (int id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end())
      throw std::invalid_argument("subset: unknown image id " +
                                  std::to_string(id));
    out.samples.push_back(*it->second);
  }
  return out;
}

}  // namespace bcdet
