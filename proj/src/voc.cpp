#include <algorithm>
#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <filesystem>
#include <stdexcept>

#include "bcdet/data.hpp"

namespace bcdet {

const std::vector<std::string>& default_class_names() {
  static const std::vector<std::string> names = {"Platelets", "RBC", "WBC"};
  return names;
}

int class_id_from_name(const std::string& name,
                       const std::vector<std::string>& class_names) {
  auto lower = [](std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    return s;
  };
  const std::string want = lower(name);
  for (size_t i = 0; i < class_names.size(); ++i)
    if (lower(class_names[i]) == want) return static_cast<int>(i);
  throw std::invalid_argument("unknown class name '" + name + "'");
}

Sample parse_voc_xml(const std::string& path,
                     const std::vector<std::string>& class_names) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_xml(path, tree);
  } catch (const pt::xml_parser_error& e) {
    throw std::runtime_error("voc: malformed XML in " + path + ": " +
                             e.message());
  }
  const auto ann = tree.get_child_optional("annotation");
  if (!ann) throw std::runtime_error("voc: missing <annotation> in " + path);

  Sample s;
  s.source_path = ann->get<std::string>("filename", path);
  s.image.width = ann->get<int>("size.width", 0);
  s.image.height = ann->get<int>("size.height", 0);
  if (s.image.width <= 0 || s.image.height <= 0)
    throw std::runtime_error("voc: missing or invalid <size> in " + path);

  for (const auto& [key, node] : *ann) {
    if (key != "object") continue;
    const auto name = node.get_optional<std::string>("name");
    if (!name) throw std::runtime_error("voc: object without <name> in " + path);
    const auto bb = node.get_child_optional("bndbox");
    if (!bb)
      throw std::runtime_error("voc: object without <bndbox> in " + path);
    double xmin, ymin, xmax, ymax;
    try {
      xmin = bb->get<double>("xmin");
      ymin = bb->get<double>("ymin");
      xmax = bb->get<double>("xmax");
      ymax = bb->get<double>("ymax");
    } catch (const pt::ptree_error&) {
      throw std::runtime_error("voc: incomplete <bndbox> in " + path);
    }
    if (xmax <= xmin || ymax <= ymin)
      throw std::runtime_error("voc: degenerate bndbox in " + path);
    // VOC pixel coordinates are 1-based.
    s.boxes.push_back({xmin - 1, ymin - 1, xmax - 1, ymax - 1});
    s.labels.push_back(class_id_from_name(*name, class_names));
  }
  return s;
}

Dataset voc_dir_to_dataset(const std::string& dir,
                           const std::vector<std::string>& class_names) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir))
    throw std::runtime_error("voc: not a directory: " + dir);
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".xml")
      files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  if (files.empty())
    throw std::runtime_error("voc: no .xml files under " + dir);
  Dataset ds;
  ds.class_names = class_names;
  int next_id = 1;
  for (const auto& f : files) {
    Sample s = parse_voc_xml(f, class_names);
    s.image_id = next_id++;
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace bcdet
