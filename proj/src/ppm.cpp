#include <fstream>
#include <stdexcept>
#include <string>

#include "bcdet/data.hpp"

namespace bcdet {

Image8 read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("ppm: cannot open " + path);
  std::string magic;
  is >> magic;
  if (magic != "P6")
    throw std::runtime_error("ppm: unsupported format '" + magic + "' in " +
                             path + " (only binary P6)");
  // Header tokens may be separated by whitespace or comment lines.
  auto next_int = [&]() -> int {
    for (;;) {
      is >> std::ws;
      if (is.peek() == '#') {
        std::string comment;
        std::getline(is, comment);
        continue;
      }
      int v;
      if (!(is >> v)) throw std::runtime_error("ppm: malformed header in " + path);
      return v;
    }
  };
  Image8 img;
  img.width = next_int();
  img.height = next_int();
  const int maxval = next_int();
  if (maxval != 255)
    throw std::runtime_error("ppm: unsupported maxval " +
                             std::to_string(maxval) + " in " + path);
  if (img.width <= 0 || img.height <= 0)
    throw std::runtime_error("ppm: bad dimensions in " + path);
  is.get();  // single whitespace after maxval
  img.pixels.resize(static_cast<size_t>(img.width) * img.height * 3);
  is.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (!is) throw std::runtime_error("ppm: truncated pixel data in " + path);
  return img;
}

void write_ppm(const std::string& path, const Image8& image) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("ppm: cannot write " + path);
  os << "P6\n" << image.width << " " << image.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(image.pixels.data()),
           static_cast<std::streamsize>(image.pixels.size()));
  if (!os) throw std::runtime_error("ppm: write failed for " + path);
}

}  // namespace bcdet
