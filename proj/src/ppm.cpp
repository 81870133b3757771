#include "cvit/ppm.hpp"

#include <fstream>

namespace cvit {

namespace {

// Skips PPM whitespace and '#' comments, then reads one unsigned decimal.
std::size_t read_header_int(std::istream& in, const char* what) {
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
      c = in.get();
    } else {
      break;
    }
  }
  if (c == EOF)
    throw TruncatedFileError(std::string("ppm: file ends before ") + what);
  if (c < '0' || c > '9')
    throw FormatError(std::string("ppm: expected ") + what +
                      ", found byte " + std::to_string(c));
  std::size_t value = 0;
  while (c >= '0' && c <= '9') {
    value = value * 10 + std::size_t(c - '0');
    c = in.get();
  }
  if (c != EOF) in.unget();
  return value;
}

}  // namespace

PpmImage read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open image file " + path);
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (in.gcount() != 2)
    throw TruncatedFileError("ppm: file shorter than its magic number");
  if (magic[0] != 'P' || magic[1] != '6')
    throw FormatError("ppm: not a binary P6 file (magic \"" +
                      std::string(magic, 2) + "\")");
  PpmImage img;
  img.width = read_header_int(in, "width");
  img.height = read_header_int(in, "height");
  const std::size_t maxval = read_header_int(in, "max value");
  if (img.width == 0 || img.height == 0)
    throw FormatError("ppm: zero-sized image");
  if (maxval == 0 || maxval > 255)
    throw FormatError("ppm: only 8-bit images supported, max value " +
                      std::to_string(maxval));
  const int sep = in.get();
  if (sep == EOF)
    throw TruncatedFileError("ppm: file ends before pixel data");
  if (sep != ' ' && sep != '\t' && sep != '\r' && sep != '\n')
    throw FormatError("ppm: header not terminated by whitespace");
  img.rgb.resize(img.width * img.height * 3);
  in.read(reinterpret_cast<char*>(img.rgb.data()),
          std::streamsize(img.rgb.size()));
  if (std::size_t(in.gcount()) != img.rgb.size())
    throw TruncatedFileError(
        "ppm: expected " + std::to_string(img.rgb.size()) +
        " pixel bytes, found " + std::to_string(in.gcount()));
  return img;
}

TensorT<float> image_to_tensor(const PpmImage& image, std::size_t target) {
  if (target == 0) throw ContractError("image_to_tensor: target must be > 0");
  if (image.rgb.size() != image.width * image.height * 3)
    throw ContractError("image_to_tensor: pixel buffer does not match size");
  // Scale factor that maps the short side onto `target`.
  const std::size_t short_side = std::min(image.width, image.height);
  const std::size_t rw = image.width * target / short_side;
  const std::size_t rh = image.height * target / short_side;
  const std::size_t x0 = (rw - target) / 2;
  const std::size_t y0 = (rh - target) / 2;
  std::vector<float> data(3 * target * target);
  for (std::size_t y = 0; y < target; ++y) {
    const std::size_t sy =
        std::min((y + y0) * image.height / rh, image.height - 1);
    for (std::size_t x = 0; x < target; ++x) {
      const std::size_t sx =
          std::min((x + x0) * image.width / rw, image.width - 1);
      const std::uint8_t* px = &image.rgb[(sy * image.width + sx) * 3];
      for (std::size_t c = 0; c < 3; ++c)
        data[(c * target + y) * target + x] = float(px[c]) / 255.0f;
    }
  }
  return TensorT<float>::from_data({1, 3, target, target}, std::move(data));
}

}  // namespace cvit
