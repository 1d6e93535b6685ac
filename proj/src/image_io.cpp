#include "iris/image_io.hpp"

#include <png.h>
// jpeglib.h expects stdio declarations first.
#include <cstdio>
#include <jpeglib.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "iris/error.hpp"

namespace iris {

namespace fs = std::filesystem;

namespace {

std::vector<unsigned char> slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void dump(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

unsigned char to_byte(float v) {
  const float r = std::nearbyint(std::clamp(v, 0.0f, 255.0f));
  return static_cast<unsigned char>(r);
}

// Interleaved HWC bytes to planar [C,H,W].
Tensor planar(const std::vector<unsigned char>& px, int h, int w, int c) {
  Tensor t({c, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch)
        t[(static_cast<std::size_t>(ch) * h + y) * w + x] = px[(static_cast<std::size_t>(y) * w + x) * c + ch];
  return t;
}

Tensor decode_png(const fs::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str()))
    throw IoError("cannot decode PNG " + path.string() + ": " + image.message);
  const bool grey = (image.format & PNG_FORMAT_FLAG_COLOR) == 0;
  image.format = grey ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  const int c = grey ? 1 : 3;
  std::vector<unsigned char> px(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, px.data(), 0, nullptr)) {
    png_image_free(&image);
    throw IoError("cannot decode PNG " + path.string() + ": " + image.message);
  }
  return planar(px, static_cast<int>(image.height), static_cast<int>(image.width), c);
}

Tensor decode_jpeg(const fs::path& path) {
  const auto bytes = slurp(path);
  jpeg_decompress_struct cinfo;
  jpeg_error_mgr jerr;
  cinfo.err = jpeg_std_error(&jerr);
  jerr.error_exit = [](j_common_ptr info) {
    char msg[JMSG_LENGTH_MAX];
    (*info->err->format_message)(info, msg);
    throw IoError(std::string("JPEG decode failed: ") + msg);
  };
  jpeg_create_decompress(&cinfo);
  try {
    jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = cinfo.num_components == 1 ? JCS_GRAYSCALE : JCS_RGB;
    jpeg_start_decompress(&cinfo);
    const int w = static_cast<int>(cinfo.output_width), h = static_cast<int>(cinfo.output_height);
    const int c = cinfo.output_components;
    std::vector<unsigned char> px(static_cast<std::size_t>(w) * h * c);
    while (cinfo.output_scanline < cinfo.output_height) {
      unsigned char* row = px.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * c;
      jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return planar(px, h, w, c);
  } catch (...) {
    jpeg_destroy_decompress(&cinfo);
    throw;
  }
}

std::uint32_t le32(const unsigned char* p) { return p[0] | (p[1] << 8) | (p[2] << 16) | (std::uint32_t(p[3]) << 24); }
std::uint16_t le16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

Tensor decode_bmp(const fs::path& path) {
  const auto b = slurp(path);
  if (b.size() < 54 || b[0] != 'B' || b[1] != 'M') throw IoError("not a BMP file: " + path.string());
  const std::uint32_t data_off = le32(&b[10]);
  const std::uint32_t header = le32(&b[14]);
  const int w = static_cast<int>(le32(&b[18]));
  const int raw_h = static_cast<int>(le32(&b[22]));
  const int bpp = le16(&b[28]);
  const std::uint32_t compression = le32(&b[30]);
  if (compression != 0) throw IoError("compressed BMP not supported: " + path.string());
  if (bpp != 8 && bpp != 24 && bpp != 32) throw IoError("unsupported BMP depth in " + path.string());
  const bool bottom_up = raw_h > 0;
  const int h = std::abs(raw_h);
  const std::size_t stride = ((static_cast<std::size_t>(w) * bpp + 31) / 32) * 4;
  if (data_off + stride * h > b.size()) throw IoError("truncated BMP: " + path.string());

  std::vector<std::array<unsigned char, 3>> palette;
  bool grey_palette = true;
  if (bpp == 8) {
    std::uint32_t colors = le32(&b[46]);
    if (colors == 0) colors = 256;
    const std::size_t pal_off = 14 + header;
    for (std::uint32_t i = 0; i < colors && pal_off + 4 * i + 3 < b.size(); ++i) {
      const unsigned char* e = &b[pal_off + 4 * i];
      palette.push_back({e[2], e[1], e[0]});
      grey_palette = grey_palette && e[0] == e[1] && e[1] == e[2];
    }
  }
  const int c = (bpp == 8 && grey_palette) ? 1 : 3;
  std::vector<unsigned char> px(static_cast<std::size_t>(w) * h * c);
  for (int y = 0; y < h; ++y) {
    const unsigned char* row = &b[data_off + stride * static_cast<std::size_t>(bottom_up ? h - 1 - y : y)];
    for (int x = 0; x < w; ++x) {
      unsigned char* out = &px[(static_cast<std::size_t>(y) * w + x) * c];
      if (bpp == 8) {
        const unsigned char idx = row[x];
        const auto rgb = idx < palette.size() ? palette[idx] : std::array<unsigned char, 3>{idx, idx, idx};
        if (c == 1)
          out[0] = rgb[0];
        else
          std::copy(rgb.begin(), rgb.end(), out);
      } else {
        const unsigned char* p = row + static_cast<std::size_t>(x) * (bpp / 8);
        out[0] = p[2];
        out[1] = p[1];
        out[2] = p[0];
      }
    }
  }
  return planar(px, h, w, c);
}

// Reads whitespace/comment separated header tokens of a netpbm file.
struct PnmHeader {
  std::string magic;
  int w = 0, h = 0, maxval = 1;
  std::size_t data_off = 0;
};

PnmHeader parse_pnm(const std::vector<unsigned char>& b, bool has_maxval, const fs::path& path) {
  PnmHeader hd;
  std::size_t i = 0;
  auto token = [&]() {
    std::string t;
    while (i < b.size()) {
      if (b[i] == '#') {
        while (i < b.size() && b[i] != '\n') ++i;
      } else if (std::isspace(b[i])) {
        ++i;
      } else {
        break;
      }
    }
    while (i < b.size() && !std::isspace(b[i])) t.push_back(static_cast<char>(b[i++]));
    if (t.empty()) throw IoError("truncated netpbm header in " + path.string());
    return t;
  };
  hd.magic = token();
  try {
    hd.w = std::stoi(token());
    hd.h = std::stoi(token());
    if (has_maxval) hd.maxval = std::stoi(token());
  } catch (const std::logic_error&) {
    throw IoError("malformed netpbm header in " + path.string());
  }
  hd.data_off = i + 1;  // single whitespace byte after the header
  if (hd.w <= 0 || hd.h <= 0) throw IoError("bad netpbm extents in " + path.string());
  return hd;
}

Tensor decode_pnm(const fs::path& path) {
  const auto b = slurp(path);
  if (b.size() < 2) throw IoError("empty netpbm file " + path.string());
  const std::string magic{static_cast<char>(b[0]), static_cast<char>(b[1])};
  if (magic != "P5" && magic != "P6") throw IoError("unsupported netpbm variant " + magic + " in " + path.string());
  const auto hd = parse_pnm(b, true, path);
  if (hd.maxval != 255) throw IoError("only 8-bit netpbm images are supported: " + path.string());
  const int c = magic == "P5" ? 1 : 3;
  const std::size_t n = static_cast<std::size_t>(hd.w) * hd.h * c;
  if (hd.data_off + n > b.size()) throw IoError("truncated netpbm data in " + path.string());
  std::vector<unsigned char> px(b.begin() + static_cast<std::ptrdiff_t>(hd.data_off),
                                b.begin() + static_cast<std::ptrdiff_t>(hd.data_off + n));
  return planar(px, hd.h, hd.w, c);
}

std::string lower_ext(const fs::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  return e;
}

}  // namespace

Tensor read_image(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("image file not found: " + path.string());
  const std::string ext = lower_ext(path);
  if (ext == ".png") return decode_png(path);
  if (ext == ".jpg" || ext == ".jpeg") return decode_jpeg(path);
  if (ext == ".bmp") return decode_bmp(path);
  if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") return decode_pnm(path);
  throw IoError("unsupported image format: " + path.string());
}

void write_png(const fs::path& path, const Tensor& image) {
  require(image.rank() == 3 && (image.dim(0) == 1 || image.dim(0) == 3),
          "write_png expects [1,H,W] or [3,H,W], got " + shape_str(image.shape()));
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  std::vector<unsigned char> px(static_cast<std::size_t>(c) * h * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch)
        px[(static_cast<std::size_t>(y) * w + x) * c + ch] = to_byte(image[(static_cast<std::size_t>(ch) * h + y) * w + x]);
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = c == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, px.data(), 0, nullptr))
    throw IoError("PNG encode failed for " + path.string() + ": " + img.message);
  std::string buf(size, '\0');
  if (!png_image_write_to_memory(&img, buf.data(), &size, 0, px.data(), 0, nullptr))
    throw IoError("PNG encode failed for " + path.string() + ": " + img.message);
  buf.resize(size);
  dump(path, buf);
}

void write_pbm(const fs::path& path, const Tensor& mask) {
  require(mask.rank() == 2, "write_pbm expects [H,W], got " + shape_str(mask.shape()));
  const int h = mask.dim(0), w = mask.dim(1);
  std::string out = "P4\n" + std::to_string(w) + " " + std::to_string(h) + "\n";
  const std::size_t row_bytes = (static_cast<std::size_t>(w) + 7) / 8;
  for (int y = 0; y < h; ++y) {
    std::string row(row_bytes, '\0');
    for (int x = 0; x < w; ++x)
      if (mask[static_cast<std::size_t>(y) * w + x] != 0.0f)
        row[static_cast<std::size_t>(x) / 8] = static_cast<char>(row[static_cast<std::size_t>(x) / 8] | (0x80 >> (x % 8)));
    out += row;
  }
  dump(path, out);
}

Tensor read_pbm(const fs::path& path) {
  const auto b = slurp(path);
  if (b.size() < 2 || b[0] != 'P' || b[1] != '4') throw IoError("not a binary PBM file: " + path.string());
  const auto hd = parse_pnm(b, false, path);
  const std::size_t row_bytes = (static_cast<std::size_t>(hd.w) + 7) / 8;
  if (hd.data_off + row_bytes * hd.h > b.size()) throw IoError("truncated PBM data in " + path.string());
  Tensor m({hd.h, hd.w});
  for (int y = 0; y < hd.h; ++y)
    for (int x = 0; x < hd.w; ++x) {
      const unsigned char byte = b[hd.data_off + row_bytes * y + static_cast<std::size_t>(x) / 8];
      m[static_cast<std::size_t>(y) * hd.w + x] = (byte >> (7 - x % 8)) & 1 ? 1.0f : 0.0f;
    }
  return m;
}

void write_npy(const fs::path& path, const Tensor& t) {
  std::string shape = "(";
  for (std::size_t i = 0; i < t.shape().size(); ++i) shape += (i ? ", " : "") + std::to_string(t.shape()[i]);
  shape += t.shape().size() == 1 ? ",)" : ")";
  std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': " + shape + ", }";
  const std::size_t unpadded = 10 + header.size() + 1;
  header += std::string((64 - unpadded % 64) % 64, ' ') + "\n";
  std::string out = "\x93NUMPY";
  out += '\x01';
  out += '\x00';
  const auto hlen = static_cast<std::uint16_t>(header.size());
  out += static_cast<char>(hlen & 0xff);
  out += static_cast<char>(hlen >> 8);
  out += header;
  const std::size_t off = out.size();
  out.resize(off + t.size() * 4);
  for (std::size_t i = 0; i < t.size(); ++i) {
    auto bits = std::bit_cast<std::uint32_t>(t[i]);
    for (int k = 0; k < 4; ++k) out[off + i * 4 + static_cast<std::size_t>(k)] = static_cast<char>((bits >> (8 * k)) & 0xff);
  }
  dump(path, out);
}

Tensor read_npy(const fs::path& path) {
  const auto b = slurp(path);
  if (b.size() < 10 || std::memcmp(b.data(), "\x93NUMPY", 6) != 0) throw IoError("not an .npy file: " + path.string());
  const std::size_t hlen = le16(&b[8]);
  if (10 + hlen > b.size()) throw IoError("truncated .npy header: " + path.string());
  const std::string header(b.begin() + 10, b.begin() + static_cast<std::ptrdiff_t>(10 + hlen));
  if (header.find("'<f4'") == std::string::npos || header.find("'fortran_order': False") == std::string::npos)
    throw IoError("only little-endian float32 C-order .npy is supported: " + path.string());
  const auto open = header.find('('), close = header.find(')');
  if (open == std::string::npos || close == std::string::npos) throw IoError("bad .npy shape: " + path.string());
  Shape shape;
  std::stringstream ss(header.substr(open + 1, close - open - 1));
  std::string item;
  while (std::getline(ss, item, ','))
    if (item.find_first_not_of(' ') != std::string::npos) shape.push_back(std::stoi(item));
  const std::size_t n = shape_numel(shape);
  if (10 + hlen + n * 4 > b.size()) throw IoError("truncated .npy data: " + path.string());
  Tensor t(shape);
  for (std::size_t i = 0; i < n; ++i) t[i] = std::bit_cast<float>(le32(&b[10 + hlen + i * 4]));
  return t;
}

}  // namespace iris
