#include "volflow/imageio.hpp"

#include <algorithm>
#include <fstream>

namespace volflow {

void write_pgm(const std::string& path, const std::vector<float>& gray, int height, int width) {
  if (gray.size() != static_cast<size_t>(height) * width)
    throw_shape("write_pgm: buffer does not match extents");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw_io("cannot open '" + path + "' for writing");
  out << "P5\n" << width << " " << height << "\n255\n";
  std::vector<unsigned char> bytes(gray.size());
  for (size_t i = 0; i < gray.size(); ++i) {
    float v = std::clamp(gray[i], 0.0f, 1.0f);
    bytes[i] = static_cast<unsigned char>(v * 255.0f + 0.5f);
  }
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw_io("write failed on '" + path + "'");
}

void write_slice_pgm(const std::string& path, const SliceImage& slice) {
  std::vector<float> gray(static_cast<size_t>(slice.height) * slice.width);
  for (int y = 0; y < slice.height; ++y)
    for (int x = 0; x < slice.width; ++x)
      gray[static_cast<size_t>(y) * slice.width + x] =
          (slice.at(y, x, 0) + slice.at(y, x, 1) + slice.at(y, x, 2)) / 3.0f;
  write_pgm(path, gray, slice.height, slice.width);
}

Montage make_montage(const std::vector<SliceImage>& volume) {
  if (volume.empty()) throw_usage("make_montage: empty volume");
  const int n = static_cast<int>(volume.size());
  const int h = volume[0].height, w = volume[0].width;

  // axial: middle slice (h x w); sagittal: x = w/2 plane (n x h);
  // coronal: y = h/2 plane (n x w)
  Montage m;
  m.height = std::max(h, n);
  m.width = w + Montage::kGap + h + Montage::kGap + w;
  m.gray.assign(static_cast<size_t>(m.height) * m.width, 0.0f);

  auto put = [&](int y, int x, float v) {
    m.gray[static_cast<size_t>(y) * m.width + x] = v;
  };
  auto gray_at = [&](int k, int y, int x) {
    const SliceImage& s = volume[static_cast<size_t>(k)];
    return (s.at(y, x, 0) + s.at(y, x, 1) + s.at(y, x, 2)) / 3.0f;
  };

  const int mid_k = n / 2, mid_x = w / 2, mid_y = h / 2;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) put(y, x, gray_at(mid_k, y, x));
  int off = w + Montage::kGap;
  for (int k = 0; k < n; ++k)
    for (int y = 0; y < h; ++y) put(k, off + y, gray_at(k, y, mid_x));
  off += h + Montage::kGap;
  for (int k = 0; k < n; ++k)
    for (int x = 0; x < w; ++x) put(k, off + x, gray_at(k, mid_y, x));
  return m;
}

void write_montage_pgm(const std::string& path, const std::vector<SliceImage>& volume) {
  Montage m = make_montage(volume);
  write_pgm(path, m.gray, m.height, m.width);
}

}  // namespace volflow
