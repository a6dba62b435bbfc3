#pragma once

#include <string>
#include <vector>

#include "volflow/codec.hpp"

namespace volflow {

// Binary PGM (P5). Values are clamped from [0,1] to 0..255.
void write_pgm(const std::string& path, const std::vector<float>& gray, int height, int width);

void write_slice_pgm(const std::string& path, const SliceImage& slice);

// Axial / sagittal / coronal panels of a volume, side by side.
struct Montage {
  int height = 0, width = 0;
  std::vector<float> gray;
  static constexpr int kPanels = 3;
  static constexpr int kGap = 4;
};

Montage make_montage(const std::vector<SliceImage>& volume);
void write_montage_pgm(const std::string& path, const std::vector<SliceImage>& volume);

}  // namespace volflow
