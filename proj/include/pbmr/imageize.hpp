#pragma once

// Sensors-to-image conversion. Each row is scaled by its sensor's absolute
// range from the manifest, never by per-sample statistics, so the mapping is
// invertible and comparable across samples.

#include <cmath>
#include <string>
#include <vector>

#include "pbmr/ingest.hpp"

namespace pbmr {

/// channels x sensors x time_steps, every element in [0, 1]; all channels
/// are copies of the same normalized grid.
struct ImageTensor {
  std::string sample_id;
  std::size_t channels = 1;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  std::size_t plane() const { return rows * cols; }
  double at(std::size_t c, std::size_t i, std::size_t j) const { return data[(c * rows + i) * cols + j]; }
};

inline constexpr double kDenormalizeTolerance = 1e-9;

inline ImageTensor normalize(const SampleFrame& frame, const DatasetManifest& manifest, std::size_t channels = 1) {
  if (channels < 1) throw ValidationError("normalize: channels must be >= 1");
  if (frame.rows != manifest.rows() || frame.cols != manifest.time_steps) {
    throw ValidationError("normalize: sample '" + frame.sample_id + "' is " + std::to_string(frame.rows) + "x" +
                          std::to_string(frame.cols) + ", manifest expects " + std::to_string(manifest.rows()) + "x" +
                          std::to_string(manifest.time_steps));
  }
  if (frame.missing_count() != 0) {
    throw ValidationError("normalize: sample '" + frame.sample_id + "' still has " +
                          std::to_string(frame.missing_count()) + " missing cells; forward_fill first");
  }
  ImageTensor img;
  img.sample_id = frame.sample_id;
  img.channels = channels;
  img.rows = frame.rows;
  img.cols = frame.cols;
  img.data.resize(channels * img.plane());
  for (std::size_t i = 0; i < frame.rows; ++i) {
    const auto& s = manifest.sensors[i];
    const double width = s.width();
    for (std::size_t j = 0; j < frame.cols; ++j) img.data[i * frame.cols + j] = (frame.at(i, j) - s.sigma) / width;
  }
  for (std::size_t c = 1; c < channels; ++c)
    std::copy_n(img.data.begin(), img.plane(), img.data.begin() + static_cast<std::ptrdiff_t>(c * img.plane()));
  return img;
}

/// Inverse of normalize, read from channel 0.
inline SampleFrame denormalize(const ImageTensor& tensor, const DatasetManifest& manifest) {
  if (tensor.rows != manifest.rows() || tensor.cols != manifest.time_steps || tensor.channels < 1 ||
      tensor.data.size() != tensor.channels * tensor.plane()) {
    throw ValidationError("denormalize: tensor shape does not match manifest");
  }
  SampleFrame frame(tensor.sample_id, tensor.rows, tensor.cols);
  for (std::size_t i = 0; i < tensor.rows; ++i) {
    const auto& s = manifest.sensors[i];
    for (std::size_t j = 0; j < tensor.cols; ++j) {
      const double v = tensor.at(0, i, j);
      if (!(v >= -kDenormalizeTolerance && v <= 1.0 + kDenormalizeTolerance)) {
        throw ValidationError("denormalize: element (" + std::to_string(i) + ", " + std::to_string(j) + ") = " +
                              std::to_string(v) + " is outside [0, 1]");
      }
      frame.at(i, j) = v * s.width() + s.sigma;
    }
  }
  return frame;
}

} // namespace pbmr
