#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "servograsp/geometry.hpp"

namespace sg {

// Gripper pose in the robot frame: planar position, height above the table
// and yaw about the vertical axis.
struct Pose {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double theta = 0.0;  // (-pi, pi]

  Vec2 xy() const { return {x, y}; }
};

// Task-space displacement: translation plus a sine-cosine encoding of the
// yaw change. The null command is (0, 0, 0, 0, 1).
struct MotorCommand {
  double dx = 0.0;
  double dy = 0.0;
  double dz = 0.0;
  double sin_dtheta = 0.0;
  double cos_dtheta = 1.0;

  static MotorCommand null() { return {0.0, 0.0, 0.0, 0.0, 1.0}; }

  static MotorCommand encode(double dx, double dy, double dz, double dtheta) {
    return {dx, dy, dz, std::sin(dtheta), std::cos(dtheta)};
  }

  double dtheta() const { return std::atan2(sin_dtheta, cos_dtheta); }

  bool is_valid(double tol = 1e-9) const {
    double s = sin_dtheta * sin_dtheta + cos_dtheta * cos_dtheta;
    return std::isfinite(dx) && std::isfinite(dy) && std::isfinite(dz) &&
           std::abs(s - 1.0) <= tol;
  }
};

// Dense intensity grid in [0, 1], row-major (row, col, channel).
struct Image {
  int height = 0;
  int width = 0;
  int channels = 1;
  std::vector<float> data;

  static Image zeros(int h, int w, int c) {
    Image img;
    img.height = h;
    img.width = w;
    img.channels = c;
    img.data.assign(static_cast<size_t>(h) * w * c, 0.0f);
    return img;
  }

  float& at(int r, int c, int ch = 0) {
    return data[(static_cast<size_t>(r) * width + c) * channels + ch];
  }
  float at(int r, int c, int ch = 0) const {
    return data[(static_cast<size_t>(r) * width + c) * channels + ch];
  }
  size_t size() const { return data.size(); }
  bool same_shape(const Image& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
};

// Compact storage for recorded episodes: intensities quantized to 1/255.
struct Image8 {
  int height = 0;
  int width = 0;
  int channels = 1;
  std::vector<uint8_t> data;

  static Image8 from(const Image& img);
  Image to_image() const;
  bool operator==(const Image8&) const = default;
};

inline Image8 Image8::from(const Image& img) {
  Image8 out;
  out.height = img.height;
  out.width = img.width;
  out.channels = img.channels;
  out.data.resize(img.data.size());
  for (size_t i = 0; i < img.data.size(); ++i) {
    float v = img.data[i];
    v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
    out.data[i] = static_cast<uint8_t>(v * 255.0f + 0.5f);
  }
  return out;
}

inline Image Image8::to_image() const {
  Image out;
  out.height = height;
  out.width = width;
  out.channels = channels;
  out.data.resize(data.size());
  for (size_t i = 0; i < data.size(); ++i) {
    out.data[i] = static_cast<float>(data[i]) / 255.0f;
  }
  return out;
}

struct GraspOutcome {
  std::optional<int> grasped_object;
  double final_aperture = 0.0;
};

}  // namespace sg
