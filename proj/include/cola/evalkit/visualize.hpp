#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include "cola/model/cola.hpp"

namespace cola::evalkit {

// Viridis, sampled at 9 evenly spaced stops.
inline std::array<std::uint8_t, 3> colormap(float t) {
  static constexpr float stops[9][3] = {{68, 1, 84},    {71, 44, 122},  {59, 81, 139},
                                        {44, 113, 142}, {33, 144, 141}, {39, 173, 129},
                                        {92, 200, 99},  {170, 220, 50}, {253, 231, 37}};
  t = std::clamp(t, 0.0f, 1.0f) * 8.0f;
  const int i = std::min(7, static_cast<int>(t));
  const float f = t - static_cast<float>(i);
  std::array<std::uint8_t, 3> c{};
  for (int k = 0; k < 3; ++k) c[k] = static_cast<std::uint8_t>(std::lround(stops[i][k] * (1 - f) + stops[i + 1][k] * f));
  return c;
}

struct ComponentMaps {
  Image input;                   // canvas-sized
  std::vector<Image> attention;  // K maps upsampled to the canvas, summing to 1 per pixel
  std::vector<RgbImage> overlays;
  RgbImage panel;                // input + K overlays, left to right
};

inline RgbImage gray_to_rgb(const Image& img) {
  RgbImage out(img.width, img.height);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const auto v = static_cast<std::uint8_t>(std::lround((1.0f - std::clamp(img.pixels[i], 0.0f, 1.0f)) * 255.0f));
    out.rgb[3 * i] = out.rgb[3 * i + 1] = out.rgb[3 * i + 2] = v;
  }
  return out;
}

inline RgbImage overlay(const Image& input, const Image& heat, double alpha = 0.6) {
  RgbImage out = gray_to_rgb(input);
  for (std::size_t i = 0; i < heat.pixels.size(); ++i) {
    const auto c = colormap(heat.pixels[i]);
    for (int k = 0; k < 3; ++k)
      out.rgb[3 * i + k] =
          static_cast<std::uint8_t>(std::lround((1 - alpha) * out.rgb[3 * i + k] + alpha * static_cast<double>(c[k])));
  }
  return out;
}

inline RgbImage hconcat(const std::vector<RgbImage>& parts) {
  int w = 0;
  const int h = parts.front().height;
  for (const auto& p : parts) w += p.width;
  RgbImage out(w, h);
  int x0 = 0;
  for (const auto& p : parts) {
    for (int y = 0; y < h; ++y)
      std::copy_n(&p.rgb[static_cast<std::size_t>(y) * p.width * 3], p.width * 3,
                  &out.rgb[(static_cast<std::size_t>(y) * w + x0) * 3]);
    x0 += p.width;
  }
  return out;
}

// Final slot attention of each component, reshaped to the backbone grid and
// upsampled bilinearly to the input canvas.
template <class T>
ComponentMaps component_maps(model::ColaModel<T>& m, const Image& image, const Mat<T>& eps) {
  const auto cs = m.encode(image, eps);
  const int g = m.grid_side();
  ComponentMaps out;
  out.input = image;
  for (Eigen::Index k = 0; k < cs.attention.rows(); ++k) {
    std::vector<float> grid(static_cast<std::size_t>(g) * g);
    for (int i = 0; i < g * g; ++i) grid[static_cast<std::size_t>(i)] = static_cast<float>(cs.attention(k, i));
    Image up(image.width, image.height);
    up.pixels = resize_bilinear(grid, g, g, image.width, image.height);
    out.attention.push_back(std::move(up));
  }
  std::vector<RgbImage> parts{gray_to_rgb(image)};
  for (const auto& a : out.attention) {
    out.overlays.push_back(overlay(image, a));
    parts.push_back(out.overlays.back());
  }
  out.panel = hconcat(parts);
  return out;
}

// Writes component_<k>.png for every slot and panel.png into `out_dir`.
template <class T>
ComponentMaps visualize_components(model::ColaModel<T>& m, const Image& image, const std::filesystem::path& out_dir,
                                   const Mat<T>& eps) {
  auto maps = component_maps(m, image, eps);
  std::filesystem::create_directories(out_dir);
  for (std::size_t k = 0; k < maps.overlays.size(); ++k)
    write_png(out_dir / ("component_" + std::to_string(k) + ".png"), maps.overlays[k]);
  write_png(out_dir / "panel.png", maps.panel);
  return maps;
}

}  // namespace cola::evalkit
