#pragma once

#include <vector>

#include "sdid/data/synth.hpp"
#include "sdid/ndgrad/tensor.hpp"

namespace sdid::data {

/// Stacks same-shaped images into a [B,C,H,W] tensor.
template <typename T>
nd::Tensor<T> stack_images(const std::vector<const Image*>& images) {
  if (images.empty()) throw DimensionError("stack_images needs at least one image");
  const auto& f = *images.front();
  nd::Buffer<T> v;
  v.reserve(images.size() * f.size());
  for (const Image* img : images) {
    if (img->channels != f.channels || img->height != f.height || img->width != f.width)
      throw DimensionError("stack_images: images differ in shape");
    for (float p : img->pixels) v.push_back(static_cast<T>(p));
  }
  return nd::Tensor<T>::from({images.size(), f.channels, f.height, f.width}, std::move(v));
}

template <typename T>
nd::Tensor<T> stack_images(const std::vector<Image>& images) {
  std::vector<const Image*> p;
  for (const auto& img : images) p.push_back(&img);
  return stack_images<T>(p);
}

/// Batch element b of a [B,C,H,W] tensor.
template <typename T>
Image image_at(const nd::Tensor<T>& t, std::size_t b) {
  if (t.ndim() != 4 || b >= t.dim(0)) throw DimensionError("image_at: bad batch tensor or index");
  Image img(t.dim(1), t.dim(2), t.dim(3));
  const auto d = t.data().subspan(b * img.size(), img.size());
  for (std::size_t i = 0; i < img.size(); ++i) img.pixels[i] = static_cast<float>(d[i]);
  return img;
}

}  // namespace sdid::data
