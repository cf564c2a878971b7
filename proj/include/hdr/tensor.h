#pragma once

#include <vector>

#include <torch/torch.h>

#include "hdr/image.h"

namespace hdr {

// Value range of a tensor produced from / consumed as an Image.
enum class Range { Unit, Signed };  // [0, 1] or [-1, 1]

// (C, H, W) float tensor.
torch::Tensor to_tensor(const Image& image, Range range = Range::Signed);
// (N, C, H, W); all images must share one shape.
torch::Tensor to_batch(const std::vector<Image>& images, Range range = Range::Signed);
// (N, C, H, W) from pointers, so callers can batch without copying images first.
torch::Tensor to_batch(const std::vector<const Image*>& images, Range range = Range::Signed);

// Accepts (C, H, W) or (1, C, H, W). Values are mapped back to [0, 1] and clamped.
Image to_image(const torch::Tensor& tensor, Range range = Range::Signed);
std::vector<Image> to_images(const torch::Tensor& batch, Range range = Range::Signed);

// The library runs on a single intra-op thread unless told otherwise; keeps runs reproducible.
void configure_torch_threads(int threads = 1);

}  // namespace hdr
