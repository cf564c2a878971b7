#include "hdr/tensor.h"

#include <algorithm>

#include "hdr/error.h"

namespace hdr {

namespace {

void fill_chw(const Image& image, float* out, Range range) {
    const int h = image.height(), w = image.width(), c = image.channels();
    const float scale = range == Range::Signed ? 2.0f : 1.0f;
    const float shift = range == Range::Signed ? -1.0f : 0.0f;
    auto src = image.data();
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                out[(static_cast<std::size_t>(ch) * h + y) * w + x] =
                    src[(static_cast<std::size_t>(y) * w + x) * c + ch] * scale + shift;
}

}  // namespace

torch::Tensor to_tensor(const Image& image, Range range) {
    if (image.empty()) throw ShapeError("cannot convert an empty image");
    auto t = torch::empty({image.channels(), image.height(), image.width()}, torch::kFloat32);
    fill_chw(image, t.data_ptr<float>(), range);
    return t;
}

torch::Tensor to_batch(const std::vector<const Image*>& images, Range range) {
    if (images.empty()) throw ShapeError("cannot batch zero images");
    const Image& first = *images.front();
    if (first.empty()) throw ShapeError("cannot convert an empty image");
    auto t = torch::empty({static_cast<long>(images.size()), first.channels(), first.height(), first.width()},
                          torch::kFloat32);
    const std::size_t stride = first.data().size();
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (!images[i]->same_shape(first)) throw ShapeError("batch images differ in shape");
        fill_chw(*images[i], t.data_ptr<float>() + i * stride, range);
    }
    return t;
}

torch::Tensor to_batch(const std::vector<Image>& images, Range range) {
    std::vector<const Image*> ptrs;
    ptrs.reserve(images.size());
    for (const auto& im : images) ptrs.push_back(&im);
    return to_batch(ptrs, range);
}

Image to_image(const torch::Tensor& tensor, Range range) {
    auto t = tensor.detach().to(torch::kCPU, torch::kFloat32);
    if (t.dim() == 4) {
        if (t.size(0) != 1) throw ShapeError("to_image expects a single image");
        t = t[0];
    }
    if (t.dim() != 3) throw ShapeError("to_image expects (C, H, W)");
    if (range == Range::Signed) t = (t + 1.0f) * 0.5f;
    t = t.clamp(0.0f, 1.0f).permute({1, 2, 0}).contiguous();
    Image out(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)), static_cast<int>(t.size(2)));
    std::copy_n(t.data_ptr<float>(), out.data().size(), out.data().begin());
    return out;
}

std::vector<Image> to_images(const torch::Tensor& batch, Range range) {
    if (batch.dim() != 4) throw ShapeError("to_images expects (N, C, H, W)");
    std::vector<Image> out;
    out.reserve(batch.size(0));
    for (long i = 0; i < batch.size(0); ++i) out.push_back(to_image(batch[i], range));
    return out;
}

void configure_torch_threads(int threads) {
    torch::set_num_threads(std::max(1, threads));
}

}  // namespace hdr
