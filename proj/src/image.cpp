#include "hdr/image.h"

#include <algorithm>
#include <cmath>

#include "hdr/error.h"

namespace hdr {

Box Box::intersection(const Box& o) const {
    Box r{std::max(x0, o.x0), std::max(y0, o.y0), std::min(x1, o.x1), std::min(y1, o.y1)};
    if (r.empty()) return {};
    return r;
}

Box Box::united(const Box& o) const {
    if (empty()) return o;
    if (o.empty()) return *this;
    return {std::min(x0, o.x0), std::min(y0, o.y0), std::max(x1, o.x1), std::max(y1, o.y1)};
}

Box Box::clipped(int w, int h) const {
    return {std::clamp(x0, 0, w), std::clamp(y0, 0, h), std::clamp(x1, 0, w), std::clamp(y1, 0, h)};
}

Image::Image(int height, int width, int channels, float fill)
    : height_(height), width_(width), channels_(channels) {
    if (height <= 0 || width <= 0 || channels <= 0)
        throw ShapeError("image dimensions must be positive");
    data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

float Image::luminance(int y, int x) const {
    if (channels_ < 3) return at(y, x, 0);
    return 0.299f * at(y, x, 0) + 0.587f * at(y, x, 1) + 0.114f * at(y, x, 2);
}

Image Image::crop(const Box& box) const {
    if (!box.valid() || box.x0 < 0 || box.y0 < 0 || box.x1 > width_ || box.y1 > height_)
        throw ShapeError("crop box outside image");
    Image out(box.height(), box.width(), channels_);
    for (int y = 0; y < box.height(); ++y) {
        auto src = data_.begin() + static_cast<std::ptrdiff_t>(index(box.y0 + y, box.x0, 0));
        std::copy(src, src + static_cast<std::ptrdiff_t>(box.width()) * channels_,
                  out.data_.begin() + static_cast<std::ptrdiff_t>(out.index(y, 0, 0)));
    }
    return out;
}

void Image::paste(const Image& src, int x0, int y0) {
    if (src.channels_ != channels_) throw ShapeError("paste channel mismatch");
    for (int y = 0; y < src.height_; ++y) {
        int dy = y0 + y;
        if (dy < 0 || dy >= height_) continue;
        for (int x = 0; x < src.width_; ++x) {
            int dx = x0 + x;
            if (dx < 0 || dx >= width_) continue;
            for (int c = 0; c < channels_; ++c) at(dy, dx, c) = src.at(y, x, c);
        }
    }
}

Image Image::to_gray() const {
    Image out(height_, width_, 1);
    for (int y = 0; y < height_; ++y)
        for (int x = 0; x < width_; ++x) out.at(y, x) = luminance(y, x);
    return out;
}

Image Image::to_rgb() const {
    if (channels_ == 3) return *this;
    Image out(height_, width_, 3);
    for (int y = 0; y < height_; ++y)
        for (int x = 0; x < width_; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = at(y, x, 0);
    return out;
}

void Image::quantize8() {
    for (float& v : data_) v = std::round(std::clamp(v, 0.0f, 1.0f) * 255.0f) / 255.0f;
}

void Mask::fill_box(const Box& box) {
    Box b = box.clipped(width_, height_);
    for (int y = b.y0; y < b.y1; ++y)
        for (int x = b.x0; x < b.x1; ++x) at(y, x) = 1;
}

long Mask::area() const {
    long n = 0;
    for (auto b : bits_) n += b != 0;
    return n;
}

Box Mask::bounding_box() const {
    Box r{width_, height_, 0, 0};
    bool any = false;
    for (int y = 0; y < height_; ++y)
        for (int x = 0; x < width_; ++x)
            if (at(y, x)) {
                any = true;
                r.x0 = std::min(r.x0, x);
                r.y0 = std::min(r.y0, y);
                r.x1 = std::max(r.x1, x + 1);
                r.y1 = std::max(r.y1, y + 1);
            }
    return any ? r : Box{};
}

bool Mask::intersects(const Box& box) const {
    Box b = box.clipped(width_, height_);
    for (int y = b.y0; y < b.y1; ++y)
        for (int x = b.x0; x < b.x1; ++x)
            if (at(y, x)) return true;
    return false;
}

Mask Mask::dilated(int radius) const {
    // Separable square dilation.
    Mask rows(height_, width_);
    for (int y = 0; y < height_; ++y)
        for (int x = 0; x < width_; ++x) {
            if (!at(y, x)) continue;
            for (int dx = std::max(0, x - radius); dx <= std::min(width_ - 1, x + radius); ++dx)
                rows.at(y, dx) = 1;
        }
    Mask out(height_, width_);
    for (int y = 0; y < height_; ++y)
        for (int x = 0; x < width_; ++x) {
            if (!rows.at(y, x)) continue;
            for (int dy = std::max(0, y - radius); dy <= std::min(height_ - 1, y + radius); ++dy)
                out.at(dy, x) = 1;
        }
    return out;
}

Image Mask::to_image() const {
    Image out(height_, width_, 1);
    for (int y = 0; y < height_; ++y)
        for (int x = 0; x < width_; ++x) out.at(y, x) = at(y, x) ? 1.0f : 0.0f;
    return out;
}

}  // namespace hdr
