#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace hdr {

// Axis-aligned pixel box with half-open extents [x0, x1) x [y0, y1).
struct Box {
    int x0 = 0;
    int y0 = 0;
    int x1 = 0;
    int y1 = 0;

    int width() const { return x1 - x0; }
    int height() const { return y1 - y0; }
    long area() const { return empty() ? 0 : static_cast<long>(width()) * height(); }
    bool empty() const { return x1 <= x0 || y1 <= y0; }
    bool valid() const { return x0 < x1 && y0 < y1; }

    bool contains(const Box& o) const {
        return o.x0 >= x0 && o.y0 >= y0 && o.x1 <= x1 && o.y1 <= y1;
    }
    bool contains_pixel(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
    bool intersects(const Box& o) const {
        return o.x0 < x1 && x0 < o.x1 && o.y0 < y1 && y0 < o.y1;
    }
    Box intersection(const Box& o) const;
    Box united(const Box& o) const;
    Box translated(int dx, int dy) const { return {x0 + dx, y0 + dy, x1 + dx, y1 + dy}; }
    Box clipped(int width, int height) const;

    bool operator==(const Box&) const = default;
};

// Dense float image, row-major interleaved (y, x, channel). Pixel values live in [0, 1]
// at module boundaries.
class Image {
public:
    Image() = default;
    Image(int height, int width, int channels, float fill = 0.0f);

    int height() const { return height_; }
    int width() const { return width_; }
    int channels() const { return channels_; }
    std::size_t pixel_count() const { return static_cast<std::size_t>(height_) * width_; }
    bool empty() const { return data_.empty(); }
    bool same_shape(const Image& o) const {
        return height_ == o.height_ && width_ == o.width_ && channels_ == o.channels_;
    }

    float& at(int y, int x, int c = 0) { return data_[index(y, x, c)]; }
    float at(int y, int x, int c = 0) const { return data_[index(y, x, c)]; }

    std::span<float> data() { return data_; }
    std::span<const float> data() const { return data_; }

    // Rec. 601 luma of pixel (y, x); single-channel images return the value itself.
    float luminance(int y, int x) const;

    Image crop(const Box& box) const;
    void paste(const Image& src, int x0, int y0);
    Image to_gray() const;
    Image to_rgb() const;

    // Snap every value to the nearest k/255 level, clamped to [0, 1].
    void quantize8();

    bool operator==(const Image& o) const = default;

private:
    std::size_t index(int y, int x, int c) const {
        return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
    }

    int height_ = 0;
    int width_ = 0;
    int channels_ = 0;
    std::vector<float> data_;
};

// Binary single-channel raster, 1 = set.
class Mask {
public:
    Mask() = default;
    Mask(int height, int width) : height_(height), width_(width), bits_(static_cast<std::size_t>(height) * width, 0) {}

    int height() const { return height_; }
    int width() const { return width_; }
    std::uint8_t& at(int y, int x) { return bits_[static_cast<std::size_t>(y) * width_ + x]; }
    std::uint8_t at(int y, int x) const { return bits_[static_cast<std::size_t>(y) * width_ + x]; }
    std::span<const std::uint8_t> bits() const { return bits_; }

    void fill_box(const Box& box);
    long area() const;
    Box bounding_box() const;
    bool intersects(const Box& box) const;
    Mask dilated(int radius) const;
    Image to_image() const;

    bool operator==(const Mask&) const = default;

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<std::uint8_t> bits_;
};

}  // namespace hdr
