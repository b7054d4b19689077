#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cimd {

// NCHW shape. Vectors are stored as (N, F, 1, 1).
struct Shape {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    std::size_t numel() const {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    std::size_t per_example() const { return static_cast<std::size_t>(c) * h * w; }

    bool operator==(const Shape&) const = default;

    std::string str() const;
};

struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(Shape s, double fill = 0.0) : shape(s), data(s.numel(), fill) {}
    Tensor(int n, int c, int h, int w, double fill = 0.0) : Tensor(Shape{n, c, h, w}, fill) {}

    std::size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }

    double& at(int n, int c, int h, int w) {
        return data[((static_cast<std::size_t>(n) * shape.c + c) * shape.h + h) * shape.w + w];
    }
    double at(int n, int c, int h, int w) const {
        return data[((static_cast<std::size_t>(n) * shape.c + c) * shape.h + h) * shape.w + w];
    }

    std::span<double> example(int n) {
        return {data.data() + n * shape.per_example(), shape.per_example()};
    }
    std::span<const double> example(int n) const {
        return {data.data() + n * shape.per_example(), shape.per_example()};
    }
    std::span<double> channel(int n, int c) {
        return {data.data() + (static_cast<std::size_t>(n) * shape.c + c) * shape.plane(), shape.plane()};
    }
    std::span<const double> channel(int n, int c) const {
        return {data.data() + (static_cast<std::size_t>(n) * shape.c + c) * shape.plane(), shape.plane()};
    }

    void fill(double v);
    Tensor& operator+=(const Tensor& other);
    Tensor& operator*=(double s);

    // Copy of example n as a (1, C, H, W) tensor.
    Tensor slice_example(int n) const;
    // Copy of channel c from every example as a (N, 1, H, W) tensor.
    Tensor slice_channel(int c) const;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!(a.shape == b.shape)) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape.str() + " vs " +
                                    b.shape.str());
    }
}

// Concatenate along channels; all inputs share N, H, W.
Tensor concat_channels(const std::vector<const Tensor*>& parts);
// Inverse of concat_channels for gradients.
std::vector<Tensor> split_channels(const Tensor& t, const std::vector<int>& channel_counts);

// Stack (1, C, H, W) tensors into (N, C, H, W).
Tensor stack_examples(const std::vector<Tensor>& items);

bool all_finite(const Tensor& t);

}  // namespace cimd
