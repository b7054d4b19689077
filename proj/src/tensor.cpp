#include "cimd/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace cimd {

std::string Shape::str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
}

void Tensor::fill(double v) { std::fill(data.begin(), data.end(), v); }

Tensor& Tensor::operator+=(const Tensor& other) {
    require_same_shape(*this, other, "Tensor::operator+=");
    for (std::size_t i = 0; i < data.size(); ++i) data[i] += other.data[i];
    return *this;
}

Tensor& Tensor::operator*=(double s) {
    for (double& v : data) v *= s;
    return *this;
}

Tensor Tensor::slice_example(int n) const {
    Tensor out(1, shape.c, shape.h, shape.w);
    auto src = example(n);
    std::copy(src.begin(), src.end(), out.data.begin());
    return out;
}

Tensor Tensor::slice_channel(int c) const {
    Tensor out(shape.n, 1, shape.h, shape.w);
    for (int n = 0; n < shape.n; ++n) {
        auto src = channel(n, c);
        std::copy(src.begin(), src.end(), out.channel(n, 0).begin());
    }
    return out;
}

Tensor concat_channels(const std::vector<const Tensor*>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
    const Shape& s0 = parts.front()->shape;
    int total_c = 0;
    for (const Tensor* p : parts) {
        if (p->shape.n != s0.n || p->shape.h != s0.h || p->shape.w != s0.w) {
            throw std::invalid_argument("concat_channels: misaligned inputs " + s0.str() + " vs " +
                                        p->shape.str());
        }
        total_c += p->shape.c;
    }
    Tensor out(s0.n, total_c, s0.h, s0.w);
    for (int n = 0; n < s0.n; ++n) {
        int c_off = 0;
        for (const Tensor* p : parts) {
            auto src = p->example(n);
            std::copy(src.begin(), src.end(), out.channel(n, c_off).begin());
            c_off += p->shape.c;
        }
    }
    return out;
}

std::vector<Tensor> split_channels(const Tensor& t, const std::vector<int>& channel_counts) {
    std::vector<Tensor> out;
    out.reserve(channel_counts.size());
    int c_off = 0;
    for (int cc : channel_counts) {
        Tensor part(t.shape.n, cc, t.shape.h, t.shape.w);
        for (int n = 0; n < t.shape.n; ++n) {
            auto src = t.channel(n, c_off);
            std::copy(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(cc * t.shape.plane()),
                      part.example(n).begin());
        }
        c_off += cc;
        out.push_back(std::move(part));
    }
    if (c_off != t.shape.c) throw std::invalid_argument("split_channels: channel counts do not sum to C");
    return out;
}

Tensor stack_examples(const std::vector<Tensor>& items) {
    if (items.empty()) throw std::invalid_argument("stack_examples: empty input");
    const Shape s0 = items.front().shape;
    Tensor out(static_cast<int>(items.size()), s0.c, s0.h, s0.w);
    for (std::size_t i = 0; i < items.size(); ++i) {
        const Tensor& it = items[i];
        if (it.shape.n != 1 || it.shape.c != s0.c || it.shape.h != s0.h || it.shape.w != s0.w) {
            throw std::invalid_argument("stack_examples: expected (1," + std::to_string(s0.c) + "," +
                                        std::to_string(s0.h) + "," + std::to_string(s0.w) + "), got " +
                                        it.shape.str());
        }
        std::copy(it.data.begin(), it.data.end(), out.example(static_cast<int>(i)).begin());
    }
    return out;
}

bool all_finite(const Tensor& t) {
    return std::all_of(t.data.begin(), t.data.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace cimd
