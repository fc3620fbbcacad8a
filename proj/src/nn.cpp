#include "crisp/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "crisp/error.hpp"
#include "crisp/kernels.hpp"

namespace crisp::nn {

void add_inplace(Tensor& dst, const Tensor& src) {
    if (!(dst.shape == src.shape)) fail(ErrorCode::ShapeMismatch, "add_inplace: shapes differ");
    const std::size_t n = dst.data.size();
    float* d = dst.data.data();
    const float* s = src.data.data();
#pragma omp parallel for simd schedule(static)
    for (std::size_t i = 0; i < n; ++i) d[i] += s[i];
}

// ---------------------------------------------------------------------------
// Conv2d
// ---------------------------------------------------------------------------

Conv2d::Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride, int pad, bool bias)
    : in_channels_(in_channels),
      out_channels_(out_channels),
      kernel_(kernel),
      stride_(stride),
      pad_(pad),
      has_bias_(bias),
      weight_(name + ".weight", Shape{out_channels, in_channels * kernel * kernel, 1, 1}),
      bias_(name + ".bias", Shape{out_channels, 1, 1, 1}) {}

void Conv2d::init_he(Rng& rng, double gain) {
    const double fan_in = static_cast<double>(in_channels_) * kernel_ * kernel_;
    const double std = std::sqrt(gain / fan_in);
    for (auto& v : weight_.value.data) v = static_cast<float>(rng.normal() * std);
    std::fill(bias_.value.data.begin(), bias_.value.data.end(), 0.0f);
}

Shape Conv2d::output_shape(Shape in) const {
    if (in.c != in_channels_)
        fail(ErrorCode::ShapeMismatch, weight_.name + ": expected " + std::to_string(in_channels_) +
                                           " input channels, got " + std::to_string(in.c));
    const kernels::ConvGeometry g{in.c, in.h, in.w, kernel_, stride_, pad_};
    return {in.n, out_channels_, g.out_height(), g.out_width()};
}

namespace {

// Samples per im2col batch: as many as fit in about 4 MB of columns.
int group_size(int n, int patch, std::size_t positions) {
    constexpr std::size_t kBudget = std::size_t{1} << 20;
    const std::size_t per = static_cast<std::size_t>(patch) * positions;
    return static_cast<int>(std::clamp<std::size_t>(kBudget / std::max<std::size_t>(per, 1), 1, n));
}

}  // namespace

Tensor Conv2d::run(const Tensor& x) const {
    const Shape out_shape = output_shape(x.shape);
    const kernels::ConvGeometry g{x.shape.c, x.shape.h, x.shape.w, kernel_, stride_, pad_};
    const std::size_t positions = out_shape.plane();
    const int patch = g.patch_size();
    const int group = group_size(x.shape.n, patch, positions);

    std::vector<float> columns(static_cast<std::size_t>(patch) * positions * group);
    std::vector<float> tmp(group > 1 ? static_cast<std::size_t>(out_channels_) * positions * group : 0);
    Tensor out(out_shape);
    for (int b0 = 0; b0 < x.shape.n; b0 += group) {
        const int nb = std::min(group, x.shape.n - b0);
        const std::size_t ncols = positions * nb;
        for (int b = 0; b < nb; ++b) kernels::im2col(g, x.sample(b0 + b), columns.data(), ncols, b * positions);
        if (nb == 1) {
            kernels::gemm(out_channels_, static_cast<int>(ncols), patch, weight_.value.data.data(), columns.data(),
                          out.sample(b0), false);
        } else {
            kernels::gemm(out_channels_, static_cast<int>(ncols), patch, weight_.value.data.data(), columns.data(),
                          tmp.data(), false);
            for (int b = 0; b < nb; ++b)
                for (int co = 0; co < out_channels_; ++co)
                    std::copy_n(tmp.data() + co * ncols + b * positions, positions,
                                out.sample(b0 + b) + static_cast<std::size_t>(co) * positions);
        }
    }
    if (has_bias_)
        for (int b = 0; b < x.shape.n; ++b)
            for (int co = 0; co < out_channels_; ++co) {
                float* p = out.sample(b) + static_cast<std::size_t>(co) * positions;
                const float bias = bias_.value.data[co];
                for (std::size_t i = 0; i < positions; ++i) p[i] += bias;
            }
    return out;
}

Tensor Conv2d::infer(const Tensor& x) const { return run(x); }

Tensor Conv2d::forward(const Tensor& x) {
    cached_in_ = x;
    return run(x);
}

Tensor Conv2d::backward(const Tensor& grad_out) {
    if (cached_in_.data.empty()) throw std::logic_error(weight_.name + ": backward without forward");
    const Shape in = cached_in_.shape;
    const kernels::ConvGeometry g{in.c, in.h, in.w, kernel_, stride_, pad_};
    const std::size_t positions = grad_out.shape.plane();
    const int patch = g.patch_size();
    const int group = group_size(in.n, patch, positions);

    if (has_bias_)
        for (int co = 0; co < out_channels_; ++co) {
            double acc = 0.0;
            for (int b = 0; b < grad_out.shape.n; ++b) {
                const float* row = grad_out.sample(b) + static_cast<std::size_t>(co) * positions;
                for (std::size_t i = 0; i < positions; ++i) acc += row[i];
            }
            bias_.grad.data[co] += static_cast<float>(acc);
        }

    std::vector<float> columns(static_cast<std::size_t>(patch) * positions * group);
    std::vector<float> grouped(group > 1 ? static_cast<std::size_t>(out_channels_) * positions * group : 0);
    std::vector<float> weight_t;
    if (needs_input_grad_) {
        weight_t.resize(weight_.value.data.size());
        kernels::transpose(out_channels_, patch, weight_.value.data.data(), weight_t.data());
    }
    Tensor grad_in(in);
    for (int b0 = 0; b0 < in.n; b0 += group) {
        const int nb = std::min(group, in.n - b0);
        const std::size_t ncols = positions * nb;
        const float* gg = grad_out.sample(b0);
        if (nb > 1) {
            for (int b = 0; b < nb; ++b)
                for (int co = 0; co < out_channels_; ++co)
                    std::copy_n(grad_out.sample(b0 + b) + static_cast<std::size_t>(co) * positions, positions,
                                grouped.data() + co * ncols + b * positions);
            gg = grouped.data();
        }
        for (int b = 0; b < nb; ++b) kernels::im2col(g, cached_in_.sample(b0 + b), columns.data(), ncols, b * positions);
        kernels::gemm_nt(out_channels_, patch, static_cast<int>(ncols), gg, columns.data(), weight_.grad.data.data(),
                         true);
        if (needs_input_grad_) {
            kernels::gemm(patch, static_cast<int>(ncols), out_channels_, weight_t.data(), gg, columns.data(), false);
            for (int b = 0; b < nb; ++b)
                kernels::col2im(g, columns.data(), ncols, b * positions, grad_in.sample(b0 + b));
        }
    }
    cached_in_ = {};
    return grad_in;
}

void Conv2d::parameters(std::vector<Parameter*>& out) {
    out.push_back(&weight_);
    if (has_bias_) out.push_back(&bias_);
}

void Conv2d::clear_cache() { cached_in_ = {}; }

// ---------------------------------------------------------------------------
// ChannelAffine
// ---------------------------------------------------------------------------

ChannelAffine::ChannelAffine(std::string name, int channels, float initial_scale)
    : channels_(channels),
      scale_(name + ".scale", Shape{channels, 1, 1, 1}),
      shift_(name + ".shift", Shape{channels, 1, 1, 1}) {
    std::fill(scale_.value.data.begin(), scale_.value.data.end(), initial_scale);
}

Tensor ChannelAffine::infer(const Tensor& x) const {
    if (x.shape.c != channels_) fail(ErrorCode::ShapeMismatch, scale_.name + ": channel count mismatch");
    Tensor out(x.shape);
    const std::size_t plane = x.shape.plane();
    for (int b = 0; b < x.shape.n; ++b)
        for (int c = 0; c < channels_; ++c) {
            const float s = scale_.value.data[c];
            const float t = shift_.value.data[c];
            const float* src = x.sample(b) + c * plane;
            float* dst = out.sample(b) + c * plane;
            for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] * s + t;
        }
    return out;
}

Tensor ChannelAffine::forward(const Tensor& x) {
    cached_in_ = x;
    return infer(x);
}

Tensor ChannelAffine::backward(const Tensor& grad_out) {
    Tensor grad_in(grad_out.shape);
    const std::size_t plane = grad_out.shape.plane();
    for (int c = 0; c < channels_; ++c) {
        double ds = 0.0;
        double dt = 0.0;
        const float s = scale_.value.data[c];
        for (int b = 0; b < grad_out.shape.n; ++b) {
            const float* g = grad_out.sample(b) + c * plane;
            const float* x = cached_in_.sample(b) + c * plane;
            float* gi = grad_in.sample(b) + c * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                ds += static_cast<double>(g[i]) * x[i];
                dt += g[i];
                gi[i] = g[i] * s;
            }
        }
        scale_.grad.data[c] += static_cast<float>(ds);
        shift_.grad.data[c] += static_cast<float>(dt);
    }
    cached_in_ = {};
    return grad_in;
}

void ChannelAffine::parameters(std::vector<Parameter*>& out) {
    out.push_back(&scale_);
    out.push_back(&shift_);
}

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

Tensor ReLU::infer(const Tensor& x) const {
    Tensor out(x.shape);
    const std::size_t n = x.data.size();
    for (std::size_t i = 0; i < n; ++i) out.data[i] = x.data[i] > 0.0f ? x.data[i] : 0.0f;
    return out;
}

Tensor ReLU::forward(const Tensor& x) {
    cached_out_ = infer(x);
    return cached_out_;
}

Tensor ReLU::backward(const Tensor& grad_out) {
    Tensor grad_in(grad_out.shape);
    const std::size_t n = grad_out.data.size();
    for (std::size_t i = 0; i < n; ++i) grad_in.data[i] = cached_out_.data[i] > 0.0f ? grad_out.data[i] : 0.0f;
    cached_out_ = {};
    return grad_in;
}

// ---------------------------------------------------------------------------
// MaxPool2d
// ---------------------------------------------------------------------------

Shape MaxPool2d::output_shape(Shape in) const {
    return {in.n, in.c, (in.h + 2 * pad_ - kernel_) / stride_ + 1, (in.w + 2 * pad_ - kernel_) / stride_ + 1};
}

Tensor MaxPool2d::run(const Tensor& x, std::vector<std::uint32_t>* argmax) const {
    const Shape os = output_shape(x.shape);
    Tensor out(os);
    if (argmax) argmax->assign(os.size(), 0);
    const std::size_t in_plane = x.shape.plane();
    for (int b = 0; b < os.n; ++b)
        for (int c = 0; c < os.c; ++c) {
            const std::size_t in_base = (static_cast<std::size_t>(b) * x.shape.c + c) * in_plane;
            const std::size_t out_base = (static_cast<std::size_t>(b) * os.c + c) * os.plane();
            for (int oy = 0; oy < os.h; ++oy)
                for (int ox = 0; ox < os.w; ++ox) {
                    float best = -std::numeric_limits<float>::infinity();
                    std::size_t best_at = in_base;
                    for (int ky = 0; ky < kernel_; ++ky) {
                        const int iy = oy * stride_ - pad_ + ky;
                        if (iy < 0 || iy >= x.shape.h) continue;
                        for (int kx = 0; kx < kernel_; ++kx) {
                            const int ix = ox * stride_ - pad_ + kx;
                            if (ix < 0 || ix >= x.shape.w) continue;
                            const std::size_t at = in_base + static_cast<std::size_t>(iy) * x.shape.w + ix;
                            if (x.data[at] > best) {
                                best = x.data[at];
                                best_at = at;
                            }
                        }
                    }
                    const std::size_t o = out_base + static_cast<std::size_t>(oy) * os.w + ox;
                    out.data[o] = best;
                    if (argmax) (*argmax)[o] = static_cast<std::uint32_t>(best_at);
                }
        }
    return out;
}

Tensor MaxPool2d::infer(const Tensor& x) const { return run(x, nullptr); }

Tensor MaxPool2d::forward(const Tensor& x) {
    cached_in_ = x.shape;
    return run(x, &argmax_);
}

Tensor MaxPool2d::backward(const Tensor& grad_out) {
    Tensor grad_in(cached_in_);
    for (std::size_t i = 0; i < grad_out.data.size(); ++i) grad_in.data[argmax_[i]] += grad_out.data[i];
    argmax_.clear();
    return grad_in;
}

// ---------------------------------------------------------------------------
// Sequential
// ---------------------------------------------------------------------------

Tensor Sequential::infer(const Tensor& x) const {
    Tensor cur = x;
    for (const auto& layer : layers_) cur = layer->infer(cur);
    return cur;
}

Tensor Sequential::forward(const Tensor& x) {
    Tensor cur = x;
    for (auto& layer : layers_) cur = layer->forward(cur);
    return cur;
}

Tensor Sequential::backward(const Tensor& grad_out) {
    Tensor cur = grad_out;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) cur = (*it)->backward(cur);
    return cur;
}

void Sequential::parameters(std::vector<Parameter*>& out) {
    for (auto& layer : layers_) layer->parameters(out);
}

Shape Sequential::output_shape(Shape in) const {
    for (const auto& layer : layers_) in = layer->output_shape(in);
    return in;
}

void Sequential::clear_cache() {
    for (auto& layer : layers_) layer->clear_cache();
}

// ---------------------------------------------------------------------------
// Bottleneck
// ---------------------------------------------------------------------------

Bottleneck::Bottleneck(const std::string& name, int in_channels, int mid_channels, int out_channels, int stride,
                       Rng& rng) {
    branch_.add<Conv2d>(name + ".conv1", in_channels, mid_channels, 1, 1, 0, false).init_he(rng);
    branch_.add<ChannelAffine>(name + ".affine1", mid_channels);
    branch_.add<ReLU>();
    branch_.add<Conv2d>(name + ".conv2", mid_channels, mid_channels, 3, stride, 1, false).init_he(rng);
    branch_.add<ChannelAffine>(name + ".affine2", mid_channels);
    branch_.add<ReLU>();
    branch_.add<Conv2d>(name + ".conv3", mid_channels, out_channels, 1, 1, 0, false).init_he(rng);
    branch_.add<ChannelAffine>(name + ".affine3", out_channels, 0.0f);
    if (stride != 1 || in_channels != out_channels) {
        shortcut_ = std::make_unique<Sequential>();
        shortcut_->add<Conv2d>(name + ".shortcut", in_channels, out_channels, 1, stride, 0, false).init_he(rng, 1.0);
        shortcut_->add<ChannelAffine>(name + ".shortcut_affine", out_channels);
    }
}

Shape Bottleneck::output_shape(Shape in) const { return branch_.output_shape(in); }

Tensor Bottleneck::infer(const Tensor& x) const {
    Tensor out = branch_.infer(x);
    if (shortcut_)
        add_inplace(out, shortcut_->infer(x));
    else
        add_inplace(out, x);
    for (auto& v : out.data) v = v > 0.0f ? v : 0.0f;
    return out;
}

Tensor Bottleneck::forward(const Tensor& x) {
    Tensor out = branch_.forward(x);
    if (shortcut_)
        add_inplace(out, shortcut_->forward(x));
    else
        add_inplace(out, x);
    for (auto& v : out.data) v = v > 0.0f ? v : 0.0f;
    cached_out_ = out;
    return out;
}

Tensor Bottleneck::backward(const Tensor& grad_out) {
    Tensor g(grad_out.shape);
    for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] = cached_out_.data[i] > 0.0f ? grad_out.data[i] : 0.0f;
    cached_out_ = {};
    Tensor grad_in = branch_.backward(g);
    if (shortcut_)
        add_inplace(grad_in, shortcut_->backward(g));
    else
        add_inplace(grad_in, g);
    return grad_in;
}

void Bottleneck::parameters(std::vector<Parameter*>& out) {
    branch_.parameters(out);
    if (shortcut_) shortcut_->parameters(out);
}

void Bottleneck::clear_cache() {
    branch_.clear_cache();
    if (shortcut_) shortcut_->clear_cache();
    cached_out_ = {};
}

}  // namespace crisp::nn
