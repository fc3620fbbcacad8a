#pragma once

// Minimal NCHW float network building blocks with hand-written backward
// passes. Layers expose a const inference path (safe for concurrent callers)
// and a training path that caches what backward() needs.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "crisp/rng.hpp"

namespace crisp::nn {

struct Shape {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    std::size_t size() const {
        return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) * static_cast<std::size_t>(h) *
               static_cast<std::size_t>(w);
    }
    std::size_t plane() const { return static_cast<std::size_t>(h) * static_cast<std::size_t>(w); }
    friend bool operator==(const Shape&, const Shape&) = default;
};

struct Tensor {
    Shape shape;
    std::vector<float> data;

    Tensor() = default;
    explicit Tensor(Shape s, float fill = 0.0f) : shape(s), data(s.size(), fill) {}

    float* sample(int i) { return data.data() + static_cast<std::size_t>(i) * shape.c * shape.plane(); }
    const float* sample(int i) const { return data.data() + static_cast<std::size_t>(i) * shape.c * shape.plane(); }
};

struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter(std::string n, Shape s) : name(std::move(n)), value(s), grad(s) {}
};

class Layer {
public:
    virtual ~Layer() = default;

    virtual Tensor infer(const Tensor& x) const = 0;
    virtual Tensor forward(const Tensor& x) = 0;
    // Accumulates parameter gradients; returns the gradient w.r.t. the input
    // of the most recent forward().
    virtual Tensor backward(const Tensor& grad_out) = 0;
    virtual void parameters(std::vector<Parameter*>& out) { (void)out; }
    virtual Shape output_shape(Shape in) const = 0;
    virtual void clear_cache() {}
};

class Conv2d final : public Layer {
public:
    Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride, int pad, bool bias = true);

    void init_he(Rng& rng, double gain = 2.0);

    Tensor infer(const Tensor& x) const override;
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    void parameters(std::vector<Parameter*>& out) override;
    Shape output_shape(Shape in) const override;
    void clear_cache() override;

    // The first layer of a network has no use for an input gradient.
    void set_needs_input_grad(bool v) { needs_input_grad_ = v; }

    Parameter& weight() { return weight_; }

private:
    Tensor run(const Tensor& x) const;

    int in_channels_;
    int out_channels_;
    int kernel_;
    int stride_;
    int pad_;
    bool has_bias_;
    bool needs_input_grad_ = true;
    Parameter weight_;  // [out, in*k*k]
    Parameter bias_;    // [out]
    Tensor cached_in_;
};

// Per-channel y = x * scale + shift (a batch-norm in inference form).
class ChannelAffine final : public Layer {
public:
    ChannelAffine(std::string name, int channels, float initial_scale = 1.0f);

    Tensor infer(const Tensor& x) const override;
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    void parameters(std::vector<Parameter*>& out) override;
    Shape output_shape(Shape in) const override { return in; }
    void clear_cache() override { cached_in_ = {}; }

private:
    int channels_;
    Parameter scale_;
    Parameter shift_;
    Tensor cached_in_;
};

class ReLU final : public Layer {
public:
    Tensor infer(const Tensor& x) const override;
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    Shape output_shape(Shape in) const override { return in; }
    void clear_cache() override { cached_out_ = {}; }

private:
    Tensor cached_out_;
};

class MaxPool2d final : public Layer {
public:
    MaxPool2d(int kernel, int stride, int pad) : kernel_(kernel), stride_(stride), pad_(pad) {}

    Tensor infer(const Tensor& x) const override;
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    Shape output_shape(Shape in) const override;
    void clear_cache() override { argmax_.clear(); }

private:
    Tensor run(const Tensor& x, std::vector<std::uint32_t>* argmax) const;

    int kernel_;
    int stride_;
    int pad_;
    Shape cached_in_{};
    std::vector<std::uint32_t> argmax_;
};

class Sequential final : public Layer {
public:
    Sequential() = default;

    template <typename L, typename... Args>
    L& add(Args&&... args) {
        auto layer = std::make_unique<L>(std::forward<Args>(args)...);
        L& ref = *layer;
        layers_.push_back(std::move(layer));
        return ref;
    }

    Tensor infer(const Tensor& x) const override;
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    void parameters(std::vector<Parameter*>& out) override;
    Shape output_shape(Shape in) const override;
    void clear_cache() override;

    std::size_t size() const { return layers_.size(); }

private:
    std::vector<std::unique_ptr<Layer>> layers_;
};

// Residual bottleneck: 1x1 reduce, 3x3 (strided), 1x1 expand, each followed by
// a channel affine; projection shortcut when the shape changes. The last
// affine starts at zero scale so every block begins as the identity.
class Bottleneck final : public Layer {
public:
    Bottleneck(const std::string& name, int in_channels, int mid_channels, int out_channels, int stride, Rng& rng);

    Tensor infer(const Tensor& x) const override;
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    void parameters(std::vector<Parameter*>& out) override;
    Shape output_shape(Shape in) const override;
    void clear_cache() override;

private:
    Sequential branch_;
    std::unique_ptr<Sequential> shortcut_;
    Tensor cached_out_;
};

// Elementwise helpers used by layers and the trainer.
void add_inplace(Tensor& dst, const Tensor& src);

}  // namespace crisp::nn
