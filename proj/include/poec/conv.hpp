#pragma once

#include <functional>
#include <span>
#include <vector>

#include "poec/capsules.hpp"
#include "poec/config.hpp"
#include "poec/numerics.hpp"

namespace poec {

// Grayscale or multi-channel image, HWC, pixel values in [0, 1].
struct Image {
    int h = 0, w = 0, c = 0;
    std::vector<double> pix;

    Image() = default;
    Image(int h_, int w_, int c_)
        : h(h_), w(w_), c(c_), pix(static_cast<size_t>(h_) * w_ * c_, 0.0) {}

    double& at(int y, int x, int ch) { return pix[(static_cast<size_t>(y) * w + x) * c + ch]; }
    double at(int y, int x, int ch) const { return pix[(static_cast<size_t>(y) * w + x) * c + ch]; }
};

// Two-layer architecture: conv(k1, stride s1) -> leaky ReLU -> dropout ->
// conv(k2, stride s2) -> leaky ReLU; the decoder runs the transposed filters
// in reverse with a leaky ReLU between them and a sigmoid at the output.
struct ConvArch {
    int k1 = 9, c1 = 128, s1 = 1;
    int k2 = 9, c2 = 128, s2 = 2;
    double leaky_slope = 0.01;
    double dropout_rate = 0.25;
};

// Tied-weight convolutional autoencoder: the encoder filter banks are reused
// (transposed) by the decoder.  Geometry is fixed at construction.
struct ConvStack {
    int h0 = 0, w0 = 0, c0 = 0;  // input image shape
    ConvArch arch;
    std::vector<double> f1;  // [k1][k1][c0][c1]
    std::vector<double> f2;  // [k2][k2][c1][c2]
    Vec b_enc1, b_enc2;      // encoder biases (c1, c2)
    Vec b_dec1, b_dec2;      // decoder biases (c1, c0)

    ConvStack() = default;
    // Zero-initialized weights; throws ShapeError when the two valid-padding
    // convolutions do not fit the input.
    ConvStack(int h0_, int w0_, int c0_, const ConvArch& arch_);
    static ConvStack random(int h0, int w0, int c0, const ConvArch& arch, Rng& rng,
                            double stddev);

    int h1() const { return (h0 - arch.k1) / arch.s1 + 1; }
    int w1() const { return (w0 - arch.k1) / arch.s1 + 1; }
    int h2() const { return (h1() - arch.k2) / arch.s2 + 1; }
    int w2() const { return (w1() - arch.k2) / arch.s2 + 1; }
};

// Feature maps produced by the encoder, HWC.
struct FeatureVolume {
    int h = 0, w = 0, c = 0;
    std::vector<double> data;

    FeatureVolume() = default;
    FeatureVolume(int h_, int w_, int c_)
        : h(h_), w(w_), c(c_), data(static_cast<size_t>(h_) * w_ * c_, 0.0) {}
};

// Encoder forward pass.  train_mode applies inverted dropout after the first
// activation and requires an rng for the mask.
FeatureVolume encode(const Image& img, const ConvStack& stack, bool train_mode = false,
                     Rng* rng = nullptr);

// Decoder: transposed conv2 -> leaky ReLU -> transposed conv1 -> sigmoid.
// Output shape equals the stack's input shape.
Image decode(const FeatureVolume& vol, const ConvStack& stack);

// Mean squared reconstruction error over a set of images (dropout disabled).
double autoencoder_mse(std::span<const Image> images, const ConvStack& stack);

using EpochCallback = std::function<void(int epoch, double metric)>;

// Minimizes mean squared pixel reconstruction error with SGD (momentum, L2,
// per-epoch decay); dropout active during training only.  The callback, if
// given, receives the mean training loss after each epoch.
ConvStack train_autoencoder(std::span<const Image> images, const TrainConfig& cfg,
                            const ConvArch& arch = {}, const EpochCallback& cb = {});

// Reshape h*w*(c/cap_dim) capsules from contiguous channel groups at each
// spatial site, scanned row-major over (y, x, group); each capsule is then
// squashed.  Channel count must be divisible by cap_dim.
CapsuleLayer volume_to_capsules(const FeatureVolume& vol, int cap_dim = 8);

// Inverse of volume_to_capsules: unsquash each capsule (norms must be < 1)
// and undo the reshape into an (h, w, c) volume.
FeatureVolume capsules_to_volume(const CapsuleLayer& x, int h, int w, int c);

}  // namespace poec
