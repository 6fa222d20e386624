#include "poec/conv.hpp"

#include <cmath>
#include <string>

#include "poec/error.hpp"
#include "poec/kernels.hpp"

namespace poec {

namespace {

double leaky(double x, double slope) { return x >= 0.0 ? x : slope * x; }
double leaky_grad(double pre, double slope) { return pre >= 0.0 ? 1.0 : slope; }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void check_image(const Image& img, const ConvStack& stack) {
    if (img.h != stack.h0 || img.w != stack.w0 || img.c != stack.c0)
        throw ShapeError("image " + std::to_string(img.h) + "x" + std::to_string(img.w) +
                         "x" + std::to_string(img.c) + " does not match stack input " +
                         std::to_string(stack.h0) + "x" + std::to_string(stack.w0) + "x" +
                         std::to_string(stack.c0));
}

}  // namespace

ConvStack::ConvStack(int h0_, int w0_, int c0_, const ConvArch& arch_)
    : h0(h0_), w0(w0_), c0(c0_), arch(arch_) {
    if (h0 < arch.k1 || w0 < arch.k1)
        throw ShapeError("conv stack: input smaller than first kernel");
    if (h1() < arch.k2 || w1() < arch.k2)
        throw ShapeError("conv stack: first feature map smaller than second kernel");
    if (arch.s1 < 1 || arch.s2 < 1 || arch.c1 < 1 || arch.c2 < 1)
        throw ShapeError("conv stack: invalid architecture");
    f1.assign(static_cast<size_t>(arch.k1) * arch.k1 * c0 * arch.c1, 0.0);
    f2.assign(static_cast<size_t>(arch.k2) * arch.k2 * arch.c1 * arch.c2, 0.0);
    b_enc1.assign(arch.c1, 0.0);
    b_enc2.assign(arch.c2, 0.0);
    b_dec1.assign(arch.c1, 0.0);
    b_dec2.assign(c0, 0.0);
}

ConvStack ConvStack::random(int h0, int w0, int c0, const ConvArch& arch, Rng& rng,
                            double stddev) {
    ConvStack s(h0, w0, c0, arch);
    for (auto& e : s.f1) e = stddev * rng.next_normal();
    for (auto& e : s.f2) e = stddev * rng.next_normal();
    return s;
}

FeatureVolume encode(const Image& img, const ConvStack& stack, bool train_mode,
                     Rng* rng) {
    check_image(img, stack);
    if (train_mode && !rng)
        throw DomainError("encode: train_mode requires an rng for the dropout mask");

    const ConvArch& a = stack.arch;
    const int h1 = stack.h1(), w1 = stack.w1();
    std::vector<double> act1(static_cast<size_t>(h1) * w1 * a.c1);
    kern::conv_forward(img.pix.data(), img.h, img.w, img.c, stack.f1.data(), a.k1,
                       a.c1, a.s1, stack.b_enc1.data(), act1.data());
    for (auto& v : act1) v = leaky(v, a.leaky_slope);

    if (train_mode && a.dropout_rate > 0.0) {
        const double keep = 1.0 - a.dropout_rate;
        for (auto& v : act1)
            v = (rng->next_double() >= a.dropout_rate) ? v / keep : 0.0;
    }

    FeatureVolume vol(stack.h2(), stack.w2(), a.c2);
    kern::conv_forward(act1.data(), h1, w1, a.c1, stack.f2.data(), a.k2, a.c2, a.s2,
                       stack.b_enc2.data(), vol.data.data());
    for (auto& v : vol.data) v = leaky(v, a.leaky_slope);
    return vol;
}

Image decode(const FeatureVolume& vol, const ConvStack& stack) {
    const ConvArch& a = stack.arch;
    if (vol.h != stack.h2() || vol.w != stack.w2() || vol.c != a.c2)
        throw ShapeError("decode: volume does not match stack feature shape");

    const int h1 = stack.h1(), w1 = stack.w1();
    std::vector<double> d1(static_cast<size_t>(h1) * w1 * a.c1);
    kern::tconv_forward(vol.data.data(), vol.h, vol.w, a.c2, stack.f2.data(), a.k2,
                        a.c1, a.s2, stack.b_dec1.data(), d1.data(), h1, w1);
    for (auto& v : d1) v = leaky(v, a.leaky_slope);

    Image out(stack.h0, stack.w0, stack.c0);
    kern::tconv_forward(d1.data(), h1, w1, a.c1, stack.f1.data(), a.k1, stack.c0,
                        a.s1, stack.b_dec2.data(), out.pix.data(), stack.h0, stack.w0);
    for (auto& v : out.pix) v = sigmoid(v);
    return out;
}

double autoencoder_mse(std::span<const Image> images, const ConvStack& stack) {
    if (images.empty()) throw DomainError("autoencoder_mse: no images");
    double total = 0.0;
    for (const Image& img : images) {
        const Image rec = decode(encode(img, stack), stack);
        double acc = 0.0;
        for (size_t n = 0; n < img.pix.size(); ++n) {
            const double d = rec.pix[n] - img.pix[n];
            acc += d * d;
        }
        total += acc / static_cast<double>(img.pix.size());
    }
    return total / static_cast<double>(images.size());
}

namespace {

// Activations remembered by the training forward pass.
struct ForwardCache {
    std::vector<double> pre1, mask, a1d, pre2, v, pre3, d1, pre4, out;
    double loss = 0.0;
};

void train_forward(const Image& img, const ConvStack& s, Rng& rng, ForwardCache& c) {
    const ConvArch& a = s.arch;
    const int h1 = s.h1(), w1 = s.w1(), h2 = s.h2(), w2 = s.w2();

    c.pre1.resize(static_cast<size_t>(h1) * w1 * a.c1);
    kern::conv_forward(img.pix.data(), img.h, img.w, img.c, s.f1.data(), a.k1, a.c1,
                       a.s1, s.b_enc1.data(), c.pre1.data());

    c.mask.resize(c.pre1.size());
    c.a1d.resize(c.pre1.size());
    const double keep = 1.0 - a.dropout_rate;
    for (size_t n = 0; n < c.pre1.size(); ++n) {
        const double keep_this =
            (a.dropout_rate > 0.0) ? (rng.next_double() >= a.dropout_rate ? 1.0 / keep : 0.0)
                                   : 1.0;
        c.mask[n] = keep_this;
        c.a1d[n] = leaky(c.pre1[n], a.leaky_slope) * keep_this;
    }

    c.pre2.resize(static_cast<size_t>(h2) * w2 * a.c2);
    kern::conv_forward(c.a1d.data(), h1, w1, a.c1, s.f2.data(), a.k2, a.c2, a.s2,
                       s.b_enc2.data(), c.pre2.data());
    c.v.resize(c.pre2.size());
    for (size_t n = 0; n < c.pre2.size(); ++n) c.v[n] = leaky(c.pre2[n], a.leaky_slope);

    c.pre3.resize(static_cast<size_t>(h1) * w1 * a.c1);
    kern::tconv_forward(c.v.data(), h2, w2, a.c2, s.f2.data(), a.k2, a.c1, a.s2,
                        s.b_dec1.data(), c.pre3.data(), h1, w1);
    c.d1.resize(c.pre3.size());
    for (size_t n = 0; n < c.pre3.size(); ++n) c.d1[n] = leaky(c.pre3[n], a.leaky_slope);

    c.pre4.resize(static_cast<size_t>(s.h0) * s.w0 * s.c0);
    kern::tconv_forward(c.d1.data(), h1, w1, a.c1, s.f1.data(), a.k1, s.c0, a.s1,
                        s.b_dec2.data(), c.pre4.data(), s.h0, s.w0);
    c.out.resize(c.pre4.size());
    double loss = 0.0;
    for (size_t n = 0; n < c.pre4.size(); ++n) {
        c.out[n] = sigmoid(c.pre4[n]);
        const double d = c.out[n] - img.pix[n];
        loss += d * d;
    }
    c.loss = loss / static_cast<double>(c.pre4.size());
}

struct GradBuffers {
    std::vector<double> df1, df2;
    Vec db_e1, db_e2, db_d1, db_d2;

    void zero() {
        std::fill(df1.begin(), df1.end(), 0.0);
        std::fill(df2.begin(), df2.end(), 0.0);
        std::fill(db_e1.begin(), db_e1.end(), 0.0);
        std::fill(db_e2.begin(), db_e2.end(), 0.0);
        std::fill(db_d1.begin(), db_d1.end(), 0.0);
        std::fill(db_d2.begin(), db_d2.end(), 0.0);
    }
};

void bias_grad(const std::vector<double>& g, int channels, Vec& db) {
    const size_t sites = g.size() / channels;
    for (size_t n = 0; n < sites; ++n)
        for (int ch = 0; ch < channels; ++ch) db[ch] += g[n * channels + ch];
}

// Accumulates one image's gradients into gb; minimizes the MSE, so the caller
// must negate before the ascent-convention SGD step.
void train_backward(const Image& img, const ConvStack& s, const ForwardCache& c,
                    GradBuffers& gb) {
    const ConvArch& a = s.arch;
    const int h1 = s.h1(), w1 = s.w1(), h2 = s.h2(), w2 = s.w2();
    const double n_pix = static_cast<double>(c.out.size());

    // d(MSE)/d(pre4), through the sigmoid
    std::vector<double> g4(c.out.size());
    for (size_t n = 0; n < g4.size(); ++n)
        g4[n] = 2.0 * (c.out[n] - img.pix[n]) / n_pix * c.out[n] * (1.0 - c.out[n]);
    bias_grad(g4, s.c0, gb.db_d2);
    // decoder use of f1: out4[Y,X,ci] = sum d1[y,x,co] * f1[ky,kx,ci,co]
    kern::conv_filter_grad(g4.data(), s.h0, s.w0, s.c0, c.d1.data(), h1, w1, a.c1,
                           a.k1, a.s1, gb.df1.data());

    // back through tconv1 into d1 (adjoint of tconv = conv)
    std::vector<double> g3(static_cast<size_t>(h1) * w1 * a.c1);
    kern::conv_forward(g4.data(), s.h0, s.w0, s.c0, s.f1.data(), a.k1, a.c1, a.s1,
                       nullptr, g3.data());
    for (size_t n = 0; n < g3.size(); ++n) g3[n] *= leaky_grad(c.pre3[n], a.leaky_slope);
    bias_grad(g3, a.c1, gb.db_d1);
    // decoder use of f2
    kern::conv_filter_grad(g3.data(), h1, w1, a.c1, c.v.data(), h2, w2, a.c2, a.k2,
                           a.s2, gb.df2.data());

    // back through tconv2 into v
    std::vector<double> g2(static_cast<size_t>(h2) * w2 * a.c2);
    kern::conv_forward(g3.data(), h1, w1, a.c1, s.f2.data(), a.k2, a.c2, a.s2,
                       nullptr, g2.data());
    for (size_t n = 0; n < g2.size(); ++n) g2[n] *= leaky_grad(c.pre2[n], a.leaky_slope);
    bias_grad(g2, a.c2, gb.db_e2);
    // encoder use of f2
    kern::conv_filter_grad(c.a1d.data(), h1, w1, a.c1, g2.data(), h2, w2, a.c2, a.k2,
                           a.s2, gb.df2.data());

    // back through conv2 into a1d (adjoint of conv = tconv), dropout, leaky
    std::vector<double> g1(static_cast<size_t>(h1) * w1 * a.c1);
    kern::tconv_forward(g2.data(), h2, w2, a.c2, s.f2.data(), a.k2, a.c1, a.s2,
                        nullptr, g1.data(), h1, w1);
    for (size_t n = 0; n < g1.size(); ++n)
        g1[n] *= c.mask[n] * leaky_grad(c.pre1[n], a.leaky_slope);
    bias_grad(g1, a.c1, gb.db_e1);
    // encoder use of f1
    kern::conv_filter_grad(img.pix.data(), s.h0, s.w0, s.c0, g1.data(), h1, w1, a.c1,
                           a.k1, a.s1, gb.df1.data());
}

}  // namespace

ConvStack train_autoencoder(std::span<const Image> images, const TrainConfig& cfg,
                            const ConvArch& arch, const EpochCallback& cb) {
    cfg.validate();
    if (images.empty()) throw DomainError("train_autoencoder: empty image stream");
    const Image& first = images[0];
    for (const Image& img : images)
        if (img.h != first.h || img.w != first.w || img.c != first.c)
            throw ShapeError("train_autoencoder: images have mixed shapes");

    set_max_threads(cfg.threads);
    Rng init_rng(cfg.seed);
    ConvStack stack = ConvStack::random(first.h, first.w, first.c, arch, init_rng,
                                        cfg.init_std);

    SgdState sgd(cfg.learning_rate, cfg.momentum, cfg.l2, cfg.lr_decay);
    const size_t p_f1 = sgd.add_param(stack.f1.size());
    const size_t p_f2 = sgd.add_param(stack.f2.size());
    const size_t p_b1 = sgd.add_param(stack.b_enc1.size());
    const size_t p_b2 = sgd.add_param(stack.b_enc2.size());
    const size_t p_b3 = sgd.add_param(stack.b_dec1.size());
    const size_t p_b4 = sgd.add_param(stack.b_dec2.size());

    GradBuffers gb;
    gb.df1.resize(stack.f1.size());
    gb.df2.resize(stack.f2.size());
    gb.db_e1.resize(stack.b_enc1.size());
    gb.db_e2.resize(stack.b_enc2.size());
    gb.db_d1.resize(stack.b_dec1.size());
    gb.db_d2.resize(stack.b_dec2.size());

    ForwardCache cache;
    const size_t n = images.size();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double epoch_loss = 0.0;
        for (size_t start = 0; start < n; start += cfg.batch_size) {
            const size_t end = std::min(n, start + cfg.batch_size);
            gb.zero();
            double batch_loss = 0.0;
            for (size_t s = start; s < end; ++s) {
                Rng mask_rng(mix_seed(cfg.seed, static_cast<uint64_t>(epoch), s));
                train_forward(images[s], stack, mask_rng, cache);
                train_backward(images[s], stack, cache, gb);
                batch_loss += cache.loss;
            }
            if (!std::isfinite(batch_loss))
                throw NumericError("train_autoencoder: non-finite loss at epoch " +
                                   std::to_string(epoch));
            epoch_loss += batch_loss;
            // average & flip sign: SGD ascends, we minimize the loss
            const double scale = -1.0 / static_cast<double>(end - start);
            for (auto& g : gb.df1) g *= scale;
            for (auto& g : gb.df2) g *= scale;
            for (auto& g : gb.db_e1) g *= scale;
            for (auto& g : gb.db_e2) g *= scale;
            for (auto& g : gb.db_d1) g *= scale;
            for (auto& g : gb.db_d2) g *= scale;
            sgd.step(p_f1, stack.f1, gb.df1);
            sgd.step(p_f2, stack.f2, gb.df2);
            sgd.step(p_b1, stack.b_enc1, gb.db_e1);
            sgd.step(p_b2, stack.b_enc2, gb.db_e2);
            sgd.step(p_b3, stack.b_dec1, gb.db_d1);
            sgd.step(p_b4, stack.b_dec2, gb.db_d2);
        }
        sgd.end_epoch();
        if (cb) cb(epoch, epoch_loss / static_cast<double>(n));
    }
    return stack;
}

CapsuleLayer volume_to_capsules(const FeatureVolume& vol, int cap_dim) {
    if (cap_dim < 1 || vol.c % cap_dim != 0)
        throw ShapeError("volume_to_capsules: channel count " + std::to_string(vol.c) +
                         " not divisible by capsule dimension " + std::to_string(cap_dim));
    const int groups = vol.c / cap_dim;
    CapsuleLayer out(vol.h * vol.w * groups, cap_dim);
    // Contiguous channel groups at each (y, x) site, row-major over
    // (y, x, group): the flat buffers coincide element for element.
    for (int i = 0; i < out.count; ++i) {
        std::span<const double> raw{vol.data.data() + static_cast<size_t>(i) * cap_dim,
                                    static_cast<size_t>(cap_dim)};
        out.set_cap(i, squash(raw));
    }
    return out;
}

FeatureVolume capsules_to_volume(const CapsuleLayer& x, int h, int w, int c) {
    if (x.dim < 1 || c % x.dim != 0 ||
        static_cast<size_t>(x.count) * x.dim != static_cast<size_t>(h) * w * c)
        throw ShapeError("capsules_to_volume: layer does not reshape to " +
                         std::to_string(h) + "x" + std::to_string(w) + "x" +
                         std::to_string(c));
    FeatureVolume vol(h, w, c);
    for (int i = 0; i < x.count; ++i) {
        const Vec raw = unsquash(x.cap(i));
        for (int d = 0; d < x.dim; ++d)
            vol.data[static_cast<size_t>(i) * x.dim + d] = raw[d];
    }
    return vol;
}

}  // namespace poec
