#include <doctest.h>

#include <cmath>
#include <vector>

#include "poec/kernels.hpp"
#include "poec/numerics.hpp"

using namespace poec;

namespace {

std::vector<double> randn(Rng& rng, size_t n) {
    std::vector<double> v(n);
    for (auto& e : v) e = rng.next_normal();
    return v;
}

}  // namespace

TEST_CASE("openmp capsule kernels match the serial reference bit for bit") {
    Rng rng(71);
    for (int trial = 0; trial < 20; ++trial) {
        const int I = 1 + static_cast<int>(rng.next_u64() % 12);
        const int J = 1 + static_cast<int>(rng.next_u64() % 8);
        const int din = 1 + static_cast<int>(rng.next_u64() % 6);
        const int dout = 1 + static_cast<int>(rng.next_u64() % 6);

        const auto x = randn(rng, size_t(I) * din);
        const auto w = randn(rng, size_t(I) * J * din * dout);
        const auto coeffs = randn(rng, size_t(I) * J);
        const auto x_out = randn(rng, size_t(J) * dout);

        std::vector<double> pa(size_t(I) * J * dout), pb(pa.size());
        ref::capsule_predictions(x.data(), I, din, w.data(), J, dout, pa.data());
        kern::capsule_predictions(x.data(), I, din, w.data(), J, dout, pb.data());
        CHECK(pa == pb);

        std::vector<double> za(size_t(J) * dout), zb(za.size());
        ref::weighted_collect(pa.data(), coeffs.data(), I, J, dout, za.data());
        kern::weighted_collect(pa.data(), coeffs.data(), I, J, dout, zb.data());
        CHECK(za == zb);

        std::vector<double> ra(size_t(I) * din), rb(ra.size());
        ref::reverse_collect(x_out.data(), w.data(), coeffs.data(), I, J, din, dout,
                             ra.data());
        kern::reverse_collect(x_out.data(), w.data(), coeffs.data(), I, J, din, dout,
                              rb.data());
        CHECK(ra == rb);

        const auto x_rec = randn(rng, size_t(I) * din);
        const auto z_rec = randn(rng, size_t(J) * dout);
        std::vector<double> ga(size_t(I) * J * din * dout), gb(ga.size());
        ref::cd_outer(x.data(), za.data(), x_rec.data(), z_rec.data(), coeffs.data(), I,
                      J, din, dout, ga.data());
        kern::cd_outer(x.data(), za.data(), x_rec.data(), z_rec.data(), coeffs.data(), I,
                       J, din, dout, gb.data());
        CHECK(ga == gb);
    }
}

TEST_CASE("openmp conv kernels match the serial reference bit for bit") {
    Rng rng(72);
    struct Shape { int h, w, cin, k, cout, stride; };
    for (const Shape s : {Shape{8, 8, 3, 3, 4, 1}, Shape{9, 7, 2, 2, 5, 2},
                          Shape{12, 12, 4, 5, 3, 2}, Shape{6, 11, 1, 3, 8, 3}}) {
        const int oh = (s.h - s.k) / s.stride + 1;
        const int ow = (s.w - s.k) / s.stride + 1;
        const auto in = randn(rng, size_t(s.h) * s.w * s.cin);
        const auto f = randn(rng, size_t(s.k) * s.k * s.cin * s.cout);
        const auto bias = randn(rng, s.cout);

        std::vector<double> a(size_t(oh) * ow * s.cout), b(a.size());
        ref::conv_forward(in.data(), s.h, s.w, s.cin, f.data(), s.k, s.cout, s.stride,
                          bias.data(), a.data());
        kern::conv_forward(in.data(), s.h, s.w, s.cin, f.data(), s.k, s.cout, s.stride,
                           bias.data(), b.data());
        CHECK(a == b);

        const auto tin = randn(rng, size_t(oh) * ow * s.cout);
        const auto tbias = randn(rng, s.cin);
        std::vector<double> ta(size_t(s.h) * s.w * s.cin), tb(ta.size());
        ref::tconv_forward(tin.data(), oh, ow, s.cout, f.data(), s.k, s.cin, s.stride,
                           tbias.data(), ta.data(), s.h, s.w);
        kern::tconv_forward(tin.data(), oh, ow, s.cout, f.data(), s.k, s.cin, s.stride,
                            tbias.data(), tb.data(), s.h, s.w);
        CHECK(ta == tb);

        std::vector<double> ga(size_t(s.k) * s.k * s.cin * s.cout, 0.0), gb(ga.size(), 0.0);
        ref::conv_filter_grad(in.data(), s.h, s.w, s.cin, tin.data(), oh, ow, s.cout,
                              s.k, s.stride, ga.data());
        kern::conv_filter_grad(in.data(), s.h, s.w, s.cin, tin.data(), oh, ow, s.cout,
                               s.k, s.stride, gb.data());
        CHECK(ga == gb);
    }
}

TEST_CASE("tconv_forward is the adjoint of conv_forward") {
    Rng rng(73);
    // includes an odd-gap stride case where the strided window leaves the
    // last input row/column untouched
    struct Shape { int h, w, cin, k, cout, stride; };
    for (const Shape s : {Shape{6, 6, 2, 3, 3, 1}, Shape{5, 5, 2, 2, 3, 2},
                          Shape{7, 6, 3, 2, 2, 2}}) {
        const int oh = (s.h - s.k) / s.stride + 1;
        const int ow = (s.w - s.k) / s.stride + 1;
        const auto x = randn(rng, size_t(s.h) * s.w * s.cin);
        const auto y = randn(rng, size_t(oh) * ow * s.cout);
        const auto f = randn(rng, size_t(s.k) * s.k * s.cin * s.cout);

        std::vector<double> cx(size_t(oh) * ow * s.cout);
        kern::conv_forward(x.data(), s.h, s.w, s.cin, f.data(), s.k, s.cout, s.stride,
                           nullptr, cx.data());
        std::vector<double> ty(size_t(s.h) * s.w * s.cin);
        kern::tconv_forward(y.data(), oh, ow, s.cout, f.data(), s.k, s.cin, s.stride,
                            nullptr, ty.data(), s.h, s.w);

        double lhs = 0.0, rhs = 0.0;
        for (size_t n = 0; n < cx.size(); ++n) lhs += cx[n] * y[n];
        for (size_t n = 0; n < x.size(); ++n) rhs += x[n] * ty[n];
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
    }
}

TEST_CASE("conv_filter_grad differentiates conv_forward") {
    // df entry = d/df <conv(x; f), y>, checked against the inner product form
    Rng rng(74);
    const int h = 5, w = 6, cin = 2, k = 3, cout = 2, stride = 1;
    const int oh = (h - k) / stride + 1, ow = (w - k) / stride + 1;
    const auto x = randn(rng, size_t(h) * w * cin);
    const auto y = randn(rng, size_t(oh) * ow * cout);
    auto f = randn(rng, size_t(k) * k * cin * cout);

    std::vector<double> df(f.size(), 0.0);
    kern::conv_filter_grad(x.data(), h, w, cin, y.data(), oh, ow, cout, k, stride,
                           df.data());

    const double eps = 1e-6;
    for (size_t e = 0; e < f.size(); e += 7) {  // spot-check a stride of entries
        const double saved = f[e];
        auto eval = [&](double v) {
            f[e] = v;
            std::vector<double> out(size_t(oh) * ow * cout);
            kern::conv_forward(x.data(), h, w, cin, f.data(), k, cout, stride, nullptr,
                               out.data());
            double acc = 0.0;
            for (size_t n = 0; n < out.size(); ++n) acc += out[n] * y[n];
            return acc;
        };
        const double fd = (eval(saved + eps) - eval(saved - eps)) / (2.0 * eps);
        f[e] = saved;
        CHECK(df[e] == doctest::Approx(fd).epsilon(1e-5));
    }
}

TEST_CASE("thread count does not change kernel output") {
    Rng rng(75);
    const int h = 13, w = 11, cin = 5, k = 3, cout = 7, stride = 2;
    const auto in = randn(rng, size_t(h) * w * cin);
    const auto f = randn(rng, size_t(k) * k * cin * cout);
    const int oh = (h - k) / stride + 1, ow = (w - k) / stride + 1;

    std::vector<double> one(size_t(oh) * ow * cout), many(one.size());
    set_max_threads(1);
    kern::conv_forward(in.data(), h, w, cin, f.data(), k, cout, stride, nullptr,
                       one.data());
    set_max_threads(4);
    kern::conv_forward(in.data(), h, w, cin, f.data(), k, cout, stride, nullptr,
                       many.data());
    set_max_threads(0);
    CHECK(one == many);
}
