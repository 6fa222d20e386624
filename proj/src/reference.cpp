// Naive serial implementations of the kernels in kernels.cpp.  These are the
// oracle for the OpenMP versions: same per-element accumulation order, no
// blocking, no pragmas.  Tests require bit-identical output from both.
#include "poec/kernels.hpp"

namespace poec::ref {

void capsule_predictions(const double* x, int n_in, int d_in, const double* w,
                         int n_out, int d_out, double* pred) {
    for (int i = 0; i < n_in; ++i)
        for (int j = 0; j < n_out; ++j)
            for (int r = 0; r < d_out; ++r) {
                double acc = 0.0;
                for (int c = 0; c < d_in; ++c)
                    acc += w[((static_cast<size_t>(i) * n_out + j) * d_out + r) * d_in + c] *
                           x[static_cast<size_t>(i) * d_in + c];
                pred[(static_cast<size_t>(i) * n_out + j) * d_out + r] = acc;
            }
}

void weighted_collect(const double* pred, const double* coeffs, int n_in,
                      int n_out, int d_out, double* z) {
    for (int j = 0; j < n_out; ++j)
        for (int r = 0; r < d_out; ++r) {
            double acc = 0.0;
            for (int i = 0; i < n_in; ++i)
                acc += coeffs[static_cast<size_t>(i) * n_out + j] *
                       pred[(static_cast<size_t>(i) * n_out + j) * d_out + r];
            z[static_cast<size_t>(j) * d_out + r] = acc;
        }
}

void reverse_collect(const double* x_out, const double* w, const double* coeffs,
                     int n_in, int n_out, int d_in, int d_out, double* z_rec) {
    for (int i = 0; i < n_in; ++i)
        for (int c = 0; c < d_in; ++c) z_rec[static_cast<size_t>(i) * d_in + c] = 0.0;
    for (int i = 0; i < n_in; ++i)
        for (int j = 0; j < n_out; ++j)
            for (int r = 0; r < d_out; ++r)
                for (int c = 0; c < d_in; ++c)
                    z_rec[static_cast<size_t>(i) * d_in + c] +=
                        coeffs[static_cast<size_t>(i) * n_out + j] *
                        x_out[static_cast<size_t>(j) * d_out + r] *
                        w[((static_cast<size_t>(i) * n_out + j) * d_out + r) * d_in + c];
}

void cd_outer(const double* x, const double* z, const double* x_rec,
              const double* z_rec, const double* coeffs, int n_in, int n_out,
              int d_in, int d_out, double* dw) {
    for (int i = 0; i < n_in; ++i)
        for (int j = 0; j < n_out; ++j) {
            double nz = 0.0, nr = 0.0;
            for (int r = 0; r < d_out; ++r)
                nz += z[static_cast<size_t>(j) * d_out + r] * z[static_cast<size_t>(j) * d_out + r];
            for (int r = 0; r < d_out; ++r)
                nr += z_rec[static_cast<size_t>(j) * d_out + r] *
                      z_rec[static_cast<size_t>(j) * d_out + r];
            const double a = 1.0 / (1.0 + nz);
            const double b = 1.0 / (1.0 + nr);
            const double two_c = 2.0 * coeffs[static_cast<size_t>(i) * n_out + j];
            for (int r = 0; r < d_out; ++r)
                for (int c = 0; c < d_in; ++c) {
                    const double zp = z[static_cast<size_t>(j) * d_out + r] * a;
                    const double rp = z_rec[static_cast<size_t>(j) * d_out + r] * b;
                    dw[((static_cast<size_t>(i) * n_out + j) * d_out + r) * d_in + c] =
                        two_c * (zp * x[static_cast<size_t>(i) * d_in + c] -
                                 rp * x_rec[static_cast<size_t>(i) * d_in + c]);
                }
        }
}

void conv_forward(const double* in, int h, int w, int cin, const double* f,
                  int k, int cout, int stride, const double* bias, double* out) {
    const int oh = (h - k) / stride + 1;
    const int ow = (w - k) / stride + 1;
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x)
            for (int co = 0; co < cout; ++co) {
                double acc = bias ? bias[co] : 0.0;
                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx)
                        for (int ci = 0; ci < cin; ++ci)
                            acc += in[(static_cast<size_t>(y * stride + ky) * w +
                                       (x * stride + kx)) * cin + ci] *
                                   f[((static_cast<size_t>(ky) * k + kx) * cin + ci) * cout + co];
                out[(static_cast<size_t>(y) * ow + x) * cout + co] = acc;
            }
}

void tconv_forward(const double* in, int hin, int win, int cout,
                   const double* f, int k, int cin, int stride,
                   const double* bias, double* out, int hout, int wout) {
    for (int Y = 0; Y < hout; ++Y)
        for (int X = 0; X < wout; ++X)
            for (int ci = 0; ci < cin; ++ci) {
                double acc = bias ? bias[ci] : 0.0;
                for (int ky = 0; ky < k; ++ky) {
                    const int ys = Y - ky;
                    if (ys < 0 || ys % stride || ys / stride >= hin) continue;
                    for (int kx = 0; kx < k; ++kx) {
                        const int xs = X - kx;
                        if (xs < 0 || xs % stride || xs / stride >= win) continue;
                        for (int co = 0; co < cout; ++co)
                            acc += in[(static_cast<size_t>(ys / stride) * win +
                                       xs / stride) * cout + co] *
                                   f[((static_cast<size_t>(ky) * k + kx) * cin + ci) * cout + co];
                    }
                }
                out[(static_cast<size_t>(Y) * wout + X) * cin + ci] = acc;
            }
}

void conv_filter_grad(const double* big, int h, int w, int cin,
                      const double* small, int oh, int ow, int cout, int k,
                      int stride, double* df) {
    (void)h;
    for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx)
            for (int ci = 0; ci < cin; ++ci)
                for (int co = 0; co < cout; ++co)
                    for (int y = 0; y < oh; ++y)
                        for (int x = 0; x < ow; ++x)
                            df[((static_cast<size_t>(ky) * k + kx) * cin + ci) * cout + co] +=
                                big[(static_cast<size_t>(y * stride + ky) * w +
                                     (x * stride + kx)) * cin + ci] *
                                small[(static_cast<size_t>(y) * ow + x) * cout + co];
}

}  // namespace poec::ref
