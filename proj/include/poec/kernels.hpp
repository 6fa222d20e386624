#pragma once

#include <cstddef>

namespace poec {

// Thread count used by the OpenMP kernels; n <= 0 restores the runtime
// default.  All kernels produce bit-identical results for any thread count:
// each output element is accumulated in one fixed serial order.
void set_max_threads(int n);
int max_threads();

// The hot inner loops.  poec::kern holds the OpenMP versions used by the
// library; poec::ref holds naive serial implementations with the same
// element-wise accumulation order, kept as the test oracle and benchmark
// baseline.  Outputs of the two namespaces must match exactly.
//
// Buffer conventions:
//   capsule layers    x[(i)*d + k]
//   prediction grids  w[((i*J)+j)*d_out*d_in + r*d_in + c]   (row-major mats)
//   coefficients      c[i*J + j]
//   image tensors     t[(y*W + x)*C + ch]                    (HWC)
//   filter banks      f[((ky*K + kx)*Cin + ci)*Cout + co]
//
// Kernel contracts:
//   capsule_predictions  pred[((i*J)+j)*d_out + r] = sum_c w_ij[r,c] * x_i[c]
//   weighted_collect     z[j*d_out + r] = sum_i c[i,j] * pred[i,j,r]
//   reverse_collect      z_rec[i*d_in + c] = sum_j c[i,j] * (w_ij^T x_out_j)[c]
//   cd_outer             dw_ij[r,c] = 2*c[i,j] * ( z_j[r]*a_j * x_i[c]
//                                      - z_rec_j[r]*b_j * x_rec_i[c] )
//                        with a_j = 1/(1+|z_j|^2), b_j = 1/(1+|z_rec_j|^2)
//   conv_forward         valid-padding cross-correlation, out (oh,ow,cout),
//                        oh = (h-k)/stride + 1; bias may be null
//   tconv_forward        strict adjoint of conv_forward for a given original
//                        input shape (hout,wout,cin): out[Y,X,ci] = sum over
//                        (y,x,ky,kx) with Y=y*stride+ky, X=x*stride+kx of
//                        in[y,x,co]*f[ky,kx,ci,co]; bias may be null
//   conv_filter_grad     accumulates (+=) df[ky,kx,ci,co] +=
//                        sum_{y,x} big[y*stride+ky, x*stride+kx, ci] * small[y,x,co]
namespace kern {
void capsule_predictions(const double* x, int n_in, int d_in, const double* w,
                         int n_out, int d_out, double* pred);
void weighted_collect(const double* pred, const double* coeffs, int n_in,
                      int n_out, int d_out, double* z);
void reverse_collect(const double* x_out, const double* w, const double* coeffs,
                     int n_in, int n_out, int d_in, int d_out, double* z_rec);
void cd_outer(const double* x, const double* z, const double* x_rec,
              const double* z_rec, const double* coeffs, int n_in, int n_out,
              int d_in, int d_out, double* dw);
void conv_forward(const double* in, int h, int w, int cin, const double* f,
                  int k, int cout, int stride, const double* bias, double* out);
void tconv_forward(const double* in, int hin, int win, int cout,
                   const double* f, int k, int cin, int stride,
                   const double* bias, double* out, int hout, int wout);
void conv_filter_grad(const double* big, int h, int w, int cin,
                      const double* small, int oh, int ow, int cout, int k,
                      int stride, double* df);
}  // namespace kern

namespace ref {
void capsule_predictions(const double* x, int n_in, int d_in, const double* w,
                         int n_out, int d_out, double* pred);
void weighted_collect(const double* pred, const double* coeffs, int n_in,
                      int n_out, int d_out, double* z);
void reverse_collect(const double* x_out, const double* w, const double* coeffs,
                     int n_in, int n_out, int d_in, int d_out, double* z_rec);
void cd_outer(const double* x, const double* z, const double* x_rec,
              const double* z_rec, const double* coeffs, int n_in, int n_out,
              int d_in, int d_out, double* dw);
void conv_forward(const double* in, int h, int w, int cin, const double* f,
                  int k, int cout, int stride, const double* bias, double* out);
void tconv_forward(const double* in, int hin, int win, int cout,
                   const double* f, int k, int cin, int stride,
                   const double* bias, double* out, int hout, int wout);
void conv_filter_grad(const double* big, int h, int w, int cin,
                      const double* small, int oh, int ow, int cout, int k,
                      int stride, double* df);
}  // namespace ref

}  // namespace poec
