#pragma once

#include <vector>

#include "latentsafe/tensor.hpp"

// 2-d convolution and its transpose, both lowered to GEMM through per-image
// im2col/col2im. Backward recomputes the column buffer instead of keeping it
// alive on the tape.

namespace latentsafe {

inline int conv_out_dim(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}
inline int tconv_out_dim(int in, int k, int stride, int pad) {
    return (in - 1) * stride - 2 * pad + k;
}

namespace detail {

// col[(c*kh+ky)*kw+kx, y*Wo+x] = im[c, y*s-p+ky, x*s-p+kx]  (0 outside)
inline void im2col(const double* im, int C, int H, int W, int kh, int kw, int stride, int pad,
                   int Ho, int Wo, double* col) {
    const int64_t cols = static_cast<int64_t>(Ho) * Wo;
    for (int c = 0; c < C; ++c) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                double* dst = col + ((static_cast<int64_t>(c) * kh + ky) * kw + kx) * cols;
                for (int y = 0; y < Ho; ++y) {
                    const int iy = y * stride - pad + ky;
                    if (iy < 0 || iy >= H) {
                        for (int x = 0; x < Wo; ++x) dst[static_cast<int64_t>(y) * Wo + x] = 0.0;
                        continue;
                    }
                    const double* src = im + (static_cast<int64_t>(c) * H + iy) * W;
                    for (int x = 0; x < Wo; ++x) {
                        const int ix = x * stride - pad + kx;
                        dst[static_cast<int64_t>(y) * Wo + x] = (ix >= 0 && ix < W) ? src[ix] : 0.0;
                    }
                }
            }
        }
    }
}

// adjoint of im2col: scatter-add columns back into the image
inline void col2im(const double* col, int C, int H, int W, int kh, int kw, int stride, int pad,
                   int Ho, int Wo, double* im) {
    const int64_t cols = static_cast<int64_t>(Ho) * Wo;
    for (int c = 0; c < C; ++c) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                const double* src = col + ((static_cast<int64_t>(c) * kh + ky) * kw + kx) * cols;
                for (int y = 0; y < Ho; ++y) {
                    const int iy = y * stride - pad + ky;
                    if (iy < 0 || iy >= H) continue;
                    double* dst = im + (static_cast<int64_t>(c) * H + iy) * W;
                    for (int x = 0; x < Wo; ++x) {
                        const int ix = x * stride - pad + kx;
                        if (ix >= 0 && ix < W) dst[ix] += src[static_cast<int64_t>(y) * Wo + x];
                    }
                }
            }
        }
    }
}

inline void require_4d(const Tensor& t, const char* op) {
    if (t.shape.size() != 4)
        throw std::invalid_argument(std::string(op) + ": expected 4-d tensor, got " + shape_str(t.shape));
}

}  // namespace detail

// input [B,Cin,H,W], kernel [Cout,Cin,kh,kw] -> [B,Cout,Ho,Wo]
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding) {
    detail::require_4d(input, "conv2d");
    detail::require_4d(kernel, "conv2d");
    const int B = input.shape[0], Cin = input.shape[1], H = input.shape[2], W = input.shape[3];
    const int Cout = kernel.shape[0], kh = kernel.shape[2], kw = kernel.shape[3];
    if (kernel.shape[1] != Cin)
        throw std::invalid_argument("conv2d: kernel channels " + shape_str(kernel.shape) +
                                    " do not match input " + shape_str(input.shape));
    if (stride < 1 || padding < 0) throw std::invalid_argument("conv2d: bad stride/padding");
    if (kh > H + 2 * padding || kw > W + 2 * padding)
        throw std::invalid_argument("conv2d: kernel larger than padded input");
    const int Ho = conv_out_dim(H, kh, stride, padding);
    const int Wo = conv_out_dim(W, kw, stride, padding);
    const int ckk = Cin * kh * kw;
    const int64_t cols = static_cast<int64_t>(Ho) * Wo;
    auto vals = std::make_shared<std::vector<double>>(static_cast<size_t>(B) * Cout * cols, 0.0);
    std::vector<double> col(static_cast<size_t>(ckk) * cols);
    for (int b = 0; b < B; ++b) {
        detail::im2col(input.ptr() + static_cast<int64_t>(b) * Cin * H * W, Cin, H, W, kh, kw, stride,
                       padding, Ho, Wo, col.data());
        gemm_nn(Cout, cols, ckk, kernel.ptr(), col.data(),
                vals->data() + static_cast<int64_t>(b) * Cout * cols);
    }
    return detail::finish_op(
        {B, Cout, Ho, Wo}, vals, {&input, &kernel},
        [=, xd = input.data, kd = kernel.data](const std::vector<int>& p) {
            return [=](const double* g, Tape& t) {
                std::vector<double> colbuf(static_cast<size_t>(ckk) * cols);
                double* gx = p[0] >= 0 ? t.grad_buf(p[0]) : nullptr;
                double* gk = p[1] >= 0 ? t.grad_buf(p[1]) : nullptr;
                for (int b = 0; b < B; ++b) {
                    const double* gout = g + static_cast<int64_t>(b) * Cout * cols;
                    if (gk) {
                        detail::im2col(xd->data() + static_cast<int64_t>(b) * Cin * H * W, Cin, H, W, kh,
                                       kw, stride, padding, Ho, Wo, colbuf.data());
                        gemm_nt(Cout, ckk, cols, gout, colbuf.data(), gk);
                    }
                    if (gx) {
                        gemm_tn0(ckk, cols, Cout, kd->data(), gout, colbuf.data());
                        detail::col2im(colbuf.data(), Cin, H, W, kh, kw, stride, padding, Ho, Wo,
                                       gx + static_cast<int64_t>(b) * Cin * H * W);
                    }
                }
            };
        });
}

// input [B,Cin,H,W], kernel [Cin,Cout,kh,kw] -> [B,Cout,Ho,Wo] with the
// adjoint shape rule Ho = (H-1)*stride - 2*padding + kh
inline Tensor conv2d_transpose(const Tensor& input, const Tensor& kernel, int stride, int padding) {
    detail::require_4d(input, "conv2d_transpose");
    detail::require_4d(kernel, "conv2d_transpose");
    const int B = input.shape[0], Cin = input.shape[1], H = input.shape[2], W = input.shape[3];
    const int Cout = kernel.shape[1], kh = kernel.shape[2], kw = kernel.shape[3];
    if (kernel.shape[0] != Cin)
        throw std::invalid_argument("conv2d_transpose: kernel channels " + shape_str(kernel.shape) +
                                    " do not match input " + shape_str(input.shape));
    if (stride < 1 || padding < 0) throw std::invalid_argument("conv2d_transpose: bad stride/padding");
    const int Ho = tconv_out_dim(H, kh, stride, padding);
    const int Wo = tconv_out_dim(W, kw, stride, padding);
    if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("conv2d_transpose: empty output");
    const int ckk = Cout * kh * kw;
    const int64_t cols = static_cast<int64_t>(H) * W;  // columns indexed by the *input* grid
    auto vals = std::make_shared<std::vector<double>>(static_cast<size_t>(B) * Cout * Ho * Wo, 0.0);
    std::vector<double> col(static_cast<size_t>(ckk) * cols);
    for (int b = 0; b < B; ++b) {
        gemm_tn0(ckk, cols, Cin, kernel.ptr(), input.ptr() + static_cast<int64_t>(b) * Cin * cols,
                 col.data());
        detail::col2im(col.data(), Cout, Ho, Wo, kh, kw, stride, padding, H, W,
                       vals->data() + static_cast<int64_t>(b) * Cout * Ho * Wo);
    }
    return detail::finish_op(
        {B, Cout, Ho, Wo}, vals, {&input, &kernel},
        [=, xd = input.data, kd = kernel.data](const std::vector<int>& p) {
            return [=](const double* g, Tape& t) {
                std::vector<double> colbuf(static_cast<size_t>(ckk) * cols);
                double* gx = p[0] >= 0 ? t.grad_buf(p[0]) : nullptr;
                double* gk = p[1] >= 0 ? t.grad_buf(p[1]) : nullptr;
                for (int b = 0; b < B; ++b) {
                    const double* gout = g + static_cast<int64_t>(b) * Cout * Ho * Wo;
                    detail::im2col(gout, Cout, Ho, Wo, kh, kw, stride, padding, H, W, colbuf.data());
                    if (gx)
                        gemm_nn(Cin, cols, ckk, kd->data(), colbuf.data(),
                                gx + static_cast<int64_t>(b) * Cin * cols);
                    if (gk)
                        gemm_nt(Cin, ckk, cols, xd->data() + static_cast<int64_t>(b) * Cin * cols,
                                colbuf.data(), gk);
                }
            };
        });
}

}  // namespace latentsafe
