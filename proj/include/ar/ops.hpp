#pragma once

#include <cstdint>
#include <functional>
#include <random>

#include "ar/tensor.hpp"

namespace ar {

// Elementwise / algebra. All ops validate shapes and reject non-finite inputs.
Tensor add(const Tensor& a, const Tensor& b);       // equal shapes, or b = [n] row bias on [m,n]
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);       // hadamard, equal shapes
Tensor scale(const Tensor& a, double s);
Tensor matmul(const Tensor& a, const Tensor& b);    // [m,k] x [k,n]
Tensor transpose(const Tensor& a);                  // 2-D
Tensor reshape(const Tensor& a, std::vector<int> shape);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, int r0, int r1);
Tensor slice_cols(const Tensor& a, int c0, int c1);
Tensor embedding(const Tensor& table, const std::vector<int>& ids);  // [V,d] -> [len,d]
Tensor gather_cols(const Tensor& a, const std::vector<int>& col_ids);  // [m,n] -> [m]

Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor softmax_rows(const Tensor& a);
Tensor log_softmax_rows(const Tensor& a);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-6);
Tensor dropout(const Tensor& x, const Tensor& mask);  // mask pre-scaled by 1/keep

Tensor reduce_sum(const Tensor& a);
Tensor reduce_mean(const Tensor& a);
Tensor logsumexp(const Tensor& a);  // over all elements -> scalar

/// 2-D convolution, NCHW single image: input [Cin,H,W], weight [Cout,Cin,kh,kw],
/// bias [Cout]; zero padding.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
              int pad);

/// 0/1 inverted-dropout mask pre-scaled by 1/(1-p). The caller owns the RNG.
Tensor make_dropout_mask(std::vector<int> shape, double p, std::mt19937_64& rng);

/// Max over coordinates of |analytic - numeric| / max(1, |analytic|, |numeric|),
/// central differences with step epsilon. fn must build its graph on the active tape.
double grad_check(const std::function<Tensor(const Tensor&)>& fn, const Tensor& point,
                  double epsilon);

}  // namespace ar
