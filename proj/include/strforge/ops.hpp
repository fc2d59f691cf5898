#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "strforge/tensor.hpp"

namespace strforge {

/// Height/width pair. Construct from the (width × height) notation used by
/// architecture tables with `Extent2::wxh`.
struct Extent2 {
  std::size_t h = 1;
  std::size_t w = 1;

  static constexpr Extent2 square(std::size_t v) { return {v, v}; }
  static constexpr Extent2 wxh(std::size_t w, std::size_t h) { return {h, w}; }
  bool operator==(const Extent2&) const = default;
};

// ---- elementwise ---------------------------------------------------------

/// Broadcasting follows numpy rules (trailing alignment, size-1 expansion).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor broadcast_to(const Tensor& x, const Shape& shape);
Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);

Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
/// Clamp to [lo, hi]; the gradient passes where lo <= x <= hi.
Tensor hardtanh(const Tensor& x, double lo = -1.0, double hi = 1.0);
/// log(exp(a) + exp(b)); both -inf gives -inf with zero gradient.
Tensor log_add_exp(const Tensor& a, const Tensor& b);

// ---- reductions ----------------------------------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_axis(const Tensor& x, std::size_t axis, bool keepdim = false);
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x, std::size_t axis);

// ---- shape ---------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& dims);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
Tensor select(const Tensor& x, std::size_t axis, std::size_t index);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor stack(const std::vector<Tensor>& parts, std::size_t axis);

/// out[n, s] = x[n, index[n * cols + s]] for x of shape [N, K].
Tensor gather_cols(const Tensor& x, const std::vector<std::size_t>& index, std::size_t cols);
/// out[:, s] = x[:, s - k] for s >= k, `fill` otherwise (x of shape [N, S]).
Tensor shift_cols(const Tensor& x, std::size_t k, double fill);

// ---- linear algebra ------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
/// Batched product: [B, m, k] x [B, k, n] -> [B, m, n].
Tensor bmm(const Tensor& a, const Tensor& b);
/// x [N, in] times weightᵀ [in, out] plus bias [out] (bias may be undefined).
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// ---- convolutional -------------------------------------------------------

/// Cross-correlation. x is [N, C, H, W] or [C, H, W]; weight [O, C, kh, kw];
/// bias [O] or undefined. Output extents must be integral.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Extent2 stride,
              Extent2 padding);
/// Max pooling with -inf padding and floor output sizing. Gradient goes to
/// the first maximal element in row-major window order.
Tensor maxpool2d(const Tensor& x, Extent2 kernel, Extent2 stride, Extent2 padding);
/// Per-channel spatial mean: [N, C, H, W] -> [N, C], [C, H, W] -> [C].
Tensor adaptive_avg_pool(const Tensor& x);

enum class BatchNormMode { Train, Infer };

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  bool initialized = false;
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Per-channel normalisation over [N, C, H, W] or [N, C]. Train mode uses
/// batch statistics and updates the running moments (unbiased variance);
/// infer mode requires recorded moments.
Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                 BatchNormMode mode);

/// Bilinear sampling with zero padding. img [N, C, H, W]; grid [N, Ho, Wo, 2]
/// holding normalised (x, y) in [-1, 1] with corners on pixel centres.
Tensor bilinear_sample(const Tensor& img, const Tensor& grid);

// ---- recurrent -----------------------------------------------------------

/// Gate order i, f, g, o along the 4H axis.
struct LstmWeights {
  Tensor w_ih;  // [4H, in]
  Tensor w_hh;  // [4H, H]
  Tensor bias;  // [4H]
};

/// One LSTM step on x [N, in], h/c [N, H]; returns (h, c).
std::pair<Tensor, Tensor> lstm_cell(const Tensor& x, const Tensor& h, const Tensor& c,
                                    const LstmWeights& w);

}  // namespace strforge
