#pragma once

#include <cstddef>

#include "ctta/autograd.hpp"

// Differentiable primitives. Every op is instantiated for float and double.
namespace ctta::ag {

// Elementwise, equal shapes.
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T s);
template <typename T> Var<T> add_scalar(const Var<T>& a, T s);
/// 1 - a
template <typename T> Var<T> one_minus(const Var<T>& a);

template <typename T> Var<T> relu(const Var<T>& a);
template <typename T> Var<T> sigmoid(const Var<T>& a);
/// x * relu6(x + 3) / 6
template <typename T> Var<T> hard_swish(const Var<T>& a);
/// log(max(a, floor)); gradient is zero where the floor is active.
template <typename T> Var<T> log_clamped(const Var<T>& a, T floor);
/// |a| with subgradient 0 at 0.
template <typename T> Var<T> abs(const Var<T>& a);

// Reductions.
template <typename T> Var<T> sum(const Var<T>& a);
template <typename T> Var<T> mean(const Var<T>& a);
/// [B, C] -> [B]
template <typename T> Var<T> sum_rows(const Var<T>& a);
/// [B, C] * w[B] broadcast over columns.
template <typename T> Var<T> scale_rows(const Var<T>& a, const Var<T>& w);

// Dense layers.
/// x[B, D] W[C, D]^T + b[C]
template <typename T> Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);
/// a[M, K] b[N, K]^T -> [M, N]
template <typename T> Var<T> matmul_nt(const Var<T>& a, const Var<T>& b);
/// out[i] = a[(i + shift) mod N] along the leading dimension.
template <typename T> Var<T> roll_rows(const Var<T>& a, std::size_t shift);
/// Row-wise softmax of [B, C] logits.
template <typename T> Var<T> softmax_rows(const Var<T>& logits);

// Convolutional stack, NCHW.
/// Square kernel; `bias` may be undefined.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, std::size_t stride, std::size_t pad);
/// 2x2 window, stride 2.
template <typename T> Var<T> max_pool2x2(const Var<T>& x);
/// [B, C, H, W] -> [B, C]
template <typename T> Var<T> global_avg_pool(const Var<T>& x);
/// Per-channel affine (x - mean) / std on constants; used for input normalization.
template <typename T>
Var<T> channel_affine(const Var<T>& x, const std::vector<T>& shift, const std::vector<T>& inv_scale);

enum class NormMode { source_stats, batch_stats };

struct BatchNormOptions {
  NormMode mode = NormMode::source_stats;
  bool update_running = false;  // only meaningful with batch_stats
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Batch normalization over (B, H, W) per channel. Running statistics are plain buffers.
template <typename T>
Var<T> batch_norm2d(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, Tensor<T>& running_mean,
                    Tensor<T>& running_var, const BatchNormOptions& options);

// Coordinate-attention building blocks on [B, C, L] strips.
/// mean over W: [B, C, H, W] -> [B, C, H]
template <typename T> Var<T> mean_over_width(const Var<T>& x);
/// mean over H: [B, C, H, W] -> [B, C, W]
template <typename T> Var<T> mean_over_height(const Var<T>& x);
/// [B, C, L1] ++ [B, C, L2] -> [B, C, L1 + L2]
template <typename T> Var<T> concat_last(const Var<T>& a, const Var<T>& b);
/// [B, C, L] -> [B, C, len] starting at `start`.
template <typename T> Var<T> slice_last(const Var<T>& x, std::size_t start, std::size_t len);
/// 1x1 transform across channels: x[B, Ci, L], W[Co, Ci], b[Co] -> [B, Co, L]
template <typename T> Var<T> channel_mix(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);
/// gh[B, C, H] (x) gw[B, C, W] -> [B, C, H, W] with out = gh[h] * gw[w].
template <typename T> Var<T> outer_gate(const Var<T>& gh, const Var<T>& gw);

}  // namespace ctta::ag
