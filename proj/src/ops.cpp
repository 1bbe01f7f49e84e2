#include "ctta/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <limits>

namespace ctta::ag {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw ConfigError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw ConfigError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + to_string(s));
  }
}

// Unary elementwise op: forward f(x), backward g * df(x, y).
template <typename T, typename F, typename D>
Var<T> unary(const Var<T>& a, F f, D df) {
  const auto& x = a.value();
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return make_result<T>(std::move(out), {a}, [df](Node<T>& self) {
    auto& in = *self.parents[0];
    if (!in.requires_grad) return;
    auto& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(in.value[i], self.value[i]);
  });
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (auto& p : self.parents)
      if (p->requires_grad) p->accumulate(self.grad);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same(a.shape(), b.shape(), "sub");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad);
    if (self.parents[1]->requires_grad) {
      auto& g = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same(a.shape(), b.shape(), "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  return unary<T>(a, [s](T x) { return s * x; }, [s](T, T) { return s; });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T s) {
  return unary<T>(a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> one_minus(const Var<T>& a) {
  return unary<T>(a, [](T x) { return T(1) - x; }, [](T, T) { return T(-1); });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  return unary<T>(a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  return unary<T>(
      a, [](T x) { return T(1) / (T(1) + std::exp(-x)); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> hard_swish(const Var<T>& a) {
  return unary<T>(
      a,
      [](T x) {
        const T r6 = std::min(std::max(x + T(3), T(0)), T(6));
        return x * r6 / T(6);
      },
      [](T x, T) {
        if (x <= T(-3)) return T(0);
        if (x >= T(3)) return T(1);
        return (T(2) * x + T(3)) / T(6);
      });
}

template <typename T>
Var<T> log_clamped(const Var<T>& a, T floor) {
  return unary<T>(
      a, [floor](T x) { return std::log(std::max(x, floor)); },
      [floor](T x, T) { return x > floor ? T(1) / x : T(0); });
}

template <typename T>
Var<T> abs(const Var<T>& a) {
  return unary<T>(
      a, [](T x) { return std::abs(x); },
      [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  double acc = 0.0;
  for (auto v : a.value().values()) acc += v;
  Tensor<T> out(Shape{1}, static_cast<T>(acc));
  return make_result<T>(std::move(out), {a}, [](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0];
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  require(a.value().size() > 0, "mean of empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(a.value().size()));
}

template <typename T>
Var<T> sum_rows(const Var<T>& a) {
  require_rank(a.shape(), 2, "sum_rows");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  Tensor<T> out(Shape{rows});
  for (std::size_t i = 0; i < rows; ++i) {
    T acc = 0;
    for (std::size_t j = 0; j < cols; ++j) acc += a.value()[i * cols + j];
    out[i] = acc;
  }
  return make_result<T>(std::move(out), {a}, [cols](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      for (std::size_t j = 0; j < cols; ++j) g[i * cols + j] += self.grad[i];
  });
}

template <typename T>
Var<T> scale_rows(const Var<T>& a, const Var<T>& w) {
  require_rank(a.shape(), 2, "scale_rows");
  require(w.value().size() == a.dim(0), "scale_rows: weight length must equal row count");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = a.value()[i * cols + j] * w.value()[i];
  return make_result<T>(std::move(out), {a, w}, [rows, cols](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pw = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) g[i * cols + j] += self.grad[i * cols + j] * pw.value[i];
    }
    if (pw.requires_grad) {
      auto& g = pw.grad_buffer();
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) g[i] += self.grad[i * cols + j] * pa.value[i * cols + j];
    }
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  require_rank(x.shape(), 2, "linear");
  require_rank(weight.shape(), 2, "linear weight");
  const std::size_t batch = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
  if (weight.dim(1) != in) {
    throw ConfigError("linear: input dim " + std::to_string(in) + " does not match weight " +
                      to_string(weight.shape()));
  }
  require(bias.value().size() == out_dim, "linear: bias length mismatch");
  Tensor<T> out(Shape{batch, out_dim});
  MatMap<T> o(out.data(), batch, out_dim);
  ConstMatMap<T> xm(x.value().data(), batch, in);
  ConstMatMap<T> wm(weight.value().data(), out_dim, in);
  o.noalias() = xm * wm.transpose();
  for (std::size_t i = 0; i < batch; ++i)
    for (std::size_t j = 0; j < out_dim; ++j) o(i, j) += bias.value()[j];
  return make_result<T>(std::move(out), {x, weight, bias}, [batch, in, out_dim](Node<T>& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    auto& pb = *self.parents[2];
    ConstMatMap<T> g(self.grad.data(), batch, out_dim);
    if (px.requires_grad) {
      MatMap<T> gx(px.grad_buffer().data(), batch, in);
      gx.noalias() += g * ConstMatMap<T>(pw.value.data(), out_dim, in);
    }
    if (pw.requires_grad) {
      MatMap<T> gw(pw.grad_buffer().data(), out_dim, in);
      gw.noalias() += g.transpose() * ConstMatMap<T>(px.value.data(), batch, in);
    }
    if (pb.requires_grad) {
      auto& gb = pb.grad_buffer();
      for (std::size_t i = 0; i < batch; ++i)
        for (std::size_t j = 0; j < out_dim; ++j) gb[j] += g(i, j);
    }
  });
}

template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  require_rank(a.shape(), 2, "matmul_nt");
  require_rank(b.shape(), 2, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) throw ConfigError("matmul_nt: inner dims differ " + to_string(a.shape()) + " " + to_string(b.shape()));
  Tensor<T> out(Shape{m, n});
  MatMap<T>(out.data(), m, n).noalias() =
      ConstMatMap<T>(a.value().data(), m, k) * ConstMatMap<T>(b.value().data(), n, k).transpose();
  return make_result<T>(std::move(out), {a, b}, [m, k, n](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    ConstMatMap<T> g(self.grad.data(), m, n);
    if (pa.requires_grad)
      MatMap<T>(pa.grad_buffer().data(), m, k).noalias() += g * ConstMatMap<T>(pb.value.data(), n, k);
    if (pb.requires_grad)
      MatMap<T>(pb.grad_buffer().data(), n, k).noalias() += g.transpose() * ConstMatMap<T>(pa.value.data(), m, k);
  });
}

template <typename T>
Var<T> roll_rows(const Var<T>& a, std::size_t shift) {
  require(a.shape().size() >= 1 && a.dim(0) > 0, "roll_rows: empty leading dimension");
  const std::size_t n = a.dim(0), row = a.value().size() / n;
  return make_result<T>(ctta::roll_rows(a.value(), shift), {a}, [n, row, shift](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t src = (i + shift) % n;
      for (std::size_t k = 0; k < row; ++k) g[src * row + k] += self.grad[i * row + k];
    }
  });
}

template <typename T>
Var<T> softmax_rows(const Var<T>& logits) {
  require_rank(logits.shape(), 2, "softmax_rows");
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  Tensor<T> out(logits.shape());
  for (std::size_t i = 0; i < rows; ++i) {
    const T* z = logits.value().data() + i * cols;
    T* p = out.data() + i * cols;
    T zmax = z[0];
    for (std::size_t j = 1; j < cols; ++j) zmax = std::max(zmax, z[j]);
    T total = 0;
    for (std::size_t j = 0; j < cols; ++j) total += (p[j] = std::exp(z[j] - zmax));
    for (std::size_t j = 0; j < cols; ++j) p[j] /= total;
  }
  return make_result<T>(std::move(out), {logits}, [rows, cols](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < rows; ++i) {
      const T* p = self.value.data() + i * cols;
      const T* go = self.grad.data() + i * cols;
      T dot = 0;
      for (std::size_t j = 0; j < cols; ++j) dot += go[j] * p[j];
      for (std::size_t j = 0; j < cols; ++j) g[i * cols + j] += p[j] * (go[j] - dot);
    }
  });
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, std::size_t stride, std::size_t pad) {
  require_rank(x.shape(), 4, "conv2d input");
  require_rank(weight.shape(), 4, "conv2d weight");
  const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t cout = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != cin || weight.dim(3) != k) {
    throw ConfigError("conv2d: weight " + to_string(weight.shape()) + " incompatible with input " +
                      to_string(x.shape()));
  }
  require(stride >= 1, "conv2d: stride must be positive");
  require(h + 2 * pad >= k && w + 2 * pad >= k, "conv2d: kernel larger than padded input");
  const bool has_bias = bias.defined();
  if (has_bias) require(bias.value().size() == cout, "conv2d: bias length mismatch");

  const std::size_t ho = (h + 2 * pad - k) / stride + 1;
  const std::size_t wo = (w + 2 * pad - k) / stride + 1;
  const std::size_t pix = ho * wo;
  const std::size_t rows = cin * k * k;
  const std::size_t cols = batch * pix;

  // im2col: col[(ci, kh, kw), (b, oh, ow)]
  auto col = std::make_shared<AlignedVector<T>>(rows * cols, T(0));
  const T* xs = x.value().data();
  for (std::size_t ci = 0; ci < cin; ++ci)
    for (std::size_t kh = 0; kh < k; ++kh)
      for (std::size_t kw = 0; kw < k; ++kw) {
        T* dst = col->data() + ((ci * k + kh) * k + kw) * cols;
        for (std::size_t b = 0; b < batch; ++b) {
          const T* src = xs + (b * cin + ci) * h * w;
          for (std::size_t oh = 0; oh < ho; ++oh) {
            const long ih = static_cast<long>(oh * stride + kh) - static_cast<long>(pad);
            T* row = dst + b * pix + oh * wo;
            if (ih < 0 || ih >= static_cast<long>(h)) continue;
            for (std::size_t ow = 0; ow < wo; ++ow) {
              const long iw = static_cast<long>(ow * stride + kw) - static_cast<long>(pad);
              if (iw >= 0 && iw < static_cast<long>(w)) row[ow] = src[ih * w + iw];
            }
          }
        }
      }

  RowMat<T> prod(cout, cols);
  prod.noalias() = ConstMatMap<T>(weight.value().data(), cout, rows) * ConstMatMap<T>(col->data(), rows, cols);
  Tensor<T> out(Shape{batch, cout, ho, wo});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t co = 0; co < cout; ++co) {
      const T add_b = has_bias ? bias.value()[co] : T(0);
      T* dst = out.data() + (b * cout + co) * pix;
      const T* src = prod.data() + co * cols + b * pix;
      for (std::size_t p = 0; p < pix; ++p) dst[p] = src[p] + add_b;
    }

  std::vector<Var<T>> parents{x, weight};
  if (has_bias) parents.push_back(bias);
  return make_result<T>(std::move(out), std::move(parents),
                        [=](Node<T>& self) {
                          RowMat<T> g(cout, cols);
                          for (std::size_t b = 0; b < batch; ++b)
                            for (std::size_t co = 0; co < cout; ++co) {
                              const T* src = self.grad.data() + (b * cout + co) * pix;
                              std::copy_n(src, pix, g.data() + co * cols + b * pix);
                            }
                          auto& px = *self.parents[0];
                          auto& pw = *self.parents[1];
                          ConstMatMap<T> colm(col->data(), rows, cols);
                          if (pw.requires_grad) {
                            MatMap<T>(pw.grad_buffer().data(), cout, rows).noalias() += g * colm.transpose();
                          }
                          if (has_bias && self.parents[2]->requires_grad) {
                            auto& gb = self.parents[2]->grad_buffer();
                            for (std::size_t co = 0; co < cout; ++co) gb[co] += g.row(co).sum();
                          }
                          if (px.requires_grad) {
                            RowMat<T> dcol(rows, cols);
                            dcol.noalias() = ConstMatMap<T>(pw.value.data(), cout, rows).transpose() * g;
                            auto& gx = px.grad_buffer();
                            for (std::size_t ci = 0; ci < cin; ++ci)
                              for (std::size_t kh = 0; kh < k; ++kh)
                                for (std::size_t kw = 0; kw < k; ++kw) {
                                  const T* srow = dcol.data() + ((ci * k + kh) * k + kw) * cols;
                                  for (std::size_t b = 0; b < batch; ++b) {
                                    T* dst = gx.data() + (b * cin + ci) * h * w;
                                    for (std::size_t oh = 0; oh < ho; ++oh) {
                                      const long ih = static_cast<long>(oh * stride + kh) - static_cast<long>(pad);
                                      if (ih < 0 || ih >= static_cast<long>(h)) continue;
                                      const T* s = srow + b * pix + oh * wo;
                                      for (std::size_t ow = 0; ow < wo; ++ow) {
                                        const long iw = static_cast<long>(ow * stride + kw) - static_cast<long>(pad);
                                        if (iw >= 0 && iw < static_cast<long>(w)) dst[ih * w + iw] += s[ow];
                                      }
                                    }
                                  }
                                }
                          }
                        });
}

template <typename T>
Var<T> max_pool2x2(const Var<T>& x) {
  require_rank(x.shape(), 4, "max_pool2x2");
  const std::size_t batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  require(h >= 2 && w >= 2, "max_pool2x2: spatial dims must be at least 2");
  const std::size_t ho = h / 2, wo = w / 2;
  Tensor<T> out(Shape{batch, c, ho, wo});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  const T* xs = x.value().data();
  std::size_t o = 0;
  for (std::size_t bc = 0; bc < batch * c; ++bc)
    for (std::size_t oh = 0; oh < ho; ++oh)
      for (std::size_t ow = 0; ow < wo; ++ow, ++o) {
        std::size_t best = bc * h * w + (2 * oh) * w + 2 * ow;
        for (std::size_t dh = 0; dh < 2; ++dh)
          for (std::size_t dw = 0; dw < 2; ++dw) {
            const std::size_t idx = bc * h * w + (2 * oh + dh) * w + 2 * ow + dw;
            if (xs[idx] > xs[best]) best = idx;
          }
        out[o] = xs[best];
        (*argmax)[o] = best;
      }
  return make_result<T>(std::move(out), {x}, [argmax](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < argmax->size(); ++i) g[(*argmax)[i]] += self.grad[i];
  });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  require_rank(x.shape(), 4, "global_avg_pool");
  const std::size_t batch = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor<T> out(Shape{batch, c});
  for (std::size_t i = 0; i < batch * c; ++i) {
    double acc = 0.0;
    const T* src = x.value().data() + i * hw;
    for (std::size_t p = 0; p < hw; ++p) acc += src[p];
    out[i] = static_cast<T>(acc / static_cast<double>(hw));
  }
  return make_result<T>(std::move(out), {x}, [hw](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    const T inv = T(1) / static_cast<T>(hw);
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      for (std::size_t p = 0; p < hw; ++p) g[i * hw + p] += self.grad[i] * inv;
  });
}

template <typename T>
Var<T> channel_affine(const Var<T>& x, const std::vector<T>& shift, const std::vector<T>& inv_scale) {
  require_rank(x.shape(), 4, "channel_affine");
  const std::size_t batch = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  require(shift.size() == c && inv_scale.size() == c, "channel_affine: per-channel constants mismatch");
  Tensor<T> out(x.shape());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (b * c + ch) * hw;
      for (std::size_t p = 0; p < hw; ++p) out[base + p] = (x.value()[base + p] - shift[ch]) * inv_scale[ch];
    }
  return make_result<T>(std::move(out), {x}, [inv_scale, batch, c, hw](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t base = (b * c + ch) * hw;
        for (std::size_t p = 0; p < hw; ++p) g[base + p] += self.grad[base + p] * inv_scale[ch];
      }
  });
}

template <typename T>
Var<T> batch_norm2d(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, Tensor<T>& running_mean,
                    Tensor<T>& running_var, const BatchNormOptions& options) {
  require_rank(x.shape(), 4, "batch_norm2d");
  const std::size_t batch = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  require(gamma.value().size() == c && beta.value().size() == c, "batch_norm2d: affine size mismatch");
  require(running_mean.size() == c && running_var.size() == c, "batch_norm2d: running stats size mismatch");
  const bool use_batch = options.mode == NormMode::batch_stats;
  const std::size_t count = batch * hw;
  if (use_batch && count < 2) throw ConfigError("batch_norm2d: batch statistics need more than one value per channel");

  std::vector<T> mean(c), inv_std(c);
  const T* xs = x.value().data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    if (use_batch) {
      double s = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* src = xs + (b * c + ch) * hw;
        for (std::size_t p = 0; p < hw; ++p) s += src[p];
      }
      const double mu = s / static_cast<double>(count);
      double ss = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* src = xs + (b * c + ch) * hw;
        for (std::size_t p = 0; p < hw; ++p) ss += (src[p] - mu) * (src[p] - mu);
      }
      const double var = ss / static_cast<double>(count);
      mean[ch] = static_cast<T>(mu);
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var + options.eps));
      if (options.update_running) {
        const double m = options.momentum;
        const double unbiased = ss / static_cast<double>(count - 1);
        running_mean[ch] = static_cast<T>((1.0 - m) * running_mean[ch] + m * mu);
        running_var[ch] = static_cast<T>((1.0 - m) * running_var[ch] + m * unbiased);
      }
    } else {
      mean[ch] = running_mean[ch];
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var[ch]) + options.eps));
    }
  }

  auto xhat = std::make_shared<std::vector<T>>(x.value().size());
  Tensor<T> out(x.shape());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (b * c + ch) * hw;
      const T gm = gamma.value()[ch], bt = beta.value()[ch];
      for (std::size_t p = 0; p < hw; ++p) {
        const T n = (xs[base + p] - mean[ch]) * inv_std[ch];
        (*xhat)[base + p] = n;
        out[base + p] = gm * n + bt;
      }
    }

  return make_result<T>(std::move(out), {x, gamma, beta}, [=](Node<T>& self) {
    auto& px = *self.parents[0];
    auto& pg = *self.parents[1];
    auto& pb = *self.parents[2];
    const T* go = self.grad.data();
    std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t base = (b * c + ch) * hw;
        for (std::size_t p = 0; p < hw; ++p) {
          sum_g[ch] += go[base + p];
          sum_gx[ch] += go[base + p] * (*xhat)[base + p];
        }
      }
    if (pg.requires_grad) {
      auto& g = pg.grad_buffer();
      for (std::size_t ch = 0; ch < c; ++ch) g[ch] += static_cast<T>(sum_gx[ch]);
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t ch = 0; ch < c; ++ch) g[ch] += static_cast<T>(sum_g[ch]);
    }
    if (!px.requires_grad) return;
    auto& gx = px.grad_buffer();
    const double n = static_cast<double>(count);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t base = (b * c + ch) * hw;
        const double k = static_cast<double>(pg.value[ch]) * inv_std[ch];
        if (use_batch) {
          const double mg = sum_g[ch] / n, mgx = sum_gx[ch] / n;
          for (std::size_t p = 0; p < hw; ++p)
            gx[base + p] += static_cast<T>(k * (go[base + p] - mg - (*xhat)[base + p] * mgx));
        } else {
          for (std::size_t p = 0; p < hw; ++p) gx[base + p] += static_cast<T>(k * go[base + p]);
        }
      }
  });
}

template <typename T>
Var<T> mean_over_width(const Var<T>& x) {
  require_rank(x.shape(), 4, "mean_over_width");
  const std::size_t bc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<T> out(Shape{x.dim(0), x.dim(1), h});
  for (std::size_t i = 0; i < bc; ++i)
    for (std::size_t r = 0; r < h; ++r) {
      T acc = 0;
      for (std::size_t cidx = 0; cidx < w; ++cidx) acc += x.value()[(i * h + r) * w + cidx];
      out[i * h + r] = acc / static_cast<T>(w);
    }
  return make_result<T>(std::move(out), {x}, [bc, h, w](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < bc; ++i)
      for (std::size_t r = 0; r < h; ++r) {
        const T v = self.grad[i * h + r] / static_cast<T>(w);
        for (std::size_t cidx = 0; cidx < w; ++cidx) g[(i * h + r) * w + cidx] += v;
      }
  });
}

template <typename T>
Var<T> mean_over_height(const Var<T>& x) {
  require_rank(x.shape(), 4, "mean_over_height");
  const std::size_t bc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<T> out(Shape{x.dim(0), x.dim(1), w});
  for (std::size_t i = 0; i < bc; ++i)
    for (std::size_t cidx = 0; cidx < w; ++cidx) {
      T acc = 0;
      for (std::size_t r = 0; r < h; ++r) acc += x.value()[(i * h + r) * w + cidx];
      out[i * w + cidx] = acc / static_cast<T>(h);
    }
  return make_result<T>(std::move(out), {x}, [bc, h, w](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < bc; ++i)
      for (std::size_t cidx = 0; cidx < w; ++cidx) {
        const T v = self.grad[i * w + cidx] / static_cast<T>(h);
        for (std::size_t r = 0; r < h; ++r) g[(i * h + r) * w + cidx] += v;
      }
  });
}

template <typename T>
Var<T> concat_last(const Var<T>& a, const Var<T>& b) {
  require_rank(a.shape(), 3, "concat_last");
  require_rank(b.shape(), 3, "concat_last");
  require(a.dim(0) == b.dim(0) && a.dim(1) == b.dim(1), "concat_last: leading dims differ");
  const std::size_t rows = a.dim(0) * a.dim(1), la = a.dim(2), lb = b.dim(2);
  Tensor<T> out(Shape{a.dim(0), a.dim(1), la + lb});
  for (std::size_t i = 0; i < rows; ++i) {
    std::copy_n(a.value().data() + i * la, la, out.data() + i * (la + lb));
    std::copy_n(b.value().data() + i * lb, lb, out.data() + i * (la + lb) + la);
  }
  return make_result<T>(std::move(out), {a, b}, [rows, la, lb](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    for (std::size_t i = 0; i < rows; ++i) {
      const T* src = self.grad.data() + i * (la + lb);
      if (pa.requires_grad) {
        auto& g = pa.grad_buffer();
        for (std::size_t j = 0; j < la; ++j) g[i * la + j] += src[j];
      }
      if (pb.requires_grad) {
        auto& g = pb.grad_buffer();
        for (std::size_t j = 0; j < lb; ++j) g[i * lb + j] += src[la + j];
      }
    }
  });
}

template <typename T>
Var<T> slice_last(const Var<T>& x, std::size_t start, std::size_t len) {
  require_rank(x.shape(), 3, "slice_last");
  const std::size_t rows = x.dim(0) * x.dim(1), l = x.dim(2);
  require(start + len <= l, "slice_last: range out of bounds");
  Tensor<T> out(Shape{x.dim(0), x.dim(1), len});
  for (std::size_t i = 0; i < rows; ++i) std::copy_n(x.value().data() + i * l + start, len, out.data() + i * len);
  return make_result<T>(std::move(out), {x}, [rows, l, start, len](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < len; ++j) g[i * l + start + j] += self.grad[i * len + j];
  });
}

template <typename T>
Var<T> channel_mix(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  require_rank(x.shape(), 3, "channel_mix");
  require_rank(weight.shape(), 2, "channel_mix weight");
  const std::size_t batch = x.dim(0), cin = x.dim(1), l = x.dim(2), cout = weight.dim(0);
  if (weight.dim(1) != cin) {
    throw ConfigError("channel_mix: weight " + to_string(weight.shape()) + " incompatible with input " +
                      to_string(x.shape()));
  }
  require(bias.value().size() == cout, "channel_mix: bias length mismatch");
  Tensor<T> out(Shape{batch, cout, l});
  ConstMatMap<T> wm(weight.value().data(), cout, cin);
  for (std::size_t b = 0; b < batch; ++b) {
    MatMap<T> o(out.data() + b * cout * l, cout, l);
    o.noalias() = wm * ConstMatMap<T>(x.value().data() + b * cin * l, cin, l);
    for (std::size_t co = 0; co < cout; ++co) o.row(co).array() += bias.value()[co];
  }
  return make_result<T>(std::move(out), {x, weight, bias}, [batch, cin, l, cout](Node<T>& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    auto& pb = *self.parents[2];
    for (std::size_t b = 0; b < batch; ++b) {
      ConstMatMap<T> g(self.grad.data() + b * cout * l, cout, l);
      if (pw.requires_grad)
        MatMap<T>(pw.grad_buffer().data(), cout, cin).noalias() +=
            g * ConstMatMap<T>(px.value.data() + b * cin * l, cin, l).transpose();
      if (px.requires_grad)
        MatMap<T>(px.grad_buffer().data() + b * cin * l, cin, l).noalias() +=
            ConstMatMap<T>(pw.value.data(), cout, cin).transpose() * g;
      if (pb.requires_grad) {
        auto& gb = pb.grad_buffer();
        for (std::size_t co = 0; co < cout; ++co) gb[co] += g.row(co).sum();
      }
    }
  });
}

template <typename T>
Var<T> outer_gate(const Var<T>& gh, const Var<T>& gw) {
  require_rank(gh.shape(), 3, "outer_gate");
  require_rank(gw.shape(), 3, "outer_gate");
  require(gh.dim(0) == gw.dim(0) && gh.dim(1) == gw.dim(1), "outer_gate: leading dims differ");
  const std::size_t rows = gh.dim(0) * gh.dim(1), h = gh.dim(2), w = gw.dim(2);
  Tensor<T> out(Shape{gh.dim(0), gh.dim(1), h, w});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) out[(i * h + r) * w + c] = gh.value()[i * h + r] * gw.value()[i * w + c];
  return make_result<T>(std::move(out), {gh, gw}, [rows, h, w](Node<T>& self) {
    auto& ph = *self.parents[0];
    auto& pw = *self.parents[1];
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
          const T g = self.grad[(i * h + r) * w + c];
          if (ph.requires_grad) ph.grad_buffer()[i * h + r] += g * pw.value[i * w + c];
          if (pw.requires_grad) pw.grad_buffer()[i * w + c] += g * ph.value[i * h + r];
        }
  });
}

#define CTTA_INSTANTIATE_OPS(T)                                                                          \
  template Var<T> add(const Var<T>&, const Var<T>&);                                                     \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                                     \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                                     \
  template Var<T> scale(const Var<T>&, T);                                                               \
  template Var<T> add_scalar(const Var<T>&, T);                                                          \
  template Var<T> one_minus(const Var<T>&);                                                              \
  template Var<T> relu(const Var<T>&);                                                                   \
  template Var<T> sigmoid(const Var<T>&);                                                                \
  template Var<T> hard_swish(const Var<T>&);                                                             \
  template Var<T> log_clamped(const Var<T>&, T);                                                         \
  template Var<T> abs(const Var<T>&);                                                                    \
  template Var<T> sum(const Var<T>&);                                                                    \
  template Var<T> mean(const Var<T>&);                                                                   \
  template Var<T> sum_rows(const Var<T>&);                                                               \
  template Var<T> scale_rows(const Var<T>&, const Var<T>&);                                              \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                                   \
  template Var<T> matmul_nt(const Var<T>&, const Var<T>&);                                               \
  template Var<T> roll_rows(const Var<T>&, std::size_t);                                                \
  template Var<T> softmax_rows(const Var<T>&);                                                           \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, std::size_t, std::size_t);         \
  template Var<T> max_pool2x2(const Var<T>&);                                                            \
  template Var<T> global_avg_pool(const Var<T>&);                                                        \
  template Var<T> channel_affine(const Var<T>&, const std::vector<T>&, const std::vector<T>&);           \
  template Var<T> batch_norm2d(const Var<T>&, const Var<T>&, const Var<T>&, Tensor<T>&, Tensor<T>&,      \
                               const BatchNormOptions&);                                                 \
  template Var<T> mean_over_width(const Var<T>&);                                                        \
  template Var<T> mean_over_height(const Var<T>&);                                                       \
  template Var<T> concat_last(const Var<T>&, const Var<T>&);                                             \
  template Var<T> slice_last(const Var<T>&, std::size_t, std::size_t);                                   \
  template Var<T> channel_mix(const Var<T>&, const Var<T>&, const Var<T>&);                              \
  template Var<T> outer_gate(const Var<T>&, const Var<T>&);

CTTA_INSTANTIATE_OPS(float)
CTTA_INSTANTIATE_OPS(double)

#undef CTTA_INSTANTIATE_OPS

}  // namespace ctta::ag
