/* Copyright 2026 The TAVP Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#ifndef TAVP_OPS_HPP_
#define TAVP_OPS_HPP_

// Differentiable operations on Var. Feature maps are C x H x W, token and
// row-feature matrices are N x D.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "tavp/autograd.hpp"

namespace tavp::ops {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

inline ConstMatMap as_mat(const Tensor& t, int rows, int cols) {
  return ConstMatMap(t.data(), rows, cols);
}
inline MatMap as_mat(Tensor& t, int rows, int cols) { return MatMap(t.data(), rows, cols); }
inline MatMap as_mat(Tensor* t, int rows, int cols) { return MatMap(t->data(), rows, cols); }

namespace detail {

inline void require_same(const Var& a, const Var& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

// Unfolds x (C x H x W) into (C*k*k) x (Ho*Wo) patch columns.
inline void im2col(const double* x, int c, int h, int w, int k, int stride, int pad, int ho, int wo,
                   double* cols) {
  const int hw = ho * wo;
  for (int ci = 0; ci < c; ++ci) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        double* row = cols + (static_cast<std::size_t>(ci) * k * k + ki * k + kj) * hw;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ki;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kj;
            row[oy * wo + ox] = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                    ? x[(static_cast<std::size_t>(ci) * h + iy) * w + ix]
                                    : 0.0;
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters-and-adds columns back into x.
inline void col2im(const double* cols, int c, int h, int w, int k, int stride, int pad, int ho,
                   int wo, double* x) {
  const int hw = ho * wo;
  for (int ci = 0; ci < c; ++ci) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const double* row = cols + (static_cast<std::size_t>(ci) * k * k + ki * k + kj) * hw;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kj;
            if (ix < 0 || ix >= w) continue;
            x[(static_cast<std::size_t>(ci) * h + iy) * w + ix] += row[oy * wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Var add(const Var& a, const Var& b) {
  detail::require_same(a, b, "add");
  Tensor out = a.value();
  out += b.value();
  return a.graph().record(std::move(out), {a, b}, [](const Tensor& g, std::span<Tensor* const> gi) {
    if (gi[0]) *gi[0] += g;
    if (gi[1]) *gi[1] += g;
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same(a, b, "sub");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.graph().record(std::move(out), {a, b}, [](const Tensor& g, std::span<Tensor* const> gi) {
    if (gi[0]) *gi[0] += g;
    if (gi[1]) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gi[1])[i] -= g[i];
    }
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::require_same(a, b, "mul");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.graph().record(std::move(out), {a, b},
                          [a, b](const Tensor& g, std::span<Tensor* const> gi) {
                            const Tensor& av = a.value();
                            const Tensor& bv = b.value();
                            if (gi[0]) {
                              for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * bv[i];
                            }
                            if (gi[1]) {
                              for (std::size_t i = 0; i < g.size(); ++i) (*gi[1])[i] += g[i] * av[i];
                            }
                          });
}

inline Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= s;
  return a.graph().record(std::move(out), {a}, [s](const Tensor& g, std::span<Tensor* const> gi) {
    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += s * g[i];
  });
}

namespace detail {

template <typename F, typename DF>
Var unary(const Var& a, F f, DF df) {
  Tensor out = a.value();
  for (double& v : out.values()) v = f(v);
  return a.graph().record(std::move(out), {a},
                          [a, df](const Tensor& g, std::span<Tensor* const> gi) {
                            const Tensor& x = a.value();
                            for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * df(x[i]);
                          });
}

inline double stable_sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace detail

inline Var relu(const Var& a) {
  return detail::unary(
      a, [](double x) { return x > 0 ? x : 0.0; }, [](double x) { return x > 0 ? 1.0 : 0.0; });
}

// Exact (erf) GELU.
inline Var gelu(const Var& a) {
  return detail::unary(
      a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); },
      [](double x) {
        const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
        const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
        return cdf + x * pdf;
      });
}

inline Var sigmoid(const Var& a) {
  return detail::unary(a, detail::stable_sigmoid, [](double x) {
    const double s = detail::stable_sigmoid(x);
    return s * (1.0 - s);
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

inline Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.graph().record(std::move(out), {a}, [](const Tensor& g, std::span<Tensor* const> gi) {
    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
  });
}

inline Var transpose(const Var& a) {
  require_rank(a.value(), 2, "transpose");
  const int r = a.dim(0), c = a.dim(1);
  Tensor out({c, r});
  as_mat(out, c, r) = as_mat(a.value(), r, c).transpose();
  return a.graph().record(std::move(out), {a}, [r, c](const Tensor& g, std::span<Tensor* const> gi) {
    as_mat(gi[0], r, c) += as_mat(g, c, r).transpose();
  });
}

// Rows [start, start+count) of a rank-2 (or leading dim of any rank) tensor.
inline Var slice_rows(const Var& a, int start, int count) {
  const Tensor& av = a.value();
  const int rows = av.dim(0);
  if (start < 0 || count < 0 || start + count > rows) throw ShapeError("slice_rows out of range");
  const std::size_t stride = av.size() / static_cast<std::size_t>(rows);
  Shape shape = av.shape();
  shape[0] = count;
  Tensor out(shape);
  std::copy_n(av.data() + start * stride, count * stride, out.data());
  return a.graph().record(std::move(out), {a},
                          [start, stride](const Tensor& g, std::span<Tensor* const> gi) {
                            double* dst = gi[0]->data() + start * stride;
                            for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
                          });
}

// Concatenates along the leading dimension.
inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows of nothing");
  Shape shape = parts[0].shape();
  int rows = 0;
  for (const Var& p : parts) {
    Shape tail = p.shape();
    if (tail.size() != shape.size()) throw ShapeError("concat_rows rank mismatch");
    rows += tail[0];
    tail[0] = shape[0];
    if (tail != shape) throw ShapeError("concat_rows trailing shape mismatch");
  }
  shape[0] = rows;
  Tensor out(shape);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    offsets.push_back(off);
    std::copy_n(p.value().data(), p.value().size(), out.data() + off);
    off += p.value().size();
  }
  return parts[0].graph().record(std::move(out), std::span<const Var>(parts),
                                 [offsets](const Tensor& g, std::span<Tensor* const> gi) {
                                   for (std::size_t k = 0; k < gi.size(); ++k) {
                                     if (!gi[k]) continue;
                                     const double* src = g.data() + offsets[k];
                                     for (std::size_t i = 0; i < gi[k]->size(); ++i) (*gi[k])[i] += src[i];
                                   }
                                 });
}

inline Var slice_cols(const Var& a, int start, int count) {
  require_rank(a.value(), 2, "slice_cols");
  const int r = a.dim(0), c = a.dim(1);
  if (start < 0 || count < 0 || start + count > c) throw ShapeError("slice_cols out of range");
  Tensor out({r, count});
  as_mat(out, r, count) = as_mat(a.value(), r, c).middleCols(start, count);
  return a.graph().record(std::move(out), {a},
                          [r, c, start, count](const Tensor& g, std::span<Tensor* const> gi) {
                            as_mat(gi[0], r, c).middleCols(start, count) += as_mat(g, r, count);
                          });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols of nothing");
  const int r = parts[0].dim(0);
  int c = 0;
  std::vector<int> widths;
  for (const Var& p : parts) {
    require_rank(p.value(), 2, "concat_cols");
    if (p.dim(0) != r) throw ShapeError("concat_cols row mismatch");
    widths.push_back(p.dim(1));
    c += p.dim(1);
  }
  Tensor out({r, c});
  int off = 0;
  for (const Var& p : parts) {
    as_mat(out, r, c).middleCols(off, p.dim(1)) = as_mat(p.value(), r, p.dim(1));
    off += p.dim(1);
  }
  return parts[0].graph().record(std::move(out), std::span<const Var>(parts),
                                 [r, c, widths](const Tensor& g, std::span<Tensor* const> gi) {
                                   int off = 0;
                                   for (std::size_t k = 0; k < gi.size(); ++k) {
                                     if (gi[k]) as_mat(gi[k], r, widths[k]) += as_mat(g, r, c).middleCols(off, widths[k]);
                                     off += widths[k];
                                   }
                                 });
}

// C x H x W -> (H*W) x C
inline Var map_to_rows(const Var& x) {
  require_rank(x.value(), 3, "map_to_rows");
  const int c = x.dim(0), hw = x.dim(1) * x.dim(2);
  return transpose(reshape(x, {c, hw}));
}

// (H*W) x C -> C x H x W
inline Var rows_to_map(const Var& rows, int h, int w) {
  require_rank(rows.value(), 2, "rows_to_map");
  if (rows.dim(0) != h * w) throw ShapeError("rows_to_map: row count is not h*w");
  const int c = rows.dim(1);
  return reshape(transpose(rows), {c, h, w});
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(const Var& a, const Var& b) {
  require_rank(a.value(), 2, "matmul lhs");
  require_rank(b.value(), 2, "matmul rhs");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul inner mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor out({m, n});
  as_mat(out, m, n).noalias() = as_mat(a.value(), m, k) * as_mat(b.value(), k, n);
  return a.graph().record(std::move(out), {a, b},
                          [a, b, m, k, n](const Tensor& g, std::span<Tensor* const> gi) {
                            auto gm = as_mat(g, m, n);
                            if (gi[0]) as_mat(gi[0], m, k).noalias() += gm * as_mat(b.value(), k, n).transpose();
                            if (gi[1]) as_mat(gi[1], k, n).noalias() += as_mat(a.value(), m, k).transpose() * gm;
                          });
}

// x (N x in) . weight^T (out x in) + bias (out). bias may be an invalid Var.
inline Var linear(const Var& x, const Var& weight, const Var& bias) {
  require_rank(x.value(), 2, "linear input");
  require_rank(weight.value(), 2, "linear weight");
  const int n = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
  if (weight.dim(1) != in) {
    throw ShapeError("linear: input width " + std::to_string(in) + " vs weight " +
                     shape_str(weight.shape()));
  }
  const bool has_bias = bias.valid();
  if (has_bias) require_shape(bias.value(), {out_dim}, "linear bias");
  Tensor out({n, out_dim});
  auto om = as_mat(out, n, out_dim);
  om.noalias() = as_mat(x.value(), n, in) * as_mat(weight.value(), out_dim, in).transpose();
  if (has_bias) om.rowwise() += ConstVecMap(bias.value().data(), out_dim).transpose();
  std::vector<Var> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return x.graph().record(
      std::move(out), std::span<const Var>(inputs),
      [x, weight, n, in, out_dim, has_bias](const Tensor& g, std::span<Tensor* const> gi) {
        auto gm = as_mat(g, n, out_dim);
        if (gi[0]) as_mat(gi[0], n, in).noalias() += gm * as_mat(weight.value(), out_dim, in);
        if (gi[1]) as_mat(gi[1], out_dim, in).noalias() += gm.transpose() * as_mat(x.value(), n, in);
        if (has_bias && gi[2]) VecMap(gi[2]->data(), out_dim) += gm.colwise().sum().transpose();
      });
}

// Adds a length-D row vector to every row of an N x D matrix.
inline Var add_row(const Var& x, const Var& row) {
  require_rank(x.value(), 2, "add_row");
  const int n = x.dim(0), d = x.dim(1);
  require_shape(row.value(), {d}, "add_row vector");
  Tensor out = x.value();
  as_mat(out, n, d).rowwise() += ConstVecMap(row.value().data(), d).transpose();
  return x.graph().record(std::move(out), {x, row}, [n, d](const Tensor& g, std::span<Tensor* const> gi) {
    if (gi[0]) *gi[0] += g;
    if (gi[1]) VecMap(gi[1]->data(), d) += as_mat(g, n, d).colwise().sum().transpose();
  });
}

// Row-wise layer normalization with affine gain/shift.
inline Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-6) {
  require_rank(x.value(), 2, "layer_norm");
  const int n = x.dim(0), d = x.dim(1);
  require_shape(gamma.value(), {d}, "layer_norm gamma");
  require_shape(beta.value(), {d}, "layer_norm beta");
  Tensor xhat({n, d});
  std::vector<double> inv_std(n);
  const Tensor& xv = x.value();
  for (int i = 0; i < n; ++i) {
    const double* row = xv.data() + static_cast<std::size_t>(i) * d;
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += row[j];
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= d;
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < d; ++j) xhat.at(i, j) = (row[j] - mean) * inv_std[i];
  }
  Tensor out({n, d});
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) out.at(i, j) = xhat.at(i, j) * gv[j] + bv[j];
  }
  return x.graph().record(
      std::move(out), {x, gamma, beta},
      [gamma, xhat = std::move(xhat), inv_std = std::move(inv_std), n, d](
          const Tensor& g, std::span<Tensor* const> gi) {
        const Tensor& gv = gamma.value();
        for (int i = 0; i < n; ++i) {
          if (gi[0]) {
            double mean_g = 0.0, mean_gx = 0.0;
            for (int j = 0; j < d; ++j) {
              const double gh = g.at(i, j) * gv[j];
              mean_g += gh;
              mean_gx += gh * xhat.at(i, j);
            }
            mean_g /= d;
            mean_gx /= d;
            for (int j = 0; j < d; ++j) {
              const double gh = g.at(i, j) * gv[j];
              gi[0]->at(i, j) += inv_std[i] * (gh - mean_g - xhat.at(i, j) * mean_gx);
            }
          }
          for (int j = 0; j < d; ++j) {
            if (gi[1]) (*gi[1])[j] += g.at(i, j) * xhat.at(i, j);
            if (gi[2]) (*gi[2])[j] += g.at(i, j);
          }
        }
      });
}

// Row-wise softmax.
inline Var softmax_rows(const Var& x) {
  require_rank(x.value(), 2, "softmax_rows");
  const int n = x.dim(0), d = x.dim(1);
  Tensor out = x.value();
  for (int i = 0; i < n; ++i) {
    double* row = out.data() + static_cast<std::size_t>(i) * d;
    const double mx = *std::max_element(row, row + d);
    double s = 0.0;
    for (int j = 0; j < d; ++j) {
      row[j] = std::exp(row[j] - mx);
      s += row[j];
    }
    for (int j = 0; j < d; ++j) row[j] /= s;
  }
  Tensor saved = out;
  return x.graph().record(std::move(out), {x},
                          [y = std::move(saved), n, d](const Tensor& g, std::span<Tensor* const> gi) {
                            for (int i = 0; i < n; ++i) {
                              double dot = 0.0;
                              for (int j = 0; j < d; ++j) dot += g.at(i, j) * y.at(i, j);
                              for (int j = 0; j < d; ++j) gi[0]->at(i, j) += y.at(i, j) * (g.at(i, j) - dot);
                            }
                          });
}

// Adds a constant to x; used for additive attention masks.
inline Var add_constant(const Var& x, const Tensor& c) {
  if (x.shape() != c.shape()) throw ShapeError("add_constant shape mismatch");
  Tensor out = x.value();
  out += c;
  return x.graph().record(std::move(out), {x}, [](const Tensor& g, std::span<Tensor* const> gi) {
    *gi[0] += g;
  });
}

// ---------------------------------------------------------------------------
// Convolution and resampling on C x H x W maps

// weight: O x C x k x k, bias: O (optional).
inline Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
  require_rank(x.value(), 3, "conv2d input");
  require_rank(weight.value(), 4, "conv2d weight");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int o = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != c || weight.dim(3) != k) {
    throw ShapeError("conv2d: weight " + shape_str(weight.shape()) + " vs input " + shape_str(x.shape()));
  }
  const int ho = (h + 2 * pad - k) / stride + 1;
  const int wo = (w + 2 * pad - k) / stride + 1;
  if (ho <= 0 || wo <= 0) throw ShapeError("conv2d: empty output");
  const int ckk = c * k * k, hw = ho * wo;
  Tensor cols({ckk, hw});
  detail::im2col(x.value().data(), c, h, w, k, stride, pad, ho, wo, cols.data());
  Tensor out({o, ho, wo});
  auto om = as_mat(out, o, hw);
  om.noalias() = as_mat(weight.value(), o, ckk) * as_mat(cols, ckk, hw);
  const bool has_bias = bias.valid();
  if (has_bias) {
    require_shape(bias.value(), {o}, "conv2d bias");
    om.colwise() += ConstVecMap(bias.value().data(), o);
  }
  std::vector<Var> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return x.graph().record(
      std::move(out), std::span<const Var>(inputs),
      [weight, cols = std::move(cols), c, h, w, o, k, stride, pad, ho, wo, ckk, hw, has_bias](
          const Tensor& g, std::span<Tensor* const> gi) {
        auto gm = as_mat(g, o, hw);
        if (gi[0]) {
          Tensor dcols({ckk, hw});
          as_mat(dcols, ckk, hw).noalias() = as_mat(weight.value(), o, ckk).transpose() * gm;
          detail::col2im(dcols.data(), c, h, w, k, stride, pad, ho, wo, gi[0]->data());
        }
        if (gi[1]) as_mat(gi[1], o, ckk).noalias() += gm * as_mat(cols, ckk, hw).transpose();
        if (has_bias && gi[2]) VecMap(gi[2]->data(), o) += gm.rowwise().sum();
      });
}

// Transposed convolution without padding; weight: C_in x O x k x k.
// Output size is (H-1)*stride + k.
inline Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias, int stride) {
  require_rank(x.value(), 3, "conv_transpose2d input");
  require_rank(weight.value(), 4, "conv_transpose2d weight");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int o = weight.dim(1), k = weight.dim(2);
  if (weight.dim(0) != c || weight.dim(3) != k) {
    throw ShapeError("conv_transpose2d: weight " + shape_str(weight.shape()) + " vs input " +
                     shape_str(x.shape()));
  }
  const int ho = (h - 1) * stride + k, wo = (w - 1) * stride + k;
  const int okk = o * k * k, hw = h * w;
  Tensor cols({okk, hw});
  as_mat(cols, okk, hw).noalias() =
      as_mat(weight.value(), c, okk).transpose() * as_mat(x.value(), c, hw);
  Tensor out({o, ho, wo});
  detail::col2im(cols.data(), o, ho, wo, k, stride, 0, h, w, out.data());
  const bool has_bias = bias.valid();
  if (has_bias) {
    require_shape(bias.value(), {o}, "conv_transpose2d bias");
    as_mat(out, o, ho * wo).colwise() += ConstVecMap(bias.value().data(), o);
  }
  std::vector<Var> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return x.graph().record(
      std::move(out), std::span<const Var>(inputs),
      [x, weight, c, h, w, o, k, stride, ho, wo, okk, hw, has_bias](const Tensor& g,
                                                                   std::span<Tensor* const> gi) {
        Tensor gcols({okk, hw});
        detail::im2col(g.data(), o, ho, wo, k, stride, 0, h, w, gcols.data());
        auto gc = as_mat(gcols, okk, hw);
        if (gi[0]) as_mat(gi[0], c, hw).noalias() += as_mat(weight.value(), c, okk) * gc;
        if (gi[1]) as_mat(gi[1], c, okk).noalias() += as_mat(x.value(), c, hw) * gc.transpose();
        if (has_bias && gi[2]) VecMap(gi[2]->data(), o) += as_mat(g, o, ho * wo).rowwise().sum();
      });
}

// Non-overlapping k x k average pooling; H and W must be divisible by k.
inline Var avg_pool2d(const Var& x, int k) {
  require_rank(x.value(), 3, "avg_pool2d");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h % k || w % k) throw ShapeError("avg_pool2d: size not divisible by kernel");
  const int ho = h / k, wo = w / k;
  const double inv = 1.0 / (k * k);
  Tensor out({c, ho, wo});
  const Tensor& xv = x.value();
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) out.at(ci, y / k, xx / k) += xv.at(ci, y, xx) * inv;
  return x.graph().record(std::move(out), {x},
                          [c, h, w, k, inv](const Tensor& g, std::span<Tensor* const> gi) {
                            for (int ci = 0; ci < c; ++ci)
                              for (int y = 0; y < h; ++y)
                                for (int xx = 0; xx < w; ++xx)
                                  gi[0]->at(ci, y, xx) += g.at(ci, y / k, xx / k) * inv;
                          });
}

inline Var upsample_nearest(const Var& x, int factor) {
  require_rank(x.value(), 3, "upsample_nearest");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int ho = h * factor, wo = w * factor;
  Tensor out({c, ho, wo});
  const Tensor& xv = x.value();
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < ho; ++y)
      for (int xx = 0; xx < wo; ++xx) out.at(ci, y, xx) = xv.at(ci, y / factor, xx / factor);
  return x.graph().record(std::move(out), {x},
                          [c, ho, wo, factor](const Tensor& g, std::span<Tensor* const> gi) {
                            for (int ci = 0; ci < c; ++ci)
                              for (int y = 0; y < ho; ++y)
                                for (int xx = 0; xx < wo; ++xx)
                                  gi[0]->at(ci, y / factor, xx / factor) += g.at(ci, y, xx);
                          });
}

// Channel concatenation of C_i x H x W maps.
inline Var concat_channels(const std::vector<Var>& maps) {
  if (maps.empty()) throw ShapeError("concat_channels of nothing");
  const int h = maps[0].dim(1), w = maps[0].dim(2);
  std::vector<Var> flat;
  int c = 0;
  for (const Var& m : maps) {
    require_rank(m.value(), 3, "concat_channels");
    if (m.dim(1) != h || m.dim(2) != w) throw ShapeError("concat_channels spatial mismatch");
    c += m.dim(0);
    flat.push_back(m);
  }
  return reshape(concat_rows(flat), {c, h, w});
}

// Per-pixel inner product of a length-C kernel with a C x H x W map -> H x W.
inline Var pixel_dot(const Var& kernel, const Var& map) {
  require_rank(map.value(), 3, "pixel_dot map");
  const int c = map.dim(0), h = map.dim(1), w = map.dim(2);
  if (kernel.value().size() != static_cast<std::size_t>(c)) {
    throw ShapeError("pixel_dot: kernel length " + std::to_string(kernel.value().size()) +
                     " vs channels " + std::to_string(c));
  }
  return reshape(matmul(reshape(kernel, {1, c}), reshape(map, {c, h * w})), {h, w});
}

// ---------------------------------------------------------------------------
// Reductions

inline Var sum(const Var& a) {
  Tensor out({1}, a.value().sum());
  return a.graph().record(std::move(out), {a}, [](const Tensor& g, std::span<Tensor* const> gi) {
    for (double& v : gi[0]->values()) v += g[0];
  });
}

inline Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

}  // namespace tavp::ops

#endif  // TAVP_OPS_HPP_
