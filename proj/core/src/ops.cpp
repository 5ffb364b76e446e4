// Copyright 2026 The DropDim Lab Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// =============================================================================
#include "dropdim/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

#include "dropdim/errors.hpp"

namespace dropdim {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatMap = Eigen::Map<const RowMat>;
using MatMap = Eigen::Map<RowMat>;

Tape& common_tape(Var a, Var b) {
  if (!a.valid() || !b.valid()) throw std::logic_error("op on an empty Var");
  if (&a.tape() != &b.tape()) throw std::logic_error("op mixes vars from different tapes");
  return a.tape();
}

void require_same_shape(const char* op, Var a, Var b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                         b.shape().str());
  }
}

// Number of rows when the last axis is treated as the row.
std::size_t leading_rows(const Shape& s) { return s.numel() / s.back(); }

}  // namespace

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
          std::size_t m, std::size_t k, std::size_t n, bool transpose_a, bool transpose_b,
          bool accumulate) {
  const auto M = static_cast<Eigen::Index>(m);
  const auto K = static_cast<Eigen::Index>(k);
  const auto N = static_cast<Eigen::Index>(n);
  ConstMatMap A(a.data(), transpose_a ? K : M, transpose_a ? M : K);
  ConstMatMap B(b.data(), transpose_b ? N : K, transpose_b ? K : N);
  MatMap C(c.data(), M, N);
  if (!accumulate) C.setZero();
  if (!transpose_a && !transpose_b) {
    C.noalias() += A * B;
  } else if (transpose_a && !transpose_b) {
    C.noalias() += A.transpose() * B;
  } else if (!transpose_a && transpose_b) {
    C.noalias() += A * B.transpose();
  } else {
    C.noalias() += A.transpose() * B.transpose();
  }
}

Var matmul(Var a, Var b) {
  Tape& tape = common_tape(a, b);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const auto mismatch = [&] {
    return DimensionError("matmul: incompatible shapes " + sa.str() + " and " + sb.str());
  };

  std::size_t batch = 1;
  bool broadcast_b = false;
  if (sa.rank() == 2 && sb.rank() == 2) {
  } else if (sa.rank() == 3 && sb.rank() == 3 && sa[0] == sb[0]) {
    batch = sa[0];
  } else if (sa.rank() == 3 && sb.rank() == 2) {
    broadcast_b = true;
  } else {
    throw mismatch();
  }
  const std::size_t m = sa[sa.rank() - 2];
  const std::size_t k = sa.back();
  const std::size_t kb = sb[sb.rank() - 2];
  const std::size_t n = sb.back();
  if (k != kb) throw mismatch();

  Shape out_shape = sa.rank() == 2 ? Shape{m, n} : Shape{sa[0], m, n};
  Tensor out(out_shape);
  const auto& av = a.value().storage();
  const auto& bv = b.value().storage();

  if (broadcast_b) {
    // Fold the batch into the row dimension: one large product.
    const std::size_t rows = sa[0] * m;
    gemm(av, bv, out.values(), rows, k, n, false, false, false);
    const std::size_t ia = a.id(), ib = b.id();
    return tape.record(std::move(out), {ia, ib},
                       [ia, ib, rows, k, n](std::span<const double> g, Tape& t) {
                         if (t.needs_grad(ia)) {
                           gemm(g, t.value(ib).storage(), t.grad_of(ia), rows, n, k, false, true,
                                true);
                         }
                         if (t.needs_grad(ib)) {
                           gemm(t.value(ia).storage(), g, t.grad_of(ib), k, rows, n, true, false,
                                true);
                         }
                       });
  }

  const std::size_t stride_a = m * k, stride_b = k * n, stride_c = m * n;
  for (std::size_t i = 0; i < batch; ++i) {
    gemm(std::span(av).subspan(i * stride_a, stride_a),
         std::span(bv).subspan(i * stride_b, stride_b),
         out.values().subspan(i * stride_c, stride_c), m, k, n, false, false, false);
  }
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(
      std::move(out), {ia, ib},
      [ia, ib, batch, m, k, n, stride_a, stride_b, stride_c](std::span<const double> g, Tape& t) {
        const bool ga = t.needs_grad(ia), gb = t.needs_grad(ib);
        std::span<double> da = ga ? t.grad_of(ia) : std::span<double>{};
        std::span<double> db = gb ? t.grad_of(ib) : std::span<double>{};
        std::span<const double> va = t.value(ia).values();
        std::span<const double> vb = t.value(ib).values();
        for (std::size_t i = 0; i < batch; ++i) {
          auto gi = g.subspan(i * stride_c, stride_c);
          if (ga) {
            gemm(gi, vb.subspan(i * stride_b, stride_b), da.subspan(i * stride_a, stride_a), m,
                 n, k, false, true, true);
          }
          if (gb) {
            gemm(va.subspan(i * stride_a, stride_a), gi, db.subspan(i * stride_b, stride_b), k,
                 m, n, true, false, true);
          }
        }
      });
}

Var add(Var a, Var b) {
  Tape& tape = common_tape(a, b);
  require_same_shape("add", a, b);
  Tensor out = a.value();
  const auto& bv = b.value().storage();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] += bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {ia, ib}, [ia, ib](std::span<const double> g, Tape& t) {
    for (std::size_t id : {ia, ib}) {
      if (!t.needs_grad(id)) continue;
      auto d = t.grad_of(id);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  Tape& tape = common_tape(a, b);
  require_same_shape("sub", a, b);
  Tensor out = a.value();
  const auto& bv = b.value().storage();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] -= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {ia, ib}, [ia, ib](std::span<const double> g, Tape& t) {
    if (t.needs_grad(ia)) {
      auto d = t.grad_of(ia);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
    if (t.needs_grad(ib)) {
      auto d = t.grad_of(ib);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
    }
  });
}

Var add_bias(Var x, Var bias) {
  Tape& tape = common_tape(x, bias);
  const std::size_t n = x.shape().back();
  if (bias.shape().rank() != 1 || bias.shape()[0] != n) {
    throw DimensionError("add_bias: bias " + bias.shape().str() + " does not match " +
                         x.shape().str());
  }
  Tensor out = x.value();
  const auto& bv = bias.value().storage();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] += bv[i % n];
  const std::size_t ix = x.id(), ib = bias.id();
  return tape.record(std::move(out), {ix, ib}, [ix, ib, n](std::span<const double> g, Tape& t) {
    if (t.needs_grad(ix)) {
      auto d = t.grad_of(ix);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
    if (t.needs_grad(ib)) {
      auto d = t.grad_of(ib);
      for (std::size_t i = 0; i < g.size(); ++i) d[i % n] += g[i];
    }
  });
}

Var mul(Var a, Var b) {
  Tape& tape = common_tape(a, b);
  require_same_shape("mul", a, b);
  Tensor out = a.value();
  const auto& bv = b.value().storage();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] *= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {ia, ib}, [ia, ib](std::span<const double> g, Tape& t) {
    const auto& av = t.value(ia).storage();
    const auto& bv = t.value(ib).storage();
    if (t.needs_grad(ia)) {
      auto d = t.grad_of(ia);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * bv[i];
    }
    if (t.needs_grad(ib)) {
      auto d = t.grad_of(ib);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * av[i];
    }
  });
}

Var scale(Var x, double factor) {
  Tensor out = x.value();
  for (double& v : out.values()) v *= factor;
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {ix}, [ix, factor](std::span<const double> g, Tape& t) {
    auto d = t.grad_of(ix);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * factor;
  });
}

Var relu(Var x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {ix}, [ix](std::span<const double> g, Tape& t) {
    const auto& xv = t.value(ix).storage();
    auto d = t.grad_of(ix);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > 0.0) d[i] += g[i];
    }
  });
}

Var softmax_rows(Var x) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = leading_rows(x.shape());
  Tensor out = x.value();
  auto ov = out.values();
  for (std::size_t r = 0; r < rows; ++r) {
    auto row = ov.subspan(r * n, n);
    const double mx = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (double& v : row) {
      v = std::exp(v - mx);
      total += v;
    }
    for (double& v : row) v /= total;
  }
  const std::size_t ix = x.id();
  const std::size_t iy = x.tape().size();  // id this node will receive
  return x.tape().record(std::move(out), {ix}, [ix, iy, rows, n](std::span<const double> g, Tape& t) {
    const auto& y = t.value(iy).storage();
    auto d = t.grad_of(ix);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
      for (std::size_t j = 0; j < n; ++j) d[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
    }
  });
}

Var layernorm(Var x, Var gain, Var bias, double eps) {
  Tape& tape = common_tape(x, gain);
  common_tape(x, bias);
  const std::size_t n = x.shape().back();
  for (Var p : {gain, bias}) {
    if (p.shape().rank() != 1 || p.shape()[0] != n) {
      throw DimensionError("layernorm: affine parameter " + p.shape().str() +
                           " does not match " + x.shape().str());
    }
  }
  const std::size_t rows = leading_rows(x.shape());
  const auto& xv = x.value().storage();
  const auto& gv = gain.value().storage();
  const auto& bv = bias.value().storage();
  std::vector<double> xhat(xv.size());
  std::vector<double> inv_std(rows);
  Tensor out(x.shape());
  auto ov = out.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    const double denom = var + eps;
    const double inv = denom > 0.0 ? 1.0 / std::sqrt(denom) : 0.0;
    inv_std[r] = inv;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (row[j] - mu) * inv;
      xhat[r * n + j] = h;
      ov[r * n + j] = h * gv[j] + bv[j];
    }
  }
  const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
  return tape.record(
      std::move(out), {ix, ig, ib},
      [ix, ig, ib, rows, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          std::span<const double> g, Tape& t) {
        const auto& gv = t.value(ig).storage();
        if (t.needs_grad(ig)) {
          auto d = t.grad_of(ig);
          for (std::size_t i = 0; i < g.size(); ++i) d[i % n] += g[i] * xhat[i];
        }
        if (t.needs_grad(ib)) {
          auto d = t.grad_of(ib);
          for (std::size_t i = 0; i < g.size(); ++i) d[i % n] += g[i];
        }
        if (t.needs_grad(ix)) {
          auto d = t.grad_of(ix);
          const double inv_n = 1.0 / static_cast<double>(n);
          for (std::size_t r = 0; r < rows; ++r) {
            double sum_dh = 0.0, sum_dh_h = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double dh = g[r * n + j] * gv[j];
              sum_dh += dh;
              sum_dh_h += dh * xhat[r * n + j];
            }
            for (std::size_t j = 0; j < n; ++j) {
              const double dh = g[r * n + j] * gv[j];
              d[r * n + j] +=
                  inv_std[r] * (dh - inv_n * sum_dh - xhat[r * n + j] * inv_n * sum_dh_h);
            }
          }
        }
      });
}

Var embedding_lookup(Var table, std::span<const int> ids, std::size_t batch, std::size_t steps) {
  const Shape& st = table.shape();
  if (st.rank() != 2) throw DimensionError("embedding table must be rank 2, got " + st.str());
  if (ids.size() != batch * steps) {
    throw DimensionError("embedding_lookup: " + std::to_string(ids.size()) + " ids for [" +
                         std::to_string(batch) + "x" + std::to_string(steps) + "]");
  }
  const std::size_t vocab = st[0], dim = st[1];
  Tensor out(Shape{batch, steps, dim});
  const auto& tv = table.value().storage();
  auto ov = out.values();
  std::vector<int> saved(ids.begin(), ids.end());
  for (std::size_t i = 0; i < saved.size(); ++i) {
    const int id = saved[i];
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(id * dim), dim,
                ov.begin() + static_cast<std::ptrdiff_t>(i * dim));
  }
  const std::size_t it = table.id();
  return table.tape().record(std::move(out), {it},
                             [it, dim, saved = std::move(saved)](std::span<const double> g,
                                                                 Tape& t) {
                               auto d = t.grad_of(it);
                               for (std::size_t i = 0; i < saved.size(); ++i) {
                                 const std::size_t row = static_cast<std::size_t>(saved[i]);
                                 for (std::size_t j = 0; j < dim; ++j) {
                                   d[row * dim + j] += g[i * dim + j];
                                 }
                               }
                             });
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  Tape& tape = parts[0].tape();
  const Shape& first = parts[0].shape();
  const std::size_t rows = leading_rows(first);
  std::vector<std::size_t> widths;
  std::vector<std::size_t> ids;
  std::size_t total = 0;
  for (const Var& p : parts) {
    common_tape(parts[0], p);
    const Shape& s = p.shape();
    bool ok = s.rank() == first.rank();
    for (std::size_t ax = 0; ok && ax + 1 < s.rank(); ++ax) ok = s[ax] == first[ax];
    if (!ok) {
      throw DimensionError("concat: leading dims of " + s.str() + " differ from " +
                           first.str());
    }
    widths.push_back(s.back());
    ids.push_back(p.id());
    total += s.back();
  }
  std::vector<std::size_t> dims = first.dims();
  dims.back() = total;
  Tensor out{Shape(dims)};
  auto ov = out.values();
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& pv = parts[k].value().storage();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(r * widths[k]), widths[k],
                  ov.begin() + static_cast<std::ptrdiff_t>(r * total + offset));
    }
    offset += widths[k];
  }
  std::vector<std::size_t> inputs = ids;
  return tape.record(std::move(out), std::move(inputs),
                     [ids, widths, rows, total](std::span<const double> g, Tape& t) {
                       std::size_t off = 0;
                       for (std::size_t k = 0; k < ids.size(); ++k) {
                         if (t.needs_grad(ids[k])) {
                           auto d = t.grad_of(ids[k]);
                           for (std::size_t r = 0; r < rows; ++r) {
                             for (std::size_t j = 0; j < widths[k]; ++j) {
                               d[r * widths[k] + j] += g[r * total + off + j];
                             }
                           }
                         }
                         off += widths[k];
                       }
                     });
}

Var transpose(Var x) {
  const Shape& s = x.shape();
  if (s.rank() < 2) throw DimensionError("transpose needs rank >= 2, got " + s.str());
  const std::size_t batch = s.rank() == 3 ? s[0] : 1;
  const std::size_t m = s[s.rank() - 2], n = s.back();
  Tensor out(s.rank() == 3 ? Shape{batch, n, m} : Shape{n, m});
  const auto& xv = x.value().storage();
  auto ov = out.values();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) ov[b * m * n + j * m + i] = xv[b * m * n + i * n + j];
    }
  }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {ix},
                         [ix, batch, m, n](std::span<const double> g, Tape& t) {
                           auto d = t.grad_of(ix);
                           for (std::size_t b = 0; b < batch; ++b) {
                             for (std::size_t i = 0; i < m; ++i) {
                               for (std::size_t j = 0; j < n; ++j) {
                                 d[b * m * n + i * n + j] += g[b * m * n + j * m + i];
                               }
                             }
                           }
                         });
}

Var sum(Var x) {
  double total = 0.0;
  for (double v : x.value().values()) total += v;
  const std::size_t ix = x.id();
  return x.tape().record(Tensor::scalar(total), {ix}, [ix](std::span<const double> g, Tape& t) {
    for (double& d : t.grad_of(ix)) d += g[0];
  });
}

Var mean(Var x) {
  const double n = static_cast<double>(x.value().numel());
  double total = 0.0;
  for (double v : x.value().values()) total += v;
  const std::size_t ix = x.id();
  return x.tape().record(Tensor::scalar(total / n), {ix},
                         [ix, n](std::span<const double> g, Tape& t) {
                           for (double& d : t.grad_of(ix)) d += g[0] / n;
                         });
}

Var split_heads(Var x, std::size_t heads) {
  const Shape& s = x.shape();
  if (s.rank() != 3) throw DimensionError("split_heads expects [B,T,D], got " + s.str());
  if (heads == 0 || s[2] % heads != 0) {
    throw DimensionError("split_heads: " + std::to_string(heads) + " heads do not divide " +
                         s.str());
  }
  const std::size_t batch = s[0], steps = s[1], dim = s[2], hd = dim / heads;
  Tensor out(Shape{batch * heads, steps, hd});
  const auto& xv = x.value().storage();
  auto ov = out.values();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t t = 0; t < steps; ++t) {
        std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>((b * steps + t) * dim + h * hd), hd,
                    ov.begin() + static_cast<std::ptrdiff_t>(((b * heads + h) * steps + t) * hd));
      }
    }
  }
  const std::size_t ix = x.id();
  return x.tape().record(
      std::move(out), {ix},
      [ix, batch, heads, steps, dim, hd](std::span<const double> g, Tape& tp) {
        auto d = tp.grad_of(ix);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t t = 0; t < steps; ++t) {
              for (std::size_t i = 0; i < hd; ++i) {
                d[(b * steps + t) * dim + h * hd + i] += g[((b * heads + h) * steps + t) * hd + i];
              }
            }
          }
        }
      });
}

Var merge_heads(Var x, std::size_t heads) {
  const Shape& s = x.shape();
  if (s.rank() != 3 || heads == 0 || s[0] % heads != 0) {
    throw DimensionError("merge_heads: cannot merge " + std::to_string(heads) + " heads of " +
                         s.str());
  }
  const std::size_t batch = s[0] / heads, steps = s[1], hd = s[2], dim = hd * heads;
  Tensor out(Shape{batch, steps, dim});
  const auto& xv = x.value().storage();
  auto ov = out.values();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t t = 0; t < steps; ++t) {
        std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(((b * heads + h) * steps + t) * hd),
                    hd, ov.begin() + static_cast<std::ptrdiff_t>((b * steps + t) * dim + h * hd));
      }
    }
  }
  const std::size_t ix = x.id();
  return x.tape().record(
      std::move(out), {ix},
      [ix, batch, heads, steps, dim, hd](std::span<const double> g, Tape& tp) {
        auto d = tp.grad_of(ix);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t t = 0; t < steps; ++t) {
              for (std::size_t i = 0; i < hd; ++i) {
                d[((b * heads + h) * steps + t) * hd + i] += g[(b * steps + t) * dim + h * hd + i];
              }
            }
          }
        }
      });
}

Var subsample_time(Var x, std::size_t stride) {
  const Shape& s = x.shape();
  if (s.rank() != 3) throw DimensionError("subsample_time expects [B,T,D], got " + s.str());
  if (stride == 0) throw ParameterError("subsample_time: stride must be >= 1");
  const std::size_t batch = s[0], steps = s[1], dim = s[2];
  const std::size_t kept = (steps + stride - 1) / stride;
  Tensor out(Shape{batch, kept, dim});
  const auto& xv = x.value().storage();
  auto ov = out.values();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < kept; ++t) {
      std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>((b * steps + t * stride) * dim), dim,
                  ov.begin() + static_cast<std::ptrdiff_t>((b * kept + t) * dim));
    }
  }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {ix},
                         [ix, batch, steps, kept, dim, stride](std::span<const double> g,
                                                               Tape& tp) {
                           auto d = tp.grad_of(ix);
                           for (std::size_t b = 0; b < batch; ++b) {
                             for (std::size_t t = 0; t < kept; ++t) {
                               for (std::size_t j = 0; j < dim; ++j) {
                                 d[(b * steps + t * stride) * dim + j] +=
                                     g[(b * kept + t) * dim + j];
                               }
                             }
                           }
                         });
}

Var cross_entropy_label_smoothed(Var logits, std::span<const int> targets, double epsilon,
                                 int pad_id) {
  const Shape& s = logits.shape();
  if (s.rank() != 3) throw DimensionError("cross entropy expects [B,T,V] logits, got " + s.str());
  if (!(epsilon >= 0.0 && epsilon < 1.0)) {
    throw ParameterError("label smoothing epsilon must lie in [0,1), got " +
                         std::to_string(epsilon));
  }
  const std::size_t vocab = s[2];
  const std::size_t rows = s[0] * s[1];
  if (targets.size() != rows) {
    throw DimensionError("cross entropy: " + std::to_string(targets.size()) +
                         " targets for logits " + s.str());
  }
  if (epsilon > 0.0 && vocab < 2) throw ParameterError("label smoothing needs V >= 2");

  const double off = vocab > 1 ? epsilon / static_cast<double>(vocab - 1) : 0.0;
  const double on = 1.0 - epsilon;
  // Constant sum_v q_v log q_v, identical for every row.
  double neg_entropy = 0.0;
  if (on > 0.0) neg_entropy += on * std::log(on);
  if (off > 0.0) neg_entropy += static_cast<double>(vocab - 1) * off * std::log(off);

  const auto& lv = logits.value().storage();
  std::vector<double> probs(lv.size(), 0.0);
  std::vector<int> gold(targets.begin(), targets.end());
  std::size_t counted = 0;
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const int y = gold[r];
    if (y == pad_id) continue;
    if (y < 0 || static_cast<std::size_t>(y) >= vocab) {
      throw IndexError("target id " + std::to_string(y) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
    const double* row = lv.data() + r * vocab;
    const double mx = *std::max_element(row, row + vocab);
    double z = 0.0;
    for (std::size_t v = 0; v < vocab; ++v) z += std::exp(row[v] - mx);
    const double log_z = mx + std::log(z);
    double cross = 0.0;  // -sum_v q_v log p_v
    for (std::size_t v = 0; v < vocab; ++v) {
      const double log_p = row[v] - log_z;
      probs[r * vocab + v] = std::exp(log_p);
      const double q = static_cast<std::size_t>(y) == v ? on : off;
      if (q > 0.0) cross -= q * log_p;
    }
    total += neg_entropy + cross;
    ++counted;
  }
  if (counted == 0) throw ParameterError("no non-pad targets");
  const double n = static_cast<double>(counted);
  const std::size_t il = logits.id();
  return logits.tape().record(
      Tensor::scalar(total / n), {il},
      [il, rows, vocab, on, off, n, pad_id, gold = std::move(gold), probs = std::move(probs)](
          std::span<const double> g, Tape& t) {
        auto d = t.grad_of(il);
        const double w = g[0] / n;
        for (std::size_t r = 0; r < rows; ++r) {
          if (gold[r] == pad_id) continue;
          for (std::size_t v = 0; v < vocab; ++v) {
            const double q = static_cast<std::size_t>(gold[r]) == v ? on : off;
            d[r * vocab + v] += w * (probs[r * vocab + v] - q);
          }
        }
      });
}

}  // namespace dropdim
