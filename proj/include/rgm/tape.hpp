#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "rgm/common.hpp"
#include "rgm/kernels.hpp"
#include "rgm/rng.hpp"
#include "rgm/tensor.hpp"

namespace rgm {

/**
 * Reverse-mode differentiation tape over dense tensors.
 *
 * Forward values are computed eagerly as ops are recorded; backward() replays
 * the record in reverse and accumulates gradients. One tape is one forward
 * pass: a second backward() on the same tape is rejected. Gradients of
 * param() leaves are added into the bound Parameter's grad buffer, so a
 * caller can accumulate across several tapes before an optimizer step.
 *
 * Every op output and every finalized gradient is scanned for NaN/Inf and
 * raises NumericError instead of letting poison propagate.
 */
template <typename T>
class Tape {
 public:
  using NodeId = int32_t;
  static constexpr NodeId kNone = -1;

  // ---- leaves ----

  NodeId input(Tensor<T> v) { return push(std::move(v), {}, "input"); }

  NodeId input_scalar(T v) { return input(Tensor<T>::scalar(v)); }

  /// Trainable leaf. Repeated calls with the same Parameter return one node.
  NodeId param(Parameter<T>& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return it->second;
    NodeId id = push(p.value, {}, "param");
    nodes_[id].bound = &p;
    param_nodes_.emplace(&p, id);
    return id;
  }

  // ---- elementwise ----

  NodeId add(NodeId a, NodeId b) {
    check_same_shape(a, b, "add");
    Tensor<T> out = value(a);
    const auto& vb = value(b).data;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += vb[i];
    return push(std::move(out), {a, b}, "add", [a, b](Tape& t, NodeId self) {
      t.accumulate(a, t.nodes_[self].grad.data);
      t.accumulate(b, t.nodes_[self].grad.data);
    });
  }

  NodeId sub(NodeId a, NodeId b) {
    check_same_shape(a, b, "sub");
    Tensor<T> out = value(a);
    const auto& vb = value(b).data;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= vb[i];
    return push(std::move(out), {a, b}, "sub", [a, b](Tape& t, NodeId self) {
      const auto& g = t.nodes_[self].grad.data;
      t.accumulate(a, g);
      auto& gb = t.nodes_[b].grad.data;
      for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    });
  }

  NodeId mul(NodeId a, NodeId b) {
    check_same_shape(a, b, "mul");
    Tensor<T> out = value(a);
    const auto& vb = value(b).data;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= vb[i];
    return push(std::move(out), {a, b}, "mul", [a, b](Tape& t, NodeId self) {
      const auto& g = t.nodes_[self].grad.data;
      const auto& va = t.value(a).data;
      const auto& vb2 = t.value(b).data;
      auto& ga = t.nodes_[a].grad.data;
      auto& gb = t.nodes_[b].grad.data;
      for (size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i] * vb2[i];
        gb[i] += g[i] * va[i];
      }
    });
  }

  NodeId scale(NodeId a, T c) {
    Tensor<T> out = value(a);
    for (auto& x : out.data) x *= c;
    return push(std::move(out), {a}, "scale", [a, c](Tape& t, NodeId self) {
      const auto& g = t.nodes_[self].grad.data;
      auto& ga = t.nodes_[a].grad.data;
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
    });
  }

  NodeId add_const(NodeId a, T c) {
    Tensor<T> out = value(a);
    for (auto& x : out.data) x += c;
    return push(std::move(out), {a}, "add_const", [a](Tape& t, NodeId self) {
      t.accumulate(a, t.nodes_[self].grad.data);
    });
  }

  NodeId relu(NodeId a) {
    Tensor<T> out = value(a);
    for (auto& x : out.data) x = kernels::relu(x);
    return push(std::move(out), {a}, "relu", [a](Tape& t, NodeId self) {
      const auto& g = t.nodes_[self].grad.data;
      const auto& va = t.value(a).data;
      auto& ga = t.nodes_[a].grad.data;
      for (size_t i = 0; i < g.size(); ++i) ga[i] += (va[i] > T(0)) ? g[i] : T(0);
    });
  }

  NodeId sigmoid(NodeId a) {
    Tensor<T> out = value(a);
    for (auto& x : out.data) x = kernels::sigmoid(x);
    return push(std::move(out), {a}, "sigmoid", [a](Tape& t, NodeId self) {
      const auto& g = t.nodes_[self].grad.data;
      const auto& y = t.nodes_[self].value.data;
      auto& ga = t.nodes_[a].grad.data;
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (T(1) - y[i]);
    });
  }

  NodeId exp(NodeId a) {
    Tensor<T> out = value(a);
    for (auto& x : out.data) x = std::exp(x);
    return push(std::move(out), {a}, "exp", [a](Tape& t, NodeId self) {
      const auto& g = t.nodes_[self].grad.data;
      const auto& y = t.nodes_[self].value.data;
      auto& ga = t.nodes_[a].grad.data;
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
    });
  }

  NodeId log(NodeId a) {
    Tensor<T> out = value(a);
    for (auto& x : out.data) x = std::log(x);
    return push(std::move(out), {a}, "log", [a](Tape& t, NodeId self) {
      const auto& g = t.nodes_[self].grad.data;
      const auto& va = t.value(a).data;
      auto& ga = t.nodes_[a].grad.data;
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / va[i];
    });
  }

  /// Gradient passes through strictly inside (lo, hi) and is zero when clamped.
  NodeId clamp(NodeId a, T lo, T hi) {
    Tensor<T> out = value(a);
    for (auto& x : out.data) x = std::min(hi, std::max(lo, x));
    return push(std::move(out), {a}, "clamp", [a, lo, hi](Tape& t, NodeId self) {
      const auto& g = t.nodes_[self].grad.data;
      const auto& va = t.value(a).data;
      auto& ga = t.nodes_[a].grad.data;
      for (size_t i = 0; i < g.size(); ++i) {
        if (va[i] > lo && va[i] < hi) ga[i] += g[i];
      }
    });
  }

  /// Elementwise min; ties route the gradient to `a`.
  NodeId min_elem(NodeId a, NodeId b) {
    check_same_shape(a, b, "min_elem");
    Tensor<T> out = value(a);
    const auto& vb = value(b).data;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = std::min(out.data[i], vb[i]);
    return push(std::move(out), {a, b}, "min_elem", [a, b](Tape& t, NodeId self) {
      const auto& g = t.nodes_[self].grad.data;
      const auto& va = t.value(a).data;
      const auto& vb2 = t.value(b).data;
      auto& ga = t.nodes_[a].grad.data;
      auto& gb = t.nodes_[b].grad.data;
      for (size_t i = 0; i < g.size(); ++i) {
        if (va[i] <= vb2[i]) {
          ga[i] += g[i];
        } else {
          gb[i] += g[i];
        }
      }
    });
  }

  /// Inverted dropout: scales kept units by 1/(1-p) in train mode, identity in
  /// eval mode. The mask is drawn elementwise from `rng` in index order.
  NodeId dropout(NodeId a, T p, RngState& rng, bool train) {
    if (!train || p <= T(0)) return a;
    require(p < T(1), "dropout: p must be < 1");
    const T keep_scale = T(1) / (T(1) - p);
    Tensor<T> out = value(a);
    auto mask = std::make_shared<std::vector<T>>(out.data.size());
    for (size_t i = 0; i < out.data.size(); ++i) {
      (*mask)[i] = (static_cast<T>(rng.next_unit_f()) < p) ? T(0) : keep_scale;
      out.data[i] *= (*mask)[i];
    }
    return push(std::move(out), {a}, "dropout", [a, mask](Tape& t, NodeId self) {
      const auto& g = t.nodes_[self].grad.data;
      auto& ga = t.nodes_[a].grad.data;
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*mask)[i];
    });
  }

  // ---- matrix ops ----

  /// Standard product: (m,k) x (k,n) -> (m,n).
  NodeId matmul(NodeId a, NodeId b) {
    const auto& va = value(a);
    const auto& vb = value(b);
    require(va.ndim() == 2 && vb.ndim() == 2, "matmul: operands must be 2-d");
    require(va.cols() == vb.rows(), "matmul: inner dimensions disagree, " + shape_str(va.shape) +
                                        " x " + shape_str(vb.shape));
    const int m = va.rows(), k = va.cols(), n = vb.cols();
    Tensor<T> out({m, n});
    for (int i = 0; i < m; ++i) {
      for (int l = 0; l < k; ++l) {
        kernels::axpy(va.at(i, l), vb.row(l).data(), out.row(i).data(), n);
      }
    }
    return push(std::move(out), {a, b}, "matmul", [a, b, m, k, n](Tape& t, NodeId self) {
      const auto& g = t.nodes_[self].grad;
      const auto& va2 = t.value(a);
      const auto& vb2 = t.value(b);
      auto& ga = t.nodes_[a].grad;
      auto& gb = t.nodes_[b].grad;
      for (int i = 0; i < m; ++i) {
        // dA[i,l] += dot(dC[i,:], B[l,:])
        for (int l = 0; l < k; ++l) {
          ga.at(i, l) += kernels::dot(g.row(i).data(), vb2.row(l).data(), n);
        }
        // dB[l,:] += A[i,l] * dC[i,:]
        for (int l = 0; l < k; ++l) {
          kernels::axpy(va2.at(i, l), g.row(i).data(), gb.row(l).data(), n);
        }
      }
    });
  }

  /// C = A * B^T: (m,k) x (n,k) -> (m,n). Rows of both operands are contiguous.
  NodeId matmul_nt(NodeId a, NodeId b) {
    const auto& va = value(a);
    const auto& vb = value(b);
    require(va.ndim() == 2 && vb.ndim() == 2, "matmul_nt: operands must be 2-d");
    require(va.cols() == vb.cols(), "matmul_nt: shared dimension disagrees, " +
                                        shape_str(va.shape) + " x " + shape_str(vb.shape) + "^T");
    const int m = va.rows(), k = va.cols(), n = vb.rows();
    Tensor<T> out({m, n});
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) {
        out.at(i, j) = kernels::dot(va.row(i).data(), vb.row(j).data(), k);
      }
    }
    return push(std::move(out), {a, b}, "matmul_nt", [a, b, m, k, n](Tape& t, NodeId self) {
      const auto& g = t.nodes_[self].grad;
      const auto& va2 = t.value(a);
      const auto& vb2 = t.value(b);
      auto& ga = t.nodes_[a].grad;
      auto& gb = t.nodes_[b].grad;
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
          const T gij = g.at(i, j);
          if (gij == T(0)) continue;
          kernels::axpy(gij, vb2.row(j).data(), ga.row(i).data(), k);
          kernels::axpy(gij, va2.row(i).data(), gb.row(j).data(), k);
        }
      }
    });
  }

  /// Affine map of rows: x (m,in), w (out,in), optional bias (out) -> (m,out).
  NodeId linear(NodeId x, NodeId w, NodeId b = kNone) {
    const auto& vx = value(x);
    const auto& vw = value(w);
    require(vx.ndim() == 2 && vw.ndim() == 2, "linear: x and w must be 2-d");
    require(vx.cols() == vw.cols(), "linear: feature width disagrees, x " + shape_str(vx.shape) +
                                        " w " + shape_str(vw.shape));
    const int m = vx.rows(), in = vx.cols(), out_dim = vw.rows();
    const T* bias = nullptr;
    if (b != kNone) {
      const auto& vbias = value(b);
      require(static_cast<int>(vbias.numel()) == out_dim, "linear: bias width disagrees");
      bias = vbias.data.data();
    }
    Tensor<T> out({m, out_dim});
    for (int i = 0; i < m; ++i) {
      kernels::linear_row(vx.row(i).data(), vw.data.data(), bias, out.row(i).data(), in, out_dim);
    }
    return push(std::move(out), {x, w, b}, "linear",
                [x, w, b, m, in, out_dim](Tape& t, NodeId self) {
                  const auto& g = t.nodes_[self].grad;
                  const auto& vx2 = t.value(x);
                  const auto& vw2 = t.value(w);
                  auto& gx = t.nodes_[x].grad;
                  auto& gw = t.nodes_[w].grad;
                  for (int i = 0; i < m; ++i) {
                    for (int o = 0; o < out_dim; ++o) {
                      const T go = g.at(i, o);
                      if (go == T(0)) continue;
                      kernels::axpy(go, vw2.row(o).data(), gx.row(i).data(), in);
                      kernels::axpy(go, vx2.row(i).data(), gw.row(o).data(), in);
                    }
                  }
                  if (b != kNone) {
                    auto& gb = t.nodes_[b].grad.data;
                    for (int i = 0; i < m; ++i) {
                      for (int o = 0; o < out_dim; ++o) gb[o] += g.at(i, o);
                    }
                  }
                });
  }

  /// Row-wise RMS normalization with learned gain.
  NodeId rmsnorm(NodeId x, NodeId gain, T eps = T(1e-5)) {
    const auto& vx = value(x);
    const auto& vg = value(gain);
    require(vx.ndim() == 2, "rmsnorm: x must be 2-d");
    const int m = vx.rows(), n = vx.cols();
    require(static_cast<int>(vg.numel()) == n, "rmsnorm: gain width disagrees");
    Tensor<T> out({m, n});
    for (int i = 0; i < m; ++i) {
      kernels::rmsnorm_row(vx.row(i).data(), vg.data.data(), out.row(i).data(), n, eps);
    }
    return push(std::move(out), {x, gain}, "rmsnorm", [x, gain, m, n, eps](Tape& t, NodeId self) {
      const auto& g = t.nodes_[self].grad;
      const auto& vx2 = t.value(x);
      const auto& vg2 = t.value(gain).data;
      auto& gx = t.nodes_[x].grad;
      auto& gg = t.nodes_[gain].grad.data;
      for (int i = 0; i < m; ++i) {
        const T* xr = vx2.row(i).data();
        const T* gr = g.row(i).data();
        const T ms = kernels::sum_sq(xr, n) / static_cast<T>(n);
        const T inv = T(1) / std::sqrt(ms + eps);
        // s = sum_j g_j * gain_j * x_j
        T s = T(0);
        for (int j = 0; j < n; ++j) s += gr[j] * vg2[j] * xr[j];
        const T c = s * inv * inv * inv / static_cast<T>(n);
        T* gxr = gx.row(i).data();
        for (int j = 0; j < n; ++j) {
          gxr[j] += gr[j] * vg2[j] * inv - xr[j] * c;
          gg[j] += gr[j] * xr[j] * inv;
        }
      }
    });
  }

  /// Gather rows of an embedding table: table (V,d), ids (n) -> (n,d).
  NodeId embedding(NodeId table, std::vector<int> ids) {
    const auto& vt = value(table);
    require(vt.ndim() == 2, "embedding: table must be 2-d");
    const int v = vt.rows(), d = vt.cols();
    Tensor<T> out({static_cast<int>(ids.size()), d});
    for (size_t i = 0; i < ids.size(); ++i) {
      require(ids[i] >= 0 && ids[i] < v, "embedding: id out of range");
      std::copy_n(vt.row(ids[i]).data(), d, out.row(static_cast<int>(i)).data());
    }
    auto idsp = std::make_shared<std::vector<int>>(std::move(ids));
    return push(std::move(out), {table}, "embedding", [table, idsp, d](Tape& t, NodeId self) {
      const auto& g = t.nodes_[self].grad;
      auto& gt = t.nodes_[table].grad;
      for (size_t i = 0; i < idsp->size(); ++i) {
        kernels::axpy(T(1), g.row(static_cast<int>(i)).data(), gt.row((*idsp)[i]).data(), d);
      }
    });
  }

  /// Gather a subset of rows: x (m,n), rows (r) -> (r,n).
  NodeId gather_rows(NodeId x, std::vector<int> rows) {
    const auto& vx = value(x);
    require(vx.ndim() == 2, "gather_rows: x must be 2-d");
    const int m = vx.rows(), n = vx.cols();
    Tensor<T> out({static_cast<int>(rows.size()), n});
    for (size_t i = 0; i < rows.size(); ++i) {
      require(rows[i] >= 0 && rows[i] < m, "gather_rows: row index out of range");
      std::copy_n(vx.row(rows[i]).data(), n, out.row(static_cast<int>(i)).data());
    }
    auto rowsp = std::make_shared<std::vector<int>>(std::move(rows));
    return push(std::move(out), {x}, "gather_rows", [x, rowsp, n](Tape& t, NodeId self) {
      const auto& g = t.nodes_[self].grad;
      auto& gx = t.nodes_[x].grad;
      for (size_t i = 0; i < rowsp->size(); ++i) {
        kernels::axpy(T(1), g.row(static_cast<int>(i)).data(), gx.row((*rowsp)[i]).data(), n);
      }
    });
  }

  NodeId slice_cols(NodeId x, int c0, int c1) {
    const auto& vx = value(x);
    require(vx.ndim() == 2, "slice_cols: x must be 2-d");
    require(0 <= c0 && c0 < c1 && c1 <= vx.cols(), "slice_cols: bad column range");
    const int m = vx.rows(), w = c1 - c0;
    Tensor<T> out({m, w});
    for (int i = 0; i < m; ++i) {
      std::copy_n(vx.row(i).data() + c0, w, out.row(i).data());
    }
    return push(std::move(out), {x}, "slice_cols", [x, c0, w, m](Tape& t, NodeId self) {
      const auto& g = t.nodes_[self].grad;
      auto& gx = t.nodes_[x].grad;
      for (int i = 0; i < m; ++i) {
        T* dst = gx.row(i).data() + c0;
        const T* src = g.row(i).data();
        for (int j = 0; j < w; ++j) dst[j] += src[j];
      }
    });
  }

  NodeId concat_cols(const std::vector<NodeId>& xs) {
    require(!xs.empty(), "concat_cols: empty input list");
    const int m = value(xs[0]).rows();
    int total = 0;
    for (NodeId x : xs) {
      require(value(x).ndim() == 2 && value(x).rows() == m, "concat_cols: row counts disagree");
      total += value(x).cols();
    }
    Tensor<T> out({m, total});
    int off = 0;
    for (NodeId x : xs) {
      const auto& vx = value(x);
      for (int i = 0; i < m; ++i) {
        std::copy_n(vx.row(i).data(), vx.cols(), out.row(i).data() + off);
      }
      off += vx.cols();
    }
    auto parts = std::make_shared<std::vector<NodeId>>(xs);
    return push(std::move(out), xs, "concat_cols", [parts, m](Tape& t, NodeId self) {
      const auto& g = t.nodes_[self].grad;
      int off2 = 0;
      for (NodeId x : *parts) {
        auto& gx = t.nodes_[x].grad;
        const int w = gx.cols();
        for (int i = 0; i < m; ++i) {
          const T* src = g.row(i).data() + off2;
          T* dst = gx.row(i).data();
          for (int j = 0; j < w; ++j) dst[j] += src[j];
        }
        off2 += w;
      }
    });
  }

  /// Row i becomes softmax over columns [0, i]; columns above the diagonal
  /// are zero. Input must be square (per-position attention scores).
  NodeId causal_softmax(NodeId scores) {
    const auto& vs = value(scores);
    require(vs.ndim() == 2 && vs.rows() == vs.cols(), "causal_softmax: scores must be square");
    const int n = vs.rows();
    Tensor<T> out = vs;
    for (int i = 0; i < n; ++i) {
      T* r = out.row(i).data();
      kernels::softmax_inplace(r, i + 1);
      for (int j = i + 1; j < n; ++j) r[j] = T(0);
    }
    return push(std::move(out), {scores}, "causal_softmax", [scores, n](Tape& t, NodeId self) {
      const auto& g = t.nodes_[self].grad;
      const auto& p = t.nodes_[self].value;
      auto& gs = t.nodes_[scores].grad;
      for (int i = 0; i < n; ++i) {
        const T* pr = p.row(i).data();
        const T* gr = g.row(i).data();
        T s = T(0);
        for (int j = 0; j <= i; ++j) s += gr[j] * pr[j];
        T* out_r = gs.row(i).data();
        for (int j = 0; j <= i; ++j) out_r[j] += pr[j] * (gr[j] - s);
      }
    });
  }

  // ---- reductions & losses ----

  NodeId sum(NodeId x) {
    T acc = T(0);
    for (const T& v : value(x).data) acc += v;
    return push(Tensor<T>::scalar(acc), {x}, "sum", [x](Tape& t, NodeId self) {
      const T g = t.nodes_[self].grad.data[0];
      auto& gx = t.nodes_[x].grad.data;
      for (auto& v : gx) v += g;
    });
  }

  NodeId mean(NodeId x) {
    const size_t n = value(x).numel();
    require(n > 0, "mean: empty tensor");
    return scale(sum(x), T(1) / static_cast<T>(n));
  }

  /// Numerically stable NLL of `target` under softmax(logits); logits is a
  /// vector over the vocabulary.
  NodeId softmax_cross_entropy(NodeId logits, int target) {
    const auto& vl = value(logits);
    require(vl.ndim() == 1 || (vl.ndim() == 2 && vl.rows() == 1),
            "softmax_cross_entropy: logits must be a vector");
    const int n = static_cast<int>(vl.numel());
    require(target >= 0 && target < n, "softmax_cross_entropy: target out of vocabulary range");
    const T lp = kernels::log_softmax_at(vl.data.data(), n, target);
    return push(Tensor<T>::scalar(-lp), {logits}, "softmax_cross_entropy",
                [logits, target, n](Tape& t, NodeId self) {
                  const T g = t.nodes_[self].grad.data[0];
                  const auto& vl2 = t.value(logits).data;
                  std::vector<T> probs(vl2.begin(), vl2.end());
                  kernels::softmax_inplace(probs.data(), n);
                  auto& gl = t.nodes_[logits].grad.data;
                  for (int j = 0; j < n; ++j) {
                    gl[j] += g * (probs[j] - (j == target ? T(1) : T(0)));
                  }
                });
  }

  /// Mean NLL over rows: logits (m,V), targets (m) -> scalar.
  NodeId cross_entropy_mean(NodeId logits, std::vector<int> targets) {
    const auto& vl = value(logits);
    require(vl.ndim() == 2, "cross_entropy_mean: logits must be 2-d");
    const int m = vl.rows(), n = vl.cols();
    require(static_cast<int>(targets.size()) == m, "cross_entropy_mean: one target per row");
    T acc = T(0);
    for (int i = 0; i < m; ++i) {
      require(targets[i] >= 0 && targets[i] < n, "cross_entropy_mean: target out of range");
      acc += -kernels::log_softmax_at(vl.row(i).data(), n, targets[i]);
    }
    auto tg = std::make_shared<std::vector<int>>(std::move(targets));
    return push(Tensor<T>::scalar(acc / static_cast<T>(m)), {logits}, "cross_entropy_mean",
                [logits, tg, m, n](Tape& t, NodeId self) {
                  const T g = t.nodes_[self].grad.data[0] / static_cast<T>(m);
                  const auto& vl2 = t.value(logits);
                  auto& gl = t.nodes_[logits].grad;
                  std::vector<T> probs(n);
                  for (int i = 0; i < m; ++i) {
                    std::copy_n(vl2.row(i).data(), n, probs.data());
                    kernels::softmax_inplace(probs.data(), n);
                    T* gr = gl.row(i).data();
                    for (int j = 0; j < n; ++j) gr[j] += g * probs[j];
                    gr[(*tg)[i]] -= g;
                  }
                });
  }

  /// Per-row log softmax picked at an id: logits (m,V), ids (m) -> (m).
  NodeId gather_log_softmax(NodeId logits, std::vector<int> ids) {
    const auto& vl = value(logits);
    require(vl.ndim() == 2, "gather_log_softmax: logits must be 2-d");
    const int m = vl.rows(), n = vl.cols();
    require(static_cast<int>(ids.size()) == m, "gather_log_softmax: one id per row");
    Tensor<T> out({m});
    for (int i = 0; i < m; ++i) {
      require(ids[i] >= 0 && ids[i] < n, "gather_log_softmax: id out of range");
      out.at(i) = kernels::log_softmax_at(vl.row(i).data(), n, ids[i]);
    }
    auto idp = std::make_shared<std::vector<int>>(std::move(ids));
    return push(std::move(out), {logits}, "gather_log_softmax",
                [logits, idp, m, n](Tape& t, NodeId self) {
                  const auto& g = t.nodes_[self].grad.data;
                  const auto& vl2 = t.value(logits);
                  auto& gl = t.nodes_[logits].grad;
                  std::vector<T> probs(n);
                  for (int i = 0; i < m; ++i) {
                    if (g[i] == T(0)) continue;
                    std::copy_n(vl2.row(i).data(), n, probs.data());
                    kernels::softmax_inplace(probs.data(), n);
                    T* gr = gl.row(i).data();
                    for (int j = 0; j < n; ++j) gr[j] -= g[i] * probs[j];
                    gr[(*idp)[i]] += g[i];
                  }
                });
  }

  /**
   * (1/n) * sum_i w_i * BCE(s_i, y_i) over a score vector in (0,1).
   * Targets and weights are constants: no gradient flows through them, and
   * records with w_i = 0 contribute exactly zero loss and zero gradient.
   */
  NodeId weighted_bce(NodeId scores, std::vector<T> targets, std::vector<T> weights) {
    const auto& vs = value(scores);
    const int n = static_cast<int>(vs.numel());
    require(n >= 1, "weighted_bce: empty batch");
    require(static_cast<int>(targets.size()) == n && static_cast<int>(weights.size()) == n,
            "weighted_bce: targets/weights length disagrees with scores");
    T acc = T(0);
    for (int i = 0; i < n; ++i) {
      if (weights[i] == T(0)) continue;
      const T s = vs.data[static_cast<size_t>(i)];
      require(s > T(0) && s < T(1), "weighted_bce: score outside (0,1); clamp first");
      acc += weights[i] * -(targets[i] * std::log(s) + (T(1) - targets[i]) * std::log(T(1) - s));
    }
    auto tg = std::make_shared<std::vector<T>>(std::move(targets));
    auto wt = std::make_shared<std::vector<T>>(std::move(weights));
    return push(Tensor<T>::scalar(acc / static_cast<T>(n)), {scores}, "weighted_bce",
                [scores, tg, wt, n](Tape& t, NodeId self) {
                  const T g = t.nodes_[self].grad.data[0] / static_cast<T>(n);
                  const auto& vs2 = t.value(scores).data;
                  auto& gs = t.nodes_[scores].grad.data;
                  for (int i = 0; i < n; ++i) {
                    const T w = (*wt)[i];
                    if (w == T(0)) continue;
                    const T s = vs2[static_cast<size_t>(i)];
                    const T y = (*tg)[i];
                    gs[i] += g * w * (-(y / s) + (T(1) - y) / (T(1) - s));
                  }
                });
  }

  // ---- execution ----

  const Tensor<T>& value(NodeId id) const { return node(id).value; }

  /// Gradient of a node; valid after backward().
  const Tensor<T>& grad(NodeId id) const {
    require(backward_done_, "grad: backward() has not run on this tape");
    return node(id).grad;
  }

  /**
   * Reverse pass from a scalar loss. Accumulates into every bound Parameter's
   * grad buffer. A second call without a fresh tape is rejected.
   */
  void backward(NodeId loss) {
    require(!backward_done_, "backward: tape already consumed; build a new forward pass");
    const Tensor<T>& lv = value(loss);
    require(lv.is_scalar(), "backward: loss must be a scalar, got shape " + shape_str(lv.shape));
    backward_done_ = true;
    nodes_[loss].grad.data[0] = T(1);
    for (NodeId id = static_cast<NodeId>(nodes_.size()) - 1; id >= 0; --id) {
      Node& nd = nodes_[id];
      check_finite(nd.grad, "backward gradient of " + std::string(nd.op));
      if (nd.back) nd.back(*this, id);
    }
    for (auto& [p, id] : param_nodes_) {
      const auto& g = nodes_[id].grad.data;
      for (size_t i = 0; i < g.size(); ++i) p->grad.data[i] += g[i];
    }
  }

  size_t size() const { return nodes_.size(); }

  /// Disable the per-op NaN scan (gradient-check micro-benchmarks only).
  void set_finite_checks(bool on) { finite_checks_ = on; }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    std::function<void(Tape&, NodeId)> back;
    Parameter<T>* bound = nullptr;
    const char* op = "";
  };

  const Node& node(NodeId id) const {
    require(id >= 0 && id < static_cast<NodeId>(nodes_.size()), "tape: invalid node id");
    return nodes_[static_cast<size_t>(id)];
  }

  NodeId push(Tensor<T> v, std::initializer_list<NodeId> parents, const char* op,
              std::function<void(Tape&, NodeId)> back = nullptr) {
    return push(std::move(v), std::vector<NodeId>(parents), op, std::move(back));
  }

  NodeId push(Tensor<T> v, const std::vector<NodeId>& parents, const char* op,
              std::function<void(Tape&, NodeId)> back = nullptr) {
    for (NodeId p : parents) {
      if (p != kNone) node(p);  // validates
    }
    check_finite(v, op);
    Node nd;
    nd.grad = Tensor<T>::zeros(v.shape);
    nd.value = std::move(v);
    nd.back = std::move(back);
    nd.op = op;
    nodes_.push_back(std::move(nd));
    return static_cast<NodeId>(nodes_.size()) - 1;
  }

  void accumulate(NodeId id, const std::vector<T>& g) {
    auto& dst = nodes_[id].grad.data;
    for (size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  }

  void check_same_shape(NodeId a, NodeId b, const char* op) {
    require(value(a).same_shape(value(b)), std::string(op) + ": shape mismatch " +
                                               shape_str(value(a).shape) + " vs " +
                                               shape_str(value(b).shape));
  }

  void check_finite(const Tensor<T>& t, const std::string& where) const {
    if (!finite_checks_) return;
    if (!t.all_finite()) throw NumericError("non-finite value in " + where);
  }

  std::vector<Node> nodes_;
  std::unordered_map<Parameter<T>*, NodeId> param_nodes_;
  bool backward_done_ = false;
  bool finite_checks_ = true;
};

/// Zero the given parameters' grads, then run backward. Parameters that never
/// appeared on the tape keep an all-zero gradient.
template <typename T>
void backward_into(Tape<T>& tape, typename Tape<T>::NodeId loss,
                   std::span<Parameter<T>* const> params) {
  for (Parameter<T>* p : params) p->zero_grad();
  tape.backward(loss);
}

}  // namespace rgm
