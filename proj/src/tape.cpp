#include "coworld/tape.hpp"

#include <cmath>
#include <stdexcept>

#include "coworld/kernels.hpp"

// Shape violations are programmer errors; keep the checks in release builds.
#define CW_SHAPE(cond)                                                      \
  do {                                                                      \
    if (!(cond)) throw std::logic_error("tape shape violation: " #cond);    \
  } while (0)

namespace coworld {

namespace {

inline void axpy(double* dst, const double* src, size_t n) {
  kern::zip_elems(dst, src, dst, n, [](double d, double s) { return d + s; });
}

}  // namespace

double* Tape::gbuf(int id) {
  Node& n = nodes_[id];
  if (!n.grad_live) {
    n.grad.assign(n.val.size(), 0.0);
    n.grad_live = true;
  }
  return n.grad.data();
}

TRef Tape::constant(Tensor t) { return TRef{push(std::move(t))}; }

TRef Tape::param(Param& p) {
  if (frozen_depth_ > 0) {
    // rollouts re-read the same frozen params every step; share one constant
    auto it = frozen_ids_.find(&p);
    if (it != frozen_ids_.end()) return TRef{it->second};
    const TRef r = constant(p.value);
    frozen_ids_.emplace(&p, r.id);
    return r;
  }
  auto it = param_ids_.find(&p);
  if (it != param_ids_.end()) return TRef{it->second};
  const int id = push(p.value);
  nodes_[id].leaf = &p;
  param_ids_.emplace(&p, id);
  return TRef{id};
}

// ---- arithmetic ----

TRef Tape::add(TRef a, TRef b) {
  const Tensor& ta = nodes_[a.id].val;
  const Tensor& tb = nodes_[b.id].val;
  CW_SHAPE(ta.same_shape(tb));
  Tensor out(ta.rows, ta.cols);
  kern::zip_elems(ta.data.data(), tb.data.data(), out.data.data(), out.size(),
                  [](double x, double y) { return x + y; });
  const int id = push(std::move(out));
  nodes_[id].back = [a, b](Tape& t, int self) {
    const auto& g = t.nodes_[self].grad;
    axpy(t.gbuf(a.id), g.data(), g.size());
    axpy(t.gbuf(b.id), g.data(), g.size());
  };
  return TRef{id};
}

TRef Tape::sub(TRef a, TRef b) {
  const Tensor& ta = nodes_[a.id].val;
  const Tensor& tb = nodes_[b.id].val;
  CW_SHAPE(ta.same_shape(tb));
  Tensor out(ta.rows, ta.cols);
  kern::zip_elems(ta.data.data(), tb.data.data(), out.data.data(), out.size(),
                  [](double x, double y) { return x - y; });
  const int id = push(std::move(out));
  nodes_[id].back = [a, b](Tape& t, int self) {
    const auto& g = t.nodes_[self].grad;
    axpy(t.gbuf(a.id), g.data(), g.size());
    double* gb = t.gbuf(b.id);
    kern::zip_elems(gb, g.data(), gb, g.size(), [](double d, double s) { return d - s; });
  };
  return TRef{id};
}

TRef Tape::mul(TRef a, TRef b) {
  const Tensor& ta = nodes_[a.id].val;
  const Tensor& tb = nodes_[b.id].val;
  CW_SHAPE(ta.same_shape(tb));
  Tensor out(ta.rows, ta.cols);
  kern::zip_elems(ta.data.data(), tb.data.data(), out.data.data(), out.size(),
                  [](double x, double y) { return x * y; });
  const int id = push(std::move(out));
  nodes_[id].back = [a, b](Tape& t, int self) {
    const auto& g = t.nodes_[self].grad;
    const auto& va = t.nodes_[a.id].val.data;
    const auto& vb = t.nodes_[b.id].val.data;
    double* ga = t.gbuf(a.id);
    double* gb = t.gbuf(b.id);
    for (size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i] * vb[i];
      gb[i] += g[i] * va[i];
    }
  };
  return TRef{id};
}

TRef Tape::scale(TRef x, double c) {
  const Tensor& tx = nodes_[x.id].val;
  Tensor out(tx.rows, tx.cols);
  kern::map_elems(tx.data.data(), out.data.data(), out.size(),
                  [c](double v) { return v * c; });
  const int id = push(std::move(out));
  nodes_[id].back = [x, c](Tape& t, int self) {
    const auto& g = t.nodes_[self].grad;
    double* gx = t.gbuf(x.id);
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * c;
  };
  return TRef{id};
}

TRef Tape::add_scalar(TRef x, double c) {
  const Tensor& tx = nodes_[x.id].val;
  Tensor out(tx.rows, tx.cols);
  kern::map_elems(tx.data.data(), out.data.data(), out.size(),
                  [c](double v) { return v + c; });
  const int id = push(std::move(out));
  nodes_[id].back = [x](Tape& t, int self) {
    const auto& g = t.nodes_[self].grad;
    axpy(t.gbuf(x.id), g.data(), g.size());
  };
  return TRef{id};
}

TRef Tape::matmul(TRef a, TRef b) {
  const Tensor& ta = nodes_[a.id].val;
  const Tensor& tb = nodes_[b.id].val;
  CW_SHAPE(ta.cols == tb.rows);
  Tensor out(ta.rows, tb.cols);
  kern::matmul_nn(ta.data.data(), tb.data.data(), out.data.data(), ta.rows, ta.cols, tb.cols);
  const int id = push(std::move(out));
  nodes_[id].back = [a, b](Tape& t, int self) {
    const auto& g = t.nodes_[self].grad;
    const Tensor& va = t.nodes_[a.id].val;
    const Tensor& vb = t.nodes_[b.id].val;
    // dA += dC · B^T
    {
      std::vector<double> tmp(va.size());
      kern::matmul_nt(g.data(), vb.data.data(), tmp.data(), va.rows, vb.cols, vb.rows);
      axpy(t.gbuf(a.id), tmp.data(), tmp.size());
    }
    // dB += A^T · dC
    {
      std::vector<double> tmp(vb.size());
      kern::matmul_tn(va.data.data(), g.data(), tmp.data(), va.rows, va.cols, vb.cols);
      axpy(t.gbuf(b.id), tmp.data(), tmp.size());
    }
  };
  return TRef{id};
}

TRef Tape::add_rowvec(TRef x, TRef bias) {
  const Tensor& tx = nodes_[x.id].val;
  const Tensor& tb = nodes_[bias.id].val;
  CW_SHAPE(tb.rows == 1 && tb.cols == tx.cols);
  Tensor out(tx.rows, tx.cols);
  for (int r = 0; r < tx.rows; ++r)
    for (int c = 0; c < tx.cols; ++c) out.at(r, c) = tx.at(r, c) + tb.at(0, c);
  const int id = push(std::move(out));
  nodes_[id].back = [x, bias](Tape& t, int self) {
    const auto& g = t.nodes_[self].grad;
    const Tensor& tx2 = t.nodes_[x.id].val;
    axpy(t.gbuf(x.id), g.data(), g.size());
    double* gb = t.gbuf(bias.id);
    std::vector<double> cs(tx2.cols);
    kern::col_sum(g.data(), cs.data(), tx2.rows, tx2.cols);
    axpy(gb, cs.data(), cs.size());
  };
  return TRef{id};
}

TRef Tape::mul_colvec(TRef x, TRef w) {
  const Tensor& tx = nodes_[x.id].val;
  const Tensor& tw = nodes_[w.id].val;
  CW_SHAPE(tw.cols == 1 && tw.rows == tx.rows);
  Tensor out(tx.rows, tx.cols);
  for (int r = 0; r < tx.rows; ++r) {
    const double wv = tw.at(r, 0);
    for (int c = 0; c < tx.cols; ++c) out.at(r, c) = tx.at(r, c) * wv;
  }
  const int id = push(std::move(out));
  nodes_[id].back = [x, w](Tape& t, int self) {
    const auto& g = t.nodes_[self].grad;
    const Tensor& tx2 = t.nodes_[x.id].val;
    const Tensor& tw2 = t.nodes_[w.id].val;
    double* gx = t.gbuf(x.id);
    double* gw = t.gbuf(w.id);
    for (int r = 0; r < tx2.rows; ++r) {
      const double wv = tw2.at(r, 0);
      double s = 0.0;
      for (int c = 0; c < tx2.cols; ++c) {
        const size_t i = static_cast<size_t>(r) * tx2.cols + c;
        gx[i] += g[i] * wv;
        s += g[i] * tx2.data[i];
      }
      gw[r] += s;
    }
  };
  return TRef{id};
}

// ---- shape ----

TRef Tape::concat_cols(TRef a, TRef b) {
  const Tensor& ta = nodes_[a.id].val;
  const Tensor& tb = nodes_[b.id].val;
  CW_SHAPE(ta.rows == tb.rows);
  const int ca = ta.cols, cb = tb.cols;
  Tensor out(ta.rows, ca + cb);
  for (int r = 0; r < ta.rows; ++r) {
    double* o = out.row(r);
    const double* pa = ta.row(r);
    const double* pb = tb.row(r);
    for (int c = 0; c < ca; ++c) o[c] = pa[c];
    for (int c = 0; c < cb; ++c) o[ca + c] = pb[c];
  }
  const int id = push(std::move(out));
  nodes_[id].back = [a, b, ca, cb](Tape& t, int self) {
    const auto& g = t.nodes_[self].grad;
    const int rows = t.nodes_[self].val.rows;
    double* ga = t.gbuf(a.id);
    double* gb = t.gbuf(b.id);
    for (int r = 0; r < rows; ++r) {
      const double* gr = g.data() + static_cast<size_t>(r) * (ca + cb);
      for (int c = 0; c < ca; ++c) ga[static_cast<size_t>(r) * ca + c] += gr[c];
      for (int c = 0; c < cb; ++c) gb[static_cast<size_t>(r) * cb + c] += gr[ca + c];
    }
  };
  return TRef{id};
}

TRef Tape::slice_cols(TRef x, int c0, int c1) {
  const Tensor& tx = nodes_[x.id].val;
  CW_SHAPE(0 <= c0 && c0 < c1 && c1 <= tx.cols);
  const int cols = tx.cols;
  Tensor out(tx.rows, c1 - c0);
  for (int r = 0; r < tx.rows; ++r)
    for (int c = c0; c < c1; ++c) out.at(r, c - c0) = tx.at(r, c);
  const int id = push(std::move(out));
  nodes_[id].back = [x, c0, c1, cols](Tape& t, int self) {
    const auto& g = t.nodes_[self].grad;
    const int rows = t.nodes_[self].val.rows;
    const int w = c1 - c0;
    double* gx = t.gbuf(x.id);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < w; ++c)
        gx[static_cast<size_t>(r) * cols + c0 + c] += g[static_cast<size_t>(r) * w + c];
  };
  return TRef{id};
}

TRef Tape::stack_rows(const std::vector<TRef>& xs) {
  CW_SHAPE(!xs.empty());
  const int cols = nodes_[xs[0].id].val.cols;
  int rows = 0;
  for (TRef x : xs) {
    CW_SHAPE(nodes_[x.id].val.cols == cols);
    rows += nodes_[x.id].val.rows;
  }
  Tensor out(rows, cols);
  int r0 = 0;
  std::vector<std::pair<int, int>> spans;  // (node id, row offset)
  spans.reserve(xs.size());
  for (TRef x : xs) {
    const Tensor& tx = nodes_[x.id].val;
    std::copy(tx.data.begin(), tx.data.end(),
              out.data.begin() + static_cast<size_t>(r0) * cols);
    spans.emplace_back(x.id, r0);
    r0 += tx.rows;
  }
  const int id = push(std::move(out));
  nodes_[id].back = [spans, cols](Tape& t, int self) {
    const auto& g = t.nodes_[self].grad;
    for (auto [src, off] : spans) {
      const size_t n = t.nodes_[src].val.size();
      axpy(t.gbuf(src), g.data() + static_cast<size_t>(off) * cols, n);
    }
  };
  return TRef{id};
}

TRef Tape::slice_rows(TRef x, int r0, int r1) {
  const Tensor& tx = nodes_[x.id].val;
  CW_SHAPE(0 <= r0 && r0 < r1 && r1 <= tx.rows);
  const int cols = tx.cols;
  Tensor out(r1 - r0, cols);
  std::copy(tx.data.begin() + static_cast<size_t>(r0) * cols,
            tx.data.begin() + static_cast<size_t>(r1) * cols, out.data.begin());
  const int id = push(std::move(out));
  nodes_[id].back = [x, r0, cols](Tape& t, int self) {
    const auto& g = t.nodes_[self].grad;
    axpy(t.gbuf(x.id) + static_cast<size_t>(r0) * cols, g.data(), g.size());
  };
  return TRef{id};
}

TRef Tape::repeat_rows(TRef x, int times) {
  const Tensor& tx = nodes_[x.id].val;
  CW_SHAPE(times >= 1);
  Tensor out(tx.rows * times, tx.cols);
  for (int rep = 0; rep < times; ++rep)
    std::copy(tx.data.begin(), tx.data.end(),
              out.data.begin() + static_cast<size_t>(rep) * tx.size());
  const int id = push(std::move(out));
  nodes_[id].back = [x, times](Tape& t, int self) {
    const auto& g = t.nodes_[self].grad;
    const size_t n = t.nodes_[x.id].val.size();
    double* gx = t.gbuf(x.id);
    for (int rep = 0; rep < times; ++rep)
      for (size_t i = 0; i < n; ++i) gx[i] += g[rep * n + i];
  };
  return TRef{id};
}

// ---- nonlinearities ----

TRef Tape::tanh_(TRef x) {
  const Tensor& tx = nodes_[x.id].val;
  Tensor out(tx.rows, tx.cols);
  kern::map_elems(tx.data.data(), out.data.data(), out.size(),
                  [](double v) { return std::tanh(v); });
  const int id = push(std::move(out));
  nodes_[id].back = [x](Tape& t, int self) {
    const auto& g = t.nodes_[self].grad;
    const auto& y = t.nodes_[self].val.data;
    double* gx = t.gbuf(x.id);
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (1.0 - y[i] * y[i]);
  };
  return TRef{id};
}

TRef Tape::sigmoid_(TRef x) {
  const Tensor& tx = nodes_[x.id].val;
  Tensor out(tx.rows, tx.cols);
  kern::map_elems(tx.data.data(), out.data.data(), out.size(), [](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
  const int id = push(std::move(out));
  nodes_[id].back = [x](Tape& t, int self) {
    const auto& g = t.nodes_[self].grad;
    const auto& y = t.nodes_[self].val.data;
    double* gx = t.gbuf(x.id);
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
  };
  return TRef{id};
}

TRef Tape::elu_(TRef x) {
  const Tensor& tx = nodes_[x.id].val;
  Tensor out(tx.rows, tx.cols);
  kern::map_elems(tx.data.data(), out.data.data(), out.size(),
                  [](double v) { return v > 0.0 ? v : std::expm1(v); });
  const int id = push(std::move(out));
  nodes_[id].back = [x](Tape& t, int self) {
    const auto& g = t.nodes_[self].grad;
    const auto& vx = t.nodes_[x.id].val.data;
    const auto& y = t.nodes_[self].val.data;
    double* gx = t.gbuf(x.id);
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (vx[i] > 0.0 ? 1.0 : y[i] + 1.0);
  };
  return TRef{id};
}

TRef Tape::softplus_(TRef x) {
  const Tensor& tx = nodes_[x.id].val;
  Tensor out(tx.rows, tx.cols);
  kern::map_elems(tx.data.data(), out.data.data(), out.size(), [](double v) {
    return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v)));
  });
  const int id = push(std::move(out));
  nodes_[id].back = [x](Tape& t, int self) {
    const auto& g = t.nodes_[self].grad;
    const auto& vx = t.nodes_[x.id].val.data;
    double* gx = t.gbuf(x.id);
    for (size_t i = 0; i < g.size(); ++i) {
      const double v = vx[i];
      const double s = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      gx[i] += g[i] * s;
    }
  };
  return TRef{id};
}

TRef Tape::log_(TRef x) {
  const Tensor& tx = nodes_[x.id].val;
  Tensor out(tx.rows, tx.cols);
  kern::map_elems(tx.data.data(), out.data.data(), out.size(),
                  [](double v) { return std::log(v); });
  const int id = push(std::move(out));
  nodes_[id].back = [x](Tape& t, int self) {
    const auto& g = t.nodes_[self].grad;
    const auto& vx = t.nodes_[x.id].val.data;
    double* gx = t.gbuf(x.id);
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / vx[i];
  };
  return TRef{id};
}

TRef Tape::exp_(TRef x) {
  const Tensor& tx = nodes_[x.id].val;
  Tensor out(tx.rows, tx.cols);
  kern::map_elems(tx.data.data(), out.data.data(), out.size(),
                  [](double v) { return std::exp(v); });
  const int id = push(std::move(out));
  nodes_[id].back = [x](Tape& t, int self) {
    const auto& g = t.nodes_[self].grad;
    const auto& y = t.nodes_[self].val.data;
    double* gx = t.gbuf(x.id);
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i];
  };
  return TRef{id};
}

TRef Tape::square_(TRef x) {
  const Tensor& tx = nodes_[x.id].val;
  Tensor out(tx.rows, tx.cols);
  kern::map_elems(tx.data.data(), out.data.data(), out.size(),
                  [](double v) { return v * v; });
  const int id = push(std::move(out));
  nodes_[id].back = [x](Tape& t, int self) {
    const auto& g = t.nodes_[self].grad;
    const auto& vx = t.nodes_[x.id].val.data;
    double* gx = t.gbuf(x.id);
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * 2.0 * vx[i];
  };
  return TRef{id};
}

// ---- distributions ----

TRef Tape::softmax_g(TRef x, int group) {
  const Tensor& tx = nodes_[x.id].val;
  CW_SHAPE(group >= 2 && tx.cols % group == 0);
  Tensor out(tx.rows, tx.cols);
  kern::softmax_groups(tx.data.data(), out.data.data(), tx.rows, tx.cols, group);
  const int id = push(std::move(out));
  nodes_[id].back = [x, group](Tape& t, int self) {
    const auto& g = t.nodes_[self].grad;
    const Tensor& y = t.nodes_[self].val;
    double* gx = t.gbuf(x.id);
    for (int r = 0; r < y.rows; ++r) {
      for (int g0 = 0; g0 < y.cols; g0 += group) {
        const size_t base = static_cast<size_t>(r) * y.cols + g0;
        double dot = 0.0;
        for (int j = 0; j < group; ++j) dot += g[base + j] * y.data[base + j];
        for (int j = 0; j < group; ++j)
          gx[base + j] += y.data[base + j] * (g[base + j] - dot);
      }
    }
  };
  return TRef{id};
}

TRef Tape::log_softmax_g(TRef x, int group) {
  const Tensor& tx = nodes_[x.id].val;
  CW_SHAPE(group >= 2 && tx.cols % group == 0);
  Tensor out(tx.rows, tx.cols);
  kern::log_softmax_groups(tx.data.data(), out.data.data(), tx.rows, tx.cols, group);
  const int id = push(std::move(out));
  nodes_[id].back = [x, group](Tape& t, int self) {
    const auto& g = t.nodes_[self].grad;
    const Tensor& y = t.nodes_[self].val;
    double* gx = t.gbuf(x.id);
    for (int r = 0; r < y.rows; ++r) {
      for (int g0 = 0; g0 < y.cols; g0 += group) {
        const size_t base = static_cast<size_t>(r) * y.cols + g0;
        double gsum = 0.0;
        for (int j = 0; j < group; ++j) gsum += g[base + j];
        for (int j = 0; j < group; ++j)
          gx[base + j] += g[base + j] - std::exp(y.data[base + j]) * gsum;
      }
    }
  };
  return TRef{id};
}

TRef Tape::onehot_sample_st(TRef probs, int group, Rng& rng) {
  const Tensor& tp = nodes_[probs.id].val;
  CW_SHAPE(tp.cols % group == 0);
  Tensor out(tp.rows, tp.cols);
  for (int r = 0; r < tp.rows; ++r) {
    for (int g0 = 0; g0 < tp.cols; g0 += group) {
      const double u = rng.uniform();
      double acc = 0.0;
      int pick = group - 1;
      for (int j = 0; j < group; ++j) {
        acc += tp.at(r, g0 + j);
        if (u < acc) {
          pick = j;
          break;
        }
      }
      out.at(r, g0 + pick) = 1.0;
    }
  }
  const int id = push(std::move(out));
  nodes_[id].back = [probs](Tape& t, int self) {
    const auto& g = t.nodes_[self].grad;
    axpy(t.gbuf(probs.id), g.data(), g.size());
  };
  return TRef{id};
}

TRef Tape::onehot_mode(TRef probs, int group) {
  const Tensor& tp = nodes_[probs.id].val;
  CW_SHAPE(tp.cols % group == 0);
  Tensor out(tp.rows, tp.cols);
  for (int r = 0; r < tp.rows; ++r) {
    for (int g0 = 0; g0 < tp.cols; g0 += group) {
      int best = 0;
      for (int j = 1; j < group; ++j)
        if (tp.at(r, g0 + j) > tp.at(r, g0 + best)) best = j;
      out.at(r, g0 + best) = 1.0;
    }
  }
  return TRef{push(std::move(out))};
}

// ---- selection ----

TRef Tape::maximum(TRef a, TRef b) {
  const Tensor& ta = nodes_[a.id].val;
  const Tensor& tb = nodes_[b.id].val;
  CW_SHAPE(ta.same_shape(tb));
  Tensor out(ta.rows, ta.cols);
  kern::zip_elems(ta.data.data(), tb.data.data(), out.data.data(), out.size(),
                  [](double x, double y) { return x >= y ? x : y; });
  const int id = push(std::move(out));
  nodes_[id].back = [a, b](Tape& t, int self) {
    const auto& g = t.nodes_[self].grad;
    const auto& va = t.nodes_[a.id].val.data;
    const auto& vb = t.nodes_[b.id].val.data;
    double* ga = t.gbuf(a.id);
    double* gb = t.gbuf(b.id);
    for (size_t i = 0; i < g.size(); ++i) {
      if (va[i] >= vb[i])
        ga[i] += g[i];
      else
        gb[i] += g[i];
    }
  };
  return TRef{id};
}

TRef Tape::clamp_min(TRef x, double c) {
  const Tensor& tx = nodes_[x.id].val;
  Tensor out(tx.rows, tx.cols);
  kern::map_elems(tx.data.data(), out.data.data(), out.size(),
                  [c](double v) { return v > c ? v : c; });
  const int id = push(std::move(out));
  nodes_[id].back = [x, c](Tape& t, int self) {
    const auto& g = t.nodes_[self].grad;
    const auto& vx = t.nodes_[x.id].val.data;
    double* gx = t.gbuf(x.id);
    for (size_t i = 0; i < g.size(); ++i)
      if (vx[i] > c) gx[i] += g[i];
  };
  return TRef{id};
}

TRef Tape::stop_grad(TRef x) { return constant(nodes_[x.id].val); }

TRef Tape::where_rows(const std::vector<uint8_t>& take_a, TRef a, TRef b) {
  const Tensor& ta = nodes_[a.id].val;
  const Tensor& tb = nodes_[b.id].val;
  CW_SHAPE(ta.same_shape(tb) && static_cast<int>(take_a.size()) == ta.rows);
  Tensor out(ta.rows, ta.cols);
  for (int r = 0; r < ta.rows; ++r) {
    const double* src = take_a[r] ? ta.row(r) : tb.row(r);
    std::copy(src, src + ta.cols, out.row(r));
  }
  const int id = push(std::move(out));
  auto mask = take_a;
  nodes_[id].back = [a, b, mask](Tape& t, int self) {
    const auto& g = t.nodes_[self].grad;
    const int cols = t.nodes_[self].val.cols;
    double* ga = t.gbuf(a.id);
    double* gb = t.gbuf(b.id);
    for (size_t r = 0; r < mask.size(); ++r) {
      double* dst = (mask[r] ? ga : gb) + r * cols;
      const double* src = g.data() + r * cols;
      for (int c = 0; c < cols; ++c) dst[c] += src[c];
    }
  };
  return TRef{id};
}

// ---- reductions ----

TRef Tape::row_sum(TRef x) {
  const Tensor& tx = nodes_[x.id].val;
  const int cols = tx.cols;
  Tensor out(tx.rows, 1);
  for (int r = 0; r < tx.rows; ++r) {
    double s = 0.0;
    const double* p = tx.row(r);
    for (int c = 0; c < cols; ++c) s += p[c];
    out.at(r, 0) = s;
  }
  const int id = push(std::move(out));
  nodes_[id].back = [x, cols](Tape& t, int self) {
    const auto& g = t.nodes_[self].grad;
    double* gx = t.gbuf(x.id);
    for (size_t r = 0; r < g.size(); ++r)
      for (int c = 0; c < cols; ++c) gx[r * cols + c] += g[r];
  };
  return TRef{id};
}

TRef Tape::sum_all(TRef x) {
  const Tensor& tx = nodes_[x.id].val;
  Tensor out(1, 1);
  out.data[0] = kern::reduce_sum(tx.data.data(), tx.size());
  const int id = push(std::move(out));
  nodes_[id].back = [x](Tape& t, int self) {
    const double g = t.nodes_[self].grad[0];
    double* gx = t.gbuf(x.id);
    const size_t n = t.nodes_[x.id].val.size();
    for (size_t i = 0; i < n; ++i) gx[i] += g;
  };
  return TRef{id};
}

TRef Tape::mean_all(TRef x) {
  const Tensor& tx = nodes_[x.id].val;
  const double inv = 1.0 / static_cast<double>(tx.size());
  Tensor out(1, 1);
  out.data[0] = kern::reduce_sum(tx.data.data(), tx.size()) * inv;
  const int id = push(std::move(out));
  nodes_[id].back = [x, inv](Tape& t, int self) {
    const double g = t.nodes_[self].grad[0] * inv;
    double* gx = t.gbuf(x.id);
    const size_t n = t.nodes_[x.id].val.size();
    for (size_t i = 0; i < n; ++i) gx[i] += g;
  };
  return TRef{id};
}

// ---- backward ----

void Tape::backward(TRef loss) {
  CW_SHAPE(loss.valid() && nodes_[loss.id].val.rows == 1 && nodes_[loss.id].val.cols == 1);
  for (Node& n : nodes_) {
    if (n.grad_live) {
      std::fill(n.grad.begin(), n.grad.end(), 0.0);
      n.grad_live = false;
    }
  }
  gbuf(loss.id)[0] = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.grad_live) continue;
    if (n.back) n.back(*this, id);
    if (n.leaf) axpy(n.leaf->grad.data.data(), n.grad.data(), n.grad.size());
  }
}

}  // namespace coworld
