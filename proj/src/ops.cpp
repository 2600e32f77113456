#include "mmkp/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "mmkp/errors.hpp"

namespace mmkp::ops {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

Tape& tape_of(Var a) {
  if (!a.valid()) throw ContractError("operation on an unbound Var");
  return *a.tape();
}

void same_tape(Var a, Var b) {
  if (a.tape() != b.tape()) throw ContractError("operands recorded on different tapes");
}

ConstMapMat cmap(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMapMat(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MapMat mmap(Tensor& t, std::size_t rows, std::size_t cols) {
  return MapMat(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using ColVec = Eigen::Matrix<double, Eigen::Dynamic, 1>;

Eigen::Map<RowVec> rmap(Tensor& t, std::size_t n) { return {t.data(), static_cast<Eigen::Index>(n)}; }
Eigen::Map<const RowVec> crmap(const Tensor& t, std::size_t n) { return {t.data(), static_cast<Eigen::Index>(n)}; }
Eigen::Map<ColVec> cvmap(Tensor& t, std::size_t n) { return {t.data(), static_cast<Eigen::Index>(n)}; }
Eigen::Map<const ColVec> ccvmap(const Tensor& t, std::size_t n) { return {t.data(), static_cast<Eigen::Index>(n)}; }

template <typename F, typename G>
Var unary(Var a, F forward, G derivative) {
  Tape& tape = tape_of(a);
  Tensor out = a.value();
  for (auto& v : out.values()) v = forward(v);
  return tape.record(std::move(out), {a.id()}, [ia = a.id(), derivative](Tape& t, std::uint32_t self) {
    Tensor* ga = t.grad_sink(ia);
    if (!ga) return;
    const Tensor& g = t.grad(self);
    const Tensor& x = t.value(ia);
    const Tensor& y = t.value(self);
    for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i] * derivative(x[i], y[i]);
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() > 2 || bv.rank() > 2) throw DimensionError("matmul supports rank 1 and 2 operands");
  const std::size_t m = av.rank() == 2 ? av.shape()[0] : 1;
  const std::size_t k = av.shape().back();
  const std::size_t kb = bv.shape()[0];
  const std::size_t n = bv.rank() == 2 ? bv.shape()[1] : 1;
  if (k != kb) {
    throw DimensionError("matmul inner extents disagree: " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
  }
  Shape out_shape;
  if (av.rank() == 2) out_shape.push_back(m);
  if (bv.rank() == 2) out_shape.push_back(n);
  if (out_shape.empty()) out_shape.push_back(1);
  Tensor out(out_shape);
  // Vector shapes go through matrix-vector and outer-product kernels; the
  // general product is much slower for them.
  if (m == 1) {
    rmap(out, n).noalias() = crmap(av, k) * cmap(bv, k, n);
  } else if (n == 1) {
    cvmap(out, m).noalias() = cmap(av, m, k) * ccvmap(bv, k);
  } else {
    mmap(out, m, n).noalias() = cmap(av, m, k) * cmap(bv, k, n);
  }
  return tape_of(a).record(std::move(out), {a.id(), b.id()},
                           [ia = a.id(), ib = b.id(), m, k, n](Tape& t, std::uint32_t self) {
                             const Tensor& g = t.grad(self);
                             const Tensor& av = t.value(ia);
                             const Tensor& bv = t.value(ib);
                             if (Tensor* ga = t.grad_sink(ia)) {
                               if (m == 1) {
                                 rmap(*ga, k).noalias() += crmap(g, n) * cmap(bv, k, n).transpose();
                               } else if (n == 1) {
                                 mmap(*ga, m, k).noalias() += ccvmap(g, m) * crmap(bv, k);
                               } else {
                                 mmap(*ga, m, k).noalias() += cmap(g, m, n) * cmap(bv, k, n).transpose();
                               }
                             }
                             if (Tensor* gb = t.grad_sink(ib)) {
                               if (m == 1) {
                                 mmap(*gb, k, n).noalias() += ccvmap(av, k) * crmap(g, n);
                               } else if (n == 1) {
                                 cvmap(*gb, k).noalias() += cmap(av, m, k).transpose() * ccvmap(g, m);
                               } else {
                                 mmap(*gb, k, n).noalias() += cmap(av, m, k).transpose() * cmap(g, m, n);
                               }
                             }
                           });
}

Var add(Var a, Var b) {
  same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  enum class Mode { kSame, kRow, kScalarB, kScalarA } mode;
  if (av.shape() == bv.shape()) {
    mode = Mode::kSame;
  } else if (bv.numel() == 1) {
    mode = Mode::kScalarB;
  } else if (av.numel() == 1) {
    mode = Mode::kScalarA;
  } else if (av.rank() == 2 && bv.rank() == 1 && bv.shape()[0] == av.shape()[1]) {
    mode = Mode::kRow;
  } else {
    throw DimensionError("add: incompatible shapes " + shape_str(av.shape()) + " and " + shape_str(bv.shape()));
  }
  Tensor out = mode == Mode::kScalarA ? bv : av;
  switch (mode) {
    case Mode::kSame:
      for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
      break;
    case Mode::kScalarB:
      for (auto& v : out.values()) v += bv[0];
      break;
    case Mode::kScalarA:
      for (auto& v : out.values()) v += av[0];
      break;
    case Mode::kRow: {
      const std::size_t n = bv.numel();
      for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i % n];
      break;
    }
  }
  return tape_of(a).record(std::move(out), {a.id(), b.id()}, [ia = a.id(), ib = b.id(), mode](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    Tensor* ga = t.grad_sink(ia);
    Tensor* gb = t.grad_sink(ib);
    switch (mode) {
      case Mode::kSame:
        if (ga) for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i];
        if (gb) for (std::size_t i = 0; i < g.numel(); ++i) (*gb)[i] += g[i];
        break;
      case Mode::kScalarB:
        if (ga) for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i];
        if (gb) for (std::size_t i = 0; i < g.numel(); ++i) (*gb)[0] += g[i];
        break;
      case Mode::kScalarA:
        if (gb) for (std::size_t i = 0; i < g.numel(); ++i) (*gb)[i] += g[i];
        if (ga) for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[0] += g[i];
        break;
      case Mode::kRow: {
        if (ga) for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i];
        if (gb) {
          const std::size_t n = gb->numel();
          for (std::size_t i = 0; i < g.numel(); ++i) (*gb)[i % n] += g[i];
        }
        break;
      }
    }
  });
}

Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

Var mul(Var a, Var b) {
  same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() != bv.shape() && av.numel() != 1 && bv.numel() != 1) {
    throw DimensionError("mul: incompatible shapes " + shape_str(av.shape()) + " and " + shape_str(bv.shape()));
  }
  const bool scalar_a = av.numel() == 1 && bv.numel() != 1;
  const bool scalar_b = bv.numel() == 1 && av.numel() != 1;
  Tensor out = scalar_a ? bv : av;
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out[i] = av[scalar_a ? 0 : i] * bv[scalar_b ? 0 : i];
  }
  return tape_of(a).record(std::move(out), {a.id(), b.id()},
                           [ia = a.id(), ib = b.id(), scalar_a, scalar_b](Tape& t, std::uint32_t self) {
                             const Tensor& g = t.grad(self);
                             const Tensor& av = t.value(ia);
                             const Tensor& bv = t.value(ib);
                             Tensor* ga = t.grad_sink(ia);
                             Tensor* gb = t.grad_sink(ib);
                             for (std::size_t i = 0; i < g.numel(); ++i) {
                               const std::size_t ai = scalar_a ? 0 : i;
                               const std::size_t bi = scalar_b ? 0 : i;
                               if (ga) (*ga)[ai] += g[i] * bv[bi];
                               if (gb) (*gb)[bi] += g[i] * av[ai];
                             }
                           });
}

Var scale(Var a, double c) {
  return unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Var add_scalar(Var a, double c) {
  return unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var one_minus(Var a) {
  return unary(a, [](double x) { return 1.0 - x; }, [](double, double) { return -1.0; });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var relu(Var a) {
  return unary(a, [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var log(Var a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var reciprocal(Var a) {
  return unary(a, [](double x) { return 1.0 / x; }, [](double, double y) { return -y * y; });
}

Var softmax(Var x, int axis) {
  const Tensor& xv = x.value();
  const int rank = static_cast<int>(xv.rank());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw DimensionError("softmax: axis out of range for " + shape_str(xv.shape()));
  const std::size_t n = xv.shape()[axis];
  if (n == 0) throw DimensionError("softmax over an empty axis");
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= xv.shape()[i];
  for (int i = axis + 1; i < rank; ++i) inner *= xv.shape()[i];

  Tensor out(xv.shape());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, xv[base + j * inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double e = std::exp(xv[base + j * inner] - mx);
        out[base + j * inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= z;
    }
  }
  return tape_of(x).record(std::move(out), {x.id()}, [ix = x.id(), outer, inner, n](Tape& t, std::uint32_t self) {
    Tensor* gx = t.grad_sink(ix);
    if (!gx) return;
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += g[base + j * inner] * y[base + j * inner];
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t idx = base + j * inner;
          (*gx)[idx] += y[idx] * (g[idx] - dot);
        }
      }
    }
  });
}

Var concat(std::initializer_list<Var> parts) { return concat(std::span<const Var>(parts.begin(), parts.size())); }

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Tensor& first = parts[0].value();
  Shape lead(first.shape().begin(), first.shape().end() - 1);
  std::size_t outer = shape_numel(lead);
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  std::vector<std::uint32_t> ids;
  for (const Var& p : parts) {
    same_tape(parts[0], p);
    const Shape& s = p.value().shape();
    if (s.size() != first.rank() || !std::equal(lead.begin(), lead.end(), s.begin())) {
      throw DimensionError("concat: non-last extents differ between " + shape_str(first.shape()) + " and " +
                           shape_str(s));
    }
    widths.push_back(s.back());
    total += s.back();
    ids.push_back(p.id());
  }
  Shape out_shape = lead;
  out_shape.push_back(total);
  Tensor out(out_shape);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& v = parts[p].value();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(v.data() + o * widths[p], widths[p], out.data() + o * total + offset);
    }
    offset += widths[p];
  }
  return tape_of(parts[0]).record(std::move(out), ids, [ids, widths, outer, total](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    std::size_t offset = 0;
    for (std::size_t p = 0; p < ids.size(); ++p) {
      if (Tensor* gp = t.grad_sink(ids[p])) {
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t j = 0; j < widths[p]; ++j) (*gp)[o * widths[p] + j] += g[o * total + offset + j];
        }
      }
      offset += widths[p];
    }
  });
}

Var stack_rows(std::span<const Var> rows) {
  if (rows.empty()) throw DimensionError("stack_rows of zero vectors");
  const std::size_t n = rows[0].value().numel();
  std::vector<std::uint32_t> ids;
  Tensor out({rows.size(), n});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    same_tape(rows[0], rows[r]);
    const Tensor& v = rows[r].value();
    if (v.rank() != 1 || v.numel() != n) {
      throw DimensionError("stack_rows: expected [" + std::to_string(n) + "], got " + shape_str(v.shape()));
    }
    std::copy_n(v.data(), n, out.data() + r * n);
    ids.push_back(rows[r].id());
  }
  return tape_of(rows[0]).record(std::move(out), ids, [ids, n](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    for (std::size_t r = 0; r < ids.size(); ++r) {
      if (Tensor* gr = t.grad_sink(ids[r])) {
        for (std::size_t j = 0; j < n; ++j) (*gr)[j] += g[r * n + j];
      }
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  same_tape(x, gain);
  same_tape(x, bias);
  const Tensor& xv = x.value();
  const std::size_t n = xv.numel();
  if (xv.rank() != 1 || n < 2) throw DimensionError("layer_norm needs a vector of length >= 2, got " + shape_str(xv.shape()));
  if (gain.value().shape() != xv.shape() || bias.value().shape() != xv.shape()) {
    throw DimensionError("layer_norm: gain/bias shape must match " + shape_str(xv.shape()));
  }
  double mean = 0.0;
  for (double v : xv.values()) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : xv.values()) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  const double inv_std = 1.0 / std::sqrt(var + eps);
  Tensor normed(xv.shape());
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < n; ++i) {
    normed[i] = (xv[i] - mean) * inv_std;
    out[i] = normed[i] * gain.value()[i] + bias.value()[i];
  }
  return tape_of(x).record(
      std::move(out), {x.id(), gain.id(), bias.id()},
      [ix = x.id(), ig = gain.id(), ib = bias.id(), normed = std::move(normed), inv_std, n](Tape& t, std::uint32_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& gv = t.value(ig);
        if (Tensor* gb = t.grad_sink(ib)) {
          for (std::size_t i = 0; i < n; ++i) (*gb)[i] += g[i];
        }
        if (Tensor* gg = t.grad_sink(ig)) {
          for (std::size_t i = 0; i < n; ++i) (*gg)[i] += g[i] * normed[i];
        }
        if (Tensor* gx = t.grad_sink(ix)) {
          // dx = inv_std * (dn - mean(dn) - normed * mean(dn * normed))
          double mean_dn = 0.0, mean_dn_n = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            const double dn = g[i] * gv[i];
            mean_dn += dn;
            mean_dn_n += dn * normed[i];
          }
          mean_dn /= static_cast<double>(n);
          mean_dn_n /= static_cast<double>(n);
          for (std::size_t i = 0; i < n; ++i) {
            const double dn = g[i] * gv[i];
            (*gx)[i] += inv_std * (dn - mean_dn - normed[i] * mean_dn_n);
          }
        }
      });
}

Var pool(Var x, PoolMode mode) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2) throw DimensionError("pool expects [L x d], got " + shape_str(xv.shape()));
  const std::size_t rows = xv.shape()[0];
  const std::size_t d = xv.shape()[1];
  if (rows == 0) throw EmptyBankError("pool over an empty memory bank");
  Tensor out({d});
  std::vector<std::size_t> argmax;
  if (mode == PoolMode::kMax) {
    argmax.assign(d, 0);
    for (std::size_t c = 0; c < d; ++c) {
      double best = xv.at(0, c);
      for (std::size_t r = 1; r < rows; ++r) {
        if (xv.at(r, c) > best) {
          best = xv.at(r, c);
          argmax[c] = r;
        }
      }
      out[c] = best;
    }
  } else {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < d; ++c) out[c] += xv.at(r, c);
    }
    for (auto& v : out.values()) v /= static_cast<double>(rows);
  }
  return tape_of(x).record(std::move(out), {x.id()}, [ix = x.id(), argmax = std::move(argmax), rows, d, mode](Tape& t, std::uint32_t self) {
    Tensor* gx = t.grad_sink(ix);
    if (!gx) return;
    const Tensor& g = t.grad(self);
    if (mode == PoolMode::kMax) {
      for (std::size_t c = 0; c < d; ++c) (*gx)[argmax[c] * d + c] += g[c];
    } else {
      const double w = 1.0 / static_cast<double>(rows);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < d; ++c) (*gx)[r * d + c] += g[c] * w;
      }
    }
  });
}

Var transpose(Var a) {
  const Tensor& av = a.value();
  if (av.rank() != 2) throw DimensionError("transpose expects rank 2, got " + shape_str(av.shape()));
  const std::size_t m = av.shape()[0], n = av.shape()[1];
  Tensor out({n, m});
  mmap(out, n, m) = cmap(av, m, n).transpose();
  return tape_of(a).record(std::move(out), {a.id()}, [ia = a.id(), m, n](Tape& t, std::uint32_t self) {
    if (Tensor* ga = t.grad_sink(ia)) mmap(*ga, m, n) += cmap(t.grad(self), n, m).transpose();
  });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value();
  out.reshape(std::move(shape));
  return tape_of(a).record(std::move(out), {a.id()}, [ia = a.id()](Tape& t, std::uint32_t self) {
    Tensor* ga = t.grad_sink(ia);
    if (!ga) return;
    const Tensor& g = t.grad(self);
    for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i];
  });
}

Var row(Var a, std::size_t r) {
  const Tensor& av = a.value();
  if (av.rank() != 2 || r >= av.shape()[0]) {
    throw DimensionError("row " + std::to_string(r) + " out of range for " + shape_str(av.shape()));
  }
  const std::size_t n = av.shape()[1];
  std::vector<double> vals(av.data() + r * n, av.data() + (r + 1) * n);
  return tape_of(a).record(Tensor({n}, std::move(vals)), {a.id()}, [ia = a.id(), r, n](Tape& t, std::uint32_t self) {
    Tensor* ga = t.grad_sink(ia);
    if (!ga) return;
    const Tensor& g = t.grad(self);
    for (std::size_t j = 0; j < n; ++j) (*ga)[r * n + j] += g[j];
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  const Tensor& av = a.value();
  const std::size_t width = av.shape().back();
  if (count == 0 || begin + count > width) {
    throw DimensionError("slice_cols [" + std::to_string(begin) + ", +" + std::to_string(count) + ") out of range for " +
                         shape_str(av.shape()));
  }
  const std::size_t outer = av.numel() / width;
  Shape out_shape = av.shape();
  out_shape.back() = count;
  Tensor out(out_shape);
  for (std::size_t o = 0; o < outer; ++o) std::copy_n(av.data() + o * width + begin, count, out.data() + o * count);
  return tape_of(a).record(std::move(out), {a.id()}, [ia = a.id(), begin, count, width, outer](Tape& t, std::uint32_t self) {
    Tensor* ga = t.grad_sink(ia);
    if (!ga) return;
    const Tensor& g = t.grad(self);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t j = 0; j < count; ++j) (*ga)[o * width + begin + j] += g[o * count + j];
    }
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return tape_of(a).record(Tensor::scalar(s), {a.id()}, [ia = a.id()](Tape& t, std::uint32_t self) {
    Tensor* ga = t.grad_sink(ia);
    if (!ga) return;
    const double g = t.grad(self)[0];
    for (auto& v : ga->values()) v += g;
  });
}

Var pick(Var a, std::size_t i) {
  if (i >= a.value().numel()) {
    throw DimensionError("pick index " + std::to_string(i) + " out of range for " + shape_str(a.value().shape()));
  }
  return tape_of(a).record(Tensor::scalar(a.value()[i]), {a.id()}, [ia = a.id(), i](Tape& t, std::uint32_t self) {
    if (Tensor* ga = t.grad_sink(ia)) (*ga)[i] += t.grad(self)[0];
  });
}

Var scatter_add(Var x, std::span<const std::size_t> index, std::size_t size) {
  const Tensor& xv = x.value();
  if (index.size() != xv.numel()) {
    throw DimensionError("scatter_add: " + std::to_string(index.size()) + " indices for " + shape_str(xv.shape()));
  }
  Tensor out({size});
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= size) throw DimensionError("scatter_add: index " + std::to_string(index[i]) + " >= " + std::to_string(size));
    out[index[i]] += xv[i];
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return tape_of(x).record(std::move(out), {x.id()}, [ix = x.id(), idx = std::move(idx)](Tape& t, std::uint32_t self) {
    Tensor* gx = t.grad_sink(ix);
    if (!gx) return;
    const Tensor& g = t.grad(self);
    for (std::size_t i = 0; i < idx.size(); ++i) (*gx)[i] += g[idx[i]];
  });
}

Var gather_rows(Var table, std::span<const std::size_t> ids) {
  const Tensor& tv = table.value();
  if (tv.rank() != 2) throw DimensionError("gather_rows expects a matrix, got " + shape_str(tv.shape()));
  if (ids.empty()) throw DimensionError("gather_rows with no ids");
  const std::size_t n = tv.shape()[1];
  Tensor out({ids.size(), n});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= tv.shape()[0]) {
      throw DimensionError("gather_rows: id " + std::to_string(ids[r]) + " out of range for " + shape_str(tv.shape()));
    }
    std::copy_n(tv.data() + ids[r] * n, n, out.data() + r * n);
  }
  std::vector<std::size_t> rows(ids.begin(), ids.end());
  return tape_of(table).record(std::move(out), {table.id()}, [it = table.id(), rows = std::move(rows), n](Tape& t, std::uint32_t self) {
    Tensor* gt = t.grad_sink(it);
    if (!gt) return;
    const Tensor& g = t.grad(self);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (std::size_t j = 0; j < n; ++j) (*gt)[rows[r] * n + j] += g[r * n + j];
    }
  });
}

}  // namespace mmkp::ops
