#include "wecar/core/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "wecar/core/errors.hpp"

namespace wecar::core {

namespace {

Tape& tape_of(const char* op, Var a) {
  if (!a.valid()) throw StateError(std::string(op) + ": operand was never recorded");
  return *a.tape;
}

Tape& tape_of(const char* op, Var a, Var b) {
  Tape& t = tape_of(op, a);
  if (!b.valid() || b.tape != a.tape) {
    throw StateError(std::string(op) + ": operands belong to different tapes");
  }
  return t;
}

[[noreturn]] void shape_error(const char* op, const Tensor2& a, const Tensor2& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + a.shape_str() + " and " +
                       b.shape_str());
}

// c += a * b
void gemm_acc(const Tensor2& a, const Tensor2& b, Tensor2& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = &c(i, 0);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a(i, p);
      if (av == 0.0) continue;
      const double* brow = &b(p, 0);
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c += a^T * b  (a: k x m, b: k x n, c: m x n)
void gemm_tn_acc(const Tensor2& a, const Tensor2& b, Tensor2& c) {
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = &b(p, 0);
    for (std::size_t i = 0; i < m; ++i) {
      const double av = a(p, i);
      if (av == 0.0) continue;
      double* crow = &c(i, 0);
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c += a * b^T  (a: m x k, b: n x k, c: m x n)
void gemm_nt_acc(const Tensor2& a, const Tensor2& b, Tensor2& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = &a(i, 0);
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = &b(j, 0);
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      c(i, j) += s;
    }
  }
}

}  // namespace

Tensor2 matmul(const Tensor2& a, const Tensor2& b) {
  if (a.cols() != b.rows()) shape_error("matmul", a, b);
  Tensor2 c(a.rows(), b.cols());
  gemm_acc(a, b, c);
  return c;
}

Tensor2 transpose(const Tensor2& a) {
  Tensor2 t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

Tensor2 softmax_rows(const Tensor2& a) {
  Tensor2 out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto in = a.row(i);
    auto o = out.row(i);
    const double mx = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      o[j] = std::exp(in[j] - mx);
      z += o[j];
    }
    for (auto& v : o) v /= z;
  }
  return out;
}

double softplus(double x) {
  return x > 30.0 ? x : std::log1p(std::exp(x));
}

double softplus_inverse(double y) {
  if (y <= 0.0) throw ConfigError("softplus_inverse: argument must be positive");
  return y > 30.0 ? y : std::log(std::expm1(y));
}

Var matmul(Var a, Var b) {
  Tape& t = tape_of("matmul", a, b);
  const Tensor2& av = a.value();
  const Tensor2& bv = b.value();
  if (av.cols() != bv.rows()) shape_error("matmul", av, bv);
  return t.record(matmul(av, bv), {a.id, b.id}, [a = a.id, b = b.id](Tape& tp, std::int32_t o) {
    const Tensor2& g = tp.grad(o);
    if (tp.requires_grad(a)) gemm_nt_acc(g, tp.value(b), tp.grad_buffer(a));
    if (tp.requires_grad(b)) gemm_tn_acc(tp.value(a), g, tp.grad_buffer(b));
  });
}

Var transpose(Var a) {
  Tape& t = tape_of("transpose", a);
  return t.record(transpose(a.value()), {a.id}, [a = a.id](Tape& tp, std::int32_t o) {
    tp.accumulate(a, transpose(tp.grad(o)));
  });
}

Var softmax_rows(Var a) {
  Tape& t = tape_of("softmax_rows", a);
  if (a.value().cols() == 0) throw DimensionError("softmax_rows: zero columns");
  return t.record(softmax_rows(a.value()), {a.id}, [a = a.id](Tape& tp, std::int32_t o) {
    const Tensor2& y = tp.value(o);
    const Tensor2& g = tp.grad(o);
    Tensor2& ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < y.cols(); ++j) ga(i, j) += y(i, j) * (g(i, j) - dot);
    }
  });
}

Var tanh(Var a) {
  Tape& t = tape_of("tanh", a);
  Tensor2 y = a.value();
  for (auto& v : y.data()) v = std::tanh(v);
  return t.record(std::move(y), {a.id}, [a = a.id](Tape& tp, std::int32_t o) {
    const Tensor2& y = tp.value(o);
    const Tensor2& g = tp.grad(o);
    Tensor2& ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < y.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Var relu(Var a) {
  Tape& t = tape_of("relu", a);
  Tensor2 y = a.value();
  for (auto& v : y.data()) v = v > 0.0 ? v : 0.0;
  return t.record(std::move(y), {a.id}, [a = a.id](Tape& tp, std::int32_t o) {
    const Tensor2& x = tp.value(a);
    const Tensor2& g = tp.grad(o);
    Tensor2& ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i] > 0.0) ga[i] += g[i];
    }
  });
}

Var add(Var a, Var b) {
  Tape& t = tape_of("add", a, b);
  const Tensor2& av = a.value();
  const Tensor2& bv = b.value();
  if (!av.same_shape(bv)) shape_error("add", av, bv);
  Tensor2 y = av;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  return t.record(std::move(y), {a.id, b.id}, [a = a.id, b = b.id](Tape& tp, std::int32_t o) {
    tp.accumulate(a, tp.grad(o));
    tp.accumulate(b, tp.grad(o));
  });
}

Var add_bias(Var a, Var bias) {
  Tape& t = tape_of("add_bias", a, bias);
  const Tensor2& av = a.value();
  const Tensor2& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != av.cols()) shape_error("add_bias", av, bv);
  Tensor2 y = av;
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += bv[j];
  return t.record(std::move(y), {a.id, bias.id},
                  [a = a.id, b = bias.id](Tape& tp, std::int32_t o) {
                    const Tensor2& g = tp.grad(o);
                    tp.accumulate(a, g);
                    if (tp.requires_grad(b)) {
                      Tensor2& gb = tp.grad_buffer(b);
                      for (std::size_t i = 0; i < g.rows(); ++i)
                        for (std::size_t j = 0; j < g.cols(); ++j) gb[j] += g(i, j);
                    }
                  });
}

Var scale(Var a, double s) {
  Tape& t = tape_of("scale", a);
  Tensor2 y = a.value();
  for (auto& v : y.data()) v *= s;
  return t.record(std::move(y), {a.id}, [a = a.id, s](Tape& tp, std::int32_t o) {
    const Tensor2& g = tp.grad(o);
    Tensor2& ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no operands");
  Tape& t = tape_of("concat_rows", parts[0]);
  const std::size_t cols = parts[0].value().cols();
  std::size_t rows = 0;
  std::vector<std::int32_t> ids;
  for (const Var& p : parts) {
    tape_of("concat_rows", parts[0], p);
    if (p.value().cols() != cols) shape_error("concat_rows", parts[0].value(), p.value());
    rows += p.value().rows();
    ids.push_back(p.id);
  }
  Tensor2 y(rows, cols);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const auto& src = p.value().data();
    std::copy(src.begin(), src.end(), y.data().begin() + static_cast<std::ptrdiff_t>(off * cols));
    off += p.value().rows();
  }
  auto parents = ids;
  return t.record(std::move(y), std::move(parents), [ids](Tape& tp, std::int32_t o) {
    const Tensor2& g = tp.grad(o);
    std::size_t off = 0;
    for (auto id : ids) {
      const std::size_t r = tp.value(id).rows();
      if (tp.requires_grad(id)) {
        Tensor2& gp = tp.grad_buffer(id);
        const double* src = g.data().data() + off * g.cols();
        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += src[i];
      }
      off += r;
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no operands");
  Tape& t = tape_of("concat_cols", parts[0]);
  const std::size_t rows = parts[0].value().rows();
  std::size_t cols = 0;
  std::vector<std::int32_t> ids;
  for (const Var& p : parts) {
    tape_of("concat_cols", parts[0], p);
    if (p.value().rows() != rows) shape_error("concat_cols", parts[0].value(), p.value());
    cols += p.value().cols();
    ids.push_back(p.id);
  }
  Tensor2 y(rows, cols);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor2& v = p.value();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < v.cols(); ++j) y(i, off + j) = v(i, j);
    off += v.cols();
  }
  auto parents = ids;
  return t.record(std::move(y), std::move(parents), [ids](Tape& tp, std::int32_t o) {
    const Tensor2& g = tp.grad(o);
    std::size_t off = 0;
    for (auto id : ids) {
      const std::size_t c = tp.value(id).cols();
      if (tp.requires_grad(id)) {
        Tensor2& gp = tp.grad_buffer(id);
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < c; ++j) gp(i, j) += g(i, off + j);
      }
      off += c;
    }
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  Tape& t = tape_of("slice_rows", a);
  const Tensor2& av = a.value();
  if (count == 0 || begin + count > av.rows()) {
    throw DimensionError("slice_rows: rows [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of range for " + av.shape_str());
  }
  Tensor2 y(count, av.cols());
  std::copy(av.data().begin() + static_cast<std::ptrdiff_t>(begin * av.cols()),
            av.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * av.cols()),
            y.data().begin());
  return t.record(std::move(y), {a.id}, [a = a.id, begin](Tape& tp, std::int32_t o) {
    const Tensor2& g = tp.grad(o);
    Tensor2& ga = tp.grad_buffer(a);
    double* dst = ga.data().data() + begin * ga.cols();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  });
}

Var mean_rows(Var a) {
  Tape& t = tape_of("mean_rows", a);
  const Tensor2& av = a.value();
  if (av.rows() == 0) throw DimensionError("mean_rows: zero rows");
  Tensor2 y(1, av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < av.cols(); ++j) y[j] += av(i, j);
  const double inv = 1.0 / static_cast<double>(av.rows());
  for (auto& v : y.data()) v *= inv;
  return t.record(std::move(y), {a.id}, [a = a.id, inv](Tape& tp, std::int32_t o) {
    const Tensor2& g = tp.grad(o);
    Tensor2& ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < ga.rows(); ++i)
      for (std::size_t j = 0; j < ga.cols(); ++j) ga(i, j) += g[j] * inv;
  });
}

Var sum_all(Var a) {
  Tape& t = tape_of("sum_all", a);
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return t.record(Tensor2(1, 1, s), {a.id}, [a = a.id](Tape& tp, std::int32_t o) {
    const double g = tp.grad(o)[0];
    Tensor2& ga = tp.grad_buffer(a);
    for (auto& v : ga.data()) v += g;
  });
}

Var mse(Var a, Var b) {
  Tape& t = tape_of("mse", a, b);
  const Tensor2& av = a.value();
  const Tensor2& bv = b.value();
  if (!av.same_shape(bv) || av.empty()) shape_error("mse", av, bv);
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = av[i] - bv[i];
    s += d * d;
  }
  const double inv = 1.0 / static_cast<double>(av.size());
  return t.record(Tensor2(1, 1, s * inv), {a.id, b.id},
                  [a = a.id, b = b.id, inv](Tape& tp, std::int32_t o) {
                    const double g = tp.grad(o)[0] * 2.0 * inv;
                    const Tensor2& av = tp.value(a);
                    const Tensor2& bv = tp.value(b);
                    if (tp.requires_grad(a)) {
                      Tensor2& ga = tp.grad_buffer(a);
                      for (std::size_t i = 0; i < av.size(); ++i) ga[i] += g * (av[i] - bv[i]);
                    }
                    if (tp.requires_grad(b)) {
                      Tensor2& gb = tp.grad_buffer(b);
                      for (std::size_t i = 0; i < av.size(); ++i) gb[i] -= g * (av[i] - bv[i]);
                    }
                  });
}

Var softmax_cross_entropy(Var logits, std::span<const std::size_t> labels,
                          std::size_t class_begin) {
  Tape& t = tape_of("softmax_cross_entropy", logits);
  const Tensor2& z = logits.value();
  if (labels.size() != z.rows() || class_begin >= z.cols()) {
    throw DimensionError("softmax_cross_entropy: logits " + z.shape_str() + " with " +
                         std::to_string(labels.size()) + " labels, class_begin " +
                         std::to_string(class_begin));
  }
  const std::size_t width = z.cols() - class_begin;
  Tensor2 probs(z.rows(), width);
  double loss = 0.0;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    if (labels[i] < class_begin || labels[i] >= z.cols()) {
      throw DimensionError("softmax_cross_entropy: label " + std::to_string(labels[i]) +
                           " outside active columns of " + z.shape_str());
    }
    double mx = z(i, class_begin);
    for (std::size_t j = class_begin; j < z.cols(); ++j) mx = std::max(mx, z(i, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      probs(i, j) = std::exp(z(i, class_begin + j) - mx);
      sum += probs(i, j);
    }
    for (std::size_t j = 0; j < width; ++j) probs(i, j) /= sum;
    loss -= z(i, labels[i]) - mx - std::log(sum);
  }
  const double inv = 1.0 / static_cast<double>(z.rows());
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  return t.record(Tensor2(1, 1, loss * inv), {logits.id},
                  [l = logits.id, probs = std::move(probs), lab = std::move(lab), class_begin,
                   inv](Tape& tp, std::int32_t o) {
                    const double g = tp.grad(o)[0] * inv;
                    Tensor2& gl = tp.grad_buffer(l);
                    for (std::size_t i = 0; i < probs.rows(); ++i) {
                      for (std::size_t j = 0; j < probs.cols(); ++j)
                        gl(i, class_begin + j) += g * probs(i, j);
                      gl(i, lab[i]) -= g;
                    }
                  });
}

Var dropout(Var a, double rate, Rng& rng) {
  Tape& t = tape_of("dropout", a);
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout: rate must be in [0, 1)");
  if (rate == 0.0) return a;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::bernoulli_distribution keep(1.0 - rate);
  Tensor2 mask(a.rows(), a.cols());
  Tensor2 y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) {
    mask[i] = keep(rng) ? keep_scale : 0.0;
    y[i] *= mask[i];
  }
  return t.record(std::move(y), {a.id}, [a = a.id, mask = std::move(mask)](Tape& tp, std::int32_t o) {
    const Tensor2& g = tp.grad(o);
    Tensor2& ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mask[i];
  });
}

Var gaussian_range_logits(Var mu, Var sigma_raw, std::size_t n, double sigma_floor) {
  Tape& t = tape_of("gaussian_range_logits", mu, sigma_raw);
  const Tensor2& m = mu.value();
  const Tensor2& sr = sigma_raw.value();
  if (m.rows() != 1 || !m.same_shape(sr)) shape_error("gaussian_range_logits", m, sr);
  if (n == 0) throw DimensionError("gaussian_range_logits: n must be >= 1");
  const std::size_t g = m.cols();
  Tensor2 y(n, g);
  for (std::size_t j = 0; j < g; ++j) {
    const double s = softplus(sr[j]) + sigma_floor;
    const double log_s = std::log(s);
    for (std::size_t i = 0; i < n; ++i) {
      const double diff = static_cast<double>(i + 1) - m[j];
      y(i, j) = -diff * diff / (2.0 * s * s) - log_s;
    }
  }
  return t.record(std::move(y), {mu.id, sigma_raw.id},
                  [mi = mu.id, si = sigma_raw.id, n, sigma_floor](Tape& tp, std::int32_t o) {
                    const Tensor2& gout = tp.grad(o);
                    const Tensor2& m = tp.value(mi);
                    const Tensor2& sr = tp.value(si);
                    const bool want_mu = tp.requires_grad(mi);
                    const bool want_s = tp.requires_grad(si);
                    for (std::size_t j = 0; j < m.cols(); ++j) {
                      const double s = softplus(sr[j]) + sigma_floor;
                      const double dsoft = 1.0 / (1.0 + std::exp(-sr[j]));  // d softplus / dx
                      double dmu = 0.0, ds = 0.0;
                      for (std::size_t i = 0; i < n; ++i) {
                        const double diff = static_cast<double>(i + 1) - m[j];
                        const double go = gout(i, j);
                        dmu += go * diff / (s * s);
                        ds += go * (diff * diff / (s * s * s) - 1.0 / s);
                      }
                      if (want_mu) tp.grad_buffer(mi)[j] += dmu;
                      if (want_s) tp.grad_buffer(si)[j] += ds * dsoft;
                    }
                  });
}

}  // namespace wecar::core
