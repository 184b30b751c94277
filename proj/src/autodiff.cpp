#include "mvp/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "mvp/error.hpp"

namespace mvp {

namespace {

#ifdef MVP_FAULT_INJECTION
std::string& fault_op() {
  static std::string op;
  return op;
}
#endif

std::string dims(const Tensor& t) {
  return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": operand shapes " + dims(a) +
                         " and " + dims(b) + " differ");
  }
}

Tape& tape_of(Var a, Var b) {
  if (&a.tape() != &b.tape()) {
    throw ContractError("operands recorded on different tapes");
  }
  return a.tape();
}

}  // namespace

#ifdef MVP_FAULT_INJECTION
void set_backward_fault(std::string_view op) { fault_op() = op; }
#endif

Real backward_fault_factor(std::string_view op) {
#ifdef MVP_FAULT_INJECTION
  if (!fault_op().empty() && fault_op() == op) return Real(1.25);
#else
  (void)op;
#endif
  return 1;
}

const Tensor& Var::value() const { return tape_->value(id_); }

Var Tape::record(Tensor value, Backprop backprop) {
  nodes_.push_back(Node{std::move(value), Tensor(), false, std::move(backprop)});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) { return record(std::move(value), nullptr); }

Var Tape::param(const Param& p) {
  if (auto it = leaves_.find(&p); it != leaves_.end()) {
    return Var(this, it->second);
  }
  Var v = record(p.value, nullptr);
  leaves_.emplace(&p, v.id());
  return v;
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor::zeros(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) {
    throw ContractError("backward: loss belongs to another tape");
  }
  if (loss.value().size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_string(loss.value().shape()));
  }
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  grad_buffer(loss.id()).fill(1);
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    if (nodes_[id].has_grad && nodes_[id].backprop) {
      nodes_[id].backprop(*this, id);
    }
  }
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  return n.has_grad ? n.grad : Tensor::zeros(n.value.shape());
}

Tensor Tape::grad(const Param& p) const {
  auto it = leaves_.find(&p);
  if (it == leaves_.end()) return Tensor::zeros(p.value.shape());
  return grad(Var(const_cast<Tape*>(this), it->second));
}

void backward(Var loss, std::span<Param* const> params) {
  Tape& tape = loss.tape();
  tape.backward(loss);
  for (Param* p : params) {
    p->grad.add_in_place(tape.grad(*p));
  }
}

void zero_grads(std::span<Param* const> params) {
  for (Param* p : params) p->zero_grad();
}

// ---------------------------------------------------------------------------

Var matmul(Var a, Var b) {
  Tape& tape = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: inner dimensions of " + dims(av) + " and " +
                         dims(bv) + " disagree");
  }
  const std::size_t m = av.rows(), k = av.cols(), p = bv.cols();
  Tensor out = Tensor::zeros({m, p});
  {
    const Real* A = av.data().data();
    const Real* B = bv.data().data();
    Real* O = out.data().data();
    for (std::size_t i = 0; i < m; ++i) {
      Real* orow = O + i * p;
      for (std::size_t kk = 0; kk < k; ++kk) {
        const Real aik = A[i * k + kk];
        const Real* brow = B + kk * p;
        for (std::size_t j = 0; j < p; ++j) orow[j] += aik * brow[j];
      }
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), [ia, ib, m, k, p](Tape& t, std::size_t self) {
    const Real f = backward_fault_factor("matmul");
    const Real* G = t.out_grad(self).data().data();
    const Real* A = t.value(ia).data().data();
    const Real* B = t.value(ib).data().data();
    {
      Real* GA = t.grad_buffer(ia).data().data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t kk = 0; kk < k; ++kk) {
          Real acc = 0;
          for (std::size_t j = 0; j < p; ++j) acc += G[i * p + j] * B[kk * p + j];
          GA[i * k + kk] += f * acc;
        }
      }
    }
    Real* GB = t.grad_buffer(ib).data().data();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t kk = 0; kk < k; ++kk) {
        const Real aik = f * A[i * k + kk];
        for (std::size_t j = 0; j < p; ++j) GB[kk * p + j] += aik * G[i * p + j];
      }
    }
  });
}

Var transpose(Var x) {
  const Tensor& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  Tensor out = Tensor::zeros({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out(j, i) = xv(i, j);
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), [ix, r, c](Tape& t, std::size_t self) {
    const Tensor& g = t.out_grad(self);
    Tensor& gx = t.grad_buffer(ix);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx(i, j) += g(j, i);
  });
}

Var add(Var a, Var b) {
  Tape& tape = tape_of(a, b);
  require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  out.add_in_place(b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.out_grad(self);
    t.grad_buffer(ia).add_in_place(g);
    t.grad_buffer(ib).add_in_place(g);
  });
}

Var sub(Var a, Var b) {
  Tape& tape = tape_of(a, b);
  require_same_shape("sub", a.value(), b.value());
  Tensor out = a.value();
  out.add_in_place(b.value(), -1);
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.out_grad(self);
    t.grad_buffer(ia).add_in_place(g);
    t.grad_buffer(ib).add_in_place(g, -1);
  });
}

Var mul(Var a, Var b) {
  Tape& tape = tape_of(a, b);
  require_same_shape("mul", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.out_grad(self);
    const Tensor& av = t.value(ia);
    const Tensor& bv = t.value(ib);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    Tensor& gb = t.grad_buffer(ib);
    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
  });
}

Var scale(Var x, Real factor) {
  Tensor out = x.value();
  for (Real& v : out.data()) v *= factor;
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), [ix, factor](Tape& t, std::size_t self) {
    t.grad_buffer(ix).add_in_place(t.out_grad(self), factor);
  });
}

Var add_row(Var x, Var row) {
  Tape& tape = tape_of(x, row);
  const Tensor& xv = x.value();
  const Tensor& rv = row.value();
  if (rv.size() != xv.cols()) {
    throw DimensionError("add_row: row of " + std::to_string(rv.size()) +
                         " elements cannot broadcast over " + dims(xv));
  }
  Tensor out = xv;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += rv[j];
  const std::size_t ix = x.id(), ir = row.id();
  return tape.record(std::move(out), [ix, ir](Tape& t, std::size_t self) {
    const Tensor& g = t.out_grad(self);
    t.grad_buffer(ix).add_in_place(g);
    Tensor& gr = t.grad_buffer(ir);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) gr[j] += g(i, j);
  });
}

Var mul_scalar(Var x, Var s) {
  Tape& tape = tape_of(x, s);
  if (s.value().size() != 1) {
    throw DimensionError("mul_scalar: expected 1x1 factor, got " +
                         dims(s.value()));
  }
  const Real factor = s.value()[0];
  Tensor out = x.value();
  for (Real& v : out.data()) v *= factor;
  const std::size_t ix = x.id(), is = s.id();
  return tape.record(std::move(out), [ix, is](Tape& t, std::size_t self) {
    const Tensor& g = t.out_grad(self);
    const Tensor& xv = t.value(ix);
    const Real factor = t.value(is)[0];
    t.grad_buffer(ix).add_in_place(g, factor);
    Real acc = 0;
    for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xv[i];
    t.grad_buffer(is)[0] += acc;
  });
}

Var softmax_rows(Var x) {
  const Tensor& xv = x.value();
  Tensor out = xv;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto row = out.row(i);
    const Real mx = *std::max_element(row.begin(), row.end());
    Real total = 0;
    for (Real& v : row) {
      v = std::exp(v - mx);
      total += v;
    }
    for (Real& v : row) v /= total;
  }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), [ix](Tape& t, std::size_t self) {
    const Real f = backward_fault_factor("softmax_rows");
    const Tensor& g = t.out_grad(self);
    const Tensor& y = t.value(self);
    Tensor& gx = t.grad_buffer(ix);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      Real dot = 0;
      for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < y.cols(); ++j)
        gx(i, j) += f * y(i, j) * (g(i, j) - dot);
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, Real eps) {
  Tape& tape = tape_of(x, gain);
  tape_of(x, bias);
  const Tensor& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  if (gain.value().size() != c || bias.value().size() != c) {
    throw DimensionError("layer_norm: gain/bias of " +
                         std::to_string(gain.value().size()) + "/" +
                         std::to_string(bias.value().size()) +
                         " elements for rows of width " + std::to_string(c));
  }
  Tensor normalized = Tensor::zeros({r, c});
  std::vector<Real> inv_std(r);
  Tensor out = Tensor::zeros({r, c});
  for (std::size_t i = 0; i < r; ++i) {
    Real mean = 0;
    for (std::size_t j = 0; j < c; ++j) mean += xv(i, j);
    mean /= static_cast<Real>(c);
    Real var = 0;
    for (std::size_t j = 0; j < c; ++j) {
      const Real d = xv(i, j) - mean;
      var += d * d;
    }
    var /= static_cast<Real>(c);
    inv_std[i] = 1 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      normalized(i, j) = (xv(i, j) - mean) * inv_std[i];
      out(i, j) = normalized(i, j) * gain.value()[j] + bias.value()[j];
    }
  }
  const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
  return tape.record(
      std::move(out),
      [ix, ig, ib, r, c, normalized = std::move(normalized),
       inv_std = std::move(inv_std)](Tape& t, std::size_t self) {
        const Real f = backward_fault_factor("layer_norm");
        const Tensor& g = t.out_grad(self);
        const Tensor& gain = t.value(ig);
        {
          Tensor& gg = t.grad_buffer(ig);
          Tensor& gb = t.grad_buffer(ib);
          for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
              gg[j] += g(i, j) * normalized(i, j);
              gb[j] += g(i, j);
            }
          }
        }
        Tensor& gx = t.grad_buffer(ix);
        std::vector<Real> dn(c);
        for (std::size_t i = 0; i < r; ++i) {
          Real mean_dn = 0, mean_dn_n = 0;
          for (std::size_t j = 0; j < c; ++j) {
            dn[j] = g(i, j) * gain[j];
            mean_dn += dn[j];
            mean_dn_n += dn[j] * normalized(i, j);
          }
          mean_dn /= static_cast<Real>(c);
          mean_dn_n /= static_cast<Real>(c);
          for (std::size_t j = 0; j < c; ++j) {
            gx(i, j) += f * inv_std[i] *
                        (dn[j] - mean_dn - normalized(i, j) * mean_dn_n);
          }
        }
      });
}

namespace {

constexpr Real kGeluCubic = Real(0.044715);
const Real kSqrt2OverPi = std::sqrt(Real(2) / std::numbers::pi_v<Real>);

}  // namespace

Real gelu_value(Real x) {
  return Real(0.5) * x *
         (1 + std::tanh(kSqrt2OverPi * (x + kGeluCubic * x * x * x)));
}

Real gelu_derivative(Real x) {
  const Real th = std::tanh(kSqrt2OverPi * (x + kGeluCubic * x * x * x));
  return Real(0.5) * (1 + th) + Real(0.5) * x * (1 - th * th) * kSqrt2OverPi *
                                    (1 + 3 * kGeluCubic * x * x);
}

Var gelu(Var x) {
  Tensor out = x.value();
  for (Real& v : out.data()) v = gelu_value(v);
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), [ix](Tape& t, std::size_t self) {
    const Real f = backward_fault_factor("gelu");
    const Tensor& g = t.out_grad(self);
    const Tensor& xv = t.value(ix);
    Tensor& gx = t.grad_buffer(ix);
    for (std::size_t i = 0; i < g.size(); ++i)
      gx[i] += f * g[i] * gelu_derivative(xv[i]);
  });
}

Var relu(Var x) {
  Tensor out = x.value();
  for (Real& v : out.data()) v = v > 0 ? v : 0;
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), [ix](Tape& t, std::size_t self) {
    const Real f = backward_fault_factor("relu");
    const Tensor& g = t.out_grad(self);
    const Tensor& xv = t.value(ix);
    Tensor& gx = t.grad_buffer(ix);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > 0) gx[i] += f * g[i];
  });
}

Var mean_rows(Var x) {
  const Tensor& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  if (r == 0) throw ContractError("mean_rows: no rows");
  Tensor out = Tensor::zeros({1, c});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += xv(i, j);
  for (Real& v : out.data()) v /= static_cast<Real>(r);
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), [ix, r, c](Tape& t, std::size_t self) {
    const Real f = backward_fault_factor("mean_rows");
    const Tensor& g = t.out_grad(self);
    Tensor& gx = t.grad_buffer(ix);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j)
        gx(i, j) += f * g[j] / static_cast<Real>(r);
  });
}

Var concat_rows(Var a, Var b) {
  Tape& tape = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.cols()) {
    throw DimensionError("concat_rows: column counts of " + dims(av) +
                         " and " + dims(bv) + " differ");
  }
  std::vector<Real> data(av.data().begin(), av.data().end());
  data.insert(data.end(), bv.data().begin(), bv.data().end());
  const std::size_t ra = av.rows();
  Tensor out({ra + bv.rows(), av.cols()}, std::move(data));
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), [ia, ib](Tape& t, std::size_t self) {
    const auto g = t.out_grad(self).data();
    Tensor& ga = t.grad_buffer(ia);
    Tensor& gb = t.grad_buffer(ib);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[ga.size() + i];
  });
}

Var concat_cols(Var a, Var b) {
  const Var parts[] = {a, b};
  return concat_cols(parts);
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no operands");
  Tape& tape = parts.front().tape();
  const std::size_t r = parts.front().rows();
  std::size_t c = 0;
  std::vector<std::size_t> ids, offsets;
  for (const Var& p : parts) {
    tape_of(parts.front(), p);
    if (p.rows() != r) {
      throw DimensionError("concat_cols: row counts " + std::to_string(r) +
                           " and " + std::to_string(p.rows()) + " differ");
    }
    ids.push_back(p.id());
    offsets.push_back(c);
    c += p.cols();
  }
  Tensor out = Tensor::zeros({r, c});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = parts[k].value();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < pv.cols(); ++j)
        out(i, offsets[k] + j) = pv(i, j);
  }
  return tape.record(std::move(out), [ids, offsets, r](Tape& t, std::size_t self) {
    const Tensor& g = t.out_grad(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      Tensor& gp = t.grad_buffer(ids[k]);
      const std::size_t pc = gp.cols();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < pc; ++j) gp(i, j) += g(i, offsets[k] + j);
    }
  });
}

Var slice_rows(Var x, std::size_t begin, std::size_t end) {
  const Tensor& xv = x.value();
  if (begin > end || end > xv.rows()) {
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") outside " + dims(xv));
  }
  const std::size_t c = xv.cols();
  std::vector<Real> data(xv.data().begin() + begin * c,
                         xv.data().begin() + end * c);
  Tensor out({end - begin, c}, std::move(data));
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), [ix, begin, c](Tape& t, std::size_t self) {
    const Tensor& g = t.out_grad(self);
    Tensor& gx = t.grad_buffer(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[begin * c + i] += g[i];
  });
}

Var slice_cols(Var x, std::size_t begin, std::size_t end) {
  const Tensor& xv = x.value();
  if (begin > end || end > xv.cols()) {
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") outside " + dims(xv));
  }
  const std::size_t r = xv.rows(), w = end - begin;
  Tensor out = Tensor::zeros({r, w});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < w; ++j) out(i, j) = xv(i, begin + j);
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), [ix, begin, r, w](Tape& t, std::size_t self) {
    const Tensor& g = t.out_grad(self);
    Tensor& gx = t.grad_buffer(ix);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) gx(i, begin + j) += g(i, j);
  });
}

Var sum(Var x) {
  Real total = 0;
  for (Real v : x.value().data()) total += v;
  const std::size_t ix = x.id();
  return x.tape().record(Tensor::scalar(total), [ix](Tape& t, std::size_t self) {
    const Real g = t.out_grad(self)[0];
    for (Real& v : t.grad_buffer(ix).data()) v += g;
  });
}

Var element(Var x, std::size_t r, std::size_t c) {
  const Tensor& xv = x.value();
  if (r >= xv.rows() || c >= xv.cols()) {
    throw DimensionError("element: index (" + std::to_string(r) + ", " +
                         std::to_string(c) + ") outside " + dims(xv));
  }
  const std::size_t ix = x.id();
  return x.tape().record(Tensor::scalar(xv(r, c)), [ix, r, c](Tape& t, std::size_t self) {
    t.grad_buffer(ix)(r, c) += t.out_grad(self)[0];
  });
}

Var pair_pool(Var x, Var w) {
  Tape& tape = tape_of(x, w);
  const Tensor& xv = x.value();
  if (w.value().size() != 2) {
    throw DimensionError("pair_pool: weight must have 2 elements, got " +
                         dims(w.value()));
  }
  if (xv.rows() % 2 != 0 || xv.rows() == 0) {
    throw ContractError("pair_pool: row count " + std::to_string(xv.rows()) +
                        " is not a positive even number");
  }
  const std::size_t half = xv.rows() / 2, c = xv.cols();
  const Real w0 = w.value()[0], w1 = w.value()[1];
  Tensor out = Tensor::zeros({half, c});
  for (std::size_t i = 0; i < half; ++i)
    for (std::size_t j = 0; j < c; ++j)
      out(i, j) = w0 * xv(2 * i, j) + w1 * xv(2 * i + 1, j);
  const std::size_t ix = x.id(), iw = w.id();
  return tape.record(std::move(out), [ix, iw, half, c](Tape& t, std::size_t self) {
    const Real f = backward_fault_factor("pair_pool");
    const Tensor& g = t.out_grad(self);
    const Tensor& xv = t.value(ix);
    const Tensor& wv = t.value(iw);
    Tensor& gx = t.grad_buffer(ix);
    Real g0 = 0, g1 = 0;
    for (std::size_t i = 0; i < half; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        gx(2 * i, j) += f * wv[0] * g(i, j);
        gx(2 * i + 1, j) += f * wv[1] * g(i, j);
        g0 += g(i, j) * xv(2 * i, j);
        g1 += g(i, j) * xv(2 * i + 1, j);
      }
    }
    Tensor& gw = t.grad_buffer(iw);
    gw[0] += f * g0;
    gw[1] += f * g1;
  });
}

Var assemble(std::span<const Var> scalars, std::size_t rows,
             std::size_t cols) {
  if (scalars.size() != rows * cols || scalars.empty()) {
    throw DimensionError("assemble: " + std::to_string(scalars.size()) +
                         " scalars for a " + std::to_string(rows) + "x" +
                         std::to_string(cols) + " matrix");
  }
  std::vector<Real> data;
  std::vector<std::size_t> ids;
  for (const Var& s : scalars) {
    if (s.value().size() != 1) {
      throw DimensionError("assemble: operand is " + dims(s.value()) +
                           ", expected 1x1");
    }
    tape_of(scalars.front(), s);
    data.push_back(s.value()[0]);
    ids.push_back(s.id());
  }
  return scalars.front().tape().record(
      Tensor({rows, cols}, std::move(data)), [ids](Tape& t, std::size_t self) {
        const Tensor& g = t.out_grad(self);
        for (std::size_t k = 0; k < ids.size(); ++k) t.grad_buffer(ids[k])[0] += g[k];
      });
}

Var cross_entropy(Var probabilities, std::span<const int> labels) {
  constexpr Real kFloor = Real(1e-12);
  const Tensor& p = probabilities.value();
  if (labels.size() != p.rows() || labels.empty()) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) +
                         " labels for " + dims(p) + " probabilities");
  }
  std::vector<int> lab(labels.begin(), labels.end());
  Real total = 0;
  for (std::size_t i = 0; i < lab.size(); ++i) {
    if (lab[i] < 0 || static_cast<std::size_t>(lab[i]) >= p.cols()) {
      throw ContractError("cross_entropy: label " + std::to_string(lab[i]) +
                          " outside [0, " + std::to_string(p.cols()) + ")");
    }
    total -= std::log(std::max(p(i, lab[i]), kFloor));
  }
  const Real n = static_cast<Real>(lab.size());
  const std::size_t ip = probabilities.id();
  return probabilities.tape().record(
      Tensor::scalar(total / n), [ip, lab, n](Tape& t, std::size_t self) {
        const Real g = t.out_grad(self)[0];
        const Tensor& p = t.value(ip);
        Tensor& gp = t.grad_buffer(ip);
        for (std::size_t i = 0; i < lab.size(); ++i) {
          const Real pi = p(i, lab[i]);
          if (pi > kFloor) gp(i, lab[i]) -= g / (n * pi);
        }
      });
}

}  // namespace mvp
