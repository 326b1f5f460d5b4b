#include "ink/autodiff.hpp"

#include <cmath>
#include <limits>

#include "ink/error.hpp"

namespace ink::ad {

Segments Segments::from_lengths(std::span<const int> lengths) {
  Segments s;
  s.offsets.reserve(lengths.size() + 1);
  for (int len : lengths) s.offsets.push_back(s.offsets.back() + len);
  return s;
}

Var Tape::push(Matrix value, bool needs_grad, std::function<void(Tape&, int)> backprop) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = record_ && needs_grad;
  if (n.needs_grad) n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

bool Tape::needs(std::initializer_list<Var> inputs) const {
  for (Var v : inputs)
    if (nodes_[v.id].needs_grad) return true;
  return false;
}

Matrix& Tape::grad_buffer(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad.setZero(n.value.rows(), n.value.cols());
  return n.grad;
}

Var Tape::leaf(Parameter& p) {
  Parameter* param = &p;
  return push(p.value, p.trainable, [param](Tape& t, int self) {
    if (param->grad.rows() != param->value.rows() || param->grad.cols() != param->value.cols()) param->zero_grad();
    param->grad += t.nodes_[self].grad;
  });
}

Var Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Var Tape::matmul(Var a, Var b) {
  const Matrix& av = value(a);
  const Matrix& bv = value(b);
  if (av.cols() != bv.rows()) throw InputError("matmul: inner dimensions differ");
  Matrix out;
  linalg::matmul(av, bv, out);
  return push(std::move(out), needs({a, b}), [a, b](Tape& t, int self) {
    const Matrix& g = t.nodes_[self].grad;
    if (t.nodes_[a.id].needs_grad) linalg::matmul_nt_acc(g, t.value(b), t.grad_buffer(a.id));
    if (t.nodes_[b.id].needs_grad) linalg::matmul_tn_acc(t.value(a), g, t.grad_buffer(b.id));
  });
}

Var Tape::matmul_nt(Var a, Var b) {
  const Matrix& av = value(a);
  const Matrix& bv = value(b);
  if (av.cols() != bv.cols()) throw InputError("matmul_nt: inner dimensions differ");
  Matrix out;
  linalg::matmul_nt(av, bv, out);
  return push(std::move(out), needs({a, b}), [a, b](Tape& t, int self) {
    const Matrix& g = t.nodes_[self].grad;
    if (t.nodes_[a.id].needs_grad) linalg::matmul_acc(g, t.value(b), t.grad_buffer(a.id));
    if (t.nodes_[b.id].needs_grad) linalg::matmul_tn_acc(g, t.value(a), t.grad_buffer(b.id));
  });
}

Var Tape::add(Var a, Var b) {
  if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
    throw InputError("add: shape mismatch");
  Matrix out = value(a) + value(b);
  return push(std::move(out), needs({a, b}), [a, b](Tape& t, int self) {
    const Matrix& g = t.nodes_[self].grad;
    if (t.nodes_[a.id].needs_grad) t.grad_buffer(a.id) += g;
    if (t.nodes_[b.id].needs_grad) t.grad_buffer(b.id) += g;
  });
}

Var Tape::add_row(Var a, Var row) {
  const Matrix& rv = value(row);
  if (rv.rows() != 1 || rv.cols() != value(a).cols()) throw InputError("add_row: bias shape mismatch");
  Matrix out = value(a);
  out.rowwise() += rv.row(0);
  return push(std::move(out), needs({a, row}), [a, row](Tape& t, int self) {
    const Matrix& g = t.nodes_[self].grad;
    if (t.nodes_[a.id].needs_grad) t.grad_buffer(a.id) += g;
    if (t.nodes_[row.id].needs_grad) {
      Matrix& gr = t.grad_buffer(row.id);
      for (Eigen::Index i = 0; i < g.rows(); ++i) gr.row(0) += g.row(i);
    }
  });
}

Var Tape::scale(Var a, double s) {
  Matrix out = value(a) * s;
  return push(std::move(out), needs({a}), [a, s](Tape& t, int self) {
    t.grad_buffer(a.id) += t.nodes_[self].grad * s;
  });
}

Var Tape::relu(Var a) {
  Matrix out = value(a).cwiseMax(0.0);
  return push(std::move(out), needs({a}), [a](Tape& t, int self) {
    const Matrix& g = t.nodes_[self].grad;
    const Matrix& x = t.value(a);
    Matrix& ga = t.grad_buffer(a.id);
    for (Eigen::Index i = 0; i < x.size(); ++i)
      if (x.data()[i] > 0.0) ga.data()[i] += g.data()[i];
  });
}

Var Tape::layer_norm(Var x, Var gain, Var bias, double eps) {
  const Matrix& xv = value(x);
  const Matrix& gv = value(gain);
  const Matrix& bv = value(bias);
  const Eigen::Index n = xv.rows(), d = xv.cols();
  if (gv.cols() != d || bv.cols() != d) throw InputError("layer_norm: parameter width mismatch");
  Matrix xhat(n, d);
  Vector rstd(n);
  Matrix out(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    double mean = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) mean += xv(i, j);
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) {
      const double c = xv(i, j) - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    rstd(i) = 1.0 / std::sqrt(var + eps);
    for (Eigen::Index j = 0; j < d; ++j) {
      xhat(i, j) = (xv(i, j) - mean) * rstd(i);
      out(i, j) = xhat(i, j) * gv(0, j) + bv(0, j);
    }
  }
  return push(std::move(out), needs({x, gain, bias}),
              [x, gain, bias, xhat = std::move(xhat), rstd = std::move(rstd)](Tape& t, int self) {
                const Matrix& g = t.nodes_[self].grad;
                const Matrix& gv = t.value(gain);
                const Eigen::Index n = g.rows(), d = g.cols();
                if (t.nodes_[gain.id].needs_grad) {
                  Matrix& gg = t.grad_buffer(gain.id);
                  for (Eigen::Index i = 0; i < n; ++i) gg.row(0) += g.row(i).cwiseProduct(xhat.row(i));
                }
                if (t.nodes_[bias.id].needs_grad) {
                  Matrix& gb = t.grad_buffer(bias.id);
                  for (Eigen::Index i = 0; i < n; ++i) gb.row(0) += g.row(i);
                }
                if (t.nodes_[x.id].needs_grad) {
                  Matrix& gx = t.grad_buffer(x.id);
                  for (Eigen::Index i = 0; i < n; ++i) {
                    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                    for (Eigen::Index j = 0; j < d; ++j) {
                      const double dxh = g(i, j) * gv(0, j);
                      mean_dxhat += dxh;
                      mean_dxhat_xhat += dxh * xhat(i, j);
                    }
                    mean_dxhat /= static_cast<double>(d);
                    mean_dxhat_xhat /= static_cast<double>(d);
                    for (Eigen::Index j = 0; j < d; ++j) {
                      const double dxh = g(i, j) * gv(0, j);
                      gx(i, j) += rstd(i) * (dxh - mean_dxhat - xhat(i, j) * mean_dxhat_xhat);
                    }
                  }
                }
              });
}

Var Tape::gather_rows(Var table, std::span<const TokenId> ids, double scale) {
  const Matrix& tv = value(table);
  Matrix out(static_cast<Eigen::Index>(ids.size()), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tv.rows()) throw InputError("gather_rows: row id out of range");
    out.row(static_cast<Eigen::Index>(i)) = tv.row(ids[i]) * scale;
  }
  std::vector<TokenId> rows(ids.begin(), ids.end());
  return push(std::move(out), needs({table}), [table, rows = std::move(rows), scale](Tape& t, int self) {
    const Matrix& g = t.nodes_[self].grad;
    Matrix& gt = t.grad_buffer(table.id);
    for (std::size_t i = 0; i < rows.size(); ++i) gt.row(rows[i]) += g.row(static_cast<Eigen::Index>(i)) * scale;
  });
}

Var Tape::attention(Var q, Var k, Var v, int heads, const Segments& q_segments, const Segments& k_segments,
                    bool causal) {
  const Matrix& qv = value(q);
  const Matrix& kv = value(k);
  const Matrix& vv = value(v);
  const Eigen::Index d = qv.cols();
  if (kv.cols() != d || vv.cols() != d || kv.rows() != vv.rows()) throw InputError("attention: shape mismatch");
  if (heads <= 0 || d % heads != 0) throw InputError("attention: head count must divide width");
  if (q_segments.count() != k_segments.count() || q_segments.total() != qv.rows() || k_segments.total() != kv.rows())
    throw InputError("attention: segment layout does not match inputs");
  const int dh = static_cast<int>(d) / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  // probs holds, per segment and head, an lq x lk block (masked cells are 0).
  std::vector<std::size_t> block_offset(static_cast<std::size_t>(q_segments.count()) + 1, 0);
  for (int s = 0; s < q_segments.count(); ++s) {
    if (causal && q_segments.length(s) != k_segments.length(s))
      throw InputError("attention: causal segments must have equal lengths");
    block_offset[s + 1] = block_offset[s] + static_cast<std::size_t>(heads) * q_segments.length(s) * k_segments.length(s);
  }
  std::vector<double> probs(block_offset.back(), 0.0);
  Matrix out = Matrix::Zero(qv.rows(), d);
  std::vector<double> scores;

  for (int s = 0; s < q_segments.count(); ++s) {
    const int q0 = q_segments.begin(s), lq = q_segments.length(s);
    const int k0 = k_segments.begin(s), lk = k_segments.length(s);
    for (int h = 0; h < heads; ++h) {
      double* p = probs.data() + block_offset[s] + static_cast<std::size_t>(h) * lq * lk;
      const int c0 = h * dh;
      for (int r = 0; r < lq; ++r) {
        const int visible = causal ? r + 1 : lk;
        scores.assign(visible, 0.0);
        const double* qrow = qv.row(q0 + r).data() + c0;
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < visible; ++j) {
          const double* krow = kv.row(k0 + j).data() + c0;
          double sdot = 0.0;
          for (int c = 0; c < dh; ++c) sdot += qrow[c] * krow[c];
          scores[j] = sdot * inv_sqrt;
          mx = std::max(mx, scores[j]);
        }
        double z = 0.0;
        for (int j = 0; j < visible; ++j) {
          scores[j] = std::exp(scores[j] - mx);
          z += scores[j];
        }
        double* orow = out.row(q0 + r).data() + c0;
        for (int j = 0; j < visible; ++j) {
          const double pj = scores[j] / z;
          p[r * lk + j] = pj;
          const double* vrow = vv.row(k0 + j).data() + c0;
          for (int c = 0; c < dh; ++c) orow[c] += pj * vrow[c];
        }
      }
    }
  }

  return push(std::move(out), needs({q, k, v}),
              [q, k, v, heads, dh, inv_sqrt, causal, qs = q_segments, ks = k_segments,
               block_offset = std::move(block_offset), probs = std::move(probs)](Tape& t, int self) {
                const Matrix& g = t.nodes_[self].grad;
                const Matrix& qv = t.value(q);
                const Matrix& kv = t.value(k);
                const Matrix& vv = t.value(v);
                const bool need_q = t.nodes_[q.id].needs_grad;
                const bool need_k = t.nodes_[k.id].needs_grad;
                const bool need_v = t.nodes_[v.id].needs_grad;
                Matrix* gq = need_q ? &t.grad_buffer(q.id) : nullptr;
                Matrix* gk = need_k ? &t.grad_buffer(k.id) : nullptr;
                Matrix* gvv = need_v ? &t.grad_buffer(v.id) : nullptr;
                std::vector<double> dp;
                for (int s = 0; s < qs.count(); ++s) {
                  const int q0 = qs.begin(s), lq = qs.length(s);
                  const int k0 = ks.begin(s), lk = ks.length(s);
                  for (int h = 0; h < heads; ++h) {
                    const double* p = probs.data() + block_offset[s] + static_cast<std::size_t>(h) * lq * lk;
                    const int c0 = h * dh;
                    for (int r = 0; r < lq; ++r) {
                      const int visible = causal ? r + 1 : lk;
                      const double* grow = g.row(q0 + r).data() + c0;
                      dp.assign(visible, 0.0);
                      double weighted = 0.0;
                      for (int j = 0; j < visible; ++j) {
                        const double* vrow = vv.row(k0 + j).data() + c0;
                        double acc = 0.0;
                        for (int c = 0; c < dh; ++c) acc += grow[c] * vrow[c];
                        dp[j] = acc;
                        weighted += acc * p[r * lk + j];
                        if (gvv) {
                          double* gvrow = gvv->row(k0 + j).data() + c0;
                          const double pj = p[r * lk + j];
                          for (int c = 0; c < dh; ++c) gvrow[c] += pj * grow[c];
                        }
                      }
                      if (!gq && !gk) continue;
                      const double* qrow = qv.row(q0 + r).data() + c0;
                      for (int j = 0; j < visible; ++j) {
                        const double ds = p[r * lk + j] * (dp[j] - weighted) * inv_sqrt;
                        const double* krow = kv.row(k0 + j).data() + c0;
                        if (gq) {
                          double* gqrow = gq->row(q0 + r).data() + c0;
                          for (int c = 0; c < dh; ++c) gqrow[c] += ds * krow[c];
                        }
                        if (gk) {
                          double* gkrow = gk->row(k0 + j).data() + c0;
                          for (int c = 0; c < dh; ++c) gkrow[c] += ds * qrow[c];
                        }
                      }
                    }
                  }
                }
              });
}

Var Tape::external_loss(Var x, double loss_value, Matrix dloss_dx) {
  if (dloss_dx.rows() != value(x).rows() || dloss_dx.cols() != value(x).cols())
    throw InputError("external_loss: gradient shape mismatch");
  Matrix out(1, 1);
  out(0, 0) = loss_value;
  return push(std::move(out), needs({x}), [x, dl = std::move(dloss_dx)](Tape& t, int self) {
    t.grad_buffer(x.id) += dl * t.nodes_[self].grad(0, 0);
  });
}

Var Tape::sum(std::span<const Var> scalars) {
  Matrix out = Matrix::Zero(1, 1);
  bool any = false;
  for (Var s : scalars) {
    if (value(s).size() != 1) throw InputError("sum: inputs must be scalars");
    out(0, 0) += value(s)(0, 0);
    any = any || nodes_[s.id].needs_grad;
  }
  std::vector<Var> inputs(scalars.begin(), scalars.end());
  return push(std::move(out), any, [inputs = std::move(inputs)](Tape& t, int self) {
    const double g = t.nodes_[self].grad(0, 0);
    for (Var s : inputs)
      if (t.nodes_[s.id].needs_grad) t.grad_buffer(s.id)(0, 0) += g;
  });
}

void Tape::backward(Var root) {
  backward(root, Matrix::Ones(value(root).rows(), value(root).cols()));
}

void Tape::backward(Var root, const Matrix& seed) {
  if (!record_) throw StateError("backward called on a non-recording tape");
  Node& r = nodes_[root.id];
  if (seed.rows() != r.value.rows() || seed.cols() != r.value.cols()) throw InputError("backward: seed shape mismatch");
  if (!r.needs_grad) return;
  grad_buffer(root.id) += seed;
  for (int id = root.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.needs_grad || n.grad.size() == 0 || !n.backprop) continue;
    n.backprop(*this, id);
  }
}

std::vector<Matrix> gradient(std::span<Parameter* const> params, const std::function<Var(Tape&)>& loss) {
  for (Parameter* p : params) p->zero_grad();
  Tape tape(true);
  const Var out = loss(tape);
  const Matrix& v = tape.value(out);
  if (v.size() != 1) throw InputError("gradient: loss must be a scalar");
  if (!std::isfinite(v(0, 0))) throw NumericError("gradient: loss is not finite");
  tape.backward(out);
  std::vector<Matrix> grads;
  grads.reserve(params.size());
  for (Parameter* p : params) grads.push_back(p->grad);
  return grads;
}

}  // namespace ink::ad
