#include "oasislab/tape.hpp"

#include <cmath>

#include "oasislab/depth_router.hpp"
#include "oasislab/kernels.hpp"

namespace oasis {

namespace {
constexpr double kRmsEps = 1e-6;
constexpr double kInvSqrt2 = 0.70710678118654752;
constexpr double kInvSqrt2Pi = 0.39894228040143268;
}  // namespace

Var Tape::push(std::vector<Var> inputs, std::vector<Tensor> outputs,
               std::function<void(Tape&, std::int32_t)> back) {
  Node n;
  n.inputs = std::move(inputs);
  n.out = std::move(outputs);
  n.grad.reserve(n.out.size());
  for (const Tensor& t : n.out) n.grad.emplace_back(t.shape());
  n.back = std::move(back);
  n.needs_grad = any_needs_grad(n.inputs);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::int32_t>(nodes_.size()) - 1, 0};
}

bool Tape::any_needs_grad(const std::vector<Var>& vars) const {
  for (const Var& v : vars) {
    if (v.valid() && nodes_[static_cast<std::size_t>(v.node)].needs_grad)
      return true;
  }
  return false;
}

Var Tape::leaf(Tensor value, bool needs_grad) {
  Var v = push({}, {std::move(value)}, nullptr);
  nodes_.back().needs_grad = needs_grad;
  return v;
}

const Tensor& Tape::val(Var v) const {
  require(v.valid(), ErrorKind::Parameter, "tape: invalid var");
  return nodes_[static_cast<std::size_t>(v.node)]
      .out[static_cast<std::size_t>(v.slot)];
}

const Tensor& Tape::grad(Var v) const {
  require(v.valid(), ErrorKind::Parameter, "tape: invalid var");
  return nodes_[static_cast<std::size_t>(v.node)]
      .grad[static_cast<std::size_t>(v.slot)];
}

Tensor& Tape::gref(Var v) {
  return nodes_[static_cast<std::size_t>(v.node)]
      .grad[static_cast<std::size_t>(v.slot)];
}

void Tape::backward(Var root) {
  require(!ran_backward_, ErrorKind::Parameter, "tape: backward already ran");
  ran_backward_ = true;
  require(val(root).numel() == 1, ErrorKind::Parameter,
          "tape: backward root must be scalar");
  gref(root)[0] = 1.0;
  for (std::int32_t i = static_cast<std::int32_t>(nodes_.size()) - 1; i >= 0;
       --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.back && n.needs_grad) n.back(*this, i);
  }
  // pullbacks may scatter into untracked inputs; restore the contract that
  // grad() is zero for nodes without needs_grad
  for (Node& n : nodes_) {
    if (n.needs_grad) continue;
    for (Tensor& g : n.grad)
      for (double& x : g.flat()) x = 0.0;
  }
}

Var Tape::matmul(Var a, Var b) {
  Tensor c = oasis::matmul(val(a), val(b));
  return push({a, b}, {std::move(c)}, [a, b](Tape& t, std::int32_t self) {
    const Tensor& dc = t.nodes_[static_cast<std::size_t>(self)].grad[0];
    add_in_place(t.gref(a), matmul_nt(dc, t.val(b)));
    add_in_place(t.gref(b), matmul_tn(t.val(a), dc));
  });
}

Var Tape::add(Var a, Var b) {
  return push({a, b}, {oasis::add(val(a), val(b))},
              [a, b](Tape& t, std::int32_t self) {
                const Tensor& d = t.nodes_[static_cast<std::size_t>(self)].grad[0];
                add_in_place(t.gref(a), d);
                add_in_place(t.gref(b), d);
              });
}

Var Tape::sub(Var a, Var b) {
  return push({a, b}, {oasis::sub(val(a), val(b))},
              [a, b](Tape& t, std::int32_t self) {
                const Tensor& d = t.nodes_[static_cast<std::size_t>(self)].grad[0];
                add_in_place(t.gref(a), d);
                Tensor& gb = t.gref(b);
                for (std::int64_t i = 0; i < d.numel(); ++i) gb[i] -= d[i];
              });
}

Var Tape::hadamard(Var a, Var b) {
  return push({a, b}, {oasis::hadamard(val(a), val(b))},
              [a, b](Tape& t, std::int32_t self) {
                const Tensor& d = t.nodes_[static_cast<std::size_t>(self)].grad[0];
                add_in_place(t.gref(a), oasis::hadamard(d, t.val(b)));
                add_in_place(t.gref(b), oasis::hadamard(d, t.val(a)));
              });
}

Var Tape::scale(Var a, double c) {
  return push({a}, {oasis::scale(val(a), c)},
              [a, c](Tape& t, std::int32_t self) {
                const Tensor& d = t.nodes_[static_cast<std::size_t>(self)].grad[0];
                add_in_place(t.gref(a), oasis::scale(d, c));
              });
}

Var Tape::scalar_mul(Var s, Var a) {
  require(val(s).numel() == 1, ErrorKind::Dimension,
          "scalar_mul: s must be [1]");
  return push({s, a}, {oasis::scale(val(a), val(s)[0])},
              [s, a](Tape& t, std::int32_t self) {
                const Tensor& d = t.nodes_[static_cast<std::size_t>(self)].grad[0];
                const Tensor& av = t.val(a);
                double acc = 0.0;
                for (std::int64_t i = 0; i < d.numel(); ++i) acc += d[i] * av[i];
                t.gref(s)[0] += acc;
                add_in_place(t.gref(a), oasis::scale(d, t.val(s)[0]));
              });
}

Var Tape::add_row_broadcast(Var a, Var bias) {
  const Tensor& av = val(a);
  const Tensor& bv = val(bias);
  require(av.rank() == 2 && bv.rank() == 1 && bv.extent(0) == av.extent(1),
          ErrorKind::Dimension, "add_row_broadcast: shape mismatch");
  Tensor out = av;
  for (std::int64_t t = 0; t < av.extent(0); ++t)
    for (std::int64_t c = 0; c < av.extent(1); ++c) out.at(t, c) += bv[c];
  return push({a, bias}, {std::move(out)},
              [a, bias](Tape& t, std::int32_t self) {
                const Tensor& d = t.nodes_[static_cast<std::size_t>(self)].grad[0];
                add_in_place(t.gref(a), d);
                // reduce into a local tensor first: shared leaves must see one
                // += per consuming node or batch gradients drift by ulps
                Tensor gb({d.extent(1)});
                for (std::int64_t r = 0; r < d.extent(0); ++r)
                  for (std::int64_t c = 0; c < d.extent(1); ++c)
                    gb[c] += d.at(r, c);
                add_in_place(t.gref(bias), gb);
              });
}

Var Tape::rmsnorm(Var x, Var gain) {
  const Tensor& xv = val(x);
  const Tensor& gv = val(gain);
  require(xv.rank() == 2 && gv.rank() == 1 && gv.extent(0) == xv.extent(1),
          ErrorKind::Dimension, "rmsnorm: shape mismatch");
  const std::int64_t T = xv.extent(0), d = xv.extent(1);
  Tensor out({T, d});
  for (std::int64_t t = 0; t < T; ++t) {
    double s = 0.0;
    for (std::int64_t c = 0; c < d; ++c) s += xv.at(t, c) * xv.at(t, c);
    const double r = std::sqrt(s / static_cast<double>(d) + kRmsEps);
    for (std::int64_t c = 0; c < d; ++c)
      out.at(t, c) = gv[c] * xv.at(t, c) / r;
  }
  return push({x, gain}, {std::move(out)},
              [x, gain](Tape& t, std::int32_t self) {
    const Tensor& dy = t.nodes_[static_cast<std::size_t>(self)].grad[0];
    const Tensor& xv = t.val(x);
    const Tensor& gv = t.val(gain);
    Tensor& gx = t.gref(x);
    const std::int64_t T = xv.extent(0), d = xv.extent(1);
    Tensor gg({d});  // local: one += per node on the shared gain leaf
    for (std::int64_t r = 0; r < T; ++r) {
      double s = 0.0;
      for (std::int64_t c = 0; c < d; ++c) s += xv.at(r, c) * xv.at(r, c);
      const double rms = std::sqrt(s / static_cast<double>(d) + kRmsEps);
      double inner = 0.0;  // sum_k dy_k g_k x_k
      for (std::int64_t c = 0; c < d; ++c)
        inner += dy.at(r, c) * gv[c] * xv.at(r, c);
      const double r3 = rms * rms * rms * static_cast<double>(d);
      for (std::int64_t c = 0; c < d; ++c) {
        gx.at(r, c) += dy.at(r, c) * gv[c] / rms - xv.at(r, c) * inner / r3;
        gg[c] += dy.at(r, c) * xv.at(r, c) / rms;
      }
    }
    add_in_place(t.gref(gain), gg);
  });
}

Var Tape::gelu(Var a) {
  const Tensor& av = val(a);
  Tensor out = av;
  for (auto& v : out.flat()) v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  return push({a}, {std::move(out)}, [a](Tape& t, std::int32_t self) {
    const Tensor& d = t.nodes_[static_cast<std::size_t>(self)].grad[0];
    const Tensor& av = t.val(a);
    Tensor& ga = t.gref(a);
    for (std::int64_t i = 0; i < av.numel(); ++i) {
      const double x = av[i];
      const double phi = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
      const double dens = kInvSqrt2Pi * std::exp(-0.5 * x * x);
      ga[i] += d[i] * (phi + x * dens);
    }
  });
}

Var Tape::softplus_scalar(Var a) {
  require(val(a).numel() == 1, ErrorKind::Dimension,
          "softplus_scalar: input must be [1]");
  return push({a}, {Tensor::scalar(softplus(val(a)[0]))},
              [a](Tape& t, std::int32_t self) {
                const Tensor& d = t.nodes_[static_cast<std::size_t>(self)].grad[0];
                t.gref(a)[0] += d[0] * sigmoid(t.val(a)[0]);
              });
}

Var Tape::embed_rows(Var table, std::span<const std::int64_t> ids) {
  const Tensor& tv = val(table);
  require(tv.rank() == 2, ErrorKind::Dimension, "embed_rows: table rank");
  const std::int64_t V = tv.extent(0), d = tv.extent(1);
  std::vector<std::int64_t> idv(ids.begin(), ids.end());
  for (std::int64_t id : idv)
    require(id >= 0 && id < V, ErrorKind::Input,
            "embed_rows: token id out of range");
  Tensor out({static_cast<std::int64_t>(idv.size()), d});
  for (std::size_t t = 0; t < idv.size(); ++t)
    for (std::int64_t c = 0; c < d; ++c)
      out.at(static_cast<std::int64_t>(t), c) = tv.at(idv[t], c);
  return push({table}, {std::move(out)},
              [table, idv](Tape& t, std::int32_t self) {
                const Tensor& dout = t.nodes_[static_cast<std::size_t>(self)].grad[0];
                Tensor gt(t.val(table).shape());  // local, added once
                for (std::size_t r = 0; r < idv.size(); ++r)
                  for (std::int64_t c = 0; c < dout.extent(1); ++c)
                    gt.at(idv[r], c) += dout.at(static_cast<std::int64_t>(r), c);
                add_in_place(t.gref(table), gt);
              });
}

Var Tape::mean_axis0(Var a) {
  const Tensor& av = val(a);
  require(av.rank() == 2, ErrorKind::Dimension, "mean_axis0: rank");
  const std::int64_t H = av.extent(0), T = av.extent(1);
  Tensor out({T});
  for (std::int64_t t = 0; t < T; ++t) {
    double acc = 0.0;
    for (std::int64_t h = 0; h < H; ++h) acc += av.at(h, t);
    out[t] = acc / static_cast<double>(H);
  }
  return push({a}, {std::move(out)}, [a](Tape& t, std::int32_t self) {
    const Tensor& d = t.nodes_[static_cast<std::size_t>(self)].grad[0];
    const Tensor& av = t.val(a);
    Tensor& ga = t.gref(a);
    const std::int64_t H = av.extent(0), T = av.extent(1);
    for (std::int64_t h = 0; h < H; ++h)
      for (std::int64_t c = 0; c < T; ++c)
        ga.at(h, c) += d[c] / static_cast<double>(H);
  });
}

Var Tape::stack_rows(const std::vector<Var>& rows) {
  require(!rows.empty(), ErrorKind::Parameter, "stack_rows: no rows");
  const std::int64_t T = val(rows.front()).extent(0);
  for (const Var& r : rows)
    require(val(r).rank() == 1 && val(r).extent(0) == T, ErrorKind::Dimension,
            "stack_rows: row shapes differ");
  Tensor out({static_cast<std::int64_t>(rows.size()), T});
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::int64_t t = 0; t < T; ++t)
      out.at(static_cast<std::int64_t>(i), t) = val(rows[i])[t];
  std::vector<Var> inputs = rows;
  return push(std::move(inputs), {std::move(out)},
              [rows](Tape& t, std::int32_t self) {
                const Tensor& d = t.nodes_[static_cast<std::size_t>(self)].grad[0];
                for (std::size_t i = 0; i < rows.size(); ++i) {
                  Tensor& gr = t.gref(rows[i]);
                  for (std::int64_t c = 0; c < d.extent(1); ++c)
                    gr[c] += d.at(static_cast<std::int64_t>(i), c);
                }
              });
}

Var Tape::center_rows(Var psi) {
  return push({psi}, {center(val(psi))}, [psi](Tape& t, std::int32_t self) {
    const Tensor& d = t.nodes_[static_cast<std::size_t>(self)].grad[0];
    add_in_place(t.gref(psi), center(d));
  });
}

Var Tape::broadcast_cols(Var g, std::int64_t t_len) {
  const Tensor& gv = val(g);
  require(gv.rank() == 1, ErrorKind::Dimension, "broadcast_cols: rank");
  require(t_len > 0, ErrorKind::Parameter, "broadcast_cols: t_len");
  const std::int64_t l = gv.extent(0);
  Tensor out({l, t_len});
  for (std::int64_t i = 0; i < l; ++i)
    for (std::int64_t t = 0; t < t_len; ++t) out.at(i, t) = gv[i];
  return push({g}, {std::move(out)}, [g](Tape& t, std::int32_t self) {
    const Tensor& d = t.nodes_[static_cast<std::size_t>(self)].grad[0];
    Tensor& gg = t.gref(g);
    for (std::int64_t i = 0; i < d.extent(0); ++i) {
      double acc = 0.0;
      for (std::int64_t c = 0; c < d.extent(1); ++c) acc += d.at(i, c);
      gg[i] += acc;
    }
  });
}

Tape::AttendOut Tape::attend_op(const AttentionConfig& cfg, Var x, Var wq,
                                Var wk, Var wv, Var wo, Var wg, Var bg) {
  AttentionParams p;
  p.wq = val(wq);
  p.wk = val(wk);
  p.wv = val(wv);
  p.wo = val(wo);
  if (cfg.gated) {
    require(wg.valid() && bg.valid(), ErrorKind::Config,
            "attend_op: gated config needs gate vars");
    p.wg = val(wg);
    p.bg = val(bg);
  }
  AttentionOutput fwd = attend(cfg, val(x), p);

  std::vector<Var> inputs = {x, wq, wk, wv, wo};
  if (cfg.gated) {
    inputs.push_back(wg);
    inputs.push_back(bg);
  }
  const bool gated = cfg.gated;
  Var ctx = push(
      std::move(inputs),
      {std::move(fwd.context), std::move(fwd.null_mass), std::move(fwd.weights)},
      [cfg, gated, x, wq, wk, wv, wo, wg, bg](Tape& t, std::int32_t self) {
        Node& n = t.nodes_[static_cast<std::size_t>(self)];
        const Tensor& dctx = n.grad[0];
        const Tensor& dnull = n.grad[1];
        const Tensor& dweights = n.grad[2];
        const Tensor& weights = n.out[2];
        const Tensor& nullm = n.out[1];

        const Tensor& xv = t.val(x);
        const std::int64_t T = xv.extent(0), d = cfg.d_model;
        const std::int64_t H = cfg.n_heads, hd = cfg.head_dim();
        const double sc = cfg.effective_scale();

        const Tensor q = oasis::matmul(xv, t.val(wq));
        const Tensor k = oasis::matmul(xv, t.val(wk));
        const Tensor v = oasis::matmul(xv, t.val(wv));

        // head context before gating, rebuilt from the stored weights
        Tensor ctxh({T, d});
        for (std::int64_t h = 0; h < H; ++h)
          for (std::int64_t r = 0; r < T; ++r)
            for (std::int64_t c = 0; c < hd; ++c) {
              double acc = 0.0;
              for (std::int64_t j = 0; j <= r; ++j)
                acc += weights.at(h, r, j) * v.at(j, h * hd + c);
              ctxh.at(r, h * hd + c) = acc;
            }

        Tensor gate, pre = ctxh;
        if (gated) {
          Tensor gz = oasis::matmul(xv, t.val(wg));
          const Tensor& bgv = t.val(bg);
          gate = Tensor({T, d});
          for (std::int64_t r = 0; r < T; ++r)
            for (std::int64_t c = 0; c < d; ++c)
              gate.at(r, c) = sigmoid(gz.at(r, c) + bgv[c]);
          pre = oasis::hadamard(ctxh, gate);
        }

        Tensor dpre = matmul_nt(dctx, t.val(wo));
        add_in_place(t.gref(wo), matmul_tn(pre, dctx));

        Tensor dctxh;
        if (gated) {
          dctxh = oasis::hadamard(dpre, gate);
          Tensor dgz({T, d});
          for (std::int64_t r = 0; r < T; ++r)
            for (std::int64_t c = 0; c < d; ++c) {
              const double g = gate.at(r, c);
              dgz.at(r, c) = dpre.at(r, c) * ctxh.at(r, c) * g * (1.0 - g);
            }
          add_in_place(t.gref(wg), matmul_tn(xv, dgz));
          Tensor gbg({d});  // local, added once
          for (std::int64_t r = 0; r < T; ++r)
            for (std::int64_t c = 0; c < d; ++c) gbg[c] += dgz.at(r, c);
          add_in_place(t.gref(bg), gbg);
          add_in_place(t.gref(x), matmul_nt(dgz, t.val(wg)));
        } else {
          dctxh = std::move(dpre);
        }

        Tensor dq({T, d}), dk({T, d}), dv({T, d});
        std::vector<double> z, dp, dz;
        for (std::int64_t h = 0; h < H; ++h) {
          for (std::int64_t r = 0; r < T; ++r) {
            const std::size_t m = static_cast<std::size_t>(r) + 1;
            z.assign(m, 0.0);
            dp.assign(m, 0.0);
            dz.assign(m, 0.0);
            NormalizedWeights w;
            w.probs.assign(m, 0.0);
            w.null_mass = nullm.at(h, r);
            for (std::int64_t j = 0; j <= r; ++j) {
              double acc = 0.0;
              for (std::int64_t c = 0; c < hd; ++c)
                acc += q.at(r, h * hd + c) * k.at(j, h * hd + c);
              z[static_cast<std::size_t>(j)] = sc * acc;
              w.probs[static_cast<std::size_t>(j)] = weights.at(h, r, j);
              double dpj = dweights.at(h, r, j);
              for (std::int64_t c = 0; c < hd; ++c)
                dpj += dctxh.at(r, h * hd + c) * v.at(j, h * hd + c);
              dp[static_cast<std::size_t>(j)] = dpj;
            }
            normalize_vjp(cfg.normalizer, z, {}, w, dp, dnull.at(h, r), dz);
            for (std::int64_t j = 0; j <= r; ++j) {
              const double dzj = dz[static_cast<std::size_t>(j)];
              for (std::int64_t c = 0; c < hd; ++c) {
                dq.at(r, h * hd + c) += sc * dzj * k.at(j, h * hd + c);
                dk.at(j, h * hd + c) += sc * dzj * q.at(r, h * hd + c);
                dv.at(j, h * hd + c) +=
                    weights.at(h, r, j) * dctxh.at(r, h * hd + c);
              }
            }
          }
        }

        add_in_place(t.gref(x), matmul_nt(dq, t.val(wq)));
        add_in_place(t.gref(x), matmul_nt(dk, t.val(wk)));
        add_in_place(t.gref(x), matmul_nt(dv, t.val(wv)));
        add_in_place(t.gref(wq), matmul_tn(xv, dq));
        add_in_place(t.gref(wk), matmul_tn(xv, dk));
        add_in_place(t.gref(wv), matmul_tn(xv, dv));
      });
  return AttendOut{ctx, Var{ctx.node, 1}, Var{ctx.node, 2}};
}

Tape::NormColsOut Tape::normalize_cols(const NormalizerSpec& spec, Var z) {
  const Tensor& zv = val(z);
  require(zv.rank() == 2, ErrorKind::Dimension, "normalize_cols: rank");
  const std::int64_t l = zv.extent(0), T = zv.extent(1);
  Tensor probs({l, T});
  Tensor nullm({T});
  std::vector<double> col(static_cast<std::size_t>(l));
  for (std::int64_t t = 0; t < T; ++t) {
    for (std::int64_t i = 0; i < l; ++i)
      col[static_cast<std::size_t>(i)] = zv.at(i, t);
    const NormalizedWeights w = normalize(spec, col);
    for (std::int64_t i = 0; i < l; ++i)
      probs.at(i, t) = w.probs[static_cast<std::size_t>(i)];
    nullm[t] = w.null_mass;
  }
  Var p = push({z}, {std::move(probs), std::move(nullm)},
               [spec, z](Tape& t, std::int32_t self) {
                 Node& n = t.nodes_[static_cast<std::size_t>(self)];
                 const Tensor& dprobs = n.grad[0];
                 const Tensor& dnull = n.grad[1];
                 const Tensor& probs = n.out[0];
                 const Tensor& nullm = n.out[1];
                 const Tensor& zv = t.val(z);
                 Tensor& gz = t.gref(z);
                 const std::int64_t l = zv.extent(0), T = zv.extent(1);
                 std::vector<double> col(static_cast<std::size_t>(l));
                 std::vector<double> dp(static_cast<std::size_t>(l));
                 std::vector<double> dz(static_cast<std::size_t>(l));
                 NormalizedWeights w;
                 for (std::int64_t c = 0; c < T; ++c) {
                   w.probs.assign(static_cast<std::size_t>(l), 0.0);
                   for (std::int64_t i = 0; i < l; ++i) {
                     col[static_cast<std::size_t>(i)] = zv.at(i, c);
                     w.probs[static_cast<std::size_t>(i)] = probs.at(i, c);
                     dp[static_cast<std::size_t>(i)] = dprobs.at(i, c);
                   }
                   w.null_mass = nullm[c];
                   normalize_vjp(spec, col, {}, w, dp, dnull[c], dz);
                   for (std::int64_t i = 0; i < l; ++i)
                     gz.at(i, c) += dz[static_cast<std::size_t>(i)];
                 }
               });
  return NormColsOut{p, Var{p.node, 1}};
}

Var Tape::mix_op(Var alpha, Var null_mass, const std::vector<Var>& branches,
                 Var prev) {
  const Tensor& av = val(alpha);
  const Tensor& nv = val(null_mass);
  require(av.rank() == 2, ErrorKind::Dimension, "mix_op: alpha rank");
  const std::int64_t l = av.extent(0), T = av.extent(1);
  require(static_cast<std::int64_t>(branches.size()) == l,
          ErrorKind::Dimension, "mix_op: branch count != alpha rows");
  require(nv.rank() == 1 && nv.extent(0) == T, ErrorKind::Dimension,
          "mix_op: null mass must be [T]");
  const std::int64_t d = val(branches.front()).extent(1);
  for (const Var& b : branches)
    require(val(b).rank() == 2 && val(b).extent(0) == T &&
                val(b).extent(1) == d,
            ErrorKind::Dimension, "mix_op: branch shape");
  bool null_zero = true;
  for (double x : nv.flat()) null_zero = null_zero && x == 0.0;
  const bool use_prev = prev.valid() && !null_zero;
  if (use_prev)
    require(val(prev).same_shape(val(branches.front())), ErrorKind::Dimension,
            "mix_op: prev shape");

  Tensor out({T, d});
  for (std::int64_t t = 0; t < T; ++t)
    for (std::int64_t c = 0; c < d; ++c) {
      double acc = 0.0;
      for (std::int64_t i = 0; i < l; ++i)
        acc += av.at(i, t) * val(branches[static_cast<std::size_t>(i)]).at(t, c);
      if (use_prev) acc += nv[t] * val(prev).at(t, c);
      out.at(t, c) = acc;
    }

  std::vector<Var> inputs = {alpha, null_mass};
  for (const Var& b : branches) inputs.push_back(b);
  if (use_prev) inputs.push_back(prev);
  return push(std::move(inputs), {std::move(out)},
              [alpha, null_mass, branches, prev, use_prev](Tape& t,
                                                           std::int32_t self) {
                const Tensor& dout =
                    t.nodes_[static_cast<std::size_t>(self)].grad[0];
                const Tensor& av = t.val(alpha);
                const std::int64_t l = av.extent(0), T = av.extent(1);
                const std::int64_t d = dout.extent(1);
                Tensor& ga = t.gref(alpha);
                for (std::int64_t i = 0; i < l; ++i) {
                  const Tensor& bv = t.val(branches[static_cast<std::size_t>(i)]);
                  Tensor& gb = t.gref(branches[static_cast<std::size_t>(i)]);
                  for (std::int64_t r = 0; r < T; ++r) {
                    double acc = 0.0;
                    for (std::int64_t c = 0; c < d; ++c) {
                      acc += dout.at(r, c) * bv.at(r, c);
                      gb.at(r, c) += av.at(i, r) * dout.at(r, c);
                    }
                    ga.at(i, r) += acc;
                  }
                }
                if (use_prev) {
                  const Tensor& pv = t.val(prev);
                  const Tensor& nv = t.val(null_mass);
                  Tensor& gn = t.gref(null_mass);
                  Tensor& gp = t.gref(prev);
                  for (std::int64_t r = 0; r < T; ++r) {
                    double acc = 0.0;
                    for (std::int64_t c = 0; c < d; ++c) {
                      acc += dout.at(r, c) * pv.at(r, c);
                      gp.at(r, c) += nv[r] * dout.at(r, c);
                    }
                    gn[r] += acc;
                  }
                }
              });
}

Var Tape::cross_entropy(Var logits, std::span<const std::int64_t> targets) {
  const Tensor& zv = val(logits);
  require(zv.rank() == 2, ErrorKind::Dimension, "cross_entropy: logits rank");
  const std::int64_t T = zv.extent(0), V = zv.extent(1);
  require(static_cast<std::int64_t>(targets.size()) == T, ErrorKind::Dimension,
          "cross_entropy: targets length");
  require(T >= 2, ErrorKind::Parameter, "cross_entropy: need T >= 2");
  std::vector<std::int64_t> tg(targets.begin(), targets.end());
  for (std::int64_t y : tg)
    require(y >= 0 && y < V, ErrorKind::Input,
            "cross_entropy: target id out of range");
  double loss = 0.0;
  for (std::int64_t t = 0; t + 1 < T; ++t) {
    const double lse = log_sum_exp(zv.row(t), false);
    loss += lse - zv.at(t, tg[static_cast<std::size_t>(t + 1)]);
  }
  loss /= static_cast<double>(T - 1);
  return push({logits}, {Tensor::scalar(loss)},
              [logits, tg](Tape& t, std::int32_t self) {
                const double d = t.nodes_[static_cast<std::size_t>(self)].grad[0][0];
                const Tensor& zv = t.val(logits);
                Tensor& gz = t.gref(logits);
                const std::int64_t T = zv.extent(0), V = zv.extent(1);
                const double scale = d / static_cast<double>(T - 1);
                for (std::int64_t r = 0; r + 1 < T; ++r) {
                  const double lse = log_sum_exp(zv.row(r), false);
                  for (std::int64_t c = 0; c < V; ++c) {
                    double g = std::exp(zv.at(r, c) - lse);
                    if (c == tg[static_cast<std::size_t>(r + 1)]) g -= 1.0;
                    gz.at(r, c) += scale * g;
                  }
                }
              });
}

Var Tape::sum_all(Var a) {
  return push({a}, {Tensor::scalar(sum(val(a).flat()))},
              [a](Tape& t, std::int32_t self) {
                const double d = t.nodes_[static_cast<std::size_t>(self)].grad[0][0];
                Tensor& ga = t.gref(a);
                for (auto& g : ga.flat()) g += d;
              });
}

Var Tape::mean_scalars(const std::vector<Var>& xs) {
  require(!xs.empty(), ErrorKind::Parameter, "mean_scalars: empty");
  double acc = 0.0;
  for (const Var& v : xs) {
    require(val(v).numel() == 1, ErrorKind::Dimension,
            "mean_scalars: inputs must be [1]");
    acc += val(v)[0];
  }
  acc /= static_cast<double>(xs.size());
  std::vector<Var> inputs = xs;
  return push(std::move(inputs), {Tensor::scalar(acc)},
              [xs](Tape& t, std::int32_t self) {
                const double d = t.nodes_[static_cast<std::size_t>(self)].grad[0][0];
                const double share = d / static_cast<double>(xs.size());
                for (const Var& v : xs) t.gref(v)[0] += share;
              });
}

}  // namespace oasis
