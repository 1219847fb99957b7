#include "dctts/graph.hpp"

#include <algorithm>
#include <cmath>

namespace dctts {

namespace mm {

void acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* ai = a + static_cast<size_t>(i) * k;
        double* ci = c + static_cast<size_t>(i) * n;
        for (int l = 0; l < k; ++l) {
            const double av = ai[l];
            if (av == 0.0) continue;
            const double* bl = b + static_cast<size_t>(l) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bl[j];
        }
    }
}

void nt_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* ai = a + static_cast<size_t>(i) * k;
        double* ci = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* bj = b + static_cast<size_t>(j) * k;
            double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
            int l = 0;
            for (; l + 4 <= k; l += 4) {
                s0 += ai[l] * bj[l];
                s1 += ai[l + 1] * bj[l + 1];
                s2 += ai[l + 2] * bj[l + 2];
                s3 += ai[l + 3] * bj[l + 3];
            }
            double s = (s0 + s1) + (s2 + s3);
            for (; l < k; ++l) s += ai[l] * bj[l];
            ci[j] += s;
        }
    }
}

void tn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* ai = a + static_cast<size_t>(i) * k;
        const double* bi = b + static_cast<size_t>(i) * n;
        for (int l = 0; l < k; ++l) {
            const double av = ai[l];
            if (av == 0.0) continue;
            double* cl = c + static_cast<size_t>(l) * n;
            for (int j = 0; j < n; ++j) cl[j] += av * bi[j];
        }
    }
}

}  // namespace mm

Graph::Id Graph::make(Tensor value, std::vector<Id> parents, Parameter* p) {
    Node node;
    node.value = std::move(value);
    node.parents = std::move(parents);
    node.param = p;
    node.needs_grad = (p != nullptr);
    for (Id pid : node.parents)
        if (nodes_[static_cast<size_t>(pid)].needs_grad) node.needs_grad = true;
    if (node.needs_grad) node.grad = Tensor::zeros(node.value.dims);
    nodes_.push_back(std::move(node));
    Id id = static_cast<Id>(nodes_.size() - 1);
    if (p != nullptr) param_leaves_.emplace_back(p, id);
    return id;
}

void Graph::set_back(Id id, std::function<void()> fn) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.needs_grad) n.back = std::move(fn);
}

Graph::Id Graph::input(Tensor v) { return make(std::move(v), {}); }

Graph::Id Graph::param(Parameter& p) {
    // one leaf per parameter per graph so consumers share the same grad buffer
    for (const auto& [ptr, id] : param_leaves_)
        if (ptr == &p) return id;
    return make(p.value, {}, &p);
}

Graph::Id Graph::add(Id a, Id b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    check_same_shape(ta, tb, "add");
    Tensor out(ta.dims);
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = ta.data[i] + tb.data[i];
    Id id = make(std::move(out), {a, b});
    set_back(id, [this, id, a, b] {
        Node& n = node(id);
        for (Id p : {a, b}) {
            Node& pn = node(p);
            if (!pn.needs_grad) continue;
            for (int64_t i = 0; i < n.grad.numel(); ++i) pn.grad.data[i] += n.grad.data[i];
        }
    });
    return id;
}

Graph::Id Graph::sub(Id a, Id b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    check_same_shape(ta, tb, "sub");
    Tensor out(ta.dims);
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = ta.data[i] - tb.data[i];
    Id id = make(std::move(out), {a, b});
    set_back(id, [this, id, a, b] {
        Node& n = node(id);
        Node& an = node(a);
        Node& bn = node(b);
        if (an.needs_grad)
            for (int64_t i = 0; i < n.grad.numel(); ++i) an.grad.data[i] += n.grad.data[i];
        if (bn.needs_grad)
            for (int64_t i = 0; i < n.grad.numel(); ++i) bn.grad.data[i] -= n.grad.data[i];
    });
    return id;
}

Graph::Id Graph::mul(Id a, Id b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    check_same_shape(ta, tb, "mul");
    Tensor out(ta.dims);
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = ta.data[i] * tb.data[i];
    Id id = make(std::move(out), {a, b});
    set_back(id, [this, id, a, b] {
        Node& n = node(id);
        Node& an = node(a);
        Node& bn = node(b);
        if (an.needs_grad)
            for (int64_t i = 0; i < n.grad.numel(); ++i) an.grad.data[i] += n.grad.data[i] * bn.value.data[i];
        if (bn.needs_grad)
            for (int64_t i = 0; i < n.grad.numel(); ++i) bn.grad.data[i] += n.grad.data[i] * an.value.data[i];
    });
    return id;
}

Graph::Id Graph::scale(Id a, double s) {
    Tensor out(val(a).dims);
    const Tensor& ta = val(a);
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = ta.data[i] * s;
    Id id = make(std::move(out), {a});
    set_back(id, [this, id, a, s] {
        Node& n = node(id);
        Node& an = node(a);
        for (int64_t i = 0; i < n.grad.numel(); ++i) an.grad.data[i] += n.grad.data[i] * s;
    });
    return id;
}

Graph::Id Graph::add_scalar(Id a, double s) {
    Tensor out(val(a).dims);
    const Tensor& ta = val(a);
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = ta.data[i] + s;
    Id id = make(std::move(out), {a});
    set_back(id, [this, id, a] {
        Node& n = node(id);
        Node& an = node(a);
        for (int64_t i = 0; i < n.grad.numel(); ++i) an.grad.data[i] += n.grad.data[i];
    });
    return id;
}

Graph::Id Graph::add_const_tensor(Id a, const Tensor& t) {
    const Tensor& ta = val(a);
    check_same_shape(ta, t, "add_const_tensor");
    Tensor out(ta.dims);
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = ta.data[i] + t.data[i];
    Id id = make(std::move(out), {a});
    set_back(id, [this, id, a] {
        Node& n = node(id);
        Node& an = node(a);
        for (int64_t i = 0; i < n.grad.numel(); ++i) an.grad.data[i] += n.grad.data[i];
    });
    return id;
}

Graph::Id Graph::relu(Id a) {
    Tensor out(val(a).dims);
    const Tensor& ta = val(a);
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = ta.data[i] > 0.0 ? ta.data[i] : 0.0;
    Id id = make(std::move(out), {a});
    set_back(id, [this, id, a] {
        Node& n = node(id);
        Node& an = node(a);
        for (int64_t i = 0; i < n.grad.numel(); ++i)
            if (an.value.data[i] > 0.0) an.grad.data[i] += n.grad.data[i];
    });
    return id;
}

Graph::Id Graph::gelu(Id a) {
    // exact form: 0.5*x*(1+erf(x/sqrt(2)))
    static constexpr double kInvSqrt2 = 0.7071067811865476;
    static constexpr double kInvSqrt2Pi = 0.3989422804014327;
    Tensor out(val(a).dims);
    const Tensor& ta = val(a);
    for (int64_t i = 0; i < out.numel(); ++i) {
        double x = ta.data[i];
        out.data[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
    }
    Id id = make(std::move(out), {a});
    set_back(id, [this, id, a] {
        Node& n = node(id);
        Node& an = node(a);
        for (int64_t i = 0; i < n.grad.numel(); ++i) {
            double x = an.value.data[i];
            double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
            double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
            an.grad.data[i] += n.grad.data[i] * (cdf + x * pdf);
        }
    });
    return id;
}

Graph::Id Graph::exp(Id a) {
    Tensor out(val(a).dims);
    const Tensor& ta = val(a);
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = std::exp(ta.data[i]);
    Id id = make(std::move(out), {a});
    set_back(id, [this, id, a] {
        Node& n = node(id);
        Node& an = node(a);
        for (int64_t i = 0; i < n.grad.numel(); ++i) an.grad.data[i] += n.grad.data[i] * n.value.data[i];
    });
    return id;
}

Graph::Id Graph::clamp(Id a, double lo, double hi) {
    Tensor out(val(a).dims);
    const Tensor& ta = val(a);
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = std::min(hi, std::max(lo, ta.data[i]));
    Id id = make(std::move(out), {a});
    set_back(id, [this, id, a, lo, hi] {
        Node& n = node(id);
        Node& an = node(a);
        for (int64_t i = 0; i < n.grad.numel(); ++i) {
            double x = an.value.data[i];
            if (x >= lo && x <= hi) an.grad.data[i] += n.grad.data[i];
        }
    });
    return id;
}

Graph::Id Graph::matmul(Id a, Id b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (ta.rank() != 2 || tb.rank() != 2 || ta.dim(1) != tb.dim(0))
        throw ConfigError("matmul: incompatible shapes " + ta.shape_str() + " x " + tb.shape_str());
    const int m = ta.dim(0), k = ta.dim(1), n = tb.dim(1);
    Tensor out({m, n});
    mm::acc(ta.data.data(), tb.data.data(), out.data.data(), m, k, n);
    Id id = make(std::move(out), {a, b});
    set_back(id, [this, id, a, b, m, k, n] {
        Node& nn = node(id);
        Node& an = node(a);
        Node& bn = node(b);
        // dA += dC·Bᵀ ; dB += Aᵀ·dC
        if (an.needs_grad) mm::nt_acc(nn.grad.data.data(), bn.value.data.data(), an.grad.data.data(), m, n, k);
        if (bn.needs_grad) mm::tn_acc(an.value.data.data(), nn.grad.data.data(), bn.grad.data.data(), m, k, n);
    });
    return id;
}

Graph::Id Graph::matmul_nt(Id a, Id b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (ta.rank() != 2 || tb.rank() != 2 || ta.dim(1) != tb.dim(1))
        throw ConfigError("matmul_nt: incompatible shapes " + ta.shape_str() + " x " + tb.shape_str());
    const int m = ta.dim(0), k = ta.dim(1), n = tb.dim(0);
    Tensor out({m, n});
    mm::nt_acc(ta.data.data(), tb.data.data(), out.data.data(), m, k, n);
    Id id = make(std::move(out), {a, b});
    set_back(id, [this, id, a, b, m, k, n] {
        Node& nn = node(id);
        Node& an = node(a);
        Node& bn = node(b);
        // C = A·Bᵀ: dA += dC·B ; dB += dCᵀ·A
        if (an.needs_grad) mm::acc(nn.grad.data.data(), bn.value.data.data(), an.grad.data.data(), m, n, k);
        if (bn.needs_grad) mm::tn_acc(nn.grad.data.data(), an.value.data.data(), bn.grad.data.data(), m, n, k);
    });
    return id;
}

Graph::Id Graph::linear(Id x, Id w, Id b) {
    const Tensor& tx = val(x);
    const Tensor& tw = val(w);
    if (tx.rank() != 2 || tw.rank() != 2 || tx.dim(1) != tw.dim(1))
        throw ConfigError("linear: input " + tx.shape_str() + " incompatible with weight " + tw.shape_str());
    const int n = tx.dim(0), in = tx.dim(1), out_dim = tw.dim(0);
    Tensor out({n, out_dim});
    mm::nt_acc(tx.data.data(), tw.data.data(), out.data.data(), n, in, out_dim);
    std::vector<Id> parents = {x, w};
    if (b >= 0) {
        const Tensor& tb = val(b);
        if (tb.numel() != out_dim) throw ConfigError("linear: bias size mismatch");
        for (int i = 0; i < n; ++i)
            for (int o = 0; o < out_dim; ++o) out.at(i, o) += tb.data[static_cast<size_t>(o)];
        parents.push_back(b);
    }
    Id id = make(std::move(out), parents);
    set_back(id, [this, id, x, w, b, n, in, out_dim] {
        Node& nn = node(id);
        Node& xn = node(x);
        Node& wn = node(w);
        if (xn.needs_grad) mm::acc(nn.grad.data.data(), wn.value.data.data(), xn.grad.data.data(), n, out_dim, in);
        if (wn.needs_grad) mm::tn_acc(nn.grad.data.data(), xn.value.data.data(), wn.grad.data.data(), n, out_dim, in);
        if (b >= 0) {
            Node& bn = node(b);
            if (bn.needs_grad)
                for (int i = 0; i < n; ++i)
                    for (int o = 0; o < out_dim; ++o) bn.grad.data[static_cast<size_t>(o)] += nn.grad.at(i, o);
        }
    });
    return id;
}

Graph::Id Graph::embedding(const std::vector<int>& ids, Id table) {
    const Tensor& tt = val(table);
    if (tt.rank() != 2) throw ConfigError("embedding: table must be rank 2");
    const int v = tt.dim(0), d = tt.dim(1);
    const int n = static_cast<int>(ids.size());
    for (int idv : ids)
        if (idv < 0 || idv >= v)
            throw InputError("embedding: id " + std::to_string(idv) + " out of range [0," + std::to_string(v) + ")");
    Tensor out({n, d});
    for (int i = 0; i < n; ++i)
        std::copy_n(tt.row(ids[static_cast<size_t>(i)]), d, out.row(i));
    Id id = make(std::move(out), {table});
    set_back(id, [this, id, table, ids, d, n] {
        Node& nn = node(id);
        Node& tn = node(table);
        for (int i = 0; i < n; ++i) {
            double* dst = tn.grad.row(ids[static_cast<size_t>(i)]);
            const double* src = nn.grad.row(i);
            for (int c = 0; c < d; ++c) dst[c] += src[c];
        }
    });
    return id;
}

Graph::Id Graph::conv1d(Id x, Id w, Id b, int stride, int pad) {
    const Tensor& tx = val(x);
    const Tensor& tw = val(w);
    if (tx.rank() != 2 || tw.rank() != 3 || tx.dim(1) != tw.dim(1))
        throw ConfigError("conv1d: input " + tx.shape_str() + " incompatible with kernel " + tw.shape_str());
    const int len = tx.dim(0), cin = tx.dim(1);
    const int cout = tw.dim(0), kw = tw.dim(2);
    const int lout = (len + 2 * pad - kw) / stride + 1;
    if (lout < 1) throw ConfigError("conv1d: output length < 1");
    Tensor out({lout, cout});
    for (int t = 0; t < lout; ++t) {
        double* yrow = out.row(t);
        for (int k = 0; k < kw; ++k) {
            const int pos = t * stride + k - pad;
            if (pos < 0 || pos >= len) continue;
            const double* xrow = tx.row(pos);
            for (int o = 0; o < cout; ++o) {
                const double* wk = tw.data.data() + (static_cast<size_t>(o) * cin) * kw + k;
                double s = 0.0;
                for (int c = 0; c < cin; ++c) s += xrow[c] * wk[static_cast<size_t>(c) * kw];
                yrow[o] += s;
            }
        }
    }
    std::vector<Id> parents = {x, w};
    if (b >= 0) {
        const Tensor& tb = val(b);
        if (tb.numel() != cout) throw ConfigError("conv1d: bias size mismatch");
        for (int t = 0; t < lout; ++t)
            for (int o = 0; o < cout; ++o) out.at(t, o) += tb.data[static_cast<size_t>(o)];
        parents.push_back(b);
    }
    Id id = make(std::move(out), parents);
    set_back(id, [this, id, x, w, b, stride, pad, len, cin, cout, kw] {
        Node& nn = node(id);
        Node& xn = node(x);
        Node& wn = node(w);
        const int lout = nn.value.dim(0);
        for (int t = 0; t < lout; ++t) {
            const double* grow = nn.grad.row(t);
            for (int k = 0; k < kw; ++k) {
                const int pos = t * stride + k - pad;
                if (pos < 0 || pos >= len) continue;
                for (int o = 0; o < cout; ++o) {
                    const double g = grow[o];
                    if (g == 0.0) continue;
                    if (xn.needs_grad) {
                        double* xg = xn.grad.row(pos);
                        const double* wk = wn.value.data.data() + (static_cast<size_t>(o) * cin) * kw + k;
                        for (int c = 0; c < cin; ++c) xg[c] += g * wk[static_cast<size_t>(c) * kw];
                    }
                    if (wn.needs_grad) {
                        const double* xrow = xn.value.row(pos);
                        double* wg = wn.grad.data.data() + (static_cast<size_t>(o) * cin) * kw + k;
                        for (int c = 0; c < cin; ++c) wg[static_cast<size_t>(c) * kw] += g * xrow[c];
                    }
                }
            }
        }
        if (b >= 0) {
            Node& bn = node(b);
            if (bn.needs_grad)
                for (int t = 0; t < lout; ++t)
                    for (int o = 0; o < cout; ++o) bn.grad.data[static_cast<size_t>(o)] += nn.grad.at(t, o);
        }
    });
    return id;
}

Graph::Id Graph::depthwise_conv1d(Id x, Id w, Id b, int stride, int pad) {
    const Tensor& tx = val(x);
    const Tensor& tw = val(w);
    if (tx.rank() != 2 || tw.rank() != 2 || tx.dim(1) != tw.dim(0))
        throw ConfigError("depthwise_conv1d: input " + tx.shape_str() + " incompatible with kernel " + tw.shape_str());
    const int len = tx.dim(0), ch = tx.dim(1), kw = tw.dim(1);
    const int lout = (len + 2 * pad - kw) / stride + 1;
    if (lout < 1) throw ConfigError("depthwise_conv1d: output length < 1");
    Tensor out({lout, ch});
    for (int t = 0; t < lout; ++t) {
        double* yrow = out.row(t);
        for (int k = 0; k < kw; ++k) {
            const int pos = t * stride + k - pad;
            if (pos < 0 || pos >= len) continue;
            const double* xrow = tx.row(pos);
            for (int c = 0; c < ch; ++c) yrow[c] += xrow[c] * tw.at(c, k);
        }
    }
    std::vector<Id> parents = {x, w};
    if (b >= 0) {
        const Tensor& tb = val(b);
        if (tb.numel() != ch) throw ConfigError("depthwise_conv1d: bias size mismatch");
        for (int t = 0; t < lout; ++t)
            for (int c = 0; c < ch; ++c) out.at(t, c) += tb.data[static_cast<size_t>(c)];
        parents.push_back(b);
    }
    Id id = make(std::move(out), parents);
    set_back(id, [this, id, x, w, b, stride, pad, len, ch, kw] {
        Node& nn = node(id);
        Node& xn = node(x);
        Node& wn = node(w);
        const int lout = nn.value.dim(0);
        for (int t = 0; t < lout; ++t) {
            const double* grow = nn.grad.row(t);
            for (int k = 0; k < kw; ++k) {
                const int pos = t * stride + k - pad;
                if (pos < 0 || pos >= len) continue;
                if (xn.needs_grad) {
                    double* xg = xn.grad.row(pos);
                    for (int c = 0; c < ch; ++c) xg[c] += grow[c] * wn.value.at(c, k);
                }
                if (wn.needs_grad) {
                    const double* xrow = xn.value.row(pos);
                    for (int c = 0; c < ch; ++c) wn.grad.at(c, k) += grow[c] * xrow[c];
                }
            }
        }
        if (b >= 0) {
            Node& bn = node(b);
            if (bn.needs_grad)
                for (int t = 0; t < lout; ++t)
                    for (int c = 0; c < ch; ++c) bn.grad.data[static_cast<size_t>(c)] += nn.grad.at(t, c);
        }
    });
    return id;
}

Graph::Id Graph::conv2d(Id x, Id w, Id b, int sf, int st, int pf, int pt) {
    const Tensor& tx = val(x);
    const Tensor& tw = val(w);
    if (tx.rank() != 3 || tw.rank() != 4 || tx.dim(0) != tw.dim(1))
        throw ConfigError("conv2d: input " + tx.shape_str() + " incompatible with kernel " + tw.shape_str());
    const int cin = tx.dim(0), fin = tx.dim(1), lin = tx.dim(2);
    const int cout = tw.dim(0), kf = tw.dim(2), kt = tw.dim(3);
    const int fo = (fin + 2 * pf - kf) / sf + 1;
    const int lo = (lin + 2 * pt - kt) / st + 1;
    if (fo < 1 || lo < 1) throw ConfigError("conv2d: output dims < 1");
    Tensor out({cout, fo, lo});
    auto xat = [&](int c, int f, int t) { return tx.data[(static_cast<size_t>(c) * fin + f) * lin + t]; };
    auto wat = [&](int o, int c, int a, int bk) {
        return tw.data[((static_cast<size_t>(o) * cin + c) * kf + a) * kt + bk];
    };
    for (int o = 0; o < cout; ++o)
        for (int f = 0; f < fo; ++f)
            for (int t = 0; t < lo; ++t) {
                double s = 0.0;
                for (int c = 0; c < cin; ++c)
                    for (int a = 0; a < kf; ++a) {
                        const int fi = f * sf + a - pf;
                        if (fi < 0 || fi >= fin) continue;
                        for (int bk = 0; bk < kt; ++bk) {
                            const int ti = t * st + bk - pt;
                            if (ti < 0 || ti >= lin) continue;
                            s += xat(c, fi, ti) * wat(o, c, a, bk);
                        }
                    }
                out.data[(static_cast<size_t>(o) * fo + f) * lo + t] = s;
            }
    std::vector<Id> parents = {x, w};
    if (b >= 0) {
        const Tensor& tb = val(b);
        if (tb.numel() != cout) throw ConfigError("conv2d: bias size mismatch");
        for (int o = 0; o < cout; ++o)
            for (int64_t i = 0; i < static_cast<int64_t>(fo) * lo; ++i)
                out.data[static_cast<size_t>(o) * fo * lo + i] += tb.data[static_cast<size_t>(o)];
        parents.push_back(b);
    }
    Id id = make(std::move(out), parents);
    set_back(id, [this, id, x, w, b, sf, st, pf, pt, cin, fin, lin, cout, kf, kt] {
        Node& nn = node(id);
        Node& xn = node(x);
        Node& wn = node(w);
        const int fo = nn.value.dim(1), lo = nn.value.dim(2);
        for (int o = 0; o < cout; ++o)
            for (int f = 0; f < fo; ++f)
                for (int t = 0; t < lo; ++t) {
                    const double g = nn.grad.data[(static_cast<size_t>(o) * fo + f) * lo + t];
                    if (g == 0.0) continue;
                    for (int c = 0; c < cin; ++c)
                        for (int a = 0; a < kf; ++a) {
                            const int fi = f * sf + a - pf;
                            if (fi < 0 || fi >= fin) continue;
                            for (int bk = 0; bk < kt; ++bk) {
                                const int ti = t * st + bk - pt;
                                if (ti < 0 || ti >= lin) continue;
                                const size_t xi = (static_cast<size_t>(c) * fin + fi) * lin + ti;
                                const size_t wi = ((static_cast<size_t>(o) * cin + c) * kf + a) * kt + bk;
                                if (xn.needs_grad) xn.grad.data[xi] += g * wn.value.data[wi];
                                if (wn.needs_grad) wn.grad.data[wi] += g * xn.value.data[xi];
                            }
                        }
                }
        if (b >= 0) {
            Node& bn = node(b);
            if (bn.needs_grad)
                for (int o = 0; o < cout; ++o)
                    for (int64_t i = 0; i < static_cast<int64_t>(fo) * lo; ++i)
                        bn.grad.data[static_cast<size_t>(o)] += nn.grad.data[static_cast<size_t>(o) * fo * lo + i];
        }
    });
    return id;
}

Graph::Id Graph::conv2d_transpose(Id x, Id w, Id b, int sf, int st, int pf, int pt) {
    const Tensor& tx = val(x);
    const Tensor& tw = val(w);
    if (tx.rank() != 3 || tw.rank() != 4 || tx.dim(0) != tw.dim(0))
        throw ConfigError("conv2d_transpose: input " + tx.shape_str() + " incompatible with kernel " + tw.shape_str());
    const int cin = tx.dim(0), fin = tx.dim(1), lin = tx.dim(2);
    const int cout = tw.dim(1), kf = tw.dim(2), kt = tw.dim(3);
    const int fo = (fin - 1) * sf + kf - 2 * pf;
    const int lo = (lin - 1) * st + kt - 2 * pt;
    if (fo < 1 || lo < 1) throw ConfigError("conv2d_transpose: output dims < 1");
    Tensor out({cout, fo, lo});
    for (int c = 0; c < cin; ++c)
        for (int f = 0; f < fin; ++f)
            for (int t = 0; t < lin; ++t) {
                const double xv = tx.data[(static_cast<size_t>(c) * fin + f) * lin + t];
                if (xv == 0.0) continue;
                for (int o = 0; o < cout; ++o)
                    for (int a = 0; a < kf; ++a) {
                        const int fz = f * sf + a - pf;
                        if (fz < 0 || fz >= fo) continue;
                        for (int bk = 0; bk < kt; ++bk) {
                            const int tz = t * st + bk - pt;
                            if (tz < 0 || tz >= lo) continue;
                            out.data[(static_cast<size_t>(o) * fo + fz) * lo + tz] +=
                                xv * tw.data[((static_cast<size_t>(c) * cout + o) * kf + a) * kt + bk];
                        }
                    }
            }
    std::vector<Id> parents = {x, w};
    if (b >= 0) {
        const Tensor& tb = val(b);
        if (tb.numel() != cout) throw ConfigError("conv2d_transpose: bias size mismatch");
        for (int o = 0; o < cout; ++o)
            for (int64_t i = 0; i < static_cast<int64_t>(fo) * lo; ++i)
                out.data[static_cast<size_t>(o) * fo * lo + i] += tb.data[static_cast<size_t>(o)];
        parents.push_back(b);
    }
    Id id = make(std::move(out), parents);
    set_back(id, [this, id, x, w, b, sf, st, pf, pt, cin, fin, lin, cout, kf, kt] {
        Node& nn = node(id);
        Node& xn = node(x);
        Node& wn = node(w);
        const int fo = nn.value.dim(1), lo = nn.value.dim(2);
        for (int c = 0; c < cin; ++c)
            for (int f = 0; f < fin; ++f)
                for (int t = 0; t < lin; ++t) {
                    const size_t xi = (static_cast<size_t>(c) * fin + f) * lin + t;
                    double xacc = 0.0;
                    for (int o = 0; o < cout; ++o)
                        for (int a = 0; a < kf; ++a) {
                            const int fz = f * sf + a - pf;
                            if (fz < 0 || fz >= fo) continue;
                            for (int bk = 0; bk < kt; ++bk) {
                                const int tz = t * st + bk - pt;
                                if (tz < 0 || tz >= lo) continue;
                                const double g = nn.grad.data[(static_cast<size_t>(o) * fo + fz) * lo + tz];
                                const size_t wi = ((static_cast<size_t>(c) * cout + o) * kf + a) * kt + bk;
                                xacc += g * wn.value.data[wi];
                                if (wn.needs_grad) wn.grad.data[wi] += g * xn.value.data[xi];
                            }
                        }
                    if (xn.needs_grad) xn.grad.data[xi] += xacc;
                }
        if (b >= 0) {
            Node& bn = node(b);
            if (bn.needs_grad)
                for (int o = 0; o < cout; ++o)
                    for (int64_t i = 0; i < static_cast<int64_t>(fo) * lo; ++i)
                        bn.grad.data[static_cast<size_t>(o)] += nn.grad.data[static_cast<size_t>(o) * fo * lo + i];
        }
    });
    return id;
}

namespace {

// shared layer-norm backward core: given dy for y=(x-mu)/sigma scaled by gain
// (gain==nullptr means gain 1), accumulate dx.
void ln_backward_rows(const Tensor& x, const Tensor& dy, const double* gain, double eps, Tensor& dx) {
    const int n = x.dim(0), d = x.dim(1);
    for (int r = 0; r < n; ++r) {
        const double* xr = x.row(r);
        const double* dyr = dy.row(r);
        double mu = 0.0;
        for (int c = 0; c < d; ++c) mu += xr[c];
        mu /= d;
        double var = 0.0;
        for (int c = 0; c < d; ++c) var += (xr[c] - mu) * (xr[c] - mu);
        var /= d;
        const double inv = 1.0 / std::sqrt(var + eps);
        // dxhat = dy*gain; dx = inv*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
        double mean_dxh = 0.0, mean_dxh_xh = 0.0;
        for (int c = 0; c < d; ++c) {
            const double dxh = dyr[c] * (gain ? gain[c] : 1.0);
            const double xh = (xr[c] - mu) * inv;
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh;
        }
        mean_dxh /= d;
        mean_dxh_xh /= d;
        double* dxr = dx.row(r);
        for (int c = 0; c < d; ++c) {
            const double dxh = dyr[c] * (gain ? gain[c] : 1.0);
            const double xh = (xr[c] - mu) * inv;
            dxr[c] += inv * (dxh - mean_dxh - xh * mean_dxh_xh);
        }
    }
}

void ln_forward_rows(const Tensor& x, double eps, Tensor& out) {
    const int n = x.dim(0), d = x.dim(1);
    for (int r = 0; r < n; ++r) {
        const double* xr = x.row(r);
        double* yr = out.row(r);
        double mu = 0.0;
        for (int c = 0; c < d; ++c) mu += xr[c];
        mu /= d;
        double var = 0.0;
        for (int c = 0; c < d; ++c) var += (xr[c] - mu) * (xr[c] - mu);
        var /= d;
        const double inv = 1.0 / std::sqrt(var + eps);
        for (int c = 0; c < d; ++c) yr[c] = (xr[c] - mu) * inv;
    }
}

}  // namespace

Graph::Id Graph::layer_norm(Id x, Id gain, Id bias, double eps) {
    const Tensor& tx = val(x);
    const Tensor& tg = val(gain);
    const Tensor& tb = val(bias);
    if (tx.rank() != 2 || tg.numel() != tx.dim(1) || tb.numel() != tx.dim(1))
        throw ConfigError("layer_norm: shape mismatch " + tx.shape_str());
    const int n = tx.dim(0), d = tx.dim(1);
    Tensor out({n, d});
    ln_forward_rows(tx, eps, out);
    for (int r = 0; r < n; ++r) {
        double* yr = out.row(r);
        for (int c = 0; c < d; ++c) yr[c] = yr[c] * tg.data[static_cast<size_t>(c)] + tb.data[static_cast<size_t>(c)];
    }
    Id id = make(std::move(out), {x, gain, bias});
    set_back(id, [this, id, x, gain, bias, eps, n, d] {
        Node& nn = node(id);
        Node& xn = node(x);
        Node& gn = node(gain);
        Node& bn = node(bias);
        if (gn.needs_grad || bn.needs_grad) {
            Tensor xhat({n, d});
            ln_forward_rows(xn.value, eps, xhat);
            for (int r = 0; r < n; ++r)
                for (int c = 0; c < d; ++c) {
                    const double g = nn.grad.at(r, c);
                    if (gn.needs_grad) gn.grad.data[static_cast<size_t>(c)] += g * xhat.at(r, c);
                    if (bn.needs_grad) bn.grad.data[static_cast<size_t>(c)] += g;
                }
        }
        if (xn.needs_grad) ln_backward_rows(xn.value, nn.grad, gn.value.data.data(), eps, xn.grad);
    });
    return id;
}

Graph::Id Graph::ln_norm(Id x, double eps) {
    const Tensor& tx = val(x);
    if (tx.rank() != 2) throw ConfigError("ln_norm: input must be rank 2, got " + tx.shape_str());
    Tensor out(tx.dims);
    ln_forward_rows(tx, eps, out);
    Id id = make(std::move(out), {x});
    set_back(id, [this, id, x, eps] {
        Node& nn = node(id);
        Node& xn = node(x);
        ln_backward_rows(xn.value, nn.grad, nullptr, eps, xn.grad);
    });
    return id;
}

Graph::Id Graph::channel_norm(Id x, Id gain, Id bias, double eps) {
    const Tensor& tx = val(x);
    const Tensor& tg = val(gain);
    const Tensor& tb = val(bias);
    if (tx.rank() != 3 || tg.numel() != tx.dim(0) || tb.numel() != tx.dim(0))
        throw ConfigError("channel_norm: shape mismatch " + tx.shape_str());
    const int c = tx.dim(0), f = tx.dim(1), l = tx.dim(2);
    const int64_t plane = static_cast<int64_t>(f) * l;
    Tensor out(tx.dims);
    for (int64_t cell = 0; cell < plane; ++cell) {
        double mu = 0.0;
        for (int ch = 0; ch < c; ++ch) mu += tx.data[static_cast<size_t>(ch) * plane + cell];
        mu /= c;
        double var = 0.0;
        for (int ch = 0; ch < c; ++ch) {
            const double d = tx.data[static_cast<size_t>(ch) * plane + cell] - mu;
            var += d * d;
        }
        var /= c;
        const double inv = 1.0 / std::sqrt(var + eps);
        for (int ch = 0; ch < c; ++ch)
            out.data[static_cast<size_t>(ch) * plane + cell] =
                (tx.data[static_cast<size_t>(ch) * plane + cell] - mu) * inv * tg.data[static_cast<size_t>(ch)] +
                tb.data[static_cast<size_t>(ch)];
    }
    Id id = make(std::move(out), {x, gain, bias});
    set_back(id, [this, id, x, gain, bias, eps, c, plane] {
        Node& nn = node(id);
        Node& xn = node(x);
        Node& gn = node(gain);
        Node& bn = node(bias);
        for (int64_t cell = 0; cell < plane; ++cell) {
            double mu = 0.0;
            for (int ch = 0; ch < c; ++ch) mu += xn.value.data[static_cast<size_t>(ch) * plane + cell];
            mu /= c;
            double var = 0.0;
            for (int ch = 0; ch < c; ++ch) {
                const double d = xn.value.data[static_cast<size_t>(ch) * plane + cell] - mu;
                var += d * d;
            }
            var /= c;
            const double inv = 1.0 / std::sqrt(var + eps);
            double mean_dxh = 0.0, mean_dxh_xh = 0.0;
            for (int ch = 0; ch < c; ++ch) {
                const double g = nn.grad.data[static_cast<size_t>(ch) * plane + cell];
                const double xh = (xn.value.data[static_cast<size_t>(ch) * plane + cell] - mu) * inv;
                if (gn.needs_grad) gn.grad.data[static_cast<size_t>(ch)] += g * xh;
                if (bn.needs_grad) bn.grad.data[static_cast<size_t>(ch)] += g;
                const double dxh = g * gn.value.data[static_cast<size_t>(ch)];
                mean_dxh += dxh;
                mean_dxh_xh += dxh * xh;
            }
            mean_dxh /= c;
            mean_dxh_xh /= c;
            if (xn.needs_grad)
                for (int ch = 0; ch < c; ++ch) {
                    const double g = nn.grad.data[static_cast<size_t>(ch) * plane + cell];
                    const double xh = (xn.value.data[static_cast<size_t>(ch) * plane + cell] - mu) * inv;
                    const double dxh = g * gn.value.data[static_cast<size_t>(ch)];
                    xn.grad.data[static_cast<size_t>(ch) * plane + cell] +=
                        inv * (dxh - mean_dxh - xh * mean_dxh_xh);
                }
        }
    });
    return id;
}

Graph::Id Graph::grid_to_rows(Id x) {
    const Tensor& tx = val(x);
    if (tx.rank() != 3) throw ConfigError("grid_to_rows: input must be [C,F,L]");
    const int c = tx.dim(0), f = tx.dim(1), l = tx.dim(2);
    Tensor out({f * l, c});
    for (int t = 0; t < l; ++t)
        for (int i = 0; i < f; ++i) {
            const int row = t * f + i;
            for (int ch = 0; ch < c; ++ch)
                out.at(row, ch) = tx.data[(static_cast<size_t>(ch) * f + i) * l + t];
        }
    Id id = make(std::move(out), {x});
    set_back(id, [this, id, x, c, f, l] {
        Node& nn = node(id);
        Node& xn = node(x);
        for (int t = 0; t < l; ++t)
            for (int i = 0; i < f; ++i) {
                const int row = t * f + i;
                for (int ch = 0; ch < c; ++ch)
                    xn.grad.data[(static_cast<size_t>(ch) * f + i) * l + t] += nn.grad.at(row, ch);
            }
    });
    return id;
}

Graph::Id Graph::rows_to_grid(Id x, int f, int l) {
    const Tensor& tx = val(x);
    if (tx.rank() != 2 || tx.dim(0) != f * l) throw ConfigError("rows_to_grid: row count must be f*l");
    const int c = tx.dim(1);
    Tensor out({c, f, l});
    for (int t = 0; t < l; ++t)
        for (int i = 0; i < f; ++i) {
            const int row = t * f + i;
            for (int ch = 0; ch < c; ++ch)
                out.data[(static_cast<size_t>(ch) * f + i) * l + t] = tx.at(row, ch);
        }
    Id id = make(std::move(out), {x});
    set_back(id, [this, id, x, c, f, l] {
        Node& nn = node(id);
        Node& xn = node(x);
        for (int t = 0; t < l; ++t)
            for (int i = 0; i < f; ++i) {
                const int row = t * f + i;
                for (int ch = 0; ch < c; ++ch)
                    xn.grad.at(row, ch) += nn.grad.data[(static_cast<size_t>(ch) * f + i) * l + t];
            }
    });
    return id;
}

Graph::Id Graph::scale_columns(Id x, Id v) {
    const Tensor& tx = val(x);
    const Tensor& tv = val(v);
    if (tx.rank() != 2 || tv.numel() != tx.dim(1))
        throw ConfigError("scale_columns: shape mismatch " + tx.shape_str() + " vs " + tv.shape_str());
    const int n = tx.dim(0), d = tx.dim(1);
    Tensor out({n, d});
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < d; ++c) out.at(r, c) = tx.at(r, c) * tv.data[static_cast<size_t>(c)];
    Id id = make(std::move(out), {x, v});
    set_back(id, [this, id, x, v, n, d] {
        Node& nn = node(id);
        Node& xn = node(x);
        Node& vn = node(v);
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < d; ++c) {
                const double g = nn.grad.at(r, c);
                if (xn.needs_grad) xn.grad.at(r, c) += g * vn.value.data[static_cast<size_t>(c)];
                if (vn.needs_grad) vn.grad.data[static_cast<size_t>(c)] += g * xn.value.at(r, c);
            }
    });
    return id;
}

Graph::Id Graph::add_row_vector(Id x, Id v) {
    const Tensor& tx = val(x);
    const Tensor& tv = val(v);
    if (tx.rank() != 2 || tv.numel() != tx.dim(1))
        throw ConfigError("add_row_vector: shape mismatch " + tx.shape_str() + " vs " + tv.shape_str());
    const int n = tx.dim(0), d = tx.dim(1);
    Tensor out({n, d});
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < d; ++c) out.at(r, c) = tx.at(r, c) + tv.data[static_cast<size_t>(c)];
    Id id = make(std::move(out), {x, v});
    set_back(id, [this, id, x, v, n, d] {
        Node& nn = node(id);
        Node& xn = node(x);
        Node& vn = node(v);
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < d; ++c) {
                const double g = nn.grad.at(r, c);
                if (xn.needs_grad) xn.grad.at(r, c) += g;
                if (vn.needs_grad) vn.grad.data[static_cast<size_t>(c)] += g;
            }
    });
    return id;
}

Graph::Id Graph::slice_cols(Id x, int c0, int c1) {
    const Tensor& tx = val(x);
    if (tx.rank() != 2 || c0 < 0 || c1 > tx.dim(1) || c0 >= c1)
        throw ConfigError("slice_cols: bad range");
    const int n = tx.dim(0), d = c1 - c0;
    Tensor out({n, d});
    for (int r = 0; r < n; ++r) std::copy_n(tx.row(r) + c0, d, out.row(r));
    Id id = make(std::move(out), {x});
    set_back(id, [this, id, x, c0, d, n] {
        Node& nn = node(id);
        Node& xn = node(x);
        for (int r = 0; r < n; ++r) {
            double* dst = xn.grad.row(r) + c0;
            const double* src = nn.grad.row(r);
            for (int c = 0; c < d; ++c) dst[c] += src[c];
        }
    });
    return id;
}

Graph::Id Graph::concat_cols(const std::vector<Id>& xs) {
    if (xs.empty()) throw UsageError("concat_cols: empty list");
    const int n = val(xs[0]).dim(0);
    int total = 0;
    for (Id x : xs) {
        const Tensor& t = val(x);
        if (t.rank() != 2 || t.dim(0) != n) throw ConfigError("concat_cols: row mismatch");
        total += t.dim(1);
    }
    Tensor out({n, total});
    int off = 0;
    for (Id x : xs) {
        const Tensor& t = val(x);
        for (int r = 0; r < n; ++r) std::copy_n(t.row(r), t.dim(1), out.row(r) + off);
        off += t.dim(1);
    }
    Id id = make(std::move(out), xs);
    set_back(id, [this, id, xs, n] {
        Node& nn = node(id);
        int off = 0;
        for (Id x : xs) {
            Node& xn = node(x);
            const int d = xn.value.dim(1);
            if (xn.needs_grad)
                for (int r = 0; r < n; ++r) {
                    const double* src = nn.grad.row(r) + off;
                    double* dst = xn.grad.row(r);
                    for (int c = 0; c < d; ++c) dst[c] += src[c];
                }
            off += d;
        }
    });
    return id;
}

Graph::Id Graph::repeat_rows(Id x, const std::vector<int>& counts) {
    const Tensor& tx = val(x);
    if (tx.rank() != 2 || static_cast<int>(counts.size()) != tx.dim(0))
        throw ConfigError("repeat_rows: counts length mismatch");
    int total = 0;
    for (int c : counts) {
        if (c < 0) throw InputError("repeat_rows: negative count");
        total += c;
    }
    if (total == 0) throw InputError("repeat_rows: total expanded length is 0");
    const int d = tx.dim(1);
    Tensor out({total, d});
    int r = 0;
    for (int i = 0; i < tx.dim(0); ++i)
        for (int k = 0; k < counts[static_cast<size_t>(i)]; ++k) std::copy_n(tx.row(i), d, out.row(r++));
    Id id = make(std::move(out), {x});
    set_back(id, [this, id, x, counts, d] {
        Node& nn = node(id);
        Node& xn = node(x);
        int r = 0;
        for (int i = 0; i < xn.value.dim(0); ++i)
            for (int k = 0; k < counts[static_cast<size_t>(i)]; ++k) {
                const double* src = nn.grad.row(r++);
                double* dst = xn.grad.row(i);
                for (int c = 0; c < d; ++c) dst[c] += src[c];
            }
    });
    return id;
}

Graph::Id Graph::resize_rows(Id x, int target_rows) {
    const Tensor& tx = val(x);
    if (tx.rank() != 2 || target_rows < 1) throw ConfigError("resize_rows: bad target");
    const int n = tx.dim(0), d = tx.dim(1);
    const int keep = std::min(n, target_rows);
    Tensor out({target_rows, d});
    for (int r = 0; r < keep; ++r) std::copy_n(tx.row(r), d, out.row(r));
    Id id = make(std::move(out), {x});
    set_back(id, [this, id, x, keep, d] {
        Node& nn = node(id);
        Node& xn = node(x);
        for (int r = 0; r < keep; ++r) {
            const double* src = nn.grad.row(r);
            double* dst = xn.grad.row(r);
            for (int c = 0; c < d; ++c) dst[c] += src[c];
        }
    });
    return id;
}

Graph::Id Graph::softmax_rows(Id x) {
    const Tensor& tx = val(x);
    if (tx.rank() != 2) throw ConfigError("softmax_rows: input must be rank 2");
    const int n = tx.dim(0), d = tx.dim(1);
    Tensor out({n, d});
    for (int r = 0; r < n; ++r) {
        const double* xr = tx.row(r);
        double* yr = out.row(r);
        double mx = xr[0];
        for (int c = 1; c < d; ++c) mx = std::max(mx, xr[c]);
        double z = 0.0;
        for (int c = 0; c < d; ++c) {
            yr[c] = std::exp(xr[c] - mx);
            z += yr[c];
        }
        for (int c = 0; c < d; ++c) yr[c] /= z;
    }
    Id id = make(std::move(out), {x});
    set_back(id, [this, id, x, n, d] {
        Node& nn = node(id);
        Node& xn = node(x);
        for (int r = 0; r < n; ++r) {
            const double* yr = nn.value.row(r);
            const double* gr = nn.grad.row(r);
            double dot = 0.0;
            for (int c = 0; c < d; ++c) dot += yr[c] * gr[c];
            double* xg = xn.grad.row(r);
            for (int c = 0; c < d; ++c) xg[c] += yr[c] * (gr[c] - dot);
        }
    });
    return id;
}

Graph::Id Graph::log_softmax_rows(Id x) {
    const Tensor& tx = val(x);
    if (tx.rank() != 2) throw ConfigError("log_softmax_rows: input must be rank 2");
    const int n = tx.dim(0), d = tx.dim(1);
    Tensor out({n, d});
    for (int r = 0; r < n; ++r) {
        const double* xr = tx.row(r);
        double* yr = out.row(r);
        double mx = xr[0];
        for (int c = 1; c < d; ++c) mx = std::max(mx, xr[c]);
        double z = 0.0;
        for (int c = 0; c < d; ++c) z += std::exp(xr[c] - mx);
        const double lz = mx + std::log(z);
        for (int c = 0; c < d; ++c) yr[c] = xr[c] - lz;
    }
    Id id = make(std::move(out), {x});
    set_back(id, [this, id, x, n, d] {
        Node& nn = node(id);
        Node& xn = node(x);
        for (int r = 0; r < n; ++r) {
            const double* yr = nn.value.row(r);
            const double* gr = nn.grad.row(r);
            double gsum = 0.0;
            for (int c = 0; c < d; ++c) gsum += gr[c];
            double* xg = xn.grad.row(r);
            for (int c = 0; c < d; ++c) xg[c] += gr[c] - std::exp(yr[c]) * gsum;
        }
    });
    return id;
}

Graph::Id Graph::gather_rows(Id x, const std::vector<int>& idx) {
    const Tensor& tx = val(x);
    if (tx.rank() != 2 || static_cast<int>(idx.size()) != tx.dim(0))
        throw ConfigError("gather_rows: index length mismatch");
    const int n = tx.dim(0);
    for (int i : idx)
        if (i < 0 || i >= tx.dim(1)) throw InputError("gather_rows: index out of range");
    Tensor out({n});
    for (int r = 0; r < n; ++r) out.data[static_cast<size_t>(r)] = tx.at(r, idx[static_cast<size_t>(r)]);
    Id id = make(std::move(out), {x});
    set_back(id, [this, id, x, idx, n] {
        Node& nn = node(id);
        Node& xn = node(x);
        for (int r = 0; r < n; ++r)
            xn.grad.at(r, idx[static_cast<size_t>(r)]) += nn.grad.data[static_cast<size_t>(r)];
    });
    return id;
}

Graph::Id Graph::sum_all(Id x) {
    const Tensor& tx = val(x);
    double s = 0.0;
    for (double v : tx.data) s += v;
    Id id = make(Tensor::scalar(s), {x});
    set_back(id, [this, id, x] {
        Node& nn = node(id);
        Node& xn = node(x);
        const double g = nn.grad.data[0];
        for (int64_t i = 0; i < xn.grad.numel(); ++i) xn.grad.data[i] += g;
    });
    return id;
}

Graph::Id Graph::mean_all(Id x) {
    const Tensor& tx = val(x);
    double s = 0.0;
    for (double v : tx.data) s += v;
    const double inv = 1.0 / static_cast<double>(tx.numel());
    Id id = make(Tensor::scalar(s * inv), {x});
    set_back(id, [this, id, x, inv] {
        Node& nn = node(id);
        Node& xn = node(x);
        const double g = nn.grad.data[0] * inv;
        for (int64_t i = 0; i < xn.grad.numel(); ++i) xn.grad.data[i] += g;
    });
    return id;
}

Graph::Id Graph::mean_rows(Id x) {
    const Tensor& tx = val(x);
    if (tx.rank() != 2) throw ConfigError("mean_rows: input must be rank 2");
    const int n = tx.dim(0), d = tx.dim(1);
    Tensor out({d});
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < d; ++c) out.data[static_cast<size_t>(c)] += tx.at(r, c);
    for (int c = 0; c < d; ++c) out.data[static_cast<size_t>(c)] /= n;
    Id id = make(std::move(out), {x});
    set_back(id, [this, id, x, n, d] {
        Node& nn = node(id);
        Node& xn = node(x);
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < d; ++c) xn.grad.at(r, c) += nn.grad.data[static_cast<size_t>(c)] / n;
    });
    return id;
}

Graph::Id Graph::mse(Id a, Id b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    check_same_shape(ta, tb, "mse");
    double s = 0.0;
    for (int64_t i = 0; i < ta.numel(); ++i) {
        const double d = ta.data[i] - tb.data[i];
        s += d * d;
    }
    const double inv = 1.0 / static_cast<double>(ta.numel());
    Id id = make(Tensor::scalar(s * inv), {a, b});
    set_back(id, [this, id, a, b, inv] {
        Node& nn = node(id);
        Node& an = node(a);
        Node& bn = node(b);
        const double g = nn.grad.data[0] * 2.0 * inv;
        for (int64_t i = 0; i < an.value.numel(); ++i) {
            const double d = an.value.data[i] - bn.value.data[i];
            if (an.needs_grad) an.grad.data[i] += g * d;
            if (bn.needs_grad) bn.grad.data[i] -= g * d;
        }
    });
    return id;
}

Graph::Id Graph::custom(Tensor value, std::vector<Id> parents, std::function<void(Graph&, Id)> back_fn) {
    Id id = make(std::move(value), std::move(parents));
    if (nodes_[static_cast<size_t>(id)].needs_grad) {
        set_back(id, [this, id, fn = std::move(back_fn)] { fn(*this, id); });
    }
    return id;
}

void Graph::backward(Id loss) {
    if (backward_done_) throw UsageError("backward: tape already consumed");
    if (nodes_.empty() || loss < 0 || loss >= static_cast<Id>(nodes_.size()))
        throw UsageError("backward: no recorded forward computation for this loss");
    Node& ln = nodes_[static_cast<size_t>(loss)];
    if (ln.value.numel() != 1) throw UsageError("backward: loss must be scalar");
    if (!ln.needs_grad) {
        backward_done_ = true;
        return;  // loss does not depend on any parameter
    }
    // mark ancestors of the loss
    std::vector<Id> stack = {loss};
    ln.reachable = true;
    while (!stack.empty()) {
        Id id = stack.back();
        stack.pop_back();
        for (Id p : nodes_[static_cast<size_t>(id)].parents) {
            Node& pn = nodes_[static_cast<size_t>(p)];
            if (pn.needs_grad && !pn.reachable) {
                pn.reachable = true;
                stack.push_back(p);
            }
        }
    }
    ln.grad.data[0] = 1.0;
    for (Id id = loss; id >= 0; --id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.reachable && n.back) n.back();
    }
    for (const auto& [p, id] : param_leaves_) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.reachable) continue;
        for (int64_t i = 0; i < n.grad.numel(); ++i) p->grad.data[i] += n.grad.data[i];
    }
    backward_done_ = true;
}

}  // namespace dctts
