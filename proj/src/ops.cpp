#include "ar/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ar {

namespace {

constexpr double kInvSqrt2 = 0.7071067811865476;
constexpr double kInvSqrt2Pi = 0.3989422804014327;

Tensor make_output(std::vector<int> shape, std::vector<double> data, bool recorded) {
    Tensor t(std::move(shape), std::move(data), recorded);
    if (recorded) t.node()->leaf = false;
    return t;
}

bool recording(std::initializer_list<const Tensor*> inputs) {
    if (!active_tape()) return false;
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

void require_2d(const Tensor& a, const char* ctx) {
    if (a.ndim() != 2) {
        throw ShapeError(std::string(ctx) + ": expected 2-D tensor, got " + shape_str(a.shape()));
    }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_finite(a, "add lhs");
    check_finite(b, "add rhs");
    bool bias = false;
    if (a.shape() != b.shape()) {
        if (a.ndim() == 2 && b.ndim() == 1 && a.dim(1) == b.dim(0)) {
            bias = true;
        } else {
            throw ShapeError("add: incompatible shapes " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
        }
    }
    std::vector<double> out(a.size());
    if (bias) {
        int m = a.dim(0), n = a.dim(1);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                out[i * n + j] = a.data()[i * n + j] + b.data()[j];
    } else {
        for (std::size_t i = 0; i < a.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    }
    bool rec = recording({&a, &b});
    Tensor o = make_output(a.shape(), std::move(out), rec);
    if (rec) {
        active_tape()->record(
            [an = a.node(), bn = b.node(), on = o.node(), bias] {
                const auto& g = on->grad_buf();
                if (an->requires_grad) {
                    auto& ga = an->grad_buf();
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                }
                if (bn->requires_grad) {
                    auto& gb = bn->grad_buf();
                    if (bias) {
                        int n = static_cast<int>(bn->size());
                        int m = static_cast<int>(an->size()) / n;
                        for (int i = 0; i < m; ++i)
                            for (int j = 0; j < n; ++j) gb[j] += g[i * n + j];
                    } else {
                        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                    }
                }
            },
            o.node());
    }
    return o;
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor mul(const Tensor& a, const Tensor& b) {
    check_finite(a, "mul lhs");
    check_finite(b, "mul rhs");
    if (a.shape() != b.shape()) {
        throw ShapeError("mul: incompatible shapes " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    bool rec = recording({&a, &b});
    Tensor o = make_output(a.shape(), std::move(out), rec);
    if (rec) {
        active_tape()->record(
            [an = a.node(), bn = b.node(), on = o.node()] {
                const auto& g = on->grad_buf();
                if (an->requires_grad) {
                    auto& ga = an->grad_buf();
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bn->value[i];
                }
                if (bn->requires_grad) {
                    auto& gb = bn->grad_buf();
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * an->value[i];
                }
            },
            o.node());
    }
    return o;
}

Tensor scale(const Tensor& a, double s) {
    check_finite(a, "scale input");
    if (!std::isfinite(s)) throw NumericError("scale: non-finite scalar");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a.data()[i] * s;
    bool rec = recording({&a});
    Tensor o = make_output(a.shape(), std::move(out), rec);
    if (rec) {
        active_tape()->record(
            [an = a.node(), on = o.node(), s] {
                const auto& g = on->grad_buf();
                auto& ga = an->grad_buf();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
            },
            o.node());
    }
    return o;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_finite(a, "matmul lhs");
    check_finite(b, "matmul rhs");
    require_2d(a, "matmul lhs");
    require_2d(b, "matmul rhs");
    if (a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: inner dims differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i) {
        for (int p = 0; p < k; ++p) {
            double av = a.data()[i * k + p];
            if (av == 0.0) continue;
            const double* brow = b.data().data() + static_cast<std::size_t>(p) * n;
            double* orow = out.data() + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    bool rec = recording({&a, &b});
    Tensor o = make_output({m, n}, std::move(out), rec);
    if (rec) {
        active_tape()->record(
            [an = a.node(), bn = b.node(), on = o.node(), m, k, n] {
                const auto& g = on->grad_buf();
                if (an->requires_grad) {
                    auto& ga = an->grad_buf();
                    for (int i = 0; i < m; ++i)
                        for (int p = 0; p < k; ++p) {
                            double s = 0.0;
                            for (int j = 0; j < n; ++j)
                                s += g[i * n + j] * bn->value[p * n + j];
                            ga[i * k + p] += s;
                        }
                }
                if (bn->requires_grad) {
                    auto& gb = bn->grad_buf();
                    for (int p = 0; p < k; ++p)
                        for (int i = 0; i < m; ++i) {
                            double av = an->value[i * k + p];
                            if (av == 0.0) continue;
                            for (int j = 0; j < n; ++j)
                                gb[p * n + j] += av * g[i * n + j];
                        }
                }
            },
            o.node());
    }
    return o;
}

Tensor transpose(const Tensor& a) {
    check_finite(a, "transpose input");
    require_2d(a, "transpose");
    int m = a.dim(0), n = a.dim(1);
    std::vector<double> out(a.size());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out[j * m + i] = a.data()[i * n + j];
    bool rec = recording({&a});
    Tensor o = make_output({n, m}, std::move(out), rec);
    if (rec) {
        active_tape()->record(
            [an = a.node(), on = o.node(), m, n] {
                const auto& g = on->grad_buf();
                auto& ga = an->grad_buf();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
            },
            o.node());
    }
    return o;
}

Tensor reshape(const Tensor& a, std::vector<int> shape) {
    check_finite(a, "reshape input");
    std::size_t n = 1;
    for (int e : shape) n *= static_cast<std::size_t>(std::max(e, 0));
    if (n != a.size()) {
        throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape) +
                         " changes element count");
    }
    bool rec = recording({&a});
    Tensor o = make_output(std::move(shape), a.data(), rec);
    if (rec) {
        active_tape()->record(
            [an = a.node(), on = o.node()] {
                const auto& g = on->grad_buf();
                auto& ga = an->grad_buf();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            },
            o.node());
    }
    return o;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: empty input list");
    int n = parts[0].ndim() == 2 ? parts[0].dim(1) : -1;
    int rows = 0;
    for (const auto& p : parts) {
        check_finite(p, "concat_rows input");
        require_2d(p, "concat_rows");
        if (p.dim(1) != n)
            throw ShapeError("concat_rows: column mismatch " + shape_str(p.shape()));
        rows += p.dim(0);
    }
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(rows) * n);
    bool rec = active_tape() != nullptr &&
               std::any_of(parts.begin(), parts.end(),
                           [](const Tensor& t) { return t.requires_grad(); });
    for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    Tensor o = make_output({rows, n}, std::move(out), rec);
    if (rec) {
        std::vector<std::shared_ptr<detail::Node>> nodes;
        for (const auto& p : parts) nodes.push_back(p.node());
        active_tape()->record(
            [nodes, on = o.node()] {
                const auto& g = on->grad_buf();
                std::size_t off = 0;
                for (auto& pn : nodes) {
                    if (pn->requires_grad) {
                        auto& gp = pn->grad_buf();
                        for (std::size_t i = 0; i < pn->size(); ++i) gp[i] += g[off + i];
                    }
                    off += pn->size();
                }
            },
            o.node());
    }
    return o;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: empty input list");
    int m = parts[0].ndim() == 2 ? parts[0].dim(0) : -1;
    int cols = 0;
    for (const auto& p : parts) {
        check_finite(p, "concat_cols input");
        require_2d(p, "concat_cols");
        if (p.dim(0) != m) throw ShapeError("concat_cols: row mismatch " + shape_str(p.shape()));
        cols += p.dim(1);
    }
    std::vector<double> out(static_cast<std::size_t>(m) * cols);
    int coff = 0;
    for (const auto& p : parts) {
        int pn = p.dim(1);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < pn; ++j) out[i * cols + coff + j] = p.data()[i * pn + j];
        coff += pn;
    }
    bool rec = active_tape() != nullptr &&
               std::any_of(parts.begin(), parts.end(),
                           [](const Tensor& t) { return t.requires_grad(); });
    Tensor o = make_output({m, cols}, std::move(out), rec);
    if (rec) {
        std::vector<std::shared_ptr<detail::Node>> nodes;
        for (const auto& p : parts) nodes.push_back(p.node());
        active_tape()->record(
            [nodes, on = o.node(), m, cols] {
                const auto& g = on->grad_buf();
                int coff2 = 0;
                for (auto& pn : nodes) {
                    int w = static_cast<int>(pn->size()) / m;
                    if (pn->requires_grad) {
                        auto& gp = pn->grad_buf();
                        for (int i = 0; i < m; ++i)
                            for (int j = 0; j < w; ++j)
                                gp[i * w + j] += g[i * cols + coff2 + j];
                    }
                    coff2 += w;
                }
            },
            o.node());
    }
    return o;
}

Tensor slice_rows(const Tensor& a, int r0, int r1) {
    check_finite(a, "slice_rows input");
    require_2d(a, "slice_rows");
    if (r0 < 0 || r1 > a.dim(0) || r0 >= r1) {
        throw ShapeError("slice_rows: bad range [" + std::to_string(r0) + "," +
                         std::to_string(r1) + ") for " + shape_str(a.shape()));
    }
    int n = a.dim(1);
    std::vector<double> out(a.data().begin() + static_cast<std::size_t>(r0) * n,
                            a.data().begin() + static_cast<std::size_t>(r1) * n);
    bool rec = recording({&a});
    Tensor o = make_output({r1 - r0, n}, std::move(out), rec);
    if (rec) {
        active_tape()->record(
            [an = a.node(), on = o.node(), r0, n] {
                const auto& g = on->grad_buf();
                auto& ga = an->grad_buf();
                for (std::size_t i = 0; i < g.size(); ++i)
                    ga[static_cast<std::size_t>(r0) * n + i] += g[i];
            },
            o.node());
    }
    return o;
}

Tensor slice_cols(const Tensor& a, int c0, int c1) {
    check_finite(a, "slice_cols input");
    require_2d(a, "slice_cols");
    if (c0 < 0 || c1 > a.dim(1) || c0 >= c1) {
        throw ShapeError("slice_cols: bad range [" + std::to_string(c0) + "," +
                         std::to_string(c1) + ") for " + shape_str(a.shape()));
    }
    int m = a.dim(0), n = a.dim(1), w = c1 - c0;
    std::vector<double> out(static_cast<std::size_t>(m) * w);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < w; ++j) out[i * w + j] = a.data()[i * n + c0 + j];
    bool rec = recording({&a});
    Tensor o = make_output({m, w}, std::move(out), rec);
    if (rec) {
        active_tape()->record(
            [an = a.node(), on = o.node(), m, n, w, c0] {
                const auto& g = on->grad_buf();
                auto& ga = an->grad_buf();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < w; ++j) ga[i * n + c0 + j] += g[i * w + j];
            },
            o.node());
    }
    return o;
}

Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
    check_finite(table, "embedding table");
    require_2d(table, "embedding");
    int v = table.dim(0), d = table.dim(1);
    for (int id : ids) {
        if (id < 0 || id >= v) {
            throw ShapeError("embedding: id " + std::to_string(id) + " out of range [0," +
                             std::to_string(v) + ")");
        }
    }
    int m = static_cast<int>(ids.size());
    std::vector<double> out(static_cast<std::size_t>(m) * d);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < d; ++j) out[i * d + j] = table.data()[ids[i] * d + j];
    bool rec = recording({&table});
    Tensor o = make_output({m, d}, std::move(out), rec);
    if (rec) {
        active_tape()->record(
            [tn = table.node(), on = o.node(), ids, d] {
                const auto& g = on->grad_buf();
                auto& gt = tn->grad_buf();
                for (std::size_t i = 0; i < ids.size(); ++i)
                    for (int j = 0; j < d; ++j) gt[ids[i] * d + j] += g[i * d + j];
            },
            o.node());
    }
    return o;
}

Tensor gather_cols(const Tensor& a, const std::vector<int>& col_ids) {
    check_finite(a, "gather_cols input");
    require_2d(a, "gather_cols");
    int m = a.dim(0), n = a.dim(1);
    if (static_cast<int>(col_ids.size()) != m) {
        throw ShapeError("gather_cols: need one column id per row");
    }
    std::vector<double> out(m);
    for (int i = 0; i < m; ++i) {
        int c = col_ids[i];
        if (c < 0 || c >= n) throw ShapeError("gather_cols: id out of range");
        out[i] = a.data()[i * n + c];
    }
    bool rec = recording({&a});
    Tensor o = make_output({m}, std::move(out), rec);
    if (rec) {
        active_tape()->record(
            [an = a.node(), on = o.node(), col_ids, n] {
                const auto& g = on->grad_buf();
                auto& ga = an->grad_buf();
                for (std::size_t i = 0; i < col_ids.size(); ++i)
                    ga[i * n + col_ids[i]] += g[i];
            },
            o.node());
    }
    return o;
}

Tensor relu(const Tensor& a) {
    check_finite(a, "relu input");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = std::max(a.data()[i], 0.0);
    bool rec = recording({&a});
    Tensor o = make_output(a.shape(), std::move(out), rec);
    if (rec) {
        active_tape()->record(
            [an = a.node(), on = o.node()] {
                const auto& g = on->grad_buf();
                auto& ga = an->grad_buf();
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (an->value[i] > 0.0) ga[i] += g[i];
            },
            o.node());
    }
    return o;
}

Tensor gelu(const Tensor& a) {
    check_finite(a, "gelu input");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        double x = a.data()[i];
        out[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
    }
    bool rec = recording({&a});
    Tensor o = make_output(a.shape(), std::move(out), rec);
    if (rec) {
        active_tape()->record(
            [an = a.node(), on = o.node()] {
                const auto& g = on->grad_buf();
                auto& ga = an->grad_buf();
                for (std::size_t i = 0; i < g.size(); ++i) {
                    double x = an->value[i];
                    double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
                    double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
                    ga[i] += g[i] * (cdf + x * pdf);
                }
            },
            o.node());
    }
    return o;
}

namespace {

// rows of any 2-D tensor; 1-D is one row
std::pair<int, int> rows_cols(const Tensor& a) {
    if (a.ndim() == 1) return {1, a.dim(0)};
    if (a.ndim() == 2) return {a.dim(0), a.dim(1)};
    throw ShapeError("softmax family: expected 1-D or 2-D, got " + shape_str(a.shape()));
}

}  // namespace

Tensor softmax_rows(const Tensor& a) {
    check_finite(a, "softmax input");
    auto [m, n] = rows_cols(a);
    std::vector<double> out(a.size());
    for (int i = 0; i < m; ++i) {
        const double* row = a.data().data() + static_cast<std::size_t>(i) * n;
        double mx = *std::max_element(row, row + n);
        double z = 0.0;
        for (int j = 0; j < n; ++j) z += std::exp(row[j] - mx);
        for (int j = 0; j < n; ++j) out[i * n + j] = std::exp(row[j] - mx) / z;
    }
    bool rec = recording({&a});
    Tensor o = make_output(a.shape(), std::move(out), rec);
    if (rec) {
        active_tape()->record(
            [an = a.node(), on = o.node(), m, n] {
                const auto& g = on->grad_buf();
                auto& ga = an->grad_buf();
                for (int i = 0; i < m; ++i) {
                    double dot = 0.0;
                    for (int j = 0; j < n; ++j) dot += g[i * n + j] * on->value[i * n + j];
                    for (int j = 0; j < n; ++j)
                        ga[i * n + j] += on->value[i * n + j] * (g[i * n + j] - dot);
                }
            },
            o.node());
    }
    return o;
}

Tensor log_softmax_rows(const Tensor& a) {
    check_finite(a, "log_softmax input");
    auto [m, n] = rows_cols(a);
    std::vector<double> out(a.size());
    for (int i = 0; i < m; ++i) {
        const double* row = a.data().data() + static_cast<std::size_t>(i) * n;
        double mx = *std::max_element(row, row + n);
        double z = 0.0;
        for (int j = 0; j < n; ++j) z += std::exp(row[j] - mx);
        double lse = mx + std::log(z);
        for (int j = 0; j < n; ++j) out[i * n + j] = row[j] - lse;
    }
    bool rec = recording({&a});
    Tensor o = make_output(a.shape(), std::move(out), rec);
    if (rec) {
        active_tape()->record(
            [an = a.node(), on = o.node(), m, n] {
                const auto& g = on->grad_buf();
                auto& ga = an->grad_buf();
                for (int i = 0; i < m; ++i) {
                    double gsum = 0.0;
                    for (int j = 0; j < n; ++j) gsum += g[i * n + j];
                    for (int j = 0; j < n; ++j)
                        ga[i * n + j] += g[i * n + j] - std::exp(on->value[i * n + j]) * gsum;
                }
            },
            o.node());
    }
    return o;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    check_finite(x, "layer_norm input");
    check_finite(gain, "layer_norm gain");
    check_finite(bias, "layer_norm bias");
    auto [m, n] = rows_cols(x);
    if (gain.ndim() != 1 || gain.dim(0) != n || bias.ndim() != 1 || bias.dim(0) != n) {
        throw ShapeError("layer_norm: gain/bias must be [" + std::to_string(n) + "]");
    }
    std::vector<double> out(x.size());
    std::vector<double> xhat(x.size());
    std::vector<double> inv_sigma(m);
    for (int i = 0; i < m; ++i) {
        const double* row = x.data().data() + static_cast<std::size_t>(i) * n;
        double mu = std::accumulate(row, row + n, 0.0) / n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= n;
        double is = 1.0 / std::sqrt(var + eps);
        inv_sigma[i] = is;
        for (int j = 0; j < n; ++j) {
            double xh = (row[j] - mu) * is;
            xhat[i * n + j] = xh;
            out[i * n + j] = gain.data()[j] * xh + bias.data()[j];
        }
    }
    bool rec = recording({&x, &gain, &bias});
    Tensor o = make_output(x.shape(), std::move(out), rec);
    if (rec) {
        active_tape()->record(
            [xn = x.node(), gn = gain.node(), bn = bias.node(), on = o.node(),
             xhat = std::move(xhat), inv_sigma = std::move(inv_sigma), m, n] {
                const auto& g = on->grad_buf();
                for (int i = 0; i < m; ++i) {
                    double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                    for (int j = 0; j < n; ++j) {
                        double dxh = g[i * n + j] * gn->value[j];
                        mean_dxh += dxh;
                        mean_dxh_xh += dxh * xhat[i * n + j];
                    }
                    mean_dxh /= n;
                    mean_dxh_xh /= n;
                    if (xn->requires_grad) {
                        auto& gx = xn->grad_buf();
                        for (int j = 0; j < n; ++j) {
                            double dxh = g[i * n + j] * gn->value[j];
                            gx[i * n + j] += inv_sigma[i] *
                                             (dxh - mean_dxh - xhat[i * n + j] * mean_dxh_xh);
                        }
                    }
                    if (gn->requires_grad) {
                        auto& gg = gn->grad_buf();
                        for (int j = 0; j < n; ++j) gg[j] += g[i * n + j] * xhat[i * n + j];
                    }
                    if (bn->requires_grad) {
                        auto& gb = bn->grad_buf();
                        for (int j = 0; j < n; ++j) gb[j] += g[i * n + j];
                    }
                }
            },
            o.node());
    }
    return o;
}

Tensor dropout(const Tensor& x, const Tensor& mask) {
    if (mask.shape() != x.shape()) {
        throw ShapeError("dropout: mask shape " + shape_str(mask.shape()) + " != input " +
                         shape_str(x.shape()));
    }
    return mul(x, mask);
}

Tensor reduce_sum(const Tensor& a) {
    check_finite(a, "reduce_sum input");
    double s = std::accumulate(a.data().begin(), a.data().end(), 0.0);
    bool rec = recording({&a});
    Tensor o = make_output({1}, {s}, rec);
    if (rec) {
        active_tape()->record(
            [an = a.node(), on = o.node()] {
                double g = on->grad_buf()[0];
                auto& ga = an->grad_buf();
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
            },
            o.node());
    }
    return o;
}

Tensor reduce_mean(const Tensor& a) {
    return scale(reduce_sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor logsumexp(const Tensor& a) {
    check_finite(a, "logsumexp input");
    double mx = *std::max_element(a.data().begin(), a.data().end());
    if (a.size() == 1) {
        // exact for single-element inputs
        Tensor o = make_output({1}, {a.data()[0]}, recording({&a}));
        if (o.requires_grad()) {
            active_tape()->record(
                [an = a.node(), on = o.node()] { an->grad_buf()[0] += on->grad_buf()[0]; },
                o.node());
        }
        return o;
    }
    double z = 0.0;
    for (double v : a.data()) z += std::exp(v - mx);
    double lse = mx + std::log(z);
    bool rec = recording({&a});
    Tensor o = make_output({1}, {lse}, rec);
    if (rec) {
        active_tape()->record(
            [an = a.node(), on = o.node(), lse] {
                double g = on->grad_buf()[0];
                auto& ga = an->grad_buf();
                for (std::size_t i = 0; i < ga.size(); ++i)
                    ga[i] += g * std::exp(an->value[i] - lse);
            },
            o.node());
    }
    return o;
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
              int pad) {
    check_finite(input, "conv2d input");
    check_finite(weight, "conv2d weight");
    check_finite(bias, "conv2d bias");
    if (input.ndim() != 3 || weight.ndim() != 4 || bias.ndim() != 1) {
        throw ShapeError("conv2d: expected input [C,H,W], weight [O,C,kh,kw], bias [O]");
    }
    int cin = input.dim(0), h = input.dim(1), w = input.dim(2);
    int cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
    if (weight.dim(1) != cin || bias.dim(0) != cout) {
        throw ShapeError("conv2d: channel mismatch, input " + shape_str(input.shape()) +
                         " weight " + shape_str(weight.shape()));
    }
    int ho = (h + 2 * pad - kh) / stride + 1;
    int wo = (w + 2 * pad - kw) / stride + 1;
    if (ho <= 0 || wo <= 0) throw ShapeError("conv2d: output would be empty");
    std::vector<double> out(static_cast<std::size_t>(cout) * ho * wo);
    auto in_at = [&](int c, int y, int x) -> double {
        if (y < 0 || y >= h || x < 0 || x >= w) return 0.0;
        return input.data()[(static_cast<std::size_t>(c) * h + y) * w + x];
    };
    for (int oc = 0; oc < cout; ++oc)
        for (int oy = 0; oy < ho; ++oy)
            for (int ox = 0; ox < wo; ++ox) {
                double s = bias.data()[oc];
                for (int ic = 0; ic < cin; ++ic)
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx)
                            s += in_at(ic, oy * stride - pad + ky, ox * stride - pad + kx) *
                                 weight.data()[((oc * cin + ic) * kh + ky) * kw + kx];
                out[(static_cast<std::size_t>(oc) * ho + oy) * wo + ox] = s;
            }
    bool rec = recording({&input, &weight, &bias});
    Tensor o = make_output({cout, ho, wo}, std::move(out), rec);
    if (rec) {
        active_tape()->record(
            [in = input.node(), wn = weight.node(), bn = bias.node(), on = o.node(), cin, h, w,
             cout, kh, kw, ho, wo, stride, pad] {
                const auto& g = on->grad_buf();
                for (int oc = 0; oc < cout; ++oc)
                    for (int oy = 0; oy < ho; ++oy)
                        for (int ox = 0; ox < wo; ++ox) {
                            double go = g[(static_cast<std::size_t>(oc) * ho + oy) * wo + ox];
                            if (bn->requires_grad) bn->grad_buf()[oc] += go;
                            for (int ic = 0; ic < cin; ++ic)
                                for (int ky = 0; ky < kh; ++ky)
                                    for (int kx = 0; kx < kw; ++kx) {
                                        int iy = oy * stride - pad + ky;
                                        int ix = ox * stride - pad + kx;
                                        if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                                        std::size_t ii =
                                            (static_cast<std::size_t>(ic) * h + iy) * w + ix;
                                        std::size_t wi =
                                            ((static_cast<std::size_t>(oc) * cin + ic) * kh +
                                             ky) * kw + kx;
                                        if (wn->requires_grad)
                                            wn->grad_buf()[wi] += go * in->value[ii];
                                        if (in->requires_grad)
                                            in->grad_buf()[ii] += go * wn->value[wi];
                                    }
                        }
            },
            o.node());
    }
    return o;
}

Tensor make_dropout_mask(std::vector<int> shape, double p, std::mt19937_64& rng) {
    if (p < 0.0 || p >= 1.0) throw NumericError("dropout p must be in [0,1)");
    Tensor m = Tensor::zeros(std::move(shape));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double keep = 1.0 - p;
    for (auto& v : m.mutable_data()) v = (u(rng) < p) ? 0.0 : 1.0 / keep;
    return m;
}

double grad_check(const std::function<Tensor(const Tensor&)>& fn, const Tensor& point,
                  double epsilon) {
    if (!(epsilon > 0.0 && epsilon <= 1e-3)) {
        throw NumericError("grad_check: epsilon must be in (0, 1e-3]");
    }
    Tensor x(point.shape(), point.data(), /*requires_grad=*/true);
    Tape tape;
    std::vector<double> analytic;
    {
        TapeScope scope(tape);
        Tensor out = fn(x);
        if (out.size() != 1) throw ShapeError("grad_check: fn must return a scalar");
        tape.backward(out);
        analytic = x.grad();
    }
    auto eval = [&](const std::vector<double>& data) {
        Tensor p(point.shape(), data, false);
        Tensor out = fn(p);
        return out.item();
    };
    double max_err = 0.0;
    std::vector<double> probe = point.data();
    for (std::size_t i = 0; i < probe.size(); ++i) {
        double saved = probe[i];
        double fp, fm;
        try {
            probe[i] = saved + epsilon;
            fp = eval(probe);
            probe[i] = saved - epsilon;
            fm = eval(probe);
        } catch (const NumericError& e) {
            throw NumericError("grad_check: function non-finite near coordinate " +
                               std::to_string(i) + ": " + e.what());
        }
        probe[i] = saved;
        double numeric = (fp - fm) / (2.0 * epsilon);
        if (!std::isfinite(numeric)) {
            throw NumericError("grad_check: non-finite numeric derivative at coordinate " +
                               std::to_string(i));
        }
        double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
        max_err = std::max(max_err, std::abs(analytic[i] - numeric) / denom);
    }
    return max_err;
}

}  // namespace ar
