#include "slideseg/layers.hpp"

#include "slideseg/error.hpp"

#include <algorithm>
#include <cmath>

namespace slideseg {

Linear Linear::create(ParamSet& ps, const std::string& name, int in, int out, ParamGroup group,
                      std::mt19937_64& rng, double std) {
    Linear l;
    l.in = in;
    l.out = out;
    l.w = ps.add(name + ".w", out, in, group);
    l.b = ps.add(name + ".b", 1, out, group);
    fill_normal(ps.value(l.w), rng, std > 0 ? std : 1.0 / std::sqrt(static_cast<double>(in)));
    return l;
}

Mat Linear::forward(const ParamSet& ps, const Mat& x) const {
    if (x.cols != in) throw ConfigError("linear input width mismatch");
    Mat y = matmul(x, ps.value(w), false, true);
    add_row_broadcast(y, ps.value(b));
    return y;
}

Mat Linear::backward(const ParamSet& ps, const Mat& x, const Mat& dy, Grads& grads) const {
    if (Mat* gw = grads.at(ps, w)) matmul_acc(dy, x, *gw, true, false);
    if (Mat* gb = grads.at(ps, b)) accumulate_column_sums(dy, *gb);
    return matmul(dy, ps.value(w));
}

LoraLinear LoraLinear::create(ParamSet& ps, const std::string& name, int in, int out, ParamGroup base_group,
                              int rank, double alpha, std::mt19937_64& rng, double std) {
    LoraLinear l;
    l.base = Linear::create(ps, name, in, out, base_group, rng, std);
    l.rank = rank;
    if (rank > 0) {
        l.scale = alpha / rank;
        l.a = ps.add(name + ".lora_a", rank, in, ParamGroup::Adapter);
        l.b = ps.add(name + ".lora_b", out, rank, ParamGroup::Adapter);
        fill_normal(ps.value(l.a), rng, 1.0 / std::sqrt(static_cast<double>(in)));
    }
    return l;
}

Mat LoraLinear::forward(const ParamSet& ps, const Mat& x, Cache& cache) const {
    Mat y = base.forward(ps, x);
    if (rank > 0) {
        cache.xa = matmul(x, ps.value(a), false, true);
        Mat delta = matmul(cache.xa, ps.value(b), false, true);
        scale_inplace(delta, scale);
        add_inplace(y, delta);
    }
    return y;
}

Mat LoraLinear::backward(const ParamSet& ps, const Mat& x, const Cache& cache, const Mat& dy, Grads& grads) const {
    Mat dx = base.backward(ps, x, dy, grads);
    if (rank > 0) {
        Mat dxa = matmul(dy, ps.value(b));  // (N x r)
        scale_inplace(dxa, scale);
        if (Mat* gb = grads.at(ps, b)) {
            Mat t = matmul(dy, cache.xa, true, false);
            scale_inplace(t, scale);
            add_inplace(*gb, t);
        }
        if (Mat* ga = grads.at(ps, a)) matmul_acc(dxa, x, *ga, true, false);
        matmul_acc(dxa, ps.value(a), dx);
    }
    return dx;
}

std::vector<double> lora_forward(const Mat& base_weight, const Mat& a, const Mat& b, double scale,
                                 const std::vector<double>& x) {
    const int in = base_weight.cols, out = base_weight.rows;
    if (static_cast<int>(x.size()) != in || a.cols != in || b.rows != out || a.rows != b.cols)
        throw ConfigError("lora_forward shape mismatch");
    Mat xv(1, in);
    xv.v = x;
    Mat y = matmul(xv, base_weight, false, true);
    Mat xa = matmul(xv, a, false, true);
    Mat d = matmul(xa, b, false, true);
    std::vector<double> out_v(static_cast<std::size_t>(out));
    for (int i = 0; i < out; ++i) out_v[static_cast<std::size_t>(i)] = y.v[static_cast<std::size_t>(i)] + scale * d.v[static_cast<std::size_t>(i)];
    return out_v;
}

LayerNorm LayerNorm::create(ParamSet& ps, const std::string& name, int dim, ParamGroup group) {
    LayerNorm ln;
    ln.dim = dim;
    ln.gamma = ps.add(name + ".gamma", 1, dim, group);
    ln.beta = ps.add(name + ".beta", 1, dim, group);
    std::fill(ps.value(ln.gamma).v.begin(), ps.value(ln.gamma).v.end(), 1.0);
    return ln;
}

Mat LayerNorm::forward(const ParamSet& ps, const Mat& x, Cache& cache) const {
    constexpr double eps = 1e-6;
    const auto& g = ps.value(gamma).v;
    const auto& bt = ps.value(beta).v;
    Mat y(x.rows, x.cols);
    cache.xhat = Mat(x.rows, x.cols);
    cache.rstd.assign(static_cast<std::size_t>(x.rows), 0.0);
    for (int r = 0; r < x.rows; ++r) {
        const double* p = x.row(r);
        double mean = 0;
        for (int c = 0; c < x.cols; ++c) mean += p[c];
        mean /= x.cols;
        double var = 0;
        for (int c = 0; c < x.cols; ++c) var += (p[c] - mean) * (p[c] - mean);
        var /= x.cols;
        const double rstd = 1.0 / std::sqrt(var + eps);
        cache.rstd[static_cast<std::size_t>(r)] = rstd;
        double* xh = cache.xhat.row(r);
        double* yr = y.row(r);
        for (int c = 0; c < x.cols; ++c) {
            xh[c] = (p[c] - mean) * rstd;
            yr[c] = xh[c] * g[static_cast<std::size_t>(c)] + bt[static_cast<std::size_t>(c)];
        }
    }
    return y;
}

Mat LayerNorm::backward(const ParamSet& ps, const Cache& cache, const Mat& dy, Grads& grads) const {
    const auto& g = ps.value(gamma).v;
    Mat* gg = grads.at(ps, gamma);
    Mat* gb = grads.at(ps, beta);
    Mat dx(dy.rows, dy.cols);
    const double n = dy.cols;
    for (int r = 0; r < dy.rows; ++r) {
        const double* d = dy.row(r);
        const double* xh = cache.xhat.row(r);
        double sum_dxh = 0, sum_dxh_xh = 0;
        for (int c = 0; c < dy.cols; ++c) {
            const double dxh = d[c] * g[static_cast<std::size_t>(c)];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xh[c];
            if (gg) gg->v[static_cast<std::size_t>(c)] += d[c] * xh[c];
            if (gb) gb->v[static_cast<std::size_t>(c)] += d[c];
        }
        const double rstd = cache.rstd[static_cast<std::size_t>(r)];
        double* o = dx.row(r);
        for (int c = 0; c < dy.cols; ++c) {
            const double dxh = d[c] * g[static_cast<std::size_t>(c)];
            o[c] = rstd * (dxh - sum_dxh / n - xh[c] * sum_dxh_xh / n);
        }
    }
    return dx;
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
}

Mat gelu(const Mat& x) {
    Mat y(x.rows, x.cols);
    for (std::size_t i = 0; i < x.v.size(); ++i) {
        const double t = x.v[i];
        y.v[i] = 0.5 * t * (1.0 + std::tanh(kGeluC * (t + 0.044715 * t * t * t)));
    }
    return y;
}

Mat gelu_backward(const Mat& x, const Mat& dy) {
    Mat dx(x.rows, x.cols);
    for (std::size_t i = 0; i < x.v.size(); ++i) {
        const double t = x.v[i];
        const double u = kGeluC * (t + 0.044715 * t * t * t);
        const double th = std::tanh(u);
        const double du = kGeluC * (1.0 + 3.0 * 0.044715 * t * t);
        dx.v[i] = dy.v[i] * (0.5 * (1.0 + th) + 0.5 * t * (1.0 - th * th) * du);
    }
    return dx;
}

Mlp Mlp::create(ParamSet& ps, const std::string& name, int in, int hidden, int out, ParamGroup group,
                std::mt19937_64& rng, double out_std) {
    Mlp m;
    m.fc1 = Linear::create(ps, name + ".fc1", in, hidden, group, rng);
    m.fc2 = Linear::create(ps, name + ".fc2", hidden, out, group, rng, out_std);
    return m;
}

Mat Mlp::forward(const ParamSet& ps, const Mat& x, Cache& cache) const {
    cache.x = x;
    cache.h = fc1.forward(ps, x);
    cache.a = gelu(cache.h);
    return fc2.forward(ps, cache.a);
}

Mat Mlp::backward(const ParamSet& ps, const Cache& cache, const Mat& dy, Grads& grads) const {
    Mat da = fc2.backward(ps, cache.a, dy, grads);
    Mat dh = gelu_backward(cache.h, da);
    return fc1.backward(ps, cache.x, dh, grads);
}

Attention Attention::create(ParamSet& ps, const std::string& name, int dim, int heads, ParamGroup group,
                            int lora_rank, double lora_alpha, std::mt19937_64& rng, double out_std) {
    if (heads < 1 || dim % heads != 0) throw ConfigError("attention dim must be divisible by heads");
    Attention at;
    at.dim = dim;
    at.heads = heads;
    at.q = LoraLinear::create(ps, name + ".q", dim, dim, group, lora_rank, lora_alpha, rng);
    at.k = Linear::create(ps, name + ".k", dim, dim, group, rng);
    at.v = LoraLinear::create(ps, name + ".v", dim, dim, group, lora_rank, lora_alpha, rng);
    at.o = Linear::create(ps, name + ".o", dim, dim, group, rng, out_std);
    return at;
}

Mat Attention::forward(const ParamSet& ps, const Mat& qin, const Mat& kin, const Mat& vin, Cache& cache) const {
    cache.qin = qin;
    cache.kin = kin;
    cache.vin = vin;
    cache.qp = q.forward(ps, qin, cache.qc);
    cache.kp = k.forward(ps, kin);
    cache.vp = v.forward(ps, vin, cache.vc);
    const int dh = dim / heads;
    const double s = 1.0 / std::sqrt(static_cast<double>(dh));
    cache.probs.assign(static_cast<std::size_t>(heads), Mat());
    cache.merged = Mat(qin.rows, dim);
    for (int h = 0; h < heads; ++h) {
        const Mat qh = columns_slice(cache.qp, h * dh, dh);
        const Mat kh = columns_slice(cache.kp, h * dh, dh);
        const Mat vh = columns_slice(cache.vp, h * dh, dh);
        Mat p = matmul(qh, kh, false, true);
        for (int r = 0; r < p.rows; ++r) {
            double* row = p.row(r);
            double mx = -1e300;
            for (int c = 0; c < p.cols; ++c) mx = std::max(mx, row[c] * s);
            double sum = 0;
            for (int c = 0; c < p.cols; ++c) {
                row[c] = std::exp(row[c] * s - mx);
                sum += row[c];
            }
            for (int c = 0; c < p.cols; ++c) row[c] /= sum;
        }
        set_columns(cache.merged, matmul(p, vh), h * dh);
        cache.probs[static_cast<std::size_t>(h)] = std::move(p);
    }
    return o.forward(ps, cache.merged);
}

Attention::InputGrads Attention::backward(const ParamSet& ps, const Cache& cache, const Mat& dy, Grads& grads) const {
    const Mat dmerged = o.backward(ps, cache.merged, dy, grads);
    const int dh = dim / heads;
    const double s = 1.0 / std::sqrt(static_cast<double>(dh));
    Mat dqp(cache.qp.rows, dim), dkp(cache.kp.rows, dim), dvp(cache.vp.rows, dim);
    for (int h = 0; h < heads; ++h) {
        const Mat& p = cache.probs[static_cast<std::size_t>(h)];
        const Mat qh = columns_slice(cache.qp, h * dh, dh);
        const Mat kh = columns_slice(cache.kp, h * dh, dh);
        const Mat vh = columns_slice(cache.vp, h * dh, dh);
        const Mat doh = columns_slice(dmerged, h * dh, dh);
        Mat dp = matmul(doh, vh, false, true);
        set_columns(dvp, matmul(p, doh, true, false), h * dh);
        for (int r = 0; r < dp.rows; ++r) {
            double* d = dp.row(r);
            const double* pr = p.row(r);
            double acc = 0;
            for (int c = 0; c < dp.cols; ++c) acc += d[c] * pr[c];
            for (int c = 0; c < dp.cols; ++c) d[c] = pr[c] * (d[c] - acc) * s;
        }
        set_columns(dqp, matmul(dp, kh), h * dh);
        set_columns(dkp, matmul(dp, qh, true, false), h * dh);
    }
    InputGrads g;
    g.dq = q.backward(ps, cache.qin, cache.qc, dqp, grads);
    g.dk = k.backward(ps, cache.kin, dkp, grads);
    g.dv = v.backward(ps, cache.vin, cache.vc, dvp, grads);
    return g;
}

}  // namespace slideseg
