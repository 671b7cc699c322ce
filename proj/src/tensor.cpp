#include "slideseg/tensor.hpp"

#include "slideseg/error.hpp"
#include "slideseg/kernels.hpp"

#include <algorithm>

namespace slideseg {

namespace {

void check_matmul(const Mat& a, const Mat& b, bool ta, bool tb, int& m, int& k, int& n) {
    m = ta ? a.cols : a.rows;
    k = ta ? a.rows : a.cols;
    const int kb = tb ? b.cols : b.rows;
    n = tb ? b.rows : b.cols;
    if (k != kb) throw ConfigError("matmul inner dimension mismatch");
}

}  // namespace

Mat matmul(const Mat& a, const Mat& b, bool trans_a, bool trans_b) {
    int m, k, n;
    check_matmul(a, b, trans_a, trans_b, m, k, n);
    Mat c(m, n);
    if (m && n && k) kernels::gemm(a.v.data(), b.v.data(), c.v.data(), m, k, n, trans_a, trans_b, false);
    return c;
}

void matmul_acc(const Mat& a, const Mat& b, Mat& c, bool trans_a, bool trans_b) {
    int m, k, n;
    check_matmul(a, b, trans_a, trans_b, m, k, n);
    if (c.rows != m || c.cols != n) throw ConfigError("matmul output shape mismatch");
    if (m && n && k) kernels::gemm(a.v.data(), b.v.data(), c.v.data(), m, k, n, trans_a, trans_b, true);
}

void add_inplace(Mat& a, const Mat& b) {
    if (!a.same_shape(b)) throw ConfigError("add shape mismatch");
    for (std::size_t i = 0; i < a.v.size(); ++i) a.v[i] += b.v[i];
}

Mat add(const Mat& a, const Mat& b) {
    Mat c = a;
    add_inplace(c, b);
    return c;
}

void scale_inplace(Mat& a, double s) {
    for (auto& x : a.v) x *= s;
}

void add_row_broadcast(Mat& a, const Mat& row) {
    if (row.cols != a.cols) throw ConfigError("broadcast shape mismatch");
    for (int r = 0; r < a.rows; ++r) {
        double* p = a.row(r);
        for (int c = 0; c < a.cols; ++c) p[c] += row.v[static_cast<std::size_t>(c)];
    }
}

void accumulate_column_sums(const Mat& a, Mat& out) {
    for (int r = 0; r < a.rows; ++r) {
        const double* p = a.row(r);
        for (int c = 0; c < a.cols; ++c) out.v[static_cast<std::size_t>(c)] += p[c];
    }
}

Mat rows_slice(const Mat& a, int begin, int count) {
    Mat out(count, a.cols);
    std::copy(a.row(begin), a.row(begin) + static_cast<std::size_t>(count) * a.cols, out.v.begin());
    return out;
}

Mat columns_slice(const Mat& a, int begin, int count) {
    Mat out(a.rows, count);
    for (int r = 0; r < a.rows; ++r) std::copy(a.row(r) + begin, a.row(r) + begin + count, out.row(r));
    return out;
}

void set_columns(Mat& dst, const Mat& src, int begin) {
    for (int r = 0; r < src.rows; ++r) std::copy(src.row(r), src.row(r) + src.cols, dst.row(r) + begin);
}

void add_columns(Mat& dst, const Mat& src, int begin) {
    for (int r = 0; r < src.rows; ++r) {
        double* d = dst.row(r) + begin;
        const double* s = src.row(r);
        for (int c = 0; c < src.cols; ++c) d[c] += s[c];
    }
}

Mat vstack(const Mat& top, const Mat& bottom) {
    if (top.empty()) return bottom;
    if (bottom.empty()) return top;
    if (top.cols != bottom.cols) throw ConfigError("vstack column mismatch");
    Mat out(top.rows + bottom.rows, top.cols);
    std::copy(top.v.begin(), top.v.end(), out.v.begin());
    std::copy(bottom.v.begin(), bottom.v.end(), out.v.begin() + static_cast<std::ptrdiff_t>(top.v.size()));
    return out;
}

double dot(const Mat& a, const Mat& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.v.size(); ++i) s += a.v[i] * b.v[i];
    return s;
}

void fill_normal(Mat& m, std::mt19937_64& rng, double std) {
    std::normal_distribution<double> dist(0.0, std);
    for (auto& x : m.v) x = dist(rng);
}

const char* to_string(ParamGroup g) {
    switch (g) {
        case ParamGroup::Backbone: return "backbone";
        case ParamGroup::Adapter: return "adapter";
        case ParamGroup::PatchEmbed: return "patch_embed";
        case ParamGroup::Prompt: return "prompt";
        case ParamGroup::Decoder: return "decoder";
    }
    return "decoder";
}

ParamGroup parse_param_group(const std::string& s) {
    if (s == "backbone") return ParamGroup::Backbone;
    if (s == "adapter") return ParamGroup::Adapter;
    if (s == "patch_embed") return ParamGroup::PatchEmbed;
    if (s == "prompt") return ParamGroup::Prompt;
    if (s == "decoder") return ParamGroup::Decoder;
    throw CorruptData("unknown parameter group: " + s);
}

int ParamSet::add(std::string name, int rows, int cols, ParamGroup group) {
    if (find(name) >= 0) throw ConfigError("duplicate parameter " + name);
    params_.push_back(Param{std::move(name), Mat(rows, cols), group});
    return static_cast<int>(params_.size()) - 1;
}

int ParamSet::find(const std::string& name) const {
    for (std::size_t i = 0; i < params_.size(); ++i)
        if (params_[i].name == name) return static_cast<int>(i);
    return -1;
}

std::size_t ParamSet::count_values(bool trainable_only) const {
    std::size_t n = 0;
    for (const auto& p : params_)
        if (!trainable_only || is_trainable(p.group)) n += p.value.size();
    return n;
}

Grads Grads::zeros_like(const ParamSet& ps) {
    Grads g;
    g.g.resize(static_cast<std::size_t>(ps.size()));
    for (int i = 0; i < ps.size(); ++i)
        if (ps.trainable(i)) g.g[static_cast<std::size_t>(i)] = Mat(ps.value(i).rows, ps.value(i).cols);
    return g;
}

void Grads::add(const Grads& o) {
    for (std::size_t i = 0; i < g.size(); ++i)
        if (!g[i].empty()) add_inplace(g[i], o.g[i]);
}

void Grads::scale(double s) {
    for (auto& m : g) scale_inplace(m, s);
}

void Grads::zero() {
    for (auto& m : g) std::fill(m.v.begin(), m.v.end(), 0.0);
}

}  // namespace slideseg
