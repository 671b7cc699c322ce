#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace slideseg {

// Dense row-major matrix of doubles. Token sequences are (tokens x channels).
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    Mat() = default;
    Mat(int r, int c, double fill = 0.0) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, fill) {}

    double& operator()(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
    double operator()(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }
    double* row(int r) { return v.data() + static_cast<std::size_t>(r) * cols; }
    const double* row(int r) const { return v.data() + static_cast<std::size_t>(r) * cols; }
    std::size_t size() const { return v.size(); }
    bool empty() const { return v.empty(); }
    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
    bool operator==(const Mat&) const = default;
};

// op(a) * op(b)
Mat matmul(const Mat& a, const Mat& b, bool trans_a = false, bool trans_b = false);
// c += op(a) * op(b)
void matmul_acc(const Mat& a, const Mat& b, Mat& c, bool trans_a = false, bool trans_b = false);

void add_inplace(Mat& a, const Mat& b);
Mat add(const Mat& a, const Mat& b);
void scale_inplace(Mat& a, double s);
void add_row_broadcast(Mat& a, const Mat& row);  // row is 1 x cols
void accumulate_column_sums(const Mat& a, Mat& out);  // out (1 x cols) += sum over rows
Mat rows_slice(const Mat& a, int begin, int count);
Mat columns_slice(const Mat& a, int begin, int count);
void set_columns(Mat& dst, const Mat& src, int begin);
void add_columns(Mat& dst, const Mat& src, int begin);
Mat vstack(const Mat& top, const Mat& bottom);

double dot(const Mat& a, const Mat& b);

// Fills with N(0, std^2).
void fill_normal(Mat& m, std::mt19937_64& rng, double std);

enum class ParamGroup { Backbone, Adapter, PatchEmbed, Prompt, Decoder };
const char* to_string(ParamGroup g);
ParamGroup parse_param_group(const std::string& s);
inline bool is_trainable(ParamGroup g) { return g != ParamGroup::Backbone; }

struct Param {
    std::string name;
    Mat value;
    ParamGroup group = ParamGroup::Decoder;
};

// Flat, ordered collection of named parameters. Layers refer to entries by
// index, so a ParamSet can be copied as a weight snapshot.
class ParamSet {
public:
    int add(std::string name, int rows, int cols, ParamGroup group);
    Param& operator[](int id) { return params_[static_cast<std::size_t>(id)]; }
    const Param& operator[](int id) const { return params_[static_cast<std::size_t>(id)]; }
    const Mat& value(int id) const { return params_[static_cast<std::size_t>(id)].value; }
    Mat& value(int id) { return params_[static_cast<std::size_t>(id)].value; }
    bool trainable(int id) const { return is_trainable(params_[static_cast<std::size_t>(id)].group); }
    int size() const { return static_cast<int>(params_.size()); }
    int find(const std::string& name) const;  // -1 when absent
    std::size_t count_values(bool trainable_only) const;

    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

private:
    std::vector<Param> params_;
};

// Gradient buffers aligned with a ParamSet; frozen entries stay empty.
struct Grads {
    std::vector<Mat> g;

    static Grads zeros_like(const ParamSet& ps);
    Mat* at(const ParamSet& ps, int id) {
        return ps.trainable(id) ? &g[static_cast<std::size_t>(id)] : nullptr;
    }
    void add(const Grads& o);
    void scale(double s);
    void zero();
};

}  // namespace slideseg
