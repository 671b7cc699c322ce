#pragma once

// Building blocks of the toy model, each with an explicit backward pass.
// Weights live in a ParamSet and layers only hold indices into it. Backward
// functions accumulate parameter gradients into `Grads` (frozen parameters
// are skipped) and return the gradient w.r.t. their inputs.

#include "slideseg/tensor.hpp"

#include <random>
#include <string>

namespace slideseg {

// y = W x + b over rows of X: Y = X W^T + b. W is (out x in).
struct Linear {
    int w = -1;
    int b = -1;
    int in = 0;
    int out = 0;

    static Linear create(ParamSet& ps, const std::string& name, int in, int out, ParamGroup group,
                         std::mt19937_64& rng, double std = -1.0);
    Mat forward(const ParamSet& ps, const Mat& x) const;
    Mat backward(const ParamSet& ps, const Mat& x, const Mat& dy, Grads& grads) const;
};

// Frozen base projection plus a low-rank adapter:
//   y = W x + b + scale * B (A x),  A (r x in), B (out x r), scale = alpha / r.
// B starts at zero so the adapter is initially a no-op. rank 0 disables it.
struct LoraLinear {
    Linear base;
    int a = -1;
    int b = -1;
    int rank = 0;
    double scale = 1.0;

    struct Cache {
        Mat xa;  // X A^T
    };

    static LoraLinear create(ParamSet& ps, const std::string& name, int in, int out, ParamGroup base_group,
                             int rank, double alpha, std::mt19937_64& rng, double std = -1.0);
    Mat forward(const ParamSet& ps, const Mat& x, Cache& cache) const;
    Mat backward(const ParamSet& ps, const Mat& x, const Cache& cache, const Mat& dy, Grads& grads) const;
};

// Single-vector form used by the adapter contract tests: W x + scale B (A x)
// with W (out x in), A (r x in), B (out x r), x of length in.
std::vector<double> lora_forward(const Mat& base_weight, const Mat& a, const Mat& b, double scale,
                                 const std::vector<double>& x);

struct LayerNorm {
    int gamma = -1;
    int beta = -1;
    int dim = 0;

    struct Cache {
        Mat xhat;
        std::vector<double> rstd;
    };

    static LayerNorm create(ParamSet& ps, const std::string& name, int dim, ParamGroup group);
    Mat forward(const ParamSet& ps, const Mat& x, Cache& cache) const;
    Mat backward(const ParamSet& ps, const Cache& cache, const Mat& dy, Grads& grads) const;
};

// tanh approximation of GELU
Mat gelu(const Mat& x);
Mat gelu_backward(const Mat& x, const Mat& dy);

struct Mlp {
    Linear fc1;
    Linear fc2;

    struct Cache {
        Mat x;
        Mat h;  // pre-activation
        Mat a;  // activation
    };

    static Mlp create(ParamSet& ps, const std::string& name, int in, int hidden, int out, ParamGroup group,
                      std::mt19937_64& rng, double out_std = -1.0);
    Mat forward(const ParamSet& ps, const Mat& x, Cache& cache) const;
    Mat backward(const ParamSet& ps, const Cache& cache, const Mat& dy, Grads& grads) const;
};

// Multi-head scaled dot-product attention with separate query/key/value
// inputs. Query and value projections carry optional LoRA adapters.
struct Attention {
    LoraLinear q;
    Linear k;
    LoraLinear v;
    Linear o;
    int heads = 1;
    int dim = 0;

    struct Cache {
        Mat qin, kin, vin;
        LoraLinear::Cache qc, vc;
        Mat qp, kp, vp;            // projected, (tokens x dim)
        std::vector<Mat> probs;    // per head (Nq x Nk)
        Mat merged;                // concatenated head outputs before o
    };

    struct InputGrads {
        Mat dq, dk, dv;
    };

    static Attention create(ParamSet& ps, const std::string& name, int dim, int heads, ParamGroup group,
                            int lora_rank, double lora_alpha, std::mt19937_64& rng, double out_std = -1.0);
    Mat forward(const ParamSet& ps, const Mat& qin, const Mat& kin, const Mat& vin, Cache& cache) const;
    InputGrads backward(const ParamSet& ps, const Cache& cache, const Mat& dy, Grads& grads) const;
};

}  // namespace slideseg
