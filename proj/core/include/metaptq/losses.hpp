#pragma once

#include <vector>

#include "metaptq/tensor.hpp"

namespace metaptq {

enum class PreserveKind { MSE, KL, DP };

const char* preserve_kind_name(PreserveKind k);
PreserveKind preserve_kind_from_name(const std::string& name);

// Weights of the combined transformation objective.
struct LossWeights {
    double lambda1 = 5.0;
    double lambda2 = 0.5;
    double lambda3 = 3.0e4;
    PreserveKind preserve_kind = PreserveKind::DP;
    double epsilon = 0.1;

    // Preservation weight paired with each loss kind by default:
    // MSE -> 1, KL -> 5, DP -> 3e4 (the DP loss lives on a much smaller scale).
    static double default_lambda3(PreserveKind k);
};

// Mean over the batch of the squared activation difference.
Tensor loss_block_recon(const Tensor& a_fp, const Tensor& a_q);

// Mean KL between row-wise softmax distributions, KL(softmax(p) || softmax(q)).
Tensor kl_softmax(const Tensor& logits_p, const Tensor& logits_q);

Tensor loss_val_kl(const Tensor& logits_fp, const Tensor& logits_q);
Tensor loss_mse_preserve(const Tensor& f_fp_x, const Tensor& f_fp_tx);
Tensor loss_kl_preserve(const Tensor& logits_x, const Tensor& logits_tx);

// 0.5 * (cos(a,b) + 1), norms floored at 1e-12. Scalar output in [0,1].
Tensor cosine_kernel(const Tensor& a, const Tensor& b);

// Column-major conditional probabilities: col[j][i] = P_{i|j}, the kernel
// similarity of feature i to feature j normalized over k != j. Diagonal
// entries are excluded (left undefined).
struct CondProbMatrix {
    int64_t n = 0;
    std::vector<std::vector<Tensor>> col;  // col[j][i], i == j undefined
};

CondProbMatrix cond_prob_matrix(const std::vector<Tensor>& features);

// Mean over columns of KL between original and generated conditional
// distributions. Probabilities floored at 1e-12 before the log.
Tensor loss_dp(const std::vector<Tensor>& features_orig, const std::vector<Tensor>& features_gen);

// Hinge on the mean-squared pixel distance: mean_i max(0, eps - |x_i - Tx_i|^2 / M).
Tensor loss_margin(const Tensor& x, const Tensor& tx, double epsilon);

Tensor loss_transform_total(const Tensor& val, const Tensor& margin, const Tensor& preserve,
                            const LossWeights& w);

// Row i of a [N,C] matrix as a 1-d feature vector (differentiable).
Tensor select_row(const Tensor& m, int64_t i);
// All rows, for feeding cond_prob_matrix / loss_dp.
std::vector<Tensor> matrix_rows(const Tensor& m);

}  // namespace metaptq
