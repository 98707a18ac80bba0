#include "metaptq/losses.hpp"

#include <string>

namespace metaptq {

const char* preserve_kind_name(PreserveKind k) {
    switch (k) {
        case PreserveKind::MSE: return "mse";
        case PreserveKind::KL: return "kl";
        case PreserveKind::DP: return "dp";
    }
    return "?";
}

PreserveKind preserve_kind_from_name(const std::string& name) {
    if (name == "mse") return PreserveKind::MSE;
    if (name == "kl") return PreserveKind::KL;
    if (name == "dp") return PreserveKind::DP;
    throw ConfigError("unknown preserve kind '" + name + "' (expected mse|kl|dp)");
}

double LossWeights::default_lambda3(PreserveKind k) {
    switch (k) {
        case PreserveKind::MSE: return 1.0;
        case PreserveKind::KL: return 5.0;
        case PreserveKind::DP: return 3.0e4;
    }
    return 1.0;
}

namespace {

int64_t batch_of(const Tensor& t) {
    if (t.shape().empty()) throw NumericError("loss input must be batched");
    return t.shape()[0];
}

Tensor log_softmax_rows(const Tensor& logits) {
    int64_t c = logits.shape()[1];
    return sub(logits, broadcast_cols(logsumexp_rows(logits), c));
}

}  // namespace

Tensor loss_block_recon(const Tensor& a_fp, const Tensor& a_q) {
    if (!shape_equal(a_fp.shape(), a_q.shape())) {
        throw NumericError("loss_block_recon: shape mismatch");
    }
    Tensor d = sub(a_fp, a_q);
    return scale(sum_all(mul(d, d)), 1.0 / static_cast<double>(batch_of(a_fp)));
}

Tensor kl_softmax(const Tensor& logits_p, const Tensor& logits_q) {
    if (!shape_equal(logits_p.shape(), logits_q.shape()) || logits_p.shape().size() != 2) {
        throw NumericError("kl_softmax: expects matching [batch, classes] logits");
    }
    int64_t n = logits_p.shape()[0];
    Tensor lp = log_softmax_rows(logits_p);
    Tensor lq = log_softmax_rows(logits_q);
    Tensor per_row = sum_cols(mul(exp(lp), sub(lp, lq)));
    return scale(sum_all(per_row), 1.0 / static_cast<double>(n));
}

Tensor loss_val_kl(const Tensor& logits_fp, const Tensor& logits_q) {
    return kl_softmax(logits_fp, logits_q);
}

Tensor loss_mse_preserve(const Tensor& f_fp_x, const Tensor& f_fp_tx) {
    if (!shape_equal(f_fp_x.shape(), f_fp_tx.shape())) {
        throw NumericError("loss_mse_preserve: shape mismatch");
    }
    Tensor d = sub(f_fp_x, f_fp_tx);
    return scale(sum_all(mul(d, d)), 1.0 / static_cast<double>(batch_of(f_fp_x)));
}

Tensor loss_kl_preserve(const Tensor& logits_x, const Tensor& logits_tx) {
    return kl_softmax(logits_x, logits_tx);
}

Tensor cosine_kernel(const Tensor& a, const Tensor& b) {
    if (!shape_equal(a.shape(), b.shape())) throw NumericError("cosine_kernel: shape mismatch");
    Tensor dot = sum_all(mul(a, b));
    Tensor na = clamp(sqrt(sum_all(mul(a, a))), 1e-12, 1e300);
    Tensor nb = clamp(sqrt(sum_all(mul(b, b))), 1e-12, 1e300);
    Tensor cosine = mul(dot, reciprocal(mul(na, nb)));
    return add_scalar(scale(cosine, 0.5), 0.5);
}

CondProbMatrix cond_prob_matrix(const std::vector<Tensor>& features) {
    int64_t n = static_cast<int64_t>(features.size());
    if (n < 2) throw NumericError("cond_prob_matrix: need at least two features");
    // pairwise kernels, symmetric
    std::vector<std::vector<Tensor>> k(n, std::vector<Tensor>(n));
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = i + 1; j < n; ++j) {
            k[i][j] = cosine_kernel(features[i], features[j]);
            k[j][i] = k[i][j];
        }
    }
    CondProbMatrix out;
    out.n = n;
    out.col.assign(n, std::vector<Tensor>(n));
    for (int64_t j = 0; j < n; ++j) {
        Tensor denom = Tensor::scalar(0.0);
        for (int64_t i = 0; i < n; ++i) {
            if (i != j) denom = add(denom, k[i][j]);
        }
        Tensor inv = reciprocal(clamp(denom, 1e-12, 1e300));
        for (int64_t i = 0; i < n; ++i) {
            if (i != j) out.col[j][i] = mul(k[i][j], inv);
        }
    }
    return out;
}

Tensor loss_dp(const std::vector<Tensor>& features_orig, const std::vector<Tensor>& features_gen) {
    if (features_orig.size() != features_gen.size()) {
        throw NumericError("loss_dp: feature count mismatch");
    }
    CondProbMatrix p = cond_prob_matrix(features_orig);
    CondProbMatrix q = cond_prob_matrix(features_gen);
    int64_t n = p.n;
    Tensor total = Tensor::scalar(0.0);
    for (int64_t j = 0; j < n; ++j) {
        for (int64_t i = 0; i < n; ++i) {
            if (i == j) continue;
            Tensor pv = clamp(p.col[j][i], 1e-12, 2.0);
            Tensor qv = clamp(q.col[j][i], 1e-12, 2.0);
            total = add(total, mul(pv, sub(log(pv), log(qv))));
        }
    }
    return scale(total, 1.0 / static_cast<double>(n));
}

Tensor loss_margin(const Tensor& x, const Tensor& tx, double epsilon) {
    if (!shape_equal(x.shape(), tx.shape())) throw NumericError("loss_margin: shape mismatch");
    if (epsilon < 0.0) throw NumericError("loss_margin: epsilon must be >= 0");
    int64_t n = batch_of(x);
    int64_t m = x.numel() / n;  // channels * height * width per image
    Tensor d = sub(x, tx);
    Tensor per_image = scale(sum_cols(reshape(mul(d, d), {n, m})), 1.0 / static_cast<double>(m));
    Tensor hinge = relu(add_scalar(neg(per_image), epsilon));
    return scale(sum_all(hinge), 1.0 / static_cast<double>(n));
}

Tensor loss_transform_total(const Tensor& val, const Tensor& margin, const Tensor& preserve,
                            const LossWeights& w) {
    return add(add(scale(val, w.lambda1), scale(margin, w.lambda2)), scale(preserve, w.lambda3));
}

Tensor select_row(const Tensor& m, int64_t i) {
    if (m.shape().size() != 2) throw NumericError("select_row expects a 2-d tensor");
    int64_t n = m.shape()[0], c = m.shape()[1];
    if (i < 0 || i >= n) throw NumericError("select_row: index out of range");
    std::vector<double> sel(n, 0.0);
    sel[i] = 1.0;
    return reshape(matmul(Tensor::from_data({1, n}, std::move(sel)), m), {c});
}

std::vector<Tensor> matrix_rows(const Tensor& m) {
    std::vector<Tensor> rows;
    rows.reserve(m.shape()[0]);
    for (int64_t i = 0; i < m.shape()[0]; ++i) rows.push_back(select_row(m, i));
    return rows;
}

}  // namespace metaptq
