#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "latentsafe/config.hpp"
#include "latentsafe/model.hpp"

namespace latentsafe {

// Scalar network over (h, z); positive on states it deems safe.
struct BarrierNet {
    DenseLayer l1, l2, out;

    BarrierNet() = default;
    BarrierNet(int feature_dim, int hidden, Rng& rng)
        : l1("barrier.l1", feature_dim, hidden, rng),
          l2("barrier.l2", hidden, hidden, rng),
          out("barrier.out", hidden, 1, rng) {}

    Tensor operator()(const Tensor& feature) const { return out(elu(l2(elu(l1(feature))))); }
    Tensor operator()(const LatentState& s) const { return (*this)(latent_feature(s)); }
    ParamRefs params() {
        ParamRefs p;
        l1.params(p);
        l2.params(p);
        out.params(p);
        return p;
    }
};

struct BarrierTerms {
    Tensor t1, t2, t3;  // scalar hinge means: safe margin, step condition, unsafe margin
    bool short_rollout = false;
    int64_t n_safe = 0, n_pairs = 0, n_unsafe = 0;
};

// Binarize predicted safety at 0.5: true means the state counts as unsafe.
inline std::vector<std::vector<char>> unsafe_labels(const std::vector<Tensor>& kappas) {
    std::vector<std::vector<char>> lab(kappas.size());
    for (size_t t = 0; t < kappas.size(); ++t) {
        lab[t].resize(kappas[t].size());
        for (int64_t i = 0; i < kappas[t].size(); ++i) lab[t][i] = (*kappas[t].data)[i] >= 0.5;
    }
    return lab;
}

// Three hinge terms over a batched rollout of H+1 states:
//   safe states     relu(eta - B)
//   adjacent pairs  relu(eta - (B_t - B_{t-1} + lambda*B_t))
//   unsafe states   relu(eta + B)
// Mean within each category; empty categories contribute zero. A rollout with
// fewer than two states cannot score the step condition (flagged).
inline BarrierTerms barrier_loss(const std::vector<Tensor>& bvals,
                                 const std::vector<std::vector<char>>& unsafe,
                                 const BarrierConfig& cfg) {
    if (bvals.empty()) throw std::invalid_argument("barrier_loss: empty rollout");
    if (bvals.size() != unsafe.size())
        throw std::invalid_argument("barrier_loss: one label row per state required");
    const size_t T = bvals.size();
    const int64_t n = bvals[0].size();

    BarrierTerms out;
    Tensor safe_acc = Tensor::scalar_of(0.0), unsafe_acc = Tensor::scalar_of(0.0);
    for (size_t t = 0; t < T; ++t) {
        if (bvals[t].size() != n || static_cast<int64_t>(unsafe[t].size()) != n)
            throw std::invalid_argument("barrier_loss: ragged rollout");
        std::vector<double> ms(n, 0.0), mu(n, 0.0);
        for (int64_t i = 0; i < n; ++i) (unsafe[t][i] ? mu : ms)[i] = 1.0;
        out.n_safe += n - std::count(unsafe[t].begin(), unsafe[t].end(), char(1));
        out.n_unsafe += std::count(unsafe[t].begin(), unsafe[t].end(), char(1));
        Tensor hinge_s = relu(affine(bvals[t], -1.0, cfg.eta));  // relu(eta - B)
        Tensor hinge_u = relu(affine(bvals[t], 1.0, cfg.eta));   // relu(eta + B)
        safe_acc = add(safe_acc, sum_all(mul(hinge_s, Tensor::from(bvals[t].shape, std::move(ms)))));
        unsafe_acc = add(unsafe_acc, sum_all(mul(hinge_u, Tensor::from(bvals[t].shape, std::move(mu)))));
    }
    out.t1 = out.n_safe > 0 ? affine(safe_acc, 1.0 / out.n_safe, 0.0) : Tensor::scalar_of(0.0);
    out.t3 = out.n_unsafe > 0 ? affine(unsafe_acc, 1.0 / out.n_unsafe, 0.0) : Tensor::scalar_of(0.0);

    if (T < 2) {
        out.short_rollout = true;
        out.t2 = Tensor::scalar_of(0.0);
        return out;
    }
    Tensor pair_acc = Tensor::scalar_of(0.0);
    for (size_t t = 1; t < T; ++t) {
        // eta - ((1+lambda)*B_t - B_{t-1})
        Tensor cond = sub(affine(bvals[t], 1.0 + cfg.lambda, 0.0), bvals[t - 1]);
        pair_acc = add(pair_acc, sum_all(relu(affine(cond, -1.0, cfg.eta))));
        out.n_pairs += n;
    }
    out.t2 = affine(pair_acc, 1.0 / out.n_pairs, 0.0);
    return out;
}

// Margin-zero condition checks over rollouts, the forward-invariance
// diagnostic. Fractions are absent when a category has no samples.
struct AuditReport {
    int64_t n_safe = 0, n_pairs = 0, n_unsafe = 0;
    int64_t viol_safe = 0, viol_pairs = 0, viol_unsafe = 0;

    std::optional<double> safe_fraction() const { return frac(viol_safe, n_safe); }
    std::optional<double> pair_fraction() const { return frac(viol_pairs, n_pairs); }
    std::optional<double> unsafe_fraction() const { return frac(viol_unsafe, n_unsafe); }

private:
    static std::optional<double> frac(int64_t v, int64_t n) {
        if (n == 0) return std::nullopt;
        return static_cast<double>(v) / static_cast<double>(n);
    }
};

// bvals[t][i]: barrier value of state t of rollout row i (plain values).
inline void audit_rollout(AuditReport& rep, const std::vector<std::vector<double>>& bvals,
                          const std::vector<std::vector<char>>& unsafe, double lambda) {
    if (bvals.size() != unsafe.size())
        throw std::invalid_argument("audit: one label row per state required");
    for (size_t t = 0; t < bvals.size(); ++t) {
        for (size_t i = 0; i < bvals[t].size(); ++i) {
            if (unsafe[t][i]) {
                ++rep.n_unsafe;
                if (bvals[t][i] >= 0.0) ++rep.viol_unsafe;  // needs B < 0
            } else {
                ++rep.n_safe;
                if (bvals[t][i] <= 0.0) ++rep.viol_safe;  // needs B > 0
            }
            if (t > 0) {
                ++rep.n_pairs;
                const double cond = (1.0 + lambda) * bvals[t][i] - bvals[t - 1][i];
                if (cond <= 0.0) ++rep.viol_pairs;  // needs strict increase margin
            }
        }
    }
}

}  // namespace latentsafe
