#pragma once

// Shared test utilities: central finite-difference gradient checks plus
// parameter lookup/surgery helpers.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "latentsafe/nn.hpp"
#include "latentsafe/tensor.hpp"

namespace testutil {

using latentsafe::NoGrad;
using latentsafe::Param;
using latentsafe::ParamRefs;
using latentsafe::Rng;
using latentsafe::Shape;
using latentsafe::Tape;
using latentsafe::Tensor;

inline Tensor rand_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(latentsafe::shape_numel(shape));
    for (double& x : v) x = rng.uniform(lo, hi);
    return Tensor::from(std::move(shape), std::move(v));
}

// Magnitudes in [0.2, 1.2] with random sign: keeps the relu/clamp kinks (at 0)
// a safe distance from every probe point.
inline Tensor rand_tensor_offzero(Shape shape, Rng& rng) {
    std::vector<double> v(latentsafe::shape_numel(shape));
    for (double& x : v) x = (rng.uniform01() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.2, 1.2);
    return Tensor::from(std::move(shape), std::move(v));
}

// Relative error with a small floor so near-zero pairs compare absolutely.
inline double rel_err(double a, double b) {
    const double denom = std::max({1e-6, std::fabs(a), std::fabs(b)});
    return std::fabs(a - b) / denom;
}

inline std::vector<int64_t> probe_indices(int64_t n, int max_checks) {
    std::vector<int64_t> idx;
    if (max_checks > 0 && n > max_checks)
        for (int k = 0; k < max_checks; ++k) idx.push_back(k * n / max_checks);
    else
        for (int64_t i = 0; i < n; ++i) idx.push_back(i);
    return idx;
}

// Max relative error between the tape gradient of build(x) w.r.t. x and
// central finite differences (h = 1e-5 per the 64-bit contract). build must
// be a pure function of its argument and of state that stays fixed between
// calls; rng use inside must re-start from a snapshot on every call.
inline double fd_input(const std::function<Tensor(const Tensor&)>& build, const Tensor& x0,
                       int max_checks = 0, double h = 1e-5) {
    Tensor g;
    {
        Tape tape;
        Tensor x = latentsafe::make_leaf(x0);
        Tensor loss = build(x);
        tape.backward(loss);
        g = tape.grad(x);
    }
    double worst = 0;
    NoGrad ng;
    for (int64_t i : probe_indices(x0.size(), max_checks)) {
        Tensor xp = Tensor::from(x0.shape, *x0.data);
        Tensor xm = Tensor::from(x0.shape, *x0.data);
        (*xp.data)[i] += h;
        (*xm.data)[i] -= h;
        const double vp = build(xp).scalar();
        const double vm = build(xm).scalar();
        worst = std::max(worst, rel_err((vp - vm) / (2.0 * h), g[i]));
    }
    return worst;
}

// Same check for parameters used inside build(); one analytic pass, then the
// shared parameter storage is perturbed in place and restored.
inline double fd_params(const std::function<Tensor()>& build, const std::vector<Param*>& ps,
                        int max_checks = 0, double h = 1e-5) {
    std::vector<Tensor> gs;
    {
        Tape tape;
        Tensor loss = build();
        tape.backward(loss);
        for (Param* p : ps) {
            if (p->cached_gen == tape.gen() && p->cached_leaf.node >= 0)
                gs.push_back(tape.grad(p->cached_leaf));
            else
                gs.push_back(Tensor::zeros(p->shape));
        }
    }
    double worst = 0;
    NoGrad ng;
    for (size_t pi = 0; pi < ps.size(); ++pi) {
        Param& p = *ps[pi];
        for (int64_t i : probe_indices(p.size(), max_checks)) {
            const double orig = (*p.data)[i];
            (*p.data)[i] = orig + h;
            const double vp = build().scalar();
            (*p.data)[i] = orig - h;
            const double vm = build().scalar();
            (*p.data)[i] = orig;
            worst = std::max(worst, rel_err((vp - vm) / (2.0 * h), gs[pi][i]));
        }
    }
    return worst;
}

inline double fd_param(const std::function<Tensor()>& build, Param& p, int max_checks = 0,
                       double h = 1e-5) {
    return fd_params(build, {&p}, max_checks, h);
}

// Like fd_params, but probes each parameter at its largest-magnitude gradient
// entries. Large objectives bury small-entry probes in cancellation noise
// (difference of two ~1e2 values resolving a ~1e-9 step), so probing where
// the signal is keeps the comparison honest.
inline double fd_params_top(const std::function<Tensor()>& build, const std::vector<Param*>& ps,
                            int max_checks, double h = 1e-5) {
    std::vector<Tensor> gs;
    {
        Tape tape;
        Tensor loss = build();
        tape.backward(loss);
        for (Param* p : ps) {
            if (p->cached_gen == tape.gen() && p->cached_leaf.node >= 0)
                gs.push_back(tape.grad(p->cached_leaf));
            else
                gs.push_back(Tensor::zeros(p->shape));
        }
    }
    double worst = 0;
    NoGrad ng;
    for (size_t pi = 0; pi < ps.size(); ++pi) {
        Param& p = *ps[pi];
        std::vector<int64_t> idx(p.size());
        for (int64_t i = 0; i < p.size(); ++i) idx[i] = i;
        std::stable_sort(idx.begin(), idx.end(), [&](int64_t a, int64_t b) {
            return std::fabs(gs[pi][a]) > std::fabs(gs[pi][b]);
        });
        const int64_t checks = std::min<int64_t>(max_checks, p.size());
        for (int64_t t = 0; t < checks; ++t) {
            const int64_t i = idx[t];
            const double orig = (*p.data)[i];
            (*p.data)[i] = orig + h;
            const double vp = build().scalar();
            (*p.data)[i] = orig - h;
            const double vm = build().scalar();
            (*p.data)[i] = orig;
            worst = std::max(worst, rel_err((vp - vm) / (2.0 * h), gs[pi][i]));
        }
    }
    return worst;
}

inline Param* find_param(const ParamRefs& ps, const std::string& name) {
    for (Param* p : ps)
        if (p->name == name) return p;
    throw std::out_of_range("no parameter named " + name);
}

inline void fill_param(Param& p, double v) { std::fill(p.data->begin(), p.data->end(), v); }

// FNV-1a over the raw parameter bytes; enough to detect any change.
inline uint64_t hash_params(const ParamRefs& ps) {
    uint64_t h = 1469598103934665603ULL;
    for (const Param* p : ps)
        for (double d : *p->data) {
            uint64_t bits;
            std::memcpy(&bits, &d, 8);
            for (int i = 0; i < 8; ++i) {
                h ^= (bits >> (8 * i)) & 0xff;
                h *= 1099511628211ULL;
            }
        }
    return h;
}

}  // namespace testutil
