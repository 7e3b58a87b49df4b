#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "latentsafe/conv.hpp"
#include "latentsafe/rng.hpp"
#include "latentsafe/tensor.hpp"

namespace latentsafe {

// A named trainable array. use() returns the tape leaf for the current graph,
// creating it once per tape so fan-out gradients accumulate on a single node.
struct Param {
    std::string name;
    Shape shape;
    std::shared_ptr<std::vector<double>> data;

    mutable uint64_t cached_gen = 0;
    mutable Tensor cached_leaf;

    int64_t size() const { return data ? static_cast<int64_t>(data->size()) : 0; }

    static Param make(std::string name, Shape shape, double fill = 0.0) {
        Param p;
        p.name = std::move(name);
        p.shape = std::move(shape);
        p.data = std::make_shared<std::vector<double>>(shape_numel(p.shape), fill);
        return p;
    }

    // weights uniform in +-sqrt(1/fan_in)
    static Param make_uniform(std::string name, Shape shape, int fan_in, Rng& rng) {
        Param p = make(std::move(name), std::move(shape));
        const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
        for (double& v : *p.data) v = rng.uniform(-bound, bound);
        return p;
    }

    Tensor use() const {
        Tensor t;
        t.shape = shape;
        t.data = data;
        Tape* tp = Tape::active();
        if (!tp) return t;
        if (cached_gen == tp->gen()) return cached_leaf;
        cached_leaf = make_leaf(t);
        cached_gen = tp->gen();
        return cached_leaf;
    }
};

using ParamRefs = std::vector<Param*>;

struct DenseLayer {
    Param W, b;

    DenseLayer() = default;
    DenseLayer(const std::string& name, int in, int out, Rng& rng)
        : W(Param::make_uniform(name + ".w", {out, in}, in, rng)),
          b(Param::make(name + ".b", {out})) {}

    Tensor operator()(const Tensor& x) const {
        Tensor Wt = W.use(), bt = b.use();
        return dense(x, Wt, &bt);
    }
    void params(ParamRefs& out) {
        out.push_back(&W);
        out.push_back(&b);
    }
};

struct Conv2dLayer {
    Param K;
    int stride = 1, pad = 0;

    Conv2dLayer() = default;
    Conv2dLayer(const std::string& name, int cin, int cout, int k, int stride_, int pad_, Rng& rng)
        : K(Param::make_uniform(name + ".k", {cout, cin, k, k}, cin * k * k, rng)),
          stride(stride_), pad(pad_) {}

    Tensor operator()(const Tensor& x) const { return conv2d(x, K.use(), stride, pad); }
    void params(ParamRefs& out) { out.push_back(&K); }
};

struct ConvTranspose2dLayer {
    Param K;
    int stride = 1, pad = 0;

    ConvTranspose2dLayer() = default;
    ConvTranspose2dLayer(const std::string& name, int cin, int cout, int k, int stride_, int pad_, Rng& rng)
        : K(Param::make_uniform(name + ".k", {cin, cout, k, k}, cin * k * k, rng)),
          stride(stride_), pad(pad_) {}

    Tensor operator()(const Tensor& x) const { return conv2d_transpose(x, K.use(), stride, pad); }
    void params(ParamRefs& out) { out.push_back(&K); }
};

// Gated recurrent unit over [B,dh] state and [B,di] input.
struct GRUCell {
    Param Wz, Uz, bz, Wr, Ur, br, Wc, Uc, bc;

    GRUCell() = default;
    GRUCell(const std::string& name, int di, int dh, Rng& rng)
        : Wz(Param::make_uniform(name + ".wz", {dh, di}, di, rng)),
          Uz(Param::make_uniform(name + ".uz", {dh, dh}, dh, rng)),
          bz(Param::make(name + ".bz", {dh})),
          Wr(Param::make_uniform(name + ".wr", {dh, di}, di, rng)),
          Ur(Param::make_uniform(name + ".ur", {dh, dh}, dh, rng)),
          br(Param::make(name + ".br", {dh})),
          Wc(Param::make_uniform(name + ".wc", {dh, di}, di, rng)),
          Uc(Param::make_uniform(name + ".uc", {dh, dh}, dh, rng)),
          bc(Param::make(name + ".bc", {dh})) {}

    // h' = (1-z)*h + z*c with z,r sigmoid gates and c = tanh candidate
    Tensor operator()(const Tensor& h_prev, const Tensor& x) const {
        Tensor bzt = bz.use(), brt = br.use(), bct = bc.use();
        Tensor z = sigmoid(add(dense(x, Wz.use(), &bzt), dense(h_prev, Uz.use())));
        Tensor r = sigmoid(add(dense(x, Wr.use(), &brt), dense(h_prev, Ur.use())));
        Tensor c = tanh_(add(dense(x, Wc.use(), &bct), dense(mul(r, h_prev), Uc.use())));
        return add(h_prev, mul(z, sub(c, h_prev)));
    }
    void params(ParamRefs& out) {
        for (Param* p : {&Wz, &Uz, &bz, &Wr, &Ur, &br, &Wc, &Uc, &bc}) out.push_back(p);
    }
};

// ---- optimizer ----

struct AdamHyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamSlot {
    std::vector<double> m, v;
};

// One bias-corrected Adam update of a single parameter array.
inline void adam_step(std::vector<double>& param, const std::vector<double>& grad, AdamSlot& slot,
                      const AdamHyper& h, int64_t step_count) {
    if (grad.size() != param.size()) throw std::invalid_argument("adam_step: gradient shape mismatch");
    if (slot.m.empty()) {
        slot.m.assign(param.size(), 0.0);
        slot.v.assign(param.size(), 0.0);
    }
    if (slot.m.size() != param.size()) throw std::invalid_argument("adam_step: state shape mismatch");
    const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(step_count));
    const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(step_count));
    for (size_t i = 0; i < param.size(); ++i) {
        slot.m[i] = h.beta1 * slot.m[i] + (1.0 - h.beta1) * grad[i];
        slot.v[i] = h.beta2 * slot.v[i] + (1.0 - h.beta2) * grad[i] * grad[i];
        const double mhat = slot.m[i] / c1;
        const double vhat = slot.v[i] / c2;
        param[i] -= h.lr * mhat / (std::sqrt(vhat) + h.eps);
    }
}

// Adam over a parameter group with global-norm gradient clipping.
class Adam {
public:
    Adam() = default;
    Adam(ParamRefs params, AdamHyper hyper, double clip_norm = 0.0)
        : params_(std::move(params)), hyper_(hyper), clip_norm_(clip_norm), slots_(params_.size()) {}

    // Pull gradients off a consumed tape and update every parameter in the
    // group; parameters untouched by the loss get zero gradient.
    void step(Tape& tape) {
        std::vector<std::vector<double>> grads(params_.size());
        for (size_t i = 0; i < params_.size(); ++i) {
            Param& p = *params_[i];
            if (p.cached_gen == tape.gen() && p.cached_leaf.node >= 0)
                grads[i] = *tape.grad(p.cached_leaf).data;
            else
                grads[i].assign(static_cast<size_t>(p.size()), 0.0);
        }
        if (clip_norm_ > 0.0) {
            double sq = 0;
            for (const auto& g : grads)
                for (double v : g) sq += v * v;
            const double norm = std::sqrt(sq);
            if (norm > clip_norm_) {
                const double scale = clip_norm_ / norm;
                for (auto& g : grads)
                    for (double& v : g) v *= scale;
            }
        }
        ++step_count_;
        for (size_t i = 0; i < params_.size(); ++i)
            adam_step(*params_[i]->data, grads[i], slots_[i], hyper_, step_count_);
    }

    int64_t step_count() const { return step_count_; }
    void set_step_count(int64_t t) { step_count_ = t; }
    const ParamRefs& params() const { return params_; }
    AdamSlot& slot(size_t i) { return slots_[i]; }
    const AdamHyper& hyper() const { return hyper_; }

private:
    ParamRefs params_;
    AdamHyper hyper_;
    double clip_norm_ = 0.0;
    std::vector<AdamSlot> slots_;
    int64_t step_count_ = 0;
};

}  // namespace latentsafe
