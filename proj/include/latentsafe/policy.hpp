#pragma once

#include <array>
#include <vector>

#include "latentsafe/barrier.hpp"
#include "latentsafe/model.hpp"

namespace latentsafe {

// Tanh-squashed diagonal Gaussian over actions; the head emits the pre-squash
// mean and a log-std (kept in [-5, 2]).
struct Actor {
    DenseLayer l1, l2, out;
    int adim = 2;

    Actor() = default;
    Actor(int feature_dim, int hidden, int action_dim, Rng& rng)
        : l1("actor.l1", feature_dim, hidden, rng),
          l2("actor.l2", hidden, hidden, rng),
          out("actor.out", hidden, 2 * action_dim, rng),
          adim(action_dim) {}

    std::pair<Tensor, Tensor> operator()(const Tensor& feature) const {
        Tensor st = out(elu(l2(elu(l1(feature)))));
        Tensor mu = slice_cols(st, 0, adim);
        Tensor ls = clamp_min(slice_cols(st, adim, 2 * adim), -5.0);
        ls = affine(clamp_min(affine(ls, -1.0, 0.0), -2.0), -1.0, 0.0);  // min(ls, 2)
        return {mu, exp_(ls)};
    }
    ParamRefs params() {
        ParamRefs p;
        l1.params(p);
        l2.params(p);
        out.params(p);
        return p;
    }
};

struct Critic {
    DenseLayer l1, l2, out;

    Critic() = default;
    Critic(int feature_dim, int hidden, Rng& rng)
        : l1("critic.l1", feature_dim, hidden, rng),
          l2("critic.l2", hidden, hidden, rng),
          out("critic.out", hidden, 1, rng) {}

    Tensor operator()(const Tensor& feature) const { return out(elu(l2(elu(l1(feature))))); }
    ParamRefs params() {
        ParamRefs p;
        l1.params(p);
        l2.params(p);
        out.params(p);
        return p;
    }
};

enum class ActMode { sample, mean };

// noise is required (and reparameterizes the draw) in sample mode only.
inline Tensor act(const Actor& actor, const LatentState& s, ActMode mode, const Tensor* noise = nullptr) {
    auto [mu, sigma] = actor(latent_feature(s));
    if (mode == ActMode::mean) return tanh_(mu);
    if (!noise) throw std::invalid_argument("act: sample mode requires a noise tensor");
    return tanh_(add(mu, mul(sigma, *noise)));
}

// Batched rollout of the policy inside the model: H+1 states, H actions and
// predicted rewards, a predicted safety label per state.
struct ImaginedRollout {
    std::vector<LatentState> states;
    std::vector<Tensor> actions;
    std::vector<Tensor> rewards;
    std::vector<Tensor> kappas;
};

inline ImaginedRollout imagine(const WorldModel& m, const Actor& actor, const LatentState& start,
                               int horizon, Rng& rng) {
    if (horizon < 0) throw std::invalid_argument("imagine: horizon must be nonnegative");
    const int n = start.h.shape[0];
    ImaginedRollout r;
    r.states.push_back(start);
    r.kappas.push_back(m.predict_safety(start));
    for (int t = 0; t < horizon; ++t) {
        const LatentState& s = r.states[t];
        Tensor anoise = WorldModel::normal_tensor({n, m.action_dim()}, rng);
        Tensor a = act(actor, s, ActMode::sample, &anoise);
        r.actions.push_back(a);
        r.rewards.push_back(m.predict_reward(s, a));
        Tensor znoise = WorldModel::normal_tensor({n, m.config().stochastic_size}, rng);
        r.states.push_back(m.prior_step(s, a, znoise));
        r.kappas.push_back(m.predict_safety(r.states.back()));
    }
    return r;
}

// Discounted imagined return plus discounted terminal value, per rollout row.
// rewards[tau][i]; plain values, no gradients.
inline std::vector<double> mc_value_target(const std::vector<std::vector<double>>& rewards,
                                           const std::vector<double>& terminal_value, double gamma) {
    std::vector<double> out(terminal_value.size(), 0.0);
    double g = 1.0;
    for (const auto& r : rewards) {
        if (r.size() != out.size()) throw std::invalid_argument("mc_value_target: ragged rewards");
        for (size_t i = 0; i < out.size(); ++i) out[i] += g * r[i];
        g *= gamma;
    }
    for (size_t i = 0; i < out.size(); ++i) out[i] += g * terminal_value[i];
    return out;
}

struct PolicyLossResult {
    Tensor loss;     // -J + beta . (t1, t2, t3)
    double j = 0;    // value of the return estimate
};

inline PolicyLossResult policy_loss(const ImaginedRollout& r, const Critic& critic,
                                    const BarrierTerms& lb, const std::array<double, 3>& beta,
                                    double gamma) {
    for (double b : beta)
        if (b < 0) throw std::invalid_argument("policy_loss: beta components must be nonnegative");
    Tensor j = Tensor::scalar_of(0.0);
    double g = 1.0;
    for (const Tensor& rew : r.rewards) {
        j = add(j, affine(mean_all(rew), g, 0.0));
        g *= gamma;
    }
    j = add(j, affine(mean_all(critic(latent_feature(r.states.back()))), g, 0.0));
    Tensor loss = affine(j, -1.0, 0.0);
    loss = add(loss, affine(lb.t1, beta[0], 0.0));
    loss = add(loss, affine(lb.t2, beta[1], 0.0));
    loss = add(loss, affine(lb.t3, beta[2], 0.0));
    return {loss, j.scalar()};
}

// mean of 0.5*(v - target)^2 over constant features/targets
inline Tensor critic_loss(const Critic& critic, const Tensor& features, const Tensor& targets) {
    return affine(mse_loss(critic(features), targets), 0.5, 0.0);
}

}  // namespace latentsafe
