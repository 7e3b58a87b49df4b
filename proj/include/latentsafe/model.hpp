#pragma once

#include <vector>

#include "latentsafe/config.hpp"
#include "latentsafe/nn.hpp"

namespace latentsafe {

// Batched latent state: deterministic recurrent part h plus the moments and
// drawn sample of the stochastic part. Rows are batch entries.
struct LatentState {
    Tensor h;      // [N, dh]
    Tensor mu;     // [N, dz]
    Tensor sigma;  // [N, dz]
    Tensor z;      // [N, dz]
};

// (h, z) is what every downstream consumer sees.
inline Tensor latent_feature(const LatentState& s) { return concat_cols({s.h, s.z}); }

struct ModelLossResult {
    Tensor loss;                     // scalar
    double kl = 0, reward_mse = 0, safety_mse = 0, obs_err = 0;
    std::vector<LatentState> posts;  // one per chunk step, for imagination starts
};

// Encoder, decoder, recurrent transition with prior/posterior heads, reward
// head, safety head. One parameter collection updated in one backward pass.
class WorldModel {
public:
    WorldModel() = default;
    WorldModel(const ModelConfig& mc, int image_hw, int action_dim, Rng& rng)
        : mc_(mc), hw_(image_hw), adim_(action_dim) {
        if (hw_ % 8 != 0) throw std::invalid_argument("world model: image size must be divisible by 8");
        f_ = hw_ / 8;  // spatial extent after three stride-2 convs
        const int dh = mc_.deterministic_size, dz = mc_.stochastic_size;
        const int de = mc_.embed_size, dd = mc_.hidden_size;
        enc1_ = Conv2dLayer("enc.c1", 3, 8, 4, 2, 1, rng);
        enc2_ = Conv2dLayer("enc.c2", 8, 16, 4, 2, 1, rng);
        enc3_ = Conv2dLayer("enc.c3", 16, 16, 4, 2, 1, rng);
        enc_out_ = DenseLayer("enc.out", 16 * f_ * f_, de, rng);
        dec_in_ = DenseLayer("dec.in", dh + dz, 16 * f_ * f_, rng);
        dec1_ = ConvTranspose2dLayer("dec.t1", 16, 16, 4, 2, 1, rng);
        dec2_ = ConvTranspose2dLayer("dec.t2", 16, 8, 4, 2, 1, rng);
        dec3_ = ConvTranspose2dLayer("dec.t3", 8, 3, 4, 2, 1, rng);
        feat_in_ = DenseLayer("trans.in", dz + adim_, dd, rng);
        gru_ = GRUCell("trans.gru", dd, dh, rng);
        prior_h_ = DenseLayer("prior.h", dh, dd, rng);
        prior_out_ = DenseLayer("prior.out", dd, 2 * dz, rng);
        post_h_ = DenseLayer("post.h", dh + de, dd, rng);
        post_out_ = DenseLayer("post.out", dd, 2 * dz, rng);
        rew_h_ = DenseLayer("reward.h", dh + dz + adim_, dd, rng);
        rew_out_ = DenseLayer("reward.out", dd, 1, rng);
        safe_h_ = DenseLayer("safety.h", dh + dz, dd, rng);
        safe_out_ = DenseLayer("safety.out", dd, 1, rng);

        // Two init choices that decide whether the stochastic path gets used at
        // all. With zero bias the heads start at softplus(0) ~ 0.69 std, so z is
        // noise-dominated long enough for the decoder to learn to ignore it,
        // which starves the encoder of gradient permanently. Starting the std
        // halves at softplus(-1.5) ~ 0.20 keeps the channel usable from the
        // first update. Likewise the update gate starts biased toward keeping
        // its state (sigmoid(-1) ~ 0.27) so evidence written into h early in a
        // chunk is still there twenty steps later.
        for (int j = dz; j < 2 * dz; ++j) {
            (*prior_out_.b.data)[j] = -1.5;
            (*post_out_.b.data)[j] = -1.5;
        }
        for (double& v : *gru_.bz.data) v = -1.0;
    }

    const ModelConfig& config() const { return mc_; }
    int image_hw() const { return hw_; }
    int action_dim() const { return adim_; }

    ParamRefs params() {
        ParamRefs out;
        enc1_.params(out); enc2_.params(out); enc3_.params(out); enc_out_.params(out);
        dec_in_.params(out); dec1_.params(out); dec2_.params(out); dec3_.params(out);
        feat_in_.params(out); gru_.params(out);
        prior_h_.params(out); prior_out_.params(out);
        post_h_.params(out); post_out_.params(out);
        rew_h_.params(out); rew_out_.params(out);
        safe_h_.params(out); safe_out_.params(out);
        return out;
    }

    LatentState initial_state(int n) const {
        const int dh = mc_.deterministic_size, dz = mc_.stochastic_size;
        LatentState s;
        s.h = Tensor::zeros({n, dh});
        s.mu = Tensor::zeros({n, dz});
        s.sigma = Tensor::full({n, dz}, 1.0);
        s.z = Tensor::zeros({n, dz});
        return s;
    }

    // [N,3,hw,hw] pixels in [0,1] -> [N,de]
    Tensor encode(const Tensor& obs) const {
        if (obs.shape != Shape{obs.shape[0], 3, hw_, hw_})
            throw std::invalid_argument("encode: observation shape " + shape_str(obs.shape) +
                                        " does not match configured image size");
        Tensor x = affine(obs, 1.0, -0.5);
        x = elu(enc1_(x));
        x = elu(enc2_(x));
        x = elu(enc3_(x));
        x = reshape(x, {obs.shape[0], 16 * f_ * f_});
        return enc_out_(x);
    }

    // latent -> [N,3,hw,hw] in (0,1)
    Tensor decode(const LatentState& s) const {
        const int n = s.h.shape[0];
        Tensor x = elu(dec_in_(latent_feature(s)));
        x = reshape(x, {n, 16, f_, f_});
        x = elu(dec1_(x));
        x = elu(dec2_(x));
        return sigmoid(dec3_(x));
    }

    Tensor predict_reward(const LatentState& s, const Tensor& action) const {
        Tensor x = elu(rew_h_(concat_cols({s.h, s.z, action})));
        return rew_out_(x);
    }
    Tensor predict_safety(const LatentState& s) const {
        Tensor x = elu(safe_h_(latent_feature(s)));
        return sigmoid(safe_out_(x));
    }

    // Transition step; the posterior variant shares the identical h'.
    LatentState prior_step(const LatentState& prev, const Tensor& action, const Tensor& noise) const {
        Tensor h = step_h(prev, action);
        auto [mu, sigma] = stats(prior_h_, prior_out_, h);
        return {h, mu, sigma, reparam_sample(mu, sigma, noise)};
    }

    struct PosteriorStep {
        LatentState post;
        Tensor prior_mu, prior_sigma;
    };
    PosteriorStep posterior_step(const LatentState& prev, const Tensor& action, const Tensor& embed,
                                 const Tensor& noise) const {
        PosteriorStep out;
        Tensor h = step_h(prev, action);
        std::tie(out.prior_mu, out.prior_sigma) = stats(prior_h_, prior_out_, h);
        auto [mu, sigma] = stats(post_h_, post_out_, concat_cols({h, embed}));
        out.post = {h, mu, sigma, reparam_sample(mu, sigma, noise)};
        return out;
    }

    // Filters the chunk with the posterior, scores prior/posterior divergence
    // (clamped below by free nats) and reward/safety/pixel reconstruction.
    // Sums over chunk steps, averages over the batch.
    template <typename Batch>
    ModelLossResult loss(const Batch& batch, Rng& rng) const {
        const int B = batch.batch, L = batch.length;
        const int dz = mc_.stochastic_size;
        ModelLossResult out;
        Tensor kl_acc = Tensor::scalar_of(0.0);
        Tensor rew_acc = Tensor::scalar_of(0.0);
        Tensor safe_acc = Tensor::scalar_of(0.0);
        Tensor obs_acc = Tensor::scalar_of(0.0);
        LatentState s = initial_state(B);
        Tensor prev_action = Tensor::zeros({B, adim_});
        for (int t = 0; t < L; ++t) {
            Tensor noise = normal_tensor({B, dz}, rng);
            PosteriorStep ps = posterior_step(s, prev_action, encode(batch.obs[t]), noise);
            s = ps.post;
            out.posts.push_back(s);

            Tensor kl_rows = gaussian_kl_rows(s.mu, s.sigma, ps.prior_mu, ps.prior_sigma);  // [B]
            kl_acc = add(kl_acc, mean_all(clamp_min(kl_rows, mc_.free_nats)));

            Tensor rhat = predict_reward(s, batch.act[t]);
            rew_acc = add(rew_acc, mse_loss(rhat, batch.rew[t]));

            Tensor kdiff = sub(predict_safety(s), batch.kap[t]);
            Tensor w = safety_weights(batch.kap[t]);
            safe_acc = add(safe_acc, mean_all(mul(mul(kdiff, kdiff), w)));

            Tensor odiff = sub(decode(s), batch.obs[t]);
            // summed (not averaged) over pixels so the reconstruction term is
            // not drowned out by the KL clamp
            obs_acc = add(obs_acc, affine(sum_all(mul(odiff, odiff)), 1.0 / B, 0.0));

            prev_action = batch.act[t];
        }
        out.loss = add(add(kl_acc, rew_acc), add(safe_acc, obs_acc));
        out.kl = kl_acc.scalar();
        out.reward_mse = rew_acc.scalar();
        out.safety_mse = safe_acc.scalar();
        out.obs_err = obs_acc.scalar();
        return out;
    }

    static Tensor normal_tensor(Shape shape, Rng& rng) {
        std::vector<double> v(shape_numel(shape));
        for (double& x : v) x = rng.normal();
        return Tensor::from(std::move(shape), std::move(v));
    }

private:
    Tensor step_h(const LatentState& prev, const Tensor& action) const {
        Tensor x = elu(feat_in_(concat_cols({prev.z, action})));
        return gru_(prev.h, x);
    }
    static std::pair<Tensor, Tensor> stats(const DenseLayer& hid, const DenseLayer& out, const Tensor& in) {
        Tensor st = out(elu(hid(in)));
        const int dz = st.shape[1] / 2;
        Tensor mu = slice_cols(st, 0, dz);
        Tensor sigma = affine(softplus(slice_cols(st, dz, 2 * dz)), 1.0, 1e-4);
        return {mu, sigma};
    }
    // per-row weight 1, or safety_weight where the true label is unsafe
    Tensor safety_weights(const Tensor& kap) const {
        std::vector<double> w(kap.size());
        for (int64_t i = 0; i < kap.size(); ++i)
            w[i] = (*kap.data)[i] >= 0.5 ? mc_.safety_weight : 1.0;
        return Tensor::from(kap.shape, std::move(w));
    }

    ModelConfig mc_;
    int hw_ = 32, adim_ = 2, f_ = 4;
    Conv2dLayer enc1_, enc2_, enc3_;
    DenseLayer enc_out_, dec_in_;
    ConvTranspose2dLayer dec1_, dec2_, dec3_;
    DenseLayer feat_in_;
    GRUCell gru_;
    DenseLayer prior_h_, prior_out_, post_h_, post_out_;
    DenseLayer rew_h_, rew_out_, safe_h_, safe_out_;
};

}  // namespace latentsafe
