#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "latentsafe/barrier.hpp"
#include "latentsafe/checkpoint.hpp"
#include "latentsafe/config.hpp"
#include "latentsafe/metrics.hpp"
#include "latentsafe/model.hpp"
#include "latentsafe/policy.hpp"
#include "latentsafe/replay.hpp"

namespace latentsafe {

// Model (phi), actor+barrier (theta), critic (omega), each with its own
// optimizer group. The actor and barrier share one group: their losses are
// combined and they update in the same backward pass.
struct Agent {
    WorldModel model;
    Actor actor;
    Critic critic;
    BarrierNet barrier;
    Adam opt_model, opt_actor, opt_critic;

    explicit Agent(const Config& cfg) {
        Rng init(derive_seed(cfg.train.seed, "init"));
        const int feat = cfg.model.deterministic_size + cfg.model.stochastic_size;
        model = WorldModel(cfg.model, cfg.world.image_hw, 2, init);
        actor = Actor(feat, cfg.model.hidden_size, 2, init);
        critic = Critic(feat, cfg.model.hidden_size, init);
        barrier = BarrierNet(feat, cfg.barrier.hidden_size, init);
        const double clip = cfg.train.grad_clip;
        ParamRefs theta = actor.params();
        for (Param* p : barrier.params()) theta.push_back(p);
        opt_model = Adam(model.params(), {cfg.train.model_lr, 0.9, 0.999, 1e-8}, clip);
        opt_actor = Adam(std::move(theta), {cfg.train.actor_lr, 0.9, 0.999, 1e-8}, clip);
        opt_critic = Adam(critic.params(), {cfg.train.critic_lr, 0.9, 0.999, 1e-8}, clip);
    }

    ParamRefs all_params() {
        ParamRefs out = model.params();
        for (Param* p : actor.params()) out.push_back(p);
        for (Param* p : critic.params()) out.push_back(p);
        for (Param* p : barrier.params()) out.push_back(p);
        return out;
    }
};

// Online posterior filtering + policy acting for one episode. Exploration
// noise (if any) is added to the squashed action and the result re-clamped;
// the executed action is what the filter conditions on.
inline std::pair<Episode, EpisodeStats> collect_with_policy(HazardWorld& env, const WorldModel& model,
                                                            const Actor& actor, uint64_t env_seed,
                                                            int action_repeat, ActMode mode,
                                                            double exploration_std, Rng& rng) {
    NoGrad ng;
    LatentState s = model.initial_state(1);
    Tensor prev_a = Tensor::zeros({1, model.action_dim()});
    const int hw = model.image_hw();
    return run_episode(env, env_seed, action_repeat, [&](int, const std::vector<double>& obs) {
        Tensor o = Tensor::from({1, 3, hw, hw}, obs);
        Tensor noise = WorldModel::normal_tensor({1, model.config().stochastic_size}, rng);
        s = model.posterior_step(s, prev_a, model.encode(o), noise).post;
        Tensor a;
        if (mode == ActMode::sample) {
            Tensor anoise = WorldModel::normal_tensor({1, model.action_dim()}, rng);
            a = act(actor, s, ActMode::sample, &anoise);
        } else {
            a = act(actor, s, ActMode::mean);
        }
        std::array<double, 2> out = {a[0], a[1]};
        for (double& v : out) {
            if (exploration_std > 0) v += exploration_std * rng.normal();
            v = std::clamp(v, -1.0, 1.0);
        }
        prev_a = Tensor::from({1, 2}, {out[0], out[1]});
        return out;
    });
}

inline std::pair<Episode, EpisodeStats> collect_random(HazardWorld& env, uint64_t env_seed,
                                                       int action_repeat, Rng& rng) {
    return run_episode(env, env_seed, action_repeat, [&rng](int, const std::vector<double>&) {
        return std::array<double, 2>{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    });
}

// Stack L posterior states of [B, d] rows into one detached [B*L, d] set of
// imagination starts (values only, no graph reference).
inline LatentState flatten_posts(const std::vector<LatentState>& posts) {
    if (posts.empty()) throw std::invalid_argument("flatten_posts: empty sequence");
    const int B = posts[0].h.shape[0];
    const int dh = posts[0].h.shape[1], dz = posts[0].z.shape[1];
    const int n = B * static_cast<int>(posts.size());
    std::vector<double> sh(static_cast<size_t>(n) * dh), sz(static_cast<size_t>(n) * dz);
    for (size_t t = 0; t < posts.size(); ++t) {
        std::copy_n(posts[t].h.ptr(), static_cast<size_t>(B) * dh, sh.data() + t * B * dh);
        std::copy_n(posts[t].z.ptr(), static_cast<size_t>(B) * dz, sz.data() + t * B * dz);
    }
    LatentState starts;
    starts.h = Tensor::from({n, dh}, std::move(sh));
    starts.z = Tensor::from({n, dz}, std::move(sz));
    starts.mu = starts.z.detached();
    starts.sigma = Tensor::full({n, dz}, 1.0);
    return starts;
}

struct UpdateLosses {
    double L_m = 0, L_b1 = 0, L_b2 = 0, L_b3 = 0, L_p = 0, critic = 0;
};

class Trainer {
public:
    explicit Trainer(Config cfg)
        : cfg_(std::move(cfg)),
          env_(cfg_.world),
          agent_(cfg_),
          rng_update_(derive_seed(cfg_.train.seed, "update")),
          rng_collect_(derive_seed(cfg_.train.seed, "collect")) {}

    const Config& config() const { return cfg_; }
    Agent& agent() { return agent_; }
    HazardWorld& env() { return env_; }
    ReplayBuffer& buffer() { return buffer_; }
    int epoch() const { return epoch_; }
    int64_t env_steps() const { return env_steps_; }
    int64_t cumulative_cost() const { return cum_cost_; }
    const std::vector<EpisodeStats>& collected() const { return collected_; }

    // env seed of the i-th interaction episode (seed episodes come first)
    static uint64_t episode_env_seed(uint64_t global_seed, uint64_t index) {
        return derive_seed(global_seed, "episode", index);
    }

    void seed_dataset() {
        for (int i = 0; i < cfg_.train.seed_episodes; ++i) {
            auto [ep, st] = collect_random(env_, episode_env_seed(cfg_.train.seed, episode_index_),
                                           cfg_.train.action_repeat, rng_collect_);
            account(st);
            buffer_.add(std::move(ep));
        }
    }

    EpisodeStats collect_episode() {
        auto [ep, st] = collect_with_policy(env_, agent_.model, agent_.actor,
                                            episode_env_seed(cfg_.train.seed, episode_index_),
                                            cfg_.train.action_repeat, ActMode::sample,
                                            cfg_.train.exploration_noise_std, rng_collect_);
        account(st);
        collected_.push_back(st);
        buffer_.add(std::move(ep));
        return st;
    }

    // One Algorithm-style update: model pass, imagination, joint
    // barrier+policy pass, critic pass. No environment interaction here.
    UpdateLosses update_step() {
        const int B = cfg_.train.batch_size, L = cfg_.train.chunk_length, H = cfg_.train.horizon;
        const int n = B * L;
        UpdateLosses out;

        // (1) world model
        LatentState starts;  // detached imagination starts
        {
            Tape tape;
            ChunkBatch batch = buffer_.sample_chunks(B, L, rng_update_);
            ModelLossResult ml = agent_.model.loss(batch, rng_update_);
            out.L_m = ml.loss.scalar();
            tape.backward(ml.loss);
            agent_.opt_model.step(tape);
            starts = flatten_posts(ml.posts);
        }

        // (2)+(3) imagine, then one backward through -J + beta.L_b
        ImaginedRollout ro;
        std::vector<std::vector<std::vector<double>>> draws;  // [draw][tau][row]
        std::vector<std::vector<double>> draw_term;           // [draw][row]
        {
            Tape tape;
            ro = imagine(agent_.model, agent_.actor, starts, H, rng_update_);
            std::vector<Tensor> bvals;
            for (const LatentState& s : ro.states) bvals.push_back(agent_.barrier(s));
            BarrierTerms bt = barrier_loss(bvals, unsafe_labels(ro.kappas), cfg_.barrier);
            PolicyLossResult pl = policy_loss(ro, agent_.critic, bt, cfg_.barrier.beta, cfg_.train.discount);
            out.L_b1 = bt.t1.scalar();
            out.L_b2 = bt.t2.scalar();
            out.L_b3 = bt.t3.scalar();
            out.L_p = pl.loss.scalar();
            if (cfg_.train.mc_draws > 1) {
                NoGrad ng;  // extra target draws, same pre-update parameters
                for (int d = 1; d < cfg_.train.mc_draws; ++d) {
                    ImaginedRollout rx = imagine(agent_.model, agent_.actor, starts, H, rng_update_);
                    draws.push_back(reward_rows(rx));
                    draw_term.push_back(value_rows(agent_.critic, rx.states.back()));
                }
            }
            tape.backward(pl.loss);
            agent_.opt_actor.step(tape);
        }
        draws.push_back(reward_rows(ro));

        // (4) critic towards Monte Carlo targets on the detached starts
        {
            NoGrad ng;
            draw_term.push_back(value_rows(agent_.critic, ro.states.back()));
        }
        std::vector<double> targets(n, 0.0);
        for (size_t d = 0; d < draws.size(); ++d) {
            std::vector<double> v = mc_value_target(draws[d], draw_term[d], cfg_.train.discount);
            for (int i = 0; i < n; ++i) targets[i] += v[i] / static_cast<double>(draws.size());
        }
        {
            Tape tape;
            Tensor feat = concat_cols({starts.h.detached(), starts.z.detached()});
            Tensor lc = critic_loss(agent_.critic, feat, Tensor::from({n, 1}, std::move(targets)));
            out.critic = lc.scalar();
            tape.backward(lc);
            agent_.opt_critic.step(tape);
        }
        return out;
    }

    // Full run: seed (or resume), then per epoch C updates + one collected
    // episode, one JSONL metrics line, periodic checkpoints.
    void train(const std::string& resume_stem = "") {
        namespace fs = std::filesystem;
        fs::create_directories(cfg_.train.run_dir);
        {
            std::ofstream cf(cfg_.train.run_dir + "/config.used");
            cf << serialize_config(cfg_);
        }
        if (!resume_stem.empty())
            load_checkpoint(resume_stem);
        else
            seed_dataset();
        std::ofstream log(cfg_.train.run_dir + "/metrics.jsonl", std::ios::app);
        if (!log) throw std::runtime_error("cannot write metrics log in " + cfg_.train.run_dir);
        for (int epoch = epoch_ + 1; epoch <= cfg_.train.epochs; ++epoch) {
            UpdateLosses acc;
            for (int c = 0; c < cfg_.train.updates_per_epoch; ++c) {
                UpdateLosses u = update_step();
                acc.L_m += u.L_m;
                acc.L_b1 += u.L_b1;
                acc.L_b2 += u.L_b2;
                acc.L_b3 += u.L_b3;
                acc.L_p += u.L_p;
                acc.critic += u.critic;
            }
            const double k = 1.0 / cfg_.train.updates_per_epoch;
            EpisodeStats st = collect_episode();
            epoch_ = epoch;
            log << "{\"epoch\":" << epoch << ",\"env_steps\":" << env_steps_
                << ",\"reward_return\":" << format_g17(st.total_reward)
                << ",\"cost_return\":" << format_g17(static_cast<double>(st.total_cost))
                << ",\"cost_regret_running\":" << format_g17(cost_regret(cum_cost_, env_steps_))
                << ",\"L_m\":" << format_g17(acc.L_m * k) << ",\"L_b1\":" << format_g17(acc.L_b1 * k)
                << ",\"L_b2\":" << format_g17(acc.L_b2 * k) << ",\"L_b3\":" << format_g17(acc.L_b3 * k)
                << ",\"L_p\":" << format_g17(acc.L_p * k)
                << ",\"critic_loss\":" << format_g17(acc.critic * k) << "}\n";
            log.flush();
            if (!log) throw std::runtime_error("metrics log write failed");
            if (cfg_.train.checkpoint_every > 0 && epoch % cfg_.train.checkpoint_every == 0 &&
                epoch < cfg_.train.epochs)
                save_checkpoint(cfg_.train.run_dir + "/ckpt_epoch" + std::to_string(epoch));
        }
        save_checkpoint(cfg_.train.run_dir + "/ckpt_final");
    }

    void save_checkpoint(const std::string& stem) {
        ArrayStore st;
        for (Param* p : agent_.all_params()) st.put_f64("param." + p->name, p->shape, *p->data);
        save_adam(st, "opt.model", agent_.opt_model);
        save_adam(st, "opt.actor", agent_.opt_actor);
        save_adam(st, "opt.critic", agent_.opt_critic);
        put_rng(st, "rng.update", rng_update_);
        put_rng(st, "rng.collect", rng_collect_);
        st.put_scalar_u64("counter.episode_index", episode_index_);
        st.put_scalar_u64("counter.env_steps", static_cast<uint64_t>(env_steps_));
        st.put_scalar_u64("counter.cum_cost", static_cast<uint64_t>(cum_cost_));
        st.put_scalar_u64("counter.epoch", static_cast<uint64_t>(epoch_));
        st.save(stem);
        ArrayStore rp;
        buffer_.save(rp);
        rp.save(stem + ".replay");
        std::ofstream cf(stem + ".config");
        cf << serialize_config(cfg_);
    }

    void load_checkpoint(const std::string& stem) {
        ArrayStore st = ArrayStore::load(stem);
        for (Param* p : agent_.all_params()) {
            const std::vector<double>& v = st.get_f64("param." + p->name);
            if (static_cast<int64_t>(v.size()) != p->size())
                throw std::runtime_error("checkpoint: size mismatch for parameter " + p->name);
            *p->data = v;
        }
        load_adam(st, "opt.model", agent_.opt_model);
        load_adam(st, "opt.actor", agent_.opt_actor);
        load_adam(st, "opt.critic", agent_.opt_critic);
        get_rng(st, "rng.update", rng_update_);
        get_rng(st, "rng.collect", rng_collect_);
        episode_index_ = st.get_scalar_u64("counter.episode_index");
        env_steps_ = static_cast<int64_t>(st.get_scalar_u64("counter.env_steps"));
        cum_cost_ = static_cast<int64_t>(st.get_scalar_u64("counter.cum_cost"));
        epoch_ = static_cast<int>(st.get_scalar_u64("counter.epoch"));
        buffer_ = ReplayBuffer::rebuild(ArrayStore::load(stem + ".replay"), cfg_.world,
                                        cfg_.train.action_repeat);
    }

private:
    void account(const EpisodeStats& st) {
        ++episode_index_;
        env_steps_ += st.length;
        cum_cost_ += st.total_cost;
    }

    static std::vector<std::vector<double>> reward_rows(const ImaginedRollout& ro) {
        std::vector<std::vector<double>> out;
        for (const Tensor& r : ro.rewards) out.emplace_back(r.data->begin(), r.data->end());
        return out;
    }
    static std::vector<double> value_rows(const Critic& critic, const LatentState& s) {
        Tensor v = critic(latent_feature(s));
        return *v.data;
    }

    static void save_adam(ArrayStore& st, const std::string& prefix, Adam& opt) {
        st.put_scalar_u64(prefix + ".t", static_cast<uint64_t>(opt.step_count()));
        for (size_t i = 0; i < opt.params().size(); ++i) {
            const Param& p = *opt.params()[i];
            AdamSlot& slot = opt.slot(i);
            if (slot.m.empty()) {
                slot.m.assign(static_cast<size_t>(p.size()), 0.0);
                slot.v.assign(static_cast<size_t>(p.size()), 0.0);
            }
            st.put_f64(prefix + "." + p.name + ".m", p.shape, slot.m);
            st.put_f64(prefix + "." + p.name + ".v", p.shape, slot.v);
        }
    }
    static void load_adam(const ArrayStore& st, const std::string& prefix, Adam& opt) {
        opt.set_step_count(static_cast<int64_t>(st.get_scalar_u64(prefix + ".t")));
        for (size_t i = 0; i < opt.params().size(); ++i) {
            const Param& p = *opt.params()[i];
            opt.slot(i).m = st.get_f64(prefix + "." + p.name + ".m");
            opt.slot(i).v = st.get_f64(prefix + "." + p.name + ".v");
        }
    }
    static void put_rng(ArrayStore& st, const std::string& name, const Rng& rng) {
        auto s = rng.save();
        st.put_u64(name, {static_cast<int>(s.size())}, std::vector<uint64_t>(s.begin(), s.end()));
    }
    static void get_rng(const ArrayStore& st, const std::string& name, Rng& rng) {
        const std::vector<uint64_t>& v = st.get_u64(name);
        std::array<uint64_t, 6> s;
        if (v.size() != s.size()) throw std::runtime_error("checkpoint: bad rng state size for " + name);
        std::copy(v.begin(), v.end(), s.begin());
        rng.restore(s);
    }

    Config cfg_;
    HazardWorld env_;
    Agent agent_;
    ReplayBuffer buffer_;
    Rng rng_update_, rng_collect_;
    uint64_t episode_index_ = 0;
    int64_t env_steps_ = 0;
    int64_t cum_cost_ = 0;
    int epoch_ = 0;
    std::vector<EpisodeStats> collected_;
};

}  // namespace latentsafe
