#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "latentsafe/checkpoint.hpp"
#include "latentsafe/env.hpp"
#include "latentsafe/tensor.hpp"

namespace latentsafe {

struct EpisodeStats {
    double total_reward = 0;
    int64_t total_cost = 0;  // count of violating env steps
    int64_t length = 0;      // env steps
};

// One stored transition per action-repeat block: the observation at the block
// start, the action held through the block, the block's summed reward, and the
// safety label of the recorded state (any violation during the block that
// produced it; the first record of an episode is labeled safe by placement).
struct Episode {
    uint64_t env_seed = 0;
    int hw = 0;
    std::vector<float> obs;    // [n, 3, hw, hw]
    std::vector<double> act;   // [n, 2]
    std::vector<double> rew;   // [n]
    std::vector<uint8_t> kap;  // [n]

    int length() const { return static_cast<int>(rew.size()); }
};

// Runs one full episode, packing records as above. act_fn(block, obs) decides
// the block's action; both live collection and checkpoint rebuild go through
// here so the two produce identical episodes.
template <typename ActFn>
std::pair<Episode, EpisodeStats> run_episode(HazardWorld& env, uint64_t env_seed, int action_repeat,
                                             ActFn&& act_fn) {
    if (action_repeat < 1) throw std::invalid_argument("run_episode: action_repeat must be >= 1");
    Episode ep;
    ep.env_seed = env_seed;
    ep.hw = env.config().image_hw;
    EpisodeStats st;
    std::vector<double> obs = env.reset(env_seed);
    const int T = env.config().episode_length;
    int step = 0;
    uint8_t label = 0;  // violations of the previous block
    while (step < T) {
        const std::array<double, 2> a = act_fn(ep.length(), obs);
        for (double v : obs) ep.obs.push_back(static_cast<float>(v));
        ep.act.push_back(a[0]);
        ep.act.push_back(a[1]);
        ep.kap.push_back(label);
        double rsum = 0;
        int kor = 0;
        for (int k = 0; k < action_repeat && step < T; ++k, ++step) {
            StepResult sr = env.step(a[0], a[1]);
            rsum += sr.reward;
            kor |= sr.kappa;
            st.total_cost += sr.kappa;
            obs = std::move(sr.obs);
        }
        ep.rew.push_back(rsum);
        st.total_reward += rsum;
        label = static_cast<uint8_t>(kor);
    }
    st.length = T;
    return {std::move(ep), st};
}

// Per-step constant tensors, ready for the model loss.
struct ChunkBatch {
    int batch = 0, length = 0;
    std::vector<Tensor> obs;  // [B,3,hw,hw] each
    std::vector<Tensor> act;  // [B,2]
    std::vector<Tensor> rew;  // [B,1]
    std::vector<Tensor> kap;  // [B,1]
};

class ReplayBuffer {
public:
    explicit ReplayBuffer(int64_t capacity_steps = 0) : capacity_(capacity_steps) {}

    void add(Episode ep) {
        steps_ += ep.length();
        episodes_.push_back(std::move(ep));
        while (capacity_ > 0 && steps_ > capacity_ && episodes_.size() > 1) {
            steps_ -= episodes_.front().length();
            episodes_.erase(episodes_.begin());
        }
    }

    size_t size() const { return episodes_.size(); }
    const std::vector<Episode>& episodes() const { return episodes_; }
    const Episode& episode(size_t i) const { return episodes_.at(i); }

    // B contiguous length-L slices; a uniformly chosen eligible episode, then
    // a uniformly chosen valid offset. Never crosses episode boundaries.
    ChunkBatch sample_chunks(int B, int L, Rng& rng) const {
        std::vector<size_t> eligible;
        for (size_t i = 0; i < episodes_.size(); ++i)
            if (episodes_[i].length() >= L) eligible.push_back(i);
        if (eligible.empty())
            throw std::runtime_error("replay: no stored episode reaches the chunk length; "
                                     "collect longer seed episodes");
        const int hw = episodes_[eligible[0]].hw;
        const size_t plane = static_cast<size_t>(3) * hw * hw;
        ChunkBatch cb;
        cb.batch = B;
        cb.length = L;
        std::vector<std::vector<double>> obs(L), act(L), rew(L), kap(L);
        for (int t = 0; t < L; ++t) {
            obs[t].resize(static_cast<size_t>(B) * plane);
            act[t].resize(static_cast<size_t>(B) * 2);
            rew[t].resize(B);
            kap[t].resize(B);
        }
        for (int b = 0; b < B; ++b) {
            const Episode& ep = episodes_[eligible[rng.below(eligible.size())]];
            const int off = static_cast<int>(rng.below(static_cast<uint64_t>(ep.length() - L + 1)));
            for (int t = 0; t < L; ++t) {
                const size_t rec = static_cast<size_t>(off) + t;
                const float* src = ep.obs.data() + rec * plane;
                double* dst = obs[t].data() + static_cast<size_t>(b) * plane;
                for (size_t i = 0; i < plane; ++i) dst[i] = src[i];
                act[t][2 * b] = ep.act[2 * rec];
                act[t][2 * b + 1] = ep.act[2 * rec + 1];
                rew[t][b] = ep.rew[rec];
                kap[t][b] = ep.kap[rec];
            }
        }
        for (int t = 0; t < L; ++t) {
            cb.obs.push_back(Tensor::from({B, 3, hw, hw}, std::move(obs[t])));
            cb.act.push_back(Tensor::from({B, 2}, std::move(act[t])));
            cb.rew.push_back(Tensor::from({B, 1}, std::move(rew[t])));
            cb.kap.push_back(Tensor::from({B, 1}, std::move(kap[t])));
        }
        return cb;
    }

    // Episodes persist as (env seed, action sequence); observations, rewards
    // and labels are regenerated through the deterministic environment.
    void save(ArrayStore& store) const {
        store.put_scalar_u64("replay.episodes", episodes_.size());
        for (size_t i = 0; i < episodes_.size(); ++i) {
            const Episode& ep = episodes_[i];
            const std::string tag = "replay.ep" + std::to_string(i);
            store.put_scalar_u64(tag + ".seed", ep.env_seed);
            store.put_f64(tag + ".act", {ep.length(), 2}, ep.act);
        }
    }

    static ReplayBuffer rebuild(const ArrayStore& store, const WorldConfig& wc, int action_repeat,
                                int64_t capacity_steps = 0) {
        ReplayBuffer buf(capacity_steps);
        HazardWorld env(wc);
        const uint64_t n = store.get_scalar_u64("replay.episodes");
        for (uint64_t i = 0; i < n; ++i) {
            const std::string tag = "replay.ep" + std::to_string(i);
            const uint64_t seed = store.get_scalar_u64(tag + ".seed");
            const std::vector<double>& act = store.get_f64(tag + ".act");
            auto [ep, st] = run_episode(env, seed, action_repeat,
                                        [&act](int block, const std::vector<double>&) {
                                            return std::array<double, 2>{act[2 * block], act[2 * block + 1]};
                                        });
            if (ep.act.size() != act.size())
                throw std::runtime_error("replay rebuild: action count mismatch (config drift?)");
            buf.add(std::move(ep));
        }
        return buf;
    }

private:
    std::vector<Episode> episodes_;
    int64_t capacity_ = 0;
    int64_t steps_ = 0;
};

}  // namespace latentsafe
