#include <catch2/catch_amalgamated.hpp>

#include <array>

#include "helpers.hpp"
#include "latentsafe/replay.hpp"

using namespace latentsafe;

namespace {

// length-n episode with recognizable content: record i carries reward i,
// observation filled with i, action (i, -i), label i % 2
Episode marked_episode(int n, double rew_base = 0.0, int hw = 2) {
    Episode ep;
    ep.hw = hw;
    const size_t plane = static_cast<size_t>(3) * hw * hw;
    for (int i = 0; i < n; ++i) {
        for (size_t p = 0; p < plane; ++p) ep.obs.push_back(static_cast<float>(rew_base + i));
        ep.act.push_back(rew_base + i);
        ep.act.push_back(-(rew_base + i));
        ep.rew.push_back(rew_base + i);
        ep.kap.push_back(static_cast<uint8_t>(i % 2));
    }
    return ep;
}

// a vertical wall of hazards at x = 0.5 the agent must cross
WorldConfig wall_config() {
    WorldConfig cfg;
    cfg.hazards.clear();
    for (int i = -4; i <= 4; ++i) cfg.hazards.push_back({0.5, 0.2 * i, 0.15});
    cfg.goal = {0.875, 0.0, 0.1};
    cfg.episode_length = 40;
    return cfg;
}

}  // namespace

TEST_CASE("run_episode packs action-repeat blocks with lagged safety labels") {
    WorldConfig cfg = wall_config();
    const int R = 3, T = cfg.episode_length;
    const int n_records = (T + R - 1) / R;  // 14

    // find a start left of the wall so driving right must cross it
    uint64_t seed = 0;
    {
        HazardWorld probe(cfg);
        while (true) {
            probe.reset(seed);
            if (probe.state().ax < 0.25) break;
            ++seed;
        }
    }

    HazardWorld env(cfg);
    std::vector<int> seen_blocks;
    auto [ep, st] = run_episode(env, seed, R, [&](int block, const std::vector<double>&) {
        seen_blocks.push_back(block);
        return std::array<double, 2>{1.0, 0.0};
    });

    REQUIRE(ep.length() == n_records);
    REQUIRE(ep.env_seed == seed);
    REQUIRE(ep.hw == cfg.image_hw);
    REQUIRE(ep.obs.size() == static_cast<size_t>(n_records) * 3 * 32 * 32);
    REQUIRE(ep.act.size() == static_cast<size_t>(n_records) * 2);
    REQUIRE(st.length == T);
    REQUIRE(st.total_cost > 0);  // the wall was crossed
    std::vector<int> expect_blocks(n_records);
    for (int i = 0; i < n_records; ++i) expect_blocks[i] = i;
    REQUIRE(seen_blocks == expect_blocks);

    // replay the same seed step by step and check every stored field
    HazardWorld mirror(cfg);
    std::vector<double> obs = mirror.reset(seed);
    const size_t plane = obs.size();
    double total_reward = 0;
    int64_t total_cost = 0;
    int step = 0;
    uint8_t label = 0;
    bool saw_unsafe_label = false;
    for (int block = 0; block < n_records; ++block) {
        for (size_t i = 0; i < plane; ++i)
            REQUIRE(ep.obs[block * plane + i] == static_cast<float>(obs[i]));
        REQUIRE(ep.act[2 * block] == 1.0);
        REQUIRE(ep.act[2 * block + 1] == 0.0);
        REQUIRE(ep.kap[block] == label);  // violations of the PREVIOUS block
        saw_unsafe_label |= (label != 0);
        double rsum = 0;
        int kor = 0;
        for (int k = 0; k < R && step < T; ++k, ++step) {
            StepResult sr = mirror.step(1.0, 0.0);
            rsum += sr.reward;
            kor |= sr.kappa;
            total_cost += sr.kappa;
            obs = std::move(sr.obs);
        }
        REQUIRE(ep.rew[block] == rsum);
        total_reward += rsum;
        label = static_cast<uint8_t>(kor);
    }
    REQUIRE(saw_unsafe_label);
    REQUIRE(ep.kap[0] == 0);  // placement is always clear
    REQUIRE(st.total_reward == total_reward);
    REQUIRE(st.total_cost == total_cost);

    REQUIRE_THROWS_AS(run_episode(env, 0, 0, [](int, const std::vector<double>&) {
                          return std::array<double, 2>{0, 0};
                      }),
                      std::invalid_argument);
}

TEST_CASE("replay buffer eviction") {
    SECTION("oldest episodes leave first once over capacity") {
        ReplayBuffer buf(25);
        for (int i = 1; i <= 3; ++i) {
            Episode ep = marked_episode(10);
            ep.env_seed = static_cast<uint64_t>(i);
            buf.add(std::move(ep));
        }
        REQUIRE(buf.size() == 2);
        REQUIRE(buf.episode(0).env_seed == 2);
        REQUIRE(buf.episode(1).env_seed == 3);
    }

    SECTION("the newest episode always survives") {
        ReplayBuffer buf(5);
        buf.add(marked_episode(10));
        REQUIRE(buf.size() == 1);
        Episode ep = marked_episode(10);
        ep.env_seed = 9;
        buf.add(std::move(ep));
        REQUIRE(buf.size() == 1);
        REQUIRE(buf.episode(0).env_seed == 9);
    }

    SECTION("zero capacity means unbounded") {
        ReplayBuffer buf;
        for (int i = 0; i < 8; ++i) buf.add(marked_episode(10));
        REQUIRE(buf.size() == 8);
    }
}

TEST_CASE("chunk sampling") {
    SECTION("slices are contiguous, aligned, and within one episode") {
        ReplayBuffer buf;
        buf.add(marked_episode(12));
        Rng rng(5);
        const int B = 6, L = 5, hw = 2;
        ChunkBatch cb = buf.sample_chunks(B, L, rng);
        REQUIRE(cb.batch == B);
        REQUIRE(cb.length == L);
        REQUIRE(cb.obs[0].shape == Shape{B, 3, hw, hw});
        REQUIRE(cb.act[0].shape == Shape{B, 2});
        REQUIRE(cb.rew[0].shape == Shape{B, 1});
        REQUIRE(cb.kap[0].shape == Shape{B, 1});
        const size_t plane = 3 * hw * hw;
        for (int b = 0; b < B; ++b) {
            const double off = (*cb.rew[0].data)[b];
            REQUIRE(off == std::floor(off));
            REQUIRE(off >= 0.0);
            REQUIRE(off <= 7.0);
            for (int t = 0; t < L; ++t) {
                const double rec = off + t;
                REQUIRE((*cb.rew[t].data)[b] == rec);
                REQUIRE((*cb.act[t].data)[2 * b] == rec);
                REQUIRE((*cb.act[t].data)[2 * b + 1] == -rec);
                REQUIRE((*cb.kap[t].data)[b] == static_cast<double>(static_cast<int>(rec) % 2));
                for (size_t p = 0; p < plane; ++p)
                    REQUIRE((*cb.obs[t].data)[b * plane + p] == static_cast<double>(static_cast<float>(rec)));
            }
        }
    }

    SECTION("episodes shorter than the chunk are never picked") {
        ReplayBuffer buf;
        buf.add(marked_episode(4, 100.0));
        buf.add(marked_episode(12));
        Rng rng(6);
        for (int trial = 0; trial < 50; ++trial) {
            ChunkBatch cb = buf.sample_chunks(3, 5, rng);
            for (double v : *cb.rew[0].data) REQUIRE(v < 12.0);
        }
    }

    SECTION("chunk length equal to the episode pins the offset at zero") {
        ReplayBuffer buf;
        buf.add(marked_episode(4));
        Rng rng(7);
        ChunkBatch cb = buf.sample_chunks(4, 4, rng);
        for (double v : *cb.rew[0].data) REQUIRE(v == 0.0);
    }

    SECTION("nothing long enough is an error") {
        ReplayBuffer buf;
        buf.add(marked_episode(5));
        Rng rng(8);
        REQUIRE_THROWS_WITH(buf.sample_chunks(2, 6, rng),
                            Catch::Matchers::ContainsSubstring("chunk length"));
    }

    SECTION("offsets are uniform across the valid range") {
        ReplayBuffer buf;
        buf.add(marked_episode(12));
        Rng rng(9);
        const int L = 5, bins = 8;  // offsets 0..7
        std::array<int64_t, 8> counts{};
        const int draws = 10000;
        for (int i = 0; i < draws / 10; ++i) {
            ChunkBatch cb = buf.sample_chunks(10, L, rng);
            for (double v : *cb.rew[0].data) counts[static_cast<size_t>(v)] += 1;
        }
        const double expect = static_cast<double>(draws) / bins;
        double chi2 = 0;
        for (int64_t c : counts) chi2 += (c - expect) * (c - expect) / expect;
        REQUIRE(chi2 < 18.475);  // chi-square df=7 critical value at p=0.01
    }
}

TEST_CASE("episodes rebuild exactly from seed and actions") {
    WorldConfig cfg;
    cfg.episode_length = 30;
    const int R = 2;

    ReplayBuffer buf;
    Rng arng(21);
    HazardWorld env(cfg);
    for (uint64_t seed : {11ull, 12ull}) {
        auto [ep, st] = run_episode(env, seed, R, [&](int, const std::vector<double>&) {
            return std::array<double, 2>{arng.uniform(-1, 1), arng.uniform(-1, 1)};
        });
        buf.add(std::move(ep));
    }

    ArrayStore store;
    buf.save(store);
    ReplayBuffer back = ReplayBuffer::rebuild(store, cfg, R);
    REQUIRE(back.size() == buf.size());
    for (size_t i = 0; i < buf.size(); ++i) {
        const Episode &a = buf.episode(i), &b = back.episode(i);
        REQUIRE(a.env_seed == b.env_seed);
        REQUIRE(a.hw == b.hw);
        REQUIRE(a.obs == b.obs);
        REQUIRE(a.act == b.act);
        REQUIRE(a.rew == b.rew);
        REQUIRE(a.kap == b.kap);
    }

    SECTION("a drifted world config is caught") {
        WorldConfig drifted = cfg;
        drifted.episode_length = 31;
        REQUIRE_THROWS_WITH(ReplayBuffer::rebuild(store, drifted, R),
                            Catch::Matchers::ContainsSubstring("mismatch"));
    }
}
