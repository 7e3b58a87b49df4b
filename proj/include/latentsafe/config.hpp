#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

#include "latentsafe/env.hpp"

namespace latentsafe {

struct ModelConfig {
    int deterministic_size = 64;  // recurrent state width
    int stochastic_size = 16;     // sampled latent width
    int embed_size = 64;          // encoder output width
    int hidden_size = 64;         // dense head width
    double free_nats = 1.0;
    double safety_weight = 5.0;   // extra weight on unsafe-step safety error
};

struct BarrierConfig {
    double eta = 0.01;     // hinge margin
    double lambda = 0.1;   // linear class-K coefficient
    std::array<double, 3> beta = {1.0, 1.0, 1.0};
    int hidden_size = 64;  // barrier network width
};

struct TrainConfig {
    int horizon = 10;           // imagined rollout length
    int action_repeat = 2;
    int updates_per_epoch = 50;
    int batch_size = 16;
    int chunk_length = 20;
    int epochs = 150;
    int seed_episodes = 5;
    int mc_draws = 1;
    double discount = 0.99;
    double exploration_noise_std = 0.3;
    double model_lr = 6e-4;
    double actor_lr = 3e-4;  // shared by policy and barrier parameters
    double critic_lr = 3e-4;
    double grad_clip = 100.0;
    uint64_t seed = 1;
    int checkpoint_every = 25;  // epochs between periodic checkpoints
    std::string run_dir = "run";
};

struct Config {
    WorldConfig world;
    ModelConfig model;
    BarrierConfig barrier;
    TrainConfig train;
};

namespace detail {

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline double parse_real(const std::string& key, const std::string& v) {
    size_t used = 0;
    double out;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        throw std::invalid_argument("config: bad number for '" + key + "': " + v);
    }
    if (trim(v.substr(used)) != "") throw std::invalid_argument("config: bad number for '" + key + "': " + v);
    return out;
}

inline int64_t parse_int(const std::string& key, const std::string& v) {
    size_t used = 0;
    int64_t out;
    try {
        out = std::stoll(v, &used);
    } catch (const std::exception&) {
        throw std::invalid_argument("config: bad integer for '" + key + "': " + v);
    }
    if (trim(v.substr(used)) != "") throw std::invalid_argument("config: bad integer for '" + key + "': " + v);
    return out;
}

inline std::vector<double> parse_reals(const std::string& key, const std::string& v, char sep) {
    std::vector<double> out;
    std::istringstream ss(v);
    std::string item;
    while (std::getline(ss, item, sep)) out.push_back(parse_real(key, trim(item)));
    return out;
}

}  // namespace detail

// Flat "key = value" text. '#' starts a comment; unknown keys are an error.
inline Config parse_config_text(std::istream& is) {
    Config c;
    using Setter = std::function<void(const std::string&, const std::string&)>;
    auto real_into = [](double& slot) {
        return [&slot](const std::string& k, const std::string& v) { slot = detail::parse_real(k, v); };
    };
    auto int_into = [](int& slot) {
        return [&slot](const std::string& k, const std::string& v) {
            slot = static_cast<int>(detail::parse_int(k, v));
        };
    };
    const std::map<std::string, Setter> setters = {
        {"arena_half_extent", real_into(c.world.arena_half_extent)},
        {"agent_radius", real_into(c.world.agent_radius)},
        {"agent_marker_radius", real_into(c.world.agent_marker_radius)},
        {"max_speed", real_into(c.world.max_speed)},
        {"episode_length", int_into(c.world.episode_length)},
        {"image_size", int_into(c.world.image_hw)},
        {"hazards",
         [&c](const std::string& k, const std::string& v) {
             c.world.hazards.clear();
             std::istringstream ss(v);
             std::string part;
             while (std::getline(ss, part, ';')) {
                 part = detail::trim(part);
                 if (part.empty()) continue;
                 auto t = detail::parse_reals(k, part, ',');
                 if (t.size() != 3) throw std::invalid_argument("config: hazards entries must be x,y,r triples");
                 c.world.hazards.push_back({t[0], t[1], t[2]});
             }
         }},
        {"goal",
         [&c](const std::string& k, const std::string& v) {
             auto t = detail::parse_reals(k, v, ',');
             if (t.size() != 3) throw std::invalid_argument("config: goal must be a x,y,r triple");
             c.world.goal = {t[0], t[1], t[2]};
         }},
        {"deterministic_size", int_into(c.model.deterministic_size)},
        {"stochastic_size", int_into(c.model.stochastic_size)},
        {"embed_size", int_into(c.model.embed_size)},
        {"hidden_size", int_into(c.model.hidden_size)},
        {"free_nats", real_into(c.model.free_nats)},
        {"safety_weight", real_into(c.model.safety_weight)},
        {"eta", real_into(c.barrier.eta)},
        {"lambda", real_into(c.barrier.lambda)},
        {"barrier_hidden_size", int_into(c.barrier.hidden_size)},
        {"beta",
         [&c](const std::string& k, const std::string& v) {
             auto t = detail::parse_reals(k, v, ',');
             if (t.size() != 3) throw std::invalid_argument("config: beta must have three components");
             c.barrier.beta = {t[0], t[1], t[2]};
         }},
        {"horizon", int_into(c.train.horizon)},
        {"action_repeat", int_into(c.train.action_repeat)},
        {"updates_per_epoch", int_into(c.train.updates_per_epoch)},
        {"batch_size", int_into(c.train.batch_size)},
        {"chunk_length", int_into(c.train.chunk_length)},
        {"epochs", int_into(c.train.epochs)},
        {"seed_episodes", int_into(c.train.seed_episodes)},
        {"mc_draws", int_into(c.train.mc_draws)},
        {"discount", real_into(c.train.discount)},
        {"exploration_noise_std", real_into(c.train.exploration_noise_std)},
        {"model_lr", real_into(c.train.model_lr)},
        {"actor_lr", real_into(c.train.actor_lr)},
        {"critic_lr", real_into(c.train.critic_lr)},
        {"grad_clip", real_into(c.train.grad_clip)},
        {"checkpoint_every", int_into(c.train.checkpoint_every)},
        {"seed",
         [&c](const std::string& k, const std::string& v) {
             c.train.seed = static_cast<uint64_t>(detail::parse_int(k, v));
         }},
        {"run_dir",
         [&c](const std::string&, const std::string& v) { c.train.run_dir = v; }},
    };

    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string val = detail::trim(line.substr(eq + 1));
        auto it = setters.find(key);
        if (it == setters.end())
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        it->second(key, val);
    }
    validate(c.world);
    if (c.train.chunk_length < 2) throw std::invalid_argument("config: chunk_length must be at least 2");
    const int stored = (c.world.episode_length + c.train.action_repeat - 1) / c.train.action_repeat;
    if (c.train.chunk_length > stored)
        throw std::invalid_argument("config: chunk_length exceeds stored transitions per episode");
    if (c.train.discount < 0 || c.train.discount > 1) throw std::invalid_argument("config: discount must be in [0,1]");
    if (c.train.horizon < 0) throw std::invalid_argument("config: horizon must be nonnegative");
    for (double b : c.barrier.beta)
        if (b < 0) throw std::invalid_argument("config: beta components must be nonnegative");
    if (c.barrier.eta <= 0) throw std::invalid_argument("config: eta must be positive");
    if (c.barrier.lambda <= 0 || c.barrier.lambda > 1)
        throw std::invalid_argument("config: lambda must be in (0,1]");
    for (int v : {c.train.action_repeat, c.train.updates_per_epoch, c.train.batch_size, c.train.epochs,
                  c.train.seed_episodes, c.train.mc_draws, c.model.deterministic_size,
                  c.model.stochastic_size, c.model.embed_size, c.model.hidden_size,
                  c.barrier.hidden_size})
        if (v <= 0) throw std::invalid_argument("config: counts and sizes must be positive");
    return c;
}

inline Config load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read config file " + path);
    return parse_config_text(is);
}

inline std::string serialize_config(const Config& c) {
    std::ostringstream os;
    os.precision(17);
    os << "arena_half_extent = " << c.world.arena_half_extent << '\n';
    os << "hazards = ";
    for (size_t i = 0; i < c.world.hazards.size(); ++i) {
        const Disk& h = c.world.hazards[i];
        os << h.x << ',' << h.y << ',' << h.r << (i + 1 < c.world.hazards.size() ? "; " : "");
    }
    os << '\n';
    os << "goal = " << c.world.goal.x << ',' << c.world.goal.y << ',' << c.world.goal.r << '\n';
    os << "agent_radius = " << c.world.agent_radius << '\n';
    os << "agent_marker_radius = " << c.world.agent_marker_radius << '\n';
    os << "max_speed = " << c.world.max_speed << '\n';
    os << "episode_length = " << c.world.episode_length << '\n';
    os << "image_size = " << c.world.image_hw << '\n';
    os << "deterministic_size = " << c.model.deterministic_size << '\n';
    os << "stochastic_size = " << c.model.stochastic_size << '\n';
    os << "embed_size = " << c.model.embed_size << '\n';
    os << "hidden_size = " << c.model.hidden_size << '\n';
    os << "free_nats = " << c.model.free_nats << '\n';
    os << "safety_weight = " << c.model.safety_weight << '\n';
    os << "eta = " << c.barrier.eta << '\n';
    os << "lambda = " << c.barrier.lambda << '\n';
    os << "barrier_hidden_size = " << c.barrier.hidden_size << '\n';
    os << "beta = " << c.barrier.beta[0] << ',' << c.barrier.beta[1] << ',' << c.barrier.beta[2] << '\n';
    os << "horizon = " << c.train.horizon << '\n';
    os << "action_repeat = " << c.train.action_repeat << '\n';
    os << "updates_per_epoch = " << c.train.updates_per_epoch << '\n';
    os << "batch_size = " << c.train.batch_size << '\n';
    os << "chunk_length = " << c.train.chunk_length << '\n';
    os << "epochs = " << c.train.epochs << '\n';
    os << "seed_episodes = " << c.train.seed_episodes << '\n';
    os << "mc_draws = " << c.train.mc_draws << '\n';
    os << "discount = " << c.train.discount << '\n';
    os << "exploration_noise_std = " << c.train.exploration_noise_std << '\n';
    os << "model_lr = " << c.train.model_lr << '\n';
    os << "actor_lr = " << c.train.actor_lr << '\n';
    os << "critic_lr = " << c.train.critic_lr << '\n';
    os << "grad_clip = " << c.train.grad_clip << '\n';
    os << "checkpoint_every = " << c.train.checkpoint_every << '\n';
    os << "seed = " << c.train.seed << '\n';
    os << "run_dir = " << c.train.run_dir << '\n';
    return os.str();
}

}  // namespace latentsafe
