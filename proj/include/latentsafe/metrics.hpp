#pragma once

#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "latentsafe/replay.hpp"

namespace latentsafe {

// average violating steps per episode
inline double cost_return(const std::vector<EpisodeStats>& episodes) {
    if (episodes.empty()) throw std::invalid_argument("cost_return: no episodes");
    double s = 0;
    for (const EpisodeStats& e : episodes) s += static_cast<double>(e.total_cost);
    return s / static_cast<double>(episodes.size());
}

// average episode reward
inline double reward_return(const std::vector<EpisodeStats>& episodes) {
    if (episodes.empty()) throw std::invalid_argument("reward_return: no episodes");
    double s = 0;
    for (const EpisodeStats& e : episodes) s += e.total_reward;
    return s / static_cast<double>(episodes.size());
}

// total violations per environment interaction, over all of training
inline double cost_regret(int64_t cumulative_cost, int64_t total_env_steps) {
    if (total_env_steps < 1) throw std::invalid_argument("cost_regret: total_env_steps must be >= 1");
    return static_cast<double>(cumulative_cost) / static_cast<double>(total_env_steps);
}

// shortest round-trippable decimal form, shared by every log writer
inline std::string format_g17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline const std::vector<std::string>& metrics_fields() {
    static const std::vector<std::string> fields = {
        "epoch", "env_steps", "reward_return", "cost_return", "cost_regret_running",
        "L_m", "L_b1", "L_b2", "L_b3", "L_p", "critic_loss"};
    return fields;
}

// training-log JSONL -> CSV with a fixed column order
inline void export_csv(const std::string& jsonl_path, const std::string& csv_path) {
    std::ifstream in(jsonl_path);
    if (!in) throw std::runtime_error("cannot read " + jsonl_path);
    std::ofstream out(csv_path);
    if (!out) throw std::runtime_error("cannot write " + csv_path);
    const auto& fields = metrics_fields();
    for (size_t i = 0; i < fields.size(); ++i) out << fields[i] << (i + 1 < fields.size() ? "," : "\n");
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const std::exception& e) {
            throw std::runtime_error(jsonl_path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        for (size_t i = 0; i < fields.size(); ++i) {
            const auto& f = fields[i];
            if (!j.contains(f))
                throw std::runtime_error(jsonl_path + ":" + std::to_string(lineno) + ": missing field " + f);
            if (j[f].is_number_integer())
                out << j[f].get<int64_t>();
            else
                out << format_g17(j[f].get<double>());
            out << (i + 1 < fields.size() ? "," : "\n");
        }
    }
    if (!out) throw std::runtime_error("write failed: " + csv_path);
}

}  // namespace latentsafe
