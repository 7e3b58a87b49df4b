#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "latentsafe/rng.hpp"

namespace latentsafe {

struct Disk {
    double x = 0, y = 0, r = 0;
};

struct WorldConfig {
    double arena_half_extent = 1.0;           // arena is [-e, e]^2
    std::vector<Disk> hazards = {{-0.45, 0.45, 0.25}, {0.5, 0.2, 0.25}, {0.0, -0.5, 0.25}};
    Disk goal = {0.6, -0.6, 0.15};
    double agent_radius = 0.05;
    // rendering only: physical radius 0.05 is under a pixel at 32x32, so the
    // agent is drawn with a larger marker (goal-blob scale) to stay legible
    double agent_marker_radius = 0.12;
    double max_speed = 0.05;                  // world units per step
    int episode_length = 200;
    int image_hw = 32;                        // observations are 3 x image_hw x image_hw
    uint64_t seed = 0;
};

inline void validate(const WorldConfig& c) {
    if (c.arena_half_extent <= 0) throw std::invalid_argument("world config: arena_half_extent must be positive");
    if (c.agent_radius <= 0 || c.goal.r <= 0) throw std::invalid_argument("world config: all radii must be positive");
    if (c.agent_marker_radius <= 0) throw std::invalid_argument("world config: all radii must be positive");
    for (const Disk& h : c.hazards)
        if (h.r <= 0) throw std::invalid_argument("world config: all radii must be positive");
    for (const Disk& h : c.hazards) {
        const double d = std::hypot(h.x - c.goal.x, h.y - c.goal.y);
        if (d < h.r + c.goal.r) throw std::invalid_argument("world config: goal intersects a hazard");
    }
    if (c.episode_length <= 0) throw std::invalid_argument("world config: episode_length must be positive");
    if (c.image_hw < 2) throw std::invalid_argument("world config: image size too small");
    if (c.max_speed <= 0) throw std::invalid_argument("world config: max_speed must be positive");
}

struct EnvState {
    double ax = 0, ay = 0;  // agent center
    double gx = 0, gy = 0;  // current goal center
    int step_index = 0;
    Rng rng;                // episode generator (goal relocation)
};

inline int safety_detector(const WorldConfig& c, double ax, double ay) {
    for (const Disk& h : c.hazards)
        if (std::hypot(ax - h.x, ay - h.y) < h.r + c.agent_radius) return 1;
    return 0;
}
inline int safety_detector(const WorldConfig& c, const EnvState& s) {
    return safety_detector(c, s.ax, s.ay);
}

// Flat-shaded disks over a dark background; palette values are small dyadic
// rationals so a float32 round-trip of an observation is lossless.
namespace palette {
inline constexpr double background[3] = {0.125, 0.125, 0.125};
inline constexpr double hazard[3] = {0.75, 0.125, 0.125};
inline constexpr double goal[3] = {0.125, 0.75, 0.125};
inline constexpr double agent[3] = {0.25, 0.375, 1.0};
}  // namespace palette

// CHW image in [0,1]. Row 0 is the top edge (+y). Each pixel averages a 4x4
// subsample grid; per subsample the draw order hazards, goal, agent decides the
// color (last covering shape wins). The coverage shading matters: the agent
// disk is under two pixels wide, and without it sub-pixel motion would not
// change the image at all. Averages of palette entries are multiples of 1/128,
// so values still survive a float32 round trip exactly.
inline std::vector<double> render(const WorldConfig& c, double ax, double ay, double gx, double gy) {
    constexpr int kSub = 4;
    const int n = c.image_hw;
    const double e = c.arena_half_extent;
    const double px = 2.0 * e / n;  // world extent of one pixel
    std::vector<double> img(static_cast<size_t>(3) * n * n);
    for (int row = 0; row < n; ++row) {
        for (int col = 0; col < n; ++col) {
            double acc[3] = {0, 0, 0};
            for (int sy = 0; sy < kSub; ++sy) {
                const double wy = e - (row + (sy + 0.5) / kSub) * px;
                for (int sx = 0; sx < kSub; ++sx) {
                    const double wx = -e + (col + (sx + 0.5) / kSub) * px;
                    const double* color = palette::background;
                    for (const Disk& h : c.hazards)
                        if (std::hypot(wx - h.x, wy - h.y) <= h.r) color = palette::hazard;
                    if (std::hypot(wx - gx, wy - gy) <= c.goal.r) color = palette::goal;
                    if (std::hypot(wx - ax, wy - ay) <= c.agent_marker_radius) color = palette::agent;
                    acc[0] += color[0];
                    acc[1] += color[1];
                    acc[2] += color[2];
                }
            }
            const size_t at = static_cast<size_t>(row) * n + col;
            img[at] = acc[0] / (kSub * kSub);
            img[static_cast<size_t>(n) * n + at] = acc[1] / (kSub * kSub);
            img[2 * static_cast<size_t>(n) * n + at] = acc[2] / (kSub * kSub);
        }
    }
    return img;
}

inline void write_ppm(const std::string& path, const std::vector<double>& img, int hw) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << "P6\n" << hw << ' ' << hw << "\n255\n";
    const size_t plane = static_cast<size_t>(hw) * hw;
    for (size_t i = 0; i < plane; ++i)
        for (int ch = 0; ch < 3; ++ch) {
            const double v = std::clamp(img[ch * plane + i], 0.0, 1.0);
            os.put(static_cast<char>(static_cast<int>(std::lround(v * 255.0))));
        }
    if (!os) throw std::runtime_error("write failed: " + path);
}

struct StepResult {
    std::vector<double> obs;
    double reward = 0;
    int kappa = 0;
    bool done = false;
};

class HazardWorld {
public:
    explicit HazardWorld(WorldConfig cfg) : cfg_(std::move(cfg)) { validate(cfg_); }

    const WorldConfig& config() const { return cfg_; }
    const EnvState& state() const { return state_; }
    int64_t total_steps() const { return total_steps_; }  // lifetime step count, across resets

    // scenario hook: pin the agent at an exact position
    void place_agent(double x, double y) {
        state_.ax = x;
        state_.ay = y;
    }

    std::vector<double> reset(uint64_t seed) {
        state_ = EnvState{};
        state_.rng = Rng(seed);
        state_.gx = cfg_.goal.x;
        state_.gy = cfg_.goal.y;
        // start clear of every hazard (by the largest hazard's full margin)
        // and of the goal
        const double lo = -cfg_.arena_half_extent + cfg_.agent_radius;
        const double hi = cfg_.arena_half_extent - cfg_.agent_radius;
        double margin = 0;
        for (const Disk& h : cfg_.hazards) margin = std::max(margin, h.r);
        margin += cfg_.agent_radius;
        bool placed = false;
        for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
            const double x = state_.rng.uniform(lo, hi);
            const double y = state_.rng.uniform(lo, hi);
            bool ok = true;
            for (const Disk& h : cfg_.hazards)
                if (std::hypot(x - h.x, y - h.y) < margin) ok = false;
            if (std::hypot(x - state_.gx, y - state_.gy) < cfg_.goal.r + cfg_.agent_radius) ok = false;
            if (ok) {
                state_.ax = x;
                state_.ay = y;
                placed = true;
            }
        }
        if (!placed)
            throw std::runtime_error("env reset: no clear agent placement after 1000 samples");
        return render(cfg_, state_.ax, state_.ay, state_.gx, state_.gy);
    }

    StepResult step(double action_x, double action_y) {
        const double axn = std::clamp(action_x, -1.0, 1.0);
        const double ayn = std::clamp(action_y, -1.0, 1.0);
        const double lo = -cfg_.arena_half_extent + cfg_.agent_radius;
        const double hi = cfg_.arena_half_extent - cfg_.agent_radius;
        const double d_before = std::hypot(state_.ax - state_.gx, state_.ay - state_.gy);
        state_.ax = std::clamp(state_.ax + cfg_.max_speed * axn, lo, hi);
        state_.ay = std::clamp(state_.ay + cfg_.max_speed * ayn, lo, hi);
        const double d_after = std::hypot(state_.ax - state_.gx, state_.ay - state_.gy);

        StepResult r;
        r.reward = d_before - d_after;
        if (d_after < cfg_.goal.r) {
            r.reward += 1.0;
            relocate_goal();
        }
        r.kappa = safety_detector(cfg_, state_);
        state_.step_index += 1;
        total_steps_ += 1;
        r.done = state_.step_index >= cfg_.episode_length;
        r.obs = render(cfg_, state_.ax, state_.ay, state_.gx, state_.gy);
        return r;
    }

private:
    void relocate_goal() {
        const double lo = -cfg_.arena_half_extent + cfg_.goal.r;
        const double hi = cfg_.arena_half_extent - cfg_.goal.r;
        for (int attempt = 0; attempt < 1000; ++attempt) {
            const double x = state_.rng.uniform(lo, hi);
            const double y = state_.rng.uniform(lo, hi);
            bool ok = true;
            for (const Disk& h : cfg_.hazards)
                if (std::hypot(x - h.x, y - h.y) < h.r + cfg_.goal.r) ok = false;
            if (std::hypot(x - state_.ax, y - state_.ay) < cfg_.goal.r + cfg_.agent_radius) ok = false;
            if (ok) {
                state_.gx = x;
                state_.gy = y;
                return;
            }
        }
        throw std::runtime_error("env step: no clear goal placement after 1000 samples");
    }

    WorldConfig cfg_;
    EnvState state_;
    int64_t total_steps_ = 0;
};

}  // namespace latentsafe
