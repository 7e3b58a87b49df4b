// Command-line front end: train, eval, reconstruct, audit-barrier, export.
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "latentsafe/latentsafe.hpp"

namespace ls = latentsafe;
using nlohmann::json;

void write_pair_ppm(const std::string& path, const std::vector<double>& img, int hw);

namespace {

ls::Config config_for_checkpoint(const std::string& ckpt) {
    const std::string path = ckpt + ".config";
    if (!std::filesystem::exists(path))
        throw std::runtime_error("missing " + path + " (expected next to the checkpoint)");
    return ls::load_config(path);
}

int cmd_train(const std::string& config_path, const std::string& resume) {
    ls::Config cfg = ls::load_config(config_path);
    ls::Trainer trainer(cfg);
    trainer.train(resume);
    std::cout << "run complete: " << cfg.train.run_dir << "/metrics.jsonl, final checkpoint "
              << cfg.train.run_dir << "/ckpt_final" << std::endl;
    return 0;
}

int cmd_eval(const std::string& ckpt, int episodes, const std::string& policy) {
    ls::Config cfg = config_for_checkpoint(ckpt);
    ls::Trainer trainer(cfg);
    trainer.load_checkpoint(ckpt);
    ls::HazardWorld env(cfg.world);
    ls::Rng rng(ls::derive_seed(cfg.train.seed, "eval"));
    std::vector<ls::EpisodeStats> stats;
    for (int i = 0; i < episodes; ++i) {
        const uint64_t es = ls::derive_seed(cfg.train.seed, "eval-episode", static_cast<uint64_t>(i));
        if (policy == "random") {
            stats.push_back(ls::collect_random(env, es, cfg.train.action_repeat, rng).second);
        } else {
            stats.push_back(ls::collect_with_policy(env, trainer.agent().model, trainer.agent().actor,
                                                    es, cfg.train.action_repeat, ls::ActMode::mean,
                                                    0.0, rng)
                                .second);
        }
    }
    json out = {{"episodes", episodes},
                {"reward_return", ls::reward_return(stats)},
                {"cost_return", ls::cost_return(stats)}};
    std::cout << out.dump() << std::endl;
    return 0;
}

int cmd_reconstruct(const std::string& ckpt, int episode, const std::string& out_dir) {
    ls::Config cfg = config_for_checkpoint(ckpt);
    ls::Trainer trainer(cfg);
    trainer.load_checkpoint(ckpt);
    const ls::ReplayBuffer& buf = trainer.buffer();
    if (episode < 0 || static_cast<size_t>(episode) >= buf.size())
        throw std::runtime_error("episode index out of range; buffer holds " +
                                 std::to_string(buf.size()) + " episodes");
    const ls::Episode& ep = buf.episode(static_cast<size_t>(episode));
    std::filesystem::create_directories(out_dir);

    ls::NoGrad ng;
    const ls::WorldModel& m = trainer.agent().model;
    const int hw = m.image_hw();
    const size_t frame = static_cast<size_t>(3) * hw * hw;
    ls::LatentState s = m.initial_state(1);
    ls::Tensor prev_a = ls::Tensor::zeros({1, 2});
    ls::Rng rng(ls::derive_seed(cfg.train.seed, "reconstruct"));
    for (int t = 0; t < ep.length(); ++t) {
        std::vector<double> obs(frame);
        for (size_t i = 0; i < frame; ++i) obs[i] = ep.obs[t * frame + i];
        ls::Tensor o = ls::Tensor::from({1, 3, hw, hw}, obs);
        ls::Tensor noise = ls::WorldModel::normal_tensor({1, cfg.model.stochastic_size}, rng);
        s = m.posterior_step(s, prev_a, m.encode(o), noise).post;
        ls::Tensor rec = m.decode(s);
        // side-by-side pair: original left, reconstruction right
        std::vector<double> pair(static_cast<size_t>(3) * hw * 2 * hw);
        for (int ch = 0; ch < 3; ++ch)
            for (int r = 0; r < hw; ++r)
                for (int c = 0; c < hw; ++c) {
                    pair[(static_cast<size_t>(ch) * hw + r) * 2 * hw + c] =
                        obs[(static_cast<size_t>(ch) * hw + r) * hw + c];
                    pair[(static_cast<size_t>(ch) * hw + r) * 2 * hw + hw + c] =
                        rec[(static_cast<size_t>(ch) * hw + r) * hw + c];
                }
        char name[64];
        std::snprintf(name, sizeof(name), "pair_%03d.ppm", t);
        write_pair_ppm(out_dir + "/" + name, pair, hw);
        prev_a = ls::Tensor::from({1, 2}, {ep.act[2 * t], ep.act[2 * t + 1]});
    }
    std::cout << "wrote " << ep.length() << " image pairs to " << out_dir << std::endl;
    return 0;
}

int cmd_audit(const std::string& ckpt) {
    ls::Config cfg = config_for_checkpoint(ckpt);
    ls::Trainer trainer(cfg);
    trainer.load_checkpoint(ckpt);
    ls::Agent& ag = trainer.agent();
    ls::Rng rng(ls::derive_seed(cfg.train.seed, "audit"));

    ls::NoGrad ng;
    ls::ChunkBatch batch =
        trainer.buffer().sample_chunks(cfg.train.batch_size, cfg.train.chunk_length, rng);
    ls::ModelLossResult ml = ag.model.loss(batch, rng);
    ls::LatentState starts = ls::flatten_posts(ml.posts);
    ls::ImaginedRollout ro = ls::imagine(ag.model, ag.actor, starts, cfg.train.horizon, rng);

    std::vector<std::vector<double>> bvals;
    for (const ls::LatentState& s : ro.states) bvals.push_back(*ag.barrier(s).data);
    ls::AuditReport rep;
    ls::audit_rollout(rep, bvals, ls::unsafe_labels(ro.kappas), cfg.barrier.lambda);

    auto field = [](std::optional<double> v) { return v ? json(*v) : json(nullptr); };
    json out = {{"safe_fraction", field(rep.safe_fraction())},
                {"pair_fraction", field(rep.pair_fraction())},
                {"unsafe_fraction", field(rep.unsafe_fraction())},
                {"n_safe", rep.n_safe},
                {"n_pairs", rep.n_pairs},
                {"n_unsafe", rep.n_unsafe}};
    std::cout << out.dump() << std::endl;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"latent-safe RL: world model, barrier, actor-critic on a 2D hazard world"};
    app.require_subcommand(1);

    std::string config_path, resume, ckpt, out_path, log_path, policy = "mean";
    int episodes = 10, episode = 0;

    CLI::App* train = app.add_subcommand("train", "run training from a config file");
    train->add_option("--config", config_path, "key = value config file")->required();
    train->add_option("--resume", resume, "checkpoint stem to resume from");

    CLI::App* eval = app.add_subcommand("eval", "roll out a checkpoint and report returns");
    eval->add_option("--ckpt", ckpt, "checkpoint stem")->required();
    eval->add_option("--episodes", episodes, "number of evaluation episodes");
    eval->add_option("--policy", policy, "mean | random")->check(CLI::IsMember({"mean", "random"}));

    CLI::App* rec = app.add_subcommand("reconstruct", "write original/decoded image pairs");
    rec->add_option("--ckpt", ckpt, "checkpoint stem")->required();
    rec->add_option("--episode", episode, "replay episode index")->required();
    rec->add_option("--out", out_path, "output directory")->required();

    CLI::App* audit = app.add_subcommand("audit-barrier", "barrier condition check on imagined rollouts");
    audit->add_option("--ckpt", ckpt, "checkpoint stem")->required();

    CLI::App* exp = app.add_subcommand("export", "convert a metrics JSONL log to CSV");
    exp->add_option("--log", log_path, "metrics.jsonl path")->required();
    exp->add_option("--out", out_path, "CSV output path")->required();

    CLI11_PARSE(app, argc, argv);
    try {
        if (train->parsed()) return cmd_train(config_path, resume);
        if (eval->parsed()) return cmd_eval(ckpt, episodes, policy);
        if (rec->parsed()) return cmd_reconstruct(ckpt, episode, out_path);
        if (audit->parsed()) return cmd_audit(ckpt);
        if (exp->parsed()) {
            ls::export_csv(log_path, out_path);
            std::cout << "wrote " << out_path << std::endl;
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 1;
    }
    return 1;
}

// Double-width PPM used for the side-by-side reconstruction pairs.
void write_pair_ppm(const std::string& path, const std::vector<double>& img, int hw) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << "P6\n" << 2 * hw << ' ' << hw << "\n255\n";
    const size_t plane = static_cast<size_t>(hw) * 2 * hw;
    for (size_t i = 0; i < plane; ++i)
        for (int ch = 0; ch < 3; ++ch) {
            const double v = std::clamp(img[ch * plane + i], 0.0, 1.0);
            os.put(static_cast<char>(static_cast<int>(std::lround(v * 255.0))));
        }
    if (!os) throw std::runtime_error("write failed: " + path);
}
