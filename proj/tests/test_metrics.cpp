#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "latentsafe/metrics.hpp"

using namespace latentsafe;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;

namespace {
EpisodeStats ep(double reward, int64_t cost, int64_t length = 200) {
    return EpisodeStats{reward, cost, length};
}
std::string slurp(const std::string& path) {
    std::ifstream in(path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}
}  // namespace

TEST_CASE("cost return") {
    REQUIRE_THAT(cost_return({ep(0, 3), ep(0, 5)}), WithinAbs(4.0, 1e-9));
    REQUIRE(cost_return({ep(0, 0), ep(0, 0), ep(0, 0)}) == 0.0);
    REQUIRE(cost_return({ep(0, 7)}) == 7.0);
    REQUIRE(cost_return({ep(0, 1), ep(0, 2), ep(0, 4)}) ==
            cost_return({ep(0, 4), ep(0, 1), ep(0, 2)}));
    REQUIRE_THROWS_AS(cost_return({}), std::invalid_argument);
}

TEST_CASE("reward return") {
    REQUIRE_THAT(reward_return({ep(1.0, 0), ep(3.0, 0)}), WithinAbs(2.0, 1e-9));
    REQUIRE(reward_return({ep(0.0, 0), ep(0.0, 0)}) == 0.0);
    REQUIRE(reward_return({ep(0.5, 0), ep(0.25, 0), ep(8.0, 0)}) ==
            reward_return({ep(8.0, 0), ep(0.5, 0), ep(0.25, 0)}));
    REQUIRE_THROWS_AS(reward_return({}), std::invalid_argument);
}

TEST_CASE("cost regret") {
    REQUIRE_THAT(cost_regret(10, 1000), WithinAbs(0.01, 1e-9));
    REQUIRE(cost_regret(0, 12345) == 0.0);
    REQUIRE(cost_regret(5, 100) < cost_regret(7, 100));
    REQUIRE_THROWS_AS(cost_regret(10, 0), std::invalid_argument);
}

TEST_CASE("g17 formatting round-trips every double") {
    for (double v : {0.1, 1.0 / 3.0, 6e-4, -0.0, 1e300, 123456789.123456789, 0.01}) {
        const std::string s = format_g17(v);
        REQUIRE(std::strtod(s.c_str(), nullptr) == v);
    }
    REQUIRE(format_g17(0.5) == "0.5");
    REQUIRE(format_g17(2.0) == "2");
}

TEST_CASE("metrics field order is fixed") {
    const std::vector<std::string> expect = {"epoch",        "env_steps", "reward_return",
                                             "cost_return",  "cost_regret_running",
                                             "L_m",          "L_b1",      "L_b2",
                                             "L_b3",         "L_p",       "critic_loss"};
    REQUIRE(metrics_fields() == expect);
}

TEST_CASE("csv export") {
    namespace fs = std::filesystem;
    const std::string jsonl = "metrics_test.jsonl";
    const std::string csv = "metrics_test.csv";

    SECTION("columns come out in field order with g17 reals and raw integers") {
        nlohmann::json j;
        j["epoch"] = 1;
        j["env_steps"] = 400;
        j["reward_return"] = 2.5;
        j["cost_return"] = 4.0;
        j["cost_regret_running"] = 0.01;
        j["L_m"] = 1.0 / 3.0;
        j["L_b1"] = 0.0;
        j["L_b2"] = 0.06;
        j["L_b3"] = 0.0;
        j["L_p"] = -1.25;
        j["critic_loss"] = 0.5;
        std::ofstream out(jsonl);
        out << j.dump() << "\n\n";  // blank lines are tolerated
        out << j.dump() << "\n";
        out.close();

        export_csv(jsonl, csv);
        std::string text = slurp(csv);
        std::string header =
            "epoch,env_steps,reward_return,cost_return,cost_regret_running,L_m,L_b1,L_b2,L_b3,L_p,critic_loss\n";
        std::string row = "1,400," + format_g17(2.5) + "," + format_g17(4.0) + "," +
                          format_g17(0.01) + "," + format_g17(1.0 / 3.0) + "," + format_g17(0.0) +
                          "," + format_g17(0.06) + "," + format_g17(0.0) + "," + format_g17(-1.25) +
                          "," + format_g17(0.5) + "\n";
        REQUIRE(text == header + row + row);
    }

    SECTION("missing fields and malformed lines are reported with line numbers") {
        nlohmann::json full;
        for (const std::string& f : metrics_fields()) full[f] = 0;
        {
            std::ofstream out(jsonl);
            out << "{\"epoch\": 1}\n";
        }
        REQUIRE_THROWS_WITH(export_csv(jsonl, csv), ContainsSubstring("missing field"));
        {
            std::ofstream out(jsonl);
            out << full.dump() << "\n{oops\n";
        }
        REQUIRE_THROWS_WITH(export_csv(jsonl, csv), ContainsSubstring(":2:"));
    }

    SECTION("unreadable input is an error") {
        REQUIRE_THROWS_WITH(export_csv("no_such_file.jsonl", csv), ContainsSubstring("cannot read"));
    }

    fs::remove(jsonl);
    fs::remove(csv);
}
