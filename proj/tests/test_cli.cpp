#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <array>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <csignal>
#include <fstream>
#include <iterator>
#include <thread>

#include <gtest/gtest.h>
#include <httplib.h>

#include "plumeshine/plumeshine.hpp"

using namespace plumeshine;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    int status;
    std::string output;  ///< stdout and stderr interleaved
};

Outcome run(const std::string& args) {
    const std::string cmd = std::string(PLUMESHINE_CLI_PATH) + " " + args + " 2>&1";
    FILE* p = popen(cmd.c_str(), "r");
    if (!p) return {-1, ""};
    std::string out;
    std::array<char, 4096> buf;
    while (const auto n = fread(buf.data(), 1, buf.size(), p)) out.append(buf.data(), n);
    const int rc = pclose(p);
    return {WIFEXITED(rc) ? WEXITSTATUS(rc) : -1, out};
}

std::string slurp(const fs::path& p) { return read_text_file(p); }

const char* kTinyConfig = R"(# small grid for command-line tests
nuclides: Cs-137, Co-60
stabilities: A, D
heights: 10, 100
distance_count: 8
points_per_group: 200
lowres_test_fraction: 0.1
highres_test_fraction: 0.05
forest.n_estimators: 5
boosted.rounds: 20
importance_repeats: 5
seed: 41
)";

class Cli : public ::testing::Test {
  protected:
    void SetUp() override {
        dir = fs::temp_directory_path() /
              ("plumeshine_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()) + "_" +
               std::to_string(::getpid()));
        fs::remove_all(dir);
        fs::create_directories(dir);
        config = dir / "tiny.conf";
        write_text_file(config, kTinyConfig);
    }
    void TearDown() override { fs::remove_all(dir); }

    std::string global(const fs::path& out) const {
        return "--config " + config.string() + " --out " + out.string();
    }

    fs::path dir, config;
};

}  // namespace

TEST_F(Cli, UsageErrors) {
    EXPECT_EQ(run("--help").status, 0);
    EXPECT_NE(run("").status, 0);
    EXPECT_NE(run("frobnicate").status, 0);
    EXPECT_NE(run("train --train /no/such/file").status, 0);
    const auto bad = run("--config " + config.string() + " profile --nuclide Xx-999");
    EXPECT_EQ(bad.status, 2);
    EXPECT_NE(bad.output.find("error: DomainError"), std::string::npos) << bad.output;
    write_text_file(dir / "broken.conf", "heights: 10, tall\n");
    const auto broken = run("--config " + (dir / "broken.conf").string() + " generate --help >/dev/null; " +
                            PLUMESHINE_CLI_PATH + " --config " + (dir / "broken.conf").string() + " --out " +
                            dir.string() + " generate");
    EXPECT_EQ(broken.status, 2);
    EXPECT_NE(broken.output.find("ValidationError"), std::string::npos) << broken.output;
}

TEST_F(Cli, ProfileMatchesKernel) {
    const auto r = run("profile --nuclide cs137 --stability F --height 30 --distances 100,400,1500");
    ASSERT_EQ(r.status, 0) << r.output;
    std::istringstream in(r.output);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "radionuclide,stability,release_height_m,distance_m,dose_uSv_per_hr");
    const auto db = load_default_db();
    for (double x : {100.0, 400.0, 1500.0}) {
        ASSERT_TRUE(std::getline(in, line));
        const double d = dose_rate(db, db.at("Cs-137"), ReleaseSpec{1.0, 1.0, 30.0, StabilityClass::F},
                                   Receptor{x, 0.0, 1.0});
        EXPECT_EQ(line, "Cs-137,F,30," + text::format_double(x) + "," + text::format_sci(d, 9));
    }
}

TEST_F(Cli, StagesReproducePipeline) {
    const auto stages = dir / "stages", whole = dir / "whole";
    auto ok = [](const Outcome& r) {
        EXPECT_EQ(r.status, 0) << r.output;
        return r.status == 0;
    };
    const auto g = global(stages);
    ASSERT_TRUE(ok(run(g + " generate")));
    ASSERT_TRUE(ok(run(g + " split --in " + (stages / "lowres.csv").string())));
    ASSERT_TRUE(ok(run(g + " densify --in " + (stages / "lowres_train.csv").string())));
    ASSERT_TRUE(ok(run(g + " split --in " + (stages / "highres.csv").string())));
    for (const char* family : {"forest", "boosted"}) {
        ASSERT_TRUE(ok(run(g + " train --family " + family + " --train " + (stages / "highres_train.csv").string())));
    }
    const auto lt = (stages / "lowres_test.csv").string(), ht = (stages / "highres_test.csv").string();
    const auto ev = run(g + " evaluate --model " + (stages / "forest_highres.model").string() + " " +
                        (stages / "boosted_highres.model").string() + " --test " + lt + " " + ht);
    ASSERT_TRUE(ok(ev));
    EXPECT_EQ(ev.output.rfind("model,train_set,test_set,", 0), 0u) << ev.output;
    ASSERT_TRUE(ok(run(g + " importance --model " + (stages / "boosted_highres.model").string() + " --test " + lt +
                       " " + ht)));
    ASSERT_TRUE(ok(run(g + " ablate --family forest --train " + (stages / "highres_train.csv").string() + " --test " +
                       lt + " " + ht)));

    ASSERT_TRUE(ok(run(global(whole) + " --jobs 3 pipeline")));
    for (const char* t : {"lowres", "lowres_train", "lowres_test", "highres", "highres_train", "highres_test"}) {
        EXPECT_EQ(slurp(stages / (std::string(t) + ".csv")), slurp(whole / "data" / (std::string(t) + ".csv"))) << t;
    }
    for (const char* m : {"forest_highres", "boosted_highres"}) {
        EXPECT_EQ(slurp(stages / (std::string(m) + ".model")), slurp(whole / "models" / (std::string(m) + ".model")))
            << m;
    }
    for (const char* rpt : {"importance_boosted", "ablation_forest"}) {
        EXPECT_EQ(slurp(stages / (std::string(rpt) + ".csv")), slurp(whole / "reports" / (std::string(rpt) + ".csv")))
            << rpt;
    }
    EXPECT_TRUE(fs::exists(whole / "reports" / "summary.meta"));
    EXPECT_TRUE(fs::exists(stages / "regimes.csv"));

    // A different seed changes the split, so the stored tables differ.
    ASSERT_TRUE(ok(run(global(dir / "other") + " --seed 42 generate")));
    ASSERT_TRUE(ok(run(global(dir / "other") + " --seed 42 split --in " + (dir / "other" / "lowres.csv").string())));
    EXPECT_EQ(slurp(dir / "other" / "lowres.csv"), slurp(stages / "lowres.csv"));
    EXPECT_NE(slurp(dir / "other" / "lowres_test.csv"), slurp(stages / "lowres_test.csv"));
}

// A plain socket: an httplib probe keeps its SO_REUSEPORT listener open after
// destruction, and the kernel would then hand it some of the connections.
int free_port() {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    socklen_t len = sizeof addr;
    const bool ok = ::bind(fd, reinterpret_cast<sockaddr*>(&addr), len) == 0 &&
                    ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len) == 0;
    ::close(fd);
    return ok ? ntohs(addr.sin_port) : 0;
}

// The server is reparented once the launching shell exits, so an exited
// process may linger as a zombie until its new parent reaps it.
bool exited(long pid) {
    if (::kill(static_cast<pid_t>(pid), 0) != 0) return true;
    std::ifstream in(fs::path("/proc") / std::to_string(pid) / "stat");
    const std::string stat((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto close = stat.rfind(')');
    return close != std::string::npos && close + 2 < stat.size() && stat[close + 2] == 'Z';
}

TEST_F(Cli, ServeAnswersAndStopsOnSignal) {
    const auto models = dir / "m";
    ASSERT_EQ(run(global(models) + " generate").status, 0);
    ASSERT_EQ(run(global(models) + " train --family forest --train " + (models / "lowres.csv").string()).status, 0);
    const int port = free_port();
    write_text_file(dir / "serve.conf", "port: " + std::to_string(port) + "\nthreads: 2\nmodel.forest: " +
                                            (models / "forest_lowres.model").string() + "\n");
    const auto pidfile = dir / "pid";
    const std::string launch = std::string(PLUMESHINE_CLI_PATH) + " --config " + (dir / "serve.conf").string() +
                               " serve > " + (dir / "serve.log").string() + " 2>&1 & echo $! > " + pidfile.string();
    ASSERT_EQ(std::system(launch.c_str()), 0);
    const auto pid = std::stol(slurp(pidfile));

    httplib::Client c("127.0.0.1", port);
    httplib::Result health;
    for (int i = 0; i < 100 && !health; ++i) {
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
        health = c.Get("/health");
    }
    ASSERT_TRUE(health) << slurp(dir / "serve.log");
    EXPECT_NE(health->body.find("\"forest\":true"), std::string::npos);
    const auto p = c.Post("/predict", R"({"radionuclide":"Co-60","stability":"A","release_height_m":10,"distance_m":300})",
                          "application/json");
    ASSERT_TRUE(p) << httplib::to_string(p.error()) << "\n" << slurp(dir / "serve.log");
    EXPECT_EQ(p->status, 200) << p->body;

    ::kill(static_cast<pid_t>(pid), SIGTERM);
    bool gone = false;
    for (int i = 0; i < 100 && !gone; ++i) {
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
        gone = exited(pid);
    }
    EXPECT_TRUE(gone);
}
