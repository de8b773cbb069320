#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

// RAPA_CLI_PATH is injected by the build: the full path of the `rapa` binary.

namespace fs = std::filesystem;

namespace {

struct RunResult {
    int exit_code = -1;
    std::string output;
};

RunResult run_cli(const std::string& args) {
    static int counter = 0;
    const fs::path log = fs::temp_directory_path() /
                         ("rapa_cli_out_" + std::to_string(counter++) + ".log");
    const std::string cmd =
        std::string(RAPA_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(log);
    std::stringstream ss;
    ss << in.rdbuf();
    r.output = ss.str();
    fs::remove(log);
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return std::string(std::istreambuf_iterator<char>(in), {});
}

// every CLI test shares one scratch tree, one tiny config, one dataset and
// one 2-epoch training run; later cases reuse the earlier artifacts
const fs::path& base_dir() {
    static const fs::path dir = [] {
        const fs::path d = fs::temp_directory_path() / "rapa_cli_test";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

const std::string& config_path() {
    static const std::string path = [] {
        const fs::path p = base_dir() / "cfg.ini";
        std::ofstream f(p);
        f << "[run]\nseed = 11\n"
          << "[data]\n"
          << "num_identities = 4\ncams = 2\nclips_per_id_per_cam = 2\n"
          << "frames_per_clip = 4\nimage_rows = 64\nimage_cols = 32\n"
          << "[model]\nstage_channels = 8,16\nclip_len = 2\n"
          << "[train]\n"
          << "epochs = 2\np_identities = 2\nk_clips = 2\ncheckpoint_every = 0\n"
          << "[gradcheck]\nmax_checks_per_param = 2\n"
          << "[ablate]\nnum_seeds = 1\nepochs = 1\n";
        return p.string();
    }();
    return path;
}

}  // namespace

TEST_CASE("bad invocations exit non-zero with a message") {
    CHECK(run_cli("").exit_code != 0);
    auto r = run_cli("train --config /nonexistent.ini --data x --out y");
    CHECK(r.exit_code == 1);
    CHECK(r.output.find("error:") != std::string::npos);
    CHECK(run_cli("frobnicate").exit_code != 0);
    auto helpish = run_cli("--help");
    CHECK(helpish.output.find("synth") != std::string::npos);
    CHECK(helpish.output.find("gradcheck") != std::string::npos);
}

TEST_CASE("synth writes a deterministic dataset tree") {
    const fs::path a = base_dir() / "data";
    const fs::path b = base_dir() / "data_rerun";
    auto r1 = run_cli("synth --config " + config_path() + " --out " + a.string());
    REQUIRE(r1.exit_code == 0);
    auto r2 = run_cli("synth --config " + config_path() + " --out " + b.string());
    REQUIRE(r2.exit_code == 0);

    CHECK(fs::exists(a / "manifest.json"));
    CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));
    CHECK(slurp(a / "train/id_0/cam_0/clip_0/frame_0.rapt") ==
          slurp(b / "train/id_0/cam_0/clip_0/frame_0.rapt"));

    // a different seed changes the pixels
    auto r3 = run_cli("synth --config " + config_path() + " --seed 999 --out " +
                      (base_dir() / "data_seed999").string());
    REQUIRE(r3.exit_code == 0);
    CHECK(slurp(a / "train/id_0/cam_0/clip_0/frame_0.rapt") !=
          slurp(base_dir() / "data_seed999/train/id_0/cam_0/clip_0/frame_0.rapt"));
}

TEST_CASE("train writes logs, a config echo, and a final checkpoint") {
    const fs::path data = base_dir() / "data";
    const fs::path out = base_dir() / "run1";
    auto r = run_cli("train --config " + config_path() + " --data " + data.string() +
                     " --out " + out.string());
    REQUIRE(r.exit_code == 0);
    REQUIRE(fs::exists(out / "train_log.csv"));
    REQUIRE(fs::exists(out / "config.ini"));
    REQUIRE(fs::exists(out / "checkpoint_final/manifest.json"));

    std::ifstream log(out / "train_log.csv");
    std::string header;
    std::getline(log, header);
    CHECK(header ==
          "epoch,step,L_tri_g,L_ce_g,L_tri_p1,L_tri_p2,L_tri_p3,L_ce_p1,L_ce_p2,L_ce_p3,"
          "L_reg,L_total");
    int rows = 0;
    std::string line;
    while (std::getline(log, line)) {
        ++rows;
        // every numeric field parses and is finite
        std::stringstream ss(line);
        std::string field;
        int col = 0;
        while (std::getline(ss, field, ',')) {
            const double v = std::stod(field);
            CHECK(std::isfinite(v));
            ++col;
        }
        CHECK(col == 12);
    }
    CHECK(rows == 2 * 2);  // 4 identities / P=2 -> 2 steps per epoch, 2 epochs

    // the echoed config restores the exact run settings
    const std::string echo = slurp(out / "config.ini");
    CHECK(echo.find("seed = 11") != std::string::npos);
    CHECK(echo.find("epochs = 2") != std::string::npos);
}

TEST_CASE("identical seed and config reproduce training bit for bit") {
    const fs::path out2 = base_dir() / "run2";
    auto r = run_cli("train --config " + config_path() + " --data " +
                     (base_dir() / "data").string() + " --out " + out2.string());
    REQUIRE(r.exit_code == 0);
    CHECK(slurp(base_dir() / "run1/train_log.csv") == slurp(out2 / "train_log.csv"));
    CHECK(slurp(base_dir() / "run1/checkpoint_final/params/reduce.global.fc.weight.rapt") ==
          slurp(out2 / "checkpoint_final/params/reduce.global.fc.weight.rapt"));
}

TEST_CASE("eval reads checkpoints and reports identical metrics on reruns") {
    const fs::path data = base_dir() / "data";
    const fs::path ev1 = base_dir() / "eval1";
    const fs::path ev2 = base_dir() / "eval2";
    const std::string ckpt = (base_dir() / "run1/checkpoint_final").string();
    auto r1 = run_cli("eval --config " + config_path() + " --data " + data.string() +
                      " --checkpoint " + ckpt + " --out " + ev1.string());
    REQUIRE(r1.exit_code == 0);
    auto r2 = run_cli("eval --config " + config_path() + " --data " + data.string() +
                      " --checkpoint " + ckpt + " --out " + ev2.string());
    REQUIRE(r2.exit_code == 0);

    REQUIRE(fs::exists(ev1 / "metrics.csv"));
    REQUIRE(fs::exists(ev1 / "metrics.json"));
    CHECK(slurp(ev1 / "metrics.csv") == slurp(ev2 / "metrics.csv"));
    CHECK(slurp(ev1 / "metrics.json") == slurp(ev2 / "metrics.json"));
    CHECK(slurp(ev1 / "query.rapt") == slurp(ev2 / "query.rapt"));

    // rank-1 is reported and lies in [0,1]
    const std::string csv = slurp(ev1 / "metrics.csv");
    CHECK(csv.rfind("rank,value", 0) == 0);
    CHECK(csv.find("mAP,") != std::string::npos);

    // an untrained model evaluates too (random embeddings, no checkpoint)
    auto r3 = run_cli("eval --config " + config_path() + " --data " + data.string() +
                      " --out " + (base_dir() / "eval_untrained").string());
    CHECK(r3.exit_code == 0);
}

TEST_CASE("gradient audit passes clean and fails when a bug is injected") {
    auto clean = run_cli("gradcheck --config " + config_path());
    CHECK(clean.exit_code == 0);
    CHECK(clean.output.find("all blocks pass") != std::string::npos);
    CHECK(clean.output.find("FAIL") == std::string::npos);

    auto bugged = run_cli("gradcheck --config " + config_path() + " --inject-bug");
    CHECK(bugged.exit_code == 1);
    CHECK(bugged.output.find("FAIL") != std::string::npos);
}
