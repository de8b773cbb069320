#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "rapa/checkpoint.hpp"
#include "rapa/config.hpp"
#include "rapa/model.hpp"
#include "rapa/tensor_io.hpp"

using namespace rapa;
namespace fs = std::filesystem;

namespace {

fs::path scratch() {
    const fs::path p = fs::temp_directory_path() / "rapa_config_io_test";
    fs::create_directories(p);
    return p;
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::trunc);
    REQUIRE(f.good());
    f << text;
}

}  // namespace

TEST_CASE("defaults expose typed accessors") {
    Config cfg = Config::defaults();
    CHECK(cfg.get_int("run.seed") == 42);
    CHECK(cfg.get_double("train.margin") == 0.3);
    CHECK(cfg.get_bool("model.use_parts"));
    CHECK_FALSE(cfg.get_bool("model.softmax_part_scores"));
    CHECK(cfg.get_int_list("model.stage_channels") == std::vector<int64_t>({16, 32, 64}));
    CHECK(cfg.get_string("eval.checkpoint").empty());
    CHECK(cfg.has("train.lr"));
    CHECK_FALSE(cfg.has("train.does_not_exist"));
}

TEST_CASE("ini files overlay the defaults") {
    const fs::path p = scratch() / "good.ini";
    write_file(p,
               "# comment line\n"
               "[run]\n"
               "seed = 7\n"
               "\n"
               "[train]\n"
               "epochs = 3   ; trailing comment\n"
               "lr = 1e-3\n"
               "augment = off\n");
    Config cfg = Config::load(p.string());
    CHECK(cfg.get_int("run.seed") == 7);
    CHECK(cfg.get_int("train.epochs") == 3);
    CHECK(cfg.get_double("train.lr") == 1e-3);
    CHECK_FALSE(cfg.get_bool("train.augment"));
    // untouched keys keep their defaults
    CHECK(cfg.get_double("train.margin") == 0.3);
}

TEST_CASE("unknown keys are rejected with the full key list") {
    const fs::path p = scratch() / "typo.ini";
    write_file(p, "[train]\nlearning_rate = 0.1\n");
    try {
        Config::load(p.string());
        FAIL("expected an unknown-key error");
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        CHECK(msg.find("train.learning_rate") != std::string::npos);
        CHECK(msg.find("known keys") != std::string::npos);
        CHECK(msg.find("train.lr") != std::string::npos);  // the list helps find the fix
    }
    CHECK_THROWS_AS(Config::defaults().set("nope.nope", "1"), std::invalid_argument);
}

TEST_CASE("malformed lines carry file and line number") {
    const fs::path p = scratch() / "bad.ini";
    write_file(p, "[run]\nseed 42\n");
    try {
        Config::load(p.string());
        FAIL("expected a parse error");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find(":2:") != std::string::npos);
    }
    CHECK_THROWS(Config::load((scratch() / "missing.ini").string()));

    write_file(p, "[run\nseed = 1\n");
    CHECK_THROWS(Config::load(p.string()));
}

TEST_CASE("type errors name the key and the offending value") {
    Config cfg = Config::defaults();
    cfg.set("train.epochs", "soon");
    CHECK_THROWS_AS(cfg.get_int("train.epochs"), std::invalid_argument);
    cfg.set("train.lr", "fast");
    CHECK_THROWS_AS(cfg.get_double("train.lr"), std::invalid_argument);
    cfg.set("train.augment", "maybe");
    CHECK_THROWS_AS(cfg.get_bool("train.augment"), std::invalid_argument);
    cfg.set("model.stage_channels", "16,big,64");
    CHECK_THROWS_AS(cfg.get_int_list("model.stage_channels"), std::invalid_argument);
}

TEST_CASE("the effective-config echo reloads to the same state") {
    Config cfg = Config::defaults();
    cfg.set("run.seed", "123");
    cfg.set("model.stage_channels", "8,16");
    const fs::path p = scratch() / "echo.ini";
    cfg.write(p.string());
    Config back = Config::load(p.string());
    CHECK(back.dump() == cfg.dump());
    CHECK(back.get_int("run.seed") == 123);
}

TEST_CASE("tensor files round-trip both precisions") {
    const fs::path p = scratch() / "t.rapt";
    Tensor<float> tf = Tensor<float>::from_vector({2, 3}, {1.5f, -2.f, 0.f, 3.25f, 9.f, -0.125f});
    io::save_tensor(p.string(), tf);
    Tensor<float> back = io::load_tensor<float>(p.string());
    REQUIRE(back.shape() == tf.shape());
    for (int64_t i = 0; i < tf.numel(); ++i)
        CHECK(back.data()[static_cast<size_t>(i)] == tf.data()[static_cast<size_t>(i)]);

    // cross-precision load widens exactly
    Tensor<double> wide = io::load_tensor<double>(p.string());
    CHECK(wide.at({1, 0}) == 3.25);

    Tensor<double> td = Tensor<double>::from_vector({4}, {1e-300, -1.0, 0.5, 2e300});
    io::save_tensor(p.string(), td);
    Tensor<double> dback = io::load_tensor<double>(p.string());
    for (int64_t i = 0; i < td.numel(); ++i)
        CHECK(dback.data()[static_cast<size_t>(i)] == td.data()[static_cast<size_t>(i)]);
}

TEST_CASE("corrupt tensor files are reported by name") {
    const fs::path p = scratch() / "broken.rapt";
    write_file(p, "not a tensor");
    try {
        io::load_tensor<float>(p.string());
        FAIL("expected a format error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("broken.rapt") != std::string::npos);
    }

    // valid header, truncated payload
    Tensor<float> tf = Tensor<float>::filled({8, 8}, 1.f);
    io::save_tensor(p.string(), tf);
    fs::resize_file(p, fs::file_size(p) - 16);
    CHECK_THROWS_AS(io::load_tensor<float>(p.string()), std::runtime_error);

    CHECK_THROWS(io::load_tensor<float>((scratch() / "absent.rapt").string()));
}

TEST_CASE("feature-map sidecars carry scale metadata") {
    const fs::path p = scratch() / "maps.rapt";
    io::save_tensor(p.string(), Tensor<float>::filled({1, 4, 4, 2}, 0.f));
    io::MapMeta meta;
    meta.scale_rows = 8;
    meta.scale_cols = 8;
    meta.channels = 4;
    io::save_map_meta(p.string(), meta);
    io::MapMeta back = io::load_map_meta(p.string());
    CHECK(back.scale_rows == 8);
    CHECK(back.scale_cols == 8);
    CHECK(back.channels == 4);
    CHECK_THROWS(io::load_map_meta((scratch() / "nometa.rapt").string()));
}

TEST_CASE("checkpoints restore parameters and running statistics exactly") {
    ModelConfig mc;
    mc.stage_channels = {4, 8};
    mc.image_rows = 32;
    mc.image_cols = 16;
    mc.reduction = 4;
    mc.num_classes = 3;

    Model<float> a(mc, 111);
    // make the two models genuinely different before restoring
    Model<float> b(mc, 222);

    const fs::path dir = scratch() / "ckpt";
    ckpt::save_checkpoint(dir.string(), a);
    ckpt::load_checkpoint(dir.string(), b);

    REQUIRE(a.params().size() == b.params().size());
    for (size_t i = 0; i < a.params().size(); ++i) {
        const Tensor<float>& ta = a.params().tensor(i);
        const Tensor<float>& tb = b.params().tensor(i);
        for (int64_t j = 0; j < ta.numel(); ++j)
            REQUIRE(ta.data()[static_cast<size_t>(j)] == tb.data()[static_cast<size_t>(j)]);
    }
    for (size_t i = 0; i < a.buffers().size(); ++i) {
        CHECK(a.buffers()[i].second->mean == b.buffers()[i].second->mean);
        CHECK(a.buffers()[i].second->var == b.buffers()[i].second->var);
    }

    // a model built with a different architecture refuses the checkpoint
    ModelConfig other = mc;
    other.reduction = 2;
    Model<float> c(other, 5);
    CHECK_THROWS(ckpt::load_checkpoint(dir.string(), c));
}
