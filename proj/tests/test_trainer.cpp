#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "spcl/data.hpp"
#include "spcl/losses.hpp"
#include "spcl/optimizer.hpp"
#include "spcl/trainer.hpp"

using namespace spcl;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path temp_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    return dir;
}

Dataset tiny_dataset(int64_t n = 60, bool single_positive = true, uint64_t seed = 3) {
    GenConfig cfg;
    cfg.num_images = n;
    cfg.num_classes = 8;
    cfg.image_size = 32;
    cfg.seed = seed;
    cfg.max_objects = 4;
    Dataset data = generate_synthetic(cfg);
    if (single_positive) to_single_positive(data, seed);
    return data;
}

RunConfig tiny_config() {
    RunConfig cfg;
    cfg.set("model.input_size", "32");
    cfg.set("model.channels", "4,8,16");
    cfg.set("train.epochs", "3");
    cfg.set("train.lr", "0.002");
    return cfg;
}

}  // namespace

TEST_CASE("cosine schedule endpoints") {
    CHECK(cosine_lr(0, 100, 0.5) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(cosine_lr(50, 100, 0.5) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(cosine_lr(99, 100, 1.0) == doctest::Approx(2.467e-4).epsilon(1e-3));
    CHECK_THROWS_AS((void)cosine_lr(100, 100, 0.5), std::invalid_argument);
}

TEST_CASE("adam zero gradient at zero moments leaves parameters unchanged") {
    ModelConfig mcfg;
    mcfg.input_size = 8;
    mcfg.stage_channels = {2};
    mcfg.num_classes = 2;
    Rng rng(1);
    auto params = ModelParams<double>::initialized(mcfg, rng, 0.5);
    const auto before = params;
    Adam<double> adam(params, AdamConfig{});
    adam.step(params, ModelParams<double>::zeros_like(params), 0.1);
    params.for_each([&](const std::string& name, const Tensor<double>& t) {
        before.for_each([&](const std::string& n2, const Tensor<double>& t2) {
            if (n2 != name) return;
            for (size_t i = 0; i < t.v.size(); ++i) CHECK(t.v[i] == t2.v[i]);
        });
    });
}

TEST_CASE("adam first step has magnitude close to the learning rate") {
    // one step on f(x) = x^2 from x = 1 with lr = 0.1: bias correction makes
    // the step lr * g/|g| = 0.1
    ModelConfig mcfg;
    mcfg.input_size = 2;
    mcfg.stage_channels = {1};
    mcfg.num_classes = 2;
    Rng rng(2);
    auto params = ModelParams<double>::initialized(mcfg, rng, 0.5);
    params.head_b[0] = 1.0;
    auto grads = ModelParams<double>::zeros_like(params);
    grads.head_b[0] = 2.0;  // d(x^2)/dx at x=1
    Adam<double> adam(params, AdamConfig{});
    adam.step(params, grads, 0.1);
    CHECK(params.head_b[0] == doctest::Approx(0.9).epsilon(1e-6));
}

TEST_CASE("adam converges on a convex quadratic") {
    ModelConfig mcfg;
    mcfg.input_size = 2;
    mcfg.stage_channels = {1};
    mcfg.num_classes = 2;
    Rng rng(3);
    auto params = ModelParams<double>::initialized(mcfg, rng, 0.5);
    params.head_b[0] = 1.0;
    Adam<double> adam(params, AdamConfig{});
    for (int step = 0; step < 500; ++step) {
        auto grads = ModelParams<double>::zeros_like(params);
        grads.head_b[0] = 2.0 * params.head_b[0];
        adam.step(params, grads, 0.01);
    }
    CHECK(std::abs(params.head_b[0]) < 1e-3);
}

TEST_CASE("config validation rejects mined losses without a consistency store") {
    RunConfig cfg;
    cfg.set("loss.primary", "en");
    cfg.set("loss.consistency", "none");
    CHECK_THROWS_AS(validate_run_config(cfg), std::invalid_argument);
    cfg.set("loss.consistency", "cl");
    CHECK_NOTHROW(validate_run_config(cfg));
    cfg.set("loss.primary", "ep");
    cfg.set("loss.consistency", "none");
    CHECK_THROWS_AS(validate_run_config(cfg), std::invalid_argument);
}

TEST_CASE("epochs=0 returns the initialized state without updates") {
    const auto data = tiny_dataset(20);
    auto cfg = tiny_config();
    cfg.set("train.epochs", "0");
    const auto dir = temp_dir("spcl_trainer_zero");
    const auto result = train_run(cfg, data, dir.string());
    CHECK(result.epochs.empty());
    CHECK(result.best_epoch == -1);
    CHECK(fs::exists(dir / "checkpoints" / "last.ckpt"));
    CHECK(fs::exists(dir / "config.echo"));
    fs::remove_all(dir);
}

TEST_CASE("two identical runs are bit-identical") {
    const auto data = tiny_dataset();
    const auto cfg = tiny_config();
    const auto dir1 = temp_dir("spcl_trainer_det1");
    const auto dir2 = temp_dir("spcl_trainer_det2");
    (void)train_run(cfg, data, dir1.string());
    (void)train_run(cfg, data, dir2.string());
    CHECK(slurp(dir1 / "metrics.csv") == slurp(dir2 / "metrics.csv"));
    CHECK(slurp(dir1 / "checkpoints" / "last.ckpt") == slurp(dir2 / "checkpoints" / "last.ckpt"));
    CHECK(slurp(dir1 / "checkpoints" / "best.ckpt") == slurp(dir2 / "checkpoints" / "best.ckpt"));
    fs::remove_all(dir1);
    fs::remove_all(dir2);
}

TEST_CASE("thread count does not change results") {
    const auto data = tiny_dataset();
    auto cfg = tiny_config();
    cfg.set("loss.primary", "en");
    cfg.set("loss.consistency", "scl");
    const auto dir1 = temp_dir("spcl_trainer_t1");
    const auto dir2 = temp_dir("spcl_trainer_t2");
    cfg.set("train.threads", "1");
    (void)train_run(cfg, data, dir1.string());
    cfg.set("train.threads", "3");
    (void)train_run(cfg, data, dir2.string());
    // metrics are identical; checkpoints differ only in the echoed thread count
    CHECK(slurp(dir1 / "metrics.csv") == slurp(dir2 / "metrics.csv"));
    fs::remove_all(dir1);
    fs::remove_all(dir2);
}

TEST_CASE("resume reproduces the uninterrupted trajectory bit for bit") {
    const auto data = tiny_dataset();
    auto cfg = tiny_config();
    cfg.set("train.epochs", "6");
    cfg.set("loss.primary", "en");
    cfg.set("loss.consistency", "scl");

    const auto full_dir = temp_dir("spcl_trainer_full");
    (void)train_run(cfg, data, full_dir.string());

    auto cfg_half = cfg;
    cfg_half.set("train.epochs", "3");
    const auto half_dir = temp_dir("spcl_trainer_half");
    (void)train_run(cfg_half, data, half_dir.string());

    const auto resumed_dir = temp_dir("spcl_trainer_resumed");
    (void)train_run(cfg, data, resumed_dir.string(),
                    (half_dir / "checkpoints" / "last.ckpt").string());

    // the resumed run only logs epochs 3..5; they must equal the tail of the
    // uninterrupted run
    const std::string full_csv = slurp(full_dir / "metrics.csv");
    const std::string resumed_csv = slurp(resumed_dir / "metrics.csv");
    std::stringstream full_ss(full_csv);
    std::string line;
    std::vector<std::string> tail;
    while (std::getline(full_ss, line)) {
        if (line.empty() || line[0] == 'e') continue;  // header
        const int64_t epoch = std::stoll(line.substr(0, line.find(',')));
        if (epoch >= 3) tail.push_back(line);
    }
    std::stringstream resumed_ss(resumed_csv);
    std::vector<std::string> resumed_rows;
    while (std::getline(resumed_ss, line)) {
        if (line.empty() || line[0] == 'e') continue;
        resumed_rows.push_back(line);
    }
    CHECK(tail == resumed_rows);

    // the final state must be identical except for nothing: same bytes
    CHECK(slurp(full_dir / "checkpoints" / "last.ckpt") ==
          slurp(resumed_dir / "checkpoints" / "last.ckpt"));

    fs::remove_all(full_dir);
    fs::remove_all(half_dir);
    fs::remove_all(resumed_dir);
}

TEST_CASE("logged schedules match their closed forms") {
    const auto data = tiny_dataset(30);
    auto cfg = tiny_config();
    cfg.set("train.epochs", "4");
    cfg.set("loss.consistency", "cl");
    cfg.set("loss.gamma_warmup_epochs", "3");
    const auto dir = temp_dir("spcl_trainer_sched");
    const auto result = train_run(cfg, data, dir.string());
    REQUIRE(result.epochs.size() == 4);
    for (const auto& log : result.epochs) {
        CHECK(log.lr == doctest::Approx(cosine_lr(log.epoch, 4, 0.002)).epsilon(1e-12));
        CHECK(log.gamma == doctest::Approx(gamma_schedule(log.epoch, 3)).epsilon(1e-12));
    }
    fs::remove_all(dir);
}

TEST_CASE("eval of the best checkpoint reproduces the logged best val mAP exactly") {
    const auto data = tiny_dataset();
    auto cfg = tiny_config();
    cfg.set("train.epochs", "4");
    const auto dir = temp_dir("spcl_trainer_eval");
    const auto result = train_run(cfg, data, dir.string());
    const auto outcome =
        evaluate_checkpoint((dir / "checkpoints" / "best.ckpt").string(), data, "val");
    CHECK(outcome.report.map == result.best_val_map);
    fs::remove_all(dir);
}

TEST_CASE("training bce on fully annotated separable data reaches high train mAP") {
    const auto data = tiny_dataset(120, /*single_positive=*/false, /*seed=*/5);
    RunConfig cfg;
    cfg.set("model.input_size", "32");
    cfg.set("model.channels", "8,16,32");
    cfg.set("loss.primary", "bce");
    cfg.set("train.epochs", "50");
    cfg.set("train.lr", "0.003");
    cfg.set("train.threads", "2");
    cfg.set("aug.area_min", "0.7");  // mild crops keep the toy task separable
    const auto dir = temp_dir("spcl_trainer_bce");
    (void)train_run(cfg, data, dir.string());
    const auto outcome =
        evaluate_checkpoint((dir / "checkpoints" / "last.ckpt").string(), data, "train");
    CHECK(outcome.report.map >= 0.99);
    fs::remove_all(dir);
}

TEST_CASE("per-sample EMA updates happen exactly once per epoch") {
    // the score store throws on double updates, so a full run passing is the
    // positive half of the contract; the negative half lives in test_stores
    const auto data = tiny_dataset(24);
    auto cfg = tiny_config();
    cfg.set("loss.primary", "en");
    cfg.set("loss.consistency", "scl");
    cfg.set("train.epochs", "2");
    const auto dir = temp_dir("spcl_trainer_once");
    CHECK_NOTHROW((void)train_run(cfg, data, dir.string()));
    fs::remove_all(dir);
}

TEST_CASE("rolling target semantics are exposed behind a flag") {
    const auto data = tiny_dataset(24);
    auto cfg = tiny_config();
    cfg.set("loss.consistency", "cl");
    cfg.set("train.epochs", "2");
    const auto a = temp_dir("spcl_trainer_roll_a");
    const auto b = temp_dir("spcl_trainer_roll_b");
    (void)train_run(cfg, data, a.string());
    cfg.set("consistency.rolling_targets", "true");
    (void)train_run(cfg, data, b.string());
    // the flag must change the trajectory (targets read after the update)
    CHECK(slurp(a / "metrics.csv") != slurp(b / "metrics.csv"));
    fs::remove_all(a);
    fs::remove_all(b);
}
