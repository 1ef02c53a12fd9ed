#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "spcl/checkpoint.hpp"
#include "spcl/config.hpp"
#include "spcl/data.hpp"
#include "spcl/metrics.hpp"
#include "spcl/stores.hpp"
#include "spcl/trainer.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUserError = 1;
constexpr int kExitInternalError = 2;

std::vector<int64_t> parse_id_list(const std::string& text) {
    std::vector<int64_t> out;
    std::string cur;
    for (char c : text + ",") {
        if (c == ',') {
            if (!cur.empty()) out.push_back(std::stoll(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (out.empty()) throw std::invalid_argument("expected a comma-separated id list, got '" + text + "'");
    return out;
}

struct GenArgs {
    int64_t n = 2000;
    int64_t classes = 8;
    int64_t size = 64;
    int64_t seed = 1;
    std::string out;
    double objects_mean = 1.5;
    int64_t max_objects = 5;
    std::string placement = "uniform";
    bool full_labels = false;
};

int run_gen_data(const GenArgs& args) {
    spcl::GenConfig cfg;
    cfg.num_images = args.n;
    cfg.num_classes = args.classes;
    cfg.image_size = args.size;
    cfg.seed = static_cast<uint64_t>(args.seed);
    cfg.objects_extra_mean = args.objects_mean;
    cfg.max_objects = args.max_objects;
    cfg.placement = args.placement;

    spcl::Dataset data = spcl::generate_synthetic(cfg);
    if (!args.full_labels) spcl::to_single_positive(data, cfg.seed);
    spcl::save_dataset(data, args.out, cfg.seed);
    std::printf("wrote %lld images (%lld classes, %lldpx, %s annotations) to %s\n",
                static_cast<long long>(data.records.size()),
                static_cast<long long>(data.num_classes), static_cast<long long>(data.image_size),
                args.full_labels ? "full" : "single-positive", args.out.c_str());
    return kExitOk;
}

struct TrainArgs {
    std::string data_dir;
    std::string out_dir;
    std::string config_path;
    std::string resume;
    std::vector<std::pair<std::string, std::string>> overrides;
};

std::string default_run_dir(const spcl::RunConfig& cfg) {
    const char* root = std::getenv("SPCL_RUN_ROOT");
    if (root == nullptr || *root == '\0')
        throw std::invalid_argument("no --out given and SPCL_RUN_ROOT is not set");
    const std::string name = "run-" + cfg.get_string("loss.primary") + "-" +
                             cfg.get_string("loss.consistency") + "-seed" +
                             std::to_string(cfg.get_int("train.seed"));
    return (fs::path(root) / name).string();
}

int run_train(const TrainArgs& args) {
    spcl::RunConfig cfg;
    if (!args.config_path.empty()) cfg.load_file(args.config_path);
    for (const auto& [key, value] : args.overrides) cfg.set(key, value);
    spcl::validate_run_config(cfg);

    spcl::Dataset data = spcl::load_dataset(args.data_dir);
    const std::string run_dir = args.out_dir.empty() ? default_run_dir(cfg) : args.out_dir;
    if (args.resume.empty() && fs::exists(fs::path(run_dir) / "metrics.csv"))
        throw std::invalid_argument("run directory '" + run_dir +
                                    "' already contains a run; pick a fresh --out or --resume");

    const spcl::TrainResult result = spcl::train_run(cfg, data, run_dir, args.resume);
    std::printf("done: best val mAP %.4f at epoch %lld, run dir %s\n", result.best_val_map,
                static_cast<long long>(result.best_epoch), run_dir.c_str());
    return kExitOk;
}

struct EvalArgs {
    std::string checkpoint;
    std::string data_dir;
    std::string split = "val";
    std::string out_dir;
};

int run_eval(const EvalArgs& args) {
    if (!fs::exists(args.checkpoint))
        throw std::invalid_argument("checkpoint '" + args.checkpoint + "' does not exist");
    spcl::Dataset data = spcl::load_dataset(args.data_dir);
    const spcl::EvalOutcome outcome = spcl::evaluate_checkpoint(args.checkpoint, data, args.split);

    const auto& r = outcome.report;
    std::printf("split=%s images=%zu\n", args.split.c_str(), outcome.predictions.size());
    std::printf("mAP        %.6f\n", r.map);
    std::printf("real_top1  %.6f\n", r.real_top1);
    if (r.top1) std::printf("top1       %.6f\n", *r.top1);
    for (const auto& [k, v] : r.map_by_label_count) std::printf("mAP_k%-3s   %.6f\n", k.c_str(), v);

    if (!args.out_dir.empty()) {
        fs::create_directories(args.out_dir);
        std::ofstream csv(fs::path(args.out_dir) / "eval.csv");
        csv << "epoch,split,metric,value\n";
        for (const auto& row : r.csv_rows(0, args.split, true)) csv << row << "\n";
        std::ofstream preds(fs::path(args.out_dir) / "predictions.csv");
        preds << "record,class,score\n";
        for (size_t i = 0; i < outcome.predictions.size(); ++i)
            for (size_t c = 0; c < outcome.predictions[i].size(); ++c)
                preds << outcome.record_indices[i] << ',' << c << ','
                      << spcl::format_metric(outcome.predictions[i][c]) << "\n";
    }
    return kExitOk;
}

struct InspectArgs {
    std::string run_dir;
    std::string checkpoint;
    std::string samples;
    std::string classes = "all";
    std::string out_dir;
};

int run_inspect(const InspectArgs& args) {
    const std::string ckpt_path = !args.checkpoint.empty()
                                      ? args.checkpoint
                                      : (fs::path(args.run_dir) / "checkpoints" / "last.ckpt").string();
    if (!fs::exists(ckpt_path))
        throw std::invalid_argument("checkpoint '" + ckpt_path + "' does not exist");
    spcl::ArrayStore ckpt = spcl::ArrayStore::load(ckpt_path);
    if (!ckpt.contains("heat.h"))
        throw std::invalid_argument("this run has no heatmap store (loss.consistency was not scl)");

    spcl::HeatmapStore store;
    store.from_arrays(ckpt, "heat");

    // the store is indexed by train-split position; map record ids onto it
    const spcl::RunConfig cfg = spcl::RunConfig::from_echo(ckpt.get_string("config"));
    const double val_fraction = cfg.get_float("train.val_fraction");
    const auto splits = spcl::split_count(
        ckpt.get_scalar_i64("data.num_records"),
        spcl::SplitSpec{1.0 - val_fraction, val_fraction,
                        static_cast<uint64_t>(cfg.get_int("train.split_seed"))});

    const std::vector<int64_t> record_ids = parse_id_list(args.samples);
    std::vector<int64_t> store_indices;
    for (int64_t id : record_ids) {
        auto it = std::find(splits.train.begin(), splits.train.end(), id);
        if (it == splits.train.end())
            throw std::invalid_argument("sample " + std::to_string(id) +
                                        " is not in the training split; heatmaps exist for training "
                                        "samples only");
        store_indices.push_back(it - splits.train.begin());
    }

    std::vector<int64_t> channels;
    if (args.classes == "all") {
        for (int64_t c = 0; c < store.num_classes(); ++c) channels.push_back(c);
    } else {
        channels = parse_id_list(args.classes);
    }

    const std::string out_dir =
        args.out_dir.empty() ? (fs::path(args.run_dir) / "heatmaps").string() : args.out_dir;
    const auto entries = spcl::export_heatmaps(store, store_indices, channels, out_dir, &record_ids);
    int64_t pruned = 0;
    for (const auto& e : entries) pruned += e.pruned;
    if (pruned > 0)
        std::fprintf(stderr, "warning: %lld of %zu channels are pruned under top-k retention; "
                             "their images are all-zero\n",
                     static_cast<long long>(pruned), entries.size());
    std::printf("wrote %zu heatmap images to %s\n", entries.size(), out_dir.c_str());
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"training multi-label image classifiers from single-positive annotations"};
    app.require_subcommand(1);

    GenArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic shape dataset");
    gen_cmd->add_option("--n", gen.n, "number of images");
    gen_cmd->add_option("--classes", gen.classes, "number of classes");
    gen_cmd->add_option("--size", gen.size, "image side in pixels");
    gen_cmd->add_option("--seed", gen.seed, "generator seed");
    gen_cmd->add_option("--out", gen.out, "output directory")->required();
    gen_cmd->add_option("--objects-mean", gen.objects_mean, "mean extra objects per image");
    gen_cmd->add_option("--max-objects", gen.max_objects, "cap on objects per image");
    gen_cmd->add_option("--placement", gen.placement, "object placement: uniform|corner");
    gen_cmd->add_flag("--full-labels", gen.full_labels,
                      "keep fully annotated z instead of the single-positive rewrite");

    TrainArgs train;
    auto* train_cmd = app.add_subcommand("train", "train a classifier on a dataset directory");
    train_cmd->add_option("--data", train.data_dir, "dataset directory")->required();
    train_cmd->add_option("--out", train.out_dir, "run directory (default: under $SPCL_RUN_ROOT)");
    train_cmd->add_option("--config", train.config_path, "key=value config file");
    train_cmd->add_option("--resume", train.resume, "resume from a last.ckpt");
    // every config key doubles as a flag, e.g. --loss.primary en
    for (const auto& [key, info] : spcl::RunConfig::registry()) {
        const std::string k = key;
        train_cmd
            ->add_option_function<std::string>(
                "--" + key,
                [&train, k](const std::string& v) { train.overrides.emplace_back(k, v); },
                info.help)
            ->expected(1);
    }

    EvalArgs eval;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
    eval_cmd->add_option("--checkpoint", eval.checkpoint, "checkpoint file")->required();
    eval_cmd->add_option("--data", eval.data_dir, "dataset directory")->required();
    eval_cmd->add_option("--split", eval.split, "train|val|all");
    eval_cmd->add_option("--out", eval.out_dir, "write eval.csv and predictions.csv here");

    InspectArgs inspect;
    auto* inspect_cmd = app.add_subcommand("inspect-heatmaps", "export stored heatmaps as images");
    inspect_cmd->add_option("--run", inspect.run_dir, "run directory")->required();
    inspect_cmd->add_option("--checkpoint", inspect.checkpoint, "explicit checkpoint path");
    inspect_cmd->add_option("--samples", inspect.samples, "comma-separated record ids")->required();
    inspect_cmd->add_option("--classes", inspect.classes, "comma-separated class ids or 'all'");
    inspect_cmd->add_option("--out", inspect.out_dir, "output directory (default <run>/heatmaps)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUserError;
    }

    try {
        if (gen_cmd->parsed()) return run_gen_data(gen);
        if (train_cmd->parsed()) return run_train(train);
        if (eval_cmd->parsed()) return run_eval(eval);
        if (inspect_cmd->parsed()) return run_inspect(inspect);
        return kExitUserError;
    } catch (const spcl::TrainingAborted& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitInternalError;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUserError;
    } catch (const std::runtime_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUserError;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return kExitInternalError;
    }
}
