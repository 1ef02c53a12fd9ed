#include "spcl/trainer.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <thread>

#include "spcl/augment.hpp"
#include "spcl/checkpoint.hpp"
#include "spcl/losses.hpp"
#include "spcl/miner.hpp"
#include "spcl/model.hpp"
#include "spcl/optimizer.hpp"
#include "spcl/rng.hpp"
#include "spcl/stores.hpp"

namespace spcl {

namespace fs = std::filesystem;

namespace {

struct TrainOptions {
    ModelConfig model;
    AugmentConfig aug;
    PrimaryLoss primary = PrimaryLoss::An;
    ConsistencyLoss consistency = ConsistencyLoss::None;
    int64_t epochs = 30;
    int64_t batch_size = 8;
    double lr = 1e-3;
    AdamConfig adam;
    uint64_t seed = 1;
    int threads = 1;
    std::string precision = "f32";
    double val_fraction = 0.2;
    uint64_t split_seed = 1;
    int64_t gamma_warmup = 5;
    double k = 2.5;
    bool normalized_l2 = false;
    float score_mu = 0.8f;
    float heatmap_mu = 0.8f;
    StorePrecision store_precision = StorePrecision::F32;
    int64_t topk = 0;
    int64_t topk_epoch = 5;
    double canonical_scale = 1.5;
    int64_t freeze_backbone_epochs = 0;
    bool rolling_targets = false;
    bool dump_masks = false;
    bool eleven_point_ap = false;
};

TrainOptions parse_train_options(const RunConfig& cfg) {
    TrainOptions o;
    o.model.input_size = cfg.get_int("model.input_size");
    o.model.stage_channels = cfg.get_int_list("model.channels");
    o.model.mean_of_sigmoids = cfg.get_bool("model.mean_of_sigmoids");

    o.aug.area_min = cfg.get_float("aug.area_min");
    o.aug.area_max = cfg.get_float("aug.area_max");
    o.aug.square = cfg.get_bool("aug.square");
    o.aug.hflip_prob = cfg.get_float("aug.hflip_prob");
    o.aug.aspect_min = cfg.get_float("aug.aspect_min");
    o.aug.aspect_max = cfg.get_float("aug.aspect_max");

    o.primary = parse_primary_loss(cfg.get_string("loss.primary"));
    o.consistency = parse_consistency_loss(cfg.get_string("loss.consistency"));
    o.gamma_warmup = cfg.get_int("loss.gamma_warmup_epochs");
    o.k = cfg.get_float("loss.k");
    o.normalized_l2 = cfg.get_bool("loss.normalized_l2");

    const double mu = cfg.get_float("ema.mu");
    const double score_mu = cfg.get_float("ema.score_mu");
    const double heat_mu = cfg.get_float("ema.heatmap_mu");
    o.score_mu = static_cast<float>(score_mu >= 0.0 ? score_mu : mu);
    o.heatmap_mu = static_cast<float>(heat_mu >= 0.0 ? heat_mu : mu);

    o.store_precision = parse_store_precision(cfg.get_string("store.precision"));
    o.topk = cfg.get_int("store.topk");
    o.topk_epoch = cfg.get_int("store.topk_epoch");

    o.epochs = cfg.get_int("train.epochs");
    o.batch_size = cfg.get_int("train.batch_size");
    o.lr = cfg.get_float("train.lr");
    o.adam.weight_decay = cfg.get_float("train.weight_decay");
    o.adam.beta1 = cfg.get_float("train.beta1");
    o.adam.beta2 = cfg.get_float("train.beta2");
    o.adam.epsilon = cfg.get_float("train.epsilon");
    o.seed = static_cast<uint64_t>(cfg.get_int("train.seed"));
    o.threads = static_cast<int>(cfg.get_int("train.threads"));
    o.precision = cfg.get_string("train.precision");
    o.val_fraction = cfg.get_float("train.val_fraction");
    o.split_seed = static_cast<uint64_t>(cfg.get_int("train.split_seed"));
    o.freeze_backbone_epochs = cfg.get_int("train.freeze_backbone_epochs");
    o.canonical_scale = cfg.get_float("data.canonical_scale");
    o.rolling_targets = cfg.get_bool("consistency.rolling_targets");
    o.dump_masks = cfg.get_bool("miner.dump_masks");
    o.eleven_point_ap = cfg.get_bool("metrics.eleven_point_ap");
    return o;
}

/// Run fn(0..count-1) on up to `threads` workers. Each index writes only its
/// own output slot, so scheduling cannot change results.
template <typename Fn>
void parallel_for(int64_t count, int threads, Fn&& fn) {
    if (threads <= 1 || count <= 1) {
        for (int64_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<int64_t> next{0};
    auto worker = [&] {
        for (;;) {
            const int64_t i = next.fetch_add(1);
            if (i >= count) return;
            fn(i);
        }
    };
    std::vector<std::thread> pool;
    const int n = static_cast<int>(std::min<int64_t>(threads, count));
    pool.reserve(static_cast<size_t>(n));
    for (int t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
}

template <typename T>
void add_params(ModelParams<T>& into, const ModelParams<T>& from) {
    for (size_t s = 0; s < into.conv_w.size(); ++s) {
        for (size_t i = 0; i < into.conv_w[s].v.size(); ++i) into.conv_w[s].v[i] += from.conv_w[s].v[i];
        for (size_t i = 0; i < into.conv_b[s].v.size(); ++i) into.conv_b[s].v[i] += from.conv_b[s].v[i];
    }
    for (size_t i = 0; i < into.head_w.v.size(); ++i) into.head_w.v[i] += from.head_w.v[i];
    for (size_t i = 0; i < into.head_b.v.size(); ++i) into.head_b.v[i] += from.head_b.v[i];
}

template <typename T>
void zero_params(ModelParams<T>& p) {
    p.for_each([](const std::string&, Tensor<T>& t) { std::fill(t.v.begin(), t.v.end(), T(0)); });
}

template <typename T>
class TrainerImpl {
public:
    TrainerImpl(const RunConfig& cfg, const Dataset& data, std::string run_dir)
        : cfg_(cfg), opt_(parse_train_options(cfg)), data_(data), run_dir_(std::move(run_dir)) {
        opt_.model.in_channels = data.records.empty() ? 1 : data.records[0].image.shape[2];
        opt_.model.num_classes = data.num_classes;
        opt_.model.validate();

        splits_ = split(data, SplitSpec{1.0 - opt_.val_fraction, opt_.val_fraction, opt_.split_seed});

        const int64_t input = opt_.model.input_size;
        const int64_t canonical =
            static_cast<int64_t>(std::llround(static_cast<double>(input) * opt_.canonical_scale));

        // canonical training frames and plain resized validation inputs are
        // both fixed for the whole run; build them once
        canonical_.reserve(splits_.train.size());
        for (int64_t idx : splits_.train) {
            canonical_.push_back(
                bilinear_resize(data.records[static_cast<size_t>(idx)].image.template cast<T>(),
                                canonical, canonical));
            train_anns_.push_back(data.records[static_cast<size_t>(idx)].ann);
        }
        val_inputs_.reserve(splits_.val.size());
        for (int64_t idx : splits_.val)
            val_inputs_.push_back(bilinear_resize(
                data.records[static_cast<size_t>(idx)].image.template cast<T>(), input, input));

        model_.emplace(opt_.model);
        Rng init_rng(seed_hash({opt_.seed, 0x1417u}));
        params_ = ModelParams<T>::initialized(opt_.model, init_rng,
                                              opt_.k / static_cast<double>(opt_.model.num_classes));
        adam_ = Adam<T>(params_, opt_.adam);

        const int64_t n_train = static_cast<int64_t>(splits_.train.size());
        scores_ = ScoreEstimateStore(n_train, opt_.model.num_classes, opt_.score_mu);
        scores_.init_from_annotations(train_anns_);
        heatmaps_enabled_ = opt_.consistency == ConsistencyLoss::Scl;
        if (heatmaps_enabled_) {
            heatmaps_ = HeatmapStore(n_train, 2 * opt_.model.map_size(), opt_.model.num_classes,
                                     opt_.heatmap_mu, opt_.store_precision);
            heatmaps_.init_from_annotations(train_anns_);
        }
        masks_ = initial_masks(train_anns_);
        budgets_ = class_budgets(train_anns_, opt_.k);
    }

    void restore(const ArrayStore& ckpt) {
        params_ = params_from_arrays<T>(ckpt, opt_.model, "model");
        adam_.from_arrays(ckpt, "adam");
        next_epoch_ = ckpt.get_scalar_i64("next_epoch");
        scores_.from_arrays(ckpt, "scores");
        if (heatmaps_enabled_) heatmaps_.from_arrays(ckpt, "heat");
        const auto mask_flat = ckpt.get_u8("miner.masks");
        const int64_t l = opt_.model.num_classes;
        for (size_t n = 0; n < masks_.size(); ++n)
            masks_[n].assign(mask_flat.begin() + static_cast<long>(n * l),
                             mask_flat.begin() + static_cast<long>((n + 1) * l));
        best_map_ = ckpt.get_scalar_f64("best.map");
        best_epoch_ = ckpt.get_scalar_i64("best.epoch");
        if (best_epoch_ >= 0) best_params_ = params_from_arrays<T>(ckpt, opt_.model, "best.model");
    }

    TrainResult run() {
        fs::create_directories(fs::path(run_dir_) / "checkpoints");
        if (opt_.dump_masks) fs::create_directories(fs::path(run_dir_) / "masks");
        {
            std::ofstream echo(fs::path(run_dir_) / "config.echo");
            echo << cfg_.echo();
        }
        const fs::path metrics_path = fs::path(run_dir_) / "metrics.csv";
        const bool append = next_epoch_ > 0 && fs::exists(metrics_path);
        std::ofstream metrics(metrics_path, append ? std::ios::app : std::ios::trunc);
        if (!append) metrics << "epoch,split,metric,value\n";

        TrainResult result;
        result.run_dir = run_dir_;

        for (int64_t epoch = next_epoch_; epoch < opt_.epochs; ++epoch) {
            EpochLog log = run_epoch(epoch);
            result.epochs.push_back(log);

            metrics << epoch << ",train,loss," << format_metric(log.train_loss) << "\n";
            metrics << epoch << ",train,lr," << format_metric(log.lr) << "\n";
            metrics << epoch << ",train,gamma," << format_metric(log.gamma) << "\n";
            metrics << epoch << ",train,ema_annotated_mean," << format_metric(log.ema_annotated_mean)
                    << "\n";
            for (const auto& row : last_report_.csv_rows(epoch, "val", epoch == opt_.epochs - 1))
                metrics << row << "\n";
            metrics.flush();

            if (log.val_map > best_map_) {
                best_map_ = log.val_map;
                best_epoch_ = epoch;
                best_params_ = params_;
                save_best();
            }
            next_epoch_ = epoch + 1;
            save_last();

            std::printf("epoch %3lld/%lld  lr=%.6g gamma=%.3g train_loss=%.6g val_mAP=%.4f best=%.4f@%lld\n",
                        static_cast<long long>(epoch), static_cast<long long>(opt_.epochs), log.lr,
                        log.gamma, log.train_loss, log.val_map, best_map_,
                        static_cast<long long>(best_epoch_));
            std::fflush(stdout);
        }

        if (opt_.epochs == 0) save_last();  // initialized state, no updates
        result.best_val_map = best_map_ < 0.0 ? 0.0 : best_map_;
        result.best_epoch = best_epoch_;
        return result;
    }

private:
    struct SampleOutcome {
        double loss = 0.0;
        bool finite = true;
        std::vector<float> f;
    };

    EpochLog run_epoch(int64_t epoch) {
        const int64_t n_train = static_cast<int64_t>(splits_.train.size());
        const double gamma = gamma_schedule(epoch, opt_.gamma_warmup);
        const double lr = cosine_lr(epoch, opt_.epochs, opt_.lr);

        std::vector<int64_t> order(static_cast<size_t>(n_train));
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(seed_hash({opt_.seed, static_cast<uint64_t>(epoch), 0x5affu}));
        for (int64_t i = n_train - 1; i > 0; --i) {
            const int64_t j = shuffle_rng.uniform_int(0, i);
            std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
        }

        const int64_t b = opt_.batch_size;
        std::vector<ModelWorkspace<T>> ws(static_cast<size_t>(b));
        std::vector<ModelParams<T>> grads(static_cast<size_t>(b), ModelParams<T>::zeros_like(params_));
        std::vector<SampleOutcome> outcomes(static_cast<size_t>(b));
        ModelParams<T> batch_grads = ModelParams<T>::zeros_like(params_);

        double loss_sum = 0.0;
        for (int64_t start = 0; start < n_train; start += b) {
            const int64_t count = std::min(b, n_train - start);
            parallel_for(count, opt_.threads, [&](int64_t slot) {
                const int64_t n = order[static_cast<size_t>(start + slot)];
                zero_params(grads[static_cast<size_t>(slot)]);
                outcomes[static_cast<size_t>(slot)] =
                    process_sample(n, epoch, gamma, static_cast<T>(1) / static_cast<T>(count),
                                   ws[static_cast<size_t>(slot)], grads[static_cast<size_t>(slot)]);
            });

            for (int64_t slot = 0; slot < count; ++slot) {
                const auto& oc = outcomes[static_cast<size_t>(slot)];
                if (!oc.finite) {
                    const int64_t n = order[static_cast<size_t>(start + slot)];
                    throw TrainingAborted(epoch, data_.records[static_cast<size_t>(
                                                     splits_.train[static_cast<size_t>(n)])].id);
                }
                loss_sum += oc.loss;
            }

            zero_params(batch_grads);
            for (int64_t slot = 0; slot < count; ++slot)
                add_params(batch_grads, grads[static_cast<size_t>(slot)]);
            if (epoch < opt_.freeze_backbone_epochs) {
                for (auto& t : batch_grads.conv_w) std::fill(t.v.begin(), t.v.end(), T(0));
                for (auto& t : batch_grads.conv_b) std::fill(t.v.begin(), t.v.end(), T(0));
            }
            adam_.step(params_, batch_grads, lr);
        }

        // epoch boundary: mining on the quiescent score store
        if (opt_.primary == PrimaryLoss::En || opt_.primary == PrimaryLoss::Ep) {
            masks_ = mine(scores_, train_anns_, budgets_);
            if (opt_.dump_masks) {
                std::ofstream dump(fs::path(run_dir_) / "masks" /
                                   ("epoch_" + std::to_string(epoch) + ".csv"));
                dump << "epoch,sample,class\n";
                for (const auto& row : mask_csv_rows(epoch, masks_, train_anns_, &splits_.train))
                    dump << row << "\n";
            }
        }
        if (heatmaps_enabled_ && opt_.topk > 0 && !heatmaps_.topk_active() &&
            epoch + 1 >= opt_.topk_epoch)
            heatmaps_.retain_topk(opt_.topk, scores_, train_anns_);

        EpochLog log;
        log.epoch = epoch;
        log.lr = lr;
        log.gamma = gamma;
        log.train_loss = loss_sum / static_cast<double>(n_train);
        log.ema_annotated_mean = annotated_score_mean();
        last_report_ = evaluate_split();
        log.val_map = last_report_.map;
        return log;
    }

    SampleOutcome process_sample(int64_t n, int64_t epoch, double gamma, T batch_scale,
                                 ModelWorkspace<T>& ws, ModelParams<T>& grad_out) {
        Rng rng(seed_hash({opt_.seed, static_cast<uint64_t>(epoch), static_cast<uint64_t>(n)}));
        const AugmentationTransform t = sample_transform(rng, opt_.aug);
        const Tensor<T> input = apply_to_image(canonical_[static_cast<size_t>(n)], t,
                                               opt_.model.input_size, opt_.model.input_size);

        SpatialScoreMap<T> map;
        Prediction<T> pred;
        model_->forward(input, params_, ws, map, pred);

        std::vector<float> f32(pred.probabilities.size());
        for (size_t i = 0; i < f32.size(); ++i) f32[i] = static_cast<float>(pred.probabilities[i]);

        if (opt_.rolling_targets) update_stores(n, f32, map, t, epoch);

        std::vector<T> s_prev;
        Tensor<T> scl_target;
        CombinedLossInputs<T> in;
        in.f = &pred.probabilities;
        in.ann = &train_anns_[static_cast<size_t>(n)];
        in.expected = &masks_[static_cast<size_t>(n)];
        in.k = static_cast<T>(opt_.k);
        in.normalized_l2 = opt_.normalized_l2;
        if (opt_.consistency == ConsistencyLoss::Cl) {
            s_prev = scores_.read<T>(n);
            in.s_prev = &s_prev;
        } else if (opt_.consistency == ConsistencyLoss::Scl) {
            scl_target = heatmaps_.read_target<T>(n, t, opt_.model.map_size());
            in.score_map = &map.probabilities;
            in.scl_target = &scl_target;
        }

        const auto combined =
            combined_loss(opt_.primary, opt_.consistency, static_cast<T>(gamma), in);

        if (!opt_.rolling_targets) update_stores(n, f32, map, t, epoch);

        Tensor<T> d_logits = compose_logit_gradient(opt_.model, map, pred, combined.grad_f,
                                                    combined.grad_map.numel() > 0 ? &combined.grad_map
                                                                                  : nullptr);
        for (auto& g : d_logits.v) g *= batch_scale;
        model_->backward(params_, ws, d_logits, grad_out);

        SampleOutcome oc;
        oc.loss = static_cast<double>(combined.value);
        oc.finite = std::isfinite(oc.loss);
        oc.f = std::move(f32);
        return oc;
    }

    void update_stores(int64_t n, const std::vector<float>& f, const SpatialScoreMap<T>& map,
                       const AugmentationTransform& t, int64_t epoch) {
        scores_.update(n, f, epoch);
        if (heatmaps_enabled_) {
            TensorF map32 = map.probabilities.template cast<float>();
            heatmaps_.update(n, map32, t);
        }
    }

    double annotated_score_mean() const {
        double sum = 0.0;
        int64_t count = 0;
        for (size_t n = 0; n < train_anns_.size(); ++n) {
            const float* s = scores_.scores(static_cast<int64_t>(n));
            for (size_t i = 0; i < train_anns_[n].z.size(); ++i) {
                if (train_anns_[n].z[i] == Label::Positive) {
                    sum += s[i];
                    ++count;
                }
            }
        }
        return count > 0 ? sum / static_cast<double>(count) : 0.0;
    }

    EvaluationReport evaluate_split() {
        const int64_t n_val = static_cast<int64_t>(splits_.val.size());
        std::vector<std::vector<double>> preds(static_cast<size_t>(n_val));
        std::vector<std::vector<uint8_t>> truth(static_cast<size_t>(n_val));
        std::vector<ModelWorkspace<T>> ws(static_cast<size_t>(std::max(1, opt_.threads)));
        std::atomic<int> next_ws{0};
        parallel_for(n_val, opt_.threads, [&](int64_t i) {
            thread_local int ws_slot = -1;
            if (ws_slot < 0) ws_slot = next_ws.fetch_add(1) % static_cast<int>(ws.size());
            SpatialScoreMap<T> map;
            Prediction<T> pred;
            model_->forward(val_inputs_[static_cast<size_t>(i)], params_,
                            ws[static_cast<size_t>(ws_slot)], map, pred);
            preds[static_cast<size_t>(i)].assign(pred.probabilities.begin(), pred.probabilities.end());
            const auto& y = data_.records[static_cast<size_t>(splits_.val[static_cast<size_t>(i)])].ann.y;
            truth[static_cast<size_t>(i)] = y;
        });
        return evaluate(preds, truth, ApOptions{opt_.eleven_point_ap});
    }

    void save_common(ArrayStore& out) const {
        out.put_string("config", cfg_.echo());
        out.put_scalar_i64("data.num_records", static_cast<int64_t>(data_.records.size()));
        out.put_scalar_i64("data.num_classes", data_.num_classes);
        out.put_scalar_i64("data.image_size", data_.image_size);
    }

    void save_last() const {
        ArrayStore out;
        save_common(out);
        params_to_arrays(opt_.model, params_, out, "model");
        adam_.to_arrays(out, "adam");
        out.put_scalar_i64("next_epoch", next_epoch_);
        scores_.to_arrays(out, "scores");
        if (heatmaps_enabled_) heatmaps_.to_arrays(out, "heat");
        const int64_t l = opt_.model.num_classes;
        std::vector<uint8_t> mask_flat(masks_.size() * static_cast<size_t>(l));
        for (size_t n = 0; n < masks_.size(); ++n)
            std::copy(masks_[n].begin(), masks_[n].end(), mask_flat.begin() + static_cast<long>(n * l));
        out.put_u8("miner.masks", {static_cast<int64_t>(masks_.size()), l}, mask_flat.data());
        out.put_scalar_f64("best.map", best_map_);
        out.put_scalar_i64("best.epoch", best_epoch_);
        if (best_epoch_ >= 0) params_to_arrays(opt_.model, best_params_, out, "best.model");
        out.save((fs::path(run_dir_) / "checkpoints" / "last.ckpt").string());
    }

    void save_best() const {
        ArrayStore out;
        save_common(out);
        params_to_arrays(opt_.model, best_params_, out, "model");
        out.put_scalar_f64("best.map", best_map_);
        out.put_scalar_i64("best.epoch", best_epoch_);
        out.save((fs::path(run_dir_) / "checkpoints" / "best.ckpt").string());
    }

    RunConfig cfg_;
    TrainOptions opt_;
    const Dataset& data_;
    std::string run_dir_;

    SplitIndices splits_;
    std::vector<Tensor<T>> canonical_;
    std::vector<Tensor<T>> val_inputs_;
    std::vector<AnnotationVector> train_anns_;

    std::optional<Model<T>> model_;
    ModelParams<T> params_;
    Adam<T> adam_;
    ScoreEstimateStore scores_;
    HeatmapStore heatmaps_;
    bool heatmaps_enabled_ = false;
    std::vector<ExpectedPositiveMask> masks_;
    std::vector<int64_t> budgets_;

    int64_t next_epoch_ = 0;
    double best_map_ = -1.0;
    int64_t best_epoch_ = -1;
    ModelParams<T> best_params_;
    EvaluationReport last_report_;
};

}  // namespace

void validate_run_config(const RunConfig& cfg) {
    const PrimaryLoss primary = parse_primary_loss(cfg.get_string("loss.primary"));
    const ConsistencyLoss consistency = parse_consistency_loss(cfg.get_string("loss.consistency"));
    if ((primary == PrimaryLoss::En || primary == PrimaryLoss::Ep) &&
        consistency == ConsistencyLoss::None)
        throw std::invalid_argument(
            "loss.primary=" + to_string(primary) +
            " mines expected positives from the EMA score store and needs "
            "loss.consistency=cl or scl");
    if (cfg.get_int("train.epochs") < 0)
        throw std::invalid_argument("train.epochs must be >= 0");
    if (cfg.get_int("train.batch_size") < 1)
        throw std::invalid_argument("train.batch_size must be >= 1");
    if (!(cfg.get_float("train.lr") > 0.0))
        throw std::invalid_argument("train.lr must be > 0");
    const double mu = cfg.get_float("ema.mu");
    if (!(mu >= 0.0 && mu <= 1.0))
        throw std::invalid_argument("ema.mu must be in [0,1]");
    if (!(cfg.get_float("loss.k") > 0.0))
        throw std::invalid_argument("loss.k must be > 0");
    const std::string precision = cfg.get_string("train.precision");
    if (precision != "f32" && precision != "f64")
        throw std::invalid_argument("train.precision must be f32 or f64");
    (void)parse_store_precision(cfg.get_string("store.precision"));
}

TrainResult train_run(const RunConfig& cfg, const Dataset& data, const std::string& run_dir,
                      const std::string& resume_checkpoint) {
    validate_run_config(cfg);
    if (data.records.empty()) throw std::invalid_argument("train_run: empty dataset");

    auto run_with = [&](auto tag) {
        using T = decltype(tag);
        TrainerImpl<T> impl(cfg, data, run_dir);
        if (!resume_checkpoint.empty()) {
            ArrayStore ckpt = ArrayStore::load(resume_checkpoint);
            if (ckpt.get_scalar_i64("data.num_records") != static_cast<int64_t>(data.records.size()) ||
                ckpt.get_scalar_i64("data.num_classes") != data.num_classes)
                throw std::invalid_argument("resume: checkpoint does not match the dataset");
            impl.restore(ckpt);
        }
        return impl.run();
    };
    if (cfg.get_string("train.precision") == "f64") return run_with(double{});
    return run_with(float{});
}

namespace {

template <typename T>
EvalOutcome evaluate_checkpoint_impl(const ArrayStore& ckpt, const RunConfig& cfg,
                                     const Dataset& data, const std::string& split_name) {
    const ModelConfig mcfg = config_from_arrays(ckpt, "model");
    const auto params = params_from_arrays<T>(ckpt, mcfg, "model");
    Model<T> model(mcfg);

    std::vector<int64_t> indices;
    if (split_name == "all") {
        indices.resize(data.records.size());
        std::iota(indices.begin(), indices.end(), 0);
    } else {
        const double val_fraction = cfg.get_float("train.val_fraction");
        const auto splits = split(data, SplitSpec{1.0 - val_fraction, val_fraction,
                                                  static_cast<uint64_t>(cfg.get_int("train.split_seed"))});
        if (split_name == "train")
            indices = splits.train;
        else if (split_name == "val")
            indices = splits.val;
        else
            throw std::invalid_argument("evaluate_checkpoint: split must be train, val or all");
    }

    EvalOutcome out;
    out.record_indices = indices;
    const int64_t n = static_cast<int64_t>(indices.size());
    out.predictions.resize(static_cast<size_t>(n));
    out.truth.resize(static_cast<size_t>(n));
    const int threads = static_cast<int>(cfg.get_int("train.threads"));
    std::vector<ModelWorkspace<T>> ws(static_cast<size_t>(std::max(1, threads)));
    std::atomic<int> next_ws{0};
    parallel_for(n, threads, [&](int64_t i) {
        thread_local int ws_slot = -1;
        if (ws_slot < 0) ws_slot = next_ws.fetch_add(1) % static_cast<int>(ws.size());
        const auto& rec = data.records[static_cast<size_t>(indices[static_cast<size_t>(i)])];
        const Tensor<T> input =
            bilinear_resize(rec.image.template cast<T>(), mcfg.input_size, mcfg.input_size);
        SpatialScoreMap<T> map;
        Prediction<T> pred;
        model.forward(input, params, ws[static_cast<size_t>(ws_slot)], map, pred);
        out.predictions[static_cast<size_t>(i)].assign(pred.probabilities.begin(),
                                                       pred.probabilities.end());
        out.truth[static_cast<size_t>(i)] = rec.ann.y;
    });
    out.report = evaluate(out.predictions, out.truth,
                          ApOptions{cfg.get_bool("metrics.eleven_point_ap")});
    return out;
}

}  // namespace

EvalOutcome evaluate_checkpoint(const std::string& checkpoint_path, const Dataset& data,
                                const std::string& split_name) {
    ArrayStore ckpt = ArrayStore::load(checkpoint_path);
    const RunConfig cfg = RunConfig::from_echo(ckpt.get_string("config"));
    if (ckpt.get_scalar_i64("data.num_classes") != data.num_classes)
        throw std::invalid_argument("evaluate_checkpoint: class count mismatch with dataset");
    if (cfg.get_string("train.precision") == "f64")
        return evaluate_checkpoint_impl<double>(ckpt, cfg, data, split_name);
    return evaluate_checkpoint_impl<float>(ckpt, cfg, data, split_name);
}

}  // namespace spcl
