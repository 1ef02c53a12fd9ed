#include "spcl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

namespace spcl {

double average_precision(const std::vector<double>& scores, const std::vector<uint8_t>& labels,
                         const ApOptions& opts) {
    if (scores.size() != labels.size())
        throw std::invalid_argument("average_precision: size mismatch");
    const int64_t n = static_cast<int64_t>(scores.size());
    int64_t num_pos = 0;
    for (uint8_t l : labels) num_pos += (l != 0);
    if (num_pos == 0) throw std::invalid_argument("average_precision: no positive labels");

    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
        if (scores[static_cast<size_t>(a)] != scores[static_cast<size_t>(b)])
            return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
        return a < b;
    });

    if (!opts.eleven_point) {
        double sum = 0.0;
        int64_t hits = 0;
        for (int64_t rank = 0; rank < n; ++rank) {
            if (labels[static_cast<size_t>(order[static_cast<size_t>(rank)])]) {
                ++hits;
                sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
            }
        }
        return sum / static_cast<double>(num_pos);
    }

    // 11-point interpolation: mean over recall levels 0, 0.1, ..., 1 of the
    // max precision at recall >= level
    std::vector<double> precision(static_cast<size_t>(n));
    std::vector<double> recall(static_cast<size_t>(n));
    int64_t hits = 0;
    for (int64_t rank = 0; rank < n; ++rank) {
        hits += labels[static_cast<size_t>(order[static_cast<size_t>(rank)])] != 0;
        precision[static_cast<size_t>(rank)] = static_cast<double>(hits) / static_cast<double>(rank + 1);
        recall[static_cast<size_t>(rank)] = static_cast<double>(hits) / static_cast<double>(num_pos);
    }
    double sum = 0.0;
    for (int level = 0; level <= 10; ++level) {
        const double r = level / 10.0;
        double best = 0.0;
        for (int64_t rank = 0; rank < n; ++rank)
            if (recall[static_cast<size_t>(rank)] >= r)
                best = std::max(best, precision[static_cast<size_t>(rank)]);
        sum += best;
    }
    return sum / 11.0;
}

std::vector<double> per_class_average_precision(const std::vector<std::vector<double>>& predictions,
                                                const std::vector<std::vector<uint8_t>>& truth,
                                                const ApOptions& opts) {
    if (predictions.size() != truth.size() || predictions.empty())
        throw std::invalid_argument("per_class_average_precision: bad inputs");
    const size_t l = predictions[0].size();
    std::vector<double> out(l, -1.0);  // -1 marks classes without positives
    std::vector<double> scores(predictions.size());
    std::vector<uint8_t> labels(predictions.size());
    for (size_t i = 0; i < l; ++i) {
        int64_t pos = 0;
        for (size_t n = 0; n < predictions.size(); ++n) {
            scores[n] = predictions[n][i];
            labels[n] = truth[n][i];
            pos += labels[n] != 0;
        }
        if (pos > 0) out[i] = average_precision(scores, labels, opts);
    }
    return out;
}

double mean_average_precision(const std::vector<std::vector<double>>& predictions,
                              const std::vector<std::vector<uint8_t>>& truth,
                              const ApOptions& opts) {
    const auto aps = per_class_average_precision(predictions, truth, opts);
    double sum = 0.0;
    int64_t count = 0;
    for (double ap : aps) {
        if (ap >= 0.0) {
            sum += ap;
            ++count;
        }
    }
    if (count == 0) throw std::invalid_argument("mean_average_precision: no class has positives");
    return sum / static_cast<double>(count);
}

namespace {
int64_t argmax_low_index(const std::vector<double>& v) {
    int64_t best = 0;
    for (int64_t i = 1; i < static_cast<int64_t>(v.size()); ++i)
        if (v[static_cast<size_t>(i)] > v[static_cast<size_t>(best)]) best = i;
    return best;
}
}  // namespace

double real_top1(const std::vector<std::vector<double>>& predictions,
                 const std::vector<std::vector<uint8_t>>& truth) {
    if (predictions.size() != truth.size() || predictions.empty())
        throw std::invalid_argument("real_top1: bad inputs");
    int64_t hits = 0;
    for (size_t n = 0; n < predictions.size(); ++n) {
        const int64_t am = argmax_low_index(predictions[n]);
        hits += truth[n][static_cast<size_t>(am)] != 0;
    }
    return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

std::vector<ScoreHistogram> topk_score_distribution(const std::vector<std::vector<double>>& predictions,
                                                    int64_t k_max) {
    if (predictions.empty()) throw std::invalid_argument("topk_score_distribution: empty input");
    if (static_cast<int64_t>(predictions[0].size()) < k_max)
        throw std::invalid_argument("topk_score_distribution: fewer classes than k_max");

    std::vector<std::vector<double>> rank_values(static_cast<size_t>(k_max));
    std::vector<double> sorted;
    for (const auto& p : predictions) {
        sorted = p;
        std::sort(sorted.begin(), sorted.end(), std::greater<>());
        for (int64_t r = 0; r < k_max; ++r)
            rank_values[static_cast<size_t>(r)].push_back(sorted[static_cast<size_t>(r)]);
    }

    std::vector<ScoreHistogram> out(static_cast<size_t>(k_max));
    for (int64_t r = 0; r < k_max; ++r) {
        auto& vals = rank_values[static_cast<size_t>(r)];
        auto& hist = out[static_cast<size_t>(r)];
        for (double v : vals) {
            int bin = static_cast<int>(v * ScoreHistogram::kBins);
            bin = std::clamp(bin, 0, ScoreHistogram::kBins - 1);
            ++hist.counts[static_cast<size_t>(bin)];
        }
        std::sort(vals.begin(), vals.end());
        const size_t m = vals.size();
        hist.median = m % 2 == 1 ? vals[m / 2] : 0.5 * (vals[m / 2 - 1] + vals[m / 2]);
    }
    return out;
}

std::map<std::string, double> breakdown_by_label_count(
    const std::vector<std::vector<double>>& predictions,
    const std::vector<std::vector<uint8_t>>& truth, const ApOptions& opts) {
    std::map<std::string, std::vector<size_t>> buckets;
    for (size_t n = 0; n < truth.size(); ++n) {
        const int64_t k = std::count_if(truth[n].begin(), truth[n].end(), [](uint8_t v) { return v != 0; });
        const std::string key = k >= 4 ? "4+" : std::to_string(k);
        buckets[key].push_back(n);
    }
    std::map<std::string, double> out;
    for (const auto& [key, idx] : buckets) {
        if (key == "0") continue;
        std::vector<std::vector<double>> p;
        std::vector<std::vector<uint8_t>> t;
        p.reserve(idx.size());
        t.reserve(idx.size());
        for (size_t n : idx) {
            p.push_back(predictions[n]);
            t.push_back(truth[n]);
        }
        out[key] = mean_average_precision(p, t, opts);
    }
    return out;
}

EvaluationReport evaluate(const std::vector<std::vector<double>>& predictions,
                          const std::vector<std::vector<uint8_t>>& truth, const ApOptions& opts) {
    EvaluationReport r;
    r.per_class_ap = per_class_average_precision(predictions, truth, opts);
    double sum = 0.0;
    int64_t count = 0;
    for (double ap : r.per_class_ap)
        if (ap >= 0.0) {
            sum += ap;
            ++count;
        }
    if (count == 0) throw std::invalid_argument("evaluate: no class has positives");
    r.map = sum / static_cast<double>(count);
    r.real_top1 = real_top1(predictions, truth);

    // classic top-1 over the single-label subset
    std::vector<std::vector<double>> p1;
    std::vector<std::vector<uint8_t>> t1;
    for (size_t n = 0; n < truth.size(); ++n) {
        const int64_t k = std::count_if(truth[n].begin(), truth[n].end(), [](uint8_t v) { return v != 0; });
        if (k == 1) {
            p1.push_back(predictions[n]);
            t1.push_back(truth[n]);
        }
    }
    if (!p1.empty()) r.top1 = real_top1(p1, t1);

    r.map_by_label_count = breakdown_by_label_count(predictions, truth, opts);
    const int64_t k_max = std::min<int64_t>(4, static_cast<int64_t>(predictions[0].size()));
    r.score_histograms = topk_score_distribution(predictions, k_max);
    return r;
}

std::string format_metric(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

std::vector<std::string> EvaluationReport::csv_rows(int64_t epoch, const std::string& split,
                                                    bool include_histograms) const {
    std::vector<std::string> rows;
    auto add = [&](const std::string& metric, double value) {
        rows.push_back(std::to_string(epoch) + "," + split + "," + metric + "," + format_metric(value));
    };
    add("mAP", map);
    add("real_top1", real_top1);
    if (top1) add("top1", *top1);
    for (size_t i = 0; i < per_class_ap.size(); ++i)
        if (per_class_ap[i] >= 0.0) add("AP_class" + std::to_string(i), per_class_ap[i]);
    for (const auto& [key, v] : map_by_label_count) add("mAP_k" + key, v);
    if (include_histograms) {
        for (size_t r = 0; r < score_histograms.size(); ++r) {
            add("score_median_rank" + std::to_string(r + 1), score_histograms[r].median);
            for (int b = 0; b < ScoreHistogram::kBins; ++b)
                add("score_hist_rank" + std::to_string(r + 1) + "_bin" + std::to_string(b),
                    static_cast<double>(score_histograms[r].counts[static_cast<size_t>(b)]));
        }
    }
    return rows;
}

}  // namespace spcl
