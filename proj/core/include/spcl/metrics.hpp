#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace spcl {

struct ApOptions {
    bool eleven_point = false;  // 11-point interpolated variant, off by default
};

/// Average precision of one class: sort by descending score (ties broken by
/// lower index), then average the precision at each positive hit.
double average_precision(const std::vector<double>& scores, const std::vector<uint8_t>& labels,
                         const ApOptions& opts = {});

/// Mean of per-class APs over classes with at least one positive.
/// predictions[n][i] is the score of class i on image n; truth[n][i] in {0,1}.
double mean_average_precision(const std::vector<std::vector<double>>& predictions,
                              const std::vector<std::vector<uint8_t>>& truth,
                              const ApOptions& opts = {});

std::vector<double> per_class_average_precision(const std::vector<std::vector<double>>& predictions,
                                                const std::vector<std::vector<uint8_t>>& truth,
                                                const ApOptions& opts = {});

/// Fraction of images whose argmax class (ties to the lower index) is among
/// the true positives.
double real_top1(const std::vector<std::vector<double>>& predictions,
                 const std::vector<std::vector<uint8_t>>& truth);

/// Histograms of the r-th highest per-image score, r = 1..k_max, binned into
/// 20 equal-width bins on [0,1].
struct ScoreHistogram {
    static constexpr int kBins = 20;
    std::vector<int64_t> counts = std::vector<int64_t>(kBins, 0);
    double median = 0.0;
};
std::vector<ScoreHistogram> topk_score_distribution(const std::vector<std::vector<double>>& predictions,
                                                    int64_t k_max = 4);

/// mAP over image subsets with 1, 2, 3 and 4+ positives. Empty subsets are
/// absent from the result rather than reported as zero.
std::map<std::string, double> breakdown_by_label_count(
    const std::vector<std::vector<double>>& predictions,
    const std::vector<std::vector<uint8_t>>& truth, const ApOptions& opts = {});

struct EvaluationReport {
    std::vector<double> per_class_ap;
    double map = 0.0;
    std::optional<double> top1;  // single-positive subset; absent if none
    double real_top1 = 0.0;
    std::map<std::string, double> map_by_label_count;
    std::vector<ScoreHistogram> score_histograms;

    /// Rows for metrics.csv: (epoch, split, metric, value).
    std::vector<std::string> csv_rows(int64_t epoch, const std::string& split,
                                      bool include_histograms = false) const;
};

EvaluationReport evaluate(const std::vector<std::vector<double>>& predictions,
                          const std::vector<std::vector<uint8_t>>& truth,
                          const ApOptions& opts = {});

/// Deterministic float formatting shared by every CSV writer.
std::string format_metric(double v);

}  // namespace spcl
