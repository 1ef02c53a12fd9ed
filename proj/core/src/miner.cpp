#include "spcl/miner.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace spcl {

std::vector<int64_t> class_budgets(const std::vector<AnnotationVector>& anns, double k) {
    if (!(k > 0.0)) throw std::invalid_argument("class_budgets: k must be > 0");
    if (anns.empty()) throw std::invalid_argument("class_budgets: empty annotations");
    const int64_t l = anns[0].num_classes();
    std::vector<int64_t> counts(static_cast<size_t>(l), 0);
    for (const auto& ann : anns)
        for (int64_t i = 0; i < l; ++i)
            counts[static_cast<size_t>(i)] += ann.z[static_cast<size_t>(i)] == Label::Positive;

    std::vector<int64_t> budgets(static_cast<size_t>(l));
    for (int64_t i = 0; i < l; ++i) {
        const double expected = k * static_cast<double>(counts[static_cast<size_t>(i)]);
        const int64_t rounded = static_cast<int64_t>(std::floor(expected + 0.5));
        budgets[static_cast<size_t>(i)] = std::max(rounded, counts[static_cast<size_t>(i)]);
    }
    return budgets;
}

std::vector<ExpectedPositiveMask> initial_masks(const std::vector<AnnotationVector>& anns) {
    std::vector<ExpectedPositiveMask> masks(anns.size());
    for (size_t n = 0; n < anns.size(); ++n) {
        masks[n].assign(anns[n].z.size(), 0);
        for (size_t i = 0; i < anns[n].z.size(); ++i)
            masks[n][i] = anns[n].z[i] == Label::Positive ? 1 : 0;
    }
    return masks;
}

std::vector<ExpectedPositiveMask> mine(const ScoreEstimateStore& scores,
                                       const std::vector<AnnotationVector>& anns,
                                       const std::vector<int64_t>& budgets) {
    const int64_t n = scores.num_samples();
    const int64_t l = scores.num_classes();
    if (static_cast<int64_t>(anns.size()) != n)
        throw std::invalid_argument("mine: annotation count mismatch");
    if (static_cast<int64_t>(budgets.size()) != l)
        throw std::invalid_argument("mine: budget count mismatch");

    auto masks = initial_masks(anns);

    std::vector<std::pair<float, int64_t>> candidates;
    for (int64_t i = 0; i < l; ++i) {
        int64_t annotated = 0;
        candidates.clear();
        for (int64_t s = 0; s < n; ++s) {
            const Label z = anns[static_cast<size_t>(s)].z[static_cast<size_t>(i)];
            if (z == Label::Positive)
                ++annotated;
            else if (z == Label::Unknown)
                candidates.emplace_back(scores.scores(s)[i], s);
        }
        const int64_t budget = std::min(budgets[static_cast<size_t>(i)], n);
        int64_t slack = std::min(budget - annotated,
                                 static_cast<int64_t>(candidates.size()));
        if (slack <= 0) continue;
        std::partial_sort(candidates.begin(), candidates.begin() + slack, candidates.end(),
                          [](const auto& a, const auto& b) {
                              if (a.first != b.first) return a.first > b.first;
                              return a.second < b.second;
                          });
        for (int64_t j = 0; j < slack; ++j)
            masks[static_cast<size_t>(candidates[static_cast<size_t>(j)].second)]
                 [static_cast<size_t>(i)] = 1;
    }
    return masks;
}

std::vector<std::string> mask_csv_rows(int64_t epoch,
                                       const std::vector<ExpectedPositiveMask>& masks,
                                       const std::vector<AnnotationVector>& anns,
                                       const std::vector<int64_t>* ids) {
    std::vector<std::string> rows;
    for (size_t s = 0; s < masks.size(); ++s) {
        const int64_t sample = ids ? (*ids)[s] : static_cast<int64_t>(s);
        for (size_t i = 0; i < masks[s].size(); ++i) {
            if (masks[s][i] != 0 && anns[s].z[i] != Label::Positive)
                rows.push_back(std::to_string(epoch) + "," + std::to_string(sample) + "," +
                               std::to_string(i));
        }
    }
    return rows;
}

}  // namespace spcl
