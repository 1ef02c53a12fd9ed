#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spcl/annotation.hpp"
#include "spcl/stores.hpp"

namespace spcl {

/// Per-class selection budgets: round-half-up of k times the annotated count,
/// never below the annotated count itself.
std::vector<int64_t> class_budgets(const std::vector<AnnotationVector>& anns, double k);

/// Fill each class budget with annotated positives first, then the
/// highest-scoring unannotated samples; ties go to the lower sample index.
/// Recomputed from scratch at every epoch boundary.
std::vector<ExpectedPositiveMask> mine(const ScoreEstimateStore& scores,
                                       const std::vector<AnnotationVector>& anns,
                                       const std::vector<int64_t>& budgets);

/// Masks for the first epoch: exactly the annotated positives.
std::vector<ExpectedPositiveMask> initial_masks(const std::vector<AnnotationVector>& anns);

/// CSV rows (epoch, sample, class) listing the non-annotated expected
/// positives of the given masks. Samples are reported as ids[i] when a
/// mapping is supplied, otherwise by mask position.
std::vector<std::string> mask_csv_rows(int64_t epoch,
                                       const std::vector<ExpectedPositiveMask>& masks,
                                       const std::vector<AnnotationVector>& anns,
                                       const std::vector<int64_t>* ids = nullptr);

}  // namespace spcl
