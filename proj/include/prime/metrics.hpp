#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "prime/corpus.hpp"

namespace prime {

using LabelLists = std::vector<std::vector<std::uint32_t>>;

/// Per-query ranked predictions versus ground truth. Queries with an empty
/// truth set are skipped and tallied in `skipped`.
struct EvalResult {
    std::size_t queries = 0;
    std::size_t skipped = 0;
    std::map<std::size_t, double> p_at;
    std::map<std::size_t, double> psp_at;
    std::map<std::size_t, double> sp_at;  // unnormalized mean SP@k
    std::map<std::size_t, double> r_at;

    std::string to_json() const;
    std::string to_table() const;
};

double precision_at_k(const LabelLists& predictions, const LabelLists& truth, std::size_t k,
                      std::size_t* skipped = nullptr);
double recall_at_k(const LabelLists& predictions, const LabelLists& truth, std::size_t k,
                   std::size_t* skipped = nullptr);

/// Ratio of sums: sum_q SP@k(pred_q) / sum_q SP@k(ideal_q), with
/// SP@k = (1/k) sum over top-k hits of 1/p_l and the ideal ranking ordering a
/// query's true labels by descending 1/p_l.
double psp_at_k(const LabelLists& predictions, const LabelLists& truth,
                const std::vector<double>& propensity, std::size_t k,
                double* unnormalized_mean = nullptr);

EvalResult evaluate(const LabelLists& predictions, const LabelLists& truth,
                    const std::vector<double>& propensity, const std::vector<std::size_t>& ks);

/// Ground-truth lists of every corpus query.
LabelLists truth_lists(const Corpus& corpus);

}  // namespace prime
