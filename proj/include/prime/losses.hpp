#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "prime/util.hpp"

namespace prime {

struct MarginConfig {
    double gamma_min = 0.1;
    double gamma_max = 0.3;
    double fixed_margin = 0.3;  // plain triplet baseline only
    double reg_margin = 0.1;    // m' of the prototype regularizer
    double lambda = 0.1;

    void validate() const;
};

enum class Region : std::uint8_t { Easy = 0, Uncertain = 1, Hard = 2 };
const char* to_string(Region r) noexcept;

/// Loss value and the partial derivatives w.r.t. (s_ap, s_an).
struct TripletGrad {
    double d_sap = 0.0;
    double d_san = 0.0;
    Region region = Region::Easy;
    double loss_value = 0.0;
};

/// max(s_an - s_ap + m, 0); active (gradient (-1, 1)) when s_ap - s_an <= m.
TripletGrad triplet_fixed(double s_ap, double s_an, double margin);

/// Clipped dynamic-margin triplet kernel.
///   Easy       s_ap > s_an, s_ap - s_an >= gamma_min : 0,                     ( 0,  0)
///   Uncertain  s_ap > s_an, s_ap - s_an <  gamma_min : (s_ap - s_an) + gmin,  (+1, -1)
///   Hard       s_ap <= s_an                          : d + clip(d) with d = s_an - s_ap,
///                                                      clip detached,         (-1, +1)
TripletGrad triplet_clipped_dynamic(double s_ap, double s_an, const MarginConfig& cfg);

/// Opt-in variant whose Uncertain row follows max(s_an - s_ap + clip, 0)
/// literally: loss gamma_min - (s_ap - s_an), gradient (-1, +1). Easy and Hard
/// rows are unchanged.
TripletGrad triplet_clipped_dynamic_derived(double s_ap, double s_an, const MarginConfig& cfg);

enum class LossMode { Dynamic, Fixed, DynamicDerived };

TripletGrad triplet_kernel(LossMode mode, double s_ap, double s_an, const MarginConfig& cfg);

using RegionHistogram = std::array<std::uint64_t, 3>;

/// Anchor-vs-candidate triplet inputs. Positive entries (a, j) and negative
/// entries (a, k) are only used where the corresponding mask is set. Optional
/// id matrices enable the label-leakage check (a valid negative whose id is
/// also a valid positive id of the same anchor).
struct TripletInputs {
    Matrix sim_pos;                         // A x P
    Matrix sim_neg;                         // A x N
    std::vector<std::uint8_t> pos_mask;     // A x P
    std::vector<std::uint8_t> neg_mask;     // A x N
    std::vector<std::int64_t> pos_ids;      // optional, A x P
    std::vector<std::int64_t> neg_ids;      // optional, A x N
};

struct TripletResult {
    double loss = 0.0;             // mean over valid triplets (0 when none)
    std::uint64_t num_triplets = 0;
    Matrix grad_pos;               // d loss / d sim_pos
    Matrix grad_neg;               // d loss / d sim_neg
    RegionHistogram regions{};
};

TripletResult batch_triplet_loss(const TripletInputs& in, const MarginConfig& cfg, LossMode mode);

/// Triplet term over a dense anchor x candidate similarity matrix: for anchor
/// a, positives are the candidate columns listed in `positives[a]`, negatives
/// the columns with neg_mask set. Gradients come back as a dense matrix.
struct DenseTripletResult {
    double loss = 0.0;
    std::uint64_t num_triplets = 0;
    Matrix grad;  // same shape as sims
    RegionHistogram regions{};
};

DenseTripletResult dense_triplet_loss(const Matrix& sims,
                                      const std::vector<std::vector<std::uint32_t>>& positives,
                                      const std::vector<std::uint8_t>& neg_mask,
                                      const MarginConfig& cfg, LossMode mode);

struct RegularizerResult {
    double value = 0.0;       // (R_p + R_n) / 2
    double r_pos = 0.0;
    double r_neg = 0.0;
    Matrix grad_s;            // w.r.t. query-label text similarities
    Matrix grad_b;            // w.r.t. query-prototype similarities
};

/// Hinged prototype regularizer over aligned (query, label) grids:
///   R_p = (1/P) sum_pos max(s - b + m', 0),  R_n = (1/N) sum_neg max(b - s + m', 0).
/// A hinge is active only when its argument is strictly positive.
RegularizerResult prototype_regularizer(const Matrix& s, const Matrix& b,
                                        const std::vector<std::uint8_t>& pos_mask,
                                        const std::vector<std::uint8_t>& neg_mask,
                                        double reg_margin);

enum class LossTerms { Full, PrototypeOnly };

struct LossReport {
    std::uint64_t step = 0;
    std::uint64_t epoch = 0;
    double query_prototype = 0.0;  // L(h_q, z_l)
    double query_label = 0.0;      // L(h_q, h_l)
    double label_query = 0.0;      // L(h_l, h_q)
    double regularizer = 0.0;      // R (unweighted)
    double total = 0.0;
    RegionHistogram regions{};
    std::uint64_t triplets = 0;
    double lambda = 0.0;
    double gamma_min = 0.0;
    double gamma_max = 0.0;

    std::string to_json() const;
};

/// Batch view for the combined objective. Candidates are the batch label pool.
struct CombinedInputs {
    Matrix query_proto;   // B x K, h_q . z_l
    Matrix query_label;   // B x K, h_q . h_l
    std::vector<std::vector<std::uint32_t>> positives;  // per query: sampled pool columns
    std::vector<std::uint8_t> neg_mask;                 // B x K
    /// K x B relevance of the label-anchored view: pool label k is positive for
    /// batch query i. Negatives of the label view are the complement.
    std::vector<std::uint8_t> label_query_relevance;
};

struct CombinedResult {
    LossReport report;
    Matrix grad_query_proto;  // B x K
    Matrix grad_query_label;  // B x K (includes the transposed label-anchored term)
};

CombinedResult combined_loss(const CombinedInputs& in, const MarginConfig& cfg, LossMode mode,
                             LossTerms terms = LossTerms::Full);

}  // namespace prime
