#include "prime/losses.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

namespace prime {

void MarginConfig::validate() const {
    if (!(gamma_min >= 0.0 && gamma_min <= gamma_max && gamma_max < 2.0))
        fail(ErrorKind::Usage, "margin bounds require 0 <= gamma_min <= gamma_max < 2");
    if (!(fixed_margin >= 0.0 && fixed_margin < 2.0))
        fail(ErrorKind::Usage, "fixed margin must lie in [0, 2)");
    if (!(reg_margin >= 0.0 && reg_margin < 2.0))
        fail(ErrorKind::Usage, "regularizer margin must lie in [0, 2)");
    if (!(lambda >= 0.0)) fail(ErrorKind::Usage, "lambda must be non-negative");
}

const char* to_string(Region r) noexcept {
    switch (r) {
        case Region::Easy: return "easy";
        case Region::Uncertain: return "uncertain";
        case Region::Hard: return "hard";
    }
    return "?";
}

TripletGrad triplet_fixed(double s_ap, double s_an, double margin) {
    if (s_ap - s_an <= margin) return {-1.0, 1.0, Region::Hard, s_an - s_ap + margin};
    return {0.0, 0.0, Region::Easy, 0.0};
}

TripletGrad triplet_clipped_dynamic(double s_ap, double s_an, const MarginConfig& cfg) {
    if (s_ap > s_an) {
        const double gap = s_ap - s_an;
        if (gap >= cfg.gamma_min) return {0.0, 0.0, Region::Easy, 0.0};
        return {1.0, -1.0, Region::Uncertain, gap + cfg.gamma_min};
    }
    const double gap = s_an - s_ap;
    const double margin = std::clamp(gap, cfg.gamma_min, cfg.gamma_max);
    return {-1.0, 1.0, Region::Hard, gap + margin};
}

TripletGrad triplet_clipped_dynamic_derived(double s_ap, double s_an, const MarginConfig& cfg) {
    if (s_ap > s_an && s_ap - s_an < cfg.gamma_min)
        return {-1.0, 1.0, Region::Uncertain, cfg.gamma_min - (s_ap - s_an)};
    return triplet_clipped_dynamic(s_ap, s_an, cfg);
}

TripletGrad triplet_kernel(LossMode mode, double s_ap, double s_an, const MarginConfig& cfg) {
    switch (mode) {
        case LossMode::Fixed: return triplet_fixed(s_ap, s_an, cfg.fixed_margin);
        case LossMode::DynamicDerived: return triplet_clipped_dynamic_derived(s_ap, s_an, cfg);
        case LossMode::Dynamic: break;
    }
    return triplet_clipped_dynamic(s_ap, s_an, cfg);
}

TripletResult batch_triplet_loss(const TripletInputs& in, const MarginConfig& cfg, LossMode mode) {
    const std::size_t anchors = in.sim_pos.rows;
    const std::size_t np = in.sim_pos.cols;
    const std::size_t nn = in.sim_neg.cols;
    if (in.sim_neg.rows != anchors || in.pos_mask.size() != anchors * np ||
        in.neg_mask.size() != anchors * nn)
        fail(ErrorKind::Usage, "batch_triplet_loss: shape mismatch");
    const bool check_ids = !in.pos_ids.empty() || !in.neg_ids.empty();
    if (check_ids && (in.pos_ids.size() != anchors * np || in.neg_ids.size() != anchors * nn))
        fail(ErrorKind::Usage, "batch_triplet_loss: id matrix shape mismatch");

    TripletResult out;
    out.grad_pos = Matrix(anchors, np);
    out.grad_neg = Matrix(anchors, nn);
    double sum = 0.0;
    for (std::size_t a = 0; a < anchors; ++a) {
        if (check_ids) {
            for (std::size_t k = 0; k < nn; ++k) {
                if (!in.neg_mask[a * nn + k]) continue;
                for (std::size_t j = 0; j < np; ++j) {
                    if (in.pos_mask[a * np + j] && in.pos_ids[a * np + j] == in.neg_ids[a * nn + k])
                        fail(ErrorKind::Data, "label leakage: negative " +
                                                  std::to_string(in.neg_ids[a * nn + k]) +
                                                  " is a positive of anchor " + std::to_string(a));
                }
            }
        }
        for (std::size_t j = 0; j < np; ++j) {
            if (!in.pos_mask[a * np + j]) continue;
            for (std::size_t k = 0; k < nn; ++k) {
                if (!in.neg_mask[a * nn + k]) continue;
                const TripletGrad t = triplet_kernel(mode, in.sim_pos(a, j), in.sim_neg(a, k), cfg);
                sum += t.loss_value;
                out.grad_pos(a, j) += t.d_sap;
                out.grad_neg(a, k) += t.d_san;
                ++out.regions[static_cast<std::size_t>(t.region)];
                ++out.num_triplets;
            }
        }
    }
    if (out.num_triplets > 0) {
        const double inv = 1.0 / static_cast<double>(out.num_triplets);
        out.loss = sum * inv;
        for (double& g : out.grad_pos.data) g *= inv;
        for (double& g : out.grad_neg.data) g *= inv;
    }
    return out;
}

DenseTripletResult dense_triplet_loss(const Matrix& sims,
                                      const std::vector<std::vector<std::uint32_t>>& positives,
                                      const std::vector<std::uint8_t>& neg_mask,
                                      const MarginConfig& cfg, LossMode mode) {
    const std::size_t anchors = sims.rows;
    const std::size_t cands = sims.cols;
    if (positives.size() != anchors || neg_mask.size() != anchors * cands)
        fail(ErrorKind::Usage, "dense_triplet_loss: shape mismatch");
    std::size_t max_pos = 0;
    for (const auto& p : positives) max_pos = std::max(max_pos, p.size());

    TripletInputs in;
    in.sim_pos = Matrix(anchors, max_pos);
    in.sim_neg = sims;
    in.pos_mask.assign(anchors * max_pos, 0);
    in.neg_mask = neg_mask;
    in.pos_ids.assign(anchors * max_pos, -1);
    in.neg_ids.resize(anchors * cands);
    for (std::size_t a = 0; a < anchors; ++a) {
        for (std::size_t j = 0; j < positives[a].size(); ++j) {
            const std::uint32_t col = positives[a][j];
            if (col >= cands) fail(ErrorKind::Usage, "dense_triplet_loss: positive column out of range");
            in.sim_pos(a, j) = sims(a, col);
            in.pos_mask[a * max_pos + j] = 1;
            in.pos_ids[a * max_pos + j] = col;
        }
        for (std::size_t k = 0; k < cands; ++k) in.neg_ids[a * cands + k] = static_cast<std::int64_t>(k);
    }
    TripletResult r = batch_triplet_loss(in, cfg, mode);

    DenseTripletResult out;
    out.loss = r.loss;
    out.num_triplets = r.num_triplets;
    out.regions = r.regions;
    out.grad = std::move(r.grad_neg);
    for (std::size_t a = 0; a < anchors; ++a)
        for (std::size_t j = 0; j < positives[a].size(); ++j)
            out.grad(a, positives[a][j]) += r.grad_pos(a, j);
    return out;
}

RegularizerResult prototype_regularizer(const Matrix& s, const Matrix& b,
                                        const std::vector<std::uint8_t>& pos_mask,
                                        const std::vector<std::uint8_t>& neg_mask,
                                        double reg_margin) {
    if (!s.same_shape(b) || pos_mask.size() != s.size() || neg_mask.size() != s.size())
        fail(ErrorKind::Usage, "prototype_regularizer: shape mismatch");
    RegularizerResult out;
    out.grad_s = Matrix(s.rows, s.cols);
    out.grad_b = Matrix(s.rows, s.cols);
    std::size_t num_pos = 0, num_neg = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (pos_mask[i] && neg_mask[i])
            fail(ErrorKind::Data, "prototype_regularizer: positive and negative masks overlap");
        num_pos += pos_mask[i] ? 1 : 0;
        num_neg += neg_mask[i] ? 1 : 0;
    }
    double sum_pos = 0.0, sum_neg = 0.0;
    const double wp = num_pos ? 0.5 / static_cast<double>(num_pos) : 0.0;
    const double wn = num_neg ? 0.5 / static_cast<double>(num_neg) : 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (pos_mask[i]) {
            const double arg = s.data[i] - b.data[i] + reg_margin;
            if (arg > 0.0) {
                sum_pos += arg;
                out.grad_s.data[i] += wp;
                out.grad_b.data[i] -= wp;
            }
        } else if (neg_mask[i]) {
            const double arg = b.data[i] - s.data[i] + reg_margin;
            if (arg > 0.0) {
                sum_neg += arg;
                out.grad_b.data[i] += wn;
                out.grad_s.data[i] -= wn;
            }
        }
    }
    out.r_pos = num_pos ? sum_pos / static_cast<double>(num_pos) : 0.0;
    out.r_neg = num_neg ? sum_neg / static_cast<double>(num_neg) : 0.0;
    out.value = 0.5 * (out.r_pos + out.r_neg);
    return out;
}

std::string LossReport::to_json() const {
    nlohmann::ordered_json j;
    j["step"] = step;
    j["epoch"] = epoch;
    j["loss"] = {{"query_prototype", query_prototype},
                 {"query_label", query_label},
                 {"label_query", label_query},
                 {"regularizer", regularizer},
                 {"total", total}};
    j["regions"] = {{"easy", regions[0]}, {"uncertain", regions[1]}, {"hard", regions[2]}};
    j["triplets"] = triplets;
    j["lambda"] = lambda;
    j["gamma_min"] = gamma_min;
    j["gamma_max"] = gamma_max;
    return j.dump();
}

CombinedResult combined_loss(const CombinedInputs& in, const MarginConfig& cfg, LossMode mode,
                             LossTerms terms) {
    const std::size_t nq = in.query_proto.rows;
    const std::size_t nk = in.query_proto.cols;
    if (!in.query_label.same_shape(in.query_proto) || in.neg_mask.size() != nq * nk ||
        in.positives.size() != nq)
        fail(ErrorKind::Usage, "combined_loss: shape mismatch");

    CombinedResult out;
    LossReport& rep = out.report;
    rep.lambda = cfg.lambda;
    rep.gamma_min = cfg.gamma_min;
    rep.gamma_max = cfg.gamma_max;
    auto add_regions = [&](const RegionHistogram& h, std::uint64_t n) {
        for (std::size_t r = 0; r < 3; ++r) rep.regions[r] += h[r];
        rep.triplets += n;
    };

    DenseTripletResult qz = dense_triplet_loss(in.query_proto, in.positives, in.neg_mask, cfg, mode);
    rep.query_prototype = qz.loss;
    add_regions(qz.regions, qz.num_triplets);
    out.grad_query_proto = std::move(qz.grad);
    out.grad_query_label = Matrix(nq, nk);

    if (terms == LossTerms::Full) {
        DenseTripletResult ql = dense_triplet_loss(in.query_label, in.positives, in.neg_mask, cfg, mode);
        rep.query_label = ql.loss;
        add_regions(ql.regions, ql.num_triplets);
        out.grad_query_label = std::move(ql.grad);

        if (in.label_query_relevance.size() != nq * nk)
            fail(ErrorKind::Usage, "combined_loss: label-query relevance shape mismatch");
        Matrix lq_sims(nk, nq);
        std::vector<std::vector<std::uint32_t>> lq_pos(nk);
        std::vector<std::uint8_t> lq_neg(nk * nq, 0);
        for (std::size_t k = 0; k < nk; ++k) {
            for (std::size_t i = 0; i < nq; ++i) {
                lq_sims(k, i) = in.query_label(i, k);
                if (in.label_query_relevance[k * nq + i])
                    lq_pos[k].push_back(static_cast<std::uint32_t>(i));
                else
                    lq_neg[k * nq + i] = 1;
            }
        }
        DenseTripletResult lq = dense_triplet_loss(lq_sims, lq_pos, lq_neg, cfg, mode);
        rep.label_query = lq.loss;
        add_regions(lq.regions, lq.num_triplets);
        for (std::size_t k = 0; k < nk; ++k)
            for (std::size_t i = 0; i < nq; ++i) out.grad_query_label(i, k) += lq.grad(k, i);

        std::vector<std::uint8_t> pos_mask(nq * nk, 0);
        for (std::size_t i = 0; i < nq; ++i)
            for (std::uint32_t col : in.positives[i]) pos_mask[i * nk + col] = 1;
        RegularizerResult reg =
            prototype_regularizer(in.query_label, in.query_proto, pos_mask, in.neg_mask, cfg.reg_margin);
        rep.regularizer = reg.value;
        for (std::size_t t = 0; t < reg.grad_s.size(); ++t) {
            out.grad_query_label.data[t] += cfg.lambda * reg.grad_s.data[t];
            out.grad_query_proto.data[t] += cfg.lambda * reg.grad_b.data[t];
        }
        rep.total = rep.query_prototype + rep.query_label + rep.label_query + cfg.lambda * reg.value;
    } else {
        rep.total = rep.query_prototype;
    }
    return out;
}

}  // namespace prime
