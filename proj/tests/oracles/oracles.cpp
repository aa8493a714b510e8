#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace prime::oracle {

Triplet dynamic_kernel(double s_ap, double s_an, double gamma_min, double gamma_max) {
    const double pn = s_ap - s_an;
    const double np = s_an - s_ap;
    const bool cp = s_ap > s_an;
    if (cp && pn >= gamma_min) return {0.0, 0.0, 0.0, 0};
    if (cp) return {pn + gamma_min, 1.0, -1.0, 1};
    double clip = np;
    if (clip < gamma_min) clip = gamma_min;
    if (clip > gamma_max) clip = gamma_max;
    return {np + clip, -1.0, 1.0, 2};
}

Triplet fixed_kernel(double s_ap, double s_an, double margin) {
    if (s_ap - s_an <= margin) return {s_an - s_ap + margin, -1.0, 1.0, 2};
    return {0.0, 0.0, 0.0, 0};
}

BatchLoss batch_loss(const Mat& sim_pos, const Mat& sim_neg,
                     const std::vector<std::vector<bool>>& pos_mask,
                     const std::vector<std::vector<bool>>& neg_mask, bool dynamic,
                     double gamma_min, double gamma_max, double fixed_margin) {
    BatchLoss out{0.0, sim_pos, sim_neg, 0};
    for (auto& r : out.grad_pos) std::fill(r.begin(), r.end(), 0.0);
    for (auto& r : out.grad_neg) std::fill(r.begin(), r.end(), 0.0);
    for (std::size_t a = 0; a < sim_pos.size(); ++a)
        for (std::size_t j = 0; j < sim_pos[a].size(); ++j)
            for (std::size_t k = 0; k < sim_neg[a].size(); ++k) {
                if (!pos_mask[a][j] || !neg_mask[a][k]) continue;
                const Triplet t = dynamic ? dynamic_kernel(sim_pos[a][j], sim_neg[a][k], gamma_min, gamma_max)
                                          : fixed_kernel(sim_pos[a][j], sim_neg[a][k], fixed_margin);
                out.loss += t.loss;
                out.grad_pos[a][j] += t.d_sap;
                out.grad_neg[a][k] += t.d_san;
                ++out.triplets;
            }
    if (out.triplets) {
        const double n = static_cast<double>(out.triplets);
        out.loss /= n;
        for (auto& r : out.grad_pos)
            for (double& g : r) g /= n;
        for (auto& r : out.grad_neg)
            for (double& g : r) g /= n;
    }
    return out;
}

Regularizer regularizer(const Mat& s, const Mat& b, const std::vector<std::vector<bool>>& pos,
                        const std::vector<std::vector<bool>>& neg, double m) {
    Regularizer out{0.0, s, s};
    for (auto& r : out.grad_s) std::fill(r.begin(), r.end(), 0.0);
    for (auto& r : out.grad_b) std::fill(r.begin(), r.end(), 0.0);
    double rp = 0.0, rn = 0.0;
    std::size_t np = 0, nn = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s[i].size(); ++j) {
            np += pos[i][j];
            nn += neg[i][j];
        }
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s[i].size(); ++j) {
            if (pos[i][j]) {
                const double arg = s[i][j] - b[i][j] + m;
                if (arg > 0) {
                    rp += arg / static_cast<double>(np);
                    out.grad_s[i][j] += 0.5 / static_cast<double>(np);
                    out.grad_b[i][j] -= 0.5 / static_cast<double>(np);
                }
            }
            if (neg[i][j]) {
                const double arg = b[i][j] - s[i][j] + m;
                if (arg > 0) {
                    rn += arg / static_cast<double>(nn);
                    out.grad_b[i][j] += 0.5 / static_cast<double>(nn);
                    out.grad_s[i][j] -= 0.5 / static_cast<double>(nn);
                }
            }
        }
    out.value = 0.5 * (rp + rn);
    return out;
}

namespace {

std::size_t hits(const std::vector<std::uint32_t>& pred, const std::vector<std::uint32_t>& truth,
                 std::size_t k) {
    const std::set<std::uint32_t> t(truth.begin(), truth.end());
    std::size_t h = 0;
    for (std::size_t j = 0; j < k; ++j) h += t.count(pred[j]);
    return h;
}

}  // namespace

double precision(const Lists& pred, const Lists& truth, std::size_t k) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i].empty()) continue;
        sum += static_cast<double>(hits(pred[i], truth[i], k)) / static_cast<double>(k);
        ++n;
    }
    return n ? sum / static_cast<double>(n) : 0.0;
}

double recall(const Lists& pred, const Lists& truth, std::size_t k) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i].empty()) continue;
        sum += static_cast<double>(hits(pred[i], truth[i], k)) / static_cast<double>(truth[i].size());
        ++n;
    }
    return n ? sum / static_cast<double>(n) : 0.0;
}

double psp(const Lists& pred, const Lists& truth, const Vec& propensity, std::size_t k) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i].empty()) continue;
        const std::set<std::uint32_t> t(truth[i].begin(), truth[i].end());
        for (std::size_t j = 0; j < k; ++j)
            if (t.count(pred[i][j])) num += 1.0 / propensity[pred[i][j]] / static_cast<double>(k);
        Vec inv;
        for (std::uint32_t l : truth[i]) inv.push_back(1.0 / propensity[l]);
        std::sort(inv.rbegin(), inv.rend());
        for (std::size_t j = 0; j < std::min(k, inv.size()); ++j) den += inv[j] / static_cast<double>(k);
    }
    return den > 0 ? num / den : 0.0;
}

std::vector<std::uint32_t> topk(const std::vector<float>& rows, std::size_t dim, const Vec& query,
                                std::size_t k) {
    const std::size_t n = rows.size() / dim;
    std::vector<std::pair<double, std::uint32_t>> scored;
    for (std::size_t l = 0; l < n; ++l) {
        double s = 0.0;
        for (std::size_t j = 0; j < dim; ++j) s += static_cast<double>(rows[l * dim + j]) * query[j];
        scored.emplace_back(s, static_cast<std::uint32_t>(l));
    }
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<std::uint32_t> out;
    for (std::size_t i = 0; i < k; ++i) out.push_back(scored[i].second);
    return out;
}

double propensity(double n, double q, double a, double b) {
    const double c = (std::log(q) - 1.0) * std::pow(b + 1.0, a);
    return 1.0 / (1.0 + c * std::pow(n + b, -a));
}

Vec encode(const Mat& table, const Mat& proj, const Vec& bias, const std::vector<std::uint32_t>& ids) {
    const std::size_t d = bias.size();
    Vec pooled(d, 0.0);
    for (std::uint32_t t : ids)
        for (std::size_t j = 0; j < d; ++j) pooled[j] += table[t][j];
    for (double& x : pooled) x /= static_cast<double>(ids.size());
    Vec out(d, 0.0);
    for (std::size_t r = 0; r < d; ++r) {
        out[r] = bias[r];
        for (std::size_t j = 0; j < d; ++j) out[r] += proj[r][j] * pooled[j];
    }
    double n = 0.0;
    for (double x : out) n += x * x;
    n = std::sqrt(n);
    for (double& x : out) x /= n;
    return out;
}

namespace {

Vec times(const Vec& x, const Mat& w) {
    Vec out(w[0].size(), 0.0);
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < out.size(); ++j) out[j] += x[i] * w[i][j];
    return out;
}

Vec layer_norm(const Vec& x, const Vec& g, const Vec& b) {
    const double n = static_cast<double>(x.size());
    const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= n;
    Vec out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean) / std::sqrt(var + 1e-5) * g[i] + b[i];
    return out;
}

}  // namespace

Vec prototype(const BlockParams& p, const Vec& h, const Vec& c, const Vec& v) {
    const std::size_t d = h.size();
    const Mat x{h, c, v};
    Mat a, q, k, val;
    for (const Vec& t : x) {
        a.push_back(layer_norm(t, p.ln1_g, p.ln1_b));
        q.push_back(times(a.back(), p.wq));
        k.push_back(times(a.back(), p.wk));
        val.push_back(times(a.back(), p.wv));
    }
    Mat r1;
    for (std::size_t i = 0; i < 3; ++i) {
        Vec w(3);
        for (std::size_t j = 0; j < 3; ++j) {
            double s = 0.0;
            for (std::size_t t = 0; t < d; ++t) s += q[i][t] * k[j][t];
            w[j] = std::exp(s / std::sqrt(static_cast<double>(d)));
        }
        const double z = w[0] + w[1] + w[2];
        Vec ctx(d, 0.0);
        for (std::size_t j = 0; j < 3; ++j)
            for (std::size_t t = 0; t < d; ++t) ctx[t] += w[j] / z * val[j][t];
        Vec o = times(ctx, p.wo);
        for (std::size_t t = 0; t < d; ++t) o[t] += x[i][t];
        r1.push_back(o);
    }
    Vec pooled(d, 0.0);
    for (const Vec& r : r1) {
        Vec hid = times(layer_norm(r, p.ln2_g, p.ln2_b), p.w_in);
        for (std::size_t t = 0; t < hid.size(); ++t) {
            const double u = hid[t] + p.b_in[t];
            hid[t] = 0.5 * u * (1.0 + std::erf(u / std::sqrt(2.0)));
        }
        Vec o = times(hid, p.w_out);
        for (std::size_t t = 0; t < d; ++t) o[t] += p.b_out[t] + r[t];
        const Vec y = layer_norm(o, p.lnf_g, p.lnf_b);
        for (std::size_t t = 0; t < d; ++t) pooled[t] += y[t] / 3.0;
    }
    double n = 0.0;
    for (double t : pooled) n += t * t;
    n = std::sqrt(n);
    for (double& t : pooled) t /= n;
    return pooled;
}

}  // namespace prime::oracle
