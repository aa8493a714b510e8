#include "prime/metrics.hpp"

#include <algorithm>
#include "json.hpp"
#include <sstream>

#include "prime/util.hpp"

namespace prime {

namespace {

void check_inputs(const LabelLists& predictions, const LabelLists& truth, std::size_t k) {
    if (k == 0) fail(ErrorKind::Usage, "k must be >= 1");
    if (predictions.size() != truth.size())
        fail(ErrorKind::Usage, "prediction and truth query counts differ");
    for (std::size_t i = 0; i < truth.size(); ++i)
        if (!truth[i].empty() && predictions[i].size() < k)
            fail(ErrorKind::Usage, "k = " + std::to_string(k) + " exceeds prediction length " +
                                       std::to_string(predictions[i].size()) + " of query " +
                                       std::to_string(i));
}

std::size_t hits_at_k(const std::vector<std::uint32_t>& pred, const std::vector<std::uint32_t>& truth,
                      std::size_t k) {
    std::size_t hits = 0;
    for (std::size_t j = 0; j < k; ++j)
        if (std::find(truth.begin(), truth.end(), pred[j]) != truth.end()) ++hits;
    return hits;
}

double mean_over_scored(const std::vector<double>& per_query) {
    return per_query.empty() ? 0.0
                             : pairwise_sum(per_query) / static_cast<double>(per_query.size());
}

template <class F>
double per_query_mean(const LabelLists& predictions, const LabelLists& truth, std::size_t k,
                      std::size_t* skipped, F&& score) {
    check_inputs(predictions, truth, k);
    std::vector<double> vals;
    std::size_t skip = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i].empty()) {
            ++skip;
            continue;
        }
        vals.push_back(score(predictions[i], truth[i]));
    }
    if (skipped) *skipped = skip;
    return mean_over_scored(vals);
}

}  // namespace

double precision_at_k(const LabelLists& predictions, const LabelLists& truth, std::size_t k,
                      std::size_t* skipped) {
    return per_query_mean(predictions, truth, k, skipped, [k](const auto& p, const auto& t) {
        return static_cast<double>(hits_at_k(p, t, k)) / static_cast<double>(k);
    });
}

double recall_at_k(const LabelLists& predictions, const LabelLists& truth, std::size_t k,
                   std::size_t* skipped) {
    return per_query_mean(predictions, truth, k, skipped, [k](const auto& p, const auto& t) {
        return static_cast<double>(hits_at_k(p, t, k)) / static_cast<double>(t.size());
    });
}

double psp_at_k(const LabelLists& predictions, const LabelLists& truth,
                const std::vector<double>& propensity, std::size_t k, double* unnormalized_mean) {
    check_inputs(predictions, truth, k);
    std::vector<double> pred_sp, ideal_sp;
    const double inv_k = 1.0 / static_cast<double>(k);
    auto gamma = [&](std::uint32_t l) {
        if (l >= propensity.size())
            fail(ErrorKind::Data, "missing propensity entry for label index " + std::to_string(l));
        return 1.0 / propensity[l];
    };
    std::vector<double> terms;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i].empty()) continue;
        terms.clear();
        for (std::size_t j = 0; j < k; ++j) {
            const std::uint32_t l = predictions[i][j];
            if (std::find(truth[i].begin(), truth[i].end(), l) != truth[i].end())
                terms.push_back(gamma(l));
        }
        pred_sp.push_back(pairwise_sum(terms) * inv_k);

        terms.clear();
        for (std::uint32_t l : truth[i]) terms.push_back(gamma(l));
        std::sort(terms.begin(), terms.end(), std::greater<>());
        terms.resize(std::min(k, terms.size()));
        ideal_sp.push_back(pairwise_sum(terms) * inv_k);
    }
    if (unnormalized_mean) *unnormalized_mean = mean_over_scored(pred_sp);
    const double denom = pairwise_sum(ideal_sp);
    return denom > 0.0 ? pairwise_sum(pred_sp) / denom : 0.0;
}

EvalResult evaluate(const LabelLists& predictions, const LabelLists& truth,
                    const std::vector<double>& propensity, const std::vector<std::size_t>& ks) {
    EvalResult r;
    r.queries = truth.size();
    for (std::size_t k : ks) {
        r.p_at[k] = precision_at_k(predictions, truth, k, &r.skipped);
        r.r_at[k] = recall_at_k(predictions, truth, k);
        double sp = 0.0;
        r.psp_at[k] = psp_at_k(predictions, truth, propensity, k, &sp);
        r.sp_at[k] = sp;
    }
    return r;
}

LabelLists truth_lists(const Corpus& corpus) {
    LabelLists out(corpus.num_queries());
    for (std::size_t i = 0; i < corpus.num_queries(); ++i) {
        const auto p = corpus.positives(i);
        out[i].assign(p.begin(), p.end());
    }
    return out;
}

std::string EvalResult::to_json() const {
    nlohmann::ordered_json j;
    j["queries"] = queries;
    j["skipped"] = skipped;
    auto put = [&](const char* key, const std::map<std::size_t, double>& m) {
        nlohmann::ordered_json o = nlohmann::ordered_json::object();
        for (const auto& [k, v] : m) o[std::to_string(k)] = v;
        j[key] = o;
    };
    put("p_at", p_at);
    put("psp_at", psp_at);
    put("sp_at", sp_at);
    put("r_at", r_at);
    return j.dump();
}

std::string EvalResult::to_table() const {
    std::ostringstream os;
    auto cell = [](const std::string& s) {
        return std::string(s.size() < 10 ? 10 - s.size() : 0, ' ') + s;
    };
    os << cell("k") << cell("P@k") << cell("PSP@k") << cell("SP@k") << cell("R@k") << '\n';
    for (const auto& [k, p] : p_at) {
        os << cell(std::to_string(k)) << cell(format_double(p, 4))
           << cell(format_double(psp_at.at(k), 4)) << cell(format_double(sp_at.at(k), 4))
           << cell(format_double(r_at.at(k), 4)) << '\n';
    }
    os << "queries " << queries << ", skipped " << skipped << '\n';
    return os.str();
}

}  // namespace prime
