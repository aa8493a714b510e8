#include "prime/retrieval.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <unordered_map>

namespace prime {

namespace {

bool ranks_before(const Hit& a, const Hit& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.label < b.label;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = s.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(s.substr(start));
            return out;
        }
        out.push_back(s.substr(start, pos - start));
        start = pos + 1;
    }
}

template <class F>
void for_each_line(std::string_view text, F&& fn) {
    std::size_t line_no = 0, start = 0;
    while (start < text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(start, end - start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        ++line_no;
        if (!line.empty() && line.front() != '#') fn(line, line_no);
        start = end + 1;
    }
}

}  // namespace

PrototypeIndex PrototypeIndex::build(const Matrix& prototypes, std::vector<std::string> ids) {
    if (prototypes.rows != ids.size())
        fail(ErrorKind::Usage, "index: " + std::to_string(prototypes.rows) + " rows but " +
                                   std::to_string(ids.size()) + " ids");
    if (prototypes.rows == 0 || prototypes.cols == 0) fail(ErrorKind::Usage, "index: empty matrix");
    PrototypeIndex idx;
    idx.dim_ = prototypes.cols;
    idx.ids_ = std::move(ids);
    idx.rows_.resize(prototypes.size());
    for (std::size_t i = 0; i < prototypes.size(); ++i)
        idx.rows_[i] = static_cast<float>(prototypes.data[i]);
    for (std::size_t r = 0; r < prototypes.rows; ++r) {
        double sq = 0.0;
        for (float v : idx.row(r)) sq += static_cast<double>(v) * static_cast<double>(v);
        const double n = std::sqrt(sq);
        if (!(std::abs(n - 1.0) <= 1e-6))
            fail(ErrorKind::Data, "index: row " + std::to_string(r) + " (" + idx.ids_[r] +
                                      ") is not unit-norm (norm " + format_double(n, 9) + ")");
    }
    return idx;
}

Ranking PrototypeIndex::topk(std::span<const double> query, std::size_t k) const {
    if (query.size() != dim_)
        fail(ErrorKind::Usage, "query dimension " + std::to_string(query.size()) +
                                   " does not match index dimension " + std::to_string(dim_));
    if (k == 0 || k > size())
        fail(ErrorKind::Usage, "k = " + std::to_string(k) + " must lie in [1, " +
                                   std::to_string(size()) + "]");
    if (!(std::abs(norm2(query) - 1.0) <= 1e-6))
        fail(ErrorKind::Usage, "query is not unit-norm");
    Ranking all(size());
    for (std::size_t l = 0; l < size(); ++l) {
        const auto r = row(l);
        double s = 0.0;
        for (std::size_t j = 0; j < dim_; ++j) s += static_cast<double>(r[j]) * query[j];
        all[l] = {static_cast<std::uint32_t>(l), s};
    }
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(),
                      ranks_before);
    all.resize(k);
    return all;
}

std::vector<Ranking> PrototypeIndex::topk_batch(const Matrix& queries, std::size_t k,
                                                unsigned threads) const {
    std::vector<Ranking> out(queries.rows);
    parallel_for(queries.rows, threads, [&](std::size_t i) { out[i] = topk(queries.row(i), k); });
    return out;
}

std::string PrototypeIndex::export_text() const {
    std::string out;
    char buf[9];
    for (std::size_t r = 0; r < size(); ++r) {
        out += ids_[r];
        out += '\t';
        for (float v : row(r)) {
            std::snprintf(buf, sizeof buf, "%08x", std::bit_cast<std::uint32_t>(v));
            out += buf;
        }
        out += '\n';
    }
    return out;
}

PrototypeIndex PrototypeIndex::import_text(std::string_view text) {
    std::vector<std::string> ids;
    std::vector<double> values;
    std::size_t dim = 0;
    for_each_line(text, [&](std::string_view line, std::size_t no) {
        const auto tab = line.find('\t');
        if (tab == std::string_view::npos || tab == 0)
            fail(ErrorKind::Data, "malformed prototype record at line " + std::to_string(no));
        const std::string_view hex = line.substr(tab + 1);
        if (hex.empty() || hex.size() % 8 != 0)
            fail(ErrorKind::Data, "malformed prototype row at line " + std::to_string(no));
        const std::size_t d = hex.size() / 8;
        if (dim == 0) dim = d;
        if (d != dim) fail(ErrorKind::Data, "inconsistent prototype dimension at line " + std::to_string(no));
        for (std::size_t j = 0; j < d; ++j) {
            std::uint32_t bits = 0;
            const auto* b = hex.data() + 8 * j;
            auto [p, ec] = std::from_chars(b, b + 8, bits, 16);
            if (ec != std::errc() || p != b + 8)
                fail(ErrorKind::Data, "bad hex value at line " + std::to_string(no));
            values.push_back(static_cast<double>(std::bit_cast<float>(bits)));
        }
        ids.emplace_back(line.substr(0, tab));
    });
    Matrix m(ids.size(), dim);
    m.data = std::move(values);
    return build(m, std::move(ids));
}

std::string format_predictions(const std::vector<TextRecord>& queries,
                               const std::vector<Ranking>& rankings,
                               const std::vector<std::string>& label_ids) {
    if (queries.size() != rankings.size())
        fail(ErrorKind::Usage, "predictions: query and ranking counts differ");
    std::string out;
    for (std::size_t i = 0; i < queries.size(); ++i) {
        out += queries[i].id;
        out += '\t';
        for (std::size_t j = 0; j < rankings[i].size(); ++j) {
            if (j) out += ',';
            out += label_ids.at(rankings[i][j].label);
            out += ':';
            out += format_double(rankings[i][j].score, 6);
        }
        out += '\n';
    }
    return out;
}

std::vector<std::vector<std::uint32_t>> parse_predictions(std::string_view text,
                                                          const Corpus& corpus) {
    std::unordered_map<std::string_view, std::uint32_t> qidx, lidx;
    for (std::size_t i = 0; i < corpus.num_queries(); ++i)
        qidx.emplace(corpus.queries()[i].id, static_cast<std::uint32_t>(i));
    for (std::size_t i = 0; i < corpus.num_labels(); ++i)
        lidx.emplace(corpus.labels()[i].id, static_cast<std::uint32_t>(i));

    std::vector<std::vector<std::uint32_t>> out(corpus.num_queries());
    std::vector<std::uint8_t> seen(corpus.num_queries(), 0);
    for_each_line(text, [&](std::string_view line, std::size_t no) {
        const std::string where = " at line " + std::to_string(no) + " of predictions";
        const auto tab = line.find('\t');
        if (tab == std::string_view::npos) fail(ErrorKind::Data, "malformed prediction" + where);
        const auto q = qidx.find(line.substr(0, tab));
        if (q == qidx.end()) fail(ErrorKind::Data, "unknown query id" + where);
        if (seen[q->second]) fail(ErrorKind::Data, "duplicate query id" + where);
        seen[q->second] = 1;
        const std::string_view rest = line.substr(tab + 1);
        if (rest.empty()) return;
        for (std::string_view item : split(rest, ',')) {
            const auto colon = item.rfind(':');
            if (colon == std::string_view::npos) fail(ErrorKind::Data, "malformed prediction item" + where);
            const auto l = lidx.find(item.substr(0, colon));
            if (l == lidx.end()) fail(ErrorKind::Data, "unknown label id" + where);
            out[q->second].push_back(l->second);
        }
    });
    for (std::size_t i = 0; i < seen.size(); ++i)
        if (!seen[i]) fail(ErrorKind::Data, "predictions missing query '" + corpus.queries()[i].id + "'");
    return out;
}

std::vector<std::vector<std::uint32_t>> ranking_labels(const std::vector<Ranking>& rankings) {
    std::vector<std::vector<std::uint32_t>> out(rankings.size());
    for (std::size_t i = 0; i < rankings.size(); ++i)
        for (const Hit& h : rankings[i]) out[i].push_back(h.label);
    return out;
}

}  // namespace prime
