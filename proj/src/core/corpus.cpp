#include "prime/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <charconv>
#include <unordered_map>
#include <unordered_set>

#include "prime/util.hpp"

namespace prime {
namespace {

struct Line {
    std::size_t number;
    std::string_view text;
};

// Splits into physical lines, dropping `#` comments and blank lines while
// keeping 1-based line numbers for diagnostics.
std::vector<Line> content_lines(std::string_view text) {
    std::vector<Line> out;
    std::size_t number = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        ++number;
        pos = end + 1;
        if (line.empty() || line.front() == '#') continue;
        out.push_back({number, line});
    }
    return out;
}

[[noreturn]] void data_error(const std::string& file, std::size_t line, const std::string& what) {
    fail(ErrorKind::Data, what + " at line " + std::to_string(line) + " of " + file);
}

}  // namespace

Corpus::Corpus(std::vector<TextRecord> queries, std::vector<TextRecord> labels,
               std::vector<std::size_t> row_offsets, std::vector<std::uint32_t> label_indices)
    : queries_(std::move(queries)),
      labels_(std::move(labels)),
      row_offsets_(std::move(row_offsets)),
      label_indices_(std::move(label_indices)) {
    if (row_offsets_.size() != queries_.size() + 1 || row_offsets_.front() != 0 ||
        row_offsets_.back() != label_indices_.size())
        fail(ErrorKind::Data, "inconsistent relevance offsets");
    for (std::size_t i = 0; i + 1 < row_offsets_.size(); ++i) {
        if (row_offsets_[i] > row_offsets_[i + 1])
            fail(ErrorKind::Data, "relevance offsets must be non-decreasing");
    }
    for (std::uint32_t l : label_indices_) {
        if (l >= labels_.size()) fail(ErrorKind::Data, "relevance references unknown label");
    }
}

bool Corpus::is_positive(std::size_t query, std::uint32_t label) const {
    const auto pos = positives(query);
    return std::find(pos.begin(), pos.end(), label) != pos.end();
}

std::vector<std::size_t> Corpus::label_frequencies() const {
    std::vector<std::size_t> freq(labels_.size(), 0);
    for (std::uint32_t l : label_indices_) ++freq[l];
    return freq;
}

std::string Corpus::serialize_queries() const {
    std::string out;
    for (std::size_t i = 0; i < queries_.size(); ++i) {
        out += queries_[i].id;
        out += '\t';
        bool first = true;
        for (std::uint32_t l : positives(i)) {
            if (!first) out += ',';
            out += labels_[l].id;
            first = false;
        }
        out += '\t';
        out += queries_[i].text;
        out += '\n';
    }
    return out;
}

std::string Corpus::serialize_labels() const {
    std::string out;
    for (const auto& l : labels_) {
        out += l.id;
        out += '\t';
        out += l.text;
        out += '\n';
    }
    return out;
}

Corpus parse_corpus(std::string_view query_text, std::string_view label_text,
                    const IngestOptions& options, const std::string& query_source,
                    const std::string& label_source) {
    std::vector<TextRecord> labels;
    std::unordered_map<std::string, std::uint32_t> label_index;
    for (const Line& line : content_lines(label_text)) {
        const std::size_t tab = line.text.find('\t');
        std::string id(line.text.substr(0, tab));
        std::string text(tab == std::string_view::npos ? std::string_view{}
                                                       : line.text.substr(tab + 1));
        if (id.empty()) data_error(label_source, line.number, "empty label id");
        if (label_index.contains(id))
            data_error(label_source, line.number, "duplicate label id '" + id + "'");
        label_index.emplace(id, static_cast<std::uint32_t>(labels.size()));
        labels.push_back({std::move(id), std::move(text)});
    }

    std::vector<TextRecord> queries;
    std::vector<std::size_t> offsets{0};
    std::vector<std::uint32_t> indices;
    std::unordered_set<std::string> query_ids;
    for (const Line& line : content_lines(query_text)) {
        const std::size_t tab1 = line.text.find('\t');
        if (tab1 == std::string_view::npos)
            data_error(query_source, line.number, "malformed record (expected id<TAB>labels<TAB>text)");
        std::string id(line.text.substr(0, tab1));
        if (id.empty()) data_error(query_source, line.number, "empty query id");
        if (!query_ids.insert(id).second)
            data_error(query_source, line.number, "duplicate query id '" + id + "'");
        const std::size_t tab2 = line.text.find('\t', tab1 + 1);
        const std::string_view label_field = line.text.substr(
            tab1 + 1, tab2 == std::string_view::npos ? std::string_view::npos : tab2 - tab1 - 1);
        std::string text(tab2 == std::string_view::npos ? std::string_view{}
                                                        : line.text.substr(tab2 + 1));

        const std::size_t row_start = indices.size();
        std::size_t pos = 0;
        while (pos <= label_field.size()) {
            std::size_t comma = label_field.find(',', pos);
            if (comma == std::string_view::npos) comma = label_field.size();
            const std::string_view token = label_field.substr(pos, comma - pos);
            pos = comma + 1;
            if (token.empty()) continue;
            const auto it = label_index.find(std::string(token));
            if (it == label_index.end())
                data_error(query_source, line.number,
                           "unknown label id '" + std::string(token) + "'");
            if (std::find(indices.begin() + static_cast<std::ptrdiff_t>(row_start), indices.end(),
                          it->second) == indices.end())
                indices.push_back(it->second);
        }
        if (indices.size() == row_start && !options.allow_empty)
            data_error(query_source, line.number, "empty positive set");
        offsets.push_back(indices.size());
        queries.push_back({std::move(id), std::move(text)});
    }
    return Corpus(std::move(queries), std::move(labels), std::move(offsets), std::move(indices));
}

Corpus ingest(const std::string& query_file, const std::string& label_file,
              const IngestOptions& options) {
    const std::string labels = read_file(label_file);
    const std::string queries = read_file(query_file);
    return parse_corpus(queries, labels, options, query_file, label_file);
}

PropensityTable propensities_from_frequencies(std::span<const std::size_t> freq,
                                              std::size_t num_queries, double a, double b) {
    if (!(a > 0.0) || !(b >= 0.0))
        fail(ErrorKind::Usage, "propensity constants require a > 0 and b >= 0");
    if (freq.empty()) fail(ErrorKind::Data, "corpus has no labels");
    if (num_queries < 3) fail(ErrorKind::Data, "corpus too small for propensity fit");
    if (b == 0.0 && std::find(freq.begin(), freq.end(), 0u) != freq.end())
        fail(ErrorKind::Usage, "b = 0 leaves unseen labels with zero propensity");
    PropensityTable t;
    t.a_const = a;
    t.b_const = b;
    t.c_const = (std::log(static_cast<double>(num_queries)) - 1.0) * std::pow(b + 1.0, a);
    t.p.resize(freq.size());
    t.gamma.resize(freq.size());
    for (std::size_t l = 0; l < freq.size(); ++l) {
        const double n = static_cast<double>(freq[l]);
        t.p[l] = 1.0 / (1.0 + t.c_const * std::exp(-a * std::log(n + b)));
        t.gamma[l] = 1.0 / t.p[l];
    }
    return t;
}

PropensityTable compute_propensities(const Corpus& corpus, double a, double b) {
    const auto freq = corpus.label_frequencies();
    return propensities_from_frequencies(freq, corpus.num_queries(), a, b);
}

std::string PropensityTable::serialize(const Corpus& corpus) const {
    std::string out = "# a=" + format_double(a_const, 17, false) +
                      " b=" + format_double(b_const, 17, false) +
                      " C=" + format_double(c_const, 17, false) + "\n";
    for (std::size_t l = 0; l < p.size(); ++l) {
        out += corpus.labels()[l].id + '\t' + format_double(p[l], 17, false) + '\t' +
               format_double(gamma[l], 17, false) + '\n';
    }
    return out;
}

PropensityTable PropensityTable::parse(std::string_view text, const Corpus& corpus) {
    PropensityTable t;
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t l = 0; l < corpus.num_labels(); ++l) index.emplace(corpus.labels()[l].id, l);
    t.p.assign(corpus.num_labels(), std::nan(""));
    t.gamma.assign(corpus.num_labels(), std::nan(""));

    auto parse_num = [](std::string_view s, std::size_t line) {
        double v = 0.0;
        const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
        if (r.ec != std::errc{} || r.ptr != s.data() + s.size())
            data_error("propensity file", line, "malformed number");
        return v;
    };

    std::size_t number = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++number;
        if (line.empty()) continue;
        if (line.front() == '#') {
            for (auto [key, dst] : {std::pair{"a=", &t.a_const}, {"b=", &t.b_const},
                                    {"C=", &t.c_const}}) {
                const auto k = line.find(key);
                if (k == std::string_view::npos) continue;
                auto rest = line.substr(k + 2);
                rest = rest.substr(0, rest.find(' '));
                *dst = parse_num(rest, number);
            }
            continue;
        }
        const auto t1 = line.find('\t');
        const auto t2 = t1 == std::string_view::npos ? t1 : line.find('\t', t1 + 1);
        if (t2 == std::string_view::npos) data_error("propensity file", number, "malformed record");
        const auto it = index.find(std::string(line.substr(0, t1)));
        if (it == index.end()) data_error("propensity file", number, "unknown label id");
        t.p[it->second] = parse_num(line.substr(t1 + 1, t2 - t1 - 1), number);
        t.gamma[it->second] = parse_num(line.substr(t2 + 1), number);
    }
    for (std::size_t l = 0; l < t.p.size(); ++l) {
        if (std::isnan(t.p[l]))
            fail(ErrorKind::Data, "missing propensity entry for label '" + corpus.labels()[l].id + "'");
    }
    return t;
}

}  // namespace prime
