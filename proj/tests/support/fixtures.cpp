#include "fixtures.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <set>
#include <unistd.h>

namespace prime::testing {

namespace {

std::string join_words(const std::vector<std::string>& w) {
    std::string s;
    for (const auto& x : w) {
        if (!s.empty()) s += ' ';
        s += x;
    }
    return s;
}

std::vector<std::string> pick(const std::vector<std::string>& pool, std::size_t n, Rng& rng) {
    std::vector<std::string> copy = pool;
    rng.shuffle(copy);
    copy.resize(n);
    return copy;
}

}  // namespace

CorpusText planted_corpus_text(std::uint64_t seed) {
    Rng rng(seed);
    CorpusText out;
    for (int c = 0; c < 3; ++c) {
        std::vector<std::string> vocab;
        for (int j = 0; j < 8; ++j) vocab.push_back("c" + std::to_string(c) + "w" + std::to_string(j));
        std::string positives;
        for (int k = 0; k < 3; ++k) {
            const std::string id = "l" + std::to_string(c) + std::to_string(k);
            auto words = pick(vocab, 3, rng);
            for (int u = 0; u < 2; ++u)
                words.push_back("c" + std::to_string(c) + "l" + std::to_string(k) + "u" + std::to_string(u));
            out.labels += id + "\t" + join_words(words) + "\n";
            positives += (k ? "," : "") + id;
        }
        for (int i = 0; i < 10; ++i)
            out.queries += "q" + std::to_string(c) + std::to_string(i) + "\t" + positives + "\t" +
                           join_words(pick(vocab, 4, rng)) + "\n";
    }
    return out;
}

Corpus planted_corpus(std::uint64_t seed) {
    const CorpusText t = planted_corpus_text(seed);
    return parse_corpus(t.queries, t.labels);
}

SplitCorpus ablation_corpus(std::uint64_t seed) {
    constexpr int kTopics = 50, kPerTopic = 10, kTopicWords = 20, kNoiseWords = 300;
    Rng rng(seed);
    std::string labels;
    std::vector<std::vector<std::string>> topic_vocab(kTopics);
    std::vector<std::vector<std::string>> label_words(kTopics * kPerTopic);
    for (int t = 0; t < kTopics; ++t) {
        for (int j = 0; j < kTopicWords; ++j)
            topic_vocab[t].push_back("t" + std::to_string(t) + "w" + std::to_string(j));
        for (int k = 0; k < kPerTopic; ++k) {
            const int l = t * kPerTopic + k;
            for (int u = 0; u < 3; ++u)
                label_words[l].push_back("l" + std::to_string(l) + "u" + std::to_string(u));
            auto words = label_words[l];
            for (auto& w : pick(topic_vocab[t], 3, rng)) words.push_back(w);
            labels += "L" + std::to_string(l) + "\t" + join_words(words) + "\n";
        }
    }

    auto make_queries = [&](std::size_t n, const std::string& prefix, bool drop, std::size_t& dropped) {
        std::string text;
        for (std::size_t i = 0; i < n; ++i) {
            const int t = static_cast<int>(rng.below(kTopics));
            const std::size_t npos = 1 + rng.below(3);
            std::vector<int> members(kPerTopic);
            std::iota(members.begin(), members.end(), t * kPerTopic);
            rng.shuffle(members);
            members.resize(npos);
            std::vector<std::string> words;
            for (int l : members) words.push_back(label_words[l][rng.below(3)]);
            for (auto& w : pick(topic_vocab[t], 2, rng)) words.push_back(w);
            words.push_back("n" + std::to_string(rng.below(kNoiseWords)));
            rng.shuffle(words);

            std::vector<int> kept = members;
            if (drop) {
                kept.clear();
                for (int l : members) {
                    const bool last_chance = kept.empty() && l == members.back();
                    if (!last_chance && rng.uniform() < 0.05) {
                        ++dropped;
                        continue;
                    }
                    kept.push_back(l);
                }
            }
            std::string pos;
            for (std::size_t j = 0; j < kept.size(); ++j) pos += (j ? ",L" : "L") + std::to_string(kept[j]);
            text += prefix + std::to_string(i) + "\t" + pos + "\t" + join_words(words) + "\n";
        }
        return text;
    };

    SplitCorpus out;
    std::size_t unused = 0;
    const std::string train_q = make_queries(2000, "tr", true, out.dropped_pairs);
    const std::string test_q = make_queries(400, "te", false, unused);
    out.train = parse_corpus(train_q, labels);
    out.test = parse_corpus(test_q, labels);
    return out;
}

Corpus wide_corpus(std::size_t num_labels, std::size_t num_queries, std::uint64_t seed) {
    Rng rng(seed);
    std::string labels, queries;
    for (std::size_t l = 0; l < num_labels; ++l)
        labels += "L" + std::to_string(l) + "\tlabel" + std::to_string(l) + " topic" +
                  std::to_string(l % 97) + "\n";
    for (std::size_t q = 0; q < num_queries; ++q) {
        const std::size_t a = rng.below(num_labels);
        const std::size_t b = rng.below(num_labels);
        std::string pos = "L" + std::to_string(a);
        if (b != a) pos += ",L" + std::to_string(b);
        queries += "Q" + std::to_string(q) + "\t" + pos + "\tlabel" + std::to_string(a) + " topic" +
                   std::to_string(b % 97) + "\n";
    }
    return parse_corpus(queries, labels);
}

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale) {
    Matrix m(rows, cols);
    for (double& v : m.data) v = scale * rng.normal();
    return m;
}

Matrix random_unit_rows(std::size_t rows, std::size_t cols, Rng& rng) {
    Matrix m = random_matrix(rows, cols, rng);
    for (std::size_t i = 0; i < rows; ++i) normalize_inplace(m.row(i));
    return m;
}

Matrix formula_matrix(std::size_t rows, std::size_t cols, double phase, double scale) {
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j)
            m(i, j) = scale * std::sin(0.37 * static_cast<double>(i * cols + j) + phase);
    return m;
}

TempDir::TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("prime_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
}

}  // namespace prime::testing
