// End-to-end tests of the prime CLI binary through a shell.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fixtures.hpp"

namespace prime {
namespace {

using nlohmann::json;
using testing::TempDir;

struct CliRun {
    int code;
    std::string output;  // stdout and stderr interleaved
};

CliRun run(const std::string& args, const std::string& env = "") {
    const std::string cmd = env + (env.empty() ? "" : " ") + "'" PRIME_CLI_PATH "' " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) return {-1, "popen failed"};
    std::string out;
    std::array<char, 4096> buf{};
    std::size_t n = 0;
    while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) out.append(buf.data(), n);
    const int status = pclose(pipe);
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void spit(const std::string& path, const std::string& text) {
    std::ofstream(path, std::ios::binary) << text;
}

json read_json(const std::string& path) { return json::parse(slurp(path)); }

/// Planted corpus written to `dir` as queries.txt / labels.txt.
struct PlantedFiles {
    std::string queries, labels;
};

PlantedFiles write_planted(const TempDir& dir) {
    const testing::CorpusText text = testing::planted_corpus_text(7);
    PlantedFiles f{dir.file("queries.txt"), dir.file("labels.txt")};
    spit(f.queries, text.queries);
    spit(f.labels, text.labels);
    return f;
}

std::string corpus_args(const PlantedFiles& f) {
    return "--queries " + f.queries + " --labels " + f.labels;
}

constexpr const char* kSmallModel = " --dim 16 --vocab-size 4096 --batch-size 8 --epochs 1";

TEST(Cli, HelpExitsZero) {
    EXPECT_EQ(run("--help").code, 0);
    EXPECT_EQ(run("train --help").code, 0);
}

TEST(Cli, MissingSubcommandIsUsageError) { EXPECT_EQ(run("").code, 2); }

TEST(Cli, IngestReportsHandCounts) {
    TempDir dir;
    const PlantedFiles f = write_planted(dir);
    const CliRun r = run("ingest " + corpus_args(f) + " --out-dir " + dir.file("out"));
    ASSERT_EQ(r.code, 0) << r.output;
    const json stats = read_json(dir.file("out/stats.json"));
    EXPECT_EQ(stats["queries"], 30);
    EXPECT_EQ(stats["labels"], 9);
    EXPECT_EQ(stats["nnz"], 90);
    ASSERT_EQ(stats["outputs"].size(), 3u);
    for (const auto& o : stats["outputs"]) EXPECT_EQ(o["fnv1a64"].get<std::string>().size(), 16u);
}

TEST(Cli, MissingFileIsDataErrorNamingPath) {
    TempDir dir;
    const std::string missing = dir.file("nope.txt");
    const CliRun r = run("ingest --queries " + missing + " --labels " + missing + " --out-dir " + dir.file("o"));
    EXPECT_EQ(r.code, 3);
    EXPECT_NE(r.output.find(missing), std::string::npos) << r.output;
}

TEST(Cli, IngestIsIdempotentOnCanonicalOutput) {
    TempDir dir;
    const PlantedFiles f = write_planted(dir);
    ASSERT_EQ(run("ingest " + corpus_args(f) + " --out-dir " + dir.file("a")).code, 0);
    ASSERT_EQ(run("ingest --queries " + dir.file("a/queries.tsv") + " --labels " + dir.file("a/labels.tsv") +
                  " --out-dir " + dir.file("b"))
                  .code,
              0);
    const json a = read_json(dir.file("a/stats.json")), b = read_json(dir.file("b/stats.json"));
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(a["outputs"][i]["fnv1a64"], b["outputs"][i]["fnv1a64"]);
    for (const char* name : {"queries.tsv", "labels.tsv", "propensity.tsv"})
        EXPECT_EQ(slurp(dir.file(std::string("a/") + name)), slurp(dir.file(std::string("b/") + name)));
}

TEST(Cli, InvertedGammaIsUsageErrorBeforeAnyWork) {
    TempDir dir;
    const PlantedFiles f = write_planted(dir);
    const CliRun r = run("train " + corpus_args(f) + " --out-dir " + dir.file("run") +
                      " --gamma-min 0.4 --gamma-max 0.3");
    EXPECT_EQ(r.code, 2) << r.output;
    EXPECT_FALSE(std::filesystem::exists(dir.file("run")));
}

TEST(Cli, TooManyPositivesIsUsageError) {
    TempDir dir;
    const PlantedFiles f = write_planted(dir);
    EXPECT_EQ(run("train " + corpus_args(f) + " --out-dir " + dir.file("run") + " --positives 3").code, 2);
}

TEST(Cli, TrainTwiceGivesIdenticalCheckpoints) {
    TempDir dir;
    const PlantedFiles f = write_planted(dir);
    for (const char* out : {"r1", "r2"}) {
        const CliRun r = run("train " + corpus_args(f) + " --out-dir " + dir.file(out) + " --seed 7" + kSmallModel);
        ASSERT_EQ(r.code, 0) << r.output;
    }
    EXPECT_EQ(slurp(dir.file("r1/model.ckpt")), slurp(dir.file("r2/model.ckpt")));
    const json m1 = read_json(dir.file("r1/manifest.json")), m2 = read_json(dir.file("r2/manifest.json"));
    EXPECT_EQ(m1["outputs"][0]["fnv1a64"], m2["outputs"][0]["fnv1a64"]);
}

TEST(Cli, SeedEnvironmentOverridesFlag) {
    TempDir dir;
    const PlantedFiles f = write_planted(dir);
    ASSERT_EQ(run("train " + corpus_args(f) + " --out-dir " + dir.file("flag") + " --seed 7" + kSmallModel).code, 0);
    const CliRun r = run("train " + corpus_args(f) + " --out-dir " + dir.file("env") + " --seed 1" + kSmallModel,
                      "PRIME_SEED=7");
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_EQ(read_json(dir.file("env/manifest.json"))["seed"], 7);
    EXPECT_EQ(slurp(dir.file("flag/model.ckpt")), slurp(dir.file("env/model.ckpt")));
    EXPECT_EQ(run("train " + corpus_args(f) + " --out-dir " + dir.file("bad") + kSmallModel, "PRIME_SEED=x").code, 2);
}

TEST(Cli, ManifestListsArtifactsWithHashes) {
    TempDir dir;
    const PlantedFiles f = write_planted(dir);
    ASSERT_EQ(run("train " + corpus_args(f) + " --out-dir " + dir.file("run") + " --seed 3" + kSmallModel).code, 0);
    const json m = read_json(dir.file("run/manifest.json"));
    for (const char* key : {"command", "git_describe", "seed", "config", "inputs", "started_at", "finished_at",
                            "outputs", "summary"})
        EXPECT_TRUE(m.contains(key)) << key;
    EXPECT_EQ(m["config"]["gamma_min"], 0.1);
    EXPECT_EQ(m["config"]["gamma_max"], 0.3);
    EXPECT_EQ(m["config"]["alpha"], 0.95);
    EXPECT_EQ(m["config"]["lambda"], 0.1);
    EXPECT_EQ(m["config"]["weight_decay"], 0.01);
    ASSERT_EQ(m["outputs"].size(), 3u);
    for (const auto& o : m["outputs"]) {
        const std::string path = o["path"];
        EXPECT_TRUE(std::filesystem::exists(path)) << path;
    }
    // One JSONL line per step, each a LossReport.
    std::istringstream steps(slurp(dir.file("run/loss.jsonl")));
    std::string line;
    std::size_t n = 0;
    while (std::getline(steps, line)) {
        EXPECT_TRUE(json::parse(line)["loss"].contains("total"));
        ++n;
    }
    EXPECT_GT(n, 0u);
}

TEST(Cli, KLargerThanLabelCountIsUsageError) {
    TempDir dir;
    const PlantedFiles f = write_planted(dir);
    ASSERT_EQ(run("train " + corpus_args(f) + " --out-dir " + dir.file("run") + kSmallModel).code, 0);
    const std::string ckpt = " --checkpoint " + dir.file("run/model.ckpt");
    EXPECT_EQ(run("predict " + corpus_args(f) + ckpt + " --k 10").code, 2);
    EXPECT_EQ(run("eval " + corpus_args(f) + ckpt + " --k 1,10").code, 2);
}

TEST(Cli, PredictionFileEvaluatesLikeCheckpoint) {
    TempDir dir;
    const PlantedFiles f = write_planted(dir);
    ASSERT_EQ(run("train " + corpus_args(f) + " --out-dir " + dir.file("run") + kSmallModel).code, 0);
    const std::string ckpt = " --checkpoint " + dir.file("run/model.ckpt");
    ASSERT_EQ(run("predict " + corpus_args(f) + ckpt + " --k 5 --out " + dir.file("pred.txt")).code, 0);
    ASSERT_EQ(run("eval " + corpus_args(f) + ckpt + " --out " + dir.file("a.json")).code, 0);
    ASSERT_EQ(run("eval " + corpus_args(f) + " --predictions " + dir.file("pred.txt") + " --out " + dir.file("b.json")).code, 0);
    EXPECT_EQ(slurp(dir.file("a.json")), slurp(dir.file("b.json")));
}

TEST(Cli, PredictionsIdenticalAcrossThreadCounts) {
    TempDir dir;
    const PlantedFiles f = write_planted(dir);
    ASSERT_EQ(run("train " + corpus_args(f) + " --out-dir " + dir.file("t1") + " --threads 1" + kSmallModel).code, 0);
    ASSERT_EQ(run("train " + corpus_args(f) + " --out-dir " + dir.file("t4") + " --threads 4" + kSmallModel).code, 0);
    EXPECT_EQ(slurp(dir.file("t1/model.ckpt")), slurp(dir.file("t4/model.ckpt")));
    const std::string ckpt = " --checkpoint " + dir.file("t1/model.ckpt");
    ASSERT_EQ(run("predict " + corpus_args(f) + ckpt + " --threads 1 --out " + dir.file("p1.txt")).code, 0);
    ASSERT_EQ(run("predict " + corpus_args(f) + ckpt + " --threads 4 --out " + dir.file("p4.txt")).code, 0);
    EXPECT_EQ(slurp(dir.file("p1.txt")), slurp(dir.file("p4.txt")));
}

TEST(Cli, ExportedPrototypesCoverEveryLabel) {
    TempDir dir;
    const PlantedFiles f = write_planted(dir);
    ASSERT_EQ(run("train " + corpus_args(f) + " --out-dir " + dir.file("run") + kSmallModel).code, 0);
    ASSERT_EQ(run("predict " + corpus_args(f) + " --checkpoint " + dir.file("run/model.ckpt") + " --out " +
                  dir.file("p.txt") + " --export-prototypes " + dir.file("protos.txt"))
                  .code,
              0);
    std::istringstream in(slurp(dir.file("protos.txt")));
    std::string line;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        const auto tab = line.find('\t');
        ASSERT_NE(tab, std::string::npos);
        EXPECT_EQ(line.size() - tab - 1, 16u * 8u);  // 16 f32 values, 8 hex digits each
        ++rows;
    }
    EXPECT_EQ(rows, 9u);
}

TEST(Cli, CorruptCheckpointIsDataError) {
    TempDir dir;
    const PlantedFiles f = write_planted(dir);
    spit(dir.file("bad.ckpt"), "not a checkpoint");
    EXPECT_EQ(run("predict " + corpus_args(f) + " --checkpoint " + dir.file("bad.ckpt")).code, 3);
}

struct LandscapeRow {
    std::string mode, region;
    double s_qp, s_qn, loss, d_sap, d_san;
};

std::vector<LandscapeRow> parse_landscape(const std::string& csv) {
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    std::vector<LandscapeRow> rows;
    while (std::getline(in, line)) {
        std::vector<std::string> c;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) c.push_back(cell);
        if (c.size() != 7) continue;
        rows.push_back({c[0], c[6], std::stod(c[1]), std::stod(c[2]), std::stod(c[3]), std::stod(c[4]),
                        std::stod(c[5])});
    }
    return rows;
}

TEST(Cli, LossLandscapeDefaultGrid) {
    TempDir dir;
    const CliRun r = run("loss-landscape --out " + dir.file("grid.csv"));
    ASSERT_EQ(r.code, 0) << r.output;
    const std::string csv = slurp(dir.file("grid.csv"));
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "mode,s_qp,s_qn,loss,d_sap,d_san,region");
    const auto rows = parse_landscape(csv);
    ASSERT_EQ(rows.size(), 2u * 201u * 201u);
    bool easy = false, uncertain = false;
    std::size_t unknown_regions = 0;
    for (const auto& row : rows) {
        if (row.region != "easy" && row.region != "uncertain" && row.region != "hard") ++unknown_regions;
        if (row.mode != "dynamic") continue;
        if (std::abs(row.s_qp - 0.9) < 1e-9 && std::abs(row.s_qn - 0.2) < 1e-9) {
            easy = true;
            EXPECT_EQ(row.region, "easy");
            EXPECT_EQ(row.loss, 0.0);
        }
        if (std::abs(row.s_qp - 0.55) < 1e-9 && std::abs(row.s_qn - 0.5) < 1e-9) {
            uncertain = true;
            EXPECT_EQ(row.region, "uncertain");
            EXPECT_NEAR(row.loss, 0.15, 1e-9);
            EXPECT_EQ(row.d_sap, 1.0);
            EXPECT_EQ(row.d_san, -1.0);
        }
    }
    EXPECT_TRUE(easy);
    EXPECT_TRUE(uncertain);
    EXPECT_EQ(unknown_regions, 0u);
}

TEST(Cli, PlantedDefaultFlagsReachPerfectPrecision) {
    TempDir dir;
    const PlantedFiles f = write_planted(dir);
    const CliRun r = run("train " + corpus_args(f) + " --out-dir " + dir.file("run") + " --seed 7");
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_EQ(read_json(dir.file("run/manifest.json"))["summary"]["p_at"]["1"], 1.0);
}

TEST(Cli, SelfRetrievalReachesPerfectPrecision) {
    TempDir dir;
    const testing::CorpusText planted = testing::planted_corpus_text(7);
    // Each query repeats one label's text verbatim and is relevant to that label only.
    std::string queries;
    std::istringstream labels(planted.labels);
    std::size_t q = 0;
    for (std::string line; std::getline(labels, line);) {
        if (line.empty() || line[0] == '#') continue;
        const auto tab = line.find('\t');
        for (int copy = 0; copy < 3; ++copy)
            queries += "s" + std::to_string(q++) + "\t" + line.substr(0, tab) + "\t" + line.substr(tab + 1) + "\n";
    }
    spit(dir.file("q.txt"), queries);
    spit(dir.file("l.txt"), planted.labels);
    const std::string files = "--queries " + dir.file("q.txt") + " --labels " + dir.file("l.txt");
    ASSERT_EQ(run("train " + files + " --out-dir " + dir.file("run") + " --seed 7").code, 0);
    const CliRun r = run("eval " + files + " --checkpoint " + dir.file("run/model.ckpt") + " --k 1 --out " +
                      dir.file("eval.json"));
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_EQ(read_json(dir.file("eval.json"))["p_at"]["1"], 1.0);
}

}  // namespace
}  // namespace prime
