#include "ccgl/config.hpp"
#include "ccgl/pipeline.hpp"
#include "support.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

using namespace ccgl;
using ccgl::testing::TempDir;

namespace {

namespace fs = std::filesystem;

RunConfig tiny_config(const fs::path& out) {
    RunConfig c;
    c.data.synth.n_patients = 24;
    c.data.synth.n_rois = 8;
    c.data.synth.n_timepoints = 160;
    c.edge_policy.per_node_top = 3;
    c.cgl.encoder.hidden = {8, 8};
    c.cgl.encoder.embedding_dim = 8;
    c.cgl.epochs = 3;
    c.dgc.hidden = {8, 8};
    c.dgc.epochs = 5;
    c.dgc.k = 5;
    c.seeds = {0};
    c.knn_baseline_k = 3;
    c.output_dir = out;
    return c;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct CliResult {
    int status = -1;
    std::string stderr_text;
};

CliResult run_cli(const std::string& args, const fs::path& scratch) {
    const fs::path err = scratch / "stderr.txt";
    const std::string cmd = std::string(CCGL_CLI_PATH) + " " + args + " > /dev/null 2> " + err.string();
    const int raw = std::system(cmd.c_str());
    CliResult r;
    r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    r.stderr_text = slurp(err);
    return r;
}

} // namespace

TEST_SUITE("pipeline") {

TEST_CASE("single-seed pipeline writes every artifact") {
    TempDir dir("pipe");
    const RunConfig cfg = tiny_config(dir.path());
    const PipelineReport report = run_pipeline(cfg, dir.path());
    CHECK(report.model.runs.size() == 1);
    const fs::path seed = seed_dir(dir.path(), 0);
    for (const char* name :
         {"split.json", "cohort_summary.json", "config.json", "cgl_checkpoint.json", "cgl_history.csv",
          "attraction_cgl.csv", "attraction_cgl_hist.csv", "attraction_raw.csv", "embeddings.csv",
          "dgc_checkpoint.json", "dgc_history.csv", "predictions.csv", "metrics.json", "knn_metrics.json",
          "population_raw.dot", "population_cgl.graphml", "population_dgc.dot"}) {
        CAPTURE(name);
        CHECK(fs::exists(seed / name));
    }
    CHECK(fs::exists(dir.path() / "metrics.json"));
    const auto j = nlohmann::json::parse(slurp(dir.path() / "metrics.json"));
    CHECK(j["runs"].size() == 1);
    CHECK(j.contains("mean"));
    CHECK(j.contains("std"));

    // The effective config re-validates and records the seed.
    const RunConfig back = load_config(seed / "config.json");
    CHECK(back.seeds == std::vector<std::uint64_t>{0});
    CHECK(back.cgl.epochs == 3);

    const std::string header = slurp(seed / "predictions.csv").substr(0, 56);
    CHECK(header == "patient_id,split,label,prob_class0,prob_class1,predicted");
}

TEST_CASE("rerunning a seed reproduces metrics byte for byte") {
    TempDir a("pipe_a"), b("pipe_b");
    run_pipeline(tiny_config(a.path()), a.path());
    run_pipeline(tiny_config(b.path()), b.path());
    CHECK(slurp(a.path() / "metrics.json") == slurp(b.path() / "metrics.json"));
    CHECK(slurp(seed_dir(a.path(), 0) / "dgc_checkpoint.json") == slurp(seed_dir(b.path(), 0) / "dgc_checkpoint.json"));
    run_evaluate(tiny_config(a.path()), a.path(), 0);
    CHECK(slurp(seed_dir(a.path(), 0) / "metrics.json") == slurp(seed_dir(b.path(), 0) / "metrics.json"));
}

TEST_CASE("stages refuse to run without their prerequisites") {
    TempDir dir("pipe_missing");
    const RunConfig cfg = tiny_config(dir.path());
    try {
        run_train_dgc(cfg, dir.path(), 0);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("cgl_checkpoint.json") != std::string::npos);
    }
    CHECK_THROWS(run_train_cgl(cfg, dir.path(), 0));
    CHECK_THROWS(run_evaluate(cfg, dir.path(), 0));
}

TEST_CASE("cli exit codes and messages") {
    TempDir dir("cli");
    RunConfig cfg = tiny_config(dir.path() / "out");
    {
        std::ofstream out(dir.path() / "c.json");
        out << config_to_json(cfg);
    }
    const std::string conf = " --config " + (dir.path() / "c.json").string();

    const CliResult missing = run_cli("train-dgc" + conf, dir.path());
    CHECK(missing.status == 2);
    CHECK(missing.stderr_text.find((dir.path() / "out" / "seed_0" / "cgl_checkpoint.json").string()) !=
          std::string::npos);

    {
        std::ofstream out(dir.path() / "bad.json");
        out << R"({"cgl":{"tau":-1}})";
    }
    const CliResult invalid = run_cli("ingest --config " + (dir.path() / "bad.json").string(), dir.path());
    CHECK(invalid.status == 1);
    CHECK(invalid.stderr_text.find("cgl.tau") != std::string::npos);

    CHECK(run_cli("frobnicate" + conf, dir.path()).status == 1);
    CHECK(run_cli("ingest", dir.path()).status == 1);

    CHECK(run_cli("synth" + conf, dir.path()).status == 0);
    CHECK(fs::exists(dir.path() / "out" / "cohort" / "manifest.json"));
    for (const char* stage : {"ingest", "train-cgl", "train-dgc", "evaluate", "export-graph"}) {
        CAPTURE(stage);
        CHECK(run_cli(std::string(stage) + conf + " --seed 2", dir.path()).status == 0);
    }
    CHECK(fs::exists(dir.path() / "out" / "seed_2" / "metrics.json"));
    CHECK(fs::exists(dir.path() / "out" / "seed_2" / "population_dgc.graphml"));

    const fs::path other = dir.path() / "elsewhere";
    CHECK(run_cli("pipeline" + conf + " --seed 1 --out " + other.string(), dir.path()).status == 0);
    CHECK(fs::exists(other / "metrics.json"));
}

TEST_CASE("manifest sources flow through the pipeline") {
    TempDir dir("pipe_manifest");
    RunConfig cfg = tiny_config(dir.path() / "out");
    run_synth(cfg, dir.path() / "snap");
    cfg.data.manifest = dir.path() / "snap" / "cohort" / "manifest.json";
    const Cohort c = load_source(cfg);
    CHECK(c.patients.size() == 24);
    run_ingest(cfg, cfg.output_dir, 4);
    const auto split = nlohmann::json::parse(slurp(seed_dir(cfg.output_dir, 4) / "split.json"));
    CHECK(split.size() == 24);
}

} // TEST_SUITE
