// SPDX-License-Identifier: Apache-2.0
//
// Drives the command-line tool end to end on tiny problems.

#include <maccal/io.hpp>

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;
using maccal::json;
using maccal::read_text;

namespace {

const char *g_cli = MACCAL_CLI_PATH;

fs::path scratch(const std::string &name) {
    const fs::path p = fs::temp_directory_path() / ("maccal_cli_test_" + std::to_string(::getpid())) / name;
    fs::remove_all(p);
    fs::create_directories(p.parent_path());
    return p;
}

int run(const std::string &args, const std::string &env = "") {
    const std::string cmd = env + (env.empty() ? "" : " ") + g_cli + " " + args + " > /dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

const std::string kTiny = " --per-class 60 --hidden-widths 16 --stage1-epochs 3 --stage2-epochs 2 --batch-size 32";

json load(const fs::path &p) { return json::parse(read_text(p.string())); }

}  // namespace

TEST(Cli, GenDataWritesSplitsAndIsDeterministic) {
    const auto a = scratch("gen_a"), b = scratch("gen_b");
    const std::string flags = " --classes 5 --dim 20 --per-class 100 --spread 2.0 --seed 1";
    ASSERT_EQ(run("gen-data" + flags + " --out " + a.string()), 0);
    ASSERT_EQ(run("gen-data" + flags + " --out " + b.string()), 0);
    for (const char *f : {"train.csv", "val.csv", "test.csv", "ood.csv"}) {
        ASSERT_TRUE(fs::exists(a / f)) << f;
        EXPECT_EQ(read_text((a / f).string()), read_text((b / f).string())) << f;
    }
    const json m = load(a / "manifest.json");
    EXPECT_EQ(m.at("schema_version").get<int>(), maccal::kSchemaVersion);
    EXPECT_EQ(m.at("outputs").size(), 4u);
    EXPECT_EQ(maccal::load_csv((a / "train.csv").string()).dim(), 20u);
}

TEST(Cli, GenDataRejectsNonPositiveSpread) {
    EXPECT_NE(run("gen-data --spread 0 --out " + scratch("bad").string()), 0);
    EXPECT_NE(run("gen-data --spread -1 --out " + scratch("bad2").string()), 0);
}

TEST(Cli, TrainThenEvalReproducesEce) {
    const auto t = scratch("train"), e = scratch("eval");
    ASSERT_EQ(run("train --method maccal --seed 1" + kTiny + " --out " + t.string()), 0);
    for (const char *f : {"report.json", "reliability.csv", "stats.csv", "checkpoint.json", "checkpoint_stage1.json", "manifest.json"})
        EXPECT_TRUE(fs::exists(t / f)) << f;
    ASSERT_EQ(run("eval --checkpoint " + (t / "checkpoint.json").string() + " --posthoc ts --out " + e.string()), 0);
    const json tr = load(t / "report.json"), ev = load(e / "report.json");
    EXPECT_EQ(tr.at("test").at("ece").get<double>(), ev.at("test").at("ece").get<double>());
    EXPECT_TRUE(ev.at("temperature").contains("T"));
    EXPECT_TRUE(ev.at("temperature").at("test_after").contains("ece"));
    EXPECT_TRUE(ev.at("temperature").at("test_after").contains("nll"));
    EXPECT_TRUE(ev.at("test").contains("ood"));
    EXPECT_EQ(tr.at("schema_version").get<int>(), maccal::kSchemaVersion);
}

TEST(Cli, EvalWithExplicitOodFileAndSeverity) {
    const auto g = scratch("ood_gen"), t = scratch("ood_train"), e = scratch("ood_eval");
    ASSERT_EQ(run("gen-data --per-class 60 --seed 2 --out " + g.string()), 0);
    ASSERT_EQ(run("train --method vanilla --data " + g.string() + kTiny + " --out " + t.string()), 0);
    ASSERT_EQ(run("eval --checkpoint " + (t / "checkpoint.json").string() + " --ood " + (g / "ood.csv").string() +
                  " --severity 3 --bins 10 --out " + e.string()),
              0);
    const json ev = load(e / "report.json");
    EXPECT_EQ(ev.at("severity").get<int>(), 3);
    EXPECT_EQ(ev.at("num_bins").get<int>(), 10);
    const double au = ev.at("test").at("ood").at("auroc").get<double>();
    EXPECT_GE(au, 0.0);
    EXPECT_LE(au, 1.0);
    EXPECT_NE(run("eval --checkpoint " + (t / "missing.json").string() + " --out " + e.string()), 0);
    EXPECT_NE(run("eval --checkpoint " + (t / "checkpoint.json").string() + " --severity 9 --out " + e.string()), 0);
}

TEST(Cli, MaskResampleFlagIsRecorded) {
    for (const char *r : {"epoch", "batch"}) {
        const auto t = scratch(std::string("resample_") + r);
        ASSERT_EQ(run(std::string("train --method maccal --mask-resample ") + r + kTiny + " --out " + t.string()), 0);
        EXPECT_EQ(load(t / "report.json").at("config").at("mask_resample").get<std::string>(), r);
    }
}

TEST(Cli, ConfigPrecedenceFlagOverFileOverDefault) {
    const auto t = scratch("precedence");
    fs::create_directories(t);
    const fs::path cfg = t / "run.cfg";
    std::ofstream(cfg) << "gamma = 0.8\nq0 = 0.3\nstage1_epochs = 2\n";
    ASSERT_EQ(run("train --method maccal --config " + cfg.string() + " --gamma 0.95" + kTiny + " --out " + (t / "o").string()), 0);
    const json c = load(t / "o" / "report.json").at("config");
    EXPECT_EQ(c.at("gamma").get<double>(), 0.95);       // flag beats file
    EXPECT_EQ(c.at("q0").get<double>(), 0.3);           // file beats default
    EXPECT_EQ(c.at("eta_final").get<double>(), 0.001);  // default
    EXPECT_EQ(c.at("stage1_epochs").get<int>(), 3);     // flag in kTiny beats file
    std::ofstream(cfg) << "bogus_key = 1\n";
    EXPECT_NE(run("train --config " + cfg.string() + kTiny + " --out " + (t / "p").string()), 0);
}

TEST(Cli, BadConfigValueFailsWithMessage) {
    EXPECT_NE(run("train --q0 2" + kTiny + " --out " + scratch("badq").string()), 0);
    EXPECT_NE(run("train --method nonsense" + kTiny + " --out " + scratch("badm").string()), 0);
}

TEST(Cli, OutputRootFromEnvironment) {
    const auto root = scratch("envroot");
    ASSERT_EQ(run("train --method vanilla" + kTiny, "MACCAL_OUT=" + root.string()), 0);
    EXPECT_TRUE(fs::exists(root / "train" / "report.json"));
}

TEST(Cli, SweepRecordsEveryRowAndFailures) {
    const auto s = scratch("sweep");
    ASSERT_EQ(run("sweep --method mixup --param alpha --values 0.1,0.2,0.5,1.0 --seeds 1,2,3,4,5 --jobs 2" + kTiny +
                  " --out " + s.string()),
              0);
    std::ifstream is(s / "sweep.csv");
    std::string line;
    std::getline(is, line);
    EXPECT_EQ(line.rfind("alpha,seed,status,acc,conf,ece", 0), 0u);
    int rows = 0;
    while (std::getline(is, line)) ++rows;
    EXPECT_EQ(rows, 20);

    const auto f = scratch("sweep_fail");
    ASSERT_EQ(run("sweep --method mixup --param alpha --values 0.5,-1 --seeds 1" + kTiny + " --out " + f.string()), 0);
    const json rep = load(f / "report.json");
    EXPECT_EQ(rep.at("rows").get<int>(), 2);
    EXPECT_EQ(rep.at("failed_rows").get<int>(), 1);
}

TEST(Cli, ProbeSweepReachesUniformConfidence) {
    const auto s = scratch("probe");
    ASSERT_EQ(run("sweep --method vanilla --param probe-q --values 1.0,0.5,0 --seeds 1 --draws 2" + kTiny + " --out " + s.string()),
              0);
    std::ifstream is(s / "sweep.csv");
    std::string line;
    std::getline(is, line);
    std::vector<std::string> last;
    while (std::getline(is, line)) last.push_back(line);
    ASSERT_EQ(last.size(), 3u);
    EXPECT_NE(last[2].find(",ok,"), std::string::npos);
    // conf column of q = 0 is exactly 1/K = 0.2
    EXPECT_NE(last[2].find(",0.20000000000000001,"), std::string::npos);
}

TEST(Cli, ReportSummarizesJson) {
    const auto t = scratch("report_src");
    ASSERT_EQ(run("train --method vanilla" + kTiny + " --out " + t.string()), 0);
    const auto csv = scratch("summary.csv");
    ASSERT_EQ(run("report " + (t / "report.json").string() + " --csv " + csv.string()), 0);
    EXPECT_TRUE(fs::exists(csv));
    EXPECT_NE(run("report " + (t / "reliability.csv").string()), 0);
}
