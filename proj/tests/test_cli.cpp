#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "hardi/io.hpp"
#include "hardi/pipeline.hpp"

using namespace hardi;

namespace {

struct Outcome
{
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(fs::path const& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

class Cli : public ::testing::Test
{
  protected:
    fs::path dir;

    void SetUp() override
    {
        auto const* info = ::testing::UnitTest::GetInstance()->current_test_info();
        dir = fs::temp_directory_path() / (std::string("hardi_cli_") + info->name());
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    void TearDown() override { fs::remove_all(dir); }

    Outcome run(std::string const& args) const
    {
        auto const out = dir / "stdout.txt";
        auto const err = dir / "stderr.txt";
        std::string const cmd = std::string("\"") + HARDI_CLI_PATH + "\" -q " + args + " >\""
                                + out.string() + "\" 2>\"" + err.string() + "\"";
        int const status = std::system(cmd.c_str());
        Outcome r;
        r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
        r.out = slurp(out);
        r.err = slurp(err);
        return r;
    }

    // Small dataset in dir/name.
    fs::path synth(std::string const& name, std::string const& extra = "") const
    {
        auto const d = dir / name;
        auto const r = run("--seed 7 --out " + d.string() + " synth --n-train 60 --n-test 20 " + extra);
        EXPECT_EQ(r.code, 0) << r.err;
        return d;
    }
};

}  // namespace

TEST_F(Cli, UsageErrorsExitWithOne)
{
    EXPECT_EQ(run("").code, 1);
    EXPECT_EQ(run("frobnicate").code, 1);
    EXPECT_EQ(run("--precision f16 selftest").code, 1);
    auto const r = run("--out " + (dir / "x").string() + " synth --n-train 0");
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("--n-train"), std::string::npos);
    EXPECT_FALSE(fs::exists(dir / "x" / "train"));
}

TEST_F(Cli, HelpExitsZero)
{
    auto const r = run("--help");
    EXPECT_EQ(r.code, 0);
    for (auto sub : {"synth", "train", "reconstruct", "evaluate", "selftest-grad", "selftest"})
        EXPECT_NE(r.out.find(sub), std::string::npos) << sub;
}

TEST_F(Cli, SynthWritesRequestedCounts)
{
    auto const d = synth("ds");
    EXPECT_EQ(read_gradient_files(d / "bvecs", d / "bvals").size(), 90u);
    auto const train = read_signal_matrix(d / "train" / "signals_noisy.csv");
    auto const test = read_signal_matrix(d / "test" / "signals.csv");
    EXPECT_EQ(train.rows(), 60);
    EXPECT_EQ(train.cols(), 90);
    EXPECT_EQ(test.rows(), 20);
    auto const meta = json::parse(slurp(d / "train" / "meta.json"));
    EXPECT_EQ(meta["n_voxels"], 60);
    EXPECT_EQ(meta["voxels"].size(), 60u);
}

TEST_F(Cli, SynthZeroSigmaCleanEqualsNoisy)
{
    auto const d = synth("ds", "--sigma 0");
    for (auto s : {"train", "test"})
        EXPECT_EQ(slurp(d / s / "signals.csv"), slurp(d / s / "signals_noisy.csv"));
}

TEST_F(Cli, SynthDeterministicAcrossThreads)
{
    auto const a = synth("a");
    auto const r = run("--seed 7 --threads 3 --out " + (dir / "b").string()
                       + " synth --n-train 60 --n-test 20");
    ASSERT_EQ(r.code, 0);
    for (auto f : {"bvecs", "bvals", "train/signals_noisy.csv", "test/signals.csv", "train/meta.json"})
        EXPECT_EQ(slurp(a / f), slurp(dir / "b" / f)) << f;
    auto const c = run("--seed 8 --out " + (dir / "c").string() + " synth --n-train 60 --n-test 20");
    ASSERT_EQ(c.code, 0);
    EXPECT_NE(slurp(a / "train/signals.csv"), slurp(dir / "c" / "train/signals.csv"));
}

TEST_F(Cli, ReconstructUnknownMethod)
{
    auto const d = synth("ds");
    auto const r = run("--out " + (dir / "r").string() + " reconstruct --data " + d.string()
                       + " --method svm --lambda 0.1");
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("l2, cs, cnn"), std::string::npos);
}

TEST_F(Cli, ReconstructRidgeMatchesLibrary)
{
    auto const d = synth("ds");
    auto const r = run("--out " + (dir / "r").string() + " reconstruct --data " + d.string()
                       + " --method l2 --k-low 23 --lambda 0.01");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("NMSE"), std::string::npos);

    auto const scheme = read_gradient_files(d / "bvecs", d / "bvals");
    auto const noisy = read_signal_matrix(d / "test" / "signals_noisy.csv");
    auto const sub = select_subset(scheme, 23, SubsetStrategy::uniform_angular);
    auto const high = build_dictionary(scheme, BasisDescriptor::sh(8));
    SolverConfig sc;
    sc.lambda = 0.01;
    auto const expected = reconstruct_batch(restrict_dictionary(high, sub), high,
                                            select_columns(noisy, sub), sc, SolverMethod::l2);
    EXPECT_EQ(read_signal_matrix(dir / "r" / "recon_l2_k23.csv"), expected);
    EXPECT_EQ(read_subset(dir / "r" / "subset_k23.json").indices, sub.indices);
    auto const side = json::parse(slurp(dir / "r" / "recon_l2_k23.json"));
    EXPECT_EQ(side["lambda"], 0.01);
}

TEST_F(Cli, ReconstructCrossValidatesWithoutLambda)
{
    auto const d = synth("ds");
    auto const r = run("--out " + (dir / "r").string() + " reconstruct --data " + d.string()
                       + " --method cs --k-low 30");
    ASSERT_EQ(r.code, 0) << r.err;
    auto const side = json::parse(slurp(dir / "r" / "recon_cs_k30.json"));
    EXPECT_EQ(side["lambda_cv"]["grid"].size(), default_lambda_grid().size());
}

TEST_F(Cli, EvaluateExactAndZeroReconstructions)
{
    auto const d = synth("ds");
    fs::create_directories(dir / "rec");
    fs::copy_file(d / "test" / "signals.csv", dir / "rec" / "recon_l2_k30.csv");
    write_signal_matrix(Eigen::MatrixXd::Zero(20, 90), dir / "rec" / "recon_cs_k18.csv");
    auto const r = run("--out " + (dir / "ev").string() + " evaluate --data " + d.string()
                       + " --recon-dir " + (dir / "rec").string() + " --per-voxel");
    ASSERT_EQ(r.code, 0) << r.err;
    auto const rep = read_metrics_csv(dir / "ev" / "metrics.csv");
    ASSERT_EQ(rep.records.size(), 2u);
    EXPECT_EQ(rep.records[0].method, "l2");
    EXPECT_EQ(rep.records[0].max_nmse, 0.0);
    EXPECT_EQ(rep.records[0].avg_nmse, 0.0);
    EXPECT_EQ(rep.records[1].method, "cs");
    auto const per = read_signal_matrix(dir / "ev" / "nmse_cs_k18.csv");
    ASSERT_EQ(per.rows(), 20);
    for (Eigen::Index i = 0; i < 20; ++i)
        EXPECT_NEAR(per(i, 0), 1.0, 1e-15);
    EXPECT_TRUE(fs::exists(dir / "ev" / "odf_truth.csv"));
    EXPECT_TRUE(fs::exists(dir / "ev" / "odf_l2_k30.csv"));
}

TEST_F(Cli, EvaluateRowOrderAndFormats)
{
    auto const d = synth("ds");
    fs::create_directories(dir / "rec");
    Eigen::MatrixXd const truth = read_signal_matrix(d / "test" / "signals.csv");
    for (std::string m : {"cnn", "cs", "l2"})
        for (int k : {18, 30, 23})
            write_signal_matrix(truth * (1.0 + 0.01 * k), dir / "rec" / ("recon_" + m + "_k" + std::to_string(k) + ".csv"));
    auto const r = run("--out " + (dir / "ev").string() + " evaluate --data " + d.string()
                       + " --recon-dir " + (dir / "rec").string() + " --format json");
    ASSERT_EQ(r.code, 0) << r.err;
    auto const j = json::parse(slurp(dir / "ev" / "metrics.json"));
    ASSERT_EQ(j["records"].size(), 9u);
    std::vector<std::string> methods{"l2", "cs", "cnn"};
    std::vector<int> ks{30, 23, 18};
    for (std::size_t i = 0; i < 9; ++i)
    {
        EXPECT_EQ(j["records"][i]["method"], methods[i / 3]);
        EXPECT_EQ(j["records"][i]["k_low"], ks[i % 3]);
        double const expect = 0.01 * ks[i % 3] * 0.01 * ks[i % 3];
        EXPECT_NEAR(j["records"][i]["avg_nmse"].get<double>(), expect, 1e-12);
    }
}

TEST_F(Cli, EvaluateVoxelCountMismatch)
{
    auto const d = synth("ds");
    fs::create_directories(dir / "rec");
    write_signal_matrix(Eigen::MatrixXd::Ones(19, 90), dir / "rec" / "recon_l2_k30.csv");
    auto const r = run("--out " + (dir / "ev").string() + " evaluate --data " + d.string()
                       + " --recon-dir " + (dir / "rec").string());
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("19x90"), std::string::npos);
}

TEST_F(Cli, MissingInputsReported)
{
    auto const r = run("--out " + (dir / "t").string() + " train --data " + (dir / "none").string());
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find((dir / "none").string()), std::string::npos);
    auto const d = synth("ds");
    auto const c = run("--out " + (dir / "r").string() + " reconstruct --data " + d.string()
                       + " --method cnn --k-low 30 --checkpoint " + (dir / "nothing").string());
    EXPECT_NE(c.code, 0);
    EXPECT_NE(c.err.find("manifest.json"), std::string::npos);
}

TEST_F(Cli, TrainOneEpochThenResume)
{
    auto const d = synth("ds");
    auto const t = run("--out " + (dir / "m").string() + " train --data " + d.string()
                       + " --k-low 30 --epochs 1 --batch 16");
    ASSERT_EQ(t.code, 0) << t.err;
    auto const ckdir = dir / "m" / "cnn_k30";
    auto const ck = read_checkpoint<float>(ckdir);
    EXPECT_EQ(ck.state.epochs_done, 1u);
    EXPECT_EQ(ck.config.kernel, 9u);
    EXPECT_EQ(ck.config.encoder_channels, (std::vector<std::size_t>{400, 200, 100}));
    EXPECT_EQ(read_training_log(ckdir / "training_log.csv").size(), 1u);

    auto const res = run("--out " + (dir / "m2").string() + " train --data " + d.string()
                         + " --k-low 30 --epochs 3 --batch 16 --resume " + ckdir.string());
    ASSERT_EQ(res.code, 0) << res.err;
    auto const log = read_training_log(dir / "m2" / "cnn_k30" / "training_log.csv");
    ASSERT_EQ(log.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i)
        EXPECT_EQ(log[i].epoch, i);
    EXPECT_EQ(read_checkpoint<float>(dir / "m2" / "cnn_k30").state.epochs_done, 3u);

    // Reconstruction through the CLI equals inference through the library.
    auto const rec = run("--out " + (dir / "r").string() + " reconstruct --data " + d.string()
                         + " --method cnn --k-low 30 --checkpoint " + (dir / "m2").string());
    ASSERT_EQ(rec.code, 0) << rec.err;
    auto const final_ck = read_checkpoint<float>(dir / "m2" / "cnn_k30");
    auto const scheme = read_gradient_files(d / "bvecs", d / "bvals");
    InputBuilder const builder(scheme, final_ck.subset, final_ck.config.upsample);
    auto const noisy = read_signal_matrix(d / "test" / "signals_noisy.csv");
    auto const expected = infer_batch<float>(select_columns(noisy, final_ck.subset), builder,
                                             final_ck.state.params, final_ck.config);
    EXPECT_EQ(read_signal_matrix(dir / "r" / "recon_cnn_k30.csv"), expected);
}

TEST_F(Cli, TrainDoublePrecision)
{
    auto const d = synth("ds");
    auto const t = run("--precision f64 --out " + (dir / "m").string() + " train --data " + d.string()
                       + " --k-low 18 --epochs 1 --batch 32 --no-permute");
    ASSERT_EQ(t.code, 0) << t.err;
    auto const ck = read_checkpoint<double>(dir / "m" / "cnn_k18");
    EXPECT_FALSE(ck.config.permute);
    EXPECT_EQ(ck.config.k_low, 18u);
}

TEST_F(Cli, ExperimentMetricsReproducible)
{
    std::string const args = " experiment --methods l2,cs --k-low 30,18 --n-train 80 --n-test 20";
    ASSERT_EQ(run("--seed 3 --out " + (dir / "a").string() + args).code, 0);
    ASSERT_EQ(run("--seed 3 --threads 2 --out " + (dir / "b").string() + args).code, 0);
    auto const a = slurp(dir / "a" / "metrics.csv");
    EXPECT_FALSE(a.empty());
    EXPECT_EQ(a, slurp(dir / "b" / "metrics.csv"));
    EXPECT_EQ(slurp(dir / "a" / "metrics.json"), slurp(dir / "b" / "metrics.json"));
}

TEST_F(Cli, SelftestPasses)
{
    auto const r = run("selftest");
    EXPECT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("selftest passed"), std::string::npos);
    EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
}

TEST_F(Cli, InjectedConvFaultFailsWithNamedOp)
{
    auto const r = run("selftest-grad --inject-conv-fault");
    EXPECT_EQ(r.code, 3);
    EXPECT_NE(r.out.find("FAIL  conv1d"), std::string::npos);
    EXPECT_NE(r.out.find("selftest FAILED"), std::string::npos);
}
