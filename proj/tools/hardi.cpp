// hardi: synthetic data, CNN training, reconstruction and evaluation.
//
// Exit codes: 0 success, 1 validation or usage error, 2 runtime failure,
// 3 self-test failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "hardi/io.hpp"
#include "hardi/pipeline.hpp"
#include "hardi/selftest.hpp"

namespace fs = std::filesystem;
using namespace hardi;

namespace {

enum Exit
{
    kOk = 0,
    kValidation = 1,
    kRuntime = 2,
    kSelftest = 3
};

struct Globals
{
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    std::string precision = "f32";
    fs::path out = "hardi_out";
    bool quiet = false;
};

Globals g;

void info(std::string const& msg)
{
    if (!g.quiet)
        std::cerr << msg << '\n';
}

struct DatasetPaths
{
    fs::path root;
    fs::path bvecs() const { return root / "bvecs"; }
    fs::path bvals() const { return root / "bvals"; }
    fs::path clean(std::string const& split) const { return root / split / "signals.csv"; }
    fs::path noisy(std::string const& split) const { return root / split / "signals_noisy.csv"; }
    fs::path meta(std::string const& split) const { return root / split / "meta.json"; }
};

GradientScheme load_scheme(DatasetPaths const& d)
{
    return read_gradient_files(d.bvecs(), d.bvals());
}

void require_file(fs::path const& p)
{
    if (!fs::exists(p))
        throw IoError(p, "no such file");
}

std::string ksuffix(std::size_t k) { return "k" + std::to_string(k); }

//---------------------------------------------------------------------------//
// synth
//---------------------------------------------------------------------------//

struct SynthArgs
{
    std::size_t n_train = 8000;
    std::size_t n_test = 2000;
    std::size_t k = 90;
    double b = 2000;
    double sigma = 0.02;
    double min_angle = 30;
};

int cmd_synth(SynthArgs const& a)
{
    if (a.n_train < 1 || a.n_test < 1)
        throw UsageError("--n-train and --n-test must be at least 1");
    auto const scheme = fibonacci_hemisphere(a.k, a.b);
    FiberDistribution dist;
    dist.min_angle_deg = a.min_angle;
    ExperimentSeeds const seeds(g.seed);
    DatasetPaths const d{g.out};
    write_gradient_files(scheme, d.bvecs(), d.bvals());
    struct Split
    {
        char const* name;
        std::size_t n;
        std::uint64_t signal_seed, noise_seed;
    };
    for (auto const& s : {Split{"train", a.n_train, seeds.train_signal, seeds.train_noise},
                          Split{"test", a.n_test, seeds.test_signal, seeds.test_noise}})
    {
        NoiseConfig const noise{NoiseModel::rician, a.sigma, s.noise_seed};
        auto const ds = generate_dataset(s.n, scheme, dist, noise, s.signal_seed, g.threads);
        write_signal_matrix(ds.clean, d.clean(s.name));
        write_signal_matrix(ds.noisy, d.noisy(s.name));
        detail::write_text(d.meta(s.name),
                           dataset_metadata(ds, dist, noise, s.signal_seed).dump(2) + "\n");
        info(std::string(s.name) + ": " + std::to_string(s.n) + " voxels x " + std::to_string(a.k)
             + " directions, " + std::to_string(ds.clamp_events) + " clamped noise samples");
    }
    std::cout << "wrote dataset to " << g.out.string() << "\n";
    return kOk;
}

//---------------------------------------------------------------------------//
// train
//---------------------------------------------------------------------------//

struct TrainArgs
{
    fs::path data;
    std::vector<std::size_t> k_lows{30, 23, 18};
    std::size_t epochs = 300;
    std::size_t patience = 30;
    double lr = 1e-3;
    std::size_t batch = 500;
    double val_fraction = 0.1;
    bool no_permute = false;
    std::string upsample = "idw";
    std::string subset_strategy = "uniform-angular";
    std::string optimizer = "adam";
    std::optional<fs::path> resume;
};

template<class T>
void train_one(TrainArgs const& a, GradientScheme const& scheme, Eigen::MatrixXd const& noisy,
               Eigen::MatrixXd const& clean, std::size_t k_low)
{
    fs::path const dir = g.out / ("cnn_" + ksuffix(k_low));
    Checkpoint<T> ck;
    if (a.resume)
    {
        fs::path const from = a.k_lows.size() == 1 ? *a.resume : *a.resume / ("cnn_" + ksuffix(k_low));
        ck = read_checkpoint<T>(from);
        if (ck.config.k_low != k_low)
            throw ValidationError("checkpoint was trained for k_low=" + std::to_string(ck.config.k_low));
        ck.config.epochs = a.epochs;
        ck.config.patience = a.patience;
        info("resuming k_low=" + std::to_string(k_low) + " at epoch " + std::to_string(ck.state.epochs_done));
        if (fs::exists(from / "training_log.csv") && fs::absolute(from) != fs::absolute(dir))
        {
            fs::create_directories(dir);
            fs::copy_file(from / "training_log.csv", dir / "training_log.csv",
                          fs::copy_options::overwrite_existing);
        }
    }
    else
    {
        ck.config.k_high = scheme.size();
        ck.config.k_low = k_low;
        ck.config.epochs = a.epochs;
        ck.config.patience = a.patience;
        ck.config.lr = a.lr;
        ck.config.batch_size = a.batch;
        ck.config.val_fraction = a.val_fraction;
        ck.config.permute = !a.no_permute;
        ck.config.upsample = upsample_method_from_string(a.upsample);
        ck.config.subset_strategy = subset_strategy_from_string(a.subset_strategy);
        ck.config.subset_seed = mix_seed(g.seed, 3000 + k_low);
        ck.config.optimizer = optimizer_from_string(a.optimizer);
        ck.config.seed = mix_seed(g.seed, 1000 + k_low);
        ck.config.validate();
        ck.state.params = ModelParams<T>::init(ck.config, ck.config.seed);
        if (fs::exists(dir / "training_log.csv"))
            fs::remove(dir / "training_log.csv");
    }
    if (ck.config.k_high != scheme.size())
        throw ValidationError("checkpoint expects " + std::to_string(ck.config.k_high)
                              + " directions, dataset has " + std::to_string(scheme.size()));
    ck.subset = select_subset(scheme, k_low, ck.config.subset_strategy, ck.config.subset_seed);

    InputBuilder const builder(scheme, ck.subset, ck.config.upsample);
    TrainingSet const ts{select_columns(noisy, ck.subset), clean};
    std::size_t const start = ck.state.epochs_done;
    auto result = train<T>(ts, builder, ck.config, ck.state, [&](EpochLog const& e) {
        info("k_low=" + std::to_string(k_low) + " epoch " + std::to_string(e.epoch) + " train "
             + detail::format_double(e.train_nmse) + " val " + detail::format_double(e.val_nmse));
    });
    // Wall-clock column is kept relative to this invocation.
    append_training_log(dir / "training_log.csv", result.log);
    ck.metrics = {{"best_epoch", ck.state.best_epoch},
                  {"stopped_early", result.stopped_early},
                  {"epochs_run", ck.state.epochs_done - start}};
    if (!result.log.empty())
        ck.metrics["last_train_nmse"] = result.log.back().train_nmse;
    if (std::isfinite(ck.state.best_val))
        ck.metrics["best_val_nmse"] = ck.state.best_val;
    write_checkpoint(ck, dir);
    std::cout << "k_low=" << k_low << ": checkpoint " << dir.string() << " (epoch "
              << ck.state.epochs_done << ")\n";
}

int cmd_train(TrainArgs const& a)
{
    DatasetPaths const d{a.data};
    auto const scheme = load_scheme(d);
    auto const noisy = read_signal_matrix(d.noisy("train"));
    auto const clean = read_signal_matrix(d.clean("train"));
    if (noisy.rows() != clean.rows() || noisy.cols() != clean.cols())
        throw ValidationError("train/signals.csv and train/signals_noisy.csv differ in shape");
    if (static_cast<std::size_t>(clean.cols()) != scheme.size())
        throw ValidationError("signal matrix has " + std::to_string(clean.cols())
                              + " columns but the gradient table has " + std::to_string(scheme.size()));
    for (auto k : a.k_lows)
    {
        if (g.precision == "f64")
            train_one<double>(a, scheme, noisy, clean, k);
        else
            train_one<float>(a, scheme, noisy, clean, k);
    }
    return kOk;
}

//---------------------------------------------------------------------------//
// reconstruct
//---------------------------------------------------------------------------//

struct ReconArgs
{
    fs::path data;
    std::string method;
    std::vector<std::size_t> k_lows{30, 23, 18};
    std::string split = "test";
    std::optional<fs::path> checkpoint;
    std::optional<double> lambda;
    std::size_t max_iters = 2000;
    double tol = 1e-8;
    std::size_t tta_perms = 0;
    int max_order = 8;
    std::string subset_strategy = "uniform-angular";
};

void write_recon(Eigen::MatrixXd const& rec, std::string const& method, std::size_t k_low,
                 double seconds, json extra)
{
    fs::path const path = g.out / ("recon_" + method + "_" + ksuffix(k_low) + ".csv");
    write_signal_matrix(rec, path);
    extra["method"] = method;
    extra["k_low"] = k_low;
    extra["n_voxels"] = rec.rows();
    extra["seconds"] = seconds;
    fs::path side = path;
    side.replace_extension(".json");
    detail::write_text(side, extra.dump(2) + "\n");
    std::cout << method << " k_low=" << k_low << ": wrote " << path.string() << "\n";
}

template<class T>
Eigen::MatrixXd cnn_reconstruct(fs::path const& ckdir, GradientScheme const& scheme,
                                Eigen::MatrixXd const& full, std::size_t k_low, std::size_t tta,
                                SubsetSelection& used)
{
    auto const ck = read_checkpoint<T>(ckdir);
    if (ck.config.k_low != k_low)
        throw ValidationError("checkpoint " + ckdir.string() + " is for k_low="
                              + std::to_string(ck.config.k_low));
    used = ck.subset;
    InputBuilder const builder(scheme, ck.subset, ck.config.upsample);
    return infer_batch<T>(select_columns(full, ck.subset), builder, ck.state.params, ck.config, 500,
                          tta, mix_seed(g.seed, 0x77A));
}

int cmd_reconstruct(ReconArgs const& a)
{
    Method const method = method_from_string(a.method);
    DatasetPaths const d{a.data};
    auto const scheme = load_scheme(d);
    auto const full = read_signal_matrix(d.noisy(a.split));
    if (static_cast<std::size_t>(full.cols()) != scheme.size())
        throw ValidationError("signal matrix does not match the gradient table");
    std::optional<Eigen::MatrixXd> truth;
    if (fs::exists(d.clean(a.split)))
        truth = read_signal_matrix(d.clean(a.split));

    for (std::size_t k_low : a.k_lows)
    {
        auto const t0 = std::chrono::steady_clock::now();
        Eigen::MatrixXd rec;
        json extra = json::object();
        SubsetSelection subset;
        if (method == Method::cnn)
        {
            if (!a.checkpoint)
                throw UsageError("method cnn needs --checkpoint");
            fs::path ckdir = *a.checkpoint;
            if (!fs::exists(ckdir / "manifest.json"))
                ckdir /= "cnn_" + ksuffix(k_low);
            require_file(ckdir / "manifest.json");
            rec = g.precision == "f64"
                      ? cnn_reconstruct<double>(ckdir, scheme, full, k_low, a.tta_perms, subset)
                      : cnn_reconstruct<float>(ckdir, scheme, full, k_low, a.tta_perms, subset);
            extra["checkpoint"] = ckdir.string();
            extra["tta_perms"] = a.tta_perms;
        }
        else
        {
            auto const strategy = subset_strategy_from_string(a.subset_strategy);
            subset = select_subset(scheme, k_low, strategy, mix_seed(g.seed, 3000 + k_low));
            auto const dH = build_dictionary(scheme, BasisDescriptor::sh(a.max_order));
            auto const dL = restrict_dictionary(dH, subset);
            SolverMethod const sm = method == Method::cs ? SolverMethod::l1 : SolverMethod::l2;
            SolverConfig sc;
            sc.max_iters = static_cast<int>(a.max_iters);
            sc.tolerance = a.tol;
            if (a.lambda)
                sc.lambda = *a.lambda;
            else
            {
                require_file(d.noisy("train"));
                auto const tn = read_signal_matrix(d.noisy("train"));
                auto const tc = read_signal_matrix(d.clean("train"));
                auto const cv = select_lambda_cv(dL, dH, select_columns(tn, subset), tc, sm, sc,
                                                 default_lambda_grid(), 5, 500,
                                                 mix_seed(g.seed, 2000 + k_low), g.threads);
                sc.lambda = cv.best;
                extra["lambda_cv"] = {{"grid", cv.grid}, {"scores", cv.scores}};
                info(a.method + " k_low=" + std::to_string(k_low) + ": cross-validated lambda "
                     + detail::format_double(sc.lambda));
            }
            extra["lambda"] = sc.lambda;
            rec = reconstruct_batch(dL, dH, select_columns(full, subset), sc, sm, g.threads);
        }
        double const secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        write_subset(subset, g.out / ("subset_" + ksuffix(k_low) + ".json"));
        write_recon(rec, to_string(method), k_low, secs, extra);
        if (truth)
        {
            auto const r = summarize_nmse(to_string(method), k_low, nmse_rows(rec, *truth));
            std::cout << "  NMSE min " << detail::format_double(r.min_nmse) << " max "
                      << detail::format_double(r.max_nmse) << " avg "
                      << detail::format_double(r.avg_nmse) << " over " << r.n_voxels << " voxels\n";
        }
    }
    return kOk;
}

//---------------------------------------------------------------------------//
// evaluate
//---------------------------------------------------------------------------//

struct EvalArgs
{
    fs::path data;
    fs::path recon_dir;
    std::string split = "test";
    std::string format = "csv";
    bool per_voxel = false;
    bool record_timing = false;
    std::size_t odf_voxels = 10;
    int max_order = 8;
};

int cmd_evaluate(EvalArgs const& a)
{
    DatasetPaths const d{a.data};
    auto const scheme = load_scheme(d);
    auto const truth = read_signal_matrix(d.clean(a.split));
    auto const dH = build_dictionary(scheme, BasisDescriptor::sh(a.max_order));

    std::map<std::pair<int, long>, std::pair<std::string, fs::path>> found;
    std::regex const pat(R"(recon_(l2|cs|cnn)_k(\d+)\.csv)");
    if (!fs::is_directory(a.recon_dir))
        throw IoError(a.recon_dir, "not a directory");
    for (auto const& e : fs::directory_iterator(a.recon_dir))
    {
        std::smatch m;
        std::string const name = e.path().filename().string();
        if (std::regex_match(name, m, pat))
        {
            int const order = static_cast<int>(method_from_string(m[1]));
            long const k = std::stol(m[2]);
            found[{order, -k}] = {m[1], e.path()};
        }
    }
    if (found.empty())
        throw ValidationError("no recon_<method>_k<K>.csv files in " + a.recon_dir.string());

    MetricsReport report;
    std::size_t const n_odf = std::min<std::size_t>(a.odf_voxels, static_cast<std::size_t>(truth.rows()));
    if (n_odf > 0)
        write_signal_matrix(odf_coefficients(truth.topRows(static_cast<Eigen::Index>(n_odf)), dH),
                            g.out / "odf_truth.csv");
    for (auto const& [key, val] : found)
    {
        auto const& [method, path] = val;
        std::size_t const k_low = static_cast<std::size_t>(-key.second);
        auto const rec = read_signal_matrix(path);
        if (rec.rows() != truth.rows() || rec.cols() != truth.cols())
            throw ValidationError(path.string() + " has " + std::to_string(rec.rows()) + "x"
                                  + std::to_string(rec.cols()) + " values, ground truth has "
                                  + std::to_string(truth.rows()) + "x" + std::to_string(truth.cols()));
        Eigen::VectorXd const e = nmse_rows(rec, truth);
        double secs = 0;
        fs::path side = path;
        side.replace_extension(".json");
        if (a.record_timing && fs::exists(side))
            secs = json::parse(detail::read_text(side)).value("seconds", 0.0);
        report.records.push_back(summarize_nmse(method, k_low, e, secs));
        if (a.per_voxel)
            write_signal_matrix(e, g.out / ("nmse_" + method + "_" + ksuffix(k_low) + ".csv"));
        if (n_odf > 0)
            write_signal_matrix(odf_coefficients(rec.topRows(static_cast<Eigen::Index>(n_odf)), dH),
                                g.out / ("odf_" + method + "_" + ksuffix(k_low) + ".csv"));
    }
    bool const as_json = a.format == "json";
    fs::path const out = g.out / (as_json ? "metrics.json" : "metrics.csv");
    write_metrics_report(report, out, as_json ? ReportFormat::json : ReportFormat::csv);
    std::cout << metrics_to_csv(report);
    return kOk;
}

//---------------------------------------------------------------------------//
// experiment
//---------------------------------------------------------------------------//

struct ExperimentArgs
{
    ExperimentConfig cfg;
    std::vector<std::string> methods{"l2", "cs", "cnn"};
    bool no_permute = false;
};

int cmd_experiment(ExperimentArgs a)
{
    a.cfg.seed = g.seed;
    a.cfg.threads = g.threads;
    a.cfg.methods.clear();
    for (auto const& m : a.methods)
        a.cfg.methods.push_back(method_from_string(m));
    a.cfg.model.permute = !a.no_permute;
    a.cfg.validate();
    auto const data = make_experiment_data(a.cfg);
    ExperimentHooks hooks;
    hooks.message = info;
    hooks.epoch = [](std::size_t k, EpochLog const& e) {
        info("k_low=" + std::to_string(k) + " epoch " + std::to_string(e.epoch) + " train "
             + detail::format_double(e.train_nmse) + " val " + detail::format_double(e.val_nmse));
    };
    auto const result = run_experiment(a.cfg, data, hooks);
    write_metrics_report(result.report, g.out / "metrics.csv", ReportFormat::csv);
    write_metrics_report(result.report, g.out / "metrics.json", ReportFormat::json);
    std::cout << metrics_to_csv(result.report);
    return kOk;
}

//---------------------------------------------------------------------------//
// selftest
//---------------------------------------------------------------------------//

int report_checks(std::vector<selftest::CheckResult> const& checks)
{
    bool ok = true;
    for (auto const& c : checks)
    {
        std::printf("%s  %-36s %.3e < %.1e  (%s)\n", c.passed ? "PASS" : "FAIL", c.name.c_str(),
                    c.value, c.threshold, c.detail.c_str());
        ok = ok && c.passed;
    }
    std::printf("%s\n", ok ? "selftest passed" : "selftest FAILED");
    return ok ? kOk : kSelftest;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Angular super-resolution of single-shell diffusion MRI signals"};
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default();
    app.add_option("--seed", g.seed, "Master seed");
    app.add_option("--threads", g.threads, "Worker threads for voxel-parallel work")
        ->check(CLI::PositiveNumber);
    app.add_option("--precision", g.precision, "Network arithmetic")->check(CLI::IsMember({"f32", "f64"}));
    app.add_option("--out", g.out, "Output directory");
    app.add_flag("-q,--quiet", g.quiet, "Suppress progress messages");

    SynthArgs sa;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic train/test dataset");
    synth->add_option("--n-train", sa.n_train, "Training voxels");
    synth->add_option("--n-test", sa.n_test, "Test voxels");
    synth->add_option("--k", sa.k, "Directions in the full scheme");
    synth->add_option("--b", sa.b, "b-value (s/mm^2)");
    synth->add_option("--sigma", sa.sigma, "Rician noise level relative to b=0");
    synth->add_option("--min-angle", sa.min_angle, "Minimum crossing angle in degrees");

    TrainArgs ta;
    auto* trn = app.add_subcommand("train", "Train one network per k_low");
    trn->add_option("--data", ta.data, "Dataset directory written by synth")->required();
    trn->add_option("--k-low", ta.k_lows, "Reduced direction counts")->delimiter(',');
    trn->add_option("--epochs", ta.epochs, "Total epochs (resume continues up to this)");
    trn->add_option("--patience", ta.patience, "Early-stopping patience, 0 disables");
    trn->add_option("--lr", ta.lr, "Learning rate");
    trn->add_option("--batch", ta.batch, "Mini-batch size");
    trn->add_option("--val-fraction", ta.val_fraction, "Validation share of training voxels");
    trn->add_flag("--no-permute", ta.no_permute, "Keep the direction order fixed during training");
    trn->add_option("--upsample", ta.upsample)->check(CLI::IsMember({"nearest", "idw"}));
    trn->add_option("--subset-strategy", ta.subset_strategy)->check(CLI::IsMember({"uniform-angular", "random"}));
    trn->add_option("--optimizer", ta.optimizer)->check(CLI::IsMember({"adam", "sgd"}));
    trn->add_option("--resume", ta.resume, "Checkpoint directory to continue from");

    ReconArgs ra;
    auto* rec = app.add_subcommand("reconstruct", "Reconstruct full-scheme signals");
    rec->add_option("--data", ra.data, "Dataset directory")->required();
    rec->add_option("--method", ra.method, "l2, cs (alias l1) or cnn")->required();
    rec->add_option("--k-low", ra.k_lows, "Reduced direction counts")->delimiter(',');
    rec->add_option("--split", ra.split)->check(CLI::IsMember({"train", "test"}));
    rec->add_option("--checkpoint", ra.checkpoint, "Checkpoint directory (cnn)");
    rec->add_option("--lambda", ra.lambda, "Regularization weight; cross-validated when omitted");
    rec->add_option("--max-iters", ra.max_iters, "FISTA iteration cap");
    rec->add_option("--tol", ra.tol, "FISTA relative objective tolerance");
    rec->add_option("--tta-perms", ra.tta_perms, "Average the network over N input permutations");
    rec->add_option("--max-order", ra.max_order, "Spherical harmonic order");
    rec->add_option("--subset-strategy", ra.subset_strategy)->check(CLI::IsMember({"uniform-angular", "random"}));

    EvalArgs ea;
    auto* ev = app.add_subcommand("evaluate", "Summarize per-voxel NMSE of reconstructions");
    ev->add_option("--data", ea.data, "Dataset directory")->required();
    ev->add_option("--recon-dir", ea.recon_dir, "Directory of recon_<method>_k<K>.csv files")->required();
    ev->add_option("--split", ea.split)->check(CLI::IsMember({"train", "test"}));
    ev->add_option("--format", ea.format)->check(CLI::IsMember({"csv", "json"}));
    ev->add_flag("--per-voxel", ea.per_voxel, "Also write per-voxel NMSE");
    ev->add_flag("--record-timing", ea.record_timing, "Fill the seconds column from reconstruction sidecars");
    ev->add_option("--odf-voxels", ea.odf_voxels, "Voxels exported as ODF coefficients");
    ev->add_option("--max-order", ea.max_order, "Spherical harmonic order");

    ExperimentArgs xa;
    auto* ex = app.add_subcommand("experiment", "Run synth, train, reconstruct and evaluate in memory");
    ex->add_option("--k-low", xa.cfg.k_lows)->delimiter(',');
    ex->add_option("--methods", xa.methods)->delimiter(',');
    ex->add_option("--n-train", xa.cfg.n_train);
    ex->add_option("--n-test", xa.cfg.n_test);
    ex->add_option("--sigma", xa.cfg.sigma);
    ex->add_option("--epochs", xa.cfg.model.epochs);
    ex->add_option("--patience", xa.cfg.model.patience);
    ex->add_option("--lambda", xa.cfg.lambda);
    ex->add_flag("--no-permute", xa.no_permute);
    ex->add_flag("--record-timing", xa.cfg.record_timing);

    bool inject = false;
    auto* stg = app.add_subcommand("selftest-grad", "Finite-difference gradient checks (64-bit)");
    stg->add_flag("--inject-conv-fault", inject, "Corrupt the conv weight gradient (negative control)");
    auto* st = app.add_subcommand("selftest", "Gradient, adjoint and solver optimality checks (64-bit)");
    st->add_flag("--inject-conv-fault", inject, "Corrupt the conv weight gradient (negative control)");

    try
    {
        app.parse(argc, argv);
    }
    catch (CLI::ParseError const& e)
    {
        int const code = app.exit(e);
        return code == 0 ? kOk : kValidation;
    }

    try
    {
        if (*synth)
            return cmd_synth(sa);
        if (*trn)
            return cmd_train(ta);
        if (*rec)
            return cmd_reconstruct(ra);
        if (*ev)
            return cmd_evaluate(ea);
        if (*ex)
            return cmd_experiment(xa);
        if (*stg || *st)
        {
            testing::inject_conv_grad_fault = inject;
            selftest::GradCheckOptions opt;
            opt.seed = mix_seed(g.seed, 1);
            return report_checks(*st ? selftest::run_all(opt) : selftest::gradient_suite(opt));
        }
    }
    catch (UsageError const& e)
    {
        std::cerr << "usage error: " << e.what() << '\n';
        return kValidation;
    }
    catch (ValidationError const& e)
    {
        std::cerr << "error: " << e.what() << '\n';
        return kValidation;
    }
    catch (std::exception const& e)
    {
        std::cerr << "failed: " << e.what() << '\n';
        return kRuntime;
    }
    return kOk;
}
