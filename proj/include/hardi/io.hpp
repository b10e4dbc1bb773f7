#pragma once

// File formats.
//
//   bvecs / bvals   FSL text tables (3 rows of K values / 1 row of K values)
//   *.csv matrix    header row of column indices, then one row per voxel,
//                   values written with 17 significant digits
//   *.bin matrix    raw little-endian float32, row-major, with a JSON
//                   sidecar {"rows", "cols", "dtype": "float32-le"}
//   subset.json     {parent_size, indices, strategy, seed}
//   checkpoint dir  manifest.json + one float32-le blob per parameter
//   metrics         CSV (method,k_low,min_nmse,max_nmse,avg_nmse,n_voxels,seconds)
//                   or JSON with the same records

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <Eigen/Dense>
#include "json.hpp"

#include "hardi/dictionary.hpp"
#include "hardi/errors.hpp"
#include "hardi/geometry.hpp"
#include "hardi/model.hpp"
#include "hardi/solvers.hpp"
#include "hardi/synth.hpp"

namespace hardi {

using json = nlohmann::json;
namespace fs = std::filesystem;

class IoError : public std::runtime_error
{
  public:
    IoError(fs::path const& path, std::string const& what)
        : std::runtime_error(path.string() + ": " + what)
    {
    }
};

namespace detail {

inline std::string read_text(fs::path const& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError(path, "cannot open for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text(fs::path const& path, std::string const& text)
{
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError(path, "cannot open for writing");
    out << text;
    if (!out)
        throw IoError(path, "write failed");
}

/// Shortest representation that round-trips to the same double.
inline std::string format_double(double v)
{
    if (std::isnan(v))
        return "nan";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

/// Fixed 17-significant-digit representation (matrix CSVs).
inline std::string format_double17(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline double parse_double(std::string_view tok, std::string const& file, std::size_t line,
                           std::size_t col)
{
    while (!tok.empty() && (tok.front() == ' ' || tok.front() == '\t'))
        tok.remove_prefix(1);
    while (!tok.empty() && (tok.back() == ' ' || tok.back() == '\t' || tok.back() == '\r'))
        tok.remove_suffix(1);
    if (!tok.empty() && tok.front() == '+')
        tok.remove_prefix(1);
    double v = 0;
    auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (tok.empty() || res.ec != std::errc{} || res.ptr != tok.data() + tok.size())
        throw ParseError(file, line, col, "not a number: '" + std::string(tok) + "'");
    return v;
}

inline std::vector<std::string_view> split_lines(std::string_view text)
{
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start <= text.size())
    {
        auto const end = text.find('\n', start);
        auto line = text.substr(start, end == std::string_view::npos ? text.size() - start
                                                                     : end - start);
        if (!line.empty() && line.back() == '\r')
            line.remove_suffix(1);
        lines.push_back(line);
        if (end == std::string_view::npos)
            break;
        start = end + 1;
    }
    while (!lines.empty() && lines.back().find_first_not_of(" \t") == std::string_view::npos)
        lines.pop_back();
    return lines;
}

inline std::vector<std::string_view> split_whitespace(std::string_view line)
{
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size())
    {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == ','))
            ++i;
        std::size_t const j = line.find_first_of(" \t,", i);
        std::size_t const end = j == std::string_view::npos ? line.size() : j;
        if (end > i)
            out.push_back(line.substr(i, end - i));
        i = end;
    }
    return out;
}

inline std::vector<std::string_view> split_csv(std::string_view line)
{
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;)
    {
        auto const j = line.find(',', start);
        out.push_back(line.substr(start, j == std::string_view::npos ? line.size() - start
                                                                     : j - start));
        if (j == std::string_view::npos)
            break;
        start = j + 1;
    }
    return out;
}

inline void put_f32_le(std::ostream& out, float v)
{
    auto const bits = std::bit_cast<std::uint32_t>(v);
    char bytes[4];
    for (int i = 0; i < 4; ++i)
        bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xffU);
    out.write(bytes, 4);
}

inline float get_f32_le(unsigned char const* p)
{
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i)
        bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return std::bit_cast<float>(bits);
}

}  // namespace detail

//---------------------------------------------------------------------------//
// GRADIENT TABLES
//---------------------------------------------------------------------------//

/// b-values below this count as b=0 acquisitions.
inline constexpr double kBZeroThreshold = 10.0;
/// Nonzero b-values within this relative spread form one shell.
inline constexpr double kShellTolerance = 0.05;

inline GradientScheme read_gradient_table(std::string const& bvecs_text,
                                          std::string const& bvals_text,
                                          std::string const& bvecs_name = "bvecs",
                                          std::string const& bvals_name = "bvals")
{
    auto const vec_lines = detail::split_lines(bvecs_text);
    std::vector<std::vector<double>> rows;
    for (std::size_t li = 0; li < vec_lines.size(); ++li)
    {
        auto const toks = detail::split_whitespace(vec_lines[li]);
        if (toks.empty())
            continue;
        std::vector<double> row;
        for (std::size_t c = 0; c < toks.size(); ++c)
            row.push_back(detail::parse_double(toks[c], bvecs_name, li + 1, c + 1));
        if (!rows.empty() && row.size() != rows.front().size())
            throw ParseError(bvecs_name, li + 1, row.size(),
                             "ragged row: " + std::to_string(row.size()) + " values, expected "
                                 + std::to_string(rows.front().size()));
        rows.push_back(std::move(row));
    }
    if (rows.size() != 3)
        throw ParseError(bvecs_name, rows.size(), 1,
                         "expected exactly 3 rows, found " + std::to_string(rows.size()));

    std::vector<double> bvals;
    std::size_t bval_rows = 0;
    auto const bval_lines = detail::split_lines(bvals_text);
    for (std::size_t li = 0; li < bval_lines.size(); ++li)
    {
        auto const toks = detail::split_whitespace(bval_lines[li]);
        if (toks.empty())
            continue;
        if (++bval_rows > 1)
            throw ParseError(bvals_name, li + 1, 1, "expected a single row of b-values");
        for (std::size_t c = 0; c < toks.size(); ++c)
            bvals.push_back(detail::parse_double(toks[c], bvals_name, li + 1, c + 1));
    }
    std::size_t const K = rows.front().size();
    if (bvals.size() != K)
        throw ParseError(bvals_name, 1, bvals.size(),
                         std::to_string(bvals.size()) + " b-values for " + std::to_string(K)
                             + " gradient columns");

    std::vector<Vec3> dirs;
    double shell = 0;
    double shell_sum = 0;
    for (std::size_t k = 0; k < K; ++k)
    {
        Vec3 v(rows[0][k], rows[1][k], rows[2][k]);
        double const n = v.norm();
        if (n < 1e-6 || bvals[k] < kBZeroThreshold)
            continue;
        if (shell == 0)
            shell = bvals[k];
        else if (std::abs(bvals[k] - shell) > kShellTolerance * shell)
            throw ParseError(bvals_name, 1, k + 1,
                             "multi-shell unsupported: b=" + detail::format_double(bvals[k])
                                 + " and b=" + detail::format_double(shell));
        shell_sum += bvals[k];
        dirs.push_back(v / n);
    }
    if (dirs.size() < kMinDirections)
        throw ValidationError(bvecs_name + ": only " + std::to_string(dirs.size())
                              + " usable diffusion directions (need "
                              + std::to_string(kMinDirections) + ")");
    double const bvalue = shell_sum / static_cast<double>(dirs.size());
    return {std::move(dirs), bvalue};
}

inline GradientScheme read_gradient_files(fs::path const& bvecs, fs::path const& bvals)
{
    return read_gradient_table(detail::read_text(bvecs), detail::read_text(bvals),
                               bvecs.string(), bvals.string());
}

inline void write_gradient_files(GradientScheme const& scheme, fs::path const& bvecs,
                                 fs::path const& bvals)
{
    std::string vecs;
    for (int a = 0; a < 3; ++a)
    {
        for (std::size_t k = 0; k < scheme.size(); ++k)
            vecs += (k ? " " : "") + detail::format_double17(scheme[k][a]);
        vecs += "\n";
    }
    std::string vals;
    for (std::size_t k = 0; k < scheme.size(); ++k)
        vals += (k ? " " : "") + detail::format_double(scheme.bvalue());
    vals += "\n";
    detail::write_text(bvecs, vecs);
    detail::write_text(bvals, vals);
}

//---------------------------------------------------------------------------//
// SIGNAL MATRICES
//---------------------------------------------------------------------------//

inline std::string signal_matrix_to_csv(Eigen::MatrixXd const& m)
{
    std::string out;
    out.reserve(static_cast<std::size_t>(m.size()) * 24 + 16);
    for (Eigen::Index c = 0; c < m.cols(); ++c)
        out += (c ? "," : "") + std::to_string(c);
    out += "\n";
    for (Eigen::Index r = 0; r < m.rows(); ++r)
    {
        for (Eigen::Index c = 0; c < m.cols(); ++c)
        {
            if (c)
                out += ',';
            out += detail::format_double17(m(r, c));
        }
        out += "\n";
    }
    return out;
}

inline Eigen::MatrixXd signal_matrix_from_csv(std::string const& text,
                                              std::string const& name = "<csv>")
{
    auto const lines = detail::split_lines(text);
    if (lines.empty())
        throw ParseError(name, 1, 1, "empty file");
    auto const header = detail::split_csv(lines[0]);
    std::size_t const cols = header.size();
    for (std::size_t c = 0; c < cols; ++c)
    {
        double const v = detail::parse_double(header[c], name, 1, c + 1);
        if (v != static_cast<double>(c))
            throw ParseError(name, 1, c + 1, "header must list column indices 0.."
                                                 + std::to_string(cols - 1));
    }
    if (lines.size() < 2)
        throw ParseError(name, 2, 1, "no data rows");
    Eigen::MatrixXd m(static_cast<Eigen::Index>(lines.size() - 1), static_cast<Eigen::Index>(cols));
    for (std::size_t li = 1; li < lines.size(); ++li)
    {
        auto const toks = detail::split_csv(lines[li]);
        if (toks.size() != cols)
            throw ParseError(name, li + 1, std::min(toks.size(), cols) + 1,
                             "ragged row: " + std::to_string(toks.size()) + " values, expected "
                                 + std::to_string(cols));
        for (std::size_t c = 0; c < cols; ++c)
        {
            double const v = detail::parse_double(toks[c], name, li + 1, c + 1);
            if (!std::isfinite(v))
                throw ParseError(name, li + 1, c + 1, "non-finite value");
            m(static_cast<Eigen::Index>(li - 1), static_cast<Eigen::Index>(c)) = v;
        }
    }
    return m;
}

inline void write_signal_matrix(Eigen::MatrixXd const& m, fs::path const& path)
{
    detail::write_text(path, signal_matrix_to_csv(m));
}

inline Eigen::MatrixXd read_signal_matrix(fs::path const& path)
{
    return signal_matrix_from_csv(detail::read_text(path), path.string());
}

/// Raw float32 little-endian matrix plus `<path>.json` shape sidecar.
inline void write_signal_matrix_bin(Eigen::MatrixXd const& m, fs::path const& path)
{
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError(path, "cannot open for writing");
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            detail::put_f32_le(out, static_cast<float>(m(r, c)));
    json side{{"rows", m.rows()}, {"cols", m.cols()}, {"dtype", "float32-le"}};
    detail::write_text(fs::path(path.string() + ".json"), side.dump(2) + "\n");
}

inline Eigen::MatrixXd read_signal_matrix_bin(fs::path const& path)
{
    auto const side = json::parse(detail::read_text(fs::path(path.string() + ".json")));
    if (side.value("dtype", "") != "float32-le")
        throw IoError(path, "unsupported dtype in sidecar");
    auto const rows = side.at("rows").get<Eigen::Index>();
    auto const cols = side.at("cols").get<Eigen::Index>();
    auto const bytes = detail::read_text(path);
    if (bytes.size() != static_cast<std::size_t>(rows * cols * 4))
        throw IoError(path, "size " + std::to_string(bytes.size()) + " does not match "
                                + std::to_string(rows) + "x" + std::to_string(cols)
                                + " float32 values");
    Eigen::MatrixXd m(rows, cols);
    auto const* p = reinterpret_cast<unsigned char const*>(bytes.data());
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c, p += 4)
            m(r, c) = detail::get_f32_le(p);
    return m;
}

/// Keep the measured columns of a full-scheme matrix.
inline Eigen::MatrixXd select_columns(Eigen::MatrixXd const& full, SubsetSelection const& subset)
{
    if (static_cast<std::size_t>(full.cols()) != subset.parent_size)
        throw ValidationError("matrix has " + std::to_string(full.cols())
                              + " columns, subset expects " + std::to_string(subset.parent_size));
    Eigen::MatrixXd out(full.rows(), static_cast<Eigen::Index>(subset.size()));
    for (std::size_t i = 0; i < subset.size(); ++i)
        out.col(static_cast<Eigen::Index>(i)) = full.col(static_cast<Eigen::Index>(subset.indices[i]));
    return out;
}

//---------------------------------------------------------------------------//
// SUBSETS AND DICTIONARIES
//---------------------------------------------------------------------------//

inline json to_json(SubsetSelection const& s)
{
    return {{"parent_size", s.parent_size},
            {"indices", s.indices},
            {"strategy", to_string(s.strategy)},
            {"seed", s.seed}};
}

inline SubsetSelection subset_from_json(json const& j)
{
    SubsetSelection s;
    s.parent_size = j.at("parent_size").get<std::size_t>();
    s.indices = j.at("indices").get<std::vector<std::size_t>>();
    s.strategy = subset_strategy_from_string(j.at("strategy").get<std::string>());
    s.seed = j.at("seed").get<std::uint64_t>();
    s.validate();
    return s;
}

inline void write_subset(SubsetSelection const& s, fs::path const& path)
{
    detail::write_text(path, to_json(s).dump(2) + "\n");
}

inline SubsetSelection read_subset(fs::path const& path)
{
    try
    {
        return subset_from_json(json::parse(detail::read_text(path)));
    }
    catch (json::exception const& e)
    {
        throw IoError(path, e.what());
    }
}

/// K x J CSV plus `<stem>.json` sidecar {family, max_order, scheme_hash}.
inline void write_dictionary(Dictionary const& d, fs::path const& csv_path)
{
    std::string out;
    for (Eigen::Index r = 0; r < d.matrix.rows(); ++r)
    {
        for (Eigen::Index c = 0; c < d.matrix.cols(); ++c)
            out += (c ? "," : "") + detail::format_double17(d.matrix(r, c));
        out += "\n";
    }
    detail::write_text(csv_path, out);
    json side{{"family", d.basis.family},
              {"max_order", d.basis.max_order},
              {"scheme_hash", d.scheme_hash},
              {"rows", d.matrix.rows()},
              {"cols", d.matrix.cols()}};
    fs::path side_path = csv_path;
    side_path.replace_extension(".json");
    detail::write_text(side_path, side.dump(2) + "\n");
}

//---------------------------------------------------------------------------//
// SOLVER REPORTS
//---------------------------------------------------------------------------//

inline json to_json(SolveReport const& r)
{
    return {{"coeffs", std::vector<double>(r.coeffs.data(), r.coeffs.data() + r.coeffs.size())},
            {"objective_trace", r.objective_trace},
            {"iterations", r.iterations},
            {"converged", r.converged}};
}

//---------------------------------------------------------------------------//
// METRICS
//---------------------------------------------------------------------------//

struct MetricsRecord
{
    std::string method;
    std::size_t k_low = 0;
    double min_nmse = 0;
    double max_nmse = 0;
    double avg_nmse = 0;
    std::size_t n_voxels = 0;
    double seconds = 0;
};

struct MetricsReport
{
    std::vector<MetricsRecord> records;

    void validate() const
    {
        if (records.empty())
            throw ValidationError("metrics report is empty");
        for (auto const& r : records)
        {
            if (!(r.min_nmse <= r.avg_nmse && r.avg_nmse <= r.max_nmse))
                throw ValidationError("metrics for " + r.method + " k_low="
                                      + std::to_string(r.k_low)
                                      + " violate min <= average <= max");
            if (r.n_voxels == 0)
                throw ValidationError("metrics record without voxels");
        }
    }
};

inline MetricsRecord summarize_nmse(std::string method, std::size_t k_low,
                                    Eigen::VectorXd const& per_voxel, double seconds = 0)
{
    if (per_voxel.size() == 0)
        throw ValidationError("no voxels to summarize");
    MetricsRecord r;
    r.method = std::move(method);
    r.k_low = k_low;
    r.min_nmse = per_voxel.minCoeff();
    r.max_nmse = per_voxel.maxCoeff();
    r.avg_nmse = per_voxel.mean();
    // Guard the invariant against summation rounding when all values are equal.
    r.avg_nmse = std::clamp(r.avg_nmse, r.min_nmse, r.max_nmse);
    r.n_voxels = static_cast<std::size_t>(per_voxel.size());
    r.seconds = seconds;
    return r;
}

inline std::string metrics_to_csv(MetricsReport const& report)
{
    report.validate();
    std::string out = "method,k_low,min_nmse,max_nmse,avg_nmse,n_voxels,seconds\n";
    for (auto const& r : report.records)
        out += r.method + "," + std::to_string(r.k_low) + "," + detail::format_double(r.min_nmse)
               + "," + detail::format_double(r.max_nmse) + "," + detail::format_double(r.avg_nmse)
               + "," + std::to_string(r.n_voxels) + "," + detail::format_double(r.seconds) + "\n";
    return out;
}

inline json metrics_to_json(MetricsReport const& report)
{
    report.validate();
    json rows = json::array();
    for (auto const& r : report.records)
        rows.push_back({{"method", r.method},
                        {"k_low", r.k_low},
                        {"min_nmse", r.min_nmse},
                        {"max_nmse", r.max_nmse},
                        {"avg_nmse", r.avg_nmse},
                        {"n_voxels", r.n_voxels},
                        {"seconds", r.seconds}});
    return {{"records", rows}};
}

enum class ReportFormat
{
    csv,
    json
};

inline void write_metrics_report(MetricsReport const& report, fs::path const& path,
                                 ReportFormat format)
{
    if (format == ReportFormat::csv)
        detail::write_text(path, metrics_to_csv(report));
    else
        detail::write_text(path, metrics_to_json(report).dump(2) + "\n");
}

inline MetricsReport read_metrics_csv(fs::path const& path)
{
    auto const text = detail::read_text(path);
    auto const lines = detail::split_lines(text);
    if (lines.empty())
        throw ParseError(path.string(), 1, 1, "empty file");
    MetricsReport report;
    for (std::size_t li = 1; li < lines.size(); ++li)
    {
        auto const t = detail::split_csv(lines[li]);
        if (t.size() != 7)
            throw ParseError(path.string(), li + 1, 1, "expected 7 fields");
        MetricsRecord r;
        r.method = std::string(t[0]);
        r.k_low = static_cast<std::size_t>(detail::parse_double(t[1], path.string(), li + 1, 2));
        r.min_nmse = detail::parse_double(t[2], path.string(), li + 1, 3);
        r.max_nmse = detail::parse_double(t[3], path.string(), li + 1, 4);
        r.avg_nmse = detail::parse_double(t[4], path.string(), li + 1, 5);
        r.n_voxels = static_cast<std::size_t>(detail::parse_double(t[5], path.string(), li + 1, 6));
        r.seconds = detail::parse_double(t[6], path.string(), li + 1, 7);
        report.records.push_back(r);
    }
    return report;
}

//---------------------------------------------------------------------------//
// DATASET METADATA
//---------------------------------------------------------------------------//

inline json to_json(FiberConfig const& f)
{
    json fibers = json::array();
    for (auto const& fb : f.fibers)
        fibers.push_back({{"weight", fb.weight},
                          {"orientation", {fb.orientation.x(), fb.orientation.y(), fb.orientation.z()}},
                          {"lambda_par", fb.lambda_par},
                          {"lambda_perp", fb.lambda_perp}});
    return fibers;
}

inline json to_json(FiberDistribution const& d)
{
    return {{"count_probs", d.count_probs},
            {"min_angle_deg", d.min_angle_deg},
            {"lambda_par", d.lambda_par},
            {"lambda_perp", d.lambda_perp},
            {"jitter", d.jitter},
            {"min_weight", d.min_weight},
            {"isotropic", d.isotropic}};
}

inline json dataset_metadata(Dataset const& d, FiberDistribution const& dist,
                             NoiseConfig const& noise, std::uint64_t seed)
{
    json voxels = json::array();
    for (std::size_t i = 0; i < d.size(); ++i)
        voxels.push_back({{"seed", d.voxel_seeds[i]}, {"fibers", to_json(d.fibers[i])}});
    return {{"n_voxels", d.size()},
            {"seed", seed},
            {"fiber_distribution", to_json(dist)},
            {"noise",
             {{"model", noise.model == NoiseModel::rician ? "rician" : "none"},
              {"sigma", noise.sigma},
              {"seed", noise.seed}}},
            {"clamp_events", d.clamp_events},
            {"voxels", voxels}};
}

//---------------------------------------------------------------------------//
// CHECKPOINTS
//---------------------------------------------------------------------------//

inline json to_json(ModelConfig const& c)
{
    return {{"k_high", c.k_high},
            {"k_low", c.k_low},
            {"encoder_channels", c.encoder_channels},
            {"strides", c.strides},
            {"kernel", c.kernel},
            {"upsample", to_string(c.upsample)},
            {"subset_strategy", to_string(c.subset_strategy)},
            {"subset_seed", c.subset_seed},
            {"permute", c.permute},
            {"lr", c.lr},
            {"batch_size", c.batch_size},
            {"epochs", c.epochs},
            {"patience", c.patience},
            {"val_fraction", c.val_fraction},
            {"optimizer", to_string(c.optimizer)},
            {"zero_init_last", c.zero_init_last},
            {"seed", c.seed}};
}

inline ModelConfig model_config_from_json(json const& j)
{
    ModelConfig c;
    c.k_high = j.at("k_high").get<std::size_t>();
    c.k_low = j.at("k_low").get<std::size_t>();
    c.encoder_channels = j.at("encoder_channels").get<std::vector<std::size_t>>();
    c.strides = j.at("strides").get<std::vector<std::size_t>>();
    c.kernel = j.at("kernel").get<std::size_t>();
    c.upsample = upsample_method_from_string(j.at("upsample").get<std::string>());
    c.subset_strategy = subset_strategy_from_string(j.at("subset_strategy").get<std::string>());
    c.subset_seed = j.at("subset_seed").get<std::uint64_t>();
    c.permute = j.at("permute").get<bool>();
    c.lr = j.at("lr").get<double>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.epochs = j.at("epochs").get<std::size_t>();
    c.patience = j.at("patience").get<std::size_t>();
    c.val_fraction = j.at("val_fraction").get<double>();
    c.optimizer = optimizer_from_string(j.at("optimizer").get<std::string>());
    c.zero_init_last = j.at("zero_init_last").get<bool>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

inline constexpr char const* kCheckpointFormat = "hardi-checkpoint-v1";

template<class T>
void write_blob(fs::path const& path, std::vector<T> const& values)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError(path, "cannot open for writing");
    for (T v : values)
        detail::put_f32_le(out, static_cast<float>(v));
    if (!out)
        throw IoError(path, "write failed");
}

template<class T>
std::vector<T> read_blob(fs::path const& path, std::size_t count)
{
    auto const bytes = detail::read_text(path);
    if (bytes.size() != count * 4)
        throw IoError(path, "expected " + std::to_string(count) + " float32 values, found "
                                + std::to_string(bytes.size()) + " bytes");
    std::vector<T> out(count);
    auto const* p = reinterpret_cast<unsigned char const*>(bytes.data());
    for (std::size_t i = 0; i < count; ++i, p += 4)
        out[i] = static_cast<T>(detail::get_f32_le(p));
    return out;
}

/// Everything stored in a checkpoint directory.
template<class T>
struct Checkpoint
{
    ModelConfig config;
    SubsetSelection subset;
    TrainingState<T> state;
    json metrics = json::object();
};

/*!
 * Write manifest.json plus one blob per parameter (and per Adam moment).
 *
 * The manifest is canonical (sorted keys, shortest round-trip numbers), so
 * write -> read -> write reproduces every file byte for byte.
 */
template<class T>
void write_checkpoint(Checkpoint<T> const& ck, fs::path const& dir)
{
    fs::create_directories(dir);
    auto const params = ck.state.params.all();
    auto const names = ck.state.params.names();
    json plist = json::array();
    for (std::size_t i = 0; i < params.size(); ++i)
    {
        std::string const file = names[i] + ".bin";
        write_blob(dir / file, params[i].values());
        plist.push_back({{"name", names[i]},
                         {"shape", params[i].shape()},
                         {"file", file},
                         {"dtype", "float32-le"}});
    }
    json adam = {{"step", ck.state.adam.step}, {"moments", json::array()}};
    if (ck.state.adam.m.size() == params.size())
        for (std::size_t i = 0; i < params.size(); ++i)
        {
            std::string const fm = names[i] + ".adam_m.bin";
            std::string const fv = names[i] + ".adam_v.bin";
            write_blob(dir / fm, ck.state.adam.m[i]);
            write_blob(dir / fv, ck.state.adam.v[i]);
            adam["moments"].push_back({{"m", fm}, {"v", fv}});
        }
    json manifest = {{"format", kCheckpointFormat},
                     {"config", to_json(ck.config)},
                     {"subset", to_json(ck.subset)},
                     {"seed", ck.config.seed},
                     {"epoch", ck.state.epochs_done},
                     {"best_epoch", ck.state.best_epoch},
                     {"best_val", std::isfinite(ck.state.best_val) ? json(ck.state.best_val) : json(nullptr)},
                     {"stale_epochs", ck.state.stale_epochs},
                     {"metrics", ck.metrics},
                     {"parameters", plist},
                     {"optimizer", adam}};
    detail::write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

template<class T>
Checkpoint<T> read_checkpoint(fs::path const& dir)
{
    json manifest;
    try
    {
        manifest = json::parse(detail::read_text(dir / "manifest.json"));
    }
    catch (json::exception const& e)
    {
        throw IoError(dir / "manifest.json", e.what());
    }
    if (manifest.value("format", "") != kCheckpointFormat)
        throw IoError(dir / "manifest.json", "not a hardi checkpoint");

    Checkpoint<T> ck;
    ck.config = model_config_from_json(manifest.at("config"));
    ck.subset = subset_from_json(manifest.at("subset"));
    ck.metrics = manifest.at("metrics");
    ck.state.epochs_done = manifest.at("epoch").get<std::size_t>();
    ck.state.best_epoch = manifest.at("best_epoch").get<std::size_t>();
    ck.state.best_val = manifest.at("best_val").is_null()
                            ? std::numeric_limits<double>::infinity()
                            : manifest.at("best_val").get<double>();
    ck.state.stale_epochs = manifest.at("stale_epochs").get<std::size_t>();

    // Rebuild the parameter structure from the config, then fill values.
    ck.state.params = ModelParams<T>::init(ck.config, 0);
    auto params = ck.state.params.all();
    auto const names = ck.state.params.names();
    auto const& plist = manifest.at("parameters");
    if (plist.size() != params.size())
        throw IoError(dir / "manifest.json", "parameter count does not match config");
    for (std::size_t i = 0; i < params.size(); ++i)
    {
        auto const& entry = plist[i];
        if (entry.at("name").get<std::string>() != names[i]
            || entry.at("shape").get<Shape>() != params[i].shape())
            throw IoError(dir / "manifest.json", "parameter " + names[i] + " does not match config");
        params[i].values() = read_blob<T>(dir / entry.at("file").get<std::string>(),
                                          params[i].values().size());
    }
    auto const& adam = manifest.at("optimizer");
    ck.state.adam.step = adam.at("step").get<std::uint64_t>();
    auto const& moments = adam.at("moments");
    if (moments.size() == params.size())
    {
        ck.state.adam.m.resize(params.size());
        ck.state.adam.v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i)
        {
            ck.state.adam.m[i] = read_blob<T>(dir / moments[i].at("m").get<std::string>(),
                                              params[i].values().size());
            ck.state.adam.v[i] = read_blob<T>(dir / moments[i].at("v").get<std::string>(),
                                              params[i].values().size());
        }
    }
    return ck;
}

//---------------------------------------------------------------------------//
// TRAINING LOG
//---------------------------------------------------------------------------//

inline constexpr char const* kTrainingLogHeader = "epoch,train_nmse,val_nmse,wall_seconds\n";

inline std::string training_log_row(EpochLog const& e)
{
    return std::to_string(e.epoch) + "," + detail::format_double(e.train_nmse) + ","
           + detail::format_double(e.val_nmse) + "," + detail::format_double(e.wall_seconds) + "\n";
}

/// Append rows to a training log, writing the header for a new file.
inline void append_training_log(fs::path const& path, std::vector<EpochLog> const& rows)
{
    bool const fresh = !fs::exists(path);
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::app);
    if (!out)
        throw IoError(path, "cannot open for writing");
    if (fresh)
        out << kTrainingLogHeader;
    for (auto const& r : rows)
        out << training_log_row(r);
}

inline std::vector<EpochLog> read_training_log(fs::path const& path)
{
    auto const text = detail::read_text(path);
    auto const lines = detail::split_lines(text);
    std::vector<EpochLog> out;
    for (std::size_t li = 1; li < lines.size(); ++li)
    {
        auto const t = detail::split_csv(lines[li]);
        if (t.size() != 4)
            throw ParseError(path.string(), li + 1, 1, "expected 4 fields");
        EpochLog e;
        e.epoch = static_cast<std::size_t>(detail::parse_double(t[0], path.string(), li + 1, 1));
        e.train_nmse = detail::parse_double(t[1], path.string(), li + 1, 2);
        e.val_nmse = t[2] == "nan" ? std::numeric_limits<double>::quiet_NaN()
                                   : detail::parse_double(t[2], path.string(), li + 1, 3);
        e.wall_seconds = detail::parse_double(t[3], path.string(), li + 1, 4);
        out.push_back(e);
    }
    return out;
}

}  // namespace hardi
