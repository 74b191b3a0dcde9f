#pragma once

// Labelled design matrices: CSV ingestion, CSV writing, and the synthetic
// expression-like generator used when no data file is given.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fpep/error.hpp"
#include "fpep/linalg.hpp"
#include "fpep/rng.hpp"

namespace fpep::io {

struct Dataset {
    Matrix X;  // rows = samples, columns = features
    Vector y;  // labels +-1
    std::optional<std::vector<std::string>> feature_names;
    bool standardized = false;
    std::vector<std::string> warnings;
};

struct IngestOptions {
    char delimiter = ',';
    bool has_header = true;
    int label_column = -1;  // negative counts from the end
    bool standardize = false;
};

/// "%.17g": enough digits for an exact double round trip.
inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

namespace detail {

inline std::vector<std::string> split_fields(const std::string& line, char delim) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == delim) {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

inline std::string strip(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

inline double parse_field(const std::string& raw, std::size_t line, std::size_t column) {
    std::string f = strip(raw);
    if (!f.empty() && f.front() == '+') f.erase(0, 1);
    double v = 0.0;
    const auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
    if (f.empty() || ec != std::errc() || p != f.data() + f.size() || !std::isfinite(v)) {
        fail(ErrorCode::ParseError, "line " + std::to_string(line) + ", column " + std::to_string(column) +
                                        ": cannot parse '" + raw + "' as a finite number");
    }
    return v;
}

}  // namespace detail

inline double map_label(double v, std::size_t line) {
    if (v == 1.0) return 1.0;
    if (v == 0.0 || v == -1.0) return -1.0;
    fail(ErrorCode::UnmappableLabel, "line " + std::to_string(line) + ": label " + format_double(v) + " is not 0, -1 or 1");
}

/// Per-column standardization to mean 0 and (population) variance 1. Columns
/// with zero variance are removed and a warning is recorded.
inline void standardize_columns(Dataset& d) {
    std::vector<Eigen::Index> keep;
    for (Eigen::Index k = 0; k < d.X.cols(); ++k) {
        const double m = d.X.col(k).mean();
        const double var = (d.X.col(k).array() - m).square().mean();
        if (var > 0.0) {
            keep.push_back(k);
        } else {
            const std::string name = d.feature_names ? (*d.feature_names)[static_cast<std::size_t>(k)] : std::to_string(k);
            d.warnings.push_back("dropped zero-variance column " + name);
        }
    }
    Matrix x(d.X.rows(), static_cast<Eigen::Index>(keep.size()));
    std::vector<std::string> names;
    for (std::size_t j = 0; j < keep.size(); ++j) {
        const auto col = d.X.col(keep[j]);
        const double m = col.mean();
        const double sd = std::sqrt((col.array() - m).square().mean());
        x.col(static_cast<Eigen::Index>(j)) = ((col.array() - m) / sd).matrix();
        if (d.feature_names) names.push_back((*d.feature_names)[static_cast<std::size_t>(keep[j])]);
    }
    d.X = std::move(x);
    if (d.feature_names) d.feature_names = std::move(names);
    d.standardized = true;
}

inline Dataset parse_csv(std::istream& in, const IngestOptions& opt = {}) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> line_numbers;
    std::optional<std::vector<std::string>> header;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::strip(line).empty() || detail::strip(line) == "\r") continue;
        auto fields = detail::split_fields(line, opt.delimiter);
        if (opt.has_header && !header) {
            header = std::move(fields);
            continue;
        }
        rows.push_back(std::move(fields));
        line_numbers.push_back(lineno);
    }
    require(!rows.empty(), ErrorCode::ParseError, "no data rows");
    const std::size_t width = header ? header->size() : rows.front().size();
    require(width >= 2, ErrorCode::ParseError, "need at least one feature column and one label column");
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != width) {
            fail(ErrorCode::RaggedRows, "line " + std::to_string(line_numbers[r]) + " has " +
                                            std::to_string(rows[r].size()) + " fields, expected " + std::to_string(width));
        }
    }
    const long lc = opt.label_column < 0 ? static_cast<long>(width) + opt.label_column : opt.label_column;
    require(lc >= 0 && lc < static_cast<long>(width), ErrorCode::ParseError, "label column out of range");
    const auto label_col = static_cast<std::size_t>(lc);

    Dataset d;
    const auto n = static_cast<Eigen::Index>(rows.size());
    const auto k = static_cast<Eigen::Index>(width - 1);
    d.X.resize(n, k);
    d.y.resize(n);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        Eigen::Index col = 0;
        for (std::size_t c = 0; c < width; ++c) {
            const double v = detail::parse_field(rows[r][c], line_numbers[r], c + 1);
            if (c == label_col) {
                d.y(static_cast<Eigen::Index>(r)) = map_label(v, line_numbers[r]);
            } else {
                d.X(static_cast<Eigen::Index>(r), col++) = v;
            }
        }
    }
    if (header) {
        std::vector<std::string> names;
        for (std::size_t c = 0; c < width; ++c)
            if (c != label_col) names.push_back(detail::strip((*header)[c]));
        d.feature_names = std::move(names);
    }
    if (opt.standardize) standardize_columns(d);
    return d;
}

inline Dataset ingest_csv(const std::string& path, const IngestOptions& opt = {}) {
    std::ifstream f(path);
    if (!f) fail(ErrorCode::IoError, "cannot open " + path);
    return parse_csv(f, opt);
}

/// Writes features followed by a final `label` column, full precision.
inline void write_dataset_csv(const std::string& path, const Dataset& d, char delim = ',') {
    std::ofstream f(path);
    if (!f) fail(ErrorCode::IoError, "cannot write " + path);
    for (Eigen::Index k = 0; k < d.X.cols(); ++k) {
        f << (d.feature_names ? (*d.feature_names)[static_cast<std::size_t>(k)] : "x" + std::to_string(k)) << delim;
    }
    f << "label\n";
    for (Eigen::Index n = 0; n < d.X.rows(); ++n) {
        for (Eigen::Index k = 0; k < d.X.cols(); ++k) f << format_double(d.X(n, k)) << delim;
        f << (d.y(n) > 0 ? "1" : "-1") << '\n';
    }
    if (!f) fail(ErrorCode::IoError, "write failed for " + path);
}

/// Generic table writer: named columns of equal length, "%.17g".
inline void write_columns_csv(const std::string& path, const std::vector<std::string>& names,
                              const std::vector<Vector>& columns) {
    require(names.size() == columns.size() && !columns.empty(), ErrorCode::DimensionMismatch, "CSV column spec");
    const Eigen::Index rows = columns.front().size();
    for (const auto& c : columns) require(c.size() == rows, ErrorCode::DimensionMismatch, "CSV columns differ in length");
    std::ofstream f(path);
    if (!f) fail(ErrorCode::IoError, "cannot write " + path);
    for (std::size_t j = 0; j < names.size(); ++j) f << (j ? "," : "") << names[j];
    f << '\n';
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < columns.size(); ++j) f << (j ? "," : "") << format_double(columns[j](r));
        f << '\n';
    }
    if (!f) fail(ErrorCode::IoError, "write failed for " + path);
}

struct SyntheticSpec {
    Eigen::Index n = 256;     // samples
    Eigen::Index k = 512;     // features
    double rho = 0.1;         // fraction of active coefficients
    double x_scale = 0.0;     // standard deviation of X entries; 0 selects 1/sqrt(n)
    double noise_var = 1.0;
    bool probit = true;       // labels sign(Xw + e); otherwise y = Xw + e
    std::uint64_t seed = 0;
};

struct SyntheticData {
    Dataset data;
    Vector w;  // planted coefficients
};

/// X iid N(0, x_scale^2), x_scale = 1/sqrt(n) when unset;
/// w_k = b_k g_k with b_k ~ Bernoulli(rho), g_k ~ N(0, 1);
/// noise e ~ N(0, noise_var). Each piece draws from its own substream.
inline SyntheticData synthetic_dataset(const SyntheticSpec& s) {
    require(s.n >= 1 && s.k >= 1, ErrorCode::InvalidParameter, "synthetic sizes must be positive");
    require(s.rho > 0.0 && s.rho <= 1.0, ErrorCode::InvalidParameter, "rho must be in (0, 1]");
    require(s.x_scale >= 0.0 && s.noise_var > 0.0, ErrorCode::InvalidParameter, "scales must be nonnegative");
    const double x_scale = s.x_scale > 0.0 ? s.x_scale : 1.0 / std::sqrt(static_cast<double>(s.n));
    SyntheticData out;
    out.data.X.resize(s.n, s.k);
    rng::CounterRng gx(s.seed, rng::StreamTag::Synthetic, 0);
    for (Eigen::Index j = 0; j < s.k; ++j)
        for (Eigen::Index i = 0; i < s.n; ++i) out.data.X(i, j) = x_scale * gx.normal();
    rng::CounterRng gw(s.seed, rng::StreamTag::Synthetic, 1);
    out.w.resize(s.k);
    for (Eigen::Index j = 0; j < s.k; ++j) {
        const bool active = gw.uniform() < s.rho;
        const double g = gw.normal();
        out.w(j) = active ? g : 0.0;
    }
    rng::CounterRng ge(s.seed, rng::StreamTag::Synthetic, 2);
    const double sd = std::sqrt(s.noise_var);
    const Vector signal = out.data.X * out.w;
    out.data.y.resize(s.n);
    for (Eigen::Index i = 0; i < s.n; ++i) {
        const double v = signal(i) + sd * ge.normal();
        out.data.y(i) = s.probit ? (v >= 0.0 ? 1.0 : -1.0) : v;
    }
    return out;
}

}  // namespace fpep::io
