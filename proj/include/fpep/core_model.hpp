#pragma once

// Problem definition and EP state shared by the diagonal and scalar solvers.
//
// The model is p(w) p(y | z) with z = X w. Each Gaussian site is stored in
// natural parameters: a linear term gamma and a precision Lambda, which is a
// diagonal (one entry per coordinate) or a single scalar.

#include <cmath>
#include <string>
#include <utility>
#include <variant>

#include <nlohmann/json.hpp>

#include "fpep/error.hpp"
#include "fpep/linalg.hpp"

namespace fpep {

struct GaussianPrior {
    double mean = 0.0;
    double var = 1.0;
};

struct SpikeSlabPrior {
    double rho = 0.5;
    double slab_var = 1.0;
};

using PriorSpec = std::variant<GaussianPrior, SpikeSlabPrior>;

struct GaussianLikelihood {
    double noise_var = 1.0;
};

struct ProbitLikelihood {
    double noise_var = 1.0;
};

using LikelihoodSpec = std::variant<GaussianLikelihood, ProbitLikelihood>;

struct GlmProblem {
    Matrix X;
    Vector y;
    PriorSpec prior = GaussianPrior{};
    LikelihoodSpec likelihood = GaussianLikelihood{};

    Eigen::Index N() const noexcept { return X.rows(); }
    Eigen::Index K() const noexcept { return X.cols(); }
    double alpha() const noexcept { return static_cast<double>(X.rows()) / static_cast<double>(X.cols()); }
};

inline const GlmProblem& validate_problem(const GlmProblem& p) {
    require(p.X.rows() >= 1 && p.X.cols() >= 1, ErrorCode::DimensionMismatch, "design matrix must be non-empty");
    require(p.y.size() == p.X.rows(), ErrorCode::DimensionMismatch,
            "y has length " + std::to_string(p.y.size()) + " but X has " + std::to_string(p.X.rows()) + " rows");
    require(p.X.allFinite(), ErrorCode::NonFinite, "X contains NaN or Inf");
    require(p.y.allFinite(), ErrorCode::NonFinite, "y contains NaN or Inf");
    if (const auto* g = std::get_if<GaussianPrior>(&p.prior)) {
        require(std::isfinite(g->mean), ErrorCode::NonFinite, "prior mean");
        require(g->var > 0.0 && std::isfinite(g->var), ErrorCode::InvalidParameter, "prior variance must be positive");
    } else {
        const auto& s = std::get<SpikeSlabPrior>(p.prior);
        require(s.rho > 0.0 && s.rho <= 1.0, ErrorCode::InvalidParameter, "rho must be in (0, 1]");
        require(s.slab_var > 0.0 && std::isfinite(s.slab_var), ErrorCode::InvalidParameter, "slab variance must be positive");
    }
    const double noise = std::visit([](const auto& l) { return l.noise_var; }, p.likelihood);
    require(noise > 0.0 && std::isfinite(noise), ErrorCode::InvalidParameter, "noise variance must be positive");
    if (std::holds_alternative<ProbitLikelihood>(p.likelihood)) {
        for (Eigen::Index i = 0; i < p.y.size(); ++i) {
            require(p.y(i) == 1.0 || p.y(i) == -1.0, ErrorCode::InvalidParameter, "probit labels must be +1 or -1");
        }
    }
    return p;
}

inline double noise_variance(const GlmProblem& p) {
    return std::visit([](const auto& l) { return l.noise_var; }, p.likelihood);
}

enum class Flavor { Diagonal, Scalar };

/// Site precision: a diagonal vector or a scalar multiple of the identity.
class DiagOrScalar {
public:
    DiagOrScalar() = default;
    DiagOrScalar(double s) : value_(s) {}             // NOLINT(google-explicit-constructor)
    DiagOrScalar(Vector d) : value_(std::move(d)) {}  // NOLINT(google-explicit-constructor)

    bool is_scalar() const noexcept { return std::holds_alternative<double>(value_); }
    double scalar() const { return std::get<double>(value_); }
    double& scalar() { return std::get<double>(value_); }
    const Vector& diag() const { return std::get<Vector>(value_); }
    Vector& diag() { return std::get<Vector>(value_); }

    double at(Eigen::Index i) const { return is_scalar() ? scalar() : diag()(i); }

    Vector expand(Eigen::Index n) const {
        if (is_scalar()) return Vector::Constant(n, scalar());
        require(diag().size() == n, ErrorCode::DimensionMismatch, "diagonal length mismatch");
        return diag();
    }

    friend bool operator==(const DiagOrScalar& a, const DiagOrScalar& b) {
        if (a.is_scalar() != b.is_scalar()) return false;
        if (a.is_scalar()) return a.scalar() == b.scalar();
        return a.diag().size() == b.diag().size() && a.diag() == b.diag();
    }

private:
    std::variant<double, Vector> value_ = 1.0;
};

struct EpState {
    Vector gamma1w, gamma1z, gamma2w, gamma2z;
    DiagOrScalar lambda1w, lambda1z, lambda2w, lambda2z;
    // Tilted moments (per coordinate).
    Vector eta_w, chi_w, eta_z, chi_z;
    // Moments of the Gaussian projection.
    Vector mu, sigma_diag;

    Flavor flavor() const { return lambda1w.is_scalar() ? Flavor::Scalar : Flavor::Diagonal; }
};

struct PosteriorSummary {
    Vector mean_w, var_w, mean_z, var_z;
    int iterations = 0;
    bool converged = false;
    double residual = 0.0;
};

inline PosteriorSummary summarize(const EpState& s, int iterations, bool converged, double residual) {
    return {s.eta_w, s.chi_w, s.eta_z, s.chi_z, iterations, converged, residual};
}

struct InitConfig {
    double lambda1_init = 1.0;
    double lambda2_init = 1.0;
};

// ---------------------------------------------------------------------------
// JSON. Doubles are written with round-trip precision, so a serialize /
// parse cycle is bit exact for finite values.

inline nlohmann::json vector_to_json(const Vector& v) {
    nlohmann::json a = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

inline Vector vector_from_json(const nlohmann::json& j) {
    require(j.is_array(), ErrorCode::ParseError, "expected a JSON array");
    Vector v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
    return v;
}

inline nlohmann::json to_json(const DiagOrScalar& d) {
    return d.is_scalar() ? nlohmann::json(d.scalar()) : vector_to_json(d.diag());
}

inline DiagOrScalar diag_or_scalar_from_json(const nlohmann::json& j) {
    if (j.is_number()) return DiagOrScalar(j.get<double>());
    return DiagOrScalar(vector_from_json(j));
}

inline nlohmann::json to_json(const EpState& s) {
    return {
        {"gamma1w", vector_to_json(s.gamma1w)}, {"gamma1z", vector_to_json(s.gamma1z)},
        {"gamma2w", vector_to_json(s.gamma2w)}, {"gamma2z", vector_to_json(s.gamma2z)},
        {"lambda1w", to_json(s.lambda1w)},      {"lambda1z", to_json(s.lambda1z)},
        {"lambda2w", to_json(s.lambda2w)},      {"lambda2z", to_json(s.lambda2z)},
        {"eta_w", vector_to_json(s.eta_w)},     {"chi_w", vector_to_json(s.chi_w)},
        {"eta_z", vector_to_json(s.eta_z)},     {"chi_z", vector_to_json(s.chi_z)},
        {"mu", vector_to_json(s.mu)},           {"sigma_diag", vector_to_json(s.sigma_diag)},
    };
}

inline EpState ep_state_from_json(const nlohmann::json& j) {
    try {
        EpState s;
        s.gamma1w = vector_from_json(j.at("gamma1w"));
        s.gamma1z = vector_from_json(j.at("gamma1z"));
        s.gamma2w = vector_from_json(j.at("gamma2w"));
        s.gamma2z = vector_from_json(j.at("gamma2z"));
        s.lambda1w = diag_or_scalar_from_json(j.at("lambda1w"));
        s.lambda1z = diag_or_scalar_from_json(j.at("lambda1z"));
        s.lambda2w = diag_or_scalar_from_json(j.at("lambda2w"));
        s.lambda2z = diag_or_scalar_from_json(j.at("lambda2z"));
        s.eta_w = vector_from_json(j.at("eta_w"));
        s.chi_w = vector_from_json(j.at("chi_w"));
        s.eta_z = vector_from_json(j.at("eta_z"));
        s.chi_z = vector_from_json(j.at("chi_z"));
        s.mu = vector_from_json(j.at("mu"));
        s.sigma_diag = vector_from_json(j.at("sigma_diag"));
        return s;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::ParseError, std::string("EpState JSON: ") + e.what());
    }
}

inline nlohmann::json to_json(const PosteriorSummary& p) {
    return {
        {"mean_w", vector_to_json(p.mean_w)}, {"var_w", vector_to_json(p.var_w)},
        {"mean_z", vector_to_json(p.mean_z)}, {"var_z", vector_to_json(p.var_z)},
        {"iterations", p.iterations},         {"converged", p.converged},
        {"residual", p.residual},
    };
}

inline PosteriorSummary posterior_summary_from_json(const nlohmann::json& j) {
    try {
        PosteriorSummary p;
        p.mean_w = vector_from_json(j.at("mean_w"));
        p.var_w = vector_from_json(j.at("var_w"));
        p.mean_z = vector_from_json(j.at("mean_z"));
        p.var_z = vector_from_json(j.at("var_z"));
        p.iterations = j.at("iterations").get<int>();
        p.converged = j.at("converged").get<bool>();
        p.residual = j.at("residual").get<double>();
        return p;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::ParseError, std::string("PosteriorSummary JSON: ") + e.what());
    }
}

}  // namespace fpep
