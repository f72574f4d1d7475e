#ifndef SVBMC_TRANSFORMS_HPP
#define SVBMC_TRANSFORMS_HPP

#include <svbmc/common.hpp>

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace svbmc {

/// One coordinate of the original parameter space.
struct ParamDim {
    enum class Kind { unbounded, bounded, lower_bounded };
    Kind kind = Kind::unbounded;
    double lower = -kInf, upper = kInf;
    std::optional<double> plausible_lower, plausible_upper;
};

/// Maps original coordinates to an unbounded inference space. Each coordinate first goes through
/// logit (bounded), log (lower-bounded) or identity, then an affine map that sends the plausible
/// range to (-1, 1). Without a plausible range the affine part is the identity.
class ParamSpace {
public:
    ParamSpace() = default;
    explicit ParamSpace(std::vector<ParamDim> dims) : dims_(std::move(dims)) {
        for (std::size_t d = 0; d < dims_.size(); ++d) {
            const auto& p = dims_[d];
            if (p.kind == ParamDim::Kind::bounded && !(p.lower < p.upper))
                throw ConfigError("dimension " + std::to_string(d + 1) + ": lower bound must be below upper bound");
            if (p.kind == ParamDim::Kind::lower_bounded && !std::isfinite(p.lower))
                throw ConfigError("dimension " + std::to_string(d + 1) + ": lower bound must be finite");
            double c = 0.0, h = 1.0;
            if (p.plausible_lower && p.plausible_upper) {
                if (!(*p.plausible_lower < *p.plausible_upper))
                    throw ConfigError("dimension " + std::to_string(d + 1) + ": empty plausible range");
                if (!inside(p, *p.plausible_lower) || !inside(p, *p.plausible_upper))
                    throw ConfigError("dimension " + std::to_string(d + 1) + ": plausible range outside bounds");
                const double a = warp(p, *p.plausible_lower), b = warp(p, *p.plausible_upper);
                c = 0.5 * (a + b);
                h = 0.5 * (b - a);
            }
            centre_.push_back(c);
            half_.push_back(h);
        }
    }

    /// Identity map in D dimensions.
    static ParamSpace identity(int dim) { return ParamSpace(std::vector<ParamDim>(static_cast<std::size_t>(dim))); }

    int dim() const noexcept { return static_cast<int>(dims_.size()); }
    const std::vector<ParamDim>& dims() const noexcept { return dims_; }

    bool is_identity() const {
        for (std::size_t d = 0; d < dims_.size(); ++d)
            if (dims_[d].kind != ParamDim::Kind::unbounded || centre_[d] != 0.0 || half_[d] != 1.0) return false;
        return true;
    }

    Vector to_inference(const Eigen::Ref<const Vector>& x) const {
        check_dim(x.size());
        Vector u(x.size());
        for (Eigen::Index d = 0; d < x.size(); ++d) {
            const auto& p = dims_[static_cast<std::size_t>(d)];
            if (!std::isfinite(x(d)) || !inside(p, x(d)))
                throw InputError("coordinate " + std::to_string(d + 1) + " is on or outside its bounds");
            u(d) = (warp(p, x(d)) - centre_[static_cast<std::size_t>(d)]) / half_[static_cast<std::size_t>(d)];
        }
        return u;
    }

    Vector from_inference(const Eigen::Ref<const Vector>& u) const {
        check_dim(u.size());
        Vector x(u.size());
        for (Eigen::Index d = 0; d < u.size(); ++d) {
            const auto i = static_cast<std::size_t>(d);
            const double z = centre_[i] + half_[i] * u(d);
            const auto& p = dims_[i];
            switch (p.kind) {
            case ParamDim::Kind::unbounded: x(d) = z; break;
            case ParamDim::Kind::bounded: {
                const double s = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
                x(d) = p.lower + (p.upper - p.lower) * s;
                break;
            }
            case ParamDim::Kind::lower_bounded: x(d) = p.lower + std::exp(z); break;
            }
        }
        return x;
    }

    /// log |dx/du|, summed over coordinates.
    double log_jacobian(const Eigen::Ref<const Vector>& u) const {
        check_dim(u.size());
        double out = 0.0;
        for (Eigen::Index d = 0; d < u.size(); ++d) {
            const auto i = static_cast<std::size_t>(d);
            const double z = centre_[i] + half_[i] * u(d);
            const auto& p = dims_[i];
            out += std::log(half_[i]);
            if (p.kind == ParamDim::Kind::bounded) {
                // log sigma(z) + log(1 - sigma(z)) = -|z| - 2 log(1 + e^-|z|)
                out += std::log(p.upper - p.lower) - std::abs(z) - 2.0 * std::log1p(std::exp(-std::abs(z)));
            } else if (p.kind == ParamDim::Kind::lower_bounded) {
                out += z;
            }
        }
        return out;
    }

    nlohmann::json to_json() const {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& p : dims_) {
            nlohmann::json j;
            switch (p.kind) {
            case ParamDim::Kind::unbounded: j["kind"] = "unbounded"; break;
            case ParamDim::Kind::bounded: j["kind"] = "bounded"; break;
            case ParamDim::Kind::lower_bounded: j["kind"] = "lower_bounded"; break;
            }
            if (p.kind != ParamDim::Kind::unbounded) j["lower"] = p.lower;
            if (p.kind == ParamDim::Kind::bounded) j["upper"] = p.upper;
            if (p.plausible_lower) j["plausible_lower"] = *p.plausible_lower;
            if (p.plausible_upper) j["plausible_upper"] = *p.plausible_upper;
            arr.push_back(j);
        }
        return arr;
    }

    static ParamSpace from_json(const nlohmann::json& arr) {
        std::vector<ParamDim> dims;
        for (const auto& j : arr) {
            ParamDim p;
            const std::string kind = j.at("kind").get<std::string>();
            if (kind == "bounded") {
                p.kind = ParamDim::Kind::bounded;
                p.lower = j.at("lower").get<double>();
                p.upper = j.at("upper").get<double>();
            } else if (kind == "lower_bounded") {
                p.kind = ParamDim::Kind::lower_bounded;
                p.lower = j.at("lower").get<double>();
            } else if (kind != "unbounded") {
                throw ConfigError("unknown transform kind '" + kind + "'");
            }
            if (j.contains("plausible_lower")) p.plausible_lower = j["plausible_lower"].get<double>();
            if (j.contains("plausible_upper")) p.plausible_upper = j["plausible_upper"].get<double>();
            dims.push_back(p);
        }
        return ParamSpace(std::move(dims));
    }

private:
    std::vector<ParamDim> dims_;
    std::vector<double> centre_, half_;

    static bool inside(const ParamDim& p, double x) {
        switch (p.kind) {
        case ParamDim::Kind::bounded: return x > p.lower && x < p.upper;
        case ParamDim::Kind::lower_bounded: return x > p.lower;
        default: return true;
        }
    }

    static double warp(const ParamDim& p, double x) {
        switch (p.kind) {
        case ParamDim::Kind::bounded: {
            const double t = (x - p.lower) / (p.upper - p.lower);
            return std::log(t) - std::log1p(-t);
        }
        case ParamDim::Kind::lower_bounded: return std::log(x - p.lower);
        default: return x;
        }
    }

    void check_dim(Eigen::Index n) const {
        if (n != dim()) throw InputError("expected " + std::to_string(dim()) + " coordinates, got " + std::to_string(n));
    }
};

} // namespace svbmc

#endif
