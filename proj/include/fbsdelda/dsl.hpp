#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "fbsdelda/errors.hpp"
#include "fbsdelda/grid_process.hpp"

namespace fbsdelda {

// Coefficient expressions for configuration files: a fixed vocabulary of
// argument selectors, linear maps, sums, scalar multiples and the tanh
// saturation. No general code execution; every expression carries a
// computable Lipschitz budget (product and sum rules over the known
// constants of the primitives).
class CoefficientExpr {
public:
    using Args = std::map<std::string, const Matrix*>;

    static CoefficientExpr parse(const nlohmann::json& j) {
        if (!j.is_object() || !j.contains("op"))
            throw UnknownPrimitive("coefficient expression must be an object with 'op'");
        const std::string op = j.at("op").get<std::string>();
        CoefficientExpr e;
        if (op == "select") {
            e.kind_ = Kind::select;
            e.name_ = j.at("name").get<std::string>();
        } else if (op == "const") {
            e.kind_ = Kind::constant;
            e.value_ = parse_vector(j.at("value"));
        } else if (op == "time") {
            e.kind_ = Kind::time;
        } else if (op == "linear") {
            e.kind_ = Kind::linear;
            e.matrix_ = parse_matrix(j.at("matrix"));
            e.children_.push_back(parse(j.at("arg")));
        } else if (op == "scale") {
            e.kind_ = Kind::scale;
            e.factor_ = j.at("c").get<double>();
            e.children_.push_back(parse(j.at("arg")));
        } else if (op == "sum") {
            e.kind_ = Kind::sum;
            for (const auto& term : j.at("terms")) e.children_.push_back(parse(term));
            if (e.children_.empty())
                throw UnknownPrimitive("sum needs at least one term");
        } else if (op == "tanh") {
            e.kind_ = Kind::tanh_fn;
            e.children_.push_back(parse(j.at("arg")));
        } else {
            throw UnknownPrimitive("unknown coefficient primitive: " + op);
        }
        return e;
    }

    Matrix eval(const Args& args, Eigen::Index paths, double t) const {
        switch (kind_) {
            case Kind::select: {
                auto it = args.find(name_);
                if (it == args.end() || it->second == nullptr)
                    throw UnknownPrimitive("unknown argument selector: " + name_);
                return *it->second;
            }
            case Kind::constant:
                return value_.transpose().replicate(paths, 1);
            case Kind::time:
                return Matrix::Constant(paths, 1, t);
            case Kind::linear:
                return children_[0].eval(args, paths, t) * matrix_.transpose();
            case Kind::scale:
                return factor_ * children_[0].eval(args, paths, t);
            case Kind::sum: {
                Matrix acc = children_[0].eval(args, paths, t);
                for (std::size_t i = 1; i < children_.size(); ++i)
                    acc += children_[i].eval(args, paths, t);
                return acc;
            }
            case Kind::tanh_fn:
                return children_[0].eval(args, paths, t).array().tanh().matrix();
        }
        throw UnknownPrimitive("corrupt expression");
    }

    // Upper bound for the joint Lipschitz constant in the state selectors.
    double lipschitz() const {
        switch (kind_) {
            case Kind::select: return 1.0;
            case Kind::constant:
            case Kind::time: return 0.0;
            case Kind::linear: {
                Eigen::JacobiSVD<Matrix> svd(matrix_);
                return svd.singularValues()(0) * children_[0].lipschitz();
            }
            case Kind::scale: return std::abs(factor_) * children_[0].lipschitz();
            case Kind::sum: {
                double acc = 0.0;
                for (const auto& c : children_) acc += c.lipschitz();
                return acc;
            }
            case Kind::tanh_fn: return children_[0].lipschitz();
        }
        return 0.0;
    }

private:
    enum class Kind { select, constant, time, linear, scale, sum, tanh_fn };

    static Vector parse_vector(const nlohmann::json& j) {
        if (j.is_number()) {
            Vector v(1);
            v(0) = j.get<double>();
            return v;
        }
        if (j.is_array()) {
            Vector v(static_cast<Eigen::Index>(j.size()));
            for (std::size_t i = 0; i < j.size(); ++i)
                v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
            return v;
        }
        throw UnknownPrimitive("const value must be a number or array");
    }

    static Matrix parse_matrix(const nlohmann::json& j) {
        if (j.is_number()) {
            Matrix m(1, 1);
            m(0, 0) = j.get<double>();
            return m;
        }
        if (j.is_array() && !j.empty() && j[0].is_array()) {
            Matrix m(static_cast<Eigen::Index>(j.size()),
                     static_cast<Eigen::Index>(j[0].size()));
            for (std::size_t r = 0; r < j.size(); ++r) {
                if (j[r].size() != j[0].size())
                    throw UnknownPrimitive("ragged matrix literal");
                for (std::size_t c = 0; c < j[r].size(); ++c)
                    m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                        j[r][c].get<double>();
            }
            return m;
        }
        throw UnknownPrimitive("matrix literal must be a number or array of arrays");
    }

    Kind kind_ = Kind::constant;
    std::string name_;
    Vector value_ = Vector::Zero(1);
    Matrix matrix_;
    double factor_ = 1.0;
    std::vector<CoefficientExpr> children_;
};

} // namespace fbsdelda
