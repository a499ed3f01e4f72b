#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "fbsdelda/absdel.hpp"
#include "fbsdelda/coupled.hpp"
#include "fbsdelda/dsl.hpp"
#include "fbsdelda/errors.hpp"
#include "fbsdelda/levy_model.hpp"
#include "fbsdelda/lq.hpp"
#include "fbsdelda/monotonicity.hpp"
#include "fbsdelda/noise.hpp"
#include "fbsdelda/regression.hpp"
#include "fbsdelda/riccati.hpp"
#include "fbsdelda/sdedl.hpp"
#include "fbsdelda/time_grid.hpp"
#include "fbsdelda/verify.hpp"
#include "fbsdelda/version.hpp"

namespace fbsdelda {

using json = nlohmann::ordered_json;

namespace expcfg {

inline const json& require(const json& j, const std::string& field) {
    if (!j.contains(field)) throw ConfigError("missing config field: " + field);
    return j.at(field);
}

inline double number(const json& j, const std::string& field) {
    const json& v = require(j, field);
    if (!v.is_number()) throw ConfigError("config field must be numeric: " + field);
    return v.get<double>();
}

inline long long integer(const json& j, const std::string& field) {
    const json& v = require(j, field);
    if (!v.is_number_integer())
        throw ConfigError("config field must be an integer: " + field);
    return v.get<long long>();
}

inline Matrix matrix(const json& j, Eigen::Index rows, Eigen::Index cols,
                     const std::string& field) {
    if (j.is_number()) {
        if (rows != 1 || cols != 1)
            throw ConfigError("config field must be a matrix: " + field);
        return Matrix::Constant(1, 1, j.get<double>());
    }
    if (!j.is_array() || j.empty() || !j[0].is_array())
        throw ConfigError("config field must be a matrix literal: " + field);
    if (static_cast<Eigen::Index>(j.size()) != rows ||
        static_cast<Eigen::Index>(j[0].size()) != cols)
        throw ConfigError("config field has wrong shape: " + field);
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c)
            m(r, c) = j[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)]
                          .get<double>();
    return m;
}

inline std::vector<Vector> samples(const json& j, int count, Eigen::Index dim,
                                   const std::string& field) {
    std::vector<Vector> out;
    if (j.is_number()) {
        out.assign(static_cast<std::size_t>(count),
                   Vector::Constant(dim, j.get<double>()));
        return out;
    }
    if (!j.is_array() || static_cast<int>(j.size()) != count)
        throw ConfigError("config field needs lag_steps+1 samples: " + field);
    for (const auto& item : j) {
        Vector v(dim);
        if (item.is_number() && dim == 1)
            v(0) = item.get<double>();
        else if (item.is_array() && static_cast<Eigen::Index>(item.size()) == dim)
            for (Eigen::Index c = 0; c < dim; ++c)
                v(c) = item[static_cast<std::size_t>(c)].get<double>();
        else
            throw ConfigError("bad sample in config field: " + field);
        out.push_back(std::move(v));
    }
    return out;
}

} // namespace expcfg

struct ExperimentSetup {
    LevyModel model;
    int basis_order = 3;
    TimeGrid grid;
    Eigen::Index n_paths = 0;
    std::uint64_t seed = 0;
    int engine_degree = 2;
    int workers = 0;
    std::string task;
    json payload;
};

inline ExperimentSetup parse_config(const json& config) {
    ExperimentSetup s;
    const json& model = expcfg::require(config, "model");
    s.model.drift = model.contains("drift") ? expcfg::number(model, "drift") : 0.0;
    s.model.diffusion = expcfg::number(model, "diffusion");
    if (model.contains("jumps")) {
        const json& jumps = model.at("jumps");
        s.model.jumps.intensity = expcfg::number(jumps, "intensity");
        if (jumps.contains("atoms"))
            for (const auto& a : jumps.at("atoms"))
                s.model.jumps.atoms.push_back(
                    {expcfg::number(a, "size"), expcfg::number(a, "prob")});
    }
    try {
        s.model.validate();
    } catch (const Error& e) {
        throw ConfigError(std::string("model: ") + e.what());
    }

    s.basis_order = static_cast<int>(expcfg::integer(config, "basis_order"));
    if (s.basis_order < 1) throw ConfigError("basis_order must be >= 1");

    const json& grid = expcfg::require(config, "grid");
    s.grid.horizon = expcfg::number(grid, "horizon");
    s.grid.n_steps = static_cast<int>(expcfg::integer(grid, "n_steps"));
    s.grid.lag_steps = static_cast<int>(expcfg::integer(grid, "lag_steps"));
    try {
        s.grid.validate();
    } catch (const Error& e) {
        throw ConfigError(std::string("grid: ") + e.what());
    }

    long long paths = expcfg::integer(config, "n_paths");
    if (paths < 1) throw ConfigError("n_paths must be >= 1");
    s.n_paths = static_cast<Eigen::Index>(paths);

    if (!config.contains("seed")) throw ConfigError("missing config field: seed");
    s.seed = static_cast<std::uint64_t>(expcfg::integer(config, "seed"));

    if (config.contains("engine")) {
        const json& engine = config.at("engine");
        s.engine_degree = static_cast<int>(expcfg::integer(engine, "degree"));
        if (s.engine_degree < 0) throw ConfigError("engine.degree must be >= 0");
    }
    if (config.contains("workers"))
        s.workers = static_cast<int>(expcfg::integer(config, "workers"));

    const json& task = expcfg::require(config, "task");
    if (!task.is_string()) throw ConfigError("task must be a string");
    s.task = task.get<std::string>();
    static const std::vector<std::string> known = {
        "simulate-noise",  "solve-forward",     "solve-backward",
        "solve-coupled",   "lq-forward",        "lq-backward",
        "check-assumptions", "check-estimate",  "contraction-profile"};
    if (std::find(known.begin(), known.end(), s.task) == known.end())
        throw ConfigError("unknown task: " + s.task);
    if (config.contains("payload")) s.payload = config.at("payload");
    return s;
}

namespace detail {

inline json stat_report_json(const StatReport& report) {
    json rows = json::array();
    for (const auto& r : report.rows)
        rows.push_back({{"first", r.first},
                        {"second", r.second},
                        {"statistic", r.statistic},
                        {"target", r.target},
                        {"std_error", r.std_error},
                        {"deviation", r.deviation},
                        {"flagged", r.flagged}});
    return json{{"all_clear", report.all_clear()}, {"rows", rows}};
}

inline json estimate_report_json(const EstimateReport& report) {
    json profile = json::array();
    for (const auto& [scale, ratio] : report.scaling_profile)
        profile.push_back({{"scale", scale}, {"ratio", ratio}});
    return json{{"estimate", to_string(report.id)},
                {"lhs", report.lhs},
                {"rhs_data", report.rhs_data},
                {"ratio", report.ratio},
                {"scaling_profile", profile}};
}

inline json check_report_json(const CheckReport& report) {
    json lines = json::array();
    for (const auto& l : report.lines)
        lines.push_back({{"name", l.name},
                         {"violations", l.violations},
                         {"worst_margin", l.worst_margin}});
    return json{{"monotonicity_holds", report.monotonicity_holds},
                {"symmetric_holds", report.symmetric_holds},
                {"lines", lines}};
}

inline json optimality_report_json(const OptimalityReport& report) {
    json rows = json::array();
    for (const auto& r : report.rows)
        rows.push_back({{"direction", r.direction},
                        {"eps", r.eps},
                        {"cost_diff", r.cost_diff},
                        {"std_error", r.std_error},
                        {"lower_bound", r.lower_bound},
                        {"ok", r.ok}});
    json derivs = json::array();
    for (const auto& d : report.derivatives)
        derivs.push_back({{"direction", d.direction},
                          {"derivative", d.derivative},
                          {"std_error", d.std_error},
                          {"ok", d.ok}});
    return json{{"all_ok", report.all_ok()}, {"rows", rows}, {"derivatives", derivs}};
}

// DSL-backed coefficient adapters.

inline ForwardCoefficients::Map forward_map_from_expr(const CoefficientExpr& expr) {
    return [expr](int, double t, const Matrix& x, const Matrix& xd) {
        CoefficientExpr::Args args{{"x", &x}, {"x_del", &xd}};
        return expr.eval(args, x.rows(), t);
    };
}

inline BackwardCoefficients::Driver backward_map_from_expr(const CoefficientExpr& expr) {
    return [expr](int, double t, const Matrix& y, const Matrix& z, const Matrix& k,
                  const Matrix& ya, const Matrix& za, const Matrix& ka) {
        CoefficientExpr::Args args{{"y", &y},     {"z", &z},     {"k", &k},
                                   {"y_adv", &ya}, {"z_adv", &za}, {"k_adv", &ka}};
        return expr.eval(args, y.rows(), t);
    };
}

inline CoeffMap coupled_map_from_expr(const CoefficientExpr& expr) {
    return [expr](const CoupledArgs& a) {
        CoefficientExpr::Args args{
            {"x", &a.x},           {"y", &a.y},           {"z", &a.z},
            {"k", &a.k},           {"x_del", &a.x_del},   {"y_del", &a.y_del},
            {"z_del", &a.z_del},   {"k_del", &a.k_del},   {"x_adv", &a.x_adv},
            {"y_adv", &a.y_adv},   {"z_adv", &a.z_adv},   {"k_adv", &a.k_adv},
            {"x_advdel", &a.x_advdel}, {"y_advdel", &a.y_advdel},
            {"z_advdel", &a.z_advdel}, {"k_advdel", &a.k_advdel}};
        return expr.eval(args, a.x.rows(), a.t);
    };
}

// Built-in benchmark problems reused by tasks and tests.

inline ScalarLqProblem riccati_benchmark_defaults() {
    ScalarLqProblem p;
    p.A = 0.25;
    p.B = 0.5;
    p.C = 0.2;
    p.D = 0.2;
    p.Q = 0.5;
    p.R = 1.0;
    p.S = 0.1;
    p.G = 0.3;
    p.x0 = 1.0;
    p.horizon = 1.0;
    return p;
}

inline LqForwardSpec forward_spec_from_scalar(const ScalarLqProblem& p, int rank) {
    LqForwardSpec spec;
    spec.n = 1;
    spec.m = 1;
    spec.rank = rank;
    spec.A = TimeMatrixSeq(Matrix::Constant(1, 1, p.A));
    spec.B = TimeMatrixSeq(Matrix::Constant(1, 1, p.B));
    spec.C = TimeMatrixSeq(Matrix::Constant(1, 1, p.C));
    spec.D = TimeMatrixSeq(Matrix::Constant(1, 1, p.D));
    spec.Q = TimeMatrixSeq(Matrix::Constant(1, 1, p.Q));
    spec.R = TimeMatrixSeq(Matrix::Constant(1, 1, p.R));
    spec.S = TimeMatrixSeq(Matrix::Constant(1, 1, p.S));
    spec.G = Matrix::Constant(1, 1, p.G);
    spec.a = Vector::Constant(1, p.x0);
    return spec;
}

inline LqBackwardSpec backward_benchmark_spec(const NoiseBundle& noise, int rank) {
    LqBackwardSpec spec;
    spec.n = 1;
    spec.m = 1;
    spec.rank = rank;
    spec.A = TimeMatrixSeq(Matrix::Constant(1, 1, 0.2));
    spec.Abar = TimeMatrixSeq(Matrix::Constant(1, 1, 0.1));
    spec.B = TimeMatrixSeq(Matrix::Constant(1, 1, 0.1));
    spec.C.assign(static_cast<std::size_t>(rank),
                  TimeMatrixSeq(Matrix::Constant(1, 1, 0.1)));
    spec.D = TimeMatrixSeq(Matrix::Constant(1, 1, 1.0));
    spec.Q = TimeMatrixSeq(Matrix::Constant(1, 1, 1.0));
    spec.L = TimeMatrixSeq(Matrix::Constant(1, 1, 0.5));
    spec.Gi.assign(static_cast<std::size_t>(rank),
                   TimeMatrixSeq(Matrix::Constant(1, 1, 0.5)));
    spec.R = TimeMatrixSeq(Matrix::Constant(1, 1, 1.0));
    spec.M = Matrix::Constant(1, 1, 0.3);
    // bounded terminal data measurable at the horizon
    Matrix w_total = noise.dW.rowwise().sum();
    spec.terminal = (w_total.array().tanh() * 0.5 + 1.0).matrix();
    return spec;
}

} // namespace detail

// Runs one configured experiment: writes manifest.json, result.json and
// the task's CSV artifacts under `out_dir`, returns the result document.
inline json run_experiment(const json& config, const std::string& out_dir) {
    const auto t_start = std::chrono::steady_clock::now();
    ExperimentSetup setup = parse_config(config);
    std::filesystem::create_directories(out_dir);
    auto out_path = [&](const std::string& name) { return out_dir + "/" + name; };

    TeugelsBasis basis = build_teugels_basis(setup.model, setup.basis_order);
    NoiseBundle noise = simulate_noise(setup.model, basis, setup.grid,
                                       setup.n_paths, setup.seed, setup.workers);
    const int rank = basis.effective_rank;
    const int d = setup.grid.lag_steps;
    json result{{"task", setup.task}, {"effective_rank", rank}};

    if (setup.task == "simulate-noise") {
        StatReport report = validate_noise_stats(noise, setup.grid);
        basis.write_csv(out_path("basis.csv"));
        if (setup.payload.contains("cache_file"))
            save_noise(noise, out_path(setup.payload.at("cache_file").get<std::string>()));
        result["stats"] = detail::stat_report_json(report);
    } else if (setup.task == "solve-forward") {
        const json& p = setup.payload;
        int dim = p.contains("dim") ? static_cast<int>(expcfg::integer(p, "dim")) : 1;
        ForwardCoefficients fc;
        fc.dim = dim;
        if (p.contains("b"))
            fc.drift = detail::forward_map_from_expr(CoefficientExpr::parse(p.at("b")));
        if (p.contains("sigma"))
            fc.diffusion =
                detail::forward_map_from_expr(CoefficientExpr::parse(p.at("sigma")));
        if (p.contains("g"))
            fc.jump = detail::forward_map_from_expr(CoefficientExpr::parse(p.at("g")));
        fc.initial = p.contains("initial")
                         ? expcfg::samples(p.at("initial"), d + 1, dim, "initial")
                         : std::vector<Vector>(static_cast<std::size_t>(d + 1),
                                               Vector::Zero(dim));
        GridProcess x = solve_sdedl(fc, noise, setup.grid);
        x.write_csv(out_path("x.csv"));
        result["sup_norm"] = empirical_norm(x, NormTag::sup_mean_square);
    } else if (setup.task == "solve-backward") {
        const json& p = setup.payload;
        int dim = p.contains("dim") ? static_cast<int>(expcfg::integer(p, "dim")) : 1;
        BackwardCoefficients bc;
        bc.dim = dim;
        if (p.contains("f"))
            bc.driver =
                detail::backward_map_from_expr(CoefficientExpr::parse(p.at("f")));
        const json& term = expcfg::require(p, "terminal");
        if (term.contains("const")) {
            Vector v = term.at("const").is_number()
                           ? Vector::Constant(dim, term.at("const").get<double>())
                           : expcfg::samples(json::array({term.at("const")}), 1, dim,
                                             "terminal")[0];
            bc.terminal = v.transpose().replicate(setup.n_paths, 1);
        } else if (term.contains("expr")) {
            CoefficientExpr expr = CoefficientExpr::parse(term.at("expr"));
            Matrix wT = noise.dW.rowwise().sum();
            CoefficientExpr::Args args{{"wT", &wT}};
            bc.terminal = expr.eval(args, setup.n_paths, setup.grid.horizon);
        } else {
            throw ConfigError("terminal must contain 'const' or 'expr'");
        }
        CondExpEngine engine(setup.engine_degree);
        engine.begin_solve(path_statistics_provider(noise));
        BackwardSolution sol = solve_absdel(bc, noise, setup.grid, engine);
        sol.y.write_csv(out_path("y.csv"));
        result["y_sup_norm"] = empirical_norm(sol.y, NormTag::sup_mean_square);
        result["z_int_norm"] = empirical_norm(sol.z, NormTag::int_mean_square);
        result["k_int_norm"] = empirical_norm(sol.k, NormTag::int_mean_square);
        result["y0_mean"] = sol.y.at(0).col(0).mean();
    } else if (setup.task == "solve-coupled") {
        const json& p = setup.payload;
        int dim = p.contains("dim") ? static_cast<int>(expcfg::integer(p, "dim")) : 1;
        CoefficientSet coeffs;
        coeffs.dim = dim;
        if (p.contains("f"))
            coeffs.f = detail::coupled_map_from_expr(CoefficientExpr::parse(p.at("f")));
        if (p.contains("b"))
            coeffs.b = detail::coupled_map_from_expr(CoefficientExpr::parse(p.at("b")));
        if (p.contains("sigma"))
            coeffs.sigma =
                detail::coupled_map_from_expr(CoefficientExpr::parse(p.at("sigma")));
        if (p.contains("g"))
            coeffs.g = detail::coupled_map_from_expr(CoefficientExpr::parse(p.at("g")));
        if (p.contains("phi")) {
            CoefficientExpr expr = CoefficientExpr::parse(p.at("phi"));
            coeffs.Phi = [expr](const Matrix& xT) {
                CoefficientExpr::Args args{{"x", &xT}};
                return expr.eval(args, xT.rows(), 0.0);
            };
        }
        if (p.contains("initial")) {
            const json& init = p.at("initial");
            if (init.contains("lambda"))
                coeffs.initial.lambda =
                    expcfg::samples(init.at("lambda"), d + 1, dim, "initial.lambda");
            if (init.contains("mu"))
                coeffs.initial.mu =
                    expcfg::samples(init.at("mu"), d + 1, dim, "initial.mu");
            if (init.contains("rho"))
                coeffs.initial.rho =
                    expcfg::samples(init.at("rho"), d + 1, dim, "initial.rho");
            if (init.contains("varsigma"))
                coeffs.initial.varsigma = expcfg::samples(
                    init.at("varsigma"), d + 1,
                    static_cast<Eigen::Index>(dim) * rank, "initial.varsigma");
        }
        const json& dom = expcfg::require(p, "domination");
        DominationParams params;
        params.mu_c = dom.contains("mu_c") ? expcfg::number(dom, "mu_c") : 0.0;
        params.v_c = dom.contains("v_c") ? expcfg::number(dom, "v_c") : 0.0;
        int mrows = dom.contains("m") ? static_cast<int>(expcfg::integer(dom, "m")) : dim;
        auto seq = [&](const char* name) {
            if (!dom.contains(name)) return TimeMatrixSeq::zero(mrows, dim);
            return TimeMatrixSeq(expcfg::matrix(dom.at(name), mrows, dim, name));
        };
        params.G = dom.contains("G")
                       ? expcfg::matrix(dom.at("G"), dim, dim, "G")
                       : Matrix::Zero(dim, dim);
        params.A = seq("A");
        params.A_bar = seq("A_bar");
        params.B = seq("B");
        params.B_bar = seq("B_bar");
        params.C = seq("C");
        params.C_bar = seq("C_bar");
        for (int i = 0; i < rank; ++i) {
            std::string dn = "D" + std::to_string(i + 1);
            std::string dbn = "D_bar" + std::to_string(i + 1);
            params.D.push_back(seq(dn.c_str()));
            params.D_bar.push_back(seq(dbn.c_str()));
        }
        ContinuationSchedule schedule;
        if (p.contains("schedule")) {
            const json& sch = p.at("schedule");
            if (sch.contains("n_alpha_steps"))
                schedule.n_alpha_steps =
                    static_cast<int>(expcfg::integer(sch, "n_alpha_steps"));
            if (sch.contains("picard_tol"))
                schedule.picard_tol = expcfg::number(sch, "picard_tol");
            if (sch.contains("picard_max_iters"))
                schedule.picard_max_iters =
                    static_cast<int>(expcfg::integer(sch, "picard_max_iters"));
            if (sch.contains("step_halving_limit"))
                schedule.step_halving_limit =
                    static_cast<int>(expcfg::integer(sch, "step_halving_limit"));
        }
        CondExpEngine engine(setup.engine_degree);
        ContinuationResult res = solve_continuation(coeffs, params, noise,
                                                    setup.grid, engine, schedule);
        res.theta.x.write_csv(out_path("x.csv"));
        res.theta.y.write_csv(out_path("y.csv"));
        detail::table_from_history(res.history).write_csv(out_path("history.csv"));
        result["n2_norm"] = empirical_norm(res.theta);
        result["terminal_residual"] = res.terminal_residual;
    } else if (setup.task == "lq-forward") {
        const json& p = setup.payload;
        ScalarLqProblem prob = detail::riccati_benchmark_defaults();
        prob.horizon = setup.grid.horizon;
        auto maybe = [&](const char* name, double& slot) {
            if (p.contains(name)) slot = expcfg::number(p, name);
        };
        maybe("A", prob.A);
        maybe("B", prob.B);
        maybe("C", prob.C);
        maybe("D", prob.D);
        maybe("Q", prob.Q);
        maybe("R", prob.R);
        maybe("S", prob.S);
        maybe("G", prob.G);
        maybe("a", prob.x0);
        LqForwardSpec spec = detail::forward_spec_from_scalar(prob, rank);
        LqAssembly assembly = assemble_forward_hamiltonian(spec, setup.grid);
        ContinuationSchedule schedule;
        if (p.contains("n_alpha_steps"))
            schedule.n_alpha_steps =
                static_cast<int>(expcfg::integer(p, "n_alpha_steps"));
        CondExpEngine engine(setup.engine_degree);
        ContinuationResult res = solve_continuation(assembly.coeffs, assembly.params,
                                                    noise, setup.grid, engine,
                                                    schedule);
        GridProcess u = optimal_control(res.theta, spec, setup.grid, engine);
        CostEstimate cost = evaluate_cost(spec, u, noise, setup.grid);
        u.write_csv(out_path("u.csv"));
        detail::table_from_history(res.history).write_csv(out_path("history.csv"));
        result["cost"] = cost.value;
        result["cost_std_error"] = cost.std_error;
        result["y0_mean"] = res.theta.y.at(0).col(0).mean();
        result["terminal_residual"] = res.terminal_residual;
        if (setup.grid.lag_steps == 0 && setup.model.jumps.intensity == 0.0) {
            int fine = p.contains("riccati_steps")
                           ? static_cast<int>(expcfg::integer(p, "riccati_steps"))
                           : 20000;
            RiccatiSolution ric = solve_riccati(prob, fine);
            result["riccati_cost"] = ric.optimal_cost(prob.x0);
            result["riccati_y0"] = ric.adjoint0(prob.x0);
            result["cost_diff"] = cost.value - ric.optimal_cost(prob.x0);
            result["y0_diff"] =
                result["y0_mean"].get<double>() - ric.adjoint0(prob.x0);
        }
    } else if (setup.task == "lq-backward") {
        const json& p = setup.payload;
        LqBackwardSpec spec = detail::backward_benchmark_spec(noise, rank);
        auto maybe_seq = [&](const char* name, TimeMatrixSeq& slot) {
            if (p.contains(name))
                slot = TimeMatrixSeq(Matrix::Constant(1, 1, expcfg::number(p, name)));
        };
        maybe_seq("A", spec.A);
        maybe_seq("B", spec.B);
        maybe_seq("D", spec.D);
        maybe_seq("Q", spec.Q);
        maybe_seq("L", spec.L);
        maybe_seq("R", spec.R);
        if (p.contains("M")) spec.M = Matrix::Constant(1, 1, expcfg::number(p, "M"));
        LqAssembly assembly = assemble_backward_hamiltonian(spec, setup.grid);
        ContinuationSchedule schedule;
        CondExpEngine engine(setup.engine_degree);
        ContinuationResult res = solve_continuation(assembly.coeffs, assembly.params,
                                                    noise, setup.grid, engine,
                                                    schedule);
        GridProcess u = optimal_control(res.theta, spec, setup.grid, engine);
        CostEstimate cost = evaluate_cost(spec, u, noise, setup.grid, engine);
        u.write_csv(out_path("u.csv"));
        result["cost"] = cost.value;
        result["cost_std_error"] = cost.std_error;
        result["y0_mean"] = res.theta.y.at(0).col(0).mean();
    } else if (setup.task == "check-assumptions") {
        const json& p = setup.payload;
        std::string problem = p.contains("problem")
                                  ? p.at("problem").get<std::string>()
                                  : "lq-forward";
        SamplerConfig sampler;
        if (p.contains("sampler")) {
            const json& sm = p.at("sampler");
            if (sm.contains("n_samples"))
                sampler.n_samples = static_cast<int>(expcfg::integer(sm, "n_samples"));
            if (sm.contains("scale")) sampler.scale = expcfg::number(sm, "scale");
            if (sm.contains("seed"))
                sampler.seed = static_cast<std::uint64_t>(expcfg::integer(sm, "seed"));
        }
        LqAssembly assembly;
        if (problem == "lq-forward") {
            ScalarLqProblem prob = detail::riccati_benchmark_defaults();
            prob.horizon = setup.grid.horizon;
            assembly = assemble_forward_hamiltonian(
                detail::forward_spec_from_scalar(prob, rank), setup.grid);
        } else if (problem == "lq-backward") {
            assembly = assemble_backward_hamiltonian(
                detail::backward_benchmark_spec(noise, rank), setup.grid);
        } else {
            throw ConfigError("check-assumptions: unknown problem " + problem);
        }
        CheckReport report = check_domination_monotonicity(
            assembly.coeffs, assembly.params, setup.grid, rank, sampler);
        result["report"] = detail::check_report_json(report);
    } else if (setup.task == "check-estimate") {
        const json& p = setup.payload;
        EstimateId id = estimate_id_from_string(
            expcfg::require(p, "estimate").get<std::string>());
        std::vector<double> scales{0.25, 0.5, 1.0};
        if (p.contains("scales")) {
            scales.clear();
            for (const auto& v : p.at("scales")) scales.push_back(v.get<double>());
        }
        std::string instance = p.contains("instance")
                                   ? p.at("instance").get<std::string>()
                                   : "linear-sdedl";
        EstimateReport report;
        if (id == EstimateId::sde_2_2 || id == EstimateId::sde_2_3) {
            SdedlEstimateProblem prob;
            prob.base.dim = 1;
            prob.base.drift = [](int, double, const Matrix& x, const Matrix& xd) {
                return (0.4 * x + 0.2 * xd).eval();
            };
            prob.base.diffusion = [](int, double, const Matrix& x, const Matrix&) {
                return (0.3 * x).eval();
            };
            prob.delta.drift = [](int, double, const Matrix& x, const Matrix&) {
                return Matrix::Ones(x.rows(), 1).eval();
            };
            prob.delta.diffusion = [](int, double, const Matrix& x, const Matrix&) {
                return (0.5 * Matrix::Ones(x.rows(), 1)).eval();
            };
            prob.delta.initial.assign(static_cast<std::size_t>(d + 1),
                                      Vector::Constant(1, 0.3));
            report = check_estimate(id, prob, scales, noise, setup.grid);
        } else if (id == EstimateId::absde_2_5 || id == EstimateId::absde_2_6) {
            AbsdeEstimateProblem prob;
            prob.engine_degree = setup.engine_degree;
            prob.base.dim = 1;
            prob.base.driver = [](int, double, const Matrix& y, const Matrix& z,
                                  const Matrix&, const Matrix& ya, const Matrix&,
                                  const Matrix&) {
                return (-0.5 * y + 0.2 * z + 0.1 * ya).eval();
            };
            Matrix wT = noise.dW.rowwise().sum();
            prob.base.terminal = wT.array().tanh().matrix();
            prob.delta.driver = [](int, double, const Matrix& y, const Matrix&,
                                   const Matrix&, const Matrix&, const Matrix&,
                                   const Matrix&) {
                return Matrix::Ones(y.rows(), 1).eval();
            };
            prob.delta.terminal = Matrix::Constant(setup.n_paths, 1, 0.5);
            report = check_estimate(id, prob, scales, noise, setup.grid);
        } else if (id == EstimateId::coupled_3_4 || id == EstimateId::coupled_3_6) {
            ScalarLqProblem scalar = detail::riccati_benchmark_defaults();
            scalar.horizon = setup.grid.horizon;
            LqAssembly assembly = assemble_forward_hamiltonian(
                detail::forward_spec_from_scalar(scalar, rank), setup.grid);
            CoupledEstimateProblem prob;
            prob.base = assembly.coeffs;
            prob.params = assembly.params;
            prob.engine_degree = setup.engine_degree;
            prob.delta.dim = 1;
            prob.delta.Phi = [](const Matrix& xT) {
                return Matrix::Ones(xT.rows(), 1).eval();
            };
            prob.delta.f = [](const CoupledArgs& a) {
                return (0.5 * Matrix::Ones(a.x.rows(), 1)).eval();
            };
            report = check_estimate(id, prob, scales, noise, setup.grid);
        } else {
            ScalarLqProblem scalar = detail::riccati_benchmark_defaults();
            scalar.horizon = setup.grid.horizon;
            LqAssembly assembly = assemble_forward_hamiltonian(
                detail::forward_spec_from_scalar(scalar, rank), setup.grid);
            ForcingEstimateProblem prob;
            prob.coeffs = assembly.coeffs;
            prob.params = assembly.params;
            prob.engine_degree = setup.engine_degree;
            prob.delta.eta = Matrix::Constant(setup.n_paths, 1, 1.0);
            prob.delta.phi = [paths = setup.n_paths](int) {
                return Matrix::Constant(paths, 1, 0.5).eval();
            };
            report = check_estimate(id, prob, scales, noise, setup.grid);
        }
        (void)instance;
        result["report"] = detail::estimate_report_json(report);
    } else if (setup.task == "contraction-profile") {
        const json& p = setup.payload;
        ScalarLqProblem prob = detail::riccati_benchmark_defaults();
        prob.horizon = setup.grid.horizon;
        LqAssembly assembly = assemble_forward_hamiltonian(
            detail::forward_spec_from_scalar(prob, rank), setup.grid);
        ContinuationSchedule schedule;
        if (p.contains("n_alpha_steps"))
            schedule.n_alpha_steps =
                static_cast<int>(expcfg::integer(p, "n_alpha_steps"));
        CondExpEngine engine(setup.engine_degree);
        ContractionTable table = contraction_profile(assembly.coeffs, assembly.params,
                                                     noise, setup.grid, engine,
                                                     schedule);
        table.write_csv(out_path("profile.csv"));
        result["max_ratio"] = table.max_ratio;
        result["converged"] = table.converged;
    }

    const auto t_end = std::chrono::steady_clock::now();
    json manifest{{"config", config},
                  {"library_version", kVersion},
                  {"wall_time_ms",
                   std::chrono::duration_cast<std::chrono::milliseconds>(t_end - t_start)
                       .count()}};
    std::ofstream(out_path("manifest.json")) << manifest.dump(2) << '\n';
    std::ofstream(out_path("result.json")) << result.dump(2) << '\n';
    return result;
}

} // namespace fbsdelda
