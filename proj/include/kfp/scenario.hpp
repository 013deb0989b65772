#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "kfp/errors.hpp"
#include "kfp/fractional.hpp"
#include "kfp/hormander.hpp"
#include "kfp/phi.hpp"
#include "kfp/quadrature.hpp"
#include "kfp/semigroup.hpp"
#include "kfp/testfn.hpp"
#include "kfp/verify.hpp"

namespace kfp {

/// Every problem found while reading a config, syntax or semantic.
class ConfigError : public InvalidInput {
public:
    explicit ConfigError(std::vector<std::string> errors)
        : InvalidInput(join(errors)), errors_(std::move(errors)) {}
    const std::vector<std::string>& errors() const noexcept { return errors_; }

private:
    static std::string join(const std::vector<std::string>& e) {
        std::string out;
        for (const auto& s : e)
            out += (out.empty() ? "" : "\n") + s;
        return out;
    }
    std::vector<std::string> errors_;
};

struct NamedFunction {
    std::string label;
    TestFunction fn;
};

struct NamedPhi {
    std::string label;
    PhiFunction phi;
};

inline const std::vector<std::string>& known_checks() {
    static const std::vector<std::string> names{"square_rule", "convexity",          "tind_reduction",
                                                "s_limits",    "general_chain_rule", "frac_K",
                                                "carre_evolutive"};
    return names;
}

struct ScenarioConfig {
    std::string operator_name;
    std::optional<HormanderPair> pair;
    std::vector<NamedFunction> functions;
    std::vector<NamedPhi> phis;
    std::vector<double> s_values;
    std::vector<double> s_grid{0.9, 0.95, 0.99};
    std::vector<SpaceTimePoint> points;
    QuadratureSpec quad;
    std::vector<std::string> checks;
    std::vector<Engine> engines{Engine::hermite};
    std::string output_path;
    std::string format = "csv";
    std::string sweep_quantity = "frac_K";

    int dim() const { return pair ? pair->dim() : 0; }
};

/// Preset operators by name.
inline std::optional<HormanderPair> preset_pair(const std::string& name, int N) {
    if (name == "heat")
        return HormanderPair::heat(N);
    if (name == "kolmogorov")
        return HormanderPair::kolmogorov();
    if (name == "damped_kolmogorov")
        return HormanderPair::damped_kolmogorov();
    return std::nullopt;
}

inline nlohmann::json presets_json() {
    nlohmann::json out = nlohmann::json::array();
    auto entry = [&](const std::string& name, const HormanderPair& p, const std::string& note) {
        nlohmann::json e;
        e["name"] = name;
        e["N"] = p.dim();
        std::vector<double> q, b;
        for (int i = 0; i < p.dim(); ++i)
            for (int j = 0; j < p.dim(); ++j) {
                q.push_back(p.Q()(i, j));
                b.push_back(p.B()(i, j));
            }
        e["Q"] = q;
        e["B"] = b;
        e["note"] = note;
        out.push_back(e);
    };
    entry("heat", HormanderPair::heat(1), "Q = I_N, B = 0; N taken from the config (default 1)");
    entry("kolmogorov", HormanderPair::kolmogorov(), "K(t) = [[1, t/2], [t/2, t^2/3]]");
    entry("damped_kolmogorov", HormanderPair::damped_kolmogorov(), "tr B = -1");
    return out;
}

namespace detail {

using nlohmann::json;

class ConfigReader {
public:
    std::vector<std::string> errors;

    void error(const std::string& path, const std::string& msg) { errors.push_back(path + ": " + msg); }

    std::optional<double> number(const json& j, const std::string& path) {
        if (!j.is_number()) {
            error(path, "expected a number");
            return std::nullopt;
        }
        const double v = j.get<double>();
        if (!std::isfinite(v)) {
            error(path, "must be finite");
            return std::nullopt;
        }
        return v;
    }

    std::optional<int> integer(const json& j, const std::string& path) {
        if (!j.is_number_integer()) {
            error(path, "expected an integer");
            return std::nullopt;
        }
        return j.get<int>();
    }

    std::optional<std::vector<double>> numbers(const json& j, const std::string& path, int size) {
        if (!j.is_array()) {
            error(path, "expected a list of numbers");
            return std::nullopt;
        }
        if (static_cast<int>(j.size()) != size) {
            error(path, "expected " + std::to_string(size) + " entries, got " + std::to_string(j.size()));
            return std::nullopt;
        }
        std::vector<double> v(size);
        bool ok = true;
        for (int i = 0; i < size; ++i) {
            const auto x = number(j[i], path + "[" + std::to_string(i) + "]");
            ok = ok && x.has_value();
            v[i] = x.value_or(0.0);
        }
        if (!ok)
            return std::nullopt;
        return v;
    }

    std::optional<Vec> vector(const json& j, const std::string& path, int size) {
        const auto v = numbers(j, path, size);
        if (!v)
            return std::nullopt;
        return Vec(Eigen::Map<const Eigen::VectorXd>(v->data(), size));
    }

    /// Square matrix given row-major, either flat or as a list of rows.
    std::optional<Mat> matrix(const json& j, const std::string& path, int n) {
        json flat = json::array();
        if (j.is_array() && !j.empty() && j[0].is_array()) {
            for (const auto& row : j)
                for (const auto& x : row)
                    flat.push_back(x);
        } else {
            flat = j;
        }
        const auto v = numbers(flat, path, n * n);
        if (!v)
            return std::nullopt;
        Mat m(n, n);
        for (int i = 0; i < n; ++i)
            for (int k = 0; k < n; ++k)
                m(i, k) = (*v)[i * n + k];
        return m;
    }

    void known_keys(const json& j, const std::string& path, std::initializer_list<const char*> keys) {
        for (const auto& [k, v] : j.items()) {
            bool found = false;
            for (const char* key : keys)
                found = found || k == key;
            if (!found)
                error(path + "." + k, "unknown field");
        }
    }

    template <class F>
    auto guarded(const std::string& path, F&& f) -> std::optional<decltype(f())> {
        try {
            return f();
        } catch (const std::exception& e) {
            error(path, e.what());
            return std::nullopt;
        }
    }

    std::optional<Polynomial> polynomial(const json& j, const std::string& path, int dim) {
        if (!j.is_array()) {
            error(path, "expected a list of monomials");
            return std::nullopt;
        }
        Polynomial p(dim);
        bool ok = true;
        for (std::size_t k = 0; k < j.size(); ++k) {
            const std::string mp = path + "[" + std::to_string(k) + "]";
            const json& m = j[k];
            if (!m.is_object() || !m.contains("exponents")) {
                error(mp, "expected {\"exponents\": [...], \"coef\": c}");
                ok = false;
                continue;
            }
            known_keys(m, mp, {"exponents", "coef"});
            const auto e = vector(m["exponents"], mp + ".exponents", dim);
            const auto c = m.contains("coef") ? number(m["coef"], mp + ".coef") : std::optional<double>(1.0);
            if (!e || !c) {
                ok = false;
                continue;
            }
            std::vector<int> exps;
            for (int i = 0; i < dim; ++i) {
                const double x = (*e)(i);
                if (x < 0 || x != std::floor(x)) {
                    error(mp + ".exponents", "exponents must be non-negative integers");
                    ok = false;
                }
                exps.push_back(static_cast<int>(x));
            }
            if (!ok)
                continue;
            const auto mono = guarded(mp, [&] { return Polynomial::monomial(dim, exps, *c); });
            if (mono)
                p.add(mono->terms().front());
            else
                ok = false;
        }
        if (!ok)
            return std::nullopt;
        return p;
    }

    std::optional<TestFunction> function(const json& j, const std::string& path, int dim) {
        if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string()) {
            error(path, "expected an object with a string field 'kind'");
            return std::nullopt;
        }
        const std::string kind = j["kind"];
        if (kind == "constant") {
            known_keys(j, path, {"kind", "label", "value"});
            const auto v = j.contains("value") ? number(j["value"], path + ".value") : std::nullopt;
            if (!j.contains("value"))
                error(path + ".value", "missing");
            if (!v)
                return std::nullopt;
            return TestFunction::constant(dim, *v);
        }
        if (kind == "isotropic") {
            known_keys(j, path, {"kind", "label", "amplitude", "center", "width"});
            const auto a = j.contains("amplitude") ? number(j["amplitude"], path + ".amplitude")
                                                   : std::optional<double>(1.0);
            const auto w = j.contains("width") ? number(j["width"], path + ".width") : std::optional<double>(1.0);
            const auto c = j.contains("center") ? vector(j["center"], path + ".center", dim)
                                                : std::optional<Vec>(Vec::Zero(dim));
            if (!a || !w || !c)
                return std::nullopt;
            return guarded(path, [&] { return TestFunction::isotropic(*a, *c, *w); });
        }
        if (kind == "gaussian") {
            known_keys(j, path, {"kind", "label", "amplitude", "center", "A", "poly"});
            const auto a = j.contains("amplitude") ? number(j["amplitude"], path + ".amplitude")
                                                   : std::optional<double>(1.0);
            const auto c = j.contains("center") ? vector(j["center"], path + ".center", dim)
                                                : std::optional<Vec>(Vec::Zero(dim));
            std::optional<Mat> A;
            if (j.contains("A"))
                A = matrix(j["A"], path + ".A", dim);
            else
                error(path + ".A", "missing");
            std::optional<Polynomial> poly = Polynomial::one(dim);
            if (j.contains("poly"))
                poly = polynomial(j["poly"], path + ".poly", dim);
            if (!a || !c || !A || !poly)
                return std::nullopt;
            return guarded(path, [&] { return TestFunction::gaussian(*a, *c, *A, *poly); });
        }
        if (kind == "polynomial") {
            known_keys(j, path, {"kind", "label", "poly"});
            if (!j.contains("poly")) {
                error(path + ".poly", "missing");
                return std::nullopt;
            }
            const auto p = polynomial(j["poly"], path + ".poly", dim);
            if (!p)
                return std::nullopt;
            return TestFunction::polynomial(*p);
        }
        if (kind == "time_independent") {
            known_keys(j, path, {"kind", "label", "of"});
            if (dim < 2 || !j.contains("of")) {
                error(path + ".of", "missing spatial function");
                return std::nullopt;
            }
            const auto v = function(j["of"], path + ".of", dim - 1);
            if (!v)
                return std::nullopt;
            return v->lift_time_independent();
        }
        if (kind == "sum") {
            known_keys(j, path, {"kind", "label", "terms"});
            if (!j.contains("terms") || !j["terms"].is_array()) {
                error(path + ".terms", "expected a list of functions");
                return std::nullopt;
            }
            TestFunction acc = TestFunction::constant(dim, 0.0);
            bool ok = true;
            for (std::size_t k = 0; k < j["terms"].size(); ++k) {
                const auto t = function(j["terms"][k], path + ".terms[" + std::to_string(k) + "]", dim);
                if (t)
                    acc += *t;
                else
                    ok = false;
            }
            if (!ok)
                return std::nullopt;
            return acc;
        }
        error(path + ".kind", "unknown function kind '" + kind + "'");
        return std::nullopt;
    }

    std::optional<PhiFunction> phi(const json& j, const std::string& path) {
        if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string()) {
            error(path, "expected an object with a string field 'kind'");
            return std::nullopt;
        }
        known_keys(j, path, {"kind", "label", "a", "b", "c", "k", "eps", "interval"});
        const std::string kind = j["kind"];
        std::optional<PhiFunction> out;
        if (kind == "quadratic") {
            auto get = [&](const char* key, double def) {
                return j.contains(key) ? number(j[key], path + "." + key) : std::optional<double>(def);
            };
            const auto a = get("a", 1.0), b = get("b", 0.0), c = get("c", 0.0);
            if (a && b && c)
                out = PhiFunction::quadratic(*a, *b, *c);
        } else if (kind == "power") {
            const auto k = j.contains("k") ? integer(j["k"], path + ".k") : std::nullopt;
            if (!j.contains("k"))
                error(path + ".k", "missing");
            if (k)
                out = guarded(path + ".k", [&] { return PhiFunction::power(*k); });
        } else if (kind == "exponential") {
            out = PhiFunction::exponential();
        } else if (kind == "softabs") {
            const auto e = j.contains("eps") ? number(j["eps"], path + ".eps") : std::optional<double>(0.1);
            if (e)
                out = guarded(path + ".eps", [&] { return PhiFunction::softabs(*e); });
        } else {
            error(path + ".kind", "unknown phi kind '" + kind + "'");
        }
        if (out && j.contains("interval")) {
            const auto iv = vector(j["interval"], path + ".interval", 2);
            if (iv)
                out = guarded(path + ".interval", [&] { return out->on((*iv)(0), (*iv)(1)); });
            else
                out.reset();
        }
        if (out && kind == "exponential" && !out->bounded_interval())
            error(path + ".interval", "the exponential needs a bounded interval");
        return out;
    }

    void quadrature(const json& j, const std::string& path, QuadratureSpec& q) {
        if (!j.is_object()) {
            error(path, "expected an object");
            return;
        }
        auto set_int = [&](const char* key, int& field) {
            if (j.contains(key))
                if (const auto v = integer(j[key], path + "." + key))
                    field = *v;
        };
        auto set_real = [&](const char* key, double& field) {
            if (j.contains(key))
                if (const auto v = number(j[key], path + "." + key))
                    field = *v;
        };
        known_keys(j, path,
                   {"hermite_order", "mc_samples", "mc_seed", "tau_panels", "tau_panel_order", "tail_panels",
                    "tail_order", "tau_floor", "tau_cap", "covariance_order", "radial_panels", "radial_order",
                    "angular_order"});
        set_int("hermite_order", q.hermite_order);
        set_int("mc_samples", q.mc_samples);
        set_int("tau_panels", q.tau_panels);
        set_int("tau_panel_order", q.tau_panel_order);
        set_int("tail_panels", q.tail_panels);
        set_int("tail_order", q.tail_order);
        set_int("covariance_order", q.covariance_order);
        set_int("radial_panels", q.radial_panels);
        set_int("radial_order", q.radial_order);
        set_int("angular_order", q.angular_order);
        set_real("tau_floor", q.tau_floor);
        set_real("tau_cap", q.tau_cap);
        if (j.contains("mc_seed")) {
            if (j["mc_seed"].is_number_unsigned())
                q.mc_seed = j["mc_seed"].get<std::uint64_t>();
            else
                error(path + ".mc_seed", "expected a non-negative integer");
        }
        guarded(path, [&] {
            q.validate();
            return 0;
        });
    }

    std::vector<double> orders(const json& j, const std::string& path) {
        std::vector<double> out;
        if (!j.is_array() || j.empty()) {
            error(path, "expected a non-empty list of orders");
            return out;
        }
        for (std::size_t k = 0; k < j.size(); ++k) {
            const std::string p = path + "[" + std::to_string(k) + "]";
            if (const auto s = number(j[k], p)) {
                if (!(*s > 0.0 && *s <= kMaxOrder))
                    error(p, "order must lie in (0, 0.999]");
                else
                    out.push_back(*s);
            }
        }
        return out;
    }
};

inline std::string line_column(const std::string& text, std::size_t byte) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < byte && i < text.size(); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

} // namespace detail

/// Parse and validate a JSON scenario; throws ConfigError listing every problem.
inline ScenarioConfig parse_config(const std::string& text) {
    using nlohmann::json;
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError({"syntax error at " + detail::line_column(text, e.byte) + ": " + e.what()});
    }
    detail::ConfigReader r;
    ScenarioConfig cfg;
    if (!root.is_object())
        throw ConfigError({"$: the config must be an object"});
    r.known_keys(root, "$",
                 {"operator", "N", "functions", "phis", "s_values", "s_grid", "points", "quadrature", "checks",
                  "engines", "output", "sweep_quantity"});

    // Operator.
    int N = 1;
    int declared_dim = 0;  // lets later fields be checked even if Q or B is invalid
    if (root.contains("N"))
        if (const auto n = r.integer(root["N"], "$.N"))
            N = *n;
    if (!root.contains("operator")) {
        r.error("$.operator", "missing");
    } else {
        const json& op = root["operator"];
        if (op.is_string()) {
            cfg.operator_name = op.get<std::string>();
            cfg.pair = r.guarded("$.operator", [&] { return preset_pair(cfg.operator_name, N); }).value_or(std::nullopt);
            if (!cfg.pair && r.errors.empty())
                r.error("$.operator", "unknown preset '" + cfg.operator_name + "'");
        } else if (op.is_object()) {
            r.known_keys(op, "$.operator", {"preset", "N", "Q", "B"});
            int n = N;
            if (op.contains("N"))
                if (const auto v = r.integer(op["N"], "$.operator.N"))
                    n = *v;
            if (op.contains("preset")) {
                cfg.operator_name = op["preset"].is_string() ? op["preset"].get<std::string>() : "";
                cfg.pair = r.guarded("$.operator", [&] { return preset_pair(cfg.operator_name, n); })
                               .value_or(std::nullopt);
                if (!cfg.pair)
                    r.error("$.operator.preset", "unknown preset '" + cfg.operator_name + "'");
            } else if (n < 1 || n > kMaxDim - 1) {
                r.error("$.operator.N", "N must lie in 1..6");
            } else {
                cfg.operator_name = "custom";
                declared_dim = n;
                const auto Q = op.contains("Q") ? r.matrix(op["Q"], "$.operator.Q", n) : std::nullopt;
                const auto B = op.contains("B") ? r.matrix(op["B"], "$.operator.B", n) : std::nullopt;
                if (!op.contains("Q"))
                    r.error("$.operator.Q", "missing");
                if (!op.contains("B"))
                    r.error("$.operator.B", "missing");
                if (Q && B)
                    cfg.pair = r.guarded("$.operator", [&] { return HormanderPair(*Q, *B); });
            }
        } else {
            r.error("$.operator", "expected a preset name or an object");
        }
    }
    const int dim = cfg.pair ? cfg.dim() : declared_dim;

    // Functions on R^{N+1}.
    if (!root.contains("functions") || !root["functions"].is_array() || root["functions"].empty()) {
        r.error("$.functions", "expected a non-empty list");
    } else if (dim > 0) {
        for (std::size_t k = 0; k < root["functions"].size(); ++k) {
            const std::string path = "$.functions[" + std::to_string(k) + "]";
            const json& j = root["functions"][k];
            if (auto f = r.function(j, path, dim + 1)) {
                std::string label = "u" + std::to_string(k);
                if (j.contains("label") && j["label"].is_string())
                    label = j["label"];
                cfg.functions.push_back({label, std::move(*f)});
            }
        }
    }

    if (root.contains("phis")) {
        if (!root["phis"].is_array()) {
            r.error("$.phis", "expected a list");
        } else {
            for (std::size_t k = 0; k < root["phis"].size(); ++k) {
                const std::string path = "$.phis[" + std::to_string(k) + "]";
                const json& j = root["phis"][k];
                if (auto p = r.phi(j, path)) {
                    std::string label = p->name();
                    if (j.contains("label") && j["label"].is_string())
                        label = j["label"];
                    cfg.phis.push_back({label, *p});
                }
            }
        }
    }

    if (!root.contains("s_values"))
        r.error("$.s_values", "missing");
    else
        cfg.s_values = r.orders(root["s_values"], "$.s_values");
    std::sort(cfg.s_values.begin(), cfg.s_values.end());
    cfg.s_values.erase(std::unique(cfg.s_values.begin(), cfg.s_values.end()), cfg.s_values.end());

    if (root.contains("s_grid")) {
        cfg.s_grid = r.orders(root["s_grid"], "$.s_grid");
        if (cfg.s_grid.size() < 3)
            r.error("$.s_grid", "need at least three orders");
        for (std::size_t k = 1; k < cfg.s_grid.size(); ++k)
            if (!(cfg.s_grid[k] > cfg.s_grid[k - 1]))
                r.error("$.s_grid", "orders must be strictly increasing");
    }

    if (root.contains("points") && dim > 0) {
        if (!root["points"].is_array() || root["points"].empty()) {
            r.error("$.points", "expected a non-empty list");
        } else {
            for (std::size_t k = 0; k < root["points"].size(); ++k) {
                const std::string path = "$.points[" + std::to_string(k) + "]";
                const json& j = root["points"][k];
                if (!j.is_object()) {
                    r.error(path, "expected {\"X\": [...], \"t\": t}");
                    continue;
                }
                r.known_keys(j, path, {"X", "t"});
                const auto X = j.contains("X") ? r.vector(j["X"], path + ".X", dim) : std::nullopt;
                if (!j.contains("X"))
                    r.error(path + ".X", "missing");
                const auto t = j.contains("t") ? r.number(j["t"], path + ".t") : std::optional<double>(0.0);
                if (X && t)
                    cfg.points.push_back({*X, *t});
            }
        }
    } else if (dim > 0) {
        cfg.points = default_points(dim);
    }

    if (root.contains("quadrature"))
        r.quadrature(root["quadrature"], "$.quadrature", cfg.quad);

    if (!root.contains("checks") || !root["checks"].is_array() || root["checks"].empty()) {
        r.error("$.checks", "expected a non-empty list of check names");
    } else {
        for (std::size_t k = 0; k < root["checks"].size(); ++k) {
            const std::string path = "$.checks[" + std::to_string(k) + "]";
            const json& j = root["checks"][k];
            if (!j.is_string()) {
                r.error(path, "expected a check name");
                continue;
            }
            const std::string name = j;
            const auto& known = known_checks();
            if (std::find(known.begin(), known.end(), name) == known.end())
                r.error(path, "unknown check '" + name + "'");
            else
                cfg.checks.push_back(name);
        }
    }
    for (const auto& c : cfg.checks)
        if ((c == "convexity" || c == "s_limits" || c == "general_chain_rule") && cfg.phis.empty()) {
            r.error("$.phis", "check '" + c + "' needs at least one phi");
            break;
        }

    if (root.contains("engines")) {
        cfg.engines.clear();
        if (!root["engines"].is_array() || root["engines"].empty())
            r.error("$.engines", "expected a non-empty list");
        else
            for (std::size_t k = 0; k < root["engines"].size(); ++k) {
                const std::string path = "$.engines[" + std::to_string(k) + "]";
                if (!root["engines"][k].is_string()) {
                    r.error(path, "expected an engine name");
                    continue;
                }
                if (const auto e = r.guarded(path, [&] { return engine_from_string(root["engines"][k]); }))
                    cfg.engines.push_back(*e);
            }
    }

    if (root.contains("output")) {
        const json& o = root["output"];
        if (!o.is_object()) {
            r.error("$.output", "expected {\"path\": ..., \"format\": \"csv\"|\"json\"}");
        } else {
            r.known_keys(o, "$.output", {"path", "format"});
            if (o.contains("path")) {
                if (o["path"].is_string())
                    cfg.output_path = o["path"];
                else
                    r.error("$.output.path", "expected a string");
            }
            if (o.contains("format")) {
                if (o["format"].is_string() && (o["format"] == "csv" || o["format"] == "json"))
                    cfg.format = o["format"];
                else
                    r.error("$.output.format", "expected \"csv\" or \"json\"");
            }
        }
    }

    if (root.contains("sweep_quantity")) {
        const json& q = root["sweep_quantity"];
        if (q.is_string() && (q == "frac_K" || q == "carre_evolutive" || q == "remainder"))
            cfg.sweep_quantity = q;
        else
            r.error("$.sweep_quantity", "expected frac_K, carre_evolutive or remainder");
    }

    if (!r.errors.empty())
        throw ConfigError(r.errors);
    return cfg;
}

// ---------------------------------------------------------------------------
// Running.

struct ReportRow {
    std::string check;
    std::string case_label;
    double s = 0.0;
    std::size_t point = 0;
    SpaceTimePoint where;
    double lhs = 0.0, rhs = 0.0, residual = 0.0, tolerance = 0.0, std_error = 0.0;
    std::string verdict;
    std::string engine;
    double wall_time_ms = 0.0;
    std::string message;
};

struct RunOptions {
    int threads = 1;
    bool timing = false;  ///< record wall time (otherwise 0 so reports are byte-reproducible)
};

namespace detail {

struct Cell {
    std::string check;
    double s;
    std::size_t point;
};

inline std::string join_label(std::initializer_list<std::string> parts) {
    std::string out;
    for (const auto& p : parts) {
        if (p.empty())
            continue;
        out += (out.empty() ? "" : "/") + p;
    }
    return out;
}

inline ReportRow error_row(const Cell& c, const SpaceTimePoint& p, const std::string& label, const std::string& engine,
                           const std::string& msg) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    return ReportRow{c.check, label, c.s, c.point, p, nan, nan, nan, nan, nan, "error", engine, 0.0, msg};
}

inline void append_report(std::vector<ReportRow>& out, const CheckReport& rep, const Cell& c,
                          const std::string& prefix) {
    for (const auto& r : rep.rows) {
        ReportRow row;
        row.check = c.check;
        row.case_label = join_label({prefix, r.label});
        row.s = r.s;
        row.point = c.point;
        row.where = r.point;
        row.lhs = r.lhs;
        row.rhs = r.rhs;
        row.residual = r.residual;
        row.tolerance = r.tolerance;
        row.std_error = r.std_error;
        row.verdict = r.verdict;
        row.engine = to_string(r.engine);
        out.push_back(row);
    }
}

/// Engine value checked against the closed-form engine.
inline CheckReport evaluation_report(const std::string& name, const SemigroupContext& ctx, const TestFunction& u,
                                     const SpaceTimePoint& p, double s, Engine engine, std::uint64_t stream) {
    auto eval = [&](Engine e) {
        return name == "frac_K" ? frac_K(ctx, u, p, s, e, Outer::identity(), stream)
                                : carre_evolutive(ctx, u, p, s, e, stream);
    };
    const Estimate ref = eval(Engine::exact);
    const Estimate got = engine == Engine::exact ? ref : eval(engine);
    CheckReport rep{name, 0, {}};
    const double tol = 1e-6 * (1.0 + std::abs(ref.value)) + 4.0 * got.std_error;
    rep.rows.push_back(make_row(name, "", s, 0, p, got.value, ref.value, std::abs(got.value - ref.value), tol, engine,
                                got.std_error));
    return rep;
}

inline std::vector<ReportRow> run_cell(const ScenarioConfig& cfg, const SemigroupContext* ctx,
                                       const std::string& ctx_error, const Cell& c) {
    std::vector<ReportRow> out;
    const SpaceTimePoint& p = cfg.points[c.point];
    const std::vector<SpaceTimePoint> one{p};
    const bool uses_phi = c.check == "convexity" || c.check == "s_limits" || c.check == "general_chain_rule";
    const bool uses_engine = c.check == "square_rule" || c.check == "convexity" || c.check == "s_limits" ||
                             c.check == "frac_K" || c.check == "carre_evolutive";
    const std::vector<NamedPhi> no_phi{{"", PhiFunction::quadratic(1, 0, 0)}};
    const auto& phis = uses_phi ? cfg.phis : no_phi;
    const std::vector<Engine> engines = uses_engine ? cfg.engines : std::vector<Engine>{Engine::monte_carlo};
    for (std::size_t fi = 0; fi < cfg.functions.size(); ++fi) {
        const auto& f = cfg.functions[fi];
        for (const auto& ph : phis) {
            for (const Engine e : engines) {
                if (c.check == "tind_reduction" && e != engines.front())
                    continue;
                const std::string label = join_label({f.label, uses_phi ? ph.label : ""});
                const std::string ename = c.check == "tind_reduction" ? "exact" : to_string(e);
                // Random streams depend on the cell identity only, never on scheduling.
                const std::uint64_t salt = fnv1a(c.check + "|" + label + "|" + std::to_string(c.point));
                const auto t0 = std::chrono::steady_clock::now();
                const std::size_t before = out.size();
                try {
                    if (c.check == "tind_reduction") {
                        const TestFunction v = f.fn.time_slice(p.t);
                        append_report(out, check_tind_reduction(v, one, c.s, cfg.quad), c, label);
                    } else {
                        if (!ctx)
                            throw Error(ctx_error);
                        CheckReport rep;
                        if (c.check == "square_rule")
                            rep = check_square_rule(*ctx, f.fn, one, c.s, e, salt);
                        else if (c.check == "convexity")
                            rep = check_convexity_inequality(*ctx, f.fn, ph.phi, one, c.s, e, salt);
                        else if (c.check == "s_limits")
                            rep = check_s_limits(*ctx, f.fn, ph.phi, one, cfg.s_grid,
                                                 e == Engine::monte_carlo ? Engine::exact : e);
                        else if (c.check == "general_chain_rule")
                            rep = check_general_chain_rule(*ctx, f.fn, ph.phi, one, c.s, salt);
                        else
                            rep = evaluation_report(c.check, *ctx, f.fn, p, c.s, e, salt);
                        append_report(out, rep, c, label);
                    }
                } catch (const std::exception& ex) {
                    out.resize(before);
                    out.push_back(error_row(c, p, label, ename, ex.what()));
                }
                const double ms =
                    std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
                if (out.size() > before)
                    out[before].wall_time_ms = ms;
            }
        }
    }
    return out;
}

} // namespace detail

/// Every (check, s, point) cell, ordered by check (config order), s ascending,
/// then point index. Errors become rows with verdict "error".
inline std::vector<ReportRow> run_scenario(const ScenarioConfig& cfg, const RunOptions& opt = {}) {
    std::optional<SemigroupContext> ctx;
    std::string ctx_error;
    try {
        if (!cfg.pair)
            throw InvalidInput("no operator");
        ctx.emplace(SemigroupContext::on_tau_mesh(*cfg.pair, cfg.quad));
    } catch (const std::exception& e) {
        ctx_error = e.what();
    }

    std::vector<detail::Cell> cells;
    for (const auto& check : cfg.checks) {
        if (check == "s_limits") {
            for (std::size_t i = 0; i < cfg.points.size(); ++i)
                cells.push_back({check, 1.0, i});
            continue;
        }
        for (double s : cfg.s_values)
            for (std::size_t i = 0; i < cfg.points.size(); ++i)
                cells.push_back({check, s, i});
    }

    std::vector<std::vector<ReportRow>> results(cells.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t k; (k = next.fetch_add(1)) < cells.size();)
            results[k] = detail::run_cell(cfg, ctx ? &*ctx : nullptr, ctx_error, cells[k]);
    };
    const int threads = std::max(1, std::min<int>(opt.threads, static_cast<int>(cells.size())));
    std::vector<std::thread> pool;
    for (int t = 1; t < threads; ++t)
        pool.emplace_back(worker);
    worker();
    for (auto& t : pool)
        t.join();

    std::vector<ReportRow> rows;
    for (auto& r : results)
        for (auto& row : r) {
            if (!opt.timing)
                row.wall_time_ms = 0.0;
            rows.push_back(std::move(row));
        }
    return rows;
}

inline bool all_pass(const std::vector<ReportRow>& rows) {
    return !rows.empty() && std::all_of(rows.begin(), rows.end(), [](const ReportRow& r) { return r.verdict == "pass"; });
}

// ---------------------------------------------------------------------------
// Output.

inline const char* csv_header() {
    return "check,case,s,point,X,t,lhs,rhs,residual,tolerance,std_error,verdict,engine,wall_time_ms,message";
}

namespace detail {

inline std::string num(double x) {
    if (std::isnan(x))
        return "nan";
    if (x == 0.0)
        return "0";  // no "-0"
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos)
        return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"')
            out += '"';
        out += c == '\n' ? ' ' : c;
    }
    return out + "\"";
}

inline std::string coords(const Vec& X) {
    std::string out;
    for (int i = 0; i < X.size(); ++i)
        out += (i ? " " : "") + num(X(i));
    return out;
}

inline nlohmann::json json_number(double x) {
    return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr);
}

} // namespace detail

inline void write_csv(std::ostream& os, const std::vector<ReportRow>& rows) {
    os << csv_header() << "\n";
    for (const auto& r : rows) {
        os << detail::csv_field(r.check) << ',' << detail::csv_field(r.case_label) << ',' << detail::num(r.s) << ','
           << r.point << ',' << detail::coords(r.where.X) << ',' << detail::num(r.where.t) << ','
           << detail::num(r.lhs) << ',' << detail::num(r.rhs) << ',' << detail::num(r.residual) << ','
           << detail::num(r.tolerance) << ',' << detail::num(r.std_error) << ',' << r.verdict << ',' << r.engine
           << ',' << detail::num(r.wall_time_ms) << ',' << detail::csv_field(r.message) << "\n";
    }
}

inline nlohmann::json report_json(const std::vector<ReportRow>& rows) {
    nlohmann::json out;
    out["rows"] = nlohmann::json::array();
    std::size_t pass = 0, fail = 0, err = 0;
    for (const auto& r : rows) {
        nlohmann::json j;
        j["check"] = r.check;
        j["case"] = r.case_label;
        j["s"] = detail::json_number(r.s);
        j["point"] = r.point;
        std::vector<double> X(r.where.X.data(), r.where.X.data() + r.where.X.size());
        j["X"] = X;
        j["t"] = detail::json_number(r.where.t);
        j["lhs"] = detail::json_number(r.lhs);
        j["rhs"] = detail::json_number(r.rhs);
        j["residual"] = detail::json_number(r.residual);
        j["tolerance"] = detail::json_number(r.tolerance);
        j["std_error"] = detail::json_number(r.std_error);
        j["verdict"] = r.verdict;
        j["engine"] = r.engine;
        j["wall_time_ms"] = r.wall_time_ms;
        j["message"] = r.message;
        out["rows"].push_back(j);
        (r.verdict == "pass" ? pass : r.verdict == "fail" ? fail : err)++;
    }
    out["summary"] = {{"rows", rows.size()}, {"pass", pass}, {"fail", fail}, {"error", err}};
    return out;
}

inline void write_json(std::ostream& os, const std::vector<ReportRow>& rows) {
    os << report_json(rows).dump(2) << "\n";
}

inline std::string render(const std::vector<ReportRow>& rows, const std::string& format) {
    std::ostringstream os;
    if (format == "json")
        write_json(os, rows);
    else if (format == "csv")
        write_csv(os, rows);
    else
        throw InvalidInput("unknown output format '" + format + "'");
    return os.str();
}

// ---------------------------------------------------------------------------
// Convergence sweeps.

struct SweepRow {
    double value = 0.0;
    double result = 0.0;
    double residual = 0.0;
    double order = std::numeric_limits<double>::quiet_NaN();
};

struct SweepTable {
    std::string axis;
    std::string quantity;
    std::vector<SweepRow> rows;
};

/// One row per axis value for the config's sweep quantity at its first function,
/// point, order and phi. Refinement axes report |Q - Q_finest|; the s axis reports |Q|.
/// The observed order is log(r_{i-1}/r_i) / log(h_{i-1}/h_i) with h = 1/value or 1-s.
inline SweepTable convergence_sweep(const ScenarioConfig& cfg, const std::string& axis,
                                    const std::vector<double>& values) {
    if (axis != "hermite_order" && axis != "tau_panels" && axis != "s")
        throw InvalidInput("sweep axis must be hermite_order, tau_panels or s");
    if (values.size() < 3)
        throw InvalidInput("a sweep needs at least three axis values");
    for (std::size_t k = 1; k < values.size(); ++k)
        if (!(values[k] > values[k - 1]))
            throw InvalidInput("sweep values must be strictly increasing");
    if (!cfg.pair || cfg.functions.empty() || cfg.points.empty())
        throw InvalidInput("sweep needs an operator, a function and a point");
    if (cfg.sweep_quantity == "remainder" && cfg.phis.empty())
        throw InvalidInput("a remainder sweep needs a phi");
    if (axis != "s" && cfg.s_values.empty())
        throw InvalidInput("sweep needs an order s");
    for (double v : values) {
        if (axis == "s")
            check_order(v);
        else if (v != std::floor(v) || v < 1)
            throw InvalidInput("sweep values for " + axis + " must be positive integers");
    }

    const TestFunction& u = cfg.functions.front().fn;
    const SpaceTimePoint& p = cfg.points.front();
    Engine engine = cfg.engines.front();
    if (axis == "hermite_order")
        engine = Engine::hermite;

    SweepTable table{axis, cfg.sweep_quantity, {}};
    std::optional<SemigroupContext> shared;
    for (double v : values) {
        QuadratureSpec q = cfg.quad;
        double s = axis == "s" ? v : cfg.s_values.front();
        if (axis == "hermite_order")
            q.hermite_order = static_cast<int>(v);
        if (axis == "tau_panels")
            q.tau_panels = static_cast<int>(v);
        if (axis == "s" && !shared)
            shared.emplace(SemigroupContext::on_tau_mesh(*cfg.pair, q));
        const SemigroupContext ctx = axis == "s" ? *shared : SemigroupContext::on_tau_mesh(*cfg.pair, q);
        double result = 0.0;
        if (cfg.sweep_quantity == "frac_K")
            result = frac_K(ctx, u, p, s, engine).value;
        else if (cfg.sweep_quantity == "carre_evolutive")
            result = carre_evolutive(ctx, u, p, s, engine).value;
        else
            result = remainder(ctx, u, cfg.phis.front().phi, p, s, engine).value;
        table.rows.push_back({v, result, 0.0});
    }
    auto h = [&](double v) { return axis == "s" ? 1.0 - v : 1.0 / v; };
    for (auto& r : table.rows)
        r.residual = axis == "s" ? std::abs(r.result) : std::abs(r.result - table.rows.back().result);
    for (std::size_t k = 1; k < table.rows.size(); ++k) {
        const double a = table.rows[k - 1].residual, b = table.rows[k].residual;
        if (a > 0.0 && b > 0.0)
            table.rows[k].order = std::log(a / b) / std::log(h(table.rows[k - 1].value) / h(table.rows[k].value));
    }
    return table;
}

inline void write_sweep_csv(std::ostream& os, const SweepTable& t) {
    os << "axis,value,quantity,result,residual,order\n";
    for (const auto& r : t.rows)
        os << t.axis << ',' << detail::num(r.value) << ',' << t.quantity << ',' << detail::num(r.result) << ','
           << detail::num(r.residual) << ',' << detail::num(r.order) << "\n";
}

inline void write_sweep_json(std::ostream& os, const SweepTable& t) {
    nlohmann::json j;
    j["axis"] = t.axis;
    j["quantity"] = t.quantity;
    j["rows"] = nlohmann::json::array();
    for (const auto& r : t.rows)
        j["rows"].push_back({{"value", r.value},
                             {"result", detail::json_number(r.result)},
                             {"residual", detail::json_number(r.residual)},
                             {"order", detail::json_number(r.order)}});
    os << j.dump(2) << "\n";
}

} // namespace kfp
