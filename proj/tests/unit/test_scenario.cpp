#include <fstream>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "kfp/scenario.hpp"

using namespace kfp;

namespace {

const char* kHeat = R"({
  "operator": "heat", "N": 1,
  "functions": [{"kind": "time_independent", "label": "gauss",
                 "of": {"kind": "isotropic", "center": [0.0], "width": 1.0}}],
  "s_values": [0.5],
  "points": [{"X": [0.0], "t": 0.0}, {"X": [0.5], "t": 0.0}],
  "checks": ["square_rule", "tind_reduction"],
  "engines": ["exact"]
})";

std::vector<std::string> errors_of(const std::string& text) {
    try {
        parse_config(text);
    } catch (const ConfigError& e) {
        return e.errors();
    }
    return {};
}

bool mentions(const std::vector<std::string>& errs, const std::string& what) {
    for (const auto& e : errs)
        if (e.find(what) != std::string::npos)
            return true;
    return false;
}

} // namespace

TEST(Presets, KnownNames) {
    EXPECT_TRUE(preset_pair("kolmogorov", 2));
    EXPECT_EQ(preset_pair("heat", 3)->dim(), 3);
    EXPECT_FALSE(preset_pair("nonesuch", 1));
    EXPECT_EQ(presets_json().size(), 3u);
}

TEST(Config, ParsesHeatScenario) {
    const ScenarioConfig cfg = parse_config(kHeat);
    EXPECT_EQ(cfg.dim(), 1);
    EXPECT_EQ(cfg.functions.size(), 1u);
    EXPECT_EQ(cfg.functions[0].fn.dim(), 2);
    EXPECT_EQ(cfg.points.size(), 2u);
    EXPECT_EQ(cfg.engines.front(), Engine::exact);
}

TEST(Config, ExplicitMatricesAndDefaults) {
    const ScenarioConfig cfg = parse_config(R"({
      "operator": {"N": 2, "Q": [[1, 0], [0, 0]], "B": [1e-300, 0, 1, 0]},
      "functions": [{"kind": "isotropic", "center": [0, 0, 0]}],
      "s_values": [0.75, 0.25, 0.75], "checks": ["frac_K"]})");
    EXPECT_EQ(cfg.s_values, (std::vector<double>{0.25, 0.75}));
    EXPECT_EQ(cfg.points.size(), 5u);
    EXPECT_EQ(cfg.pair->B()(1, 0), 1.0);
}

TEST(Config, CollectsEveryError) {
    const auto errs = errors_of(R"({
      "operator": {"N": 2, "Q": [1, 0, 0], "B": [[0, 0], [1, 0]]},
      "functions": [{"kind": "isotropic", "center": [0, 0]}],
      "s_values": [0.5, 1.0],
      "checks": ["square_rule", "bogus"],
      "quadrature": {"hermite_order": 1},
      "colour": "red"})");
    EXPECT_GE(errs.size(), 5u);
    EXPECT_TRUE(mentions(errs, "operator.Q"));
    EXPECT_TRUE(mentions(errs, "functions[0].center"));
    EXPECT_TRUE(mentions(errs, "s_values[1]"));
    EXPECT_TRUE(mentions(errs, "checks[1]"));
    EXPECT_TRUE(mentions(errs, "colour"));
}

TEST(Config, SyntaxErrorHasPosition) {
    const auto errs = errors_of("{\n  \"operator\": \"heat\",\n  oops\n}");
    ASSERT_EQ(errs.size(), 1u);
    EXPECT_TRUE(mentions(errs, "line 3"));
}

TEST(Config, ChecksNeedingPhiRequireOne) {
    const auto errs = errors_of(R"({"operator": "kolmogorov",
      "functions": [{"kind": "isotropic", "center": [0, 0, 0]}],
      "s_values": [0.5], "checks": ["convexity"]})");
    EXPECT_TRUE(mentions(errs, "phis"));
}

TEST(Run, HeatScenarioPassesAndIsOrdered) {
    const ScenarioConfig cfg = parse_config(kHeat);
    const auto rows = run_scenario(cfg);
    ASSERT_EQ(rows.size(), 4u);
    EXPECT_TRUE(all_pass(rows));
    EXPECT_EQ(rows[0].check, "square_rule");
    EXPECT_EQ(rows[0].point, 0u);
    EXPECT_EQ(rows[1].point, 1u);
    EXPECT_EQ(rows[2].check, "tind_reduction");
    for (const auto& r : rows)
        EXPECT_EQ(r.wall_time_ms, 0.0);
}

TEST(Run, ThreadCountDoesNotChangeReport) {
    ScenarioConfig cfg = parse_config(R"({
      "operator": "damped_kolmogorov",
      "functions": [{"kind": "isotropic", "center": [0.2, 0.0, 0.1], "width": 0.9}],
      "phis": [{"kind": "power", "k": 3}],
      "s_values": [0.5],
      "points": [{"X": [0, 0], "t": 0}, {"X": [0.3, 0.1], "t": 0.2}],
      "checks": ["frac_K", "general_chain_rule"],
      "engines": ["hermite", "mc"],
      "quadrature": {"mc_samples": 2000, "tau_panels": 12, "tail_panels": 16, "tau_panel_order": 8,
                     "tail_order": 8}})");
    const std::string one = render(run_scenario(cfg, {1, false}), "csv");
    const std::string three = render(run_scenario(cfg, {3, false}), "csv");
    EXPECT_EQ(one, three);
    EXPECT_EQ(one, render(run_scenario(cfg, {2, false}), "csv"));
}

TEST(Run, HypoellipticityFailureBecomesErrorRows) {
    const ScenarioConfig cfg = parse_config(R"({
      "operator": {"N": 2, "Q": [[1, 0], [0, 0]], "B": [[0, 0], [0, 0]]},
      "functions": [{"kind": "isotropic", "center": [0, 0, 0]}],
      "s_values": [0.5], "points": [{"X": [0, 0], "t": 0}], "checks": ["frac_K"]})");
    const auto rows = run_scenario(cfg);
    ASSERT_FALSE(rows.empty());
    for (const auto& r : rows) {
        EXPECT_EQ(r.verdict, "error");
        EXPECT_NE(r.message.find("ypoellipt"), std::string::npos) << r.message;
    }
    EXPECT_FALSE(all_pass(rows));
}

TEST(Report, CsvHeaderAndJsonSummary) {
    const auto rows = run_scenario(parse_config(kHeat));
    const std::string csv = render(rows, "csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), csv_header());
    const auto j = nlohmann::json::parse(render(rows, "json"));
    EXPECT_EQ(j["rows"].size(), rows.size());
    EXPECT_EQ(j["summary"]["pass"], rows.size());
}

TEST(Sweep, TauPanelsConverges) {
    ScenarioConfig cfg = parse_config(kHeat);
    cfg.sweep_quantity = "frac_K";
    const SweepTable t = convergence_sweep(cfg, "tau_panels", {8, 16, 32});
    ASSERT_EQ(t.rows.size(), 3u);
    EXPECT_EQ(t.rows.back().residual, 0.0);
    EXPECT_LT(t.rows[1].residual, t.rows[0].residual);
    std::ostringstream os;
    write_sweep_csv(os, t);
    EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "axis,value,quantity,result,residual,order");
    EXPECT_THROW(convergence_sweep(cfg, "tau_panels", {8, 16}), InvalidInput);
    EXPECT_THROW(convergence_sweep(cfg, "bogus", {1, 2, 3}), InvalidInput);
}

TEST(Sweep, ConstantFunctionHasZeroResiduals) {
    const ScenarioConfig cfg = parse_config(R"({"operator": "kolmogorov",
      "functions": [{"kind": "constant", "value": 2.0}], "s_values": [0.5], "checks": ["frac_K"],
      "points": [{"X": [0.1, 0.2], "t": 0}]})");
    for (const char* axis : {"tau_panels", "hermite_order"}) {
        const SweepTable t = convergence_sweep(cfg, axis, {10, 20, 40});
        for (const auto& r : t.rows) {
            EXPECT_EQ(r.result, 0.0) << axis;
            EXPECT_EQ(r.residual, 0.0) << axis;
        }
    }
}

TEST(Config, EmptyChecksAndOrderOneRejected) {
    const auto errs = errors_of(R"({"operator": "heat",
      "functions": [{"kind": "constant", "value": 1.0}], "s_values": [1.0], "checks": []})");
    EXPECT_TRUE(mentions(errs, "$.checks"));
    EXPECT_TRUE(mentions(errs, "$.s_values[0]"));
}

TEST(Run, TwoEnginesGivePairedRows) {
    ScenarioConfig cfg = parse_config(kHeat);
    cfg.checks = {"frac_K"};
    cfg.engines = {Engine::exact, Engine::hermite};
    const auto rows = run_scenario(cfg);
    ASSERT_EQ(rows.size(), 2 * cfg.points.size());
    EXPECT_EQ(rows[0].engine, "exact");
    EXPECT_EQ(rows[1].engine, "hermite");
    EXPECT_TRUE(all_pass(rows));
}

TEST(Report, JsonRowsMatchShippedSchema) {
    std::ifstream in(std::string(KFP_SOURCE_DIR) + "/docs/report.schema.json");
    ASSERT_TRUE(in);
    const auto schema = nlohmann::json::parse(in);
    const auto& item = schema["properties"]["rows"]["items"];
    std::set<std::string> required;
    for (const auto& k : item["required"])
        required.insert(k.get<std::string>());
    const auto rows = run_scenario(parse_config(kHeat));
    const auto j = nlohmann::json::parse(render(rows, "json"));
    for (const auto& row : j["rows"]) {
        std::set<std::string> keys;
        for (const auto& [k, v] : row.items())
            keys.insert(k);
        EXPECT_EQ(keys, required);
    }
    for (const auto& k : schema["properties"]["summary"]["required"])
        EXPECT_TRUE(j["summary"].contains(k.get<std::string>()));
    // The CSV header lists the same columns.
    std::set<std::string> cols;
    std::stringstream header(csv_header());
    for (std::string c; std::getline(header, c, ',');)
        cols.insert(c);
    EXPECT_EQ(cols, required);
}
