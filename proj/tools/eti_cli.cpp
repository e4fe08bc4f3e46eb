// Command-line front end: estimate | diagnose | simulate | budget.
//
// Exit codes: 0 success, 1 configuration error, 2 data error,
// 3 numerical failure.

#include <eti/eti.hpp>

#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

int exit_code(eti::ErrorKind k)
{
    switch (k) {
    case eti::ErrorKind::config: return kExitConfig;
    case eti::ErrorKind::data: return kExitData;
    case eti::ErrorKind::numerical: return kExitNumerical;
    }
    return kExitConfig;
}

std::vector<double> parse_grid(const std::string& text)
{
    std::vector<double> grid;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto t = std::string(eti::io::trim(item));
        if (t.empty()) continue;
        try {
            std::size_t used = 0;
            grid.push_back(std::stod(t, &used));
            if (used != t.size()) throw std::invalid_argument(t);
        } catch (const std::exception&) {
            throw eti::ConfigError("bad lambda grid entry '" + t + "'");
        }
    }
    if (grid.empty()) throw eti::ConfigError("lambda grid is empty");
    return grid;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Debiased average ridge estimation of heterogeneous taxable income elasticities"};
    app.set_config("--config", "", "key=value configuration file (TOML/INI)");
    app.require_subcommand(1);

    eti::RunConfig cfg;
    std::string panel, budget, schedule, out = "out", grid_text;
    const std::map<std::string, eti::Spec> specs{{"a", eti::Spec::A}, {"b", eti::Spec::B}};
    const std::map<std::string, eti::PenaltyMode> modes{{"unit", eti::PenaltyMode::Unit},
                                                        {"scaled", eti::PenaltyMode::Scaled}};
    const std::map<std::string, eti::Generator> gens{{"reduced", eti::Generator::Reduced},
                                                     {"structural", eti::Generator::Structural}};

    app.add_option("--panel", panel, "panel CSV (id,year,income)");
    app.add_option("--budget", budget, "budget CSV (id,year,segment_index,slope,right_kink,virtual_income)");
    app.add_option("--schedule", schedule, "schedule CSV (id,year,threshold,marginal_rate,nonlabor_income)");
    app.add_option("--spec", cfg.spec, "regressor specification")->transform(CLI::CheckedTransformer(specs));
    app.add_option("--penalty", cfg.mode, "ridge penalty")->transform(CLI::CheckedTransformer(modes));
    app.add_option("--lambda-grid", grid_text, "comma-separated ascending lambda values");
    app.add_option("--min-obs", cfg.min_obs, "minimum observations per individual");
    app.add_option("--z", cfg.z, "critical value for significance and intervals");
    app.add_option("--out", out, "output directory");
    app.add_option("--seed", cfg.seed, "simulation seed");
    app.add_option("--threads", cfg.threads, "worker threads (0 = all cores)");
    app.add_flag("--dof-correction", cfg.dof_correction, "scale the variance by n/(n-1)");

    auto* est = app.add_subcommand("estimate", "sweep the lambda grid and write report tables");
    auto* diag = app.add_subcommand("diagnose", "per-individual identification diagnostic");
    diag->add_option("--lambda", cfg.zeta_lambda, "ridge penalty for the diagnostic");
    diag->add_option("--zeta-threshold", cfg.zeta_threshold, "flag individuals above this value");

    auto* sim = app.add_subcommand("simulate", "write a synthetic panel with its true coefficients");
    auto& dgp = cfg.dgp;
    sim->add_option("--n", dgp.n, "individuals");
    sim->add_option("--T", dgp.T, "periods per individual");
    sim->add_option("--generator", dgp.generator, "data generator")->transform(CLI::CheckedTransformer(gens));
    sim->add_option("--theta-mean", dgp.population.theta_mean, "population mean of theta");
    sim->add_option("--theta-log-sd", dgp.population.theta_log_sd, "log-sd of theta");
    sim->add_option("--noise-sd", dgp.noise.sd, "sd of the reduced-form error");
    sim->add_flag("--heteroskedastic", dgp.noise.heteroskedastic, "budget-dependent error variance");
    sim->add_option("--endogeneity", dgp.budgets.strength_a, "rate shift per sd of the intercept");
    sim->add_option("--endogeneity-theta", dgp.budgets.strength_theta, "rate shift per sd of ln theta");
    bool homogeneous = false;
    sim->add_flag("--homogeneous", homogeneous, "common coefficients for every individual");

    auto* bud = app.add_subcommand("budget", "convert a schedule file into a budget file");

    for (auto* sub : {est, diag, sim, bud}) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }

    try {
        cfg.out_dir = out;
        if (!grid_text.empty()) cfg.lambda_grid = parse_grid(grid_text);
        if (!panel.empty()) cfg.panel = panel;
        if (!budget.empty()) cfg.budget = budget;
        if (!schedule.empty()) cfg.schedule = schedule;

        if (*est || *diag) {
            if (panel.empty()) throw eti::ConfigError("--panel is required");
        }
        if (*est) {
            auto res = eti::run_estimate(cfg, std::clog);
            const bool any_ok =
                std::any_of(res.entries.begin(), res.entries.end(), [](const auto& e) { return e.report.has_value(); });
            return any_ok ? 0 : kExitNumerical;
        }
        if (*diag) {
            eti::run_diagnose(cfg, std::clog);
            return 0;
        }
        if (*sim) {
            if (homogeneous) {
                auto& p = dgp.population;
                p.theta_log_sd = p.gamma_log_sd = p.alpha_sd = p.a_sd = p.cbar_sd = 0.0;
            }
            eti::center_budget_draws(dgp);
            eti::run_simulate(cfg, std::clog);
            return 0;
        }
        if (*bud) {
            if (schedule.empty()) throw eti::ConfigError("--schedule is required");
            eti::run_budget(schedule, cfg.out_dir / "budget.csv", std::clog);
            return 0;
        }
    } catch (const eti::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code(e.kind());
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    }
    return 0;
}
