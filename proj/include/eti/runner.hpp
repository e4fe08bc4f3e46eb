#pragma once

#include <eti/aggregate.hpp>
#include <eti/io.hpp>
#include <eti/synthetic.hpp>

#include <algorithm>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace eti {

/// Everything the batch commands need; filled from flags and/or a config file.
struct RunConfig {
    std::filesystem::path panel;
    std::optional<std::filesystem::path> budget;
    std::optional<std::filesystem::path> schedule;
    Spec spec = Spec::A;
    PenaltyMode mode = PenaltyMode::Scaled;
    std::vector<double> lambda_grid = default_lambda_grid();
    int min_obs = 15;
    double z = 1.96;
    std::filesystem::path out_dir = "out";
    std::uint64_t seed = 1;
    bool dof_correction = false;
    unsigned threads = 0;

    // diagnose
    double zeta_lambda = 1e-7;
    double zeta_threshold = 0.5;

    // simulate
    DGPConfig dgp;
};

inline void validate(const RunConfig& cfg, bool needs_grid)
{
    if (needs_grid) {
        if (cfg.lambda_grid.empty()) throw ConfigError("lambda grid is empty");
        if (!std::is_sorted(cfg.lambda_grid.begin(), cfg.lambda_grid.end()))
            throw ConfigError("lambda grid must be sorted ascending");
        for (double l : cfg.lambda_grid)
            if (!(l >= 0.0) || !std::isfinite(l)) throw ConfigError("lambda values must be finite and >= 0");
        if (cfg.lambda_grid.front() == 0.0 && cfg.min_obs < regressor_dim(cfg.spec))
            throw ConfigError("min-obs must be at least the regressor dimension when the grid contains 0");
    }
    if (cfg.min_obs < 1) throw ConfigError("min-obs must be at least 1");
    if (!(cfg.z > 0.0)) throw ConfigError("z must be positive");
}

inline io::IngestResult load_panel(const RunConfig& cfg, std::ostream& log)
{
    io::IngestConfig ic;
    ic.panel = cfg.panel;
    ic.budget = cfg.budget;
    ic.schedule = cfg.schedule;
    ic.spec = cfg.spec;
    ic.min_obs = cfg.min_obs;
    auto res = io::ingest(ic);
    log << "ingest: " << res.panel.size() << " individuals retained, " << res.dropped.size()
        << " dropped with fewer than " << cfg.min_obs << " observations\n";
    if (res.panel.empty()) throw DomainError("no individuals left after ingestion");
    return res;
}

struct EstimateOutput {
    std::vector<SweepEntry> entries;
    std::optional<double> first_significant_lambda;
    std::size_t dropped = 0;
};

/// Sweeps the lambda grid and writes estimates.csv (summary table),
/// estimates_full.csv (every coefficient) and report.json (full reports).
inline EstimateOutput run_estimate(const RunConfig& cfg, std::ostream& log)
{
    validate(cfg, true);
    const auto data = load_panel(cfg, log);

    SweepOptions opt;
    opt.mode = cfg.mode;
    opt.debias.dof_correction = cfg.dof_correction;
    opt.threads = cfg.threads;

    EstimateOutput out;
    out.entries = sweep(data.panel, cfg.lambda_grid, cfg.spec, opt);
    out.dropped = data.dropped.size();
    for (const auto& e : out.entries)
        if (e.error) log << "lambda " << io::format_double(e.lambda) << ": " << *e.error << '\n';
    if (auto i = first_significant(out.entries, kThetaIndex, cfg.z)) {
        out.first_significant_lambda = out.entries[*i].lambda;
        log << "theta first significant at lambda = " << io::format_double(out.entries[*i].lambda) << '\n';
    }

    io::ReportMeta meta{cfg.spec, cfg.mode, cfg.z, data.dropped.size()};
    io::atomic_write(cfg.out_dir / "estimates.csv",
                     io::estimates_csv(out.entries, cfg.spec, io::reported_coefficients(cfg.spec)));
    io::atomic_write(cfg.out_dir / "estimates_full.csv",
                     io::estimates_csv(out.entries, cfg.spec, io::all_coefficients(cfg.spec)));
    io::atomic_write(cfg.out_dir / "report.json", io::report_json(out.entries, meta));
    return out;
}

struct DiagnoseOutput {
    ZetaDiagnostic zeta;
    std::vector<std::string> weak_ids;
};

/// Zeta diagnostic at cfg.zeta_lambda; writes zeta_quantiles.csv and
/// zeta_individuals.csv.
inline DiagnoseOutput run_diagnose(const RunConfig& cfg, std::ostream& log)
{
    validate(cfg, false);
    const auto data = load_panel(cfg, log);
    SweepOptions opt;
    opt.mode = cfg.mode;
    opt.threads = cfg.threads;
    const auto fits = fit_panel(data.panel, cfg.spec, cfg.zeta_lambda, opt);

    DiagnoseOutput out;
    out.zeta = zeta_diagnostic(fits, kThetaIndex);
    for (std::size_t i = 0; i < data.panel.size(); ++i)
        if (out.zeta.zeta(static_cast<Eigen::Index>(i)) > cfg.zeta_threshold)
            out.weak_ids.push_back(data.panel[i].id);
    log << "diagnose: " << out.weak_ids.size() << " of " << data.panel.size()
        << " individuals above zeta threshold " << cfg.zeta_threshold << '\n';

    io::atomic_write(cfg.out_dir / "zeta_quantiles.csv", io::zeta_quantiles_csv(out.zeta));
    io::atomic_write(cfg.out_dir / "zeta_individuals.csv",
                     io::zeta_individuals_csv(data.panel, out.zeta, cfg.zeta_threshold));
    return out;
}

/// Writes panel.csv, budget.csv and truth.csv in the formats ingest reads.
inline SyntheticPanel run_simulate(const RunConfig& cfg, std::ostream& log)
{
    DGPConfig dgp = cfg.dgp;
    dgp.seed = cfg.seed;
    dgp.spec = cfg.spec;
    auto sp = generate_panel(dgp);
    io::atomic_write(cfg.out_dir / "panel.csv", io::panel_csv(sp));
    io::atomic_write(cfg.out_dir / "budget.csv", io::budget_csv(io::keyed_budgets(sp)));
    io::atomic_write(cfg.out_dir / "truth.csv", io::truth_csv(sp.truth, dgp.spec));
    log << "simulate: wrote " << sp.panel.size() << " individuals x " << dgp.T << " periods to "
        << cfg.out_dir.string() << '\n';
    return sp;
}

/// Converts a schedule file into a budget file.
inline std::size_t run_budget(const std::filesystem::path& schedule, const std::filesystem::path& out,
                              std::ostream& log)
{
    const auto budgets = io::budgets_from_schedules(io::read_schedule_csv(schedule));
    io::atomic_write(out, io::budget_csv(budgets));
    log << "budget: converted " << budgets.size() << " schedules\n";
    return budgets.size();
}

} // namespace eti
