#pragma once

#include <eti/aggregate.hpp>
#include <eti/budget.hpp>
#include <eti/errors.hpp>
#include <eti/estimator.hpp>
#include <eti/synthetic.hpp>

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace eti::io {

namespace fs = std::filesystem;

/// 17 significant digits: parses back to the identical double.
inline std::string format_double(double x)
{
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

/// Writes to a sibling temporary file and renames it over the target.
inline void atomic_write(const fs::path& path, const std::string& content)
{
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ConfigError("cannot open " + tmp.string() + " for writing");
        out << content;
        out.flush();
        if (!out) throw ConfigError("failed writing " + tmp.string());
    }
    fs::rename(tmp, path);
}

// ---------------------------------------------------------------- CSV reading

struct CsvTable {
    std::string source;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<int> lines; // 1-based file line of each row

    std::size_t column(std::string_view name) const
    {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end())
            throw ParseError(source + ": missing required column '" + std::string(name) + "'");
        return static_cast<std::size_t>(it - header.begin());
    }

    std::string where(std::size_t r) const { return source + ":" + std::to_string(lines[r]); }
};

inline std::string_view trim(std::string_view s)
{
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string> split_csv_line(std::string_view line)
{
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        out.emplace_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline CsvTable parse_csv(std::istream& in, const std::string& source)
{
    CsvTable t;
    t.source = source;
    std::string line;
    int lineno = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (lineno == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
        if (trim(line).empty()) continue;
        auto fields = split_csv_line(line);
        if (!have_header) {
            t.header = std::move(fields);
            have_header = true;
            continue;
        }
        if (fields.size() != t.header.size())
            throw ParseError(source + ":" + std::to_string(lineno) + ": expected " +
                             std::to_string(t.header.size()) + " fields, found " +
                             std::to_string(fields.size()));
        t.rows.push_back(std::move(fields));
        t.lines.push_back(lineno);
    }
    if (!have_header) throw ParseError(source + ": missing header row");
    return t;
}

inline CsvTable read_csv(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path.string());
    return parse_csv(in, path.string());
}

inline double parse_number(const std::string& s, const std::string& where, const char* field)
{
    double v = 0.0;
    const auto* end = s.data() + s.size();
    auto [p, ec] = std::from_chars(s.data(), end, v);
    if (s.empty() || ec != std::errc() || p != end)
        throw ParseError(where + ": field '" + field + "' is not a number: '" + s + "'");
    return v;
}

inline int parse_int(const std::string& s, const std::string& where, const char* field)
{
    int v = 0;
    const auto* end = s.data() + s.size();
    auto [p, ec] = std::from_chars(s.data(), end, v);
    if (s.empty() || ec != std::errc() || p != end)
        throw ParseError(where + ": field '" + field + "' is not an integer: '" + s + "'");
    return v;
}

// ------------------------------------------------------------- domain files

using Key = std::pair<std::string, int>; // (id, year)

struct OutcomeRow {
    std::string id;
    int year = 0;
    double income = 0.0;
    std::string where;
};

/// Panel file: id, year, income (taxable income in levels, > 0).
inline std::vector<OutcomeRow> read_panel_csv(const fs::path& path)
{
    const auto t = read_csv(path);
    const auto c_id = t.column("id"), c_year = t.column("year"), c_inc = t.column("income");
    std::vector<OutcomeRow> out;
    out.reserve(t.rows.size());
    std::map<Key, int> seen;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        OutcomeRow o;
        o.where = t.where(r);
        o.id = row[c_id];
        if (o.id.empty()) throw ParseError(o.where + ": empty id");
        o.year = parse_int(row[c_year], o.where, "year");
        o.income = parse_number(row[c_inc], o.where, "income");
        if (!(o.income > 0.0) || !std::isfinite(o.income))
            throw ParseError(o.where + ": income must be positive, got " + row[c_inc]);
        if (!seen.emplace(Key{o.id, o.year}, t.lines[r]).second)
            throw ParseError(o.where + ": duplicate observation for id '" + o.id + "' year " +
                             std::to_string(o.year));
        out.push_back(std::move(o));
    }
    return out;
}

/// Budget file: id, year, segment_index (1-based), slope, right_kink
/// (empty on the last segment), virtual_income.
inline std::map<Key, BudgetSet> read_budget_csv(const fs::path& path)
{
    const auto t = read_csv(path);
    const auto c_id = t.column("id"), c_year = t.column("year"), c_seg = t.column("segment_index"),
               c_slope = t.column("slope"), c_kink = t.column("right_kink"),
               c_vi = t.column("virtual_income");

    struct Pending {
        std::map<int, Segment> segs;
        std::string where;
    };
    std::map<Key, Pending> groups;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        const auto where = t.where(r);
        Segment s;
        const int seg = parse_int(row[c_seg], where, "segment_index");
        s.slope = parse_number(row[c_slope], where, "slope");
        if (!(s.slope > 0.0) || !std::isfinite(s.slope))
            throw ParseError(where + ": slope must be positive, got " + row[c_slope]);
        s.virtual_income = parse_number(row[c_vi], where, "virtual_income");
        if (!(s.virtual_income > 0.0) || !std::isfinite(s.virtual_income))
            throw ParseError(where + ": virtual_income must be positive, got " + row[c_vi]);
        s.right_kink = row[c_kink].empty() ? kInfinity : parse_number(row[c_kink], where, "right_kink");
        auto& g = groups[Key{row[c_id], parse_int(row[c_year], where, "year")}];
        if (g.where.empty()) g.where = where;
        if (!g.segs.emplace(seg, s).second)
            throw ParseError(where + ": duplicate segment_index " + std::to_string(seg));
    }

    std::map<Key, BudgetSet> out;
    for (auto& [key, g] : groups) {
        BudgetSet b;
        int expect = 1;
        for (auto& [idx, s] : g.segs) {
            if (idx != expect)
                throw ParseError(g.where + ": segment indices for id '" + key.first + "' year " +
                                 std::to_string(key.second) + " must run 1..J");
            b.segments.push_back(s);
            ++expect;
        }
        const auto bad = validate(b);
        if (!bad.empty())
            throw ParseError(g.where + ": invalid budget set for id '" + key.first + "' year " +
                             std::to_string(key.second) + ": " + to_string(bad.front()));
        out.emplace(key, std::move(b));
    }
    return out;
}

/// Schedule file: id, year, threshold, marginal_rate, nonlabor_income.
inline std::map<Key, TaxSchedule> read_schedule_csv(const fs::path& path)
{
    const auto t = read_csv(path);
    const auto c_id = t.column("id"), c_year = t.column("year"), c_thr = t.column("threshold"),
               c_rate = t.column("marginal_rate"), c_nl = t.column("nonlabor_income");
    std::map<Key, TaxSchedule> out;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        const auto where = t.where(r);
        Key key{row[c_id], parse_int(row[c_year], where, "year")};
        const double nl = parse_number(row[c_nl], where, "nonlabor_income");
        if (!(nl > 0.0)) throw ParseError(where + ": nonlabor_income must be positive");
        auto [it, fresh] = out.try_emplace(key);
        if (fresh)
            it->second.nonlabor_income = nl;
        else if (it->second.nonlabor_income != nl)
            throw ParseError(where + ": nonlabor_income differs within id '" + key.first + "' year " +
                             std::to_string(key.second));
        it->second.brackets.push_back(
            {parse_number(row[c_thr], where, "threshold"), parse_number(row[c_rate], where, "marginal_rate")});
    }
    for (auto& [key, s] : out)
        std::sort(s.brackets.begin(), s.brackets.end(),
                  [](const Bracket& a, const Bracket& b) { return a.threshold < b.threshold; });
    return out;
}

inline std::map<Key, BudgetSet> budgets_from_schedules(const std::map<Key, TaxSchedule>& schedules)
{
    std::map<Key, BudgetSet> out;
    for (const auto& [key, s] : schedules) {
        try {
            out.emplace(key, budget_from_schedule(s));
        } catch (const Error& e) {
            throw ParseError("schedule for id '" + key.first + "' year " + std::to_string(key.second) +
                             ": " + e.what());
        }
    }
    return out;
}

inline std::string budget_csv(const std::map<Key, BudgetSet>& budgets)
{
    std::ostringstream os;
    os << "id,year,segment_index,slope,right_kink,virtual_income\n";
    for (const auto& [key, b] : budgets)
        for (std::size_t j = 0; j < b.size(); ++j) {
            const auto& s = b.segments[j];
            os << key.first << ',' << key.second << ',' << j + 1 << ',' << format_double(s.slope) << ','
               << (j + 1 == b.size() ? std::string() : format_double(s.right_kink)) << ','
               << format_double(s.virtual_income) << '\n';
        }
    return os.str();
}

// ------------------------------------------------------------------ ingest

struct IngestConfig {
    fs::path panel;
    std::optional<fs::path> budget;   // exactly one of budget / schedule
    std::optional<fs::path> schedule;
    Spec spec = Spec::A;
    int min_obs = 15;
};

struct IngestResult {
    Panel panel;
    std::vector<std::string> dropped; // ids with fewer than min_obs rows
};

/// Joins outcomes to budget sets by (id, year), converts incomes to logs
/// and years to t = year - first observed year, and drops individuals
/// with fewer than min_obs observations. Output is ordered by id.
inline IngestResult ingest(const IngestConfig& cfg)
{
    if (cfg.budget.has_value() == cfg.schedule.has_value())
        throw ConfigError("provide exactly one of a budget file or a schedule file");
    const auto outcomes = read_panel_csv(cfg.panel);
    const auto budgets = cfg.budget ? read_budget_csv(*cfg.budget)
                                    : budgets_from_schedules(read_schedule_csv(*cfg.schedule));

    std::map<std::string, std::vector<const OutcomeRow*>> by_id;
    for (const auto& o : outcomes) by_id[o.id].push_back(&o);

    IngestResult res;
    for (auto& [id, rows] : by_id) {
        std::sort(rows.begin(), rows.end(), [](auto* a, auto* b) { return a->year < b->year; });
        for (const auto* o : rows)
            if (!budgets.count(Key{id, o->year}))
                throw JoinError(o->where + ": no budget set for id '" + id + "' year " +
                                std::to_string(o->year));
        if (static_cast<int>(rows.size()) < cfg.min_obs) {
            res.dropped.push_back(id);
            continue;
        }
        PanelSeries s;
        s.id = id;
        const int base = rows.front()->year;
        for (const auto* o : rows) {
            Observation obs;
            obs.y = std::log(o->income);
            try {
                obs.x = regressors(budgets.at(Key{id, o->year}), o->year - base, cfg.spec);
            } catch (const DomainError& e) {
                throw ParseError(o->where + ": " + e.what());
            }
            s.rows.push_back(std::move(obs));
        }
        res.panel.push_back(std::move(s));
    }
    return res;
}

// ----------------------------------------------------------- report output

/// Coefficients shown in the summary table: theta, plus gamma under spec b.
inline std::vector<Eigen::Index> reported_coefficients(Spec spec)
{
    if (spec == Spec::A) return {kThetaIndex};
    return {kThetaIndex, kGammaIndex};
}

inline Spec spec_for_dim(Eigen::Index k)
{
    if (k == regressor_dim(Spec::A)) return Spec::A;
    if (k == regressor_dim(Spec::B)) return Spec::B;
    throw DomainError("no specification has " + std::to_string(k) + " regressors");
}

inline std::string estimates_csv(const std::vector<SweepEntry>& entries, Spec spec,
                                 const std::vector<Eigen::Index>& coords)
{
    const auto names = coefficient_names(spec);
    std::ostringstream os;
    os << "lambda";
    for (auto k : coords) os << ",nondebiased_" << names[k] << ",debiased_" << names[k] << ",se_" << names[k];
    os << '\n';
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (const auto& e : entries) {
        os << format_double(e.lambda);
        for (auto k : coords) {
            if (e.report)
                os << ',' << format_double(e.report->naive_avg(k)) << ','
                   << format_double(e.report->beta_tilde(k)) << ',' << format_double(e.report->std_errors(k));
            else
                os << ',' << format_double(nan) << ',' << format_double(nan) << ',' << format_double(nan);
        }
        os << '\n';
    }
    return os.str();
}

inline std::vector<Eigen::Index> all_coefficients(Spec spec)
{
    std::vector<Eigen::Index> v(static_cast<std::size_t>(regressor_dim(spec)));
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = static_cast<Eigen::Index>(k);
    return v;
}

using nlohmann::json;

inline json to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline json to_json(const Matrix& m)
{
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(to_json(Vector(m.row(r).transpose())));
    return rows;
}

inline Vector vector_from_json(const json& j)
{
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline Matrix matrix_from_json(const json& j)
{
    const auto r = static_cast<Eigen::Index>(j.size());
    const auto c = r > 0 ? static_cast<Eigen::Index>(j[0].size()) : 0;
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < r; ++i) m.row(i) = vector_from_json(j[i]).transpose();
    return m;
}

inline json to_json(const DebiasReport& r)
{
    return json{{"lambda", r.lambda},
                {"n", r.n},
                {"naive_avg", to_json(r.naive_avg)},
                {"W_bar", to_json(r.W_bar)},
                {"beta_tilde", to_json(r.beta_tilde)},
                {"V_hat", to_json(r.V_hat)},
                {"std_errors", to_json(r.std_errors)}};
}

inline DebiasReport report_from_json(const json& j)
{
    DebiasReport r;
    r.lambda = j.at("lambda").get<double>();
    r.n = j.at("n").get<int>();
    r.naive_avg = vector_from_json(j.at("naive_avg"));
    r.W_bar = matrix_from_json(j.at("W_bar"));
    r.beta_tilde = vector_from_json(j.at("beta_tilde"));
    r.V_hat = matrix_from_json(j.at("V_hat"));
    r.std_errors = vector_from_json(j.at("std_errors"));
    return r;
}

struct ReportMeta {
    Spec spec = Spec::A;
    PenaltyMode mode = PenaltyMode::Scaled;
    double z = 1.96;
    std::size_t dropped = 0;
};

inline std::string report_json(const std::vector<SweepEntry>& entries, const ReportMeta& meta)
{
    json j;
    j["spec"] = to_string(meta.spec);
    j["penalty"] = to_string(meta.mode);
    j["coefficients"] = coefficient_names(meta.spec);
    j["z"] = meta.z;
    j["dropped_individuals"] = meta.dropped;
    const auto sig = first_significant(entries, kThetaIndex, meta.z);
    j["first_significant_lambda"] = sig ? json(entries[*sig].lambda) : json(nullptr);
    json arr = json::array();
    for (const auto& e : entries) {
        json item;
        if (e.report)
            item = to_json(*e.report);
        else
            item = json{{"lambda", e.lambda}, {"error", e.error.value_or("unknown error")}};
        arr.push_back(std::move(item));
    }
    j["entries"] = std::move(arr);
    return j.dump(2) + "\n";
}

/// Parses a report written by report_json back into sweep entries.
inline std::vector<SweepEntry> read_report_json(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    std::vector<SweepEntry> out;
    for (const auto& item : j.at("entries")) {
        SweepEntry e;
        e.lambda = item.at("lambda").get<double>();
        if (item.contains("error"))
            e.error = item.at("error").get<std::string>();
        else
            e.report = report_from_json(item);
        out.push_back(std::move(e));
    }
    return out;
}

// -------------------------------------------------------------- diagnostics

inline std::string zeta_quantiles_csv(const ZetaDiagnostic& d)
{
    std::ostringstream os;
    os << "p,zeta\n";
    char p[16];
    for (const auto& [prob, val] : d.quantiles) {
        std::snprintf(p, sizeof p, "%.2f", prob);
        os << p << ',' << format_double(val) << '\n';
    }
    return os.str();
}

inline std::string zeta_individuals_csv(const Panel& panel, const ZetaDiagnostic& d, double threshold)
{
    std::ostringstream os;
    os << "id,zeta,weakly_identified\n";
    for (std::size_t i = 0; i < panel.size(); ++i) {
        const double z = d.zeta(static_cast<Eigen::Index>(i));
        os << panel[i].id << ',' << format_double(z) << ',' << (z > threshold ? 1 : 0) << '\n';
    }
    return os.str();
}

// --------------------------------------------------------- simulation output

inline std::string panel_csv(const SyntheticPanel& sp)
{
    std::ostringstream os;
    os << "id,year,income\n";
    for (const auto& s : sp.panel)
        for (const auto& r : s.rows)
            os << s.id << ',' << sp.base_year + r.x.t << ',' << format_double(std::exp(r.y)) << '\n';
    return os.str();
}

inline std::map<Key, BudgetSet> keyed_budgets(const SyntheticPanel& sp)
{
    std::map<Key, BudgetSet> out;
    for (std::size_t i = 0; i < sp.panel.size(); ++i)
        for (std::size_t t = 0; t < sp.budgets[i].size(); ++t)
            out.emplace(Key{sp.panel[i].id, sp.base_year + static_cast<int>(t)}, sp.budgets[i][t]);
    return out;
}

inline std::string truth_csv(const TruthRecord& truth, Spec spec)
{
    const auto names = coefficient_names(spec);
    std::ostringstream os;
    os << "id";
    for (const auto& n : names) os << ',' << n;
    os << '\n';
    for (std::size_t i = 0; i < truth.ids.size(); ++i) {
        os << truth.ids[i];
        for (Eigen::Index k = 0; k < truth.beta[i].size(); ++k) os << ',' << format_double(truth.beta[i](k));
        os << '\n';
    }
    return os.str();
}

} // namespace eti::io
