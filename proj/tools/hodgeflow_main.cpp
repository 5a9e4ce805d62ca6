// Command-line front end: exact decomposition of TD-error fields, seeded
// training runs, theorem-style diagnostics, and metric-table reports.
//
// Exit codes: 0 success, 2 input/config error, 3 numerical failure,
// 4 divergence during training (partial outputs retained).

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "hodgeflow/hodgeflow.hpp"

namespace fs = std::filesystem;
using namespace hodgeflow;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitDivergence = 4;

std::vector<std::uint64_t> parse_seed_list(const std::string& spec) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(spec);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        out.push_back(std::stoull(tok));
    }
    if (out.empty()) throw ContractError("--seeds: empty seed list");
    return out;
}

std::string timestamp_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t tt = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                        now.time_since_epoch()).count() % 1000;
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%04d%02d%02d-%02d%02d%02d%03d", tm.tm_year + 1900,
                  tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec,
                  static_cast<int>(ms));
    return buf;
}

// Reruns never append: fresh timestamped directory unless --overwrite pins
// the name.
fs::path prepare_out_dir(const std::string& base, const std::string& name, bool overwrite) {
    fs::path dir = fs::path(base) / (overwrite ? name : name + "-" + timestamp_now());
    if (!overwrite && fs::exists(dir)) {
        int k = 1;
        fs::path probe;
        do {
            probe = fs::path(base) / (name + "-" + timestamp_now() + "-" + std::to_string(k++));
        } while (fs::exists(probe));
        dir = probe;
    }
    fs::create_directories(dir);
    return dir;
}

std::string env_name(const EnvSpec& spec) {
    switch (spec.kind) {
        case EnvSpec::Kind::Ring:
            return spec.ring.mode == RingSpec::Mode::Integrable ? "ring-integrable"
                                                                : "ring-nonintegrable";
        case EnvSpec::Kind::RandomFeature:
            return "random_feature";
        case EnvSpec::Kind::PointMass:
            return "pointmass";
    }
    return "env";
}

std::string regime_name(const std::vector<WrapperSpec>& wrappers) {
    if (wrappers.empty()) return "clean";
    std::string out;
    for (const auto& w : wrappers) {
        if (!out.empty()) out += "+";
        switch (w.kind) {
            case WrapperSpec::Kind::HoldLast: out += "holdlast"; break;
            case WrapperSpec::Kind::Noisy: out += "noisy"; break;
            case WrapperSpec::Kind::Sticky: out += "sticky"; break;
        }
    }
    return out;
}

int cmd_decompose(const std::string& mdp_path, const std::string& policy_path,
                  const std::string& values_path, const std::string& out_base, bool overwrite,
                  bool verbose) {
    const MdpDocument doc = load_mdp(mdp_path);
    const FiniteMdp& mdp = doc.mdp;
    const PolicyTable policy =
        policy_path == "uniform"
            ? PolicyTable::uniform(mdp.n_states(), mdp.n_actions())
            : load_policy(policy_path, mdp.n_states(), mdp.n_actions());
    auto occ = std::make_shared<const OccupancyMeasures>(exact_occupancy(mdp, policy, doc.d0));
    const VectorXd v = values_path == "exact"  ? exact_value(mdp, policy)
                       : values_path == "zero" ? VectorXd::Zero(mdp.n_states())
                                               : load_values(values_path, mdp.n_states());
    const Cochain0 value(occ, v);
    const DiffOperator op(occ, mdp.gamma());
    const Cochain1 delta = td_field(mdp, occ, value);
    const HodgeDecomposition dec = decompose(op, delta);
    const Cochain0 defect = mean_defect(mdp, policy, value);

    const fs::path dir = prepare_out_dir(out_base, "decompose", overwrite);
    const json report = decomposition_report(dec, mdp, defect);
    write_text_file((dir / "decomposition.json").string(), report.dump(2) + "\n");

    std::printf("norm_input        %s\n", format_double(dec.norm_input).c_str());
    std::printf("norm_exact        %s\n", format_double(dec.norm_exact).c_str());
    std::printf("norm_residual     %s\n", format_double(dec.norm_residual).c_str());
    std::printf("pythagoras_defect %s\n", format_double(dec.pythagoras_defect).c_str());
    std::printf("max_mean_defect   %s\n",
                format_double(defect.values().cwiseAbs().maxCoeff()).c_str());
    if (verbose) std::printf("report written to %s\n", (dir / "decomposition.json").c_str());
    return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& out_base,
              const std::string& seed_override, bool overwrite, bool verbose) {
    RunConfig cfg = load_run_config(config_path);
    if (!seed_override.empty()) cfg.seeds = parse_seed_list(seed_override);
    cfg.validate();

    const MetricSeries series = run_experiment(cfg);

    const std::string stem = env_name(cfg.env) + "_" + regime_name(cfg.wrappers) + "_" +
                             cfg.agent.kind;
    const fs::path dir = prepare_out_dir(out_base, fs::path(config_path).stem().string(),
                                         overwrite);
    write_text_file((dir / (stem + ".tsv")).string(), metric_series_tsv(series));
    const std::string msve_tsv = msve_series_tsv(series);
    if (msve_tsv.find('\n') != msve_tsv.rfind('\n'))
        write_text_file((dir / (stem + "_msve.tsv")).string(), msve_tsv);
    write_text_file((dir / "summary.tsv").string(), summary_tsv(cfg.agent.kind, series));

    int failed = 0;
    for (const auto& s : series.per_seed)
        if (s.failed) ++failed;
    for (const auto& s : series.per_seed)
        if (s.failed)
            std::fprintf(stderr, "seed %llu diverged at step %lld\n",
                         static_cast<unsigned long long>(s.seed), s.fail_step);
    const AucSummary auc = auc_at_t(series);
    const MeanStd fin = final_at_t(series);
    std::printf("%s: seeds=%zu failed=%d auc_mean=%s final_mean=%s\n", stem.c_str(),
                series.per_seed.size(), failed,
                format_double(auc.agg.n > 0 ? auc.agg.mean : 0.0).c_str(),
                format_double(fin.n > 0 ? fin.mean : 0.0).c_str());
    if (verbose) std::printf("metrics written to %s\n", dir.c_str());
    return failed > 0 ? kExitDivergence : kExitOk;
}

struct SuiteCheck {
    TheoremReport report;
    bool expected_pass;
};

int cmd_diagnose(const std::string& config_path, const std::string& out_base, bool overwrite,
                 bool verbose) {
    json cfg = json::object();
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw ContractError("cannot open config: " + config_path);
        try {
            in >> cfg;
        } catch (const json::exception& e) {
            throw ContractError(std::string("config parse error: ") + e.what());
        }
    }
    const int n_random = cfg.value("n_random_mdps", 5);
    const bool negative_controls = cfg.value("negative_controls", true);
    const std::uint64_t base_seed = cfg.value("seed", 0ULL);
    const std::vector<double> gammas =
        cfg.value("gammas", std::vector<double>{0.9, 0.95, 0.99});

    RingSpec ring_spec;
    ring_spec.mode = RingSpec::Mode::NonIntegrable;
    ring_spec.potential_seed = base_seed;
    auto ring = make_ring(ring_spec);
    const PolicyTable ring_policy = PolicyTable::uniform(ring_spec.n, 2);
    const InitialDistribution ring_d0 = InitialDistribution::uniform(ring_spec.n);
    auto ring_occ = std::make_shared<const OccupancyMeasures>(
        exact_occupancy(*ring.mdp, ring_policy, ring_d0));
    const DiffOperator ring_op(ring_occ, ring_spec.gamma);
    const Cochain1 ring_delta = td_field(*ring.mdp, ring_occ, Cochain0::zero(ring_occ));

    std::vector<SuiteCheck> checks;

    {
        std::mt19937_64 rng(mix_seed(base_seed, 7));
        std::normal_distribution<double> gauss;
        VectorXd bump(ring_occ->support_size());
        for (long i = 0; i < bump.size(); ++i) bump[i] = 0.05 * gauss(rng);
        const Cochain1 f2(ring_occ, ring_delta.values() + bump);
        checks.push_back({check_stability(ring_op, ring_delta, f2), true});
    }
    checks.push_back({check_gamma_sensitivity(*ring.mdp, ring_policy, ring_d0,
                                              exact_value(*ring.mdp, ring_policy), gammas),
                      true});
    checks.push_back({check_bias_bound(*ring.mdp, ring_policy, ring_d0,
                                       VectorXd::Zero(ring_spec.n)),
                      true});
    checks.push_back({check_consistency_trend(*ring.mdp, ring_policy, ring_d0,
                                              VectorXd::Zero(ring_spec.n), {100, 1000, 10000},
                                              {0, 1, 2, 3, 4, 5, 6, 7, 8, 9}),
                      true});
    for (int i = 0; i < n_random; ++i) {
        const FiniteMdp mdp = random_mdp(8, 2, 0.9, mix_seed(base_seed, 100 + i));
        const PolicyTable pol = random_policy(8, 2, mix_seed(base_seed, 200 + i));
        checks.push_back(
            {check_perfect_mdp_degeneracy(mdp, pol, InitialDistribution::uniform(8)), true});
    }
    checks.push_back({check_neighborhood_convergence(
                          make_linear_eval_setup(20, 2, 8, 0.9, mix_seed(base_seed, 300)),
                          {0.0, 0.01, 0.02, 0.04, 0.08}),
                      true});
    if (negative_controls) {
        const FiniteMdp mdp = random_mdp(6, 2, 0.9, mix_seed(base_seed, 400));
        const PolicyTable pol = random_policy(6, 2, mix_seed(base_seed, 401));
        const VectorXd shifted = exact_value(mdp, pol).array() + 1.0;
        checks.push_back({check_perfect_mdp_degeneracy(mdp, pol,
                                                       InitialDistribution::uniform(6), &shifted),
                          false});
        checks.push_back({check_bias_bound(*ring.mdp, ring_policy, ring_d0,
                                           VectorXd::Zero(ring_spec.n), nullptr,
                                           /*bound_scale=*/1e-3),
                          false});
    }

    const fs::path dir = prepare_out_dir(out_base, "diagnose", overwrite);
    json all = json::array();
    bool ok = true;
    std::printf("%-34s %-8s %-10s %s\n", "check", "result", "expected", "as_expected");
    int idx = 0;
    for (const auto& c : checks) {
        const bool as_expected = c.report.pass == c.expected_pass;
        ok = ok && as_expected;
        all.push_back(theorem_report_to_json(c.report, c.expected_pass));
        std::printf("%-34s %-8s %-10s %s\n",
                    (c.report.name + "#" + std::to_string(idx++)).c_str(),
                    c.report.pass ? "pass" : "fail", c.expected_pass ? "pass" : "fail",
                    as_expected ? "yes" : "NO");
    }
    write_text_file((dir / "theorem_reports.json").string(), all.dump(2) + "\n");
    if (verbose) std::printf("reports written to %s\n", dir.c_str());
    return ok ? kExitOk : kExitNumerical;
}

int cmd_report(const std::string& metric_dir, const std::string& out_base, bool overwrite) {
    if (!fs::is_directory(metric_dir)) throw ContractError("not a directory: " + metric_dir);
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(metric_dir)) {
        const std::string name = entry.path().filename().string();
        if (entry.is_regular_file() && name.size() > 4 &&
            name.substr(name.size() - 4) == ".tsv" && name != "summary.tsv" &&
            name.find("_msve") == std::string::npos &&
            name.find("summary_report") == std::string::npos)
            files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw ContractError("no metric files found in " + metric_dir);

    struct Row {
        std::string label;
        AucSummary auc;
        MeanStd fin;
    };
    std::vector<Row> rows;
    for (const auto& path : files) {
        std::ifstream in(path);
        std::string header;
        std::getline(in, header);
        if (header.rfind("step\tseed\treturn", 0) != 0)
            throw ContractError(path.string() + ": unexpected metric header");
        std::map<std::uint64_t, std::vector<std::pair<long long, double>>> by_seed;
        long long step;
        std::uint64_t seed;
        std::string ret_s, resid_s;
        while (in >> step >> seed >> ret_s >> resid_s)
            by_seed[seed].push_back({step, std::stod(ret_s)});
        if (by_seed.empty()) throw ContractError(path.string() + ": no rows");
        MetricSeries series;
        bool first = true;
        for (auto& [sd, pts] : by_seed) {
            SeedSeries ss;
            ss.seed = sd;
            for (auto& [t, r] : pts) {
                if (first) series.steps.push_back(t);
                ss.returns.push_back(r);
                ss.residuals.push_back(0.0);
            }
            first = false;
            series.per_seed.push_back(std::move(ss));
        }
        rows.push_back({path.stem().string(), auc_at_t(series), final_at_t(series)});
    }

    std::size_t best_auc = 0, best_fin = 0;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].auc.agg.mean > rows[best_auc].auc.agg.mean) best_auc = i;
        if (rows[i].fin.mean > rows[best_fin].fin.mean) best_fin = i;
    }

    std::ostringstream out;
    out << "run\tn_seeds\tauc_mean\tauc_std\tfinal_mean\tfinal_std\tbest\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::string best;
        if (rows.size() > 1 && i == best_auc) best += "auc";
        if (rows.size() > 1 && i == best_fin) best += best.empty() ? "final" : "+final";
        out << rows[i].label << '\t' << rows[i].auc.agg.n << '\t'
            << format_double(rows[i].auc.agg.mean) << '\t'
            << format_double(rows[i].auc.agg.std) << '\t' << format_double(rows[i].fin.mean)
            << '\t' << format_double(rows[i].fin.std) << '\t' << (best.empty() ? "-" : best)
            << '\n';
    }
    const fs::path dir = prepare_out_dir(out_base, "report", overwrite);
    write_text_file((dir / "summary_report.tsv").string(), out.str());
    std::printf("%s", out.str().c_str());
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hodge decomposition of TD-error fields on finite MDPs"};
    app.require_subcommand(1);

    std::string out_base = "out";
    bool overwrite = false;
    bool verbose = false;
    app.add_option("--out", out_base, "output directory root");
    app.add_flag("--overwrite", overwrite, "write to a fixed subdirectory, replacing files");
    app.add_flag("--verbose", verbose, "chatty output");

    auto* dec = app.add_subcommand("decompose", "exact Hodge decomposition of a TD field");
    dec->fallthrough();
    std::string mdp_path, policy_path = "uniform", values_path = "exact";
    dec->add_option("--mdp", mdp_path, "MDP document (json)")->required();
    dec->add_option("--policy", policy_path, "policy document or 'uniform'");
    dec->add_option("--values", values_path, "value document, 'exact', or 'zero'");

    auto* train = app.add_subcommand("train", "run a seeded training experiment");
    train->fallthrough();
    std::string train_config, seed_override;
    train->add_option("--config", train_config, "run configuration (json)")->required();
    train->add_option("--seeds", seed_override, "comma-separated seed override");

    auto* diag = app.add_subcommand("diagnose", "theorem-style checks with pass/fail table");
    diag->fallthrough();
    std::string diag_config;
    diag->add_option("--config", diag_config, "diagnostics configuration (json)");

    auto* rep = app.add_subcommand("report", "aggregate metric files into summary tables");
    rep->fallthrough();
    std::string metric_dir;
    rep->add_option("--dir", metric_dir, "directory of metric tsv files")->required();

    try {
        app.parse(argc, argv);
        if (dec->parsed())
            return cmd_decompose(mdp_path, policy_path, values_path, out_base, overwrite,
                                 verbose);
        if (train->parsed())
            return cmd_train(train_config, out_base, seed_override, overwrite, verbose);
        if (diag->parsed()) return cmd_diagnose(diag_config, out_base, overwrite, verbose);
        if (rep->parsed()) return cmd_report(metric_dir, out_base, overwrite);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    } catch (const ContractError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitConfig;
    } catch (const DivergenceError& e) {
        std::fprintf(stderr, "divergence: %s\n", e.what());
        return kExitDivergence;
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitConfig;
    }
    return kExitConfig;
}
