#include "fedkd/cli.hpp"

#include "fedkd/config.hpp"
#include "fedkd/federation.hpp"
#include "fedkd/metrics.hpp"
#include "fedkd/nn.hpp"
#include "fedkd/rng.hpp"
#include "fedkd/server.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace fedkd::cli {

namespace {

struct CommonOpts {
    std::string config_path;
    std::string out_dir = "out";
    std::string method;
    std::string distribution;
    std::string format = "json";
    long long seed = -1;
    int rounds = -1;
    int clients = -1;
    int threads = -1;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool config_required) {
    auto* config = cmd->add_option("--config", opts.config_path, "run configuration file");
    if (config_required) {
        config->required();
    }
    cmd->add_option("--seed", opts.seed, "override the global seed");
    cmd->add_option("--out", opts.out_dir, "output directory");
    cmd->add_option("--method", opts.method,
                    "fedkd_nas | fedavg | feddistill | local_kd");
    cmd->add_option("--distribution", opts.distribution,
                    "iid | dirichlet:<alpha> | shards:<s>");
    cmd->add_option("--rounds", opts.rounds, "override round count");
    cmd->add_option("--clients", opts.clients, "override client count");
    cmd->add_option("--threads", opts.threads, "client-phase worker threads");
    cmd->add_option("--format", opts.format, "per-round report format: csv | json");
}

fed::ExperimentConfig build_config(const CommonOpts& opts) {
    config::Table table;
    if (!opts.config_path.empty()) {
        table = config::Table::parse_file(opts.config_path);
    }
    fed::ExperimentConfig cfg = config::load_experiment_config(table);
    if (opts.seed >= 0) {
        cfg.seed = static_cast<std::uint64_t>(opts.seed);
    }
    if (!opts.method.empty()) {
        cfg.method = fed::parse_method(opts.method);
    }
    if (!opts.distribution.empty()) {
        cfg.data.regime = data::RegimeSpec::parse(opts.distribution);
    }
    if (opts.rounds >= 0) {
        cfg.rounds = opts.rounds;
    }
    if (opts.clients >= 0) {
        cfg.clients = opts.clients;
    }
    if (opts.threads >= 1) {
        cfg.threads = opts.threads;
    }
    cfg.validate();
    return cfg;
}

metrics::ReportFormat parse_format(const std::string& format) {
    if (format == "csv") {
        return metrics::ReportFormat::kCsv;
    }
    if (format == "json") {
        return metrics::ReportFormat::kJson;
    }
    throw ConfigError("--format must be csv or json");
}

metrics::MethodSummary to_metrics_row(const fed::Summary& s) {
    metrics::MethodSummary row;
    row.method = s.method;
    row.distribution = s.distribution;
    row.arch = s.arch;
    row.acc = s.final_acc;
    row.loss = s.final_loss;
    row.cpu = s.cpu_proxy;
    row.mem = s.mem_proxy;
    row.comm = static_cast<double>(s.bytes_total);
    return row;
}

int cmd_simulate(const CommonOpts& opts) {
    const fed::ExperimentConfig cfg = build_config(opts);
    const fed::ExperimentResult result = fed::run_experiment(cfg);
    std::filesystem::create_directories(opts.out_dir);
    metrics::emit_report(result, opts.out_dir, parse_format(opts.format));
    std::printf("%s %s rounds=%d clients=%d acc=%.4f loss=%.4f bytes=%lld\n",
                result.summary.method.c_str(), result.summary.distribution.c_str(),
                result.summary.rounds, result.summary.clients, result.summary.final_acc,
                result.summary.final_loss, result.summary.bytes_total);
    return 0;
}

int cmd_compare(const CommonOpts& opts) {
    const fed::ExperimentConfig cfg = build_config(opts);
    const std::vector<fed::Method> methods = {fed::Method::kFedKdNas, fed::Method::kFedAvg,
                                              fed::Method::kFedDistill,
                                              fed::Method::kLocalKd};
    std::vector<metrics::MethodSummary> rows;
    for (const fed::Method method : methods) {
        const fed::ExperimentResult result = fed::run_baseline(cfg, method);
        const std::string dir = opts.out_dir + "/" + fed::method_name(method);
        std::filesystem::create_directories(dir);
        metrics::emit_report(result, dir, parse_format(opts.format));
        rows.push_back(to_metrics_row(result.summary));
    }
    const std::vector<metrics::CompositeScores> scores = metrics::composite_scores(rows);
    metrics::write_composite_csv(rows, scores, opts.out_dir + "/composite.csv");
    std::printf("%-12s %8s %8s %10s %10s %10s %10s\n", "method", "acc", "loss", "res", "pqs",
                "ces", "ues");
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::printf("%-12s %8.4f %8.4f %10.4f %10.4f %10.4f %10.4f\n",
                    rows[i].method.c_str(), rows[i].acc, rows[i].loss, scores[i].res,
                    scores[i].pqs, scores[i].ces, scores[i].ues);
    }
    return 0;
}

int cmd_score(const std::string& input, const std::string& output) {
    const std::vector<metrics::MethodSummary> rows = metrics::read_raw_csv(input);
    if (rows.empty()) {
        throw ParseError(input + ": no rows to score");
    }
    // Score each (distribution, arch) group independently.
    std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        groups[{rows[i].distribution, rows[i].arch}].push_back(i);
    }
    std::vector<metrics::MethodSummary> ordered;
    std::vector<metrics::CompositeScores> scored;
    for (const auto& [key, indices] : groups) {
        std::vector<metrics::MethodSummary> group;
        for (const std::size_t i : indices) {
            group.push_back(rows[i]);
        }
        const auto scores = metrics::composite_scores(group);
        for (std::size_t i = 0; i < group.size(); ++i) {
            ordered.push_back(group[i]);
            scored.push_back(scores[i]);
        }
    }
    metrics::write_composite_csv(ordered, scored, output);
    for (std::size_t i = 0; i < ordered.size(); ++i) {
        std::printf("%s,%s,%s res=%.4f pqs=%.4f ces=%.4f ues=%.4f\n",
                    ordered[i].method.c_str(), ordered[i].distribution.c_str(),
                    ordered[i].arch.c_str(), scored[i].res, scored[i].pqs, scored[i].ces,
                    scored[i].ues);
    }
    return 0;
}

int cmd_verify_lemmas(int trials, long long seed) {
    const auto seed64 = static_cast<std::uint64_t>(seed);
    bool ok = true;
    for (const double gamma : {0.5, 0.9, 0.99}) {
        const server::EmaDriftReport report =
            server::verify_ema_drift_bound(trials, 12, 20, 5, gamma, seed64);
        std::printf("ema drift gamma=%.2f sequences=%d equality_violations=%d "
                    "bound_violations=%d max_residual=%.3g min_slack=%.3g\n",
                    gamma, report.sequences, report.equality_violations,
                    report.bound_violations, report.max_equality_residual,
                    report.min_bound_slack);
        ok = ok && report.pass();
    }
    const std::vector<int> counts = {1, 2, 4, 8, 16, 32};
    const server::AggregationVarianceReport var =
        server::verify_aggregation_variance(counts, 2000, 1.0, 0.0, 20, 5, seed64);
    std::printf("aggregation variance slope=%.4f (expect -1.0) coeff=%.2f "
                "(analytic %.2f)\n",
                var.slope, var.variance_coeff, var.analytic_variance);
    ok = ok && std::abs(var.slope + 1.0) <= 0.05;

    const server::AggregationVarianceReport biased =
        server::verify_aggregation_variance(counts, 2000, 1.0, 0.3, 20, 5, seed64 + 1);
    std::printf("aggregation bias intercept=%.4f (analytic %.4f)\n", biased.intercept,
                biased.analytic_bias);
    ok = ok && std::abs(biased.intercept - biased.analytic_bias) <=
                   0.1 * biased.analytic_bias;

    std::printf(ok ? "verify-lemmas: PASS\n" : "verify-lemmas: FAIL\n");
    return ok ? 0 : 2;
}

int cmd_gradcheck(int models, long long seed) {
    Rng rng(derive_seed(static_cast<std::uint64_t>(seed), {stream_tag("gradcheck_cli")}));
    double worst = 0.0;
    for (int i = 0; i < models; ++i) {
        const int depth = 1 + static_cast<int>(rng.below(3));
        std::vector<int> widths;
        for (int l = 0; l < depth; ++l) {
            widths.push_back(2 + static_cast<int>(rng.below(31)));
        }
        const int dim = 2 + static_cast<int>(rng.below(7));
        const int classes = 2 + static_cast<int>(rng.below(5));
        const auto arch = ArchitectureSpec::make(widths, dim, classes);
        nn::Model model = nn::Model::init(arch, rng.next_u64());

        const int batch = 1 + static_cast<int>(rng.below(6));
        nn::Batch data;
        data.inputs.resize(batch, dim);
        for (Eigen::Index j = 0; j < data.inputs.size(); ++j) {
            data.inputs(j) = rng.uniform(-1.0, 1.0);
        }
        std::vector<int> labels;
        for (int b = 0; b < batch; ++b) {
            labels.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(classes))));
        }
        data.labels = labels;
        Matrix target(batch, classes);
        for (Eigen::Index j = 0; j < target.size(); ++j) {
            target(j) = rng.uniform(-2.0, 2.0);
        }

        const nn::Hyper hybrid{0.5, 4.0};
        worst = std::max(worst,
                         nn::finite_diff_gradcheck(model, data, nullptr, hybrid, 1e-5));
        worst = std::max(worst,
                         nn::finite_diff_gradcheck(model, data, &target, hybrid, 1e-5));
        nn::Batch unlabeled = data;
        unlabeled.labels.reset();
        worst = std::max(worst,
                         nn::finite_diff_gradcheck(model, unlabeled, &target, hybrid, 1e-5));
    }
    std::printf("gradcheck models=%d max_relative_error=%.3g\n", models, worst);
    if (worst < 1e-4) {
        std::printf("gradcheck: PASS\n");
        return 0;
    }
    std::printf("gradcheck: FAIL\n");
    return 2;
}

}  // namespace

int run(int argc, const char* const* argv) {
    CLI::App app{"deterministic federated-distillation simulator"};
    app.require_subcommand(1);

    CommonOpts sim_opts;
    CLI::App* simulate = app.add_subcommand("simulate", "run one experiment");
    add_common(simulate, sim_opts, true);

    CommonOpts cmp_opts;
    CLI::App* compare =
        app.add_subcommand("compare", "run all methods on one config and score them");
    add_common(compare, cmp_opts, true);

    std::string score_input;
    std::string score_output = "composite.csv";
    CLI::App* score = app.add_subcommand("score", "composite scores over a raw metrics CSV");
    score->add_option("--input", score_input, "raw CSV: method,distribution,arch,acc,loss,cpu,mem,comm")
        ->required();
    score->add_option("--out", score_output, "composite CSV path");

    int trials = 100;
    long long verify_seed = 0;
    CLI::App* verify = app.add_subcommand("verify-lemmas", "numerical target-drift and "
                                                           "aggregation-error checks");
    verify->add_option("--trials", trials, "random sequences per gamma");
    verify->add_option("--seed", verify_seed, "verifier seed");

    int models = 50;
    long long grad_seed = 0;
    CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");
    gradcheck->add_option("--models", models, "number of random models");
    gradcheck->add_option("--seed", grad_seed, "generator seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (simulate->parsed()) {
            return cmd_simulate(sim_opts);
        }
        if (compare->parsed()) {
            return cmd_compare(cmp_opts);
        }
        if (score->parsed()) {
            return cmd_score(score_input, score_output);
        }
        if (verify->parsed()) {
            return cmd_verify_lemmas(trials, verify_seed);
        }
        if (gradcheck->parsed()) {
            return cmd_gradcheck(models, grad_seed);
        }
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 1;
}

}  // namespace fedkd::cli
