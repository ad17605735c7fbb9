#pragma once

#include "fedkd/data.hpp"
#include "fedkd/nn.hpp"

#include <string>
#include <utility>
#include <vector>

namespace fedkd::fed {
struct RoundRecord;
struct ExperimentResult;
}  // namespace fedkd::fed

namespace fedkd::metrics {

/// Raw per-method measurements; one table row.
struct MethodSummary {
    std::string method;
    std::string distribution;  // optional grouping keys for CSV I/O
    std::string arch;
    double acc = 0.0;
    double loss = 0.0;
    double cpu = 0.0;
    double mem = 0.0;
    double comm = 0.0;
};

struct CompositeScores {
    std::string method;
    std::string distribution;
    std::string arch;
    double res = 0.0;
    double pqs = 0.0;
    double ces = 0.0;
    double ues = 0.0;
};

/// Exact indicator-mean accuracy and mean cross-entropy on a test set.
std::pair<double, double> evaluate(const nn::Model& model, const data::Dataset& test);

/// Deterministic stand-ins for the sampled CPU/MEM columns:
/// cpu = client mean of per-round hybrid-training flops,
/// mem = client mean of the per-client peak memory proxy.
std::pair<double, double> resource_proxies(const std::vector<fed::RoundRecord>& records);

/// The composite table over one comparison group:
///   RES = 0.5*cpu/max(cpu) + 0.5*mem/max(mem)
///   CES = max(comm)/comm
///   PQS = 0.7*acc_norm + 0.3*min(loss)/loss   (acc_norm min-max; all-1 when degenerate)
///   UES = PQS*CES/RES
/// Group size must be >= 2.
std::vector<CompositeScores> composite_scores(const std::vector<MethodSummary>& group);

/// acc_iid - acc_noniid per method; both groups must list the same methods.
std::vector<std::pair<std::string, double>> accuracy_drop(
    const std::vector<MethodSummary>& iid, const std::vector<MethodSummary>& noniid);

enum class ReportFormat { kCsv, kJson };

/// Writes the run artifacts into `dir`: per-round rounds.csv or rounds.jsonl
/// plus summary.json. Reruns overwrite deterministically.
void emit_report(const fed::ExperimentResult& result, const std::string& dir,
                 ReportFormat format);

/// Reads back a summary.json written by emit_report.
MethodSummary read_summary(const std::string& path);

/// `method,distribution,arch,acc,loss,cpu,mem,comm` rows.
std::vector<MethodSummary> read_raw_csv(const std::string& path);

/// `method,distribution,arch,acc,loss,cpu,mem,comm,res,pqs,ces,ues` rows.
void write_composite_csv(const std::vector<MethodSummary>& raw,
                         const std::vector<CompositeScores>& scores,
                         const std::string& path);

}  // namespace fedkd::metrics
