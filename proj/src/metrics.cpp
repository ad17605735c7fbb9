#include "fedkd/metrics.hpp"

#include "fedkd/federation.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace fedkd::metrics {

using nlohmann::json;

std::pair<double, double> evaluate(const nn::Model& model, const data::Dataset& test) {
    if (test.size() < 1) {
        throw ParamError("evaluate: empty test set");
    }
    const Matrix logits = nn::forward(model, test.inputs);
    int correct = 0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        Eigen::Index best = 0;
        logits.row(i).maxCoeff(&best);
        if (static_cast<int>(best) == test.labels[static_cast<std::size_t>(i)]) {
            ++correct;
        }
    }
    const double acc = static_cast<double>(correct) / static_cast<double>(test.size());
    const double loss = nn::cross_entropy_loss(logits, test.labels);
    return {acc, loss};
}

std::pair<double, double> resource_proxies(const std::vector<fed::RoundRecord>& records) {
    if (records.empty() || records.front().clients.empty()) {
        throw ParamError("resource_proxies: no records");
    }
    const std::size_t clients = records.front().clients.size();
    double cpu_total = 0.0;
    double mem_total = 0.0;
    for (std::size_t k = 0; k < clients; ++k) {
        double flops = 0.0;
        long long peak = 0;
        for (const auto& record : records) {
            flops += static_cast<double>(record.clients[k].train_flops);
            peak = std::max(peak, record.clients[k].mem_bytes);
        }
        cpu_total += flops / static_cast<double>(records.size());
        mem_total += static_cast<double>(peak);
    }
    return {cpu_total / static_cast<double>(clients),
            mem_total / static_cast<double>(clients)};
}

std::vector<CompositeScores> composite_scores(const std::vector<MethodSummary>& group) {
    if (group.size() < 2) {
        throw ParamError("composite_scores: group needs at least two methods");
    }
    double max_cpu = 0.0, max_mem = 0.0, max_comm = 0.0;
    double min_loss = group.front().loss;
    double min_acc = group.front().acc, max_acc = group.front().acc;
    for (const auto& row : group) {
        max_cpu = std::max(max_cpu, row.cpu);
        max_mem = std::max(max_mem, row.mem);
        max_comm = std::max(max_comm, row.comm);
        min_loss = std::min(min_loss, row.loss);
        min_acc = std::min(min_acc, row.acc);
        max_acc = std::max(max_acc, row.acc);
    }
    if (!(max_cpu > 0.0) || !(max_mem > 0.0) || !(max_comm > 0.0) || !(min_loss > 0.0)) {
        throw ParamError("composite_scores: normalization maxima must be positive");
    }
    const double acc_span = max_acc - min_acc;

    std::vector<CompositeScores> out;
    out.reserve(group.size());
    for (const auto& row : group) {
        CompositeScores scores;
        scores.method = row.method;
        scores.distribution = row.distribution;
        scores.arch = row.arch;
        scores.res = 0.5 * row.cpu / max_cpu + 0.5 * row.mem / max_mem;
        scores.ces = max_comm / row.comm;
        // Degenerate all-equal accuracies would divide by zero; every
        // method is then top-normalized.
        const double acc_norm = acc_span > 0.0 ? (row.acc - min_acc) / acc_span : 1.0;
        scores.pqs = 0.7 * acc_norm + 0.3 * min_loss / row.loss;
        scores.ues = scores.pqs * scores.ces / scores.res;
        out.push_back(std::move(scores));
    }
    return out;
}

std::vector<std::pair<std::string, double>> accuracy_drop(
    const std::vector<MethodSummary>& iid, const std::vector<MethodSummary>& noniid) {
    if (iid.size() != noniid.size()) {
        throw ParamError("accuracy_drop: group sizes differ");
    }
    std::map<std::string, double> noniid_acc;
    for (const auto& row : noniid) {
        noniid_acc[row.method] = row.acc;
    }
    std::vector<std::pair<std::string, double>> drops;
    for (const auto& row : iid) {
        const auto it = noniid_acc.find(row.method);
        if (it == noniid_acc.end()) {
            throw ParamError("accuracy_drop: method \"" + row.method +
                             "\" missing from the non-iid group");
        }
        drops.emplace_back(row.method, row.acc - it->second);
    }
    return drops;
}

namespace {

json summary_to_json(const fed::Summary& s) {
    return json{{"method", s.method},
                {"distribution", s.distribution},
                {"arch", s.arch},
                {"rounds", s.rounds},
                {"clients", s.clients},
                {"seed", s.seed},
                {"final_acc", s.final_acc},
                {"final_loss", s.final_loss},
                {"bytes_up", s.bytes_up},
                {"bytes_down", s.bytes_down},
                {"bytes_total", s.bytes_total},
                {"train_flops", s.train_flops},
                {"nas_flops", s.nas_flops},
                {"infer_flops", s.infer_flops},
                {"peak_mem_bytes", s.peak_mem_bytes},
                {"arch_switches", s.arch_switches},
                {"clip_events", s.clip_events},
                {"cpu_proxy", s.cpu_proxy},
                {"mem_proxy", s.mem_proxy}};
}

json record_to_json(const fed::RoundRecord& r) {
    json clients = json::array();
    for (const auto& c : r.clients) {
        clients.push_back(json{{"client", c.client},
                               {"train_loss", c.train_loss},
                               {"bytes_up", c.bytes_up},
                               {"bytes_down", c.bytes_down},
                               {"train_flops", c.train_flops},
                               {"nas_flops", c.nas_flops},
                               {"infer_flops", c.infer_flops},
                               {"mem_bytes", c.mem_bytes},
                               {"arch", c.arch_id}});
    }
    return json{{"round", r.round},
                {"clients", std::move(clients)},
                {"test_acc", r.test_acc},
                {"test_loss", r.test_loss},
                {"target_drift", r.target_drift},
                {"arch_switches", r.arch_switches}};
}

constexpr const char* kRoundCsvHeader =
    "round,client,arch,train_loss,bytes_up,bytes_down,train_flops,nas_flops,"
    "infer_flops,mem_bytes,test_acc,test_loss,target_drift,arch_switches";

std::string format_double(double value) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", value);
    return buf;
}

}  // namespace

void emit_report(const fed::ExperimentResult& result, const std::string& dir,
                 ReportFormat format) {
    const std::string rounds_path =
        dir + (format == ReportFormat::kCsv ? "/rounds.csv" : "/rounds.jsonl");
    std::ofstream rounds(rounds_path, std::ios::trunc);
    if (!rounds) {
        throw DataError("emit_report: cannot write " + rounds_path);
    }
    if (format == ReportFormat::kCsv) {
        rounds << kRoundCsvHeader << '\n';
        for (const auto& record : result.records) {
            for (const auto& c : record.clients) {
                rounds << record.round << ',' << c.client << ',' << c.arch_id << ','
                       << format_double(c.train_loss) << ',' << c.bytes_up << ','
                       << c.bytes_down << ',' << c.train_flops << ',' << c.nas_flops << ','
                       << c.infer_flops << ',' << c.mem_bytes << ','
                       << format_double(record.test_acc) << ','
                       << format_double(record.test_loss) << ','
                       << format_double(record.target_drift) << ',' << record.arch_switches
                       << '\n';
            }
        }
    } else {
        for (const auto& record : result.records) {
            rounds << record_to_json(record).dump() << '\n';
        }
    }

    const std::string summary_path = dir + "/summary.json";
    std::ofstream summary(summary_path, std::ios::trunc);
    if (!summary) {
        throw DataError("emit_report: cannot write " + summary_path);
    }
    summary << summary_to_json(result.summary).dump(2) << '\n';
}

MethodSummary read_summary(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("read_summary: cannot open " + path);
    }
    json parsed;
    in >> parsed;
    MethodSummary row;
    row.method = parsed.at("method").get<std::string>();
    row.distribution = parsed.at("distribution").get<std::string>();
    row.arch = parsed.at("arch").get<std::string>();
    row.acc = parsed.at("final_acc").get<double>();
    row.loss = parsed.at("final_loss").get<double>();
    row.cpu = parsed.at("cpu_proxy").get<double>();
    row.mem = parsed.at("mem_proxy").get<double>();
    row.comm = parsed.at("bytes_total").get<double>();
    return row;
}

std::vector<MethodSummary> read_raw_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ParseError("read_raw_csv: cannot open " + path);
    }
    std::string header;
    std::getline(in, header);
    if (header != "method,distribution,arch,acc,loss,cpu,mem,comm") {
        throw ParseError(path + ": expected header "
                                "method,distribution,arch,acc,loss,cpu,mem,comm");
    }
    std::vector<MethodSummary> rows;
    std::string line;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        std::stringstream ss(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ss, cell, ',')) {
            cells.push_back(cell);
        }
        if (cells.size() != 8) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": expected 8 columns");
        }
        MethodSummary row;
        row.method = cells[0];
        row.distribution = cells[1];
        row.arch = cells[2];
        try {
            row.acc = std::stod(cells[3]);
            row.loss = std::stod(cells[4]);
            row.cpu = std::stod(cells[5]);
            row.mem = std::stod(cells[6]);
            row.comm = std::stod(cells[7]);
        } catch (const std::exception&) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": bad number");
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_composite_csv(const std::vector<MethodSummary>& raw,
                         const std::vector<CompositeScores>& scores,
                         const std::string& path) {
    if (raw.size() != scores.size()) {
        throw ParamError("write_composite_csv: row count mismatch");
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw DataError("write_composite_csv: cannot write " + path);
    }
    out << "method,distribution,arch,acc,loss,cpu,mem,comm,res,pqs,ces,ues\n";
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const auto& r = raw[i];
        const auto& s = scores[i];
        out << r.method << ',' << r.distribution << ',' << r.arch << ','
            << format_double(r.acc) << ',' << format_double(r.loss) << ','
            << format_double(r.cpu) << ',' << format_double(r.mem) << ','
            << format_double(r.comm) << ',' << format_double(s.res) << ','
            << format_double(s.pqs) << ',' << format_double(s.ces) << ','
            << format_double(s.ues) << '\n';
    }
}

}  // namespace fedkd::metrics
