#pragma once

#include "fedkd/client.hpp"
#include "fedkd/data.hpp"
#include "fedkd/nas.hpp"
#include "fedkd/server.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace fedkd::fed {

enum class Method { kFedKdNas, kFedAvg, kFedDistill, kLocalKd };

Method parse_method(const std::string& name);
std::string method_name(Method method);

struct DataConfig {
    std::string source = "synthetic";  // synthetic | csv | idx
    std::string path;
    int n = 600;
    int classes = 10;
    int dim = 16;
    double spread = 1.0;
    int public_m = 100;
    double test_fraction = 0.2;
    data::RegimeSpec regime;
};

struct HyperConfig {
    double alpha = 0.5;
    double beta = 0.5;
    double gamma = 0.9;
    double temperature = 4.0;
    double lambda = 0.3;
    double lr = 0.05;
    int epochs = 1;   // E, local epochs
    int batch = 16;
    std::string optimizer = "sgd";  // sgd | adam
    double clip_norm = 1e3;
    bool beta_decay = false;  // beta^(r) = beta * (1 - r/R)
};

struct SpaceConfig {
    std::vector<int> depths{1, 2, 3};
    std::vector<int> widths{8, 16, 32, 64};
    int subset = 4;
    int radius = 1;
    int proxy_epochs = 1;
};

struct ExperimentConfig {
    Method method = Method::kFedKdNas;
    int clients = 5;   // K
    int rounds = 30;   // R
    int threads = 1;
    std::uint64_t seed = 0;
    DataConfig data;
    HyperConfig hyper;
    SpaceConfig space;
    server::Aggregation aggregation;
    int teacher_epochs = 20;
    std::string fixed_arch;                 // baselines; empty = largest in space
    std::vector<std::string> client_archs;  // optional per-client override
    std::vector<std::uint64_t> client_seeds;  // optional per-client base-seed override

    void validate() const;
};

struct ClientRoundStats {
    int client = 0;
    double train_loss = 0.0;
    long long bytes_up = 0;
    long long bytes_down = 0;
    long long train_flops = 0;
    long long nas_flops = 0;
    long long infer_flops = 0;
    long long mem_bytes = 0;
    std::string arch_id;
};

struct RoundRecord {
    int round = 0;
    std::vector<ClientRoundStats> clients;
    double test_acc = 0.0;
    double test_loss = 0.0;
    double target_drift = 0.0;
    int arch_switches = 0;
};

struct Summary {
    std::string method;
    std::string distribution;
    std::string arch;  // fixed arch, or "nas" for the adaptive method
    int rounds = 0;
    int clients = 0;
    std::uint64_t seed = 0;
    double final_acc = 0.0;
    double final_loss = 0.0;
    long long bytes_up = 0;
    long long bytes_down = 0;
    long long bytes_total = 0;
    long long train_flops = 0;
    long long nas_flops = 0;
    long long infer_flops = 0;
    long long peak_mem_bytes = 0;
    int arch_switches = 0;
    long long clip_events = 0;
    double cpu_proxy = 0.0;
    double mem_proxy = 0.0;
};

struct ExperimentResult {
    std::vector<RoundRecord> records;
    Summary summary;
};

/// Orchestrates one experiment: setup (dataset, splits, public set, teacher,
/// warm start) at construction, then one protocol round per run_round call.
/// Client rounds may execute on `threads` workers; per-client RNG derivation
/// makes the outcome schedule-independent.
class Simulation {
  public:
    explicit Simulation(ExperimentConfig cfg);

    RoundRecord run_round(int round);
    ExperimentResult run();

    const DistillTarget& target() const { return target_; }
    const std::vector<client::ClientState>& clients() const { return clients_; }
    const data::PublicSet& public_set() const { return public_; }
    const data::Dataset& test_set() const { return test_; }
    const std::optional<server::TeacherModel>& teacher() const { return teacher_; }
    const ExperimentConfig& config() const { return cfg_; }

  private:
    RoundRecord round_fedkd(int round, double beta_r);
    RoundRecord round_feddistill(int round);
    RoundRecord round_fedavg(int round);
    RoundRecord round_localkd(int round);
    void eval_round(RoundRecord& record);
    std::vector<client::RoundOutput> run_clients(const DistillTarget& target,
                                                 const client::HyperParams& hyper,
                                                 const client::NasInputs& nas, int round);

    ExperimentConfig cfg_;
    data::Dataset dataset_;
    data::Dataset test_;
    data::PublicSet public_;
    nas::SearchSpace space_;
    nas::SearchSpace fixed_space_;  // single-candidate space for baselines
    std::optional<server::TeacherModel> teacher_;
    DistillTarget target_;
    std::vector<client::ClientState> clients_;
    std::optional<nn::Model> global_model_;  // fedavg
    Summary summary_;
};

ExperimentResult run_experiment(const ExperimentConfig& cfg);

/// Same experiment with the method overridden.
ExperimentResult run_baseline(ExperimentConfig cfg, Method method);

struct ByteAccount {
    long long up = 0;
    long long down = 0;
    long long total = 0;
    bool logits_cheaper = false;  // 4MC < 4P
};

/// Closed-form communication totals per method:
///   fedkd_nas / feddistill: 4MC per direction per client per round,
///   fedavg:                4P per direction per client per round,
///   local_kd:              one 4MC teacher broadcast per client.
/// Headers are excluded throughout.
ByteAccount account_bytes(Method method, long long params, long long m, long long c,
                          int rounds, int clients);

/// n_k/n weighted parameter average; all models must share one architecture.
nn::Model average_parameters(const std::vector<const nn::Model*>& models,
                             const std::vector<double>& weights);

}  // namespace fedkd::fed
