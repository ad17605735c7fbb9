#include "fedkd/federation.hpp"

#include "fedkd/metrics.hpp"
#include "fedkd/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <thread>

namespace fedkd::fed {

Method parse_method(const std::string& name) {
    if (name == "fedkd_nas") return Method::kFedKdNas;
    if (name == "fedavg") return Method::kFedAvg;
    if (name == "feddistill") return Method::kFedDistill;
    if (name == "local_kd") return Method::kLocalKd;
    throw ConfigError("method: expected fedkd_nas, fedavg, feddistill or local_kd, got \"" +
                      name + "\"");
}

std::string method_name(Method method) {
    switch (method) {
        case Method::kFedKdNas: return "fedkd_nas";
        case Method::kFedAvg: return "fedavg";
        case Method::kFedDistill: return "feddistill";
        case Method::kLocalKd: return "local_kd";
    }
    return "?";
}

namespace {

ArchitectureSpec parse_arch_id(const std::string& id, int input_dim, int num_classes) {
    std::vector<int> widths;
    std::size_t start = 0;
    while (start <= id.size()) {
        const std::size_t dash = id.find('-', start);
        const std::string part =
            id.substr(start, dash == std::string::npos ? std::string::npos : dash - start);
        try {
            widths.push_back(std::stoi(part));
        } catch (const std::exception&) {
            throw ConfigError("arch id \"" + id + "\": bad width \"" + part + "\"");
        }
        if (dash == std::string::npos) {
            break;
        }
        start = dash + 1;
    }
    return ArchitectureSpec::make(std::move(widths), input_dim, num_classes);
}

const ArchitectureSpec& largest_candidate(const nas::SearchSpace& space) {
    const ArchitectureSpec* best = &space.candidates.front();
    long long best_params = cost_profile(*best, 1).params;
    for (const auto& cand : space.candidates) {
        const long long params = cost_profile(cand, 1).params;
        if (params > best_params ||
            (params == best_params && cand.id < best->id)) {
            best = &cand;
            best_params = params;
        }
    }
    return *best;
}

long long logit_payload_bytes(const LogitMatrix& m) {
    // Wire size minus the 16-byte header: exactly 4*M*C.
    return static_cast<long long>(serialize_logits(m).size()) - 16;
}

}  // namespace

void ExperimentConfig::validate() const {
    if (rounds < 0) {
        throw ConfigError("rounds: must be >= 0");
    }
    if (clients < 2) {
        throw ConfigError("clients: must be >= 2");
    }
    if (threads < 1) {
        throw ConfigError("threads: must be >= 1");
    }
    if (hyper.alpha < 0.0) {
        throw ConfigError("hyper.alpha: must be >= 0");
    }
    if (hyper.beta < 0.0 || hyper.beta > 1.0) {
        throw ConfigError("hyper.beta: must lie in [0, 1]");
    }
    if (hyper.gamma < 0.0 || hyper.gamma > 1.0) {
        throw ConfigError("hyper.gamma: must lie in [0, 1]");
    }
    if (!(hyper.temperature > 0.0)) {
        throw ConfigError("hyper.temperature: must be positive");
    }
    if (hyper.lr < 0.0) {
        throw ConfigError("hyper.lr: must be >= 0");
    }
    if (hyper.epochs < 0) {
        throw ConfigError("hyper.epochs: must be >= 0");
    }
    if (hyper.batch < 1) {
        throw ConfigError("hyper.batch: must be >= 1");
    }
    if (hyper.optimizer != "sgd" && hyper.optimizer != "adam") {
        throw ConfigError("hyper.optimizer: expected sgd or adam");
    }
    if (data.public_m < 1) {
        throw ConfigError("data.public_m: must be >= 1");
    }
    if (!client_archs.empty()) {
        if (static_cast<int>(client_archs.size()) != clients) {
            throw ConfigError("client_archs: need one arch per client");
        }
        if (method == Method::kFedAvg) {
            const std::set<std::string> distinct(client_archs.begin(), client_archs.end());
            if (distinct.size() > 1) {
                throw ConfigError("client_archs: fedavg forbids heterogeneous architectures");
            }
        }
    }
    if (!client_seeds.empty() && static_cast<int>(client_seeds.size()) != clients) {
        throw ConfigError("client_seeds: need one seed per client");
    }
}

Simulation::Simulation(ExperimentConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();

    if (cfg_.data.source == "synthetic") {
        dataset_ = data::generate_synthetic(cfg_.data.n, cfg_.data.classes, cfg_.data.dim,
                                            cfg_.data.spread, cfg_.seed);
    } else if (cfg_.data.source == "csv") {
        dataset_ = data::load_dataset(cfg_.data.path, data::FileFormat::kCsv);
    } else if (cfg_.data.source == "idx") {
        dataset_ = data::load_dataset(cfg_.data.path, data::FileFormat::kIdx);
    } else {
        throw ConfigError("data.source: expected synthetic, csv or idx");
    }

    auto [rest, test_idx] =
        data::stratified_split(dataset_, cfg_.data.test_fraction, cfg_.seed);
    test_ = data::subset(dataset_, test_idx);
    public_ = data::make_public_reference(dataset_, rest, cfg_.data.public_m, cfg_.seed);

    std::vector<int> pool;
    {
        const std::set<int> taken(public_.source_rows.begin(), public_.source_rows.end());
        for (const int i : rest) {
            if (!taken.contains(i)) {
                pool.push_back(i);
            }
        }
    }
    const data::Partition part =
        data::partition(dataset_, cfg_.clients, cfg_.data.regime, cfg_.seed, pool);

    const int dim = static_cast<int>(dataset_.dim());
    space_ = nas::make_grid_space(cfg_.space.depths, cfg_.space.widths, dim,
                                  dataset_.num_classes, cfg_.space.subset, cfg_.space.radius);
    const ArchitectureSpec fixed =
        cfg_.fixed_arch.empty() ? largest_candidate(space_)
                                : parse_arch_id(cfg_.fixed_arch, dim, dataset_.num_classes);
    fixed_space_.candidates = {fixed};
    fixed_space_.subset_size = 1;
    fixed_space_.refine_radius = cfg_.space.radius;

    if (cfg_.method != Method::kFedAvg) {
        teacher_ = server::pretrain_teacher(public_, largest_candidate(space_),
                                            cfg_.teacher_epochs, cfg_.hyper.lr,
                                            cfg_.hyper.batch,
                                            derive_seed(cfg_.seed, {stream_tag("teacher")}));
        // Warm start: the round-0 target is the teacher's cached predictions.
        target_.smoothed = teacher_->cached;
        target_.raw = teacher_->cached;
        target_.round = 0;
        target_.beta_used = cfg_.hyper.beta;
        target_.gamma_used = cfg_.hyper.gamma;
    } else {
        global_model_ =
            nn::Model::init(fixed, derive_seed(cfg_.seed, {stream_tag("global_init")}));
        target_.round = 0;
    }

    clients_.reserve(static_cast<std::size_t>(cfg_.clients));
    for (int k = 0; k < cfg_.clients; ++k) {
        client::ClientState state;
        state.id = k;
        state.local = data::subset(dataset_, part.assignments[static_cast<std::size_t>(k)]);
        state.base_seed =
            cfg_.client_seeds.empty()
                ? derive_seed(cfg_.seed, {static_cast<std::uint64_t>(k), stream_tag("client")})
                : cfg_.client_seeds[static_cast<std::size_t>(k)];
        if (cfg_.method != Method::kFedKdNas) {
            state.arch = cfg_.client_archs.empty()
                             ? fixed
                             : parse_arch_id(cfg_.client_archs[static_cast<std::size_t>(k)],
                                             dim, dataset_.num_classes);
        }
        clients_.push_back(std::move(state));
    }

    summary_.method = method_name(cfg_.method);
    summary_.distribution = cfg_.data.regime.to_string();
    summary_.arch = cfg_.method == Method::kFedKdNas ? "nas" : fixed.id;
    summary_.clients = cfg_.clients;
    summary_.seed = cfg_.seed;
}

namespace {

client::HyperParams make_hyper(const ExperimentConfig& cfg, double alpha) {
    client::HyperParams hyper;
    hyper.alpha = alpha;
    hyper.temperature = cfg.hyper.temperature;
    hyper.lambda = cfg.hyper.lambda;
    hyper.lr = cfg.hyper.lr;
    hyper.epochs = cfg.hyper.epochs;
    hyper.batch = cfg.hyper.batch;
    hyper.optimizer = cfg.hyper.optimizer == "adam" ? nn::OptimizerKind::kAdam
                                                    : nn::OptimizerKind::kSgd;
    hyper.clip_norm = cfg.hyper.clip_norm;
    return hyper;
}

}  // namespace

std::vector<client::RoundOutput> Simulation::run_clients(const DistillTarget& target,
                                                         const client::HyperParams& hyper,
                                                         const client::NasInputs& nas,
                                                         int round) {
    std::vector<client::RoundOutput> outputs(clients_.size());
    const int workers = std::min<int>(cfg_.threads, static_cast<int>(clients_.size()));
    if (workers <= 1) {
        for (std::size_t k = 0; k < clients_.size(); ++k) {
            outputs[k] = client::client_round(clients_[k], target, public_, hyper, nas,
                                              static_cast<std::uint32_t>(round));
        }
        return outputs;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w]() {
            try {
                for (std::size_t k = static_cast<std::size_t>(w); k < clients_.size();
                     k += static_cast<std::size_t>(workers)) {
                    outputs[k] = client::client_round(clients_[k], target, public_, hyper, nas,
                                                      static_cast<std::uint32_t>(round));
                }
            } catch (...) {
                errors[static_cast<std::size_t>(w)] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) {
        t.join();
    }
    for (const auto& err : errors) {
        if (err) {
            std::rethrow_exception(err);
        }
    }
    return outputs;
}

void Simulation::eval_round(RoundRecord& record) {
    if (cfg_.method == Method::kFedAvg) {
        const auto [acc, loss] = metrics::evaluate(*global_model_, test_);
        record.test_acc = acc;
        record.test_loss = loss;
        return;
    }
    double acc_sum = 0.0;
    double loss_sum = 0.0;
    for (const auto& state : clients_) {
        const auto [acc, loss] = metrics::evaluate(*state.model, test_);
        acc_sum += acc;
        loss_sum += loss;
    }
    record.test_acc = acc_sum / static_cast<double>(clients_.size());
    record.test_loss = loss_sum / static_cast<double>(clients_.size());
}

RoundRecord Simulation::round_fedkd(int round, double beta_r) {
    client::NasInputs nas;
    nas.space = &space_;
    nas.lambda = cfg_.hyper.lambda;
    nas.budget = {cfg_.space.proxy_epochs, cfg_.hyper.lr, cfg_.hyper.batch};
    const client::HyperParams hyper = make_hyper(cfg_, cfg_.hyper.alpha);

    const auto outputs = run_clients(target_, hyper, nas, round);

    RoundRecord record;
    record.round = round;
    std::vector<LogitMatrix> uplinks;
    uplinks.reserve(outputs.size());
    for (std::size_t k = 0; k < outputs.size(); ++k) {
        const auto& out = outputs[k];
        ClientRoundStats stats;
        stats.client = static_cast<int>(k);
        stats.train_loss = out.mean_train_loss;
        stats.bytes_up = logit_payload_bytes(out.uplink);
        stats.bytes_down = stats.bytes_up;  // broadcast of the previous target
        stats.train_flops = out.delta.train_flops;
        stats.nas_flops = out.delta.nas_flops;
        stats.infer_flops = out.delta.infer_flops;
        stats.mem_bytes = out.delta.peak_mem_bytes;
        stats.arch_id = out.arch_id;
        record.clients.push_back(std::move(stats));
        record.arch_switches += out.arch_switched ? 1 : 0;
        summary_.clip_events += out.delta.clip_events;
        uplinks.push_back(out.uplink);
    }

    const LogitMatrix aggregate = server::aggregate_predictions(uplinks, cfg_.aggregation);
    const LogitMatrix fused = server::fuse_with_teacher(aggregate, teacher_->cached, beta_r);
    DistillTarget next = server::ema_update(target_, fused, cfg_.hyper.gamma);
    next.beta_used = beta_r;
    record.target_drift = server::target_drift(target_, next);
    target_ = std::move(next);
    return record;
}

RoundRecord Simulation::round_feddistill(int round) {
    client::NasInputs nas;  // no search space: fixed architecture
    const client::HyperParams hyper = make_hyper(cfg_, cfg_.hyper.alpha);

    const auto outputs = run_clients(target_, hyper, nas, round);

    RoundRecord record;
    record.round = round;
    std::vector<LogitMatrix> uplinks;
    uplinks.reserve(outputs.size());
    for (std::size_t k = 0; k < outputs.size(); ++k) {
        const auto& out = outputs[k];
        ClientRoundStats stats;
        stats.client = static_cast<int>(k);
        stats.train_loss = out.mean_train_loss;
        stats.bytes_up = logit_payload_bytes(out.uplink);
        stats.bytes_down = stats.bytes_up;
        stats.train_flops = out.delta.train_flops;
        stats.infer_flops = out.delta.infer_flops;
        stats.mem_bytes = out.delta.peak_mem_bytes;
        stats.arch_id = out.arch_id;
        record.clients.push_back(std::move(stats));
        record.arch_switches += out.arch_switched ? 1 : 0;
        summary_.clip_events += out.delta.clip_events;
        uplinks.push_back(out.uplink);
    }

    // Plain consensus: the next target is the mean of the client logits,
    // with no teacher fusion and no smoothing.
    DistillTarget next;
    next.smoothed = server::aggregate_predictions(uplinks, cfg_.aggregation);
    next.raw = next.smoothed;
    next.round = static_cast<std::uint32_t>(round);
    record.target_drift = server::target_drift(target_, next);
    target_ = std::move(next);
    return record;
}

RoundRecord Simulation::round_fedavg(int round) {
    const client::HyperParams hyper = make_hyper(cfg_, 0.0);
    const long long param_bytes = 4 * global_model_->param_count();

    RoundRecord record;
    record.round = round;
    record.clients.resize(clients_.size());

    const auto run_one = [&](std::size_t k) {
        client::ClientState& state = clients_[k];
        state.model = *global_model_;  // download global parameters
        state.opt = cfg_.hyper.optimizer == "adam" ? nn::OptimizerState::adam(hyper.lr)
                                                   : nn::OptimizerState::sgd(hyper.lr);
        const std::uint64_t round_seed =
            derive_seed(state.base_seed, {static_cast<std::uint64_t>(round)});
        const client::TrainStats stats = client::train_epochs(
            *state.model, state.opt, state.local, nullptr, nullptr, hyper, round_seed);
        state.totals.train_flops += stats.train_flops;
        const long long mem = cost_profile(state.arch, hyper.batch).mem_bytes;
        state.totals.peak_mem_bytes = std::max(state.totals.peak_mem_bytes, mem);

        ClientRoundStats& cs = record.clients[k];
        cs.client = static_cast<int>(k);
        cs.train_loss =
            stats.steps > 0 ? stats.loss_sum / static_cast<double>(stats.steps) : 0.0;
        cs.bytes_up = param_bytes;
        cs.bytes_down = param_bytes;
        cs.train_flops = stats.train_flops;
        cs.mem_bytes = mem;
        cs.arch_id = state.arch.id;
    };

    const int workers = std::min<int>(cfg_.threads, static_cast<int>(clients_.size()));
    if (workers <= 1) {
        for (std::size_t k = 0; k < clients_.size(); ++k) {
            run_one(k);
        }
    } else {
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&, w]() {
                try {
                    for (std::size_t k = static_cast<std::size_t>(w); k < clients_.size();
                         k += static_cast<std::size_t>(workers)) {
                        run_one(k);
                    }
                } catch (...) {
                    errors[static_cast<std::size_t>(w)] = std::current_exception();
                }
            });
        }
        for (auto& t : pool) {
            t.join();
        }
        for (const auto& err : errors) {
            if (err) {
                std::rethrow_exception(err);
            }
        }
    }

    // n_k / n weighted aggregation of the uploaded parameters.
    std::vector<const nn::Model*> models;
    std::vector<double> weights;
    double total = 0.0;
    for (const auto& state : clients_) {
        total += static_cast<double>(state.local.size());
    }
    for (const auto& state : clients_) {
        models.push_back(&*state.model);
        weights.push_back(static_cast<double>(state.local.size()) / total);
    }
    global_model_ = average_parameters(models, weights);
    return record;
}

RoundRecord Simulation::round_localkd(int round) {
    client::NasInputs nas;  // fixed architecture, no exchange
    const client::HyperParams hyper = make_hyper(cfg_, cfg_.hyper.alpha);

    // The frozen teacher cache is the target every round.
    DistillTarget teacher_target;
    teacher_target.smoothed = teacher_->cached;
    teacher_target.raw = teacher_->cached;
    teacher_target.round = static_cast<std::uint32_t>(round - 1);

    const auto outputs = run_clients(teacher_target, hyper, nas, round);

    RoundRecord record;
    record.round = round;
    for (std::size_t k = 0; k < outputs.size(); ++k) {
        const auto& out = outputs[k];
        ClientRoundStats stats;
        stats.client = static_cast<int>(k);
        stats.train_loss = out.mean_train_loss;
        stats.bytes_up = 0;  // no logit uplink
        // The teacher broadcast is charged once, in the first round.
        stats.bytes_down = round == 1 ? logit_payload_bytes(teacher_->cached) : 0;
        stats.train_flops = out.delta.train_flops;
        stats.infer_flops = out.delta.infer_flops;
        stats.mem_bytes = out.delta.peak_mem_bytes;
        stats.arch_id = out.arch_id;
        record.clients.push_back(std::move(stats));
        summary_.clip_events += out.delta.clip_events;
    }
    return record;
}

RoundRecord Simulation::run_round(int round) {
    if (round < 1) {
        throw ParamError("run_round: rounds are 1-based");
    }
    double beta_r = cfg_.hyper.beta;
    if (cfg_.hyper.beta_decay && cfg_.rounds > 0) {
        beta_r = cfg_.hyper.beta *
                 (1.0 - static_cast<double>(round) / static_cast<double>(cfg_.rounds));
    }
    RoundRecord record;
    switch (cfg_.method) {
        case Method::kFedKdNas:
            record = round_fedkd(round, beta_r);
            break;
        case Method::kFedDistill:
            record = round_feddistill(round);
            break;
        case Method::kFedAvg:
            record = round_fedavg(round);
            break;
        case Method::kLocalKd:
            record = round_localkd(round);
            break;
    }
    eval_round(record);
    return record;
}

ExperimentResult Simulation::run() {
    ExperimentResult result;
    for (int r = 1; r <= cfg_.rounds; ++r) {
        result.records.push_back(run_round(r));
    }

    summary_.rounds = cfg_.rounds;
    if (!result.records.empty()) {
        summary_.final_acc = result.records.back().test_acc;
        summary_.final_loss = result.records.back().test_loss;
    } else if (teacher_) {
        // Zero rounds: report the warm-start target's source model.
        const auto [acc, loss] = metrics::evaluate(teacher_->model, test_);
        summary_.final_acc = acc;
        summary_.final_loss = loss;
    } else if (global_model_) {
        const auto [acc, loss] = metrics::evaluate(*global_model_, test_);
        summary_.final_acc = acc;
        summary_.final_loss = loss;
    }
    for (const auto& record : result.records) {
        for (const auto& cs : record.clients) {
            summary_.bytes_up += cs.bytes_up;
            summary_.bytes_down += cs.bytes_down;
            summary_.train_flops += cs.train_flops;
            summary_.nas_flops += cs.nas_flops;
            summary_.infer_flops += cs.infer_flops;
            summary_.peak_mem_bytes = std::max(summary_.peak_mem_bytes, cs.mem_bytes);
        }
        summary_.arch_switches += record.arch_switches;
    }
    summary_.bytes_total = summary_.bytes_up + summary_.bytes_down;
    if (!result.records.empty()) {
        const auto [cpu, mem] = metrics::resource_proxies(result.records);
        summary_.cpu_proxy = cpu;
        summary_.mem_proxy = mem;
    }
    result.summary = summary_;
    return result;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    Simulation sim(cfg);
    return sim.run();
}

ExperimentResult run_baseline(ExperimentConfig cfg, Method method) {
    cfg.method = method;
    return run_experiment(cfg);
}

ByteAccount account_bytes(Method method, long long params, long long m, long long c,
                          int rounds, int clients) {
    if (params < 1 || m < 1 || c < 1 || rounds < 0 || clients < 1) {
        throw ParamError("account_bytes: inputs must be positive");
    }
    const long long logit_payload = 4 * m * c;
    const long long param_payload = 4 * params;
    ByteAccount account;
    account.logits_cheaper = logit_payload < param_payload;
    const long long rk = static_cast<long long>(rounds) * clients;
    switch (method) {
        case Method::kFedKdNas:
        case Method::kFedDistill:
            account.up = rk * logit_payload;
            account.down = rk * logit_payload;
            break;
        case Method::kFedAvg:
            account.up = rk * param_payload;
            account.down = rk * param_payload;
            break;
        case Method::kLocalKd:
            account.up = 0;
            account.down = rounds > 0 ? static_cast<long long>(clients) * logit_payload : 0;
            break;
    }
    account.total = account.up + account.down;
    return account;
}

nn::Model average_parameters(const std::vector<const nn::Model*>& models,
                             const std::vector<double>& weights) {
    if (models.empty() || models.size() != weights.size()) {
        throw ParamError("average_parameters: need matching models and weights");
    }
    for (const nn::Model* model : models) {
        if (model->arch.id != models.front()->arch.id) {
            throw ConfigError("average_parameters: heterogeneous architectures");
        }
    }
    nn::Model out = *models.front();
    for (std::size_t l = 0; l < out.layers.size(); ++l) {
        out.layers[l].weight = weights.front() * models.front()->layers[l].weight;
        out.layers[l].bias = weights.front() * models.front()->layers[l].bias;
        for (std::size_t k = 1; k < models.size(); ++k) {
            out.layers[l].weight += weights[k] * models[k]->layers[l].weight;
            out.layers[l].bias += weights[k] * models[k]->layers[l].bias;
        }
    }
    return out;
}

}  // namespace fedkd::fed
