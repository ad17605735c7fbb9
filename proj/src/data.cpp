#include "fedkd/data.hpp"

#include "fedkd/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

namespace fedkd::data {

RegimeSpec RegimeSpec::parse(const std::string& text) {
    RegimeSpec spec;
    if (text == "iid") {
        spec.kind = Regime::kIid;
        return spec;
    }
    const auto colon = text.find(':');
    const std::string head = text.substr(0, colon);
    const std::string tail = colon == std::string::npos ? "" : text.substr(colon + 1);
    if (head == "dirichlet") {
        spec.kind = Regime::kDirichlet;
        if (!tail.empty()) {
            spec.alpha = std::stod(tail);
        }
        if (!(spec.alpha > 0.0)) {
            throw ParamError("distribution: dirichlet alpha must be positive");
        }
        return spec;
    }
    if (head == "shards") {
        spec.kind = Regime::kShards;
        if (!tail.empty()) {
            spec.shards_per_client = std::stoi(tail);
        }
        if (spec.shards_per_client < 1) {
            throw ParamError("distribution: shards per client must be >= 1");
        }
        return spec;
    }
    throw ParamError("distribution: expected iid, dirichlet:<alpha> or shards:<s>, got \"" +
                     text + "\"");
}

std::string RegimeSpec::to_string() const {
    switch (kind) {
        case Regime::kIid:
            return "iid";
        case Regime::kDirichlet: {
            char buf[64];
            std::snprintf(buf, sizeof(buf), "dirichlet:%g", alpha);
            return buf;
        }
        case Regime::kShards:
            return "shards:" + std::to_string(shards_per_client);
    }
    return "?";
}

Dataset generate_synthetic(int n, int num_classes, int dim, double cluster_spread,
                           std::uint64_t seed) {
    if (num_classes < 2 || dim < 2) {
        throw ParamError("generate_synthetic: need num_classes >= 2 and dim >= 2");
    }
    if (n < num_classes * 10) {
        throw ParamError("generate_synthetic: need n >= 10 * num_classes");
    }
    constexpr double kMeanScale = 3.0;

    // Class means: axis-aligned simplex corners when they fit, otherwise a
    // ring in the first two dimensions.
    Matrix means = Matrix::Zero(num_classes, dim);
    if (num_classes <= dim) {
        for (int c = 0; c < num_classes; ++c) {
            means(c, c) = kMeanScale;
        }
    } else {
        for (int c = 0; c < num_classes; ++c) {
            const double angle = 2.0 * std::numbers::pi * c / num_classes;
            means(c, 0) = kMeanScale * std::cos(angle);
            means(c, 1) = kMeanScale * std::sin(angle);
        }
    }

    Rng rng(derive_seed(seed, {stream_tag("synthetic")}));
    Dataset ds;
    ds.num_classes = num_classes;
    ds.name = "synthetic";
    ds.inputs.resize(n, dim);
    ds.labels.resize(static_cast<std::size_t>(n));

    // Balanced labels (counts within +-1), then a seeded shuffle of rows.
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    for (int i = 0; i < n; ++i) {
        const int label = i % num_classes;
        const int row = order[static_cast<std::size_t>(i)];
        ds.labels[static_cast<std::size_t>(row)] = label;
        for (int j = 0; j < dim; ++j) {
            ds.inputs(row, j) = means(label, j) + cluster_spread * rng.normal();
        }
    }
    return ds;
}

std::pair<std::vector<int>, std::vector<int>> stratified_split(const Dataset& ds,
                                                               double test_fraction,
                                                               std::uint64_t seed) {
    if (test_fraction < 0.0 || test_fraction >= 1.0) {
        throw ParamError("stratified_split: test_fraction must be in [0, 1)");
    }
    std::vector<std::vector<int>> by_class(static_cast<std::size_t>(ds.num_classes));
    for (int i = 0; i < ds.size(); ++i) {
        by_class[static_cast<std::size_t>(ds.labels[static_cast<std::size_t>(i)])].push_back(i);
    }
    Rng rng(derive_seed(seed, {stream_tag("test_split")}));
    std::vector<int> rest, test;
    for (auto& pool : by_class) {
        rng.shuffle(pool);
        const auto take = static_cast<std::size_t>(
            std::llround(test_fraction * static_cast<double>(pool.size())));
        for (std::size_t i = 0; i < pool.size(); ++i) {
            (i < take ? test : rest).push_back(pool[i]);
        }
    }
    std::sort(rest.begin(), rest.end());
    std::sort(test.begin(), test.end());
    return {std::move(rest), std::move(test)};
}

namespace {

// Largest-remainder split of `total` into weighted integer parts.
std::vector<int> largest_remainder(const std::vector<double>& weights, int total) {
    const double weight_sum = std::accumulate(weights.begin(), weights.end(), 0.0);
    std::vector<int> counts(weights.size(), 0);
    if (weight_sum <= 0.0 || total == 0) {
        return counts;
    }
    std::vector<std::pair<double, std::size_t>> remainders;
    int assigned = 0;
    for (std::size_t k = 0; k < weights.size(); ++k) {
        const double exact = static_cast<double>(total) * weights[k] / weight_sum;
        counts[k] = static_cast<int>(std::floor(exact));
        assigned += counts[k];
        remainders.emplace_back(exact - static_cast<double>(counts[k]), k);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (int i = 0; i < total - assigned; ++i) {
        counts[remainders[static_cast<std::size_t>(i)].second] += 1;
    }
    return counts;
}

std::vector<std::vector<int>> split_iid(const std::vector<int>& pool, int clients, Rng& rng) {
    std::vector<int> shuffled = pool;
    rng.shuffle(shuffled);
    std::vector<std::vector<int>> out(static_cast<std::size_t>(clients));
    for (std::size_t i = 0; i < shuffled.size(); ++i) {
        out[i % static_cast<std::size_t>(clients)].push_back(shuffled[i]);
    }
    return out;
}

std::vector<std::vector<int>> split_dirichlet(const Dataset& ds, const std::vector<int>& pool,
                                              int clients, double alpha, Rng& rng) {
    // Each client draws class proportions from Dir(alpha * 1_C); every
    // class's samples are then allocated across clients by largest-remainder
    // rounding of the clients' relative demand for that class.
    std::vector<std::vector<double>> proportions(static_cast<std::size_t>(clients));
    for (auto& p : proportions) {
        p = rng.dirichlet(alpha, ds.num_classes);
    }
    std::vector<std::vector<int>> by_class(static_cast<std::size_t>(ds.num_classes));
    for (const int i : pool) {
        by_class[static_cast<std::size_t>(ds.labels[static_cast<std::size_t>(i)])].push_back(i);
    }
    std::vector<std::vector<int>> out(static_cast<std::size_t>(clients));
    for (int c = 0; c < ds.num_classes; ++c) {
        auto& samples = by_class[static_cast<std::size_t>(c)];
        rng.shuffle(samples);
        std::vector<double> weights(static_cast<std::size_t>(clients));
        for (int k = 0; k < clients; ++k) {
            weights[static_cast<std::size_t>(k)] =
                proportions[static_cast<std::size_t>(k)][static_cast<std::size_t>(c)];
        }
        const std::vector<int> counts =
            largest_remainder(weights, static_cast<int>(samples.size()));
        std::size_t cursor = 0;
        for (int k = 0; k < clients; ++k) {
            for (int taken = 0; taken < counts[static_cast<std::size_t>(k)]; ++taken) {
                out[static_cast<std::size_t>(k)].push_back(samples[cursor++]);
            }
        }
    }
    return out;
}

std::vector<std::vector<int>> split_shards(const Dataset& ds, const std::vector<int>& pool,
                                           int clients, int shards_per_client, Rng& rng) {
    std::vector<int> sorted = pool;
    std::stable_sort(sorted.begin(), sorted.end(), [&](int a, int b) {
        return ds.labels[static_cast<std::size_t>(a)] < ds.labels[static_cast<std::size_t>(b)];
    });
    const int shard_count = clients * shards_per_client;
    if (static_cast<int>(sorted.size()) < shard_count) {
        throw ParamError("partition: not enough samples for " + std::to_string(shard_count) +
                         " shards");
    }
    std::vector<int> shard_order(static_cast<std::size_t>(shard_count));
    std::iota(shard_order.begin(), shard_order.end(), 0);
    rng.shuffle(shard_order);

    const std::size_t total = sorted.size();
    std::vector<std::vector<int>> out(static_cast<std::size_t>(clients));
    for (int slot = 0; slot < shard_count; ++slot) {
        const int shard = shard_order[static_cast<std::size_t>(slot)];
        const std::size_t begin = total * static_cast<std::size_t>(shard) /
                                  static_cast<std::size_t>(shard_count);
        const std::size_t end = total * (static_cast<std::size_t>(shard) + 1) /
                                static_cast<std::size_t>(shard_count);
        auto& bucket = out[static_cast<std::size_t>(slot / shards_per_client)];
        for (std::size_t i = begin; i < end; ++i) {
            bucket.push_back(sorted[i]);
        }
    }
    return out;
}

}  // namespace

Partition partition(const Dataset& ds, int clients, const RegimeSpec& regime,
                    std::uint64_t seed, const std::vector<int>& pool) {
    if (clients < 2) {
        throw ParamError("partition: need at least 2 clients");
    }
    constexpr int kMaxRetries = 32;
    for (int attempt = 0; attempt < kMaxRetries; ++attempt) {
        const std::uint64_t attempt_seed = seed + static_cast<std::uint64_t>(attempt);
        Rng rng(derive_seed(attempt_seed, {stream_tag("partition")}));
        std::vector<std::vector<int>> assignments;
        switch (regime.kind) {
            case Regime::kIid:
                assignments = split_iid(pool, clients, rng);
                break;
            case Regime::kDirichlet:
                assignments = split_dirichlet(ds, pool, clients, regime.alpha, rng);
                break;
            case Regime::kShards:
                assignments = split_shards(ds, pool, clients, regime.shards_per_client, rng);
                break;
        }
        const bool any_empty = std::any_of(assignments.begin(), assignments.end(),
                                           [](const auto& a) { return a.empty(); });
        if (any_empty) {
            continue;
        }
        for (auto& a : assignments) {
            std::sort(a.begin(), a.end());
        }
        Partition part;
        part.assignments = std::move(assignments);
        part.regime = regime;
        part.seed = attempt_seed;
        return part;
    }
    throw PartitionError("partition: retries exhausted without covering every client");
}

Partition partition(const Dataset& ds, int clients, const RegimeSpec& regime,
                    std::uint64_t seed) {
    std::vector<int> pool(static_cast<std::size_t>(ds.size()));
    std::iota(pool.begin(), pool.end(), 0);
    return partition(ds, clients, regime, seed, pool);
}

PublicSet make_public_reference(const Dataset& ds, const std::vector<int>& pool, int m,
                                std::uint64_t seed) {
    if (m < 1 || m > static_cast<int>(pool.size())) {
        throw ParamError("make_public_reference: m must be in [1, pool size]");
    }
    std::vector<int> shuffled = pool;
    Rng rng(derive_seed(seed, {stream_tag("public_set")}));
    rng.shuffle(shuffled);
    shuffled.resize(static_cast<std::size_t>(m));

    PublicSet pub;
    pub.source_rows = std::move(shuffled);
    pub.inputs.resize(m, ds.dim());
    pub.labels.resize(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        const int row = pub.source_rows[static_cast<std::size_t>(i)];
        pub.inputs.row(i) = ds.inputs.row(row);
        pub.labels[static_cast<std::size_t>(i)] = ds.labels[static_cast<std::size_t>(row)];
    }
    return pub;
}

Dataset subset(const Dataset& ds, const std::vector<int>& indices) {
    Dataset out;
    out.num_classes = ds.num_classes;
    out.name = ds.name;
    out.inputs.resize(static_cast<Eigen::Index>(indices.size()), ds.dim());
    out.labels.resize(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        out.inputs.row(static_cast<Eigen::Index>(i)) = ds.inputs.row(indices[i]);
        out.labels[i] = ds.labels[static_cast<std::size_t>(indices[i])];
    }
    return out;
}

namespace {

Dataset load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ParseError("load_dataset: cannot open " + path);
    }
    std::string header;
    if (!std::getline(in, header) || header.rfind("label,", 0) != 0) {
        throw ParseError(path + ": expected header starting with `label,`");
    }
    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
    std::string line;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        std::vector<double> values;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            double value = 0.0;
            const auto* first = cell.data();
            const auto* last = cell.data() + cell.size();
            const auto result = std::from_chars(first, last, value);
            if (result.ec != std::errc() || result.ptr != last) {
                throw ParseError(path + ":" + std::to_string(line_no) + ": bad number \"" +
                                 cell + "\"");
            }
            values.push_back(value);
        }
        if (values.size() < 2) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": too few columns");
        }
        if (!rows.empty() && values.size() != rows.front().size() + 1) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": ragged row");
        }
        const double label = values.front();
        if (label < 0 || label != std::floor(label)) {
            throw DataError(path + ":" + std::to_string(line_no) + ": label must be a "
                            "nonnegative integer");
        }
        labels.push_back(static_cast<int>(label));
        rows.emplace_back(values.begin() + 1, values.end());
    }
    if (rows.empty()) {
        throw ParseError(path + ": no data rows");
    }
    Dataset ds;
    ds.name = path;
    ds.labels = std::move(labels);
    ds.num_classes = *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
    ds.inputs.resize(static_cast<Eigen::Index>(rows.size()),
                     static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < rows[i].size(); ++j) {
            ds.inputs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
        }
    }
    return ds;
}

std::uint32_t read_be32(std::istream& in, const std::string& path, std::size_t offset) {
    unsigned char bytes[4];
    if (!in.read(reinterpret_cast<char*>(bytes), 4)) {
        throw ParseError(path + ": truncated at byte " + std::to_string(offset));
    }
    return (static_cast<std::uint32_t>(bytes[0]) << 24) |
           (static_cast<std::uint32_t>(bytes[1]) << 16) |
           (static_cast<std::uint32_t>(bytes[2]) << 8) | static_cast<std::uint32_t>(bytes[3]);
}

Dataset load_idx(const std::string& path) {
    std::ifstream images(path, std::ios::binary);
    if (!images) {
        throw ParseError("load_dataset: cannot open " + path);
    }
    const std::uint32_t magic = read_be32(images, path, 0);
    if (magic != 0x00000803) {
        throw ParseError(path + ": bad IDX image magic at byte 0");
    }
    const std::uint32_t count = read_be32(images, path, 4);
    const std::uint32_t rows = read_be32(images, path, 8);
    const std::uint32_t cols = read_be32(images, path, 12);
    const std::size_t pixels = static_cast<std::size_t>(rows) * cols;

    std::string labels_path = path;
    const auto pos = labels_path.rfind("images");
    if (pos == std::string::npos) {
        throw ParseError(path + ": cannot derive labels file (no \"images\" in name)");
    }
    labels_path.replace(pos, 6, "labels");
    std::ifstream labels(labels_path, std::ios::binary);
    if (!labels) {
        throw ParseError("load_dataset: cannot open companion " + labels_path);
    }
    if (read_be32(labels, labels_path, 0) != 0x00000801) {
        throw ParseError(labels_path + ": bad IDX label magic at byte 0");
    }
    if (read_be32(labels, labels_path, 4) != count) {
        throw ParseError(labels_path + ": label count differs from image count");
    }

    Dataset ds;
    ds.name = path;
    ds.inputs.resize(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(pixels));
    ds.labels.resize(count);
    std::vector<unsigned char> buffer(pixels);
    for (std::uint32_t i = 0; i < count; ++i) {
        if (!images.read(reinterpret_cast<char*>(buffer.data()),
                         static_cast<std::streamsize>(pixels))) {
            throw ParseError(path + ": truncated at byte " +
                             std::to_string(16 + static_cast<std::size_t>(i) * pixels));
        }
        for (std::size_t j = 0; j < pixels; ++j) {
            ds.inputs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                static_cast<double>(buffer[j]) / 255.0;
        }
        char label = 0;
        if (!labels.get(label)) {
            throw ParseError(labels_path + ": truncated at byte " + std::to_string(8 + i));
        }
        ds.labels[i] = static_cast<unsigned char>(label);
    }
    ds.num_classes = ds.labels.empty()
                         ? 0
                         : *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
    if (ds.num_classes < 2) {
        throw DataError(path + ": fewer than two classes");
    }
    return ds;
}

}  // namespace

Dataset load_dataset(const std::string& path, FileFormat format) {
    Dataset ds = format == FileFormat::kCsv ? load_csv(path) : load_idx(path);
    if (ds.size() < ds.num_classes) {
        throw DataError(path + ": fewer samples than classes");
    }
    return ds;
}

void save_csv(const Dataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw DataError("save_csv: cannot open " + path);
    }
    out << "label";
    for (Eigen::Index j = 0; j < ds.dim(); ++j) {
        out << ",f" << j;
    }
    out << '\n';
    char buf[64];
    for (Eigen::Index i = 0; i < ds.size(); ++i) {
        out << ds.labels[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < ds.dim(); ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", ds.inputs(i, j));
            out << ',' << buf;
        }
        out << '\n';
    }
}

std::vector<int> class_histogram(const Dataset& ds, const std::vector<int>& indices) {
    std::vector<int> hist(static_cast<std::size_t>(ds.num_classes), 0);
    for (const int i : indices) {
        hist[static_cast<std::size_t>(ds.labels[static_cast<std::size_t>(i)])] += 1;
    }
    return hist;
}

}  // namespace fedkd::data
