#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fedkd/data.hpp"
#include "fedkd/nn.hpp"
#include "fedkd/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

using namespace fedkd;
using namespace fedkd::data;

namespace {

// Brute-force nearest-centroid classifier accuracy.
double nearest_centroid_accuracy(const Dataset& ds) {
    Matrix centroids = Matrix::Zero(ds.num_classes, ds.dim());
    std::vector<int> counts(static_cast<std::size_t>(ds.num_classes), 0);
    for (Eigen::Index i = 0; i < ds.size(); ++i) {
        centroids.row(ds.labels[static_cast<std::size_t>(i)]) += ds.inputs.row(i);
        counts[static_cast<std::size_t>(ds.labels[static_cast<std::size_t>(i)])] += 1;
    }
    for (int c = 0; c < ds.num_classes; ++c) {
        centroids.row(c) /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
    }
    int correct = 0;
    for (Eigen::Index i = 0; i < ds.size(); ++i) {
        int best = 0;
        double best_dist = (ds.inputs.row(i) - centroids.row(0)).squaredNorm();
        for (int c = 1; c < ds.num_classes; ++c) {
            const double dist = (ds.inputs.row(i) - centroids.row(c)).squaredNorm();
            if (dist < best_dist) {
                best_dist = dist;
                best = c;
            }
        }
        if (best == ds.labels[static_cast<std::size_t>(i)]) {
            ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(ds.size());
}

double histogram_entropy(const std::vector<int>& hist) {
    const double total = std::accumulate(hist.begin(), hist.end(), 0.0);
    double entropy = 0.0;
    for (const int count : hist) {
        if (count > 0) {
            const double p = count / total;
            entropy -= p * std::log(p);
        }
    }
    return entropy;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("generate_synthetic: separable limit is linearly classifiable") {
    const Dataset ds = generate_synthetic(100, 2, 2, 1e-6, 7);
    nn::Model model = nn::Model::init(ArchitectureSpec::make({4}, 2, 2), 99);
    nn::OptimizerState opt = nn::OptimizerState::sgd(0.1);
    for (int epoch = 0; epoch < 20; ++epoch) {
        nn::Batch batch;
        batch.inputs = ds.inputs;
        batch.labels = ds.labels;
        nn::train_step(model, batch, nullptr, {0.0, 1.0}, opt);
    }
    const Matrix logits = nn::forward(model, ds.inputs);
    int correct = 0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        Eigen::Index best = 0;
        logits.row(i).maxCoeff(&best);
        correct += static_cast<int>(best) == ds.labels[static_cast<std::size_t>(i)] ? 1 : 0;
    }
    CHECK(correct == 100);
}

TEST_CASE("generate_synthetic: deterministic and balanced") {
    const Dataset a = generate_synthetic(103, 10, 4, 1.0, 3);
    const Dataset b = generate_synthetic(103, 10, 4, 1.0, 3);
    CHECK(a.inputs == b.inputs);
    CHECK(a.labels == b.labels);

    std::vector<int> all(static_cast<std::size_t>(a.size()));
    std::iota(all.begin(), all.end(), 0);
    const std::vector<int> hist = class_histogram(a, all);
    const auto [lo, hi] = std::minmax_element(hist.begin(), hist.end());
    CHECK(*hi - *lo <= 1);

    CHECK_THROWS_AS(generate_synthetic(15, 2, 2, 1.0, 0), ParamError);
}

TEST_CASE("generate_synthetic: nearest-centroid baseline on the desk dataset") {
    // Oracle baseline recorded before training-based experiments; the
    // simplex means at spread 1.0 keep classes mostly separated. 539 of the
    // 600 samples sit nearest their own centroid.
    const Dataset ds = generate_synthetic(600, 10, 16, 1.0, 0);
    const double acc = nearest_centroid_accuracy(ds);
    CHECK(acc == doctest::Approx(539.0 / 600.0).epsilon(1e-12));
    CHECK(acc >= 0.85);
}

TEST_CASE("stratified_split: per-class test fraction") {
    const Dataset ds = generate_synthetic(200, 4, 4, 1.0, 5);
    const auto [rest, test] = stratified_split(ds, 0.2, 11);
    CHECK(rest.size() + test.size() == 200);
    const std::vector<int> test_hist = class_histogram(ds, test);
    for (const int count : test_hist) {
        CHECK(count == 10);  // 50 per class, 20% each
    }
    std::set<int> seen(rest.begin(), rest.end());
    for (const int i : test) {
        CHECK(!seen.contains(i));
    }
}

TEST_CASE("partition: iid split is equal when K divides N") {
    const Dataset ds = generate_synthetic(600, 10, 4, 1.0, 1);
    const Partition part = partition(ds, 5, RegimeSpec::parse("iid"), 2);
    for (const auto& bucket : part.assignments) {
        CHECK(bucket.size() == 120);
    }
}

TEST_CASE("partition: shards bound the per-client label diversity") {
    const Dataset ds = generate_synthetic(600, 10, 4, 1.0, 4);
    const Partition part = partition(ds, 5, RegimeSpec::parse("shards:2"), 9);
    for (const auto& bucket : part.assignments) {
        std::set<int> labels;
        for (const int i : bucket) {
            labels.insert(ds.labels[static_cast<std::size_t>(i)]);
        }
        CHECK(labels.size() <= 2);
    }
}

TEST_CASE("partition: dirichlet approaches iid as alpha grows") {
    const Dataset ds = generate_synthetic(600, 10, 4, 1.0, 6);
    std::vector<int> all(static_cast<std::size_t>(ds.size()));
    std::iota(all.begin(), all.end(), 0);
    const std::vector<int> global = class_histogram(ds, all);

    const auto mean_l1_to_global = [&](double alpha, std::uint64_t seed) {
        const Partition part =
            partition(ds, 5, RegimeSpec::parse("dirichlet:" + std::to_string(alpha)), seed);
        double total = 0.0;
        for (const auto& bucket : part.assignments) {
            const std::vector<int> hist = class_histogram(ds, bucket);
            const double n = static_cast<double>(bucket.size());
            double l1 = 0.0;
            for (int c = 0; c < ds.num_classes; ++c) {
                l1 += std::abs(hist[static_cast<std::size_t>(c)] / n -
                               global[static_cast<std::size_t>(c)] / 600.0);
            }
            total += l1;
        }
        return total / 5.0;
    };

    double skewed = 0.0, nearly_iid = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        skewed += mean_l1_to_global(0.1, seed);
        nearly_iid += mean_l1_to_global(1000.0, seed);
    }
    CHECK(nearly_iid / 20.0 < 0.1);
    CHECK(skewed / 20.0 > 5.0 * (nearly_iid / 20.0));
}

TEST_CASE("partition: label-entropy rises with alpha") {
    const Dataset ds = generate_synthetic(600, 10, 4, 1.0, 8);
    const auto mean_entropy = [&](double alpha) {
        double total = 0.0;
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            const Partition part = partition(
                ds, 5, RegimeSpec::parse("dirichlet:" + std::to_string(alpha)), seed);
            for (const auto& bucket : part.assignments) {
                total += histogram_entropy(class_histogram(ds, bucket));
            }
        }
        return total / (20.0 * 5.0);
    };
    const double low = mean_entropy(0.1);
    const double mid = mean_entropy(1.0);
    const double high = mean_entropy(100.0);
    CHECK(low < mid);
    CHECK(mid < high);
}

TEST_CASE("partition: disjointness and coverage across regimes and seeds") {
    const Dataset ds = generate_synthetic(300, 5, 4, 1.0, 10);
    const std::vector<RegimeSpec> regimes = {RegimeSpec::parse("iid"),
                                             RegimeSpec::parse("dirichlet:0.1"),
                                             RegimeSpec::parse("shards:2")};
    for (const auto& regime : regimes) {
        for (std::uint64_t seed = 0; seed < 100; ++seed) {
            const Partition part = partition(ds, 4, regime, seed);
            std::set<int> seen;
            for (const auto& bucket : part.assignments) {
                CHECK(!bucket.empty());
                for (const int i : bucket) {
                    CHECK(i >= 0);
                    CHECK(i < 300);
                    CHECK(!seen.contains(i));
                    seen.insert(i);
                }
            }
        }
    }
}

TEST_CASE("partition: impossible shard demands raise errors") {
    const Dataset ds = generate_synthetic(60, 2, 4, 1.0, 12);
    CHECK_THROWS_AS(partition(ds, 40, RegimeSpec::parse("shards:2"), 0), ParamError);
    CHECK_THROWS_AS(partition(ds, 1, RegimeSpec::parse("iid"), 0), ParamError);
    CHECK_THROWS_AS(RegimeSpec::parse("bogus"), ParamError);
}

TEST_CASE("make_public_reference: whole holdout, order-stable, disjoint") {
    const Dataset ds = generate_synthetic(200, 4, 4, 1.0, 13);
    const auto [rest, test] = stratified_split(ds, 0.2, 13);
    const PublicSet whole = make_public_reference(ds, rest, static_cast<int>(rest.size()), 1);
    CHECK(whole.inputs.rows() == static_cast<Eigen::Index>(rest.size()));
    const PublicSet again = make_public_reference(ds, rest, static_cast<int>(rest.size()), 1);
    CHECK(whole.source_rows == again.source_rows);

    const PublicSet pub = make_public_reference(ds, rest, 40, 1);
    const std::set<int> pub_rows(pub.source_rows.begin(), pub.source_rows.end());
    for (const int i : test) {
        CHECK(!pub_rows.contains(i));
    }
    std::vector<int> remaining;
    for (const int i : rest) {
        if (!pub_rows.contains(i)) {
            remaining.push_back(i);
        }
    }
    const Partition part = partition(ds, 4, RegimeSpec::parse("iid"), 3, remaining);
    for (const auto& bucket : part.assignments) {
        for (const int i : bucket) {
            CHECK(!pub_rows.contains(i));
        }
    }

    CHECK_THROWS_AS(make_public_reference(ds, rest, static_cast<int>(rest.size()) + 1, 1),
                    ParamError);
}

TEST_CASE("make_public_reference: class coverage on the desk dataset") {
    const Dataset ds = generate_synthetic(600, 10, 16, 1.0, 0);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto [rest, test] = stratified_split(ds, 0.2, seed);
        const PublicSet pub = make_public_reference(ds, rest, 100, seed);
        std::set<int> classes;
        for (const int label : pub.labels) {
            classes.insert(label);
        }
        CHECK(classes.size() >= 8);
    }
}

TEST_CASE("csv: two-row file and round trip") {
    const std::string small = temp_path("fedkd_small.csv");
    {
        std::ofstream out(small);
        out << "label,f0,f1\n0,0.25,1\n1,-2,0.5\n";
    }
    const Dataset tiny = load_dataset(small, FileFormat::kCsv);
    CHECK(tiny.size() == 2);
    CHECK(tiny.num_classes == 2);
    CHECK(tiny.inputs(1, 0) == -2.0);

    const Dataset ds = generate_synthetic(60, 3, 5, 1.0, 21);
    const std::string path = temp_path("fedkd_roundtrip.csv");
    save_csv(ds, path);
    const Dataset back = load_dataset(path, FileFormat::kCsv);
    CHECK(back.labels == ds.labels);
    CHECK((back.inputs - ds.inputs).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("csv: malformed rows name the line") {
    const std::string path = temp_path("fedkd_bad.csv");
    {
        std::ofstream out(path);
        out << "label,f0\n0,nope\n";
    }
    CHECK_THROWS_WITH_AS(load_dataset(path, FileFormat::kCsv),
                         doctest::Contains(":2:"), ParseError);
}

TEST_CASE("idx: round trip and wrong magic") {
    const std::string images = temp_path("fedkd_train_images.idx");
    const std::string labels = temp_path("fedkd_train_labels.idx");
    const auto be32 = [](std::ofstream& out, std::uint32_t v) {
        for (int shift = 24; shift >= 0; shift -= 8) {
            out.put(static_cast<char>((v >> shift) & 0xFF));
        }
    };
    {
        std::ofstream out(images, std::ios::binary);
        be32(out, 0x00000803);
        be32(out, 4);  // count
        be32(out, 2);  // rows
        be32(out, 2);  // cols
        const unsigned char pixels[] = {0,   255, 8,  16, 255, 0,  1, 2,
                                        128, 64,  32, 16, 255, 255, 0, 0};
        out.write(reinterpret_cast<const char*>(pixels), sizeof(pixels));
    }
    {
        std::ofstream out(labels, std::ios::binary);
        be32(out, 0x00000801);
        be32(out, 4);
        const unsigned char values[] = {0, 1, 1, 0};
        out.write(reinterpret_cast<const char*>(values), sizeof(values));
    }
    const Dataset ds = load_dataset(images, FileFormat::kIdx);
    CHECK(ds.size() == 4);
    CHECK(ds.dim() == 4);
    CHECK(ds.num_classes == 2);
    CHECK(ds.inputs(0, 1) == 1.0);   // 255 scaled
    CHECK(ds.inputs(0, 0) == 0.0);
    CHECK(ds.labels == std::vector<int>{0, 1, 1, 0});

    {
        std::ofstream out(images, std::ios::binary);
        be32(out, 0x12345678);
    }
    CHECK_THROWS_WITH_AS(load_dataset(images, FileFormat::kIdx),
                         doctest::Contains("magic"), ParseError);
}
