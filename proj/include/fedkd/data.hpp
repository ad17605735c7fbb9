#pragma once

#include "fedkd/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace fedkd::data {

struct Dataset {
    Matrix inputs;            // N x d
    std::vector<int> labels;  // values in [0, num_classes)
    int num_classes = 0;
    std::string name;

    Eigen::Index size() const { return inputs.rows(); }
    Eigen::Index dim() const { return inputs.cols(); }
};

enum class Regime { kIid, kDirichlet, kShards };

struct RegimeSpec {
    Regime kind = Regime::kIid;
    double alpha = 0.1;          // dirichlet concentration
    int shards_per_client = 2;   // shards regime

    /// Parses "iid", "dirichlet:<alpha>" or "shards:<s>".
    static RegimeSpec parse(const std::string& text);
    std::string to_string() const;
};

struct Partition {
    std::vector<std::vector<int>> assignments;  // per client, sorted sample indices
    RegimeSpec regime;
    std::uint64_t seed = 0;
};

/// Shared reference rows, fixed order. Labels are retained for server-side
/// teacher pretraining only and are never exposed to clients.
struct PublicSet {
    Matrix inputs;               // M x d
    std::vector<int> labels;
    std::vector<int> source_rows;  // indices into the originating dataset
};

/// C Gaussian clusters with means on a scaled simplex (ring in the first two
/// dimensions when C > d). Class counts balanced within +-1; bitwise
/// deterministic per seed.
Dataset generate_synthetic(int n, int num_classes, int dim, double cluster_spread,
                           std::uint64_t seed);

/// Splits off a stratified test holdout. Returns (rest, test) index lists.
std::pair<std::vector<int>, std::vector<int>> stratified_split(const Dataset& ds,
                                                               double test_fraction,
                                                               std::uint64_t seed);

/// Partitions the given index pool across clients under the regime. Empty
/// clients are resampled with seed+1, seed+2, ... (bounded retries).
Partition partition(const Dataset& ds, int clients, const RegimeSpec& regime,
                    std::uint64_t seed, const std::vector<int>& pool);

/// Whole-dataset convenience overload.
Partition partition(const Dataset& ds, int clients, const RegimeSpec& regime,
                    std::uint64_t seed);

/// Draws m rows from the pool (without replacement, seeded) as the public
/// reference set. Row order is fixed by the draw.
PublicSet make_public_reference(const Dataset& ds, const std::vector<int>& pool, int m,
                                std::uint64_t seed);

/// Materializes the rows of `indices` as a standalone dataset.
Dataset subset(const Dataset& ds, const std::vector<int>& indices);

enum class FileFormat { kCsv, kIdx };

/// CSV: header `label,f0,f1,...`; IDX: big-endian magic + dims (images file,
/// with a sibling labels file found by replacing "images" with "labels").
/// Inputs are scaled to [0,1] for IDX (ubyte) data.
Dataset load_dataset(const std::string& path, FileFormat format);

/// Writes `label,f0,...` CSV with round-trip-exact floats.
void save_csv(const Dataset& ds, const std::string& path);

/// Per-class sample counts.
std::vector<int> class_histogram(const Dataset& ds, const std::vector<int>& indices);

}  // namespace fedkd::data
