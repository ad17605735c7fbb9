#pragma once

#include "fedkd/federation.hpp"
#include "fedkd/types.hpp"

#include <map>
#include <string>
#include <variant>
#include <vector>

namespace fedkd::config {

using Value = std::variant<bool, long long, double, std::string, std::vector<double>,
                           std::vector<std::string>>;

/// Flat sectioned key-value file, toml-style:
///   [section]
///   key = 3          # integers
///   rate = 0.5       # floats
///   name = "text"    # quoted strings
///   flag = true
///   widths = [8, 16] # arrays of numbers or strings
/// Keys are addressed as "section.key". Parse errors and typed getters
/// name the offending field.
class Table {
  public:
    static Table parse(const std::string& text);
    static Table parse_file(const std::string& path);

    bool contains(const std::string& key) const { return values_.contains(key); }

    long long get_int(const std::string& key, long long fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    std::vector<long long> get_int_list(const std::string& key,
                                        std::vector<long long> fallback) const;

    const std::map<std::string, Value>& values() const { return values_; }

  private:
    std::map<std::string, Value> values_;
};

/// Builds an experiment configuration from a parsed table, applying
/// defaults for absent keys and validating the result.
fed::ExperimentConfig load_experiment_config(const Table& table);

}  // namespace fedkd::config
