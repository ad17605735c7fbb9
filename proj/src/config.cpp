#include "fedkd/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

namespace fedkd::config {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) {
        return "";
    }
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

std::string strip_comment(const std::string& line) {
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') {
            quoted = !quoted;
        } else if (line[i] == '#' && !quoted) {
            return line.substr(0, i);
        }
    }
    return line;
}

Value parse_scalar(const std::string& text, const std::string& key, std::size_t line_no) {
    if (text.size() >= 2 && text.front() == '"' && text.back() == '"') {
        return text.substr(1, text.size() - 2);
    }
    if (text == "true") {
        return true;
    }
    if (text == "false") {
        return false;
    }
    long long integer = 0;
    {
        const auto result = std::from_chars(text.data(), text.data() + text.size(), integer);
        if (result.ec == std::errc() && result.ptr == text.data() + text.size()) {
            return integer;
        }
    }
    try {
        std::size_t consumed = 0;
        const double value = std::stod(text, &consumed);
        if (consumed == text.size()) {
            return value;
        }
    } catch (const std::exception&) {
    }
    throw ConfigError("config line " + std::to_string(line_no) + ": field \"" + key +
                      "\" has unparsable value \"" + text + "\"");
}

}  // namespace

Table Table::parse(const std::string& text) {
    Table table;
    std::istringstream in(text);
    std::string raw;
    std::string section;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::string line = trim(strip_comment(raw));
        if (line.empty()) {
            continue;
        }
        if (line.front() == '[') {
            if (line.back() != ']' || line.size() < 3) {
                throw ConfigError("config line " + std::to_string(line_no) +
                                  ": malformed section header \"" + line + "\"");
            }
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) +
                              ": expected key = value, got \"" + line + "\"");
        }
        const std::string name = trim(line.substr(0, eq));
        if (name.empty()) {
            throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
        }
        const std::string key = section.empty() ? name : section + "." + name;
        const std::string value_text = trim(line.substr(eq + 1));
        if (value_text.empty()) {
            throw ConfigError("config line " + std::to_string(line_no) + ": field \"" + key +
                              "\" has no value");
        }
        if (value_text.front() == '[') {
            if (value_text.back() != ']') {
                throw ConfigError("config line " + std::to_string(line_no) + ": field \"" +
                                  key + "\" has an unterminated array");
            }
            std::vector<double> numbers;
            std::vector<std::string> strings;
            std::stringstream items(value_text.substr(1, value_text.size() - 2));
            std::string item;
            while (std::getline(items, item, ',')) {
                const std::string entry = trim(item);
                if (entry.empty()) {
                    continue;
                }
                const Value scalar = parse_scalar(entry, key, line_no);
                if (std::holds_alternative<std::string>(scalar)) {
                    strings.push_back(std::get<std::string>(scalar));
                } else if (std::holds_alternative<long long>(scalar)) {
                    numbers.push_back(static_cast<double>(std::get<long long>(scalar)));
                } else if (std::holds_alternative<double>(scalar)) {
                    numbers.push_back(std::get<double>(scalar));
                } else {
                    throw ConfigError("config line " + std::to_string(line_no) + ": field \"" +
                                      key + "\" has an unsupported array element");
                }
            }
            if (!strings.empty() && !numbers.empty()) {
                throw ConfigError("config line " + std::to_string(line_no) + ": field \"" +
                                  key + "\" mixes strings and numbers");
            }
            if (!strings.empty()) {
                table.values_[key] = std::move(strings);
            } else {
                table.values_[key] = std::move(numbers);
            }
            continue;
        }
        table.values_[key] = parse_scalar(value_text, key, line_no);
    }
    return table;
}

Table Table::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("config: cannot open " + path);
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse(buffer.str());
}

long long Table::get_int(const std::string& key, long long fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) {
        return fallback;
    }
    if (const auto* value = std::get_if<long long>(&it->second)) {
        return *value;
    }
    throw ConfigError("field \"" + key + "\" must be an integer");
}

double Table::get_double(const std::string& key, double fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) {
        return fallback;
    }
    if (const auto* value = std::get_if<double>(&it->second)) {
        return *value;
    }
    if (const auto* value = std::get_if<long long>(&it->second)) {
        return static_cast<double>(*value);
    }
    throw ConfigError("field \"" + key + "\" must be a number");
}

bool Table::get_bool(const std::string& key, bool fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) {
        return fallback;
    }
    if (const auto* value = std::get_if<bool>(&it->second)) {
        return *value;
    }
    throw ConfigError("field \"" + key + "\" must be true or false");
}

std::string Table::get_string(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) {
        return fallback;
    }
    if (const auto* value = std::get_if<std::string>(&it->second)) {
        return *value;
    }
    throw ConfigError("field \"" + key + "\" must be a quoted string");
}

std::vector<long long> Table::get_int_list(const std::string& key,
                                           std::vector<long long> fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) {
        return fallback;
    }
    if (const auto* value = std::get_if<std::vector<double>>(&it->second)) {
        std::vector<long long> out;
        for (const double v : *value) {
            const long long i = static_cast<long long>(v);
            if (static_cast<double>(i) != v) {
                throw ConfigError("field \"" + key + "\" must hold integers");
            }
            out.push_back(i);
        }
        return out;
    }
    throw ConfigError("field \"" + key + "\" must be an array of integers");
}

fed::ExperimentConfig load_experiment_config(const Table& table) {
    fed::ExperimentConfig cfg;
    cfg.method = fed::parse_method(table.get_string("experiment.method", "fedkd_nas"));
    cfg.clients = static_cast<int>(table.get_int("experiment.clients", cfg.clients));
    cfg.rounds = static_cast<int>(table.get_int("experiment.rounds", cfg.rounds));
    cfg.threads = static_cast<int>(table.get_int("experiment.threads", cfg.threads));
    cfg.seed = static_cast<std::uint64_t>(table.get_int("experiment.seed", 0));
    cfg.teacher_epochs =
        static_cast<int>(table.get_int("experiment.teacher_epochs", cfg.teacher_epochs));
    cfg.fixed_arch = table.get_string("experiment.fixed_arch", "");

    cfg.data.source = table.get_string("data.source", cfg.data.source);
    cfg.data.path = table.get_string("data.path", "");
    cfg.data.n = static_cast<int>(table.get_int("data.n", cfg.data.n));
    cfg.data.classes = static_cast<int>(table.get_int("data.classes", cfg.data.classes));
    cfg.data.dim = static_cast<int>(table.get_int("data.dim", cfg.data.dim));
    cfg.data.spread = table.get_double("data.spread", cfg.data.spread);
    cfg.data.public_m = static_cast<int>(table.get_int("data.public_m", cfg.data.public_m));
    cfg.data.test_fraction = table.get_double("data.test_fraction", cfg.data.test_fraction);
    cfg.data.regime = data::RegimeSpec::parse(table.get_string("data.distribution", "iid"));

    cfg.hyper.alpha = table.get_double("hyper.alpha", cfg.hyper.alpha);
    cfg.hyper.beta = table.get_double("hyper.beta", cfg.hyper.beta);
    cfg.hyper.gamma = table.get_double("hyper.gamma", cfg.hyper.gamma);
    cfg.hyper.temperature = table.get_double("hyper.temperature", cfg.hyper.temperature);
    cfg.hyper.lambda = table.get_double("hyper.lambda", cfg.hyper.lambda);
    cfg.hyper.lr = table.get_double("hyper.lr", cfg.hyper.lr);
    cfg.hyper.epochs = static_cast<int>(table.get_int("hyper.epochs", cfg.hyper.epochs));
    cfg.hyper.batch = static_cast<int>(table.get_int("hyper.batch", cfg.hyper.batch));
    cfg.hyper.optimizer = table.get_string("hyper.optimizer", cfg.hyper.optimizer);
    cfg.hyper.clip_norm = table.get_double("hyper.clip_norm", cfg.hyper.clip_norm);
    cfg.hyper.beta_decay = table.get_bool("hyper.beta_decay", cfg.hyper.beta_decay);

    const auto to_ints = [](const std::vector<long long>& values) {
        std::vector<int> out;
        out.reserve(values.size());
        for (const long long v : values) {
            out.push_back(static_cast<int>(v));
        }
        return out;
    };
    cfg.space.depths = to_ints(table.get_int_list(
        "space.depths", {cfg.space.depths.begin(), cfg.space.depths.end()}));
    cfg.space.widths = to_ints(table.get_int_list(
        "space.widths", {cfg.space.widths.begin(), cfg.space.widths.end()}));
    cfg.space.subset = static_cast<int>(table.get_int("space.subset", cfg.space.subset));
    cfg.space.radius = static_cast<int>(table.get_int("space.radius", cfg.space.radius));
    cfg.space.proxy_epochs =
        static_cast<int>(table.get_int("space.proxy_epochs", cfg.space.proxy_epochs));

    const std::string rule = table.get_string("aggregation.rule", "mean");
    if (rule == "mean") {
        cfg.aggregation.rule = server::AggregationRule::kMean;
    } else if (rule == "median") {
        cfg.aggregation.rule = server::AggregationRule::kMedian;
    } else if (rule == "trimmed") {
        cfg.aggregation.rule = server::AggregationRule::kTrimmed;
    } else {
        throw ConfigError("field \"aggregation.rule\" must be mean, median or trimmed");
    }
    cfg.aggregation.trim_fraction =
        table.get_double("aggregation.trim_fraction", cfg.aggregation.trim_fraction);

    cfg.validate();
    return cfg;
}

}  // namespace fedkd::config
