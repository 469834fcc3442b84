#pragma once

#include <algorithm>
#include <charconv>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace moprune {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad user input: malformed files, inconsistent dimensions, bad config.
class ValidationError : public Error {
public:
    using Error::Error;
};

class ParseError : public ValidationError {
public:
    ParseError(const std::string& source, std::size_t line, const std::string& what)
        : ValidationError(source + ":" + std::to_string(line) + ": " + what), line_(line)
    {
    }

    [[nodiscard]] std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

// ---------------------------------------------------------------------------
// PruningMask

/// Binary vector over the P extracted features. Bit j = 0 disconnects input
/// feature j from the dense head.
class PruningMask {
public:
    PruningMask() = default;
    explicit PruningMask(std::size_t length, bool value = false) : bits_(length, value ? 1 : 0) {}
    explicit PruningMask(std::vector<std::uint8_t> bits) : bits_(std::move(bits))
    {
        for (auto b : bits_)
            if (b > 1) throw ValidationError("pruning mask elements must be 0 or 1");
    }
    PruningMask(std::initializer_list<int> bits)
    {
        bits_.reserve(bits.size());
        for (int b : bits) {
            if (b != 0 && b != 1) throw ValidationError("pruning mask elements must be 0 or 1");
            bits_.push_back(static_cast<std::uint8_t>(b));
        }
    }

    [[nodiscard]] std::size_t size() const noexcept { return bits_.size(); }
    [[nodiscard]] bool operator[](std::size_t i) const noexcept { return bits_[i] != 0; }
    void set(std::size_t i, bool v) noexcept { bits_[i] = v ? 1 : 0; }
    void flip(std::size_t i) noexcept { bits_[i] ^= 1; }
    [[nodiscard]] std::span<const std::uint8_t> bits() const noexcept { return bits_; }

    /// Indices of the connected features, ascending.
    [[nodiscard]] std::vector<std::size_t> active_indices() const
    {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < bits_.size(); ++i)
            if (bits_[i]) out.push_back(i);
        return out;
    }

    /// Hex string, most-significant bit of the first nibble = gene 0. The
    /// last nibble is zero-padded on the right when P is not a multiple of 4.
    [[nodiscard]] std::string to_hex() const
    {
        static constexpr char digits[] = "0123456789abcdef";
        std::string out;
        out.reserve((bits_.size() + 3) / 4);
        for (std::size_t i = 0; i < bits_.size(); i += 4) {
            unsigned nibble = 0;
            for (std::size_t k = 0; k < 4; ++k) {
                nibble <<= 1;
                if (i + k < bits_.size()) nibble |= bits_[i + k];
            }
            out.push_back(digits[nibble]);
        }
        return out;
    }

    static PruningMask from_hex(std::string_view hex, std::size_t length)
    {
        if (hex.size() != (length + 3) / 4)
            throw ValidationError("mask hex '" + std::string(hex) + "' does not encode " +
                                  std::to_string(length) + " bits");
        PruningMask mask(length);
        for (std::size_t n = 0; n < hex.size(); ++n) {
            const char c = hex[n];
            unsigned v = 0;
            if (c >= '0' && c <= '9') v = static_cast<unsigned>(c - '0');
            else if (c >= 'a' && c <= 'f') v = static_cast<unsigned>(c - 'a' + 10);
            else if (c >= 'A' && c <= 'F') v = static_cast<unsigned>(c - 'A' + 10);
            else throw ValidationError("invalid hex digit in mask '" + std::string(hex) + "'");
            for (std::size_t k = 0; k < 4; ++k) {
                const bool bit = (v >> (3 - k)) & 1U;
                const std::size_t idx = n * 4 + k;
                if (idx < length) mask.bits_[idx] = bit;
                else if (bit) throw ValidationError("mask hex has bits set beyond its length");
            }
        }
        return mask;
    }

    friend bool operator==(const PruningMask&, const PruningMask&) = default;
    friend auto operator<=>(const PruningMask&, const PruningMask&) = default;

private:
    std::vector<std::uint8_t> bits_;
};

[[nodiscard]] inline std::size_t active_count(const PruningMask& mask) noexcept
{
    return static_cast<std::size_t>(std::count(mask.bits().begin(), mask.bits().end(), std::uint8_t{1}));
}

// ---------------------------------------------------------------------------
// Datasets

/// One partition of labeled feature rows, stored row-major.
struct Split {
    std::size_t feature_dim = 0;
    std::vector<double> features;
    std::vector<int> labels;

    [[nodiscard]] std::size_t rows() const noexcept { return labels.size(); }
    [[nodiscard]] bool empty() const noexcept { return labels.empty(); }
    [[nodiscard]] std::span<const double> row(std::size_t i) const noexcept
    {
        return {features.data() + i * feature_dim, feature_dim};
    }

    void push_back(std::span<const double> x, int label)
    {
        if (x.size() != feature_dim)
            throw ValidationError("row has " + std::to_string(x.size()) + " values, expected " +
                                  std::to_string(feature_dim));
        features.insert(features.end(), x.begin(), x.end());
        labels.push_back(label);
    }

    friend bool operator==(const Split&, const Split&) = default;
};

struct FeatureDataset {
    std::string name;
    std::size_t feature_dim = 0;
    std::size_t num_classes = 0;
    Split train;
    Split test;

    [[nodiscard]] std::size_t total_rows() const noexcept { return train.rows() + test.rows(); }

    /// Checks the InD contract: dims agree, labels in range, both splits present.
    void validate_as_ind() const
    {
        if (train.empty() || test.empty())
            throw ValidationError("dataset '" + name + "' needs non-empty train and test splits");
        for (const Split* s : {&train, &test}) {
            if (s->feature_dim != feature_dim)
                throw ValidationError("dataset '" + name + "' has inconsistent feature_dim");
            for (int y : s->labels)
                if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
                    throw ValidationError("dataset '" + name + "' has label out of range");
        }
    }

    friend bool operator==(const FeatureDataset&, const FeatureDataset&) = default;
};

/// Contents of one FEATSET file.
struct FeatsetFile {
    std::size_t num_classes = 0;
    Split split;
};

namespace detail {

inline std::string_view trim(std::string_view s) noexcept
{
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

template <typename T>
bool parse_number(std::string_view s, T& out) noexcept
{
    s = trim(s);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, out);
    return ec == std::errc{} && ptr == end && !s.empty();
}

inline void append_double(std::string& out, double v)
{
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    out.append(buf, ptr);
}

}  // namespace detail

/// Parses a FEATSET stream. Lines starting with '#' after the magic line are
/// ignored. Errors carry the 1-based line number.
inline FeatsetFile parse_featset(std::istream& in, const std::string& source = "<stream>")
{
    std::string line;
    std::size_t lineno = 0;

    auto next_line = [&]() -> bool {
        while (std::getline(in, line)) {
            ++lineno;
            auto t = detail::trim(line);
            if (lineno > 1 && !t.empty() && t.front() == '#') continue;
            return true;
        }
        return false;
    };

    if (!next_line()) throw ParseError(source, 1, "empty dataset");
    if (detail::trim(line) != "FEATSET 1") throw ParseError(source, lineno, "malformed header, expected 'FEATSET 1'");

    if (!next_line()) throw ParseError(source, lineno + 1, "missing shape line");
    std::size_t rows = 0, dim = 0, classes = 0;
    {
        std::istringstream ss(line);
        std::string a, b, c, extra;
        if (!(ss >> a >> b >> c) || (ss >> extra) || !detail::parse_number(a, rows) ||
            !detail::parse_number(b, dim) || !detail::parse_number(c, classes))
            throw ParseError(source, lineno, "malformed header, expected '<num_rows> <feature_dim> <num_classes>'");
        if (dim == 0) throw ParseError(source, lineno, "feature_dim must be positive");
        if (classes == 0) throw ParseError(source, lineno, "num_classes must be positive");
    }

    FeatsetFile file;
    file.num_classes = classes;
    file.split.feature_dim = dim;
    file.split.features.reserve(rows * dim);
    file.split.labels.reserve(rows);

    std::vector<double> row(dim);
    while (next_line()) {
        std::string_view rest = detail::trim(line);
        if (rest.empty()) continue;
        std::size_t field = 0;
        int label = -1;
        while (true) {
            const auto comma = rest.find(',');
            const auto token = rest.substr(0, comma);
            if (field == 0) {
                if (!detail::parse_number(token, label))
                    throw ParseError(source, lineno, "invalid label '" + std::string(token) + "'");
                if (label < 0 || static_cast<std::size_t>(label) >= classes)
                    throw ParseError(source, lineno, "label " + std::to_string(label) + " out of range [0, " +
                                                         std::to_string(classes) + ")");
            } else {
                if (field > dim)
                    throw ParseError(source, lineno, "row has more than " + std::to_string(dim) + " feature values");
                if (!detail::parse_number(token, row[field - 1]))
                    throw ParseError(source, lineno, "invalid feature value '" + std::string(token) + "'");
            }
            ++field;
            if (comma == std::string_view::npos) break;
            rest.remove_prefix(comma + 1);
        }
        if (field - 1 != dim)
            throw ParseError(source, lineno, "row has " + std::to_string(field - 1) + " feature values, expected " +
                                                 std::to_string(dim));
        file.split.push_back(row, label);
    }

    if (file.split.empty()) throw ParseError(source, lineno, "empty dataset");
    if (file.split.rows() != rows)
        throw ParseError(source, lineno, "header declares " + std::to_string(rows) + " rows but file has " +
                                             std::to_string(file.split.rows()));
    return file;
}

inline FeatsetFile read_featset(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open dataset file: " + path.string());
    return parse_featset(in, path.string());
}

inline std::string format_featset(const Split& split, std::size_t num_classes)
{
    std::string out = "FEATSET 1\n";
    out += std::to_string(split.rows()) + " " + std::to_string(split.feature_dim) + " " +
           std::to_string(num_classes) + "\n";
    for (std::size_t i = 0; i < split.rows(); ++i) {
        out += std::to_string(split.labels[i]);
        for (double v : split.row(i)) {
            out.push_back(',');
            detail::append_double(out, v);
        }
        out.push_back('\n');
    }
    return out;
}

inline void write_featset(const std::filesystem::path& path, const Split& split, std::size_t num_classes)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write dataset file: " + path.string());
    out << format_featset(split, num_classes);
}

/// Loads an InD dataset from its train and test FEATSET files.
inline FeatureDataset load_feature_dataset(const std::string& name, const std::filesystem::path& train_path,
                                           const std::filesystem::path& test_path)
{
    auto train = read_featset(train_path);
    auto test = read_featset(test_path);
    if (train.split.feature_dim != test.split.feature_dim)
        throw ValidationError("dataset '" + name + "': train P=" + std::to_string(train.split.feature_dim) +
                              " but test P=" + std::to_string(test.split.feature_dim));
    if (train.num_classes != test.num_classes)
        throw ValidationError("dataset '" + name + "': train and test disagree on num_classes");
    FeatureDataset ds{name, train.split.feature_dim, train.num_classes, std::move(train.split), std::move(test.split)};
    ds.validate_as_ind();
    return ds;
}

/// Loads a single-file dataset (OoD sources). All rows land in `train`.
inline FeatureDataset load_feature_dataset(const std::string& name, const std::filesystem::path& path)
{
    auto file = read_featset(path);
    FeatureDataset ds;
    ds.name = name;
    ds.feature_dim = file.split.feature_dim;
    ds.num_classes = file.num_classes;
    ds.train = std::move(file.split);
    ds.test.feature_dim = ds.feature_dim;
    return ds;
}

// ---------------------------------------------------------------------------
// Architecture and parameter accounting

struct ArchSpec {
    std::size_t feature_dim = 0;
    std::size_t hidden_units = 512;
    std::size_t num_classes = 0;

    void validate() const
    {
        if (feature_dim == 0 || hidden_units == 0 || num_classes == 0)
            throw ValidationError("architecture dimensions must be positive");
    }

    friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

/// Trainable parameter count of the head with k connected inputs:
/// k*H input weights + H hidden biases + H*Y output weights + Y output biases.
[[nodiscard]] constexpr std::size_t parameter_count(std::size_t active, const ArchSpec& arch) noexcept
{
    return active * arch.hidden_units + arch.hidden_units + arch.hidden_units * arch.num_classes +
           arch.num_classes;
}

[[nodiscard]] inline double mem_ratio(const PruningMask& mask, const ArchSpec& arch)
{
    if (mask.size() != arch.feature_dim)
        throw ValidationError("mask length " + std::to_string(mask.size()) + " does not match feature_dim " +
                              std::to_string(arch.feature_dim));
    return static_cast<double>(parameter_count(active_count(mask), arch)) /
           static_cast<double>(parameter_count(arch.feature_dim, arch));
}

// ---------------------------------------------------------------------------
// Objectives

/// Accuracy and AUROC are maximized, active_neurons is minimized.
struct ObjectiveVector {
    double accuracy = 0.0;
    std::size_t active_neurons = 0;
    double auroc = 0.0;

    friend bool operator==(const ObjectiveVector&, const ObjectiveVector&) = default;
};

[[nodiscard]] constexpr bool dominates(const ObjectiveVector& a, const ObjectiveVector& b) noexcept
{
    const bool no_worse = a.accuracy >= b.accuracy && a.active_neurons <= b.active_neurons && a.auroc >= b.auroc;
    const bool better = a.accuracy > b.accuracy || a.active_neurons < b.active_neurons || a.auroc > b.auroc;
    return no_worse && better;
}

struct Individual {
    PruningMask mask;
    std::optional<ObjectiveVector> objectives;
    std::optional<std::size_t> eval_index;
    std::size_t run_id = 0;
    bool cache_hit = false;

    [[nodiscard]] const ObjectiveVector& objs() const
    {
        if (!objectives) throw Error("individual has not been evaluated");
        return *objectives;
    }
};

// ---------------------------------------------------------------------------
// Configuration

struct EvolutionConfig {
    std::size_t max_evals = 200;
    std::size_t population_size = 30;
    std::optional<double> mutation_prob;  // unset -> 1/P
    std::size_t batch_size = 32;
    double odin_temperature = 1000.0;
    std::size_t max_epochs = 600;
    std::size_t early_stop_patience = 10;
    double learning_rate = 0.01;
    std::size_t hidden_units = 512;
    std::size_t ood_samples_per_dataset = 0;  // 0 -> |InD test| / number of OoD sources
    std::uint64_t master_seed = 0;

    [[nodiscard]] double mutation_prob_for(std::size_t feature_dim) const
    {
        return mutation_prob ? *mutation_prob : 1.0 / static_cast<double>(feature_dim);
    }

    void validate() const
    {
        if (population_size < 2) throw ValidationError("population_size must be at least 2");
        if (max_evals < population_size) throw ValidationError("max_evals must be at least population_size");
        if (mutation_prob && (*mutation_prob < 0.0 || *mutation_prob > 1.0))
            throw ValidationError("mutation_prob must lie in [0, 1]");
        if (batch_size == 0) throw ValidationError("batch_size must be positive");
        if (!(odin_temperature > 0.0)) throw ValidationError("odin_temperature must be positive");
        if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be positive");
        if (hidden_units == 0) throw ValidationError("hidden_units must be positive");
    }
};

}  // namespace moprune
