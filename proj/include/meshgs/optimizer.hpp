#pragma once

#include "meshgs/common.hpp"

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace meshgs {

struct AdamSettings {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-15;
};

/// Adam with named parameter groups. Each group keeps its own moments and
/// step count; groups are created lazily at their first step and can be
/// reset when the parameter vector they track changes shape.
class Adam {
public:
    explicit Adam(AdamSettings settings = {}) : settings_(settings) {}

    const AdamSettings& settings() const { return settings_; }

    /// One update of params from grads with the given learning rate. When mask
    /// is non-empty only entries with a nonzero mask are touched (their
    /// moments included). Throws NumericError on a non-finite gradient.
    void step(const std::string& group, double lr, std::span<double> params, std::span<const double> grads,
              std::span<const std::uint8_t> mask = {});

    void reset(const std::string& group);
    /// Keeps the moments of the parameters whose keep flag is nonzero, where
    /// each flag covers `stride` consecutive entries.
    void select(const std::string& group, std::span<const std::uint8_t> keep, size_t stride);
    bool has_group(const std::string& group) const { return groups_.count(group) > 0; }
    std::int64_t step_count(const std::string& group) const;

    void save(std::ostream& out) const;
    void load(std::istream& in);

    struct Group {
        std::int64_t step = 0;
        std::vector<double> m;
        std::vector<double> v;
        bool operator==(const Group&) const = default;
    };
    const std::map<std::string, Group>& groups() const { return groups_; }

private:
    AdamSettings settings_;
    std::map<std::string, Group> groups_;
};

} // namespace meshgs
