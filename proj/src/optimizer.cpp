#include "meshgs/optimizer.hpp"

#include "binary_io.hpp"

#include <cmath>

namespace meshgs {

void Adam::step(const std::string& group, double lr, std::span<double> params, std::span<const double> grads,
                std::span<const std::uint8_t> mask) {
    if (params.size() != grads.size()) throw ContractError("optimizer group '" + group + "': gradient size mismatch");
    if (!mask.empty() && mask.size() != params.size())
        throw ContractError("optimizer group '" + group + "': mask size mismatch");
    for (size_t i = 0; i < grads.size(); ++i)
        if (!std::isfinite(grads[i]))
            throw NumericError("optimizer group '" + group + "': non-finite gradient at entry " + std::to_string(i));
    Group& g = groups_[group];
    if (g.m.size() != params.size()) {
        g.m.assign(params.size(), 0.0);
        g.v.assign(params.size(), 0.0);
        g.step = 0;
    }
    ++g.step;
    const double b1 = settings_.beta1, b2 = settings_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(g.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(g.step));
    const double step_size = lr / c1;
    const double sqrt_c2 = std::sqrt(c2);
    for (size_t i = 0; i < params.size(); ++i) {
        if (!mask.empty() && !mask[i]) continue;
        g.m[i] = b1 * g.m[i] + (1.0 - b1) * grads[i];
        g.v[i] = b2 * g.v[i] + (1.0 - b2) * grads[i] * grads[i];
        params[i] -= step_size * g.m[i] / (std::sqrt(g.v[i]) / sqrt_c2 + settings_.eps);
    }
}

void Adam::reset(const std::string& group) { groups_.erase(group); }

void Adam::select(const std::string& group, std::span<const std::uint8_t> keep, size_t stride) {
    const auto it = groups_.find(group);
    if (it == groups_.end()) return;
    Group& g = it->second;
    if (g.m.size() != keep.size() * stride) throw ContractError("optimizer group '" + group + "': selection size mismatch");
    size_t out = 0;
    for (size_t i = 0; i < keep.size(); ++i) {
        if (!keep[i]) continue;
        for (size_t k = 0; k < stride; ++k) {
            g.m[out * stride + k] = g.m[i * stride + k];
            g.v[out * stride + k] = g.v[i * stride + k];
        }
        ++out;
    }
    g.m.resize(out * stride);
    g.v.resize(out * stride);
}

std::int64_t Adam::step_count(const std::string& group) const {
    const auto it = groups_.find(group);
    return it == groups_.end() ? 0 : it->second.step;
}

void Adam::save(std::ostream& out) const {
    binio::write_f64(out, settings_.beta1);
    binio::write_f64(out, settings_.beta2);
    binio::write_f64(out, settings_.eps);
    binio::write_u64(out, groups_.size());
    for (const auto& [name, g] : groups_) {
        binio::write_string(out, name);
        binio::write_u64(out, static_cast<std::uint64_t>(g.step));
        binio::write_f64_array(out, g.m);
        binio::write_f64_array(out, g.v);
    }
}

void Adam::load(std::istream& in) {
    settings_.beta1 = binio::read_f64(in);
    settings_.beta2 = binio::read_f64(in);
    settings_.eps = binio::read_f64(in);
    const std::uint64_t n = binio::read_u64(in);
    groups_.clear();
    for (std::uint64_t i = 0; i < n; ++i) {
        const std::string name = binio::read_string(in);
        Group g;
        g.step = static_cast<std::int64_t>(binio::read_u64(in));
        g.m = binio::read_f64_array(in);
        g.v = binio::read_f64_array(in);
        if (g.m.size() != g.v.size()) throw ParseError("optimizer group '" + name + "' has mismatched moments");
        groups_.emplace(name, std::move(g));
    }
}

} // namespace meshgs
