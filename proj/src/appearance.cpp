#include "meshgs/appearance.hpp"

#include "meshgs/spherical_harmonics.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace meshgs {

// ---------------------------------------------------------------- hashing

HashEncoding::HashEncoding(const HashEncodingConfig& config) : config_(config) {
    if (config.levels < 1 || config.features_per_level < 1 || config.base_resolution < 1)
        throw ConfigError("hash encoding needs positive levels, features and base resolution");
    if (config.log2_table_size < 4 || config.log2_table_size > 26) throw ConfigError("hash table size out of range");
    if (!(config.growth_factor > 1.0)) throw ConfigError("hash encoding growth factor must exceed 1");
    resolutions_.resize(config.levels);
    for (int l = 0; l < config.levels; ++l)
        resolutions_[l] = static_cast<int>(std::floor(config.base_resolution * std::pow(config.growth_factor, l)));
    tables_.assign(static_cast<size_t>(config.levels) * table_size() * config.features_per_level, 0.0);
}

Index HashEncoding::corner_slot(int level, int i, int j, int k) const {
    const Index side = resolutions_[level] + 1;
    const Index t = table_size();
    if (side * side * side <= t) return i + side * (j + side * k);
    const std::uint32_t h = static_cast<std::uint32_t>(i) ^ (static_cast<std::uint32_t>(j) * 2654435761u) ^
                            (static_cast<std::uint32_t>(k) * 805459861u);
    return static_cast<Index>(h & static_cast<std::uint32_t>(t - 1));
}

namespace {

struct LevelCell {
    int base[3];
    double frac[3];
    bool clamped[3];
};

LevelCell locate(const Vec3& x, int resolution) {
    LevelCell c{};
    for (int a = 0; a < 3; ++a) {
        double u = x[a];
        c.clamped[a] = !(u >= 0.0 && u <= 1.0);
        u = std::clamp(std::isnan(u) ? 0.0 : u, 0.0, 1.0) * resolution;
        int b = static_cast<int>(std::floor(u));
        b = std::min(b, resolution - 1);
        c.base[a] = b;
        c.frac[a] = u - b;
    }
    return c;
}

} // namespace

void HashEncoding::encode(const Vec3& x, double* out) const {
    const int nf = config_.features_per_level;
    const Index t = table_size();
    for (int l = 0; l < config_.levels; ++l) {
        const LevelCell c = locate(x, resolutions_[l]);
        double* o = out + l * nf;
        std::fill(o, o + nf, 0.0);
        const double* table = tables_.data() + static_cast<size_t>(l) * t * nf;
        for (int corner = 0; corner < 8; ++corner) {
            const int di = corner & 1, dj = (corner >> 1) & 1, dk = (corner >> 2) & 1;
            const double w = (di ? c.frac[0] : 1.0 - c.frac[0]) * (dj ? c.frac[1] : 1.0 - c.frac[1]) *
                             (dk ? c.frac[2] : 1.0 - c.frac[2]);
            const Index slot = corner_slot(l, c.base[0] + di, c.base[1] + dj, c.base[2] + dk);
            const double* feat = table + slot * nf;
            for (int f = 0; f < nf; ++f) o[f] += w * feat[f];
        }
    }
}

Vec3 HashEncoding::backward(const Vec3& x, const double* d_out, std::span<double> d_tables) const {
    const int nf = config_.features_per_level;
    const Index t = table_size();
    Vec3 d_x = Vec3::Zero();
    for (int l = 0; l < config_.levels; ++l) {
        const int res = resolutions_[l];
        const LevelCell c = locate(x, res);
        const double* g = d_out + l * nf;
        const double* table = tables_.data() + static_cast<size_t>(l) * t * nf;
        double* d_table = d_tables.data() + static_cast<size_t>(l) * t * nf;
        for (int corner = 0; corner < 8; ++corner) {
            const int di = corner & 1, dj = (corner >> 1) & 1, dk = (corner >> 2) & 1;
            const double wx = di ? c.frac[0] : 1.0 - c.frac[0];
            const double wy = dj ? c.frac[1] : 1.0 - c.frac[1];
            const double wz = dk ? c.frac[2] : 1.0 - c.frac[2];
            const Index slot = corner_slot(l, c.base[0] + di, c.base[1] + dj, c.base[2] + dk);
            const double* feat = table + slot * nf;
            double dot = 0.0;
            for (int f = 0; f < nf; ++f) {
                d_table[slot * nf + f] += wx * wy * wz * g[f];
                dot += feat[f] * g[f];
            }
            const double sx = di ? 1.0 : -1.0, sy = dj ? 1.0 : -1.0, sz = dk ? 1.0 : -1.0;
            d_x += dot * res * Vec3(sx * wy * wz, wx * sy * wz, wx * wy * sz);
        }
    }
    for (int a = 0; a < 3; ++a)
        if (!(x[a] >= 0.0 && x[a] <= 1.0)) d_x[a] = 0.0;
    return d_x;
}

// ---------------------------------------------------------------- MLP

Mlp::Mlp(int input_dim, int hidden_width, int hidden_layers, int output_dim) {
    if (input_dim < 1 || hidden_width < 1 || hidden_layers < 0 || output_dim < 1)
        throw ConfigError("invalid MLP dimensions");
    dims_.push_back(input_dim);
    for (int h = 0; h < hidden_layers; ++h) dims_.push_back(hidden_width);
    dims_.push_back(output_dim);
    Index offset = 0;
    for (int l = 0; l + 1 < static_cast<int>(dims_.size()); ++l) {
        offsets_.push_back(offset);
        offset += static_cast<Index>(dims_[l + 1]) * dims_[l] + dims_[l + 1];
    }
    offsets_.push_back(offset);
    params_.assign(offset, 0.0);
}

Eigen::Map<const Mlp::RowMatrix> Mlp::weight(int layer) const {
    return {params_.data() + offsets_[layer], dims_[layer + 1], dims_[layer]};
}
Eigen::Map<Mlp::RowMatrix> Mlp::weight(int layer) {
    return {params_.data() + offsets_[layer], dims_[layer + 1], dims_[layer]};
}
Eigen::Map<const Eigen::VectorXd> Mlp::bias(int layer) const {
    return {params_.data() + offsets_[layer] + static_cast<Index>(dims_[layer + 1]) * dims_[layer], dims_[layer + 1]};
}
Eigen::Map<Eigen::VectorXd> Mlp::bias(int layer) {
    return {params_.data() + offsets_[layer] + static_cast<Index>(dims_[layer + 1]) * dims_[layer], dims_[layer + 1]};
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& inputs, Cache* cache) const {
    if (inputs.rows() != input_dim()) throw ContractError("MLP input dimension mismatch");
    if (cache) cache->activations.assign(1, inputs);
    Eigen::MatrixXd h = inputs;
    for (int l = 0; l < layer_count(); ++l) {
        Eigen::MatrixXd z = weight(l) * h;
        z.colwise() += bias(l);
        if (l + 1 < layer_count()) {
            z = z.cwiseMax(0.0);
            if (cache) cache->activations.push_back(z);
        }
        h = std::move(z);
    }
    return h;
}

Eigen::MatrixXd Mlp::backward(const Cache& cache, const Eigen::MatrixXd& d_outputs, std::span<double> d_params) const {
    if (static_cast<int>(cache.activations.size()) != layer_count()) throw ContractError("MLP cache is incomplete");
    Eigen::MatrixXd g = d_outputs;
    for (int l = layer_count() - 1; l >= 0; --l) {
        const Eigen::MatrixXd& input = cache.activations[l];
        Eigen::Map<RowMatrix> dw(d_params.data() + offsets_[l], dims_[l + 1], dims_[l]);
        Eigen::Map<Eigen::VectorXd> db(d_params.data() + offsets_[l] + static_cast<Index>(dims_[l + 1]) * dims_[l],
                                       dims_[l + 1]);
        dw.noalias() += g * input.transpose();
        db += g.rowwise().sum();
        Eigen::MatrixXd d_input = weight(l).transpose() * g;
        if (l > 0) d_input = d_input.cwiseProduct((input.array() > 0.0).cast<double>().matrix());
        g = std::move(d_input);
    }
    return g;
}

// ---------------------------------------------------------------- field

AppearanceField::AppearanceField(const AppearanceConfig& config, const Vec3& bbox_min, const Vec3& bbox_max,
                                 std::uint64_t seed)
    : config_(config), bbox_min_(bbox_min), bbox_max_(bbox_max), encoding_(config.hash),
      mlp_(encoding_.output_dim(), config.hidden_width, config.hidden_layers, sh_coeff_count(config.sh_degree)) {
    if (config.sh_degree < 0 || config.sh_degree > kMaxShDegree) throw ConfigError("SH degree must be in [0, 3]");
    if (!((bbox_max - bbox_min).minCoeff() > 0.0)) throw ConfigError("appearance bbox is empty");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> table_init(-1e-4, 1e-4);
    for (double& v : encoding_.parameters()) v = table_init(rng);
    for (int l = 0; l < mlp_.layer_count(); ++l) {
        auto w = mlp_.weight(l);
        const double bound = std::sqrt(6.0 / static_cast<double>(w.cols()));
        std::uniform_real_distribution<double> weight_init(-bound, bound);
        for (Index i = 0; i < w.size(); ++i) w.data()[i] = weight_init(rng);
        mlp_.bias(l).setZero();
    }
    // Degree-0 outputs start at mid-gray.
    auto out_bias = mlp_.bias(mlp_.layer_count() - 1);
    for (int c = 0; c < 3; ++c) out_bias[c] = 0.5 / kShC0;
}

Vec3 AppearanceField::normalize(const Vec3& world) const {
    return (world - bbox_min_).cwiseQuotient(bbox_max_ - bbox_min_);
}

void AppearanceField::check_finite() const {
    for (double v : encoding_.parameters())
        if (!std::isfinite(v)) throw NumericError("appearance hash table holds a non-finite value");
    for (double v : mlp_.parameters())
        if (!std::isfinite(v)) throw NumericError("appearance MLP holds a non-finite value");
}

Eigen::MatrixXd AppearanceField::predict(std::span<const Vec3> points, Cache* cache) const {
    check_finite();
    const Index n = static_cast<Index>(points.size());
    Eigen::MatrixXd features(encoding_.output_dim(), n);
    parallel_for(n, [&](Index i) { encoding_.encode(normalize(points[i]), features.col(i).data()); });
    if (cache) {
        cache->points.assign(points.begin(), points.end());
        return mlp_.forward(features, &cache->mlp);
    }
    return mlp_.forward(features);
}

Eigen::VectorXd AppearanceField::predict_one(const Vec3& point) const {
    const Vec3 p[1] = {point};
    return predict(p).col(0);
}

void AppearanceField::Gradients::resize_like(const AppearanceField& field) {
    hash.assign(field.encoding().parameters().size(), 0.0);
    mlp.assign(field.mlp().parameters().size(), 0.0);
}

void AppearanceField::Gradients::zero() {
    std::fill(hash.begin(), hash.end(), 0.0);
    std::fill(mlp.begin(), mlp.end(), 0.0);
}

void AppearanceField::backward(const Cache& cache, const Eigen::MatrixXd& d_sh, Gradients& grads,
                               std::span<Vec3> d_points) const {
    if (grads.hash.size() != encoding_.parameters().size() || grads.mlp.size() != mlp_.parameters().size())
        grads.resize_like(*this);
    const Eigen::MatrixXd d_features = mlp_.backward(cache.mlp, d_sh, grads.mlp);
    const Vec3 inv_extent = (bbox_max_ - bbox_min_).cwiseInverse();
    for (size_t i = 0; i < cache.points.size(); ++i) {
        const Vec3 d_x = encoding_.backward(normalize(cache.points[i]), d_features.col(static_cast<Index>(i)).data(), grads.hash);
        if (!d_points.empty()) d_points[i] += d_x.cwiseProduct(inv_extent);
    }
}

} // namespace meshgs
