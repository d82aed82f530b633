#pragma once

#include "meshgs/common.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <vector>

namespace meshgs {

struct HashEncodingConfig {
    int levels = 12;
    int features_per_level = 2;
    int log2_table_size = 15;
    int base_resolution = 16;
    double growth_factor = 1.45;
};

/// Multiresolution hash encoding of points in [0, 1]^3: per level, trilinear
/// interpolation of the features stored at the 8 surrounding lattice corners.
/// Coarse levels whose lattice fits in the table are indexed densely; finer
/// levels use the XOR-of-primes spatial hash.
class HashEncoding {
public:
    HashEncoding() = default;
    explicit HashEncoding(const HashEncodingConfig& config);

    const HashEncodingConfig& config() const { return config_; }
    int output_dim() const { return config_.levels * config_.features_per_level; }
    Index table_size() const { return Index{1} << config_.log2_table_size; }
    int level_resolution(int level) const { return resolutions_[level]; }

    std::span<double> parameters() { return tables_; }
    std::span<const double> parameters() const { return tables_; }

    /// Table slot for lattice corner (i, j, k) on a level.
    Index corner_slot(int level, int i, int j, int k) const;

    /// Writes output_dim() features. Coordinates are clamped to [0, 1].
    void encode(const Vec3& x, double* out) const;

    /// Accumulates dL/dtables given dL/dfeatures; returns dL/dx (zero on
    /// clamped axes).
    Vec3 backward(const Vec3& x, const double* d_out, std::span<double> d_tables) const;

private:
    HashEncodingConfig config_;
    std::vector<int> resolutions_;
    std::vector<double> tables_;
};

/// Fully connected network with rectifier hidden layers and a linear output
/// layer. Parameters live in one flat buffer: per layer, row-major weights
/// (out x in) followed by biases.
class Mlp {
public:
    Mlp() = default;
    Mlp(int input_dim, int hidden_width, int hidden_layers, int output_dim);

    int input_dim() const { return dims_.front(); }
    int output_dim() const { return dims_.back(); }
    int layer_count() const { return static_cast<int>(dims_.size()) - 1; }

    std::span<double> parameters() { return params_; }
    std::span<const double> parameters() const { return params_; }

    using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const RowMatrix> weight(int layer) const;
    Eigen::Map<RowMatrix> weight(int layer);
    Eigen::Map<const Eigen::VectorXd> bias(int layer) const;
    Eigen::Map<Eigen::VectorXd> bias(int layer);

    struct Cache {
        std::vector<Eigen::MatrixXd> activations;  // input, hidden..., (column per sample)
    };

    /// inputs: input_dim x N. Returns output_dim x N.
    Eigen::MatrixXd forward(const Eigen::MatrixXd& inputs, Cache* cache = nullptr) const;

    /// Accumulates parameter gradients; returns dL/dinputs.
    Eigen::MatrixXd backward(const Cache& cache, const Eigen::MatrixXd& d_outputs, std::span<double> d_params) const;

private:
    std::vector<int> dims_;
    std::vector<Index> offsets_;
    std::vector<double> params_;
};

struct AppearanceConfig {
    HashEncodingConfig hash;
    int hidden_width = 32;
    int hidden_layers = 2;
    int sh_degree = 2;
};

/// Neural appearance field: scene point -> SH coefficient block, through a
/// hash encoding of the point normalized to the scene bbox and a small MLP.
class AppearanceField {
public:
    AppearanceField() = default;
    AppearanceField(const AppearanceConfig& config, const Vec3& bbox_min, const Vec3& bbox_max, std::uint64_t seed);

    const AppearanceConfig& config() const { return config_; }
    int sh_degree() const { return config_.sh_degree; }
    int output_dim() const { return mlp_.output_dim(); }
    const Vec3& bbox_min() const { return bbox_min_; }
    const Vec3& bbox_max() const { return bbox_max_; }

    HashEncoding& encoding() { return encoding_; }
    const HashEncoding& encoding() const { return encoding_; }
    Mlp& mlp() { return mlp_; }
    const Mlp& mlp() const { return mlp_; }

    Vec3 normalize(const Vec3& world) const;

    struct Cache {
        std::vector<Vec3> points;
        Mlp::Cache mlp;
    };

    /// SH blocks, one column per point. Throws NumericError when parameters
    /// are non-finite.
    Eigen::MatrixXd predict(std::span<const Vec3> points, Cache* cache = nullptr) const;
    Eigen::VectorXd predict_one(const Vec3& point) const;

    struct Gradients {
        std::vector<double> hash;
        std::vector<double> mlp;
        void resize_like(const AppearanceField& field);
        void zero();
    };

    /// Accumulates parameter gradients. When d_points is non-empty it also
    /// receives dL/dpoint (world units).
    void backward(const Cache& cache, const Eigen::MatrixXd& d_sh, Gradients& grads,
                  std::span<Vec3> d_points = {}) const;

    void check_finite() const;

private:
    AppearanceConfig config_;
    Vec3 bbox_min_ = Vec3::Zero();
    Vec3 bbox_max_ = Vec3::Ones();
    HashEncoding encoding_;
    Mlp mlp_;
};

} // namespace meshgs
