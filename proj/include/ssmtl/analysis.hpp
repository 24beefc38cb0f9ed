#pragma once

// Feature-space analysis: FC2 feature tables, PCA projection and k-NN
// neighbour purity.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ssmtl/dataset.hpp"
#include "ssmtl/metrics.hpp"
#include "ssmtl/model.hpp"

namespace ssmtl {

struct FeatureRow {
    std::string id;
    int true_class = 0;
    int pred_class = 0;
    std::vector<double> features;
};

struct FeatureTable {
    std::size_t dim = 0;
    std::vector<FeatureRow> rows;

    Matrix matrix() const;
    std::vector<int> true_classes() const;

    // id,true_class,pred_class,f0,...,f{D-1}
    void write_csv(const std::filesystem::path& path) const;
    static FeatureTable read_csv(const std::filesystem::path& path);
};

// Eval-mode FC2 features for every sample, with pathology predictions.
FeatureTable extract_features(MultiTaskModel& model, const Dataset& ds, const std::vector<DistortionSpec>& ssdts,
                              std::uint64_t seed, std::size_t batch_size = 64);

struct PcaResult {
    std::vector<double> mean;
    Matrix components;  // k x D, orthonormal rows, descending variance
    Matrix points;      // N x k
    std::vector<double> explained_ratio;
};

PcaResult pca_project(const Matrix& x, std::size_t k = 3);
// points * components: the centred data restricted to the kept subspace.
Matrix pca_reconstruct_centered(const PcaResult& pca);

// `id,true_class,x,y,z` (one column per kept component) and a JSON sidecar
// {"explained_variance_ratio": [...], "n": N, "dim": D}.
void write_projection(const FeatureTable& table, const PcaResult& pca, const std::filesystem::path& csv,
                      const std::filesystem::path& sidecar);

enum class Distance { Euclidean, Cosine };

struct PurityResult {
    std::vector<std::optional<double>> per_class;  // index = label; nullopt if absent
    double overall = 0.0;
};

// Fraction of each sample's k nearest neighbours (self excluded, ties broken
// by index) that share its label, averaged per label and overall.
PurityResult knn_purity(const Matrix& x, std::span<const int> labels, std::size_t k = 10,
                        Distance metric = Distance::Euclidean);

}  // namespace ssmtl
