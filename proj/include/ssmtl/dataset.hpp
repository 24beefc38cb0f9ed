#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ssmtl/autodiff.hpp"
#include "ssmtl/distortion.hpp"
#include "ssmtl/image.hpp"

namespace ssmtl {

inline constexpr int kPathologyClasses = 3;
inline constexpr std::array<std::string_view, kPathologyClasses> kPathologyNames = {
    "inflammatory", "normal", "vascular"};
inline constexpr int kNormalClass = 1;

// Returns 0/1/2 or nullopt for an unknown class string.
std::optional<int> parse_pathology(std::string_view s);

struct LabeledSample {
    std::string id;
    ImageU8 image;
    int spt_label = 0;
    // Filled per epoch by the batch pipeline; empty for stored samples.
    std::map<std::string, int> ssdt_labels;
    // Known only for synthetic data.
    std::optional<bool> has_bubbles;
};

struct DatasetError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

class Dataset {
public:
    Dataset() = default;
    // Validates label range and id uniqueness.
    explicit Dataset(std::vector<LabeledSample> samples);

    const std::vector<LabeledSample>& samples() const { return samples_; }
    const LabeledSample& operator[](std::size_t i) const { return samples_[i]; }
    std::size_t size() const { return samples_.size(); }
    bool empty() const { return samples_.empty(); }
    const std::array<std::size_t, kPathologyClasses>& class_counts() const { return counts_; }

private:
    std::vector<LabeledSample> samples_;
    std::array<std::size_t, kPathologyClasses> counts_{};
};

// CSV `id,filename,class` next to a directory of P6/PNG images. Every
// problem in the listing is collected before throwing one DatasetError.
Dataset load_labeled_dir(const std::filesystem::path& image_dir, const std::filesystem::path& labels_file);

// Writes images/<id>.ppm, labels.csv and (when known) attributes.csv.
void export_dataset(const Dataset& ds, const std::filesystem::path& dir);

struct SyntheticParams {
    int per_class = 300;
    int image_size = 64;
    // P(bubbles | normal); other classes get bubbles with 1 - bias.
    double confounder_bias = 0.8;
    // Opacity of the pathology marks; lower is subtler.
    double lesion_strength = 0.8;

    void validate() const;
};

Dataset generate_synthetic(const SyntheticParams& params, std::uint64_t seed);

struct SplitRatios {
    double train = 0.8;
    double val = 0.1;
    double test = 0.1;
};

struct DatasetSplit {
    Dataset train, val, test;
};

// Stratified per class; val/test get floor allocations, remainders go to train.
DatasetSplit split(const Dataset& ds, const SplitRatios& ratios, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

struct Batch {
    ad::Tensor images;  // [n, 3, size, size], values in [0,1]
    std::vector<int> spt_labels;
    std::vector<std::vector<int>> ssdt_labels;  // [task][n], in ssdt order
    std::vector<std::size_t> indices;           // dataset indices
};

// Permutation of [0,n) as a pure function of (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch);

// Preprocess + distort one sample. The per-sample stream is derived from
// (seed, epoch, index) so results do not depend on batch composition.
LabeledSample materialize(const Dataset& ds, std::size_t index, int image_size,
                          const std::vector<DistortionSpec>& ssdts, std::uint64_t seed,
                          std::uint64_t epoch);

// CHW, p/255.
void image_to_tensor(const ImageU8& img, std::span<double> dst);

// Sentinel epoch for deterministic evaluation passes.
inline constexpr std::uint64_t kEvalEpoch = 0xE7A1E7A1E7A1ULL;

class BatchIterator {
public:
    BatchIterator(const Dataset& ds, std::size_t batch_size, std::uint64_t epoch, std::uint64_t seed,
                  std::vector<DistortionSpec> ssdts, int image_size, bool shuffle = true);

    bool next(Batch& out);
    std::size_t num_batches() const;

private:
    const Dataset* ds_;
    std::size_t batch_size_;
    std::uint64_t epoch_, seed_;
    std::vector<DistortionSpec> ssdts_;
    int image_size_;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
};

}  // namespace ssmtl
