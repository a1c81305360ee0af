#pragma once

#include <cstdint>
#include <istream>
#include <numeric>
#include <string>
#include <vector>

#include "qbdc/tensor.hpp"

namespace qbdc::data {

/// A classification dataset: images [count, ...sample shape] with pixel
/// values in [0,1], one integer label per image.
struct Dataset {
    Tensor<float> images;
    std::vector<int> labels;
    int num_classes = 0;

    int count() const { return images.empty() ? 0 : images.shape[0]; }
    std::vector<int> sample_shape() const { return sample_shape_of(images.shape); }
};

/// A view of dataset rows together with their labels. Active-learning code
/// fills `labels` from oracle reveals rather than from the backing dataset,
/// so training can only see labels that were actually requested.
struct Subset {
    const Dataset* ds = nullptr;
    std::vector<int> indices;
    std::vector<int> labels;

    int size() const { return static_cast<int>(indices.size()); }

    static Subset all_of(const Dataset& d);
    static Subset of(const Dataset& d, std::vector<int> idx);
};

/// Gathers dataset rows into a batch tensor of the requested scalar type.
template <typename T>
Tensor<T> gather_images(const Dataset& ds, const int* indices, int n) {
    std::vector<int> shape = ds.images.shape;
    shape[0] = n;
    Tensor<T> out(shape);
    const std::size_t stride = ds.images.size() / static_cast<std::size_t>(ds.count());
    for (int i = 0; i < n; ++i) {
        const int row = indices[i];
        if (row < 0 || row >= ds.count()) throw std::out_of_range("gather: row index out of range");
        const float* src = ds.images.data.data() + static_cast<std::size_t>(row) * stride;
        T* dst = out.data.data() + static_cast<std::size_t>(i) * stride;
        for (std::size_t e = 0; e < stride; ++e) dst[e] = static_cast<T>(src[e]);
    }
    return out;
}

template <typename T>
Tensor<T> gather_images(const Dataset& ds, const std::vector<int>& indices) {
    return gather_images<T>(ds, indices.data(), static_cast<int>(indices.size()));
}

struct RawImages {
    int count = 0, rows = 0, cols = 0;
    std::vector<std::uint8_t> pixels;  // count*rows*cols bytes
};

// IDX container format: big-endian magic, then dimensions as 32-bit
// big-endian unsigned integers, then unsigned bytes.
inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

RawImages load_idx_images(std::istream& in);
RawImages load_idx_images(const std::string& path);
std::vector<int> load_idx_labels(std::istream& in);
std::vector<int> load_idx_labels(const std::string& path);

void write_idx_images(std::ostream& out, const RawImages& raw);
void write_idx_images(const std::string& path, const RawImages& raw);
void write_idx_labels(std::ostream& out, const std::vector<int>& labels);
void write_idx_labels(const std::string& path, const std::vector<int>& labels);

/// Loads an IDX image/label pair into a Dataset, normalizing pixels by 255.
Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path);

/// Converts a dataset with 2-D samples back to raw bytes (round(p*255)).
RawImages dataset_to_raw(const Dataset& ds);

struct SplitSpec {
    int train_count = 0;
    int validation_count = 0;
    std::uint64_t seed = 0;
};

/// Seeded shuffle followed by a prefix split into (train, validation).
std::pair<Dataset, Dataset> split(const Dataset& ds, const SplitSpec& spec);

/// Gaussian clusters at separated centers, labels by cluster, affinely
/// rescaled into [0,1]. Deterministic under the seed. Sample shape {1, dim}.
Dataset synthetic_blobs(int classes, int per_class, int dimension, double separation, std::uint64_t seed);

}  // namespace qbdc::data
