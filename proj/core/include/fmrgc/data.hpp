#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fmrgc/tensor.hpp"

namespace fmrgc {

struct SyntheticSpec {
    int classes = 10;
    int per_class = 200;
    int image_size = 32;
    std::uint64_t seed = 0;
    double noise = 0.05;
};

struct DatasetSpec {
    enum class Source { Cifar10Binary, Synthetic };
    Source source = Source::Synthetic;
    std::string path;  // directory holding data_batch_*.bin / test_batch.bin
    SyntheticSpec synthetic;
    int train_size = 2000;
    int test_size = 1000;
    std::uint64_t seed = 0;  // subset selection
};

struct Dataset {
    Tensor images;  // [N,C,H,W], pixels in [0,1]
    std::vector<int> labels;
    int num_classes = 10;

    int size() const { return images.empty() ? 0 : images.dim(0); }
    Dataset subset(const std::vector<int>& indices) const;

    // Copies rows `order[start .. start+count)` into one batch tensor.
    std::pair<Tensor, std::vector<int>> gather(const std::vector<int>& order, int start,
                                               int count) const;
};

// Parses concatenated 3073-byte records (1 label + 3x32x32 planes) from the
// canonical binary layout, scaling pixels by 1/255.
Dataset load_cifar10_records(const std::string& file);

// data_batch_1..5.bin for train, test_batch.bin for test.
std::pair<Dataset, Dataset> load_cifar10(const DatasetSpec& spec);

// Class-conditional blob templates plus pixel noise, clamped to [0,1].
// `stream` separates train/test draws under one seed.
Dataset make_synthetic(const SyntheticSpec& spec, std::uint64_t stream = 0);

// Resolves spec.source, applying the deterministic (seed, size) subset rule.
std::pair<Dataset, Dataset> load_dataset(const DatasetSpec& spec);

// Sampling without replacement; identical output for identical (seed, k, n).
std::vector<int> deterministic_subset(std::uint64_t seed, int k, int n);

}  // namespace fmrgc
