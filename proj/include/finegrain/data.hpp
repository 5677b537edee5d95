#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "finegrain/tensor.hpp"

namespace fg::data {

// Labeled image set. Images are one (N, c, h, w) tensor with pixel values
// already scaled to [0,1] (before channel normalization). Immutable after
// load; batching gathers copies.
struct Dataset {
    Tensor images;  // empty when the dataset is empty
    std::vector<int> labels;
    int num_classes = 10;
    std::string split = "train";
    bool augment = false;  // apply training augmentation when batching

    std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }
};

// CIFAR-10 binary batches: records of exactly 3073 bytes, one label byte
// then 3072 pixel bytes (R plane, G plane, B plane, row-major). The train
// split reads data_batch_1..5.bin, the test split test_batch.bin.
Dataset load_cifar10(const std::string& dir, const std::string& split);

// Single binary file in the CIFAR-10 record format.
Dataset load_cifar10_file(const std::string& path);

// CIFAR-100 variant: 3074-byte records with a coarse then a fine label byte;
// the fine label is used. Files train.bin / test.bin.
Dataset load_cifar100(const std::string& dir, const std::string& split);

// Serializes back to the CIFAR-10 binary record format (bit-exact round trip).
void save_cifar10_file(const Dataset& ds, const std::string& path);

// Pad 2 pixels of zeros to 36x36, crop 32x32 at (dy,dx), optional horizontal
// flip. Deterministic core of the training augmentation.
Tensor augment_cifar_at(const Tensor& img, std::int64_t dy, std::int64_t dx, bool flip);

// Random crop offset and a fair coin for the flip.
Tensor augment_cifar(const Tensor& img, Rng& rng);

struct ChannelStats {
    std::vector<double> mean;
    std::vector<double> stddev;
};

// Per-channel statistics over the whole split (population std). Zero spread
// in any channel is a numeric error.
ChannelStats compute_channel_stats(const Dataset& ds);

// (x - mean_c) / std_c in place. Test splits must be normalized with the
// training-split statistics.
void normalize_channels(Dataset& ds, const ChannelStats& stats);

enum class SyntheticKind { GaussianBlobs, LinearlySeparable };

// Deterministic labeled image-shaped data for fast tests and surrogate
// training runs. Blobs: per-class centers with per-element spread
// `separation` (in units of the unit noise). Linearly separable: labels from
// the argmax of fixed random projections.
Dataset synthetic_dataset(SyntheticKind kind, std::int64_t n, int classes, std::uint64_t seed,
                          std::int64_t hw = 32, double separation = 10.0);

// First n samples.
Dataset take(const Dataset& ds, std::int64_t n);

// Gathers a batch (indices into ds), applying augmentation when enabled.
Tensor gather_batch(const Dataset& ds, const std::vector<std::int64_t>& indices, Rng* augment_rng,
                    std::vector<int>* labels_out);

}  // namespace fg::data
