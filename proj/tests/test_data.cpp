#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "finegrain/data.hpp"
#include "oracles.hpp"

using namespace fg;
using namespace fg::data;

namespace {

std::string temp_dir() {
    auto dir = std::filesystem::temp_directory_path() / "finegrain_data_test";
    std::filesystem::create_directories(dir);
    return dir.string();
}

void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<unsigned char> make_records(int n, Rng& rng, int num_classes = 10) {
    std::vector<unsigned char> bytes;
    bytes.reserve(static_cast<size_t>(n) * 3073);
    for (int r = 0; r < n; ++r) {
        bytes.push_back(static_cast<unsigned char>(rng.below(static_cast<std::uint64_t>(num_classes))));
        for (int i = 0; i < 3072; ++i) bytes.push_back(static_cast<unsigned char>(rng.below(256)));
    }
    return bytes;
}

}  // namespace

TEST_CASE("cifar-10 binary loader") {
    const std::string dir = temp_dir();
    SUBCASE("well-formed test file yields 10000 samples") {
        Rng rng(1);
        write_bytes(dir + "/test_batch.bin", make_records(10000, rng));
        Dataset ds = load_cifar10(dir, "test");
        CHECK(ds.size() == 10000);
        CHECK(ds.images.shape() == Shape{10000, 3, 32, 32});
        CHECK(ds.split == "test");
    }
    SUBCASE("train split concatenates the five batch files") {
        Rng rng(2);
        for (int i = 1; i <= 5; ++i) write_bytes(dir + "/data_batch_" + std::to_string(i) + ".bin", make_records(20, rng));
        Dataset ds = load_cifar10(dir, "train");
        CHECK(ds.size() == 100);
    }
    SUBCASE("a single zero record is one all-black label-0 sample") {
        const std::string path = dir + "/zero.bin";
        write_bytes(path, std::vector<unsigned char>(3073, 0));
        Dataset ds = load_cifar10_file(path);
        CHECK(ds.size() == 1);
        CHECK(ds.labels[0] == 0);
        CHECK(max_abs(ds.images) == 0.0);
    }
    SUBCASE("truncated file is a format error") {
        const std::string path = dir + "/truncated.bin";
        write_bytes(path, std::vector<unsigned char>(3072, 0));
        CHECK_THROWS_AS(load_cifar10_file(path), FormatError);
    }
    SUBCASE("label out of range names the file and record index") {
        Rng rng(3);
        auto bytes = make_records(3, rng);
        bytes[2 * 3073] = 11;  // third record
        const std::string path = dir + "/badlabel.bin";
        write_bytes(path, bytes);
        CHECK_THROWS_WITH_AS(load_cifar10_file(path), doctest::Contains("record 2"), FormatError);
        CHECK_THROWS_WITH_AS(load_cifar10_file(path), doctest::Contains("badlabel.bin"), FormatError);
    }
    SUBCASE("missing file is an io error") { CHECK_THROWS_AS(load_cifar10(dir + "/missing", "test"), IoError); }
    SUBCASE("pixel planes land in channel-major order") {
        std::vector<unsigned char> bytes(3073, 0);
        bytes[0] = 7;          // label
        bytes[1] = 255;        // R(0,0)
        bytes[1 + 1024] = 51;  // G(0,0)
        bytes[1 + 2048] = 102; // B(0,0)
        const std::string path = dir + "/planes.bin";
        write_bytes(path, bytes);
        Dataset ds = load_cifar10_file(path);
        CHECK(ds.labels[0] == 7);
        CHECK(ds.images.at(0, 0, 0, 0) == doctest::Approx(1.0));
        CHECK(ds.images.at(0, 1, 0, 0) == doctest::Approx(0.2));
        CHECK(ds.images.at(0, 2, 0, 0) == doctest::Approx(0.4));
    }
    SUBCASE("round trip through the binary format is bit exact") {
        Rng rng(4);
        const std::string path = dir + "/rt_src.bin";
        write_bytes(path, make_records(50, rng));
        Dataset ds = load_cifar10_file(path);
        const std::string out = dir + "/rt_out.bin";
        save_cifar10_file(ds, out);
        Dataset ds2 = load_cifar10_file(out);
        REQUIRE(ds2.size() == ds.size());
        CHECK(ds.labels == ds2.labels);
        CHECK(max_abs_diff(ds.images, ds2.images) == 0.0);
    }
    SUBCASE("cifar-100 uses the fine label of the two-byte header") {
        std::vector<unsigned char> bytes(3074 * 2, 0);
        bytes[0] = 3;            // coarse
        bytes[1] = 42;           // fine
        bytes[3074] = 1;         // coarse
        bytes[3074 + 1] = 99;    // fine
        write_bytes(dir + "/train.bin", bytes);
        Dataset ds = load_cifar100(dir, "train");
        CHECK(ds.size() == 2);
        CHECK(ds.labels[0] == 42);
        CHECK(ds.labels[1] == 99);
        CHECK(ds.num_classes == 100);
    }
}

TEST_CASE("augmentation") {
    Rng rng(5);
    Tensor img = oracle::random_tensor<float>({1, 3, 32, 32}, rng, 0.0, 1.0);
    SUBCASE("center crop without flip is the identity") {
        CHECK(max_abs_diff(augment_cifar_at(img, 2, 2, false), img) == 0.0);
    }
    SUBCASE("output shape is always (3,32,32)") {
        for (int i = 0; i < 10; ++i) {
            Tensor out = augment_cifar(img, rng);
            CHECK(out.shape() == Shape{1, 3, 32, 32});
        }
    }
    SUBCASE("forced flip is an involution") {
        Tensor once = augment_cifar_at(img, 2, 2, true);
        Tensor twice = augment_cifar_at(once, 2, 2, true);
        CHECK(max_abs_diff(twice, img) == 0.0);
    }
    SUBCASE("flip permutes the pixel multiset") {
        Tensor flipped = augment_cifar_at(img, 2, 2, true);
        std::vector<float> a(img.data(), img.data() + img.size());
        std::vector<float> b(flipped.data(), flipped.data() + flipped.size());
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        CHECK(a == b);
    }
}

TEST_CASE("channel normalization") {
    SUBCASE("post-normalization statistics are zero mean unit std") {
        Rng rng(6);
        Dataset ds;
        ds.images = Tensor({64, 3, 8, 8});
        for (std::int64_t i = 0; i < ds.images.size(); ++i) ds.images[i] = static_cast<float>(rng.uniform(0.2, 0.8));
        ds.labels.assign(64, 0);
        auto stats = compute_channel_stats(ds);
        normalize_channels(ds, stats);
        auto post = compute_channel_stats(ds);
        for (int c = 0; c < 3; ++c) {
            CHECK(std::abs(post.mean[static_cast<size_t>(c)]) <= 1e-4);
            CHECK(std::abs(post.stddev[static_cast<size_t>(c)] - 1.0) <= 1e-3);
        }
    }
    SUBCASE("test split uses training statistics") {
        Rng rng(7);
        Dataset train;
        train.images = Tensor({32, 3, 4, 4});
        for (std::int64_t i = 0; i < train.images.size(); ++i) train.images[i] = static_cast<float>(rng.gaussian(0.5, 0.1));
        train.labels.assign(32, 0);
        Dataset test = train;
        for (std::int64_t i = 0; i < test.images.size(); ++i) test.images[i] += 0.3f;  // shifted distribution
        auto stats = compute_channel_stats(train);
        normalize_channels(test, stats);
        auto post = compute_channel_stats(test);
        // the shift must survive: test was normalized with train statistics
        for (int c = 0; c < 3; ++c) CHECK(post.mean[static_cast<size_t>(c)] > 1.0);
    }
    SUBCASE("constant channel is a numeric error") {
        Dataset ds;
        ds.images = Tensor::constant({4, 3, 4, 4}, 0.5f);
        ds.labels.assign(4, 0);
        CHECK_THROWS_AS(compute_channel_stats(ds), NumericError);
    }
}

TEST_CASE("synthetic datasets") {
    SUBCASE("fixed seed reproduces the dataset bitwise") {
        Dataset a = synthetic_dataset(SyntheticKind::GaussianBlobs, 20, 4, 99, 8);
        Dataset b = synthetic_dataset(SyntheticKind::GaussianBlobs, 20, 4, 99, 8);
        CHECK(a.labels == b.labels);
        CHECK(max_abs_diff(a.images, b.images) == 0.0);
    }
    SUBCASE("blobs with 10-sigma separation are 1-nn separable") {
        Dataset ds = synthetic_dataset(SyntheticKind::GaussianBlobs, 200, 5, 13, 8, 10.0);
        const std::int64_t d = 3 * 8 * 8;
        int correct = 0;
        for (std::int64_t i = 0; i < ds.size(); ++i) {
            double best = 1e300;
            int best_label = -1;
            for (std::int64_t j = 0; j < ds.size(); ++j) {
                if (i == j) continue;
                double dist = 0.0;
                const float* a = ds.images.data() + i * d;
                const float* b = ds.images.data() + j * d;
                for (std::int64_t k = 0; k < d; ++k) dist += (a[k] - b[k]) * (a[k] - b[k]);
                if (dist < best) {
                    best = dist;
                    best_label = ds.labels[static_cast<size_t>(j)];
                }
            }
            if (best_label == ds.labels[static_cast<size_t>(i)]) ++correct;
        }
        CHECK(static_cast<double>(correct) / static_cast<double>(ds.size()) >= 0.99);
    }
    SUBCASE("empty dataset yields nothing") {
        Dataset ds = synthetic_dataset(SyntheticKind::LinearlySeparable, 0, 4, 1, 8);
        CHECK(ds.size() == 0);
        CHECK(take(ds, 5).size() == 0);
    }
    SUBCASE("linearly separable labels are consistent with their projections") {
        Dataset ds = synthetic_dataset(SyntheticKind::LinearlySeparable, 50, 3, 21, 8);
        CHECK(ds.size() == 50);
        for (int label : ds.labels) {
            CHECK(label >= 0);
            CHECK(label < 3);
        }
    }
}
