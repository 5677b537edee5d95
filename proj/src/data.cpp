#include "finegrain/data.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace fg::data {

namespace {

constexpr std::int64_t kImageBytes = 3072;  // 3 * 32 * 32

std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file: " + path);
    in.seekg(0, std::ios::end);
    const std::streamoff len = in.tellg();
    in.seekg(0, std::ios::beg);
    std::vector<unsigned char> bytes(static_cast<size_t>(len));
    if (len > 0) in.read(reinterpret_cast<char*>(bytes.data()), len);
    if (!in) throw IoError("short read on file: " + path);
    return bytes;
}

// Parses records of `record_len` bytes with `label_offset` pointing at the
// used label byte (fine label for the 100-class variant).
Dataset parse_records(const std::string& path, const std::vector<unsigned char>& bytes, std::int64_t record_len,
                      std::int64_t label_offset, int num_classes) {
    if (bytes.size() % static_cast<size_t>(record_len) != 0)
        throw FormatError(strfmt("%s: truncated file, %zu bytes is not a multiple of the %lld-byte record",
                                 path.c_str(), bytes.size(), (long long)record_len));
    const std::int64_t n = static_cast<std::int64_t>(bytes.size()) / record_len;
    Dataset ds;
    ds.num_classes = num_classes;
    if (n == 0) return ds;
    ds.images = Tensor::uninit({n, 3, 32, 32});
    ds.labels.resize(static_cast<size_t>(n));
    for (std::int64_t r = 0; r < n; ++r) {
        const unsigned char* rec = bytes.data() + r * record_len;
        const int label = rec[label_offset];
        if (label >= num_classes)
            throw FormatError(strfmt("%s: record %lld has label %d outside [0,%d)", path.c_str(), (long long)r, label,
                                     num_classes));
        ds.labels[static_cast<size_t>(r)] = label;
        const unsigned char* px = rec + record_len - kImageBytes;
        float* dst = ds.images.data() + r * kImageBytes;
        for (std::int64_t i = 0; i < kImageBytes; ++i) dst[i] = static_cast<float>(px[i]) / 255.0f;
    }
    return ds;
}

Dataset concat_datasets(std::vector<Dataset> parts, int num_classes) {
    std::int64_t total = 0;
    for (const auto& p : parts) total += p.size();
    Dataset out;
    out.num_classes = num_classes;
    if (total == 0) return out;
    out.images = Tensor::uninit({total, 3, 32, 32});
    out.labels.reserve(static_cast<size_t>(total));
    std::int64_t off = 0;
    for (const auto& p : parts) {
        if (p.size() == 0) continue;
        std::copy_n(p.images.data(), p.images.size(), out.images.data() + off * kImageBytes);
        out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
        off += p.size();
    }
    return out;
}

}  // namespace

Dataset load_cifar10_file(const std::string& path) {
    return parse_records(path, read_file(path), 3073, 0, 10);
}

Dataset load_cifar10(const std::string& dir, const std::string& split) {
    Dataset ds;
    if (split == "train") {
        std::vector<Dataset> parts;
        for (int i = 1; i <= 5; ++i) parts.push_back(load_cifar10_file(dir + "/data_batch_" + std::to_string(i) + ".bin"));
        ds = concat_datasets(std::move(parts), 10);
    } else if (split == "test") {
        ds = load_cifar10_file(dir + "/test_batch.bin");
    } else {
        throw ConfigError("load_cifar10: split must be 'train' or 'test'");
    }
    ds.split = split;
    return ds;
}

Dataset load_cifar100(const std::string& dir, const std::string& split) {
    std::string path;
    if (split == "train")
        path = dir + "/train.bin";
    else if (split == "test")
        path = dir + "/test.bin";
    else
        throw ConfigError("load_cifar100: split must be 'train' or 'test'");
    Dataset ds = parse_records(path, read_file(path), 3074, 1, 100);
    ds.split = split;
    return ds;
}

void save_cifar10_file(const Dataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open file for writing: " + path);
    for (std::int64_t r = 0; r < ds.size(); ++r) {
        const unsigned char label = static_cast<unsigned char>(ds.labels[static_cast<size_t>(r)]);
        out.put(static_cast<char>(label));
        const float* src = ds.images.data() + r * kImageBytes;
        for (std::int64_t i = 0; i < kImageBytes; ++i)
            out.put(static_cast<char>(static_cast<unsigned char>(std::lround(src[i] * 255.0f))));
    }
    if (!out) throw IoError("write failed: " + path);
}

Tensor augment_cifar_at(const Tensor& img, std::int64_t dy, std::int64_t dx, bool flip) {
    const Shape s = img.shape();
    if (dy < 0 || dy > 4 || dx < 0 || dx > 4) throw ConfigError("augment: crop offset out of [0,4]");
    Tensor padded = pad2d(img, 2, 0.0f);
    Tensor out = Tensor::uninit({s.n, s.c, s.h, s.w});
    for (std::int64_t n = 0; n < s.n; ++n)
        for (std::int64_t c = 0; c < s.c; ++c)
            for (std::int64_t h = 0; h < s.h; ++h)
                for (std::int64_t w = 0; w < s.w; ++w) {
                    const std::int64_t sw = flip ? (s.w - 1 - w) : w;
                    out.at(n, c, h, w) = padded.at(n, c, h + dy, sw + dx);
                }
    return out;
}

Tensor augment_cifar(const Tensor& img, Rng& rng) {
    const std::int64_t dy = static_cast<std::int64_t>(rng.below(5));
    const std::int64_t dx = static_cast<std::int64_t>(rng.below(5));
    const bool flip = rng.coin();
    return augment_cifar_at(img, dy, dx, flip);
}

ChannelStats compute_channel_stats(const Dataset& ds) {
    if (ds.size() == 0) throw ConfigError("compute_channel_stats: empty dataset");
    const Shape s = ds.images.shape();
    ChannelStats st;
    st.mean.assign(static_cast<size_t>(s.c), 0.0);
    st.stddev.assign(static_cast<size_t>(s.c), 0.0);
    const std::int64_t plane = s.h * s.w;
    const double cnt = static_cast<double>(s.n * plane);
    for (std::int64_t n = 0; n < s.n; ++n)
        for (std::int64_t c = 0; c < s.c; ++c) {
            const float* src = ds.images.data() + (n * s.c + c) * plane;
            for (std::int64_t i = 0; i < plane; ++i) st.mean[static_cast<size_t>(c)] += src[i];
        }
    for (std::int64_t c = 0; c < s.c; ++c) st.mean[static_cast<size_t>(c)] /= cnt;
    for (std::int64_t n = 0; n < s.n; ++n)
        for (std::int64_t c = 0; c < s.c; ++c) {
            const float* src = ds.images.data() + (n * s.c + c) * plane;
            const double m = st.mean[static_cast<size_t>(c)];
            for (std::int64_t i = 0; i < plane; ++i) st.stddev[static_cast<size_t>(c)] += (src[i] - m) * (src[i] - m);
        }
    for (std::int64_t c = 0; c < s.c; ++c) {
        st.stddev[static_cast<size_t>(c)] = std::sqrt(st.stddev[static_cast<size_t>(c)] / cnt);
        if (st.stddev[static_cast<size_t>(c)] < 1e-12)
            throw NumericError(strfmt("normalize: channel %lld has zero spread", (long long)c));
    }
    return st;
}

void normalize_channels(Dataset& ds, const ChannelStats& stats) {
    if (ds.size() == 0) return;
    const Shape s = ds.images.shape();
    const std::int64_t plane = s.h * s.w;
    for (std::int64_t n = 0; n < s.n; ++n)
        for (std::int64_t c = 0; c < s.c; ++c) {
            float* dst = ds.images.data() + (n * s.c + c) * plane;
            const float m = static_cast<float>(stats.mean[static_cast<size_t>(c)]);
            const float inv = static_cast<float>(1.0 / stats.stddev[static_cast<size_t>(c)]);
            for (std::int64_t i = 0; i < plane; ++i) dst[i] = (dst[i] - m) * inv;
        }
}

Dataset synthetic_dataset(SyntheticKind kind, std::int64_t n, int classes, std::uint64_t seed, std::int64_t hw,
                          double separation) {
    Dataset ds;
    ds.num_classes = classes;
    ds.split = "train";
    if (n == 0) return ds;
    const std::int64_t d = 3 * hw * hw;
    Rng rng(seed);
    ds.images = Tensor::uninit({n, 3, hw, hw});
    ds.labels.resize(static_cast<size_t>(n));

    if (kind == SyntheticKind::GaussianBlobs) {
        std::vector<float> centers(static_cast<size_t>(classes * d));
        for (auto& v : centers) v = static_cast<float>(rng.gaussian(0.0, separation));
        for (std::int64_t i = 0; i < n; ++i) {
            const int label = static_cast<int>(rng.below(static_cast<std::uint64_t>(classes)));
            ds.labels[static_cast<size_t>(i)] = label;
            const float* ctr = centers.data() + static_cast<size_t>(label) * d;
            float* dst = ds.images.data() + i * d;
            for (std::int64_t j = 0; j < d; ++j) dst[j] = ctr[j] + static_cast<float>(rng.gaussian(0.0, 1.0));
        }
    } else {
        std::vector<float> proj(static_cast<size_t>(classes * d));
        for (auto& v : proj) v = rng.coin() ? 1.0f : -1.0f;
        for (std::int64_t i = 0; i < n; ++i) {
            float* dst = ds.images.data() + i * d;
            for (std::int64_t j = 0; j < d; ++j) dst[j] = static_cast<float>(rng.gaussian(0.0, 1.0));
            int best = 0;
            double best_score = -1e300;
            for (int c = 0; c < classes; ++c) {
                double score = 0.0;
                const float* p = proj.data() + static_cast<size_t>(c) * d;
                for (std::int64_t j = 0; j < d; ++j) score += static_cast<double>(p[j]) * static_cast<double>(dst[j]);
                if (score > best_score) {
                    best_score = score;
                    best = c;
                }
            }
            ds.labels[static_cast<size_t>(i)] = best;
        }
    }
    return ds;
}

Dataset take(const Dataset& ds, std::int64_t n) {
    Dataset out;
    out.num_classes = ds.num_classes;
    out.split = ds.split;
    out.augment = ds.augment;
    n = std::min(n, ds.size());
    if (n == 0) return out;
    const std::int64_t d = ds.images.size() / ds.size();
    const Shape s = ds.images.shape();
    out.images = Tensor::uninit({n, s.c, s.h, s.w});
    std::copy_n(ds.images.data(), n * d, out.images.data());
    out.labels.assign(ds.labels.begin(), ds.labels.begin() + n);
    return out;
}

Tensor gather_batch(const Dataset& ds, const std::vector<std::int64_t>& indices, Rng* augment_rng,
                    std::vector<int>* labels_out) {
    if (indices.empty()) throw ConfigError("gather_batch: empty index list");
    const Shape s = ds.images.shape();
    const std::int64_t d = s.c * s.h * s.w;
    Tensor batch = Tensor::uninit({static_cast<std::int64_t>(indices.size()), s.c, s.h, s.w});
    if (labels_out) labels_out->clear();
    for (size_t i = 0; i < indices.size(); ++i) {
        const std::int64_t idx = indices[i];
        if (idx < 0 || idx >= ds.size()) throw ShapeError("gather_batch: index out of range");
        Tensor img = Tensor::uninit({1, s.c, s.h, s.w});
        std::copy_n(ds.images.data() + idx * d, d, img.data());
        if (ds.augment && augment_rng) img = augment_cifar(img, *augment_rng);
        std::copy_n(img.data(), d, batch.data() + static_cast<std::int64_t>(i) * d);
        if (labels_out) labels_out->push_back(ds.labels[static_cast<size_t>(idx)]);
    }
    return batch;
}

}  // namespace fg::data
