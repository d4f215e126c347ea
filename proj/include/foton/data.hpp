#pragma once

#include <zlib.h>

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "foton/common.hpp"
#include "foton/layers.hpp"
#include "foton/rng.hpp"
#include "foton/tensor.hpp"

namespace foton {

template <typename S> struct Dataset {
    Tensor<S> inputs;            // (N, D) or (N, C, H, W)
    std::vector<int> labels;     // class indices < num_classes
    std::size_t num_classes = 0;
    std::string split;           // "train" / "test"

    std::size_t size() const { return labels.size(); }
};

namespace detail {

inline std::vector<unsigned char> read_file_bytes(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    return bytes;
}

inline std::vector<unsigned char> gunzip(const std::vector<unsigned char> &in,
                                         const std::string &path) {
    std::vector<unsigned char> out;
    out.reserve(in.size() * 4);
    z_stream zs{};
    if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK)
        throw DataError("gzip init failed for " + path);
    zs.next_in = const_cast<unsigned char *>(in.data());
    zs.avail_in = static_cast<uInt>(in.size());
    unsigned char buf[1 << 16];
    int rc = Z_OK;
    while (rc != Z_STREAM_END) {
        zs.next_out = buf;
        zs.avail_out = sizeof buf;
        rc = inflate(&zs, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END) {
            inflateEnd(&zs);
            throw DataError("gzip decompression failed for " + path);
        }
        out.insert(out.end(), buf, buf + (sizeof buf - zs.avail_out));
    }
    inflateEnd(&zs);
    return out;
}

// Reads a file, transparently decompressing gzip (magic 1f 8b).
inline std::vector<unsigned char> read_maybe_gzip(const std::string &path) {
    auto bytes = read_file_bytes(path);
    if (bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b)
        return gunzip(bytes, path);
    return bytes;
}

inline std::uint32_t be32(const unsigned char *p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
           (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

} // namespace detail

// Big-endian IDX parser. Images magic 0x00000803, labels 0x00000801;
// pixel bytes scaled to [0, 1].
template <typename S>
Dataset<S> load_mnist_idx(const std::string &images_path, const std::string &labels_path,
                          const std::string &split = "train") {
    auto img = detail::read_maybe_gzip(images_path);
    auto lab = detail::read_maybe_gzip(labels_path);
    if (img.size() < 16)
        throw DataError(images_path + ": truncated IDX header");
    if (lab.size() < 8)
        throw DataError(labels_path + ": truncated IDX header");

    const std::uint32_t img_magic = detail::be32(img.data());
    const std::uint32_t lab_magic = detail::be32(lab.data());
    if (img_magic != 0x00000803)
        throw DataError(images_path + ": bad magic " + std::to_string(img_magic) +
                        ", expected 2051 (0x00000803)");
    if (lab_magic != 0x00000801)
        throw DataError(labels_path + ": bad magic " + std::to_string(lab_magic) +
                        ", expected 2049 (0x00000801)");

    const std::size_t n = detail::be32(img.data() + 4);
    const std::size_t h = detail::be32(img.data() + 8);
    const std::size_t w = detail::be32(img.data() + 12);
    const std::size_t n_lab = detail::be32(lab.data() + 4);
    if (n != n_lab)
        throw DataError("image count " + std::to_string(n) + " != label count " +
                        std::to_string(n_lab));
    if (img.size() != 16 + n * h * w)
        throw DataError(images_path + ": expected " + std::to_string(16 + n * h * w) +
                        " bytes, got " + std::to_string(img.size()));
    if (lab.size() != 8 + n)
        throw DataError(labels_path + ": expected " + std::to_string(8 + n) + " bytes, got " +
                        std::to_string(lab.size()));

    Dataset<S> ds;
    ds.split = split;
    ds.num_classes = 10;
    ds.inputs = Tensor<S>({n, 1, h, w});
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n * h * w; ++i)
        ds.inputs[i] = S(img[16 + i] / 255.0);
    for (std::size_t i = 0; i < n; ++i) {
        ds.labels[i] = lab[8 + i];
        if (ds.labels[i] >= int(ds.num_classes))
            throw DataError(labels_path + ": label " + std::to_string(ds.labels[i]) +
                            " out of range at index " + std::to_string(i));
    }
    return ds;
}

enum class CifarVariant { Cifar10, Cifar100 };

// CIFAR-10: records of 1 label byte + 3072 pixels. CIFAR-100: 2 label
// bytes (coarse, fine) + 3072 pixels. Pixels scaled to [0,1] and then
// per-channel standardized with the supplied constants.
template <typename S>
Dataset<S> load_cifar_binary(const std::vector<std::string> &paths, CifarVariant variant,
                             bool coarse = false,
                             const std::array<double, 3> &mean = {0.0, 0.0, 0.0},
                             const std::array<double, 3> &stddev = {1.0, 1.0, 1.0},
                             const std::string &split = "train") {
    const std::size_t label_bytes = variant == CifarVariant::Cifar100 ? 2 : 1;
    const std::size_t record = label_bytes + 3072;
    if (variant == CifarVariant::Cifar10 && coarse)
        throw ConfigError("coarse labels only exist for CIFAR-100");

    std::vector<unsigned char> all;
    for (const auto &p : paths) {
        auto bytes = detail::read_maybe_gzip(p);
        if (bytes.size() % record != 0)
            throw DataError(p + ": truncated record, file size " +
                            std::to_string(bytes.size()) + " is not a multiple of " +
                            std::to_string(record) + " (offset of partial record: " +
                            std::to_string(bytes.size() - bytes.size() % record) + ")");
        all.insert(all.end(), bytes.begin(), bytes.end());
    }
    const std::size_t n = all.size() / record;
    Dataset<S> ds;
    ds.split = split;
    ds.num_classes = variant == CifarVariant::Cifar100 ? (coarse ? 20 : 100) : 10;
    ds.inputs = Tensor<S>({n, 3, 32, 32});
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const unsigned char *rec = all.data() + i * record;
        int label = variant == CifarVariant::Cifar100 ? (coarse ? rec[0] : rec[1]) : rec[0];
        if (label >= int(ds.num_classes))
            throw DataError("label " + std::to_string(label) + " out of range in record " +
                            std::to_string(i));
        ds.labels[i] = label;
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t px = 0; px < 1024; ++px)
                ds.inputs[((i * 3 + c) * 1024) + px] =
                    S((rec[label_bytes + c * 1024 + px] / 255.0 - mean[c]) / stddev[c]);
    }
    return ds;
}

template <typename S>
Tensor<S> one_hot(const std::vector<int> &labels, std::size_t num_classes) {
    Tensor<S> t({labels.size(), num_classes});
    for (std::size_t i = 0; i < labels.size(); ++i) t.at2(i, labels[i]) = S(1);
    return t;
}

// Deterministic subset: seeded shuffle of indices, first n kept.
template <typename S>
Dataset<S> dataset_subset(const Dataset<S> &ds, std::size_t n, std::uint64_t seed) {
    n = std::min(n, ds.size());
    std::vector<std::size_t> idx(ds.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(seed);
    for (std::size_t i = idx.size(); i-- > 1;) std::swap(idx[i], idx[rng.index(i + 1)]);

    const std::size_t d = ds.inputs.size() / ds.size();
    Shape shape = ds.inputs.shape();
    shape[0] = n;
    Dataset<S> out;
    out.split = ds.split;
    out.num_classes = ds.num_classes;
    out.inputs = Tensor<S>(shape);
    out.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::memcpy(out.inputs.data() + i * d, ds.inputs.data() + idx[i] * d, d * sizeof(S));
        out.labels[i] = ds.labels[idx[i]];
    }
    return out;
}

// Gathers a batch given sample indices.
template <typename S>
std::pair<Tensor<S>, Tensor<S>> gather_batch(const Dataset<S> &ds,
                                             const std::vector<std::size_t> &idx) {
    const std::size_t d = ds.inputs.size() / ds.size();
    Shape shape = ds.inputs.shape();
    shape[0] = idx.size();
    Tensor<S> x(shape);
    Tensor<S> y({idx.size(), ds.num_classes});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        std::memcpy(x.data() + i * d, ds.inputs.data() + idx[i] * d, d * sizeof(S));
        y.at2(i, ds.labels[idx[i]]) = S(1);
    }
    return {std::move(x), std::move(y)};
}

// Deterministic epoch order: seeded shuffle, last partial batch kept.
class BatchIterator {
  public:
    BatchIterator(std::size_t n, std::size_t batch_size, std::uint64_t shuffle_seed,
                  bool shuffle = true)
        : batch_(batch_size) {
        if (batch_size < 1) throw ConfigError("batch size must be >= 1");
        order_.resize(n);
        for (std::size_t i = 0; i < n; ++i) order_[i] = i;
        if (shuffle) {
            Rng rng(shuffle_seed);
            for (std::size_t i = n; i-- > 1;) std::swap(order_[i], order_[rng.index(i + 1)]);
        }
    }

    bool next(std::vector<std::size_t> &out) {
        if (pos_ >= order_.size()) return false;
        const std::size_t end = std::min(pos_ + batch_, order_.size());
        out.assign(order_.begin() + pos_, order_.begin() + end);
        pos_ = end;
        return true;
    }

    std::size_t batches() const { return (order_.size() + batch_ - 1) / batch_; }

  private:
    std::vector<std::size_t> order_;
    std::size_t batch_;
    std::size_t pos_ = 0;
};

// Deterministic teacher network plus Gaussian inputs labeled by the
// teacher's outputs; the desk-scale problem the oracle tests train on.
template <typename S>
std::pair<Network<S>, Dataset<S>> synthetic_regression(const std::vector<std::size_t> &widths,
                                                       std::size_t samples,
                                                       std::uint64_t seed) {
    Network<S> teacher;
    teacher.input_shape = {widths.front()};
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        DenseLayer<S> d;
        d.weight = orthogonal_init<S>(widths[l + 1], widths[l], derive_seed(seed, 100 + l));
        teacher.layers.push_back(d);
    }

    Dataset<S> ds;
    ds.split = "train";
    ds.num_classes = widths.back();
    ds.inputs = Tensor<S>({samples, widths.front()});
    Rng rng(derive_seed(seed, 7));
    for (std::size_t i = 0; i < ds.inputs.size(); ++i) ds.inputs[i] = S(rng.gaussian());
    ds.labels.assign(samples, 0); // regression targets live in teacher outputs
    return {teacher, ds};
}

// Versioned binary cache: header + raw little-endian scalars. Reloading
// reproduces the tensors bit-exactly.
inline constexpr std::uint32_t kCacheVersion = 1;

template <typename S> void save_dataset_cache(const Dataset<S> &ds, const std::string &path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    const char magic[4] = {'F', 'D', 'S', '1'};
    out.write(magic, 4);
    std::uint32_t version = kCacheVersion, scalar_bytes = sizeof(S);
    std::uint32_t rank = std::uint32_t(ds.inputs.rank());
    std::uint64_t classes = ds.num_classes, n = ds.size();
    out.write(reinterpret_cast<const char *>(&version), 4);
    out.write(reinterpret_cast<const char *>(&scalar_bytes), 4);
    out.write(reinterpret_cast<const char *>(&rank), 4);
    for (std::size_t i = 0; i < ds.inputs.rank(); ++i) {
        std::uint64_t e = ds.inputs.extent(i);
        out.write(reinterpret_cast<const char *>(&e), 8);
    }
    out.write(reinterpret_cast<const char *>(&classes), 8);
    out.write(reinterpret_cast<const char *>(&n), 8);
    out.write(reinterpret_cast<const char *>(ds.inputs.data()), ds.inputs.size() * sizeof(S));
    std::vector<std::int32_t> labs(ds.labels.begin(), ds.labels.end());
    out.write(reinterpret_cast<const char *>(labs.data()), labs.size() * 4);
    std::uint32_t split_len = std::uint32_t(ds.split.size());
    out.write(reinterpret_cast<const char *>(&split_len), 4);
    out.write(ds.split.data(), split_len);
}

template <typename S> Dataset<S> load_dataset_cache(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (std::memcmp(magic, "FDS1", 4) != 0) throw DataError(path + ": not a dataset cache");
    std::uint32_t version = 0, scalar_bytes = 0, rank = 0;
    in.read(reinterpret_cast<char *>(&version), 4);
    in.read(reinterpret_cast<char *>(&scalar_bytes), 4);
    in.read(reinterpret_cast<char *>(&rank), 4);
    if (version != kCacheVersion)
        throw DataError(path + ": cache version " + std::to_string(version) +
                        ", expected " + std::to_string(kCacheVersion));
    if (scalar_bytes != sizeof(S))
        throw DataError(path + ": cache holds " + std::to_string(scalar_bytes) +
                        "-byte scalars, loader expects " + std::to_string(sizeof(S)));
    Shape shape(rank);
    for (auto &e : shape) {
        std::uint64_t v = 0;
        in.read(reinterpret_cast<char *>(&v), 8);
        e = std::size_t(v);
    }
    std::uint64_t classes = 0, n = 0;
    in.read(reinterpret_cast<char *>(&classes), 8);
    in.read(reinterpret_cast<char *>(&n), 8);
    Dataset<S> ds;
    ds.num_classes = std::size_t(classes);
    ds.inputs = Tensor<S>(shape);
    in.read(reinterpret_cast<char *>(ds.inputs.data()), ds.inputs.size() * sizeof(S));
    std::vector<std::int32_t> labs(n);
    in.read(reinterpret_cast<char *>(labs.data()), n * 4);
    ds.labels.assign(labs.begin(), labs.end());
    std::uint32_t split_len = 0;
    in.read(reinterpret_cast<char *>(&split_len), 4);
    ds.split.resize(split_len);
    in.read(ds.split.data(), split_len);
    if (!in) throw DataError(path + ": truncated cache file");
    return ds;
}

} // namespace foton
