#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "foton/data.hpp"
#include "foton/loss.hpp"
#include "foton/rules.hpp"

#include "helpers.hpp"

#include <zlib.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace foton;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("foton_test_" + std::to_string(::getpid()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string &name) const { return (path / name).string(); }
};

void write_bytes(const std::string &path, const std::vector<unsigned char> &bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char *>(bytes.data()), bytes.size());
}

void push_be32(std::vector<unsigned char> &v, std::uint32_t x) {
    v.push_back((x >> 24) & 0xff);
    v.push_back((x >> 16) & 0xff);
    v.push_back((x >> 8) & 0xff);
    v.push_back(x & 0xff);
}

// two 2x2 images with pixel bytes 0/255/128/64 and labels 3, 7
std::vector<unsigned char> tiny_idx_images() {
    std::vector<unsigned char> v;
    push_be32(v, 0x00000803);
    push_be32(v, 2);
    push_be32(v, 2);
    push_be32(v, 2);
    for (unsigned char b : {0, 255, 128, 64, 10, 20, 30, 40}) v.push_back(b);
    return v;
}

std::vector<unsigned char> tiny_idx_labels() {
    std::vector<unsigned char> v;
    push_be32(v, 0x00000801);
    push_be32(v, 2);
    v.push_back(3);
    v.push_back(7);
    return v;
}

std::vector<unsigned char> gzip_compress(const std::vector<unsigned char> &in) {
    z_stream zs{};
    deflateInit2(&zs, Z_BEST_SPEED, Z_DEFLATED, 16 + MAX_WBITS, 8, Z_DEFAULT_STRATEGY);
    std::vector<unsigned char> out(in.size() + 128);
    zs.next_in = const_cast<unsigned char *>(in.data());
    zs.avail_in = static_cast<uInt>(in.size());
    zs.next_out = out.data();
    zs.avail_out = static_cast<uInt>(out.size());
    deflate(&zs, Z_FINISH);
    out.resize(zs.total_out);
    deflateEnd(&zs);
    return out;
}

} // namespace

TEST_CASE("idx loader parses headers and scales pixel bytes to [0,1]") {
    TempDir tmp;
    write_bytes(tmp.file("img"), tiny_idx_images());
    write_bytes(tmp.file("lab"), tiny_idx_labels());
    auto ds = load_mnist_idx<double>(tmp.file("img"), tmp.file("lab"));
    CHECK(ds.size() == 2);
    CHECK(ds.inputs.shape() == Shape{2, 1, 2, 2});
    CHECK(ds.inputs[0] == 0.0);
    CHECK(ds.inputs[1] == 1.0);
    CHECK(ds.inputs[2] == doctest::Approx(128.0 / 255.0));
    CHECK(ds.labels[0] == 3);
    CHECK(ds.labels[1] == 7);
}

TEST_CASE("idx loader rejects bad magic, truncation and count mismatch") {
    TempDir tmp;
    write_bytes(tmp.file("img"), tiny_idx_images());
    write_bytes(tmp.file("lab"), tiny_idx_labels());

    // labels file carrying the images magic
    CHECK_THROWS_WITH_AS(load_mnist_idx<double>(tmp.file("img"), tmp.file("img")),
                         doctest::Contains("bad magic"), DataError);

    auto truncated = tiny_idx_images();
    truncated.pop_back();
    write_bytes(tmp.file("trunc"), truncated);
    CHECK_THROWS_AS(load_mnist_idx<double>(tmp.file("trunc"), tmp.file("lab")), DataError);

    auto labels3 = tiny_idx_labels();
    labels3[7] = 3; // count field says 3
    write_bytes(tmp.file("lab3"), labels3);
    CHECK_THROWS_WITH_AS(load_mnist_idx<double>(tmp.file("img"), tmp.file("lab3")),
                         doctest::Contains("count"), DataError);
}

TEST_CASE("idx loader transparently decompresses gzip") {
    TempDir tmp;
    write_bytes(tmp.file("img.gz"), gzip_compress(tiny_idx_images()));
    write_bytes(tmp.file("lab.gz"), gzip_compress(tiny_idx_labels()));
    auto ds = load_mnist_idx<double>(tmp.file("img.gz"), tmp.file("lab.gz"));
    CHECK(ds.size() == 2);
    CHECK(ds.inputs[1] == 1.0);
}

TEST_CASE("cifar record arithmetic and label selection") {
    TempDir tmp;
    // CIFAR-10 style: 3 records of 1+3072
    std::vector<unsigned char> c10(3 * 3073, 0);
    c10[0] = 1;
    c10[3073] = 9;
    c10[2 * 3073] = 4;
    c10[1] = 255; // first pixel of record 0
    write_bytes(tmp.file("c10.bin"), c10);
    auto ds10 = load_cifar_binary<double>({tmp.file("c10.bin")}, CifarVariant::Cifar10);
    CHECK(ds10.size() == 3);
    CHECK(ds10.labels == std::vector<int>{1, 9, 4});
    CHECK(ds10.inputs[0] == doctest::Approx(1.0));
    CHECK(ds10.num_classes == 10);

    // CIFAR-100 style: 2 records of 2+3072, fine label is byte index 1
    std::vector<unsigned char> c100(2 * 3074, 0);
    c100[0] = 11;   // coarse
    c100[1] = 42;   // fine
    c100[3074] = 5;
    c100[3075] = 99;
    write_bytes(tmp.file("c100.bin"), c100);
    auto fine = load_cifar_binary<double>({tmp.file("c100.bin")}, CifarVariant::Cifar100);
    CHECK(fine.labels == std::vector<int>{42, 99});
    CHECK(fine.num_classes == 100);
    auto coarse =
        load_cifar_binary<double>({tmp.file("c100.bin")}, CifarVariant::Cifar100, true);
    CHECK(coarse.labels == std::vector<int>{11, 5});
    CHECK(coarse.num_classes == 20);
}

TEST_CASE("cifar loader reports the byte offset of a truncated record") {
    TempDir tmp;
    std::vector<unsigned char> bad(2 * 3073 + 100, 0);
    write_bytes(tmp.file("bad.bin"), bad);
    CHECK_THROWS_WITH_AS(load_cifar_binary<double>({tmp.file("bad.bin")},
                                                   CifarVariant::Cifar10),
                         doctest::Contains("6146"), DataError); // 2 * 3073
}

TEST_CASE("cifar per-channel normalization uses the supplied constants") {
    TempDir tmp;
    std::vector<unsigned char> rec(3073, 0);
    rec[1] = 255;        // channel 0
    rec[1 + 1024] = 128; // channel 1
    write_bytes(tmp.file("one.bin"), rec);
    auto ds = load_cifar_binary<double>({tmp.file("one.bin")}, CifarVariant::Cifar10, false,
                                        {0.5, 0.25, 0.1}, {2.0, 0.5, 1.0});
    CHECK(ds.inputs[0] == doctest::Approx((1.0 - 0.5) / 2.0));
    CHECK(ds.inputs[1024] == doctest::Approx((128.0 / 255.0 - 0.25) / 0.5));
    CHECK(ds.inputs[2048] == doctest::Approx(-0.1));
}

TEST_CASE("dataset cache round-trips bit-exactly") {
    TempDir tmp;
    Dataset<float> ds;
    ds.split = "train";
    ds.num_classes = 5;
    ds.inputs = testutil::random_tensor<float>({7, 3, 4, 4}, 601);
    ds.labels = {0, 1, 2, 3, 4, 1, 2};
    save_dataset_cache(ds, tmp.file("cache.bin"));
    auto back = load_dataset_cache<float>(tmp.file("cache.bin"));
    CHECK(back.inputs == ds.inputs);
    CHECK(back.labels == ds.labels);
    CHECK(back.num_classes == 5);
    CHECK(back.split == "train");

    CHECK_THROWS_AS(load_dataset_cache<double>(tmp.file("cache.bin")), DataError);
}

TEST_CASE("batch iterator: sizes, determinism, shuffle off") {
    BatchIterator it(10, 4, 77);
    std::vector<std::size_t> b;
    std::vector<std::size_t> sizes;
    while (it.next(b)) sizes.push_back(b.size());
    CHECK(sizes == std::vector<std::size_t>{4, 4, 2});

    BatchIterator a1(10, 4, 77), a2(10, 4, 77);
    std::vector<std::size_t> x1, x2, all1, all2;
    while (a1.next(x1)) all1.insert(all1.end(), x1.begin(), x1.end());
    while (a2.next(x2)) all2.insert(all2.end(), x2.begin(), x2.end());
    CHECK(all1 == all2);

    BatchIterator noshuf(6, 2, 99, false);
    std::vector<std::size_t> flat;
    while (noshuf.next(b)) flat.insert(flat.end(), b.begin(), b.end());
    CHECK(flat == std::vector<std::size_t>{0, 1, 2, 3, 4, 5});
}

TEST_CASE("dataset subset is deterministic and preserves rows") {
    Dataset<double> ds;
    ds.num_classes = 4;
    ds.inputs = testutil::random_tensor<double>({20, 6}, 611);
    for (int i = 0; i < 20; ++i) ds.labels.push_back(i % 4);
    auto a = dataset_subset(ds, 8, 5);
    auto b = dataset_subset(ds, 8, 5);
    CHECK(a.inputs == b.inputs);
    CHECK(a.labels == b.labels);
    CHECK(a.size() == 8);
    // each kept row matches its source row
    for (std::size_t i = 0; i < 8; ++i) {
        bool found = false;
        for (std::size_t j = 0; j < 20 && !found; ++j) {
            bool same = true;
            for (std::size_t d = 0; d < 6; ++d)
                if (a.inputs.at2(i, d) != ds.inputs.at2(j, d)) same = false;
            if (same && a.labels[i] == ds.labels[j]) found = true;
        }
        CHECK(found);
    }
}

TEST_CASE("synthetic regression: identity teacher and determinism") {
    auto [teacher, ds] = synthetic_regression<double>({4, 4}, 16, 621);
    auto [t2, ds2] = synthetic_regression<double>({4, 4}, 16, 621);
    CHECK(ds2.inputs == ds.inputs);
    CHECK(std::get<DenseLayer<double>>(t2.layers[0]).weight ==
          std::get<DenseLayer<double>>(teacher.layers[0]).weight);

    auto &w = std::get<DenseLayer<double>>(teacher.layers[0]).weight;
    w = Matrix<double>::identity(4);
    auto targets = forward_clean(teacher, ds.inputs).post.back();
    CHECK(testutil::max_abs_diff(targets, ds.inputs) == 0.0);
}

TEST_CASE("foton training on the synthetic problem strictly decreases the loss") {
    auto [teacher, ds] = synthetic_regression<double>({12, 10, 8}, 64, 631);
    auto targets = forward_clean(teacher, ds.inputs).post.back();

    auto student = testutil::dense_network<double>({12, 10, 8}, 632);
    auto f = make_aligned_feedback(student, 1);
    double prev = 1e300;
    for (int step = 0; step < 100; ++step) {
        auto tr = forward_clean(student, ds.inputs);
        double l = loss_value(LossKind::mse(), tr.post.back(), targets);
        if (step > 0) CHECK(l < prev);
        prev = l;
        auto e = compute_error(LossKind::mse(), tr.post.back(), targets);
        modulated_forward(student, ds.inputs, e, f, tr);
        auto u = foton_update(student, tr, e, 0.05);
        apply_updates(student, u);
        orthogonalize_network(student, 5);
        refresh_feedback(f, student, std::size_t(step + 1));
    }
    CHECK(prev < 0.5); // long way down from the random start
}

TEST_CASE("real cifar files parse with the documented counts when present") {
    auto dir = testutil::data_dir();
    if (std::filesystem::exists(dir + "/cifar100/train.bin")) {
        auto train =
            load_cifar_binary<float>({dir + "/cifar100/train.bin"}, CifarVariant::Cifar100);
        auto test =
            load_cifar_binary<float>({dir + "/cifar100/test.bin"}, CifarVariant::Cifar100);
        CHECK(train.size() == 50000);
        CHECK(test.size() == 10000);
    } else {
        MESSAGE("cifar-100 files not present, skipping");
    }
    if (std::filesystem::exists(dir + "/cifar10/data_batch_1.bin")) {
        std::vector<std::string> paths;
        for (int i = 1; i <= 5; ++i)
            paths.push_back(dir + "/cifar10/data_batch_" + std::to_string(i) + ".bin");
        auto train = load_cifar_binary<float>(paths, CifarVariant::Cifar10);
        CHECK(train.size() == 50000);
    } else {
        MESSAGE("cifar-10 files not present, skipping");
    }
}

TEST_CASE("real mnist files parse with the documented counts when present") {
    auto dir = testutil::data_dir() + "/mnist";
    if (!std::filesystem::exists(dir + "/train-images-idx3-ubyte")) {
        MESSAGE("mnist files not present, skipping");
        return;
    }
    auto train = load_mnist_idx<float>(dir + "/train-images-idx3-ubyte",
                                       dir + "/train-labels-idx1-ubyte");
    auto test = load_mnist_idx<float>(dir + "/t10k-images-idx3-ubyte",
                                      dir + "/t10k-labels-idx1-ubyte", "test");
    CHECK(train.size() == 60000);
    CHECK(test.size() == 10000);
    CHECK(train.inputs.shape() == Shape{60000, 1, 28, 28});
}
