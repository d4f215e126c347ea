#pragma once

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "foton/common.hpp"
#include "foton/feedback.hpp"
#include "foton/layers.hpp"
#include "foton/rng.hpp"

namespace foton {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Everything a paused run needs to continue bit-exactly.
template <typename S> struct TrainState {
    Network<S> net;
    FeedbackOperator<S> feedback;
    bool has_feedback = false;
    std::size_t step = 0;
    std::size_t epoch = 0;
    double lr = 0.0;
    Rng dropout_rng;
    std::string arch_fingerprint;
};

namespace detail {

class ByteWriter {
  public:
    void u32(std::uint32_t v) { raw(&v, 4); }
    void u64(std::uint64_t v) { raw(&v, 8); }
    void f64(double v) { raw(&v, 8); }
    void str(const std::string &s) {
        u64(s.size());
        raw(s.data(), s.size());
    }
    template <typename S> void scalars(const S *p, std::size_t n) { raw(p, n * sizeof(S)); }
    void raw(const void *p, std::size_t n) {
        const char *c = static_cast<const char *>(p);
        bytes.insert(bytes.end(), c, c + n);
    }
    std::vector<char> bytes;
};

class ByteReader {
  public:
    ByteReader(const std::vector<char> &b) : bytes_(b) {}
    std::uint32_t u32() { return get<std::uint32_t>(); }
    std::uint64_t u64() { return get<std::uint64_t>(); }
    double f64() { return get<double>(); }
    std::string str() {
        std::size_t n = u64();
        check(n);
        std::string s(bytes_.data() + pos_, n);
        pos_ += n;
        return s;
    }
    template <typename S> void scalars(S *p, std::size_t n) {
        check(n * sizeof(S));
        std::memcpy(p, bytes_.data() + pos_, n * sizeof(S));
        pos_ += n * sizeof(S);
    }

  private:
    template <typename T> T get() {
        check(sizeof(T));
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    void check(std::size_t n) {
        if (pos_ + n > bytes_.size()) throw DataError("checkpoint: truncated payload");
    }
    const std::vector<char> &bytes_;
    std::size_t pos_ = 0;
};

template <typename S> void write_matrix(ByteWriter &w, const Matrix<S> &m) {
    w.u64(m.rows());
    w.u64(m.cols());
    w.scalars(m.data(), m.size());
}

template <typename S> Matrix<S> read_matrix(ByteReader &r) {
    std::size_t rows = r.u64(), cols = r.u64();
    Matrix<S> m(rows, cols);
    r.scalars(m.data(), m.size());
    return m;
}

template <typename S> void write_tensor(ByteWriter &w, const Tensor<S> &t) {
    w.u64(t.rank());
    for (std::size_t i = 0; i < t.rank(); ++i) w.u64(t.extent(i));
    w.scalars(t.data(), t.size());
}

template <typename S> Tensor<S> read_tensor(ByteReader &r) {
    Shape shape(r.u64());
    for (auto &e : shape) e = r.u64();
    Tensor<S> t(shape);
    r.scalars(t.data(), t.size());
    return t;
}

template <typename S> void write_network(ByteWriter &w, const Network<S> &net) {
    w.u64(net.input_shape.size());
    for (auto e : net.input_shape) w.u64(e);
    w.u64(net.layers.size());
    for (const auto &layer : net.layers) {
        if (std::holds_alternative<DenseLayer<S>>(layer)) {
            const auto &d = std::get<DenseLayer<S>>(layer);
            w.u32(0);
            w.u32(std::uint32_t(d.act.kind));
            w.f64(d.dropout_rate);
            write_matrix(w, d.weight);
        } else if (std::holds_alternative<ConvLayer<S>>(layer)) {
            const auto &c = std::get<ConvLayer<S>>(layer);
            w.u32(1);
            w.u32(std::uint32_t(c.act.kind));
            w.u64(c.pad);
            write_tensor(w, c.kernel);
            w.u32(c.bcop ? 1 : 0);
            if (c.bcop) {
                w.u64(c.bcop->ksize);
                write_matrix(w, c.bcop->channel);
                w.u64(c.bcop->qs.size());
                for (const auto &q : c.bcop->qs) write_matrix(w, q);
            }
        } else {
            const auto &p = std::get<PoolLayer>(layer);
            w.u32(2);
            w.u64(p.ph);
            w.u64(p.pw);
        }
    }
}

template <typename S> Network<S> read_network(ByteReader &r) {
    Network<S> net;
    net.input_shape.resize(r.u64());
    for (auto &e : net.input_shape) e = r.u64();
    const std::size_t layers = r.u64();
    for (std::size_t l = 0; l < layers; ++l) {
        const std::uint32_t kind = r.u32();
        if (kind == 0) {
            DenseLayer<S> d;
            d.act.kind = ActKind(r.u32());
            d.dropout_rate = r.f64();
            d.weight = read_matrix<S>(r);
            net.layers.push_back(std::move(d));
        } else if (kind == 1) {
            ConvLayer<S> c;
            c.act.kind = ActKind(r.u32());
            c.pad = r.u64();
            c.kernel = read_tensor<S>(r);
            if (r.u32()) {
                BcopParams<S> b;
                b.ksize = r.u64();
                b.channel = read_matrix<S>(r);
                b.qs.resize(r.u64());
                for (auto &q : b.qs) q = read_matrix<S>(r);
                c.bcop = std::move(b);
            }
            net.layers.push_back(std::move(c));
        } else if (kind == 2) {
            PoolLayer p;
            p.ph = r.u64();
            p.pw = r.u64();
            net.layers.push_back(p);
        } else {
            throw DataError("checkpoint: unknown layer kind " + std::to_string(kind));
        }
    }
    return net;
}

} // namespace detail

template <typename S>
void checkpoint_save(const TrainState<S> &st, const std::string &path) {
    detail::ByteWriter w;
    w.str(st.arch_fingerprint);
    w.u64(st.step);
    w.u64(st.epoch);
    w.f64(st.lr);
    w.str(st.dropout_rng.serialize());
    detail::write_network(w, st.net);
    w.u32(st.has_feedback ? 1 : 0);
    if (st.has_feedback) {
        w.u32(std::uint32_t(st.feedback.mode));
        w.u64(st.feedback.refresh_every);
        w.u64(st.feedback.last_refresh_step);
        w.u32(st.feedback.snapshot ? 1 : 0);
        if (st.feedback.snapshot) detail::write_network(w, *st.feedback.snapshot);
        w.u32(st.feedback.fmat ? 1 : 0);
        if (st.feedback.fmat) detail::write_matrix(w, *st.feedback.fmat);
    }

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint " + path);
    const char magic[4] = {'F', 'O', 'T', 'C'};
    out.write(magic, 4);
    std::uint32_t version = kCheckpointVersion, scalar = sizeof(S);
    std::uint64_t payload = st.arch_fingerprint.size(); // placeholder reuse below
    payload = w.bytes.size();
    std::uint32_t crc =
        ::crc32(0, reinterpret_cast<const Bytef *>(w.bytes.data()), uInt(w.bytes.size()));
    out.write(reinterpret_cast<const char *>(&version), 4);
    out.write(reinterpret_cast<const char *>(&scalar), 4);
    out.write(reinterpret_cast<const char *>(&payload), 8);
    out.write(reinterpret_cast<const char *>(&crc), 4);
    out.write(w.bytes.data(), w.bytes.size());
}

template <typename S>
TrainState<S> checkpoint_load(const std::string &path,
                              const std::string &expect_fingerprint = "") {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path);
    char magic[4];
    in.read(magic, 4);
    if (std::memcmp(magic, "FOTC", 4) != 0) throw DataError(path + ": not a checkpoint file");
    std::uint32_t version = 0, scalar = 0, crc = 0;
    std::uint64_t payload = 0;
    in.read(reinterpret_cast<char *>(&version), 4);
    in.read(reinterpret_cast<char *>(&scalar), 4);
    in.read(reinterpret_cast<char *>(&payload), 8);
    in.read(reinterpret_cast<char *>(&crc), 4);
    if (version != kCheckpointVersion)
        throw DataError(path + ": checkpoint version " + std::to_string(version) +
                        ", expected " + std::to_string(kCheckpointVersion));
    if (scalar != sizeof(S))
        throw DataError(path + ": checkpoint holds " + std::to_string(scalar) +
                        "-byte scalars, loader expects " + std::to_string(sizeof(S)));
    std::vector<char> bytes(payload);
    in.read(bytes.data(), payload);
    if (!in) throw DataError(path + ": truncated checkpoint");
    std::uint32_t actual =
        ::crc32(0, reinterpret_cast<const Bytef *>(bytes.data()), uInt(bytes.size()));
    if (actual != crc)
        throw DataError(path + ": checksum mismatch, file is corrupted");

    detail::ByteReader r(bytes);
    TrainState<S> st;
    st.arch_fingerprint = r.str();
    if (!expect_fingerprint.empty() && st.arch_fingerprint != expect_fingerprint)
        throw ShapeError(path + ": architecture mismatch, checkpoint built for [" +
                         st.arch_fingerprint + "], run expects [" + expect_fingerprint + "]");
    st.step = r.u64();
    st.epoch = r.u64();
    st.lr = r.f64();
    st.dropout_rng.deserialize(r.str());
    st.net = detail::read_network<S>(r);
    st.has_feedback = r.u32() != 0;
    if (st.has_feedback) {
        st.feedback.mode = FeedbackMode(r.u32());
        st.feedback.refresh_every = r.u64();
        st.feedback.last_refresh_step = r.u64();
        if (r.u32()) st.feedback.snapshot = detail::read_network<S>(r);
        if (r.u32()) st.feedback.fmat = detail::read_matrix<S>(r);
    }
    return st;
}

} // namespace foton
