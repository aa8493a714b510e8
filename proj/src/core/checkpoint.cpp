#include <bit>
#include <cstring>

#include "prime/model.hpp"

namespace prime {
namespace {

constexpr char kMagic[4] = {'P', 'R', 'I', 'M'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kSegmentVersion = 1;

class Writer {
public:
    void bytes(const char* p, std::size_t n) { out_.append(p, n); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
    void matrix_data(const Matrix& m) {
        for (double v : m.data) f32(v);
    }
    void shaped(const Matrix& m) {
        u32(static_cast<std::uint32_t>(m.rows));
        u32(static_cast<std::uint32_t>(m.cols));
        matrix_data(m);
    }
    std::string take() { return std::move(out_); }

private:
    std::string out_;
};

class Reader {
public:
    explicit Reader(std::string_view in) : in_(in) {}
    void bytes(char* dst, std::size_t n) {
        need(n);
        std::memcpy(dst, in_.data() + pos_, n);
        pos_ += n;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    double f32() { return static_cast<double>(std::bit_cast<float>(u32())); }
    void matrix_data(Matrix& m) {
        for (double& v : m.data) v = f32();
    }
    Matrix shaped(std::size_t rows, std::size_t cols, const char* what) {
        const std::uint32_t r = u32(), c = u32();
        if (r != rows || c != cols)
            fail(ErrorKind::Data, std::string("checkpoint: unexpected shape for ") + what);
        Matrix m(r, c);
        matrix_data(m);
        return m;
    }
    void expect_tag(const char* tag) {
        char got[4];
        bytes(got, 4);
        if (std::memcmp(got, tag, 4) != 0)
            fail(ErrorKind::Data, std::string("checkpoint: missing segment ") + std::string(tag, 4));
        if (u32() != kSegmentVersion)
            fail(ErrorKind::Data, std::string("checkpoint: unsupported ") + std::string(tag, 4) +
                                      " segment version");
    }
    bool done() const { return pos_ == in_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > in_.size()) fail(ErrorKind::Data, "checkpoint: truncated file");
    }
    std::string_view in_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Model& model) {
    Writer w;
    const EncoderParams& e = model.encoder;
    w.bytes(kMagic, 4);
    w.u32(kVersion);
    w.u32(static_cast<std::uint32_t>(e.dim()));
    w.u32(static_cast<std::uint32_t>(e.vocab_size()));
    w.u32(static_cast<std::uint32_t>(e.max_seq_len));
    w.matrix_data(e.token_table);
    w.matrix_data(e.proj);
    w.matrix_data(e.proj_bias);

    const auto proto_tensors = model.proto.tensors();
    w.bytes("PNET", 4);
    w.u32(kSegmentVersion);
    w.f32(model.proto.dropout_rate);
    w.u32(static_cast<std::uint32_t>(model.proto.ffn_dim()));
    w.u32(static_cast<std::uint32_t>(proto_tensors.size()));
    for (const auto& t : proto_tensors) w.shaped(*t.value);

    w.bytes("CENT", 4);
    w.u32(kSegmentVersion);
    w.f32(model.centroids.alpha);
    w.shaped(model.centroids.centroids);
    for (std::uint32_t t : model.centroids.touched) w.u32(t);

    w.bytes("BANK", 4);
    w.u32(kSegmentVersion);
    w.shaped(model.bank.bank);

    w.bytes("ASGN", 4);
    w.u32(kSegmentVersion);
    w.u32(static_cast<std::uint32_t>(model.bank.assignment.size()));
    for (std::uint32_t a : model.bank.assignment) w.u32(a);
    return w.take();
}

Model deserialize_checkpoint(std::string_view bytes) {
    Reader r(bytes);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) fail(ErrorKind::Data, "checkpoint: bad magic");
    if (r.u32() != kVersion) fail(ErrorKind::Data, "checkpoint: unsupported version");
    EncoderConfig ec;
    ec.dim = r.u32();
    ec.vocab_size = r.u32();
    ec.max_seq_len = r.u32();
    Model m;
    m.encoder = EncoderParams::zeros(ec);
    r.matrix_data(m.encoder.token_table);
    r.matrix_data(m.encoder.proj);
    r.matrix_data(m.encoder.proj_bias);

    r.expect_tag("PNET");
    PrototypeNetConfig pc;
    pc.dim = ec.dim;
    pc.dropout = r.f32();
    pc.ffn_dim = r.u32();
    m.proto = PrototypeNetParams::zeros(pc);
    auto tensors = m.proto.tensors();
    if (r.u32() != tensors.size()) fail(ErrorKind::Data, "checkpoint: prototype tensor count mismatch");
    for (auto& t : tensors) *t.value = r.shaped(t.value->rows, t.value->cols, t.name.c_str());

    r.expect_tag("CENT");
    const double alpha = r.f32();
    const std::uint32_t labels = r.u32();
    if (r.u32() != ec.dim) fail(ErrorKind::Data, "checkpoint: centroid dimension mismatch");
    Matrix cent(labels, ec.dim);
    r.matrix_data(cent);
    m.centroids = CentroidStore(std::move(cent), alpha);
    for (auto& t : m.centroids.touched) t = r.u32();

    r.expect_tag("BANK");
    const std::uint32_t rows = r.u32();
    if (r.u32() != ec.dim) fail(ErrorKind::Data, "checkpoint: bank dimension mismatch");
    m.bank.bank = Matrix(rows, ec.dim);
    r.matrix_data(m.bank.bank);

    r.expect_tag("ASGN");
    if (r.u32() != labels) fail(ErrorKind::Data, "checkpoint: assignment length mismatch");
    m.bank.assignment.resize(labels);
    for (auto& a : m.bank.assignment) {
        a = r.u32();
        if (a >= rows) fail(ErrorKind::Data, "checkpoint: assignment out of range");
    }
    if (!r.done()) fail(ErrorKind::Data, "checkpoint: trailing bytes");
    return m;
}

void save_checkpoint(const Model& model, const std::string& path) {
    write_file_atomic(path, serialize_checkpoint(model));
}

Model load_checkpoint(const std::string& path) { return deserialize_checkpoint(read_file(path)); }

}  // namespace prime
