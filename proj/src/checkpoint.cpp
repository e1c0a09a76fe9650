#include "pdet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace pdet {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

void ByteWriter::u32(std::uint32_t v) { raw(&v, sizeof v); }
void ByteWriter::u64(std::uint64_t v) { raw(&v, sizeof v); }
void ByteWriter::i64(std::int64_t v) { raw(&v, sizeof v); }
void ByteWriter::f64(double v) { raw(&v, sizeof v); }
void ByteWriter::raw(const void* data, std::size_t n) {
    buf_.append(static_cast<const char*>(data), n);
}

void ByteReader::take(void* dst, std::size_t n) {
    if (pos_ + n > buf_.size()) throw std::runtime_error("checkpoint: truncated data");
    std::memcpy(dst, buf_.data() + pos_, n);
    pos_ += n;
}
std::uint32_t ByteReader::u32() { std::uint32_t v; take(&v, sizeof v); return v; }
std::uint64_t ByteReader::u64() { std::uint64_t v; take(&v, sizeof v); return v; }
std::int64_t ByteReader::i64() { std::int64_t v; take(&v, sizeof v); return v; }
double ByteReader::f64() { double v; take(&v, sizeof v); return v; }

void write_tensor(ByteWriter& w, const Tensor& t) {
    w.u64(t.shape.size());
    for (std::size_t d : t.shape) w.u64(d);
    w.raw(t.data.data(), t.data.size() * sizeof(double));
}

Tensor read_tensor(ByteReader& r) {
    const std::uint64_t rank = r.u64();
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = r.u64();
    Tensor t = Tensor::zeros(shape);
    for (double& v : t.data) v = r.f64();
    return t;
}

namespace {

void write_vec(ByteWriter& w, const std::vector<double>& v) {
    w.u64(v.size());
    w.raw(v.data(), v.size() * sizeof(double));
}

std::vector<double> read_vec(ByteReader& r) {
    std::vector<double> v(r.u64());
    for (double& x : v) x = r.f64();
    return v;
}

void write_backbone(ByteWriter& w, const FrozenBackbone& b) {
    w.i64(b.image_size);
    w.i64(b.patch_size);
    w.u64(b.feature_dim);
    write_tensor(w, b.projection);
    write_tensor(w, b.pos_offset);
    write_vec(w, b.ranker);
}

FrozenBackbone read_backbone(ByteReader& r) {
    FrozenBackbone b;
    b.image_size = static_cast<int>(r.i64());
    b.patch_size = static_cast<int>(r.i64());
    b.feature_dim = r.u64();
    b.projection = read_tensor(r);
    b.pos_offset = read_tensor(r);
    b.ranker = read_vec(r);
    return b;
}

void write_decoder(ByteWriter& w, const DecoderLayer& d) {
    w.u64(d.feature_dim);
    w.u64(d.heads);
    w.u64(d.head_dim);
    w.u64(d.num_queries);
    w.u64(d.num_classes);
    write_tensor(w, d.w_q);
    write_tensor(w, d.w_k);
    write_tensor(w, d.w_v);
    write_tensor(w, d.w_o);
    write_tensor(w, d.object_queries);
    write_tensor(w, d.cls_w);
    write_vec(w, d.cls_b);
    write_tensor(w, d.box_w);
    write_vec(w, d.box_b);
}

DecoderLayer read_decoder(ByteReader& r) {
    DecoderLayer d;
    d.feature_dim = r.u64();
    d.heads = r.u64();
    d.head_dim = r.u64();
    d.num_queries = r.u64();
    d.num_classes = r.u64();
    d.w_q = read_tensor(r);
    d.w_k = read_tensor(r);
    d.w_v = read_tensor(r);
    d.w_o = read_tensor(r);
    d.object_queries = read_tensor(r);
    d.cls_w = read_tensor(r);
    d.cls_b = read_vec(r);
    d.box_w = read_tensor(r);
    d.box_b = read_vec(r);
    return d;
}

void write_entry(ByteWriter& w, const PoolEntry& e) {
    write_tensor(w, e.prompt);
    write_vec(w, e.key);
    write_vec(w, e.adapter);
}

PoolEntry read_entry(ByteReader& r) {
    PoolEntry e;
    e.prompt = read_tensor(r);
    e.key = read_vec(r);
    e.adapter = read_vec(r);
    return e;
}

void write_shared(ByteWriter& w, const SharedPool& p) {
    w.u64(p.prompt_len);
    w.u64(p.feature_dim);
    w.u64(p.entries.size());
    for (const auto& e : p.entries) write_entry(w, e);
}

SharedPool read_shared(ByteReader& r) {
    SharedPool p;
    p.prompt_len = r.u64();
    p.feature_dim = r.u64();
    const std::uint64_t n = r.u64();
    p.entries.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) p.entries.push_back(read_entry(r));
    return p;
}

// Slab bytes cover the learned content only (task id and entries). The
// trainable flag legitimately flips when the next task grows the pool, so it
// lives at the pool level; this keeps "old slab bytes unchanged" a meaningful
// freeze check.
void write_slab(ByteWriter& w, const PrivateSlab& s) {
    w.i64(s.task_id);
    w.u64(s.entries.size());
    for (const auto& e : s.entries) write_entry(w, e);
}

PrivateSlab read_slab(ByteReader& r) {
    PrivateSlab s;
    s.task_id = static_cast<int>(r.i64());
    const std::uint64_t n = r.u64();
    s.entries.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) s.entries.push_back(read_entry(r));
    return s;
}

void write_private(ByteWriter& w, const PrivatePool& p) {
    w.u64(p.prompt_len);
    w.u64(p.feature_dim);
    w.u64(p.slabs.size());
    for (const auto& s : p.slabs) {
        w.u64(s.trainable ? 1 : 0);
        write_slab(w, s);
    }
}

PrivatePool read_private(ByteReader& r) {
    PrivatePool p;
    p.prompt_len = r.u64();
    p.feature_dim = r.u64();
    const std::uint64_t n = r.u64();
    p.slabs.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        const bool trainable = r.u64() != 0;
        PrivateSlab s = read_slab(r);
        s.trainable = trainable;
        p.slabs.push_back(std::move(s));
    }
    return p;
}

void write_model(ByteWriter& w, const Model& m) {
    write_backbone(w, m.backbone);
    write_decoder(w, m.decoder);
    write_shared(w, m.shared);
    write_private(w, m.priv);
}

Model read_model(ByteReader& r) {
    Model m;
    m.backbone = read_backbone(r);
    m.decoder = read_decoder(r);
    m.shared = read_shared(r);
    m.priv = read_private(r);
    return m;
}

void write_prototype(ByteWriter& w, const ClassPrototype& c) {
    write_vec(w, c.prototype);
    w.u64(c.features.size());
    for (const auto& f : c.features) write_vec(w, f);
    w.u64(c.frozen ? 1 : 0);
    w.u64(c.seen);
}

ClassPrototype read_prototype(ByteReader& r) {
    ClassPrototype c;
    c.prototype = read_vec(r);
    const std::uint64_t n = r.u64();
    c.features.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) c.features.push_back(read_vec(r));
    c.frozen = r.u64() != 0;
    c.seen = r.u64();
    return c;
}

void write_bank(ByteWriter& w, const PrototypeBank& b) {
    w.u64(b.feature_dim);
    w.u64(b.capacity);
    w.u64(b.classes.size());
    for (const auto& [cls, proto] : b.classes) {
        w.i64(cls);
        write_prototype(w, proto);
    }
}

PrototypeBank read_bank(ByteReader& r) {
    PrototypeBank b;
    b.feature_dim = r.u64();
    b.capacity = r.u64();
    const std::uint64_t n = r.u64();
    for (std::uint64_t i = 0; i < n; ++i) {
        const int cls = static_cast<int>(r.i64());
        b.classes[cls] = read_prototype(r);
    }
    return b;
}

template <typename T, typename Fn>
std::string to_bytes(const T& value, Fn&& writer) {
    ByteWriter w;
    writer(w, value);
    return w.bytes();
}

}  // namespace

std::string serialize_backbone(const FrozenBackbone& b) {
    return to_bytes(b, [](ByteWriter& w, const FrozenBackbone& x) { write_backbone(w, x); });
}
std::string serialize_decoder(const DecoderLayer& d) {
    return to_bytes(d, [](ByteWriter& w, const DecoderLayer& x) { write_decoder(w, x); });
}
std::string serialize_shared(const SharedPool& p) {
    return to_bytes(p, [](ByteWriter& w, const SharedPool& x) { write_shared(w, x); });
}
std::string serialize_slab(const PrivateSlab& s) {
    return to_bytes(s, [](ByteWriter& w, const PrivateSlab& x) { write_slab(w, x); });
}
std::string serialize_private(const PrivatePool& p) {
    return to_bytes(p, [](ByteWriter& w, const PrivatePool& x) { write_private(w, x); });
}
std::string serialize_model(const Model& m) {
    return to_bytes(m, [](ByteWriter& w, const Model& x) { write_model(w, x); });
}
std::string serialize_prototype(const ClassPrototype& c) {
    return to_bytes(c, [](ByteWriter& w, const ClassPrototype& x) { write_prototype(w, x); });
}
std::string serialize_bank(const PrototypeBank& b) {
    return to_bytes(b, [](ByteWriter& w, const PrototypeBank& x) { write_bank(w, x); });
}

FrozenBackbone deserialize_backbone(const std::string& bytes) {
    ByteReader r(bytes);
    return read_backbone(r);
}
DecoderLayer deserialize_decoder(const std::string& bytes) {
    ByteReader r(bytes);
    return read_decoder(r);
}
SharedPool deserialize_shared(const std::string& bytes) {
    ByteReader r(bytes);
    return read_shared(r);
}
PrivatePool deserialize_private(const std::string& bytes) {
    ByteReader r(bytes);
    return read_private(r);
}
Model deserialize_model(const std::string& bytes) {
    ByteReader r(bytes);
    return read_model(r);
}
PrototypeBank deserialize_bank(const std::string& bytes) {
    ByteReader r(bytes);
    return read_bank(r);
}

namespace {
constexpr std::uint32_t kMagic = 0x4B434450;  // "PDCK"
constexpr std::uint32_t kVersion = 1;
}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& cp) {
    ByteWriter w;
    w.u32(kMagic);
    w.u32(kVersion);
    write_model(w, cp.model);
    write_bank(w, cp.bank);
    w.i64(cp.next_task);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
    ByteReader r(bytes);
    if (r.u32() != kMagic) throw std::runtime_error("load_checkpoint: bad magic");
    if (r.u32() != kVersion) throw std::runtime_error("load_checkpoint: unsupported version");
    Checkpoint cp;
    cp.model = read_model(r);
    cp.bank = read_bank(r);
    cp.next_task = r.i64();
    if (!r.done()) throw std::runtime_error("load_checkpoint: trailing bytes");
    return cp;
}

}  // namespace pdet
