#pragma once

#include <cstdint>
#include <string>

#include "pdet/model.hpp"
#include "pdet/ppg.hpp"

namespace pdet {

// Byte-exact little-endian binary serialization. Doubles round-trip
// bit-identically; the freeze tests compare these strings directly.
class ByteWriter {
public:
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void i64(std::int64_t v);
    void f64(double v);
    void raw(const void* data, std::size_t n);
    const std::string& bytes() const { return buf_; }

private:
    std::string buf_;
};

class ByteReader {
public:
    explicit ByteReader(const std::string& bytes) : buf_(bytes) {}
    std::uint32_t u32();
    std::uint64_t u64();
    std::int64_t i64();
    double f64();
    bool done() const { return pos_ == buf_.size(); }

private:
    const std::string& buf_;
    std::size_t pos_ = 0;

    void take(void* dst, std::size_t n);
};

void write_tensor(ByteWriter& w, const Tensor& t);
Tensor read_tensor(ByteReader& r);

std::string serialize_backbone(const FrozenBackbone& b);
std::string serialize_decoder(const DecoderLayer& d);
std::string serialize_shared(const SharedPool& p);
std::string serialize_slab(const PrivateSlab& s);
std::string serialize_private(const PrivatePool& p);
std::string serialize_model(const Model& m);
std::string serialize_prototype(const ClassPrototype& c);
std::string serialize_bank(const PrototypeBank& b);

FrozenBackbone deserialize_backbone(const std::string& bytes);
DecoderLayer deserialize_decoder(const std::string& bytes);
SharedPool deserialize_shared(const std::string& bytes);
PrivatePool deserialize_private(const std::string& bytes);
Model deserialize_model(const std::string& bytes);
PrototypeBank deserialize_bank(const std::string& bytes);

// Versioned checkpoint file: model, prototype bank and the next task index.
struct Checkpoint {
    Model model;
    PrototypeBank bank;
    std::int64_t next_task = 0;
};

void save_checkpoint(const std::string& path, const Checkpoint& cp);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace pdet
