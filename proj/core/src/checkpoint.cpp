#include "spcl/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <type_traits>

namespace spcl {

namespace {

constexpr char kMagic[4] = {'S', 'P', 'C', 'K'};
constexpr uint32_t kVersion = 1;

// explicit little-endian encoding, independent of host byte order
template <typename T>
void write_le(std::string& out, T value) {
    using U = std::make_unsigned_t<std::conditional_t<std::is_floating_point_v<T>,
        std::conditional_t<sizeof(T) == 4, uint32_t, uint64_t>, T>>;
    U bits;
    std::memcpy(&bits, &value, sizeof(T));
    for (size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

template <typename T>
T read_le(const uint8_t* p) {
    using U = std::make_unsigned_t<std::conditional_t<std::is_floating_point_v<T>,
        std::conditional_t<sizeof(T) == 4, uint32_t, uint64_t>, T>>;
    U bits = 0;
    for (size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<U>(p[i]) << (8 * i);
    T value;
    std::memcpy(&value, &bits, sizeof(T));
    return value;
}

template <typename T>
std::vector<uint8_t> to_le_bytes(const T* data, int64_t count) {
    std::string tmp;
    tmp.reserve(static_cast<size_t>(count) * sizeof(T));
    for (int64_t i = 0; i < count; ++i) write_le(tmp, data[i]);
    return std::vector<uint8_t>(tmp.begin(), tmp.end());
}

template <typename T>
std::vector<T> from_le_bytes(const std::vector<uint8_t>& bytes) {
    std::vector<T> out(bytes.size() / sizeof(T));
    for (size_t i = 0; i < out.size(); ++i) out[i] = read_le<T>(bytes.data() + i * sizeof(T));
    return out;
}

}  // namespace

const NamedArray& ArrayStore::raw(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::runtime_error("checkpoint: missing array '" + name + "'");
    return it->second;
}

void ArrayStore::put(const std::string& name, DType dtype, std::vector<int64_t> shape,
                     const void* data) {
    NamedArray a;
    a.dtype = dtype;
    a.shape = std::move(shape);
    const int64_t n = a.numel();
    switch (dtype) {
        case DType::F32: a.bytes = to_le_bytes(static_cast<const float*>(data), n); break;
        case DType::F64: a.bytes = to_le_bytes(static_cast<const double*>(data), n); break;
        case DType::U16: a.bytes = to_le_bytes(static_cast<const uint16_t*>(data), n); break;
        case DType::I64: a.bytes = to_le_bytes(static_cast<const int64_t*>(data), n); break;
        case DType::U8: {
            const uint8_t* p = static_cast<const uint8_t*>(data);
            a.bytes.assign(p, p + n);
            break;
        }
    }
    entries_[name] = std::move(a);
}

void ArrayStore::put_f32(const std::string& n, std::vector<int64_t> s, const float* d) { put(n, DType::F32, std::move(s), d); }
void ArrayStore::put_f64(const std::string& n, std::vector<int64_t> s, const double* d) { put(n, DType::F64, std::move(s), d); }
void ArrayStore::put_u16(const std::string& n, std::vector<int64_t> s, const uint16_t* d) { put(n, DType::U16, std::move(s), d); }
void ArrayStore::put_i64(const std::string& n, std::vector<int64_t> s, const int64_t* d) { put(n, DType::I64, std::move(s), d); }
void ArrayStore::put_u8(const std::string& n, std::vector<int64_t> s, const uint8_t* d) { put(n, DType::U8, std::move(s), d); }

namespace {
void check_dtype(const NamedArray& a, DType want, const std::string& name) {
    if (a.dtype != want)
        throw std::runtime_error("checkpoint: array '" + name + "' has unexpected dtype");
}
}  // namespace

std::vector<float> ArrayStore::get_f32(const std::string& name) const {
    const NamedArray& a = raw(name);
    check_dtype(a, DType::F32, name);
    return from_le_bytes<float>(a.bytes);
}
std::vector<double> ArrayStore::get_f64(const std::string& name) const {
    const NamedArray& a = raw(name);
    check_dtype(a, DType::F64, name);
    return from_le_bytes<double>(a.bytes);
}
std::vector<uint16_t> ArrayStore::get_u16(const std::string& name) const {
    const NamedArray& a = raw(name);
    check_dtype(a, DType::U16, name);
    return from_le_bytes<uint16_t>(a.bytes);
}
std::vector<int64_t> ArrayStore::get_i64(const std::string& name) const {
    const NamedArray& a = raw(name);
    check_dtype(a, DType::I64, name);
    return from_le_bytes<int64_t>(a.bytes);
}
std::vector<uint8_t> ArrayStore::get_u8(const std::string& name) const {
    const NamedArray& a = raw(name);
    check_dtype(a, DType::U8, name);
    return a.bytes;
}

std::vector<int64_t> ArrayStore::shape_of(const std::string& name) const { return raw(name).shape; }

int64_t ArrayStore::get_scalar_i64(const std::string& name) const {
    auto v = get_i64(name);
    if (v.size() != 1) throw std::runtime_error("checkpoint: '" + name + "' is not a scalar");
    return v[0];
}
double ArrayStore::get_scalar_f64(const std::string& name) const {
    auto v = get_f64(name);
    if (v.size() != 1) throw std::runtime_error("checkpoint: '" + name + "' is not a scalar");
    return v[0];
}

void ArrayStore::put_string(const std::string& name, const std::string& s) {
    put_u8(name, {static_cast<int64_t>(s.size())},
           reinterpret_cast<const uint8_t*>(s.data()));
}
std::string ArrayStore::get_string(const std::string& name) const {
    auto bytes = get_u8(name);
    return std::string(bytes.begin(), bytes.end());
}

void ArrayStore::save(const std::string& path) const {
    std::string buf;
    buf.append(kMagic, 4);
    write_le(buf, kVersion);
    write_le(buf, static_cast<uint64_t>(entries_.size()));
    for (const auto& [name, a] : entries_) {
        write_le(buf, static_cast<uint32_t>(name.size()));
        buf.append(name);
        buf.push_back(static_cast<char>(a.dtype));
        write_le(buf, static_cast<uint32_t>(a.shape.size()));
        for (int64_t d : a.shape) write_le(buf, d);
        buf.append(reinterpret_cast<const char*>(a.bytes.data()),
                   static_cast<size_t>(a.bytes.size()));
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

ArrayStore ArrayStore::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
    std::vector<uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    size_t pos = 0;
    auto need = [&](size_t n) {
        if (pos + n > buf.size()) throw std::runtime_error("checkpoint: truncated file '" + path + "'");
    };
    need(4);
    if (std::memcmp(buf.data(), kMagic, 4) != 0)
        throw std::runtime_error("checkpoint: bad magic in '" + path + "'");
    pos = 4;
    need(4);
    const uint32_t version = read_le<uint32_t>(buf.data() + pos);
    pos += 4;
    if (version != kVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    need(8);
    const uint64_t count = read_le<uint64_t>(buf.data() + pos);
    pos += 8;

    ArrayStore store;
    for (uint64_t e = 0; e < count; ++e) {
        need(4);
        const uint32_t name_len = read_le<uint32_t>(buf.data() + pos);
        pos += 4;
        need(name_len);
        std::string name(reinterpret_cast<const char*>(buf.data() + pos), name_len);
        pos += name_len;
        need(1);
        const uint8_t dtype_raw = buf[pos++];
        if (dtype_raw > static_cast<uint8_t>(DType::U8))
            throw std::runtime_error("checkpoint: bad dtype in '" + path + "'");
        NamedArray a;
        a.dtype = static_cast<DType>(dtype_raw);
        need(4);
        const uint32_t rank = read_le<uint32_t>(buf.data() + pos);
        pos += 4;
        a.shape.resize(rank);
        need(8 * rank);
        for (uint32_t r = 0; r < rank; ++r) {
            a.shape[r] = read_le<int64_t>(buf.data() + pos);
            pos += 8;
        }
        const size_t payload = static_cast<size_t>(a.numel()) * dtype_size(a.dtype);
        need(payload);
        a.bytes.assign(buf.begin() + static_cast<long>(pos), buf.begin() + static_cast<long>(pos + payload));
        pos += payload;
        store.entries_[name] = std::move(a);
    }
    return store;
}

}  // namespace spcl
