#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "spcl/tensor.hpp"

namespace spcl {

enum class DType : uint8_t { F32 = 0, F64 = 1, U16 = 2, I64 = 3, U8 = 4 };

inline size_t dtype_size(DType d) {
    switch (d) {
        case DType::F32: return 4;
        case DType::F64: return 8;
        case DType::U16: return 2;
        case DType::I64: return 8;
        case DType::U8: return 1;
    }
    throw std::logic_error("dtype_size: bad dtype");
}

struct NamedArray {
    DType dtype = DType::F32;
    std::vector<int64_t> shape;
    std::vector<uint8_t> bytes;  // little-endian payload

    int64_t numel() const {
        int64_t n = 1;
        for (int64_t d : shape) n *= d;
        return n;
    }
};

/// Flat container of named arrays with a versioned little-endian file format.
/// Round trips are bit-exact. Used for model checkpoints, optimizer state and
/// the persisted EMA stores.
class ArrayStore {
public:
    bool contains(const std::string& name) const { return entries_.count(name) != 0; }
    const NamedArray& raw(const std::string& name) const;
    size_t size() const { return entries_.size(); }

    void put_f32(const std::string& name, std::vector<int64_t> shape, const float* data);
    void put_f64(const std::string& name, std::vector<int64_t> shape, const double* data);
    void put_u16(const std::string& name, std::vector<int64_t> shape, const uint16_t* data);
    void put_i64(const std::string& name, std::vector<int64_t> shape, const int64_t* data);
    void put_u8(const std::string& name, std::vector<int64_t> shape, const uint8_t* data);

    std::vector<float> get_f32(const std::string& name) const;
    std::vector<double> get_f64(const std::string& name) const;
    std::vector<uint16_t> get_u16(const std::string& name) const;
    std::vector<int64_t> get_i64(const std::string& name) const;
    std::vector<uint8_t> get_u8(const std::string& name) const;
    std::vector<int64_t> shape_of(const std::string& name) const;

    void put_scalar_i64(const std::string& name, int64_t v) { put_i64(name, {1}, &v); }
    int64_t get_scalar_i64(const std::string& name) const;
    void put_scalar_f64(const std::string& name, double v) { put_f64(name, {1}, &v); }
    double get_scalar_f64(const std::string& name) const;
    void put_string(const std::string& name, const std::string& s);
    std::string get_string(const std::string& name) const;

    template <typename T>
    void put_tensor(const std::string& name, const Tensor<T>& t) {
        if constexpr (std::is_same_v<T, float>)
            put_f32(name, t.shape, t.v.data());
        else
            put_f64(name, t.shape, t.v.data());
    }
    template <typename T>
    Tensor<T> get_tensor(const std::string& name) const {
        Tensor<T> t;
        t.shape = shape_of(name);
        if constexpr (std::is_same_v<T, float>) {
            auto vals = get_f32(name);
            t.v.assign(vals.begin(), vals.end());
        } else {
            auto vals = get_f64(name);
            t.v.assign(vals.begin(), vals.end());
        }
        return t;
    }

    /// Tensor stored at whatever float width it was written with, read as T.
    template <typename T>
    Tensor<T> get_tensor_any_float(const std::string& name) const {
        const NamedArray& a = raw(name);
        if (a.dtype == DType::F32) return get_tensor<float>(name).template cast<T>();
        if (a.dtype == DType::F64) return get_tensor<double>(name).template cast<T>();
        throw std::runtime_error("array '" + name + "' is not a float tensor");
    }

    void save(const std::string& path) const;
    static ArrayStore load(const std::string& path);

    const std::map<std::string, NamedArray>& entries() const { return entries_; }

private:
    void put(const std::string& name, DType dtype, std::vector<int64_t> shape, const void* data);
    std::map<std::string, NamedArray> entries_;  // ordered: file bytes are deterministic
};

}  // namespace spcl
