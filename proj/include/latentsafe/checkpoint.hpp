#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "latentsafe/tensor.hpp"

namespace latentsafe {

static_assert(std::endian::native == std::endian::little,
              "array store writes little-endian blobs via raw memory");

// Named arrays serialized as a text manifest ("name dtype dims...") plus a
// flat little-endian blob holding the values in manifest order.
class ArrayStore {
public:
    enum class Dtype { f64, f32, u64 };

    struct Entry {
        std::string name;
        Dtype dtype;
        Shape shape;
        std::vector<double> f64;
        std::vector<float> f32;
        std::vector<uint64_t> u64;
    };

    bool has(const std::string& name) const { return index_.count(name) != 0; }
    size_t size() const { return entries_.size(); }
    const std::vector<Entry>& entries() const { return entries_; }

    void put_f64(const std::string& name, Shape shape, std::vector<double> v) {
        const int64_t n = static_cast<int64_t>(v.size());
        check_and_insert(Entry{name, Dtype::f64, std::move(shape), std::move(v), {}, {}}, n);
    }
    void put_f32(const std::string& name, Shape shape, std::vector<float> v) {
        const int64_t n = static_cast<int64_t>(v.size());
        check_and_insert(Entry{name, Dtype::f32, std::move(shape), {}, std::move(v), {}}, n);
    }
    void put_u64(const std::string& name, Shape shape, std::vector<uint64_t> v) {
        const int64_t n = static_cast<int64_t>(v.size());
        check_and_insert(Entry{name, Dtype::u64, std::move(shape), {}, {}, std::move(v)}, n);
    }
    void put_scalar(const std::string& name, double v) { put_f64(name, {1}, {v}); }
    void put_scalar_u64(const std::string& name, uint64_t v) { put_u64(name, {1}, {v}); }

    const Entry& entry(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("array store: no entry named '" + name + "'");
        return entries_[it->second];
    }
    const std::vector<double>& get_f64(const std::string& name) const {
        const Entry& e = entry(name);
        if (e.dtype != Dtype::f64) throw std::invalid_argument("array store: '" + name + "' is not f64");
        return e.f64;
    }
    const std::vector<float>& get_f32(const std::string& name) const {
        const Entry& e = entry(name);
        if (e.dtype != Dtype::f32) throw std::invalid_argument("array store: '" + name + "' is not f32");
        return e.f32;
    }
    const std::vector<uint64_t>& get_u64(const std::string& name) const {
        const Entry& e = entry(name);
        if (e.dtype != Dtype::u64) throw std::invalid_argument("array store: '" + name + "' is not u64");
        return e.u64;
    }
    double get_scalar(const std::string& name) const { return get_f64(name).at(0); }
    uint64_t get_scalar_u64(const std::string& name) const { return get_u64(name).at(0); }

    // <stem>.manifest + <stem>.bin
    void save(const std::string& stem) const {
        std::ofstream man(stem + ".manifest");
        if (!man) throw std::runtime_error("cannot write " + stem + ".manifest");
        for (const Entry& e : entries_) {
            man << e.name << ' ' << dtype_name(e.dtype);
            for (int d : e.shape) man << ' ' << d;
            man << '\n';
        }
        man.flush();
        if (!man) throw std::runtime_error("write failed: " + stem + ".manifest");

        std::ofstream bin(stem + ".bin", std::ios::binary);
        if (!bin) throw std::runtime_error("cannot write " + stem + ".bin");
        for (const Entry& e : entries_) {
            switch (e.dtype) {
                case Dtype::f64: write_raw(bin, e.f64.data(), e.f64.size() * sizeof(double)); break;
                case Dtype::f32: write_raw(bin, e.f32.data(), e.f32.size() * sizeof(float)); break;
                case Dtype::u64: write_raw(bin, e.u64.data(), e.u64.size() * sizeof(uint64_t)); break;
            }
        }
        bin.flush();
        if (!bin) throw std::runtime_error("write failed: " + stem + ".bin");
    }

    static ArrayStore load(const std::string& stem) {
        std::ifstream man(stem + ".manifest");
        if (!man) throw std::runtime_error("cannot read " + stem + ".manifest");
        ArrayStore store;
        std::string line;
        std::ifstream bin(stem + ".bin", std::ios::binary);
        if (!bin) throw std::runtime_error("cannot read " + stem + ".bin");
        while (std::getline(man, line)) {
            if (line.empty()) continue;
            std::istringstream ls(line);
            std::string name, dtype;
            ls >> name >> dtype;
            Shape shape;
            int d;
            while (ls >> d) shape.push_back(d);
            const int64_t n = shape_numel(shape);
            if (dtype == "f64") {
                std::vector<double> v(n);
                read_raw(bin, v.data(), v.size() * sizeof(double), stem);
                store.put_f64(name, shape, std::move(v));
            } else if (dtype == "f32") {
                std::vector<float> v(n);
                read_raw(bin, v.data(), v.size() * sizeof(float), stem);
                store.put_f32(name, shape, std::move(v));
            } else if (dtype == "u64") {
                std::vector<uint64_t> v(n);
                read_raw(bin, v.data(), v.size() * sizeof(uint64_t), stem);
                store.put_u64(name, shape, std::move(v));
            } else {
                throw std::runtime_error(stem + ".manifest: unknown dtype '" + dtype + "'");
            }
        }
        // blob must be fully consumed
        char extra;
        if (bin.read(&extra, 1))
            throw std::runtime_error(stem + ".bin: blob larger than manifest describes");
        return store;
    }

private:
    void check_and_insert(Entry e, int64_t n) {
        if (index_.count(e.name)) throw std::invalid_argument("array store: duplicate entry '" + e.name + "'");
        if (n != shape_numel(e.shape))
            throw std::invalid_argument("array store: '" + e.name + "' value count does not match shape");
        index_[e.name] = entries_.size();
        entries_.push_back(std::move(e));
    }
    static const char* dtype_name(Dtype d) {
        switch (d) {
            case Dtype::f64: return "f64";
            case Dtype::f32: return "f32";
            case Dtype::u64: return "u64";
        }
        return "?";
    }
    static void write_raw(std::ofstream& os, const void* p, size_t bytes) {
        os.write(static_cast<const char*>(p), static_cast<std::streamsize>(bytes));
    }
    static void read_raw(std::ifstream& is, void* p, size_t bytes, const std::string& stem) {
        is.read(static_cast<char*>(p), static_cast<std::streamsize>(bytes));
        if (static_cast<size_t>(is.gcount()) != bytes)
            throw std::runtime_error(stem + ".bin: truncated blob");
    }

    std::vector<Entry> entries_;
    std::map<std::string, size_t> index_;
};

}  // namespace latentsafe
