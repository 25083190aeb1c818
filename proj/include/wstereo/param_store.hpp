#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "wstereo/errors.hpp"
#include "wstereo/tensor.hpp"

namespace ws {

// Ordered name -> Tensor map for trainable weights. Names are dotted paths
// ("hpu.lstm.w_i"); iteration follows insertion order.
//
// Binary format (little-endian):
//   magic "WSTW", version u32, count u32, then per entry
//   {name_len u32, name bytes, ndim u32, dims u32*ndim, payload f32 row-major}.
template <class T>
class ParameterStore {
public:
    Tensor<T>& add(const std::string& name, Tensor<T> t) {
        if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
        t.set_requires_grad(true);
        index_[name] = names_.size();
        names_.push_back(name);
        tensors_.push_back(std::move(t));
        return tensors_.back();
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    Tensor<T>& get(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
        return tensors_[it->second];
    }
    const Tensor<T>& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
        return tensors_[it->second];
    }

    size_t size() const { return names_.size(); }
    const std::vector<std::string>& names() const { return names_; }
    Tensor<T>& at(size_t i) { return tensors_[i]; }
    const Tensor<T>& at(size_t i) const { return tensors_[i]; }

    long total_elements() const {
        long n = 0;
        for (const auto& t : tensors_) n += t.numel();
        return n;
    }

    void zero_grads() {
        for (auto& t : tensors_) t.zero_grad();
    }

    void save(const std::string& path) const {
        std::ofstream os(path + ".tmp", std::ios::binary);
        if (!os) throw FormatError("cannot open for write: " + path);
        os.write("WSTW", 4);
        write_u32(os, 1);
        write_u32(os, static_cast<std::uint32_t>(names_.size()));
        for (size_t i = 0; i < names_.size(); ++i) {
            const auto& name = names_[i];
            const auto& t = tensors_[i];
            write_u32(os, static_cast<std::uint32_t>(name.size()));
            os.write(name.data(), static_cast<std::streamsize>(name.size()));
            write_u32(os, static_cast<std::uint32_t>(t.ndim()));
            for (int d = 0; d < t.ndim(); ++d)
                write_u32(os, static_cast<std::uint32_t>(t.dim(d)));
            for (const T& v : t.data()) {
                const float f = static_cast<float>(v);
                std::uint32_t u;
                std::memcpy(&u, &f, 4);
                write_u32(os, u);
            }
        }
        os.close();
        if (!os) throw FormatError("write failed: " + path);
        std::remove(path.c_str());
        if (std::rename((path + ".tmp").c_str(), path.c_str()) != 0)
            throw FormatError("rename failed: " + path);
    }

    static ParameterStore load(const std::string& path) {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw FormatError("cannot open: " + path);
        char magic[4];
        is.read(magic, 4);
        if (!is || std::memcmp(magic, "WSTW", 4) != 0)
            throw FormatError("bad magic in weight file: " + path);
        const std::uint32_t version = read_u32(is, path);
        if (version != 1) throw FormatError("unsupported weight file version");
        const std::uint32_t count = read_u32(is, path);
        ParameterStore ps;
        for (std::uint32_t i = 0; i < count; ++i) {
            const std::uint32_t name_len = read_u32(is, path);
            std::string name(name_len, '\0');
            is.read(name.data(), name_len);
            const std::uint32_t ndim = read_u32(is, path);
            std::vector<int> shape(ndim);
            long n = 1;
            for (std::uint32_t d = 0; d < ndim; ++d) {
                shape[d] = static_cast<int>(read_u32(is, path));
                n *= shape[d];
            }
            std::vector<T> data(n);
            for (long j = 0; j < n; ++j) {
                const std::uint32_t u = read_u32(is, path);
                float f;
                std::memcpy(&f, &u, 4);
                data[j] = static_cast<T>(f);
            }
            if (!is) throw FormatError("truncated weight file: " + path);
            ps.add(name, Tensor<T>(std::move(shape), std::move(data)));
        }
        return ps;
    }

private:
    static void write_u32(std::ostream& os, std::uint32_t v) {
        const unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                                    static_cast<unsigned char>((v >> 8) & 0xFF),
                                    static_cast<unsigned char>((v >> 16) & 0xFF),
                                    static_cast<unsigned char>((v >> 24) & 0xFF)};
        os.write(reinterpret_cast<const char*>(b), 4);
    }
    static std::uint32_t read_u32(std::istream& is, const std::string& path) {
        unsigned char b[4];
        is.read(reinterpret_cast<char*>(b), 4);
        if (!is) throw FormatError("truncated weight file: " + path);
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) |
               (static_cast<std::uint32_t>(b[3]) << 24);
    }

    std::vector<std::string> names_;
    std::vector<Tensor<T>> tensors_;
    std::unordered_map<std::string, size_t> index_;
};

} // namespace ws
