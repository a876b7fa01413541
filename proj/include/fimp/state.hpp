#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "fimp/errors.hpp"
#include "fimp/tensor.hpp"

namespace fimp {

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

/// Named, ordered collection of parameter tensors. A ModelState over live
/// tensors is a *view* (the tensors are shared with the owning model); use
/// deep_copy() to get an independent snapshot. This is the unit of
/// communication: dispatch, upload, aggregation and checkpoints all move
/// ModelStates.
class ModelState {
public:
    struct Entry {
        std::string name;
        Tensor tensor;
    };

    void add(std::string name, Tensor tensor) {
        if (find(name) != nullptr)
            throw InconsistentStateError("ModelState: duplicate parameter name '" + name + "'");
        entries_.push_back({std::move(name), std::move(tensor)});
    }

    void append(const ModelState& other) {
        for (const auto& e : other.entries_) add(e.name, e.tensor);
    }

    const std::vector<Entry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

    Tensor* find(const std::string& name) {
        for (auto& e : entries_)
            if (e.name == name) return &e.tensor;
        return nullptr;
    }
    const Tensor* find(const std::string& name) const {
        return const_cast<ModelState*>(this)->find(name);
    }

    /// Total scalar parameter count.
    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += e.tensor.numel();
        return n;
    }

    ModelState deep_copy() const {
        ModelState out;
        for (const auto& e : entries_) out.add(e.name, e.tensor.clone());
        return out;
    }

    /// Copies values from `src` into the live tensors of this state.
    void load_values(const ModelState& src) {
        if (src.size() != size())
            throw InconsistentStateError("load_values: parameter count mismatch");
        for (std::size_t i = 0; i < entries_.size(); ++i) {
            const auto& s = src.entries_[i];
            auto& d = entries_[i];
            if (s.name != d.name || s.tensor.shape() != d.tensor.shape())
                throw InconsistentStateError("load_values: mismatch at parameter '" + d.name +
                                             "'");
            d.tensor.data() = s.tensor.data();
        }
    }

    void zero_grad() {
        for (auto& e : entries_) e.tensor.zero_grad();
    }

    bool all_finite() const {
        for (const auto& e : entries_)
            if (!e.tensor.all_finite()) return false;
        return true;
    }

    bool bitwise_equal(const ModelState& other) const {
        if (other.size() != size()) return false;
        for (std::size_t i = 0; i < entries_.size(); ++i) {
            if (entries_[i].name != other.entries_[i].name) return false;
            if (entries_[i].tensor.shape() != other.entries_[i].tensor.shape()) return false;
            const auto& a = entries_[i].tensor.data();
            const auto& b = other.entries_[i].tensor.data();
            if (std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) != 0) return false;
        }
        return true;
    }

    // ---- wire format ----------------------------------------------------
    // magic "FIMPMS1\n", u64 record count, then per record:
    //   u32 name length, name bytes, u32 ndim, u64 dims..., f64 data...
    // All integers and floats little-endian. Round-trips byte-exactly.

    static constexpr char kMagic[8] = {'F', 'I', 'M', 'P', 'M', 'S', '1', '\n'};

    std::vector<std::uint8_t> to_bytes() const {
        std::vector<std::uint8_t> buf;
        buf.reserve(serialized_size());
        auto put = [&buf](const void* p, std::size_t n) {
            const auto* b = static_cast<const std::uint8_t*>(p);
            buf.insert(buf.end(), b, b + n);
        };
        put(kMagic, sizeof(kMagic));
        std::uint64_t count = entries_.size();
        put(&count, 8);
        for (const auto& e : entries_) {
            std::uint32_t name_len = static_cast<std::uint32_t>(e.name.size());
            put(&name_len, 4);
            put(e.name.data(), e.name.size());
            std::uint32_t ndim = static_cast<std::uint32_t>(e.tensor.ndim());
            put(&ndim, 4);
            for (std::size_t d : e.tensor.shape()) {
                std::uint64_t dim = d;
                put(&dim, 8);
            }
            put(e.tensor.data().data(), e.tensor.numel() * sizeof(double));
        }
        return buf;
    }

    std::size_t serialized_size() const {
        std::size_t n = sizeof(kMagic) + 8;
        for (const auto& e : entries_)
            n += 4 + e.name.size() + 4 + 8 * e.tensor.ndim() + 8 * e.tensor.numel();
        return n;
    }

    /// Parses a serialized state; loaded tensors are marked as parameters.
    static ModelState from_bytes(const std::vector<std::uint8_t>& buf) {
        std::size_t pos = 0;
        auto need = [&](std::size_t n) {
            if (pos + n > buf.size())
                throw IoError("model state: truncated payload at byte " + std::to_string(pos));
        };
        auto get = [&](void* p, std::size_t n) {
            need(n);
            std::memcpy(p, buf.data() + pos, n);
            pos += n;
        };
        char magic[8];
        get(magic, 8);
        if (std::memcmp(magic, kMagic, 8) != 0)
            throw IoError("model state: bad magic bytes");
        std::uint64_t count = 0;
        get(&count, 8);
        ModelState out;
        for (std::uint64_t i = 0; i < count; ++i) {
            std::uint32_t name_len = 0;
            get(&name_len, 4);
            need(name_len);
            std::string name(reinterpret_cast<const char*>(buf.data() + pos), name_len);
            pos += name_len;
            std::uint32_t ndim = 0;
            get(&ndim, 4);
            if (ndim == 0 || ndim > 8) throw IoError("model state: bad rank for '" + name + "'");
            Shape shape(ndim);
            for (auto& d : shape) {
                std::uint64_t dim = 0;
                get(&dim, 8);
                d = static_cast<std::size_t>(dim);
            }
            std::size_t numel = shape_numel(shape);
            std::vector<double> data(numel);
            get(data.data(), numel * sizeof(double));
            Tensor t(shape, std::move(data));
            t.set_requires_grad(true);
            out.add(std::move(name), std::move(t));
        }
        if (pos != buf.size()) throw IoError("model state: trailing bytes after payload");
        return out;
    }

    void save(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw IoError("cannot open '" + path + "' for writing");
        auto bytes = to_bytes();
        f.write(reinterpret_cast<const char*>(bytes.data()),
                static_cast<std::streamsize>(bytes.size()));
        if (!f) throw IoError("write failed for '" + path + "'");
    }

    static ModelState load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw IoError("cannot open '" + path + "' for reading");
        std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                        std::istreambuf_iterator<char>());
        return from_bytes(bytes);
    }

private:
    std::vector<Entry> entries_;
};

/// Weighted sum of congruent states in the given order. Weights are applied
/// as passed; callers normalize. Summation order is exactly the order of
/// `states`, so a caller that fixes the order gets bitwise-reproducible
/// results.
inline ModelState weighted_sum(const std::vector<const ModelState*>& states,
                               const std::vector<double>& weights) {
    if (states.empty() || states.size() != weights.size())
        throw InconsistentStateError("weighted_sum: empty or mismatched inputs");
    ModelState out = states[0]->deep_copy();
    for (auto& e : out.entries())
        for (double& v : const_cast<Tensor&>(e.tensor).data()) v = 0.0;
    for (std::size_t s = 0; s < states.size(); ++s) {
        const auto& src = states[s]->entries();
        if (src.size() != out.entries().size())
            throw InconsistentStateError("weighted_sum: state " + std::to_string(s) +
                                         " has a different parameter set");
        for (std::size_t i = 0; i < src.size(); ++i) {
            const auto& se = src[i];
            auto& de = const_cast<ModelState::Entry&>(out.entries()[i]);
            if (se.name != de.name || se.tensor.shape() != de.tensor.shape())
                throw InconsistentStateError("weighted_sum: mismatch at '" + se.name + "'");
            auto& dst = de.tensor.data();
            const auto& s_data = se.tensor.data();
            for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += weights[s] * s_data[k];
        }
    }
    return out;
}

} // namespace fimp
