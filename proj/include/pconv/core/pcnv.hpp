#pragma once

// PCNV tensor container.
//
//   "PCNV" | u32 version | u32 entry count
//   per entry: u32 name length | UTF-8 name | u8 rank | rank x u32 dims | f32 payload
//
// All integers and floats are little-endian regardless of host byte order.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "pconv/core/tensor.hpp"

namespace pconv {

struct PcnvEntry {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> values;

    std::size_t element_count() const
    {
        std::size_t n = 1;
        for (auto d : dims) {
            n *= d;
        }
        return n;
    }
};

class PcnvArchive {
public:
    static constexpr std::uint32_t version = 1;

    const std::vector<PcnvEntry>& entries() const noexcept { return entries_; }

    void add(std::string name, std::vector<std::uint32_t> dims, std::vector<float> values)
    {
        if (find(name) != nullptr) {
            throw ArgumentError("pcnv: duplicate entry '" + name + "'");
        }
        if (dims.size() > 255) {
            throw ArgumentError("pcnv: rank exceeds 255 for '" + name + "'");
        }
        PcnvEntry e{std::move(name), std::move(dims), std::move(values)};
        if (e.element_count() != e.values.size()) {
            throw DimensionError("pcnv: entry '" + e.name + "' payload does not match its dims");
        }
        entries_.push_back(std::move(e));
    }

    template <std::floating_point T>
    void add_tensor(std::string name, const Tensor4<T>& t)
    {
        const Shape s = t.shape();
        std::vector<float> v(t.size());
        std::transform(t.values().begin(), t.values().end(), v.begin(), [](T x) { return static_cast<float>(x); });
        add(std::move(name),
            {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c), static_cast<std::uint32_t>(s.h),
             static_cast<std::uint32_t>(s.w)},
            std::move(v));
    }

    template <std::floating_point T>
    void add_vector(std::string name, const std::vector<T>& values)
    {
        std::vector<float> v(values.begin(), values.end());
        add(std::move(name), {static_cast<std::uint32_t>(values.size())}, std::move(v));
    }

    const PcnvEntry* find(const std::string& name) const
    {
        auto it = std::find_if(entries_.begin(), entries_.end(), [&](const PcnvEntry& e) { return e.name == name; });
        return it == entries_.end() ? nullptr : &*it;
    }

    const PcnvEntry& at(const std::string& name) const
    {
        const PcnvEntry* e = find(name);
        if (e == nullptr) {
            throw LoadError("pcnv: missing entry '" + name + "'");
        }
        return *e;
    }

    template <std::floating_point T>
    Tensor4<T> tensor(const std::string& name) const
    {
        const PcnvEntry& e = at(name);
        if (e.dims.size() != 4) {
            throw LoadError("pcnv: entry '" + name + "' has rank " + std::to_string(e.dims.size()) + ", expected 4");
        }
        std::vector<T> v(e.values.begin(), e.values.end());
        return Tensor4<T>::from_external({e.dims[0], e.dims[1], e.dims[2], e.dims[3]}, std::move(v));
    }

    template <std::floating_point T>
    std::vector<T> vector(const std::string& name) const
    {
        const PcnvEntry& e = at(name);
        if (e.dims.size() != 1) {
            throw LoadError("pcnv: entry '" + name + "' has rank " + std::to_string(e.dims.size()) + ", expected 1");
        }
        return std::vector<T>(e.values.begin(), e.values.end());
    }

    void write(std::ostream& os) const
    {
        os.write("PCNV", 4);
        put_u32(os, version);
        put_u32(os, static_cast<std::uint32_t>(entries_.size()));
        for (const auto& e : entries_) {
            put_u32(os, static_cast<std::uint32_t>(e.name.size()));
            os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
            const auto rank = static_cast<std::uint8_t>(e.dims.size());
            os.put(static_cast<char>(rank));
            for (auto d : e.dims) {
                put_u32(os, d);
            }
            for (float v : e.values) {
                put_u32(os, std::bit_cast<std::uint32_t>(v));
            }
        }
        if (!os) {
            throw LoadError("pcnv: write failed");
        }
    }

    static PcnvArchive read(std::istream& is)
    {
        std::array<char, 4> magic{};
        is.read(magic.data(), 4);
        if (!is || std::memcmp(magic.data(), "PCNV", 4) != 0) {
            throw LoadError("pcnv: bad magic");
        }
        const std::uint32_t ver = get_u32(is);
        if (ver != version) {
            throw LoadError("pcnv: unsupported version " + std::to_string(ver));
        }
        const std::uint32_t count = get_u32(is);
        PcnvArchive a;
        for (std::uint32_t i = 0; i < count; ++i) {
            const std::uint32_t len = get_u32(is);
            std::string name(len, '\0');
            is.read(name.data(), len);
            const int rank = is.get();
            if (!is || rank == std::char_traits<char>::eof()) {
                throw LoadError("pcnv: truncated entry header");
            }
            std::vector<std::uint32_t> dims(static_cast<std::size_t>(rank));
            for (auto& d : dims) {
                d = get_u32(is);
            }
            PcnvEntry e{std::move(name), std::move(dims), {}};
            e.values.resize(e.element_count());
            for (auto& v : e.values) {
                v = std::bit_cast<float>(get_u32(is));
            }
            a.add(std::move(e.name), std::move(e.dims), std::move(e.values));
        }
        return a;
    }

    void save(const std::filesystem::path& path) const
    {
        std::ofstream os(path, std::ios::binary);
        if (!os) {
            throw LoadError("pcnv: cannot open '" + path.string() + "' for writing");
        }
        write(os);
    }

    static PcnvArchive load(const std::filesystem::path& path)
    {
        std::ifstream is(path, std::ios::binary);
        if (!is) {
            throw LoadError("pcnv: cannot open '" + path.string() + "'");
        }
        return read(is);
    }

    std::string bytes() const
    {
        std::ostringstream os(std::ios::binary);
        write(os);
        return os.str();
    }

private:
    static void put_u32(std::ostream& os, std::uint32_t v)
    {
        const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                                    static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
        os.write(b.data(), 4);
    }

    static std::uint32_t get_u32(std::istream& is)
    {
        std::array<unsigned char, 4> b{};
        is.read(reinterpret_cast<char*>(b.data()), 4);
        if (!is) {
            throw LoadError("pcnv: unexpected end of file");
        }
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    }

    std::vector<PcnvEntry> entries_;
};

} // namespace pconv
