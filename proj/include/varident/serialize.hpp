#pragma once

// Explicit little-endian binary I/O for dataset and checkpoint files, plus
// atomic file replacement so a crashed writer never leaves a partial file
// behind under the final name.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace varident {

class io_error : public std::runtime_error {
public:
    explicit io_error(const std::string& what) : std::runtime_error(what) {}
};

class BinaryWriter {
public:
    explicit BinaryWriter(const std::filesystem::path& path)
        : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
        if (!out_) throw io_error("cannot open for writing: " + path.string());
    }

    void u8(std::uint8_t v) { put(&v, 1); }

    void u32(std::uint32_t v) {
        std::uint8_t b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
        put(b, 4);
    }

    void u64(std::uint64_t v) {
        std::uint8_t b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
        put(b, 8);
    }

    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

    void f64_array(const std::vector<double>& v) {
        u64(v.size());
        for (double x : v) f64(x);
    }

    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        put(s.data(), s.size());
    }

    // fixed-width tag, written verbatim
    void magic(const char* m, std::size_t n) { put(m, n); }

    void close() {
        out_.flush();
        if (!out_) throw io_error("write failure: " + path_.string());
        out_.close();
    }

private:
    std::filesystem::path path_;
    std::ofstream out_;

    void put(const void* p, std::size_t n) {
        out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
        if (!out_) throw io_error("write failure: " + path_.string());
    }
};

class BinaryReader {
public:
    explicit BinaryReader(const std::filesystem::path& path)
        : path_(path), in_(path, std::ios::binary) {
        if (!in_) throw io_error("cannot open for reading: " + path.string());
    }

    std::uint8_t u8() {
        std::uint8_t v;
        get(&v, 1);
        return v;
    }

    std::uint32_t u32() {
        std::uint8_t b[4];
        get(b, 4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
        return v;
    }

    std::uint64_t u64() {
        std::uint8_t b[8];
        get(b, 8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        return v;
    }

    double f64() { return std::bit_cast<double>(u64()); }

    std::vector<double> f64_array() {
        const std::uint64_t n = u64();
        std::vector<double> v(n);
        for (auto& x : v) x = f64();
        return v;
    }

    std::string str() {
        const std::uint32_t n = u32();
        std::string s(n, '\0');
        get(s.data(), n);
        return s;
    }

    void expect_magic(const char* m, std::size_t n) {
        std::string got(n, '\0');
        get(got.data(), n);
        if (std::memcmp(got.data(), m, n) != 0)
            throw io_error("bad file magic in " + path_.string());
    }

    void expect_end() {
        char c;
        in_.read(&c, 1);
        if (in_.gcount() != 0) throw io_error("trailing bytes in " + path_.string());
    }

private:
    std::filesystem::path path_;
    std::ifstream in_;

    void get(void* p, std::size_t n) {
        in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (in_.gcount() != static_cast<std::streamsize>(n))
            throw io_error("truncated file: " + path_.string());
    }
};

// write via a temp file in the same directory, then rename into place
template <typename Fill>
void write_file_atomic(const std::filesystem::path& path, Fill&& fill) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        BinaryWriter w(tmp);
        fill(w);
        w.close();
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp);
        throw io_error("cannot move " + tmp.string() + " into place: " + ec.message());
    }
}

inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw io_error("cannot open for writing: " + tmp.string());
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        out.flush();
        if (!out) throw io_error("write failure: " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp);
        throw io_error("cannot move " + tmp.string() + " into place: " + ec.message());
    }
}

} // namespace varident
