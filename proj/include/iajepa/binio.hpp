// Little-endian binary file helpers shared by the clip, checkpoint, and
// feature-bank formats. Read errors carry the byte offset of the failure.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace iajepa {

static_assert(std::endian::native == std::endian::little, "serialized formats assume a little-endian host");

struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

class ByteWriter {
public:
    void u32(uint32_t v) { raw(&v, sizeof(v)); }
    void f32(float v) { raw(&v, sizeof(v)); }
    void f64(double v) { raw(&v, sizeof(v)); }
    void bytes(const void* p, size_t n) { raw(p, n); }
    void str(const std::string& s) { raw(s.data(), s.size()); }

    template <typename T>
    void span(const T* p, size_t n) {
        raw(p, n * sizeof(T));
    }

    const std::vector<uint8_t>& buffer() const { return buf_; }

    void to_file(const std::string& path) const {
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot open for write: " + path);
        f.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
        if (!f) throw IoError("write failed: " + path);
    }

private:
    void raw(const void* p, size_t n) {
        const uint8_t* b = static_cast<const uint8_t*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    std::vector<uint8_t> buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::vector<uint8_t> data, std::string origin = "")
        : data_(std::move(data)), origin_(std::move(origin)) {}

    static ByteReader from_file(const std::string& path) {
        std::ifstream f(path, std::ios::binary | std::ios::ate);
        if (!f) throw IoError("cannot open for read: " + path);
        std::streamsize n = f.tellg();
        f.seekg(0);
        std::vector<uint8_t> buf(static_cast<size_t>(n));
        f.read(reinterpret_cast<char*>(buf.data()), n);
        if (!f) throw IoError("read failed: " + path);
        return ByteReader(std::move(buf), path);
    }

    uint32_t u32() {
        uint32_t v;
        take(&v, sizeof(v));
        return v;
    }
    float f32() {
        float v;
        take(&v, sizeof(v));
        return v;
    }
    void bytes(void* p, size_t n) { take(p, n); }

    template <typename T>
    std::vector<T> span(size_t n) {
        std::vector<T> out(n);
        take(out.data(), n * sizeof(T));
        return out;
    }

    std::string str(size_t n) {
        std::string s(n, '\0');
        take(s.data(), n);
        return s;
    }

    // Fixed 4-byte magic check.
    void expect_magic(const char* magic) {
        size_t at = pos_;
        std::string got = str(4);
        if (got != magic)
            throw FormatError(where() + ": bad magic at byte " + std::to_string(at) + " (expected \"" + magic +
                              "\", got \"" + got + "\")");
    }

    size_t pos() const { return pos_; }
    size_t remaining() const { return data_.size() - pos_; }
    void expect_end() const {
        if (pos_ != data_.size())
            throw FormatError(where() + ": trailing bytes at offset " + std::to_string(pos_));
    }
    std::string where() const { return origin_.empty() ? "buffer" : origin_; }

private:
    void take(void* p, size_t n) {
        if (pos_ + n > data_.size())
            throw FormatError(where() + ": truncated at byte " + std::to_string(pos_) + " (need " +
                              std::to_string(n) + " more, have " + std::to_string(data_.size() - pos_) + ")");
        std::memcpy(p, data_.data() + pos_, n);
        pos_ += n;
    }
    std::vector<uint8_t> data_;
    std::string origin_;
    size_t pos_ = 0;
};

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for write: " + path);
    f << text;
    if (!f) throw IoError("write failed: " + path);
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for read: " + path);
    std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return s;
}

}  // namespace iajepa
