#pragma once

// Little-endian binary helpers shared by the file formats.

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "msfner/error.hpp"

namespace msfner::detail {

class BinaryReader {
public:
    BinaryReader(const std::string& path, const char* what) : what_(what) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw DataError(std::string("cannot open ") + what + " file '" + path + "'");
        buf_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }

    bool at_end() const noexcept { return pos_ == buf_.size(); }
    std::size_t remaining() const noexcept { return buf_.size() - pos_; }

    void expect_magic(const char magic[4]) {
        const std::string got = bytes(4);
        if (std::memcmp(got.data(), magic, 4) != 0) {
            throw FormatError(FormatError::Kind::BadMagic,
                              std::string(what_) + ": bad magic, expected \"" +
                                  std::string(magic, 4) + "\"");
        }
    }

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(byte(pos_ + i)) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::uint8_t u8() {
        need(1);
        return byte(pos_++);
    }

    float f32() { return std::bit_cast<float>(u32()); }

    double f64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(byte(pos_ + i)) << (8 * i);
        pos_ += 8;
        return std::bit_cast<double>(v);
    }

    std::string bytes(std::size_t n) {
        need(n);
        std::string s(buf_.data() + pos_, n);
        pos_ += n;
        return s;
    }

    std::string str() { return bytes(u32()); }

    void need(std::size_t n) const {
        if (buf_.size() - pos_ < n) {
            throw FormatError(FormatError::Kind::Truncated,
                              std::string(what_) + ": truncated at byte " + std::to_string(pos_));
        }
    }

private:
    std::uint8_t byte(std::size_t i) const { return static_cast<std::uint8_t>(buf_[i]); }

    const char* what_;
    std::vector<char> buf_;
    std::size_t pos_ = 0;
};

class BinaryWriter {
public:
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) {
        const auto bits = std::bit_cast<std::uint64_t>(v);
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
    }
    void raw(const std::string& s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        raw(s);
    }

    /// Writes to a temporary sibling then renames, so readers never see a
    /// half-written file.
    void save(const std::string& path) const {
        const std::string tmp = path + ".tmp";
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            if (!out) throw DataError("cannot write '" + path + "'");
            out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
            if (!out) throw DataError("write failed for '" + path + "'");
        }
        if (std::rename(tmp.c_str(), path.c_str()) != 0) {
            throw DataError("cannot rename '" + tmp + "' to '" + path + "'");
        }
    }

    const std::vector<char>& buffer() const noexcept { return buf_; }

private:
    std::vector<char> buf_;
};

}  // namespace msfner::detail
