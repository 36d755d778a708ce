#pragma once

// Minimal DEFLATE/zlib/gzip support: a full RFC 1951 inflater (stored, fixed
// and dynamic Huffman blocks) plus a stored-block-only compressor. The
// compressor is used for PNG IDAT streams and optional .gz output; the
// inflater reads gzip-compressed IDX files and PNG images.

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace chroma {

inline uint32_t crc32(const uint8_t* data, size_t n, uint32_t crc = 0) {
    static const auto table = [] {
        std::vector<uint32_t> t(256);
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    crc = ~crc;
    for (size_t i = 0; i < n; ++i) crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
    return ~crc;
}

inline uint32_t adler32(const uint8_t* data, size_t n) {
    uint32_t a = 1, b = 0;
    for (size_t i = 0; i < n; ++i) {
        a = (a + data[i]) % 65521u;
        b = (b + a) % 65521u;
    }
    return (b << 16) | a;
}

namespace detail {

class BitReader {
public:
    BitReader(const uint8_t* data, size_t n) : data_(data), n_(n) {}

    uint32_t bits(int count) {
        uint32_t v = 0;
        for (int i = 0; i < count; ++i) v |= bit() << i;
        return v;
    }
    uint32_t bit() {
        if (pos_ >= n_) throw std::runtime_error("inflate: unexpected end of stream");
        uint32_t b = (data_[pos_] >> bitpos_) & 1u;
        if (++bitpos_ == 8) { bitpos_ = 0; ++pos_; }
        return b;
    }
    void align_byte() {
        if (bitpos_ != 0) { bitpos_ = 0; ++pos_; }
    }
    const uint8_t* byte_ptr() const { return data_ + pos_; }
    size_t remaining() const { return n_ - pos_; }
    void skip_bytes(size_t k) { pos_ += k; }

private:
    const uint8_t* data_;
    size_t n_;
    size_t pos_ = 0;
    int bitpos_ = 0;
};

// Canonical Huffman decoder built from code lengths.
struct Huffman {
    // first_code[len], first_sym[len], and symbols sorted by (len, sym)
    int max_len = 0;
    std::vector<int> count;       // codes per length
    std::vector<int> first_code;  // smallest code of each length
    std::vector<int> first_sym;   // index into symbols of that code
    std::vector<int> symbols;

    void build(const std::vector<int>& lengths) {
        max_len = 0;
        for (int l : lengths) max_len = std::max(max_len, l);
        count.assign(max_len + 1, 0);
        for (int l : lengths)
            if (l > 0) ++count[l];
        first_code.assign(max_len + 1, 0);
        first_sym.assign(max_len + 1, 0);
        int code = 0, sym_base = 0;
        for (int l = 1; l <= max_len; ++l) {
            code = (code + count[l - 1]) << 1;
            first_code[l] = code;
            first_sym[l] = sym_base;
            sym_base += count[l];
        }
        symbols.clear();
        for (int l = 1; l <= max_len; ++l)
            for (size_t s = 0; s < lengths.size(); ++s)
                if (lengths[s] == l) symbols.push_back(int(s));
    }

    int decode(BitReader& br) const {
        int code = 0;
        for (int l = 1; l <= max_len; ++l) {
            code = (code << 1) | int(br.bit());
            int idx = code - first_code[l];
            if (count[l] > 0 && idx >= 0 && idx < count[l]) return symbols[first_sym[l] + idx];
        }
        throw std::runtime_error("inflate: invalid Huffman code");
    }
};

inline const int kLenBase[29] = {3,  4,  5,  6,  7,  8,  9,  10, 11,  13,  15,  17,  19,  23, 27,
                                 31, 35, 43, 51, 59, 67, 83, 99, 115, 131, 163, 195, 227, 258};
inline const int kLenExtra[29] = {0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2,
                                  2, 3, 3, 3, 3, 4, 4, 4, 4, 5, 5, 5, 5, 0};
inline const int kDistBase[30] = {1,    2,    3,    4,    5,    7,    9,    13,   17,   25,
                                  33,   49,   65,   97,   129,  193,  257,  385,  513,  769,
                                  1025, 1537, 2049, 3073, 4097, 6145, 8193, 12289, 16385, 24577};
inline const int kDistExtra[30] = {0, 0, 0, 0, 1, 1, 2, 2,  3,  3,  4,  4,  5,  5,  6,
                                   6, 7, 7, 8, 8, 9, 9, 10, 10, 11, 11, 12, 12, 13, 13};

}  // namespace detail

// Raw DEFLATE stream -> bytes.
inline std::vector<uint8_t> inflate(const uint8_t* data, size_t n, size_t size_hint = 0) {
    detail::BitReader br(data, n);
    std::vector<uint8_t> out;
    out.reserve(size_hint ? size_hint : n * 4);

    bool final_block = false;
    while (!final_block) {
        final_block = br.bit() != 0;
        uint32_t btype = br.bits(2);
        if (btype == 0) {  // stored
            br.align_byte();
            if (br.remaining() < 4) throw std::runtime_error("inflate: truncated stored block");
            const uint8_t* p = br.byte_ptr();
            uint32_t len = p[0] | (uint32_t(p[1]) << 8);
            uint32_t nlen = p[2] | (uint32_t(p[3]) << 8);
            if ((len ^ 0xFFFFu) != nlen) throw std::runtime_error("inflate: stored block LEN/NLEN mismatch");
            br.skip_bytes(4);
            if (br.remaining() < len) throw std::runtime_error("inflate: truncated stored block data");
            out.insert(out.end(), br.byte_ptr(), br.byte_ptr() + len);
            br.skip_bytes(len);
            continue;
        }
        detail::Huffman lit, dist;
        if (btype == 1) {  // fixed codes
            std::vector<int> ll(288);
            for (int i = 0; i < 144; ++i) ll[i] = 8;
            for (int i = 144; i < 256; ++i) ll[i] = 9;
            for (int i = 256; i < 280; ++i) ll[i] = 7;
            for (int i = 280; i < 288; ++i) ll[i] = 8;
            lit.build(ll);
            dist.build(std::vector<int>(30, 5));
        } else if (btype == 2) {  // dynamic codes
            int hlit = int(br.bits(5)) + 257;
            int hdist = int(br.bits(5)) + 1;
            int hclen = int(br.bits(4)) + 4;
            static const int order[19] = {16, 17, 18, 0, 8, 7, 9, 6, 10, 5, 11, 4, 12, 3, 13, 2, 14, 1, 15};
            std::vector<int> cl_lengths(19, 0);
            for (int i = 0; i < hclen; ++i) cl_lengths[order[i]] = int(br.bits(3));
            detail::Huffman cl;
            cl.build(cl_lengths);
            std::vector<int> lengths;
            lengths.reserve(hlit + hdist);
            while (int(lengths.size()) < hlit + hdist) {
                int sym = cl.decode(br);
                if (sym < 16) {
                    lengths.push_back(sym);
                } else if (sym == 16) {
                    if (lengths.empty()) throw std::runtime_error("inflate: repeat with no previous length");
                    int rep = int(br.bits(2)) + 3;
                    lengths.insert(lengths.end(), rep, lengths.back());
                } else if (sym == 17) {
                    lengths.insert(lengths.end(), int(br.bits(3)) + 3, 0);
                } else {
                    lengths.insert(lengths.end(), int(br.bits(7)) + 11, 0);
                }
            }
            if (int(lengths.size()) != hlit + hdist) throw std::runtime_error("inflate: bad code length run");
            lit.build(std::vector<int>(lengths.begin(), lengths.begin() + hlit));
            dist.build(std::vector<int>(lengths.begin() + hlit, lengths.end()));
        } else {
            throw std::runtime_error("inflate: reserved block type");
        }
        for (;;) {
            int sym = lit.decode(br);
            if (sym < 256) {
                out.push_back(uint8_t(sym));
            } else if (sym == 256) {
                break;
            } else {
                sym -= 257;
                if (sym >= 29) throw std::runtime_error("inflate: invalid length symbol");
                int len = detail::kLenBase[sym] + int(br.bits(detail::kLenExtra[sym]));
                int dsym = dist.decode(br);
                if (dsym >= 30) throw std::runtime_error("inflate: invalid distance symbol");
                size_t d = size_t(detail::kDistBase[dsym]) + br.bits(detail::kDistExtra[dsym]);
                if (d > out.size()) throw std::runtime_error("inflate: distance beyond output");
                size_t start = out.size() - d;
                for (int i = 0; i < len; ++i) out.push_back(out[start + i]);  // may overlap
            }
        }
    }
    return out;
}

// DEFLATE with stored (uncompressed) blocks only.
inline std::vector<uint8_t> deflate_store(const uint8_t* data, size_t n) {
    std::vector<uint8_t> out;
    out.reserve(n + n / 65535 * 5 + 6);
    size_t pos = 0;
    do {
        size_t chunk = std::min<size_t>(n - pos, 65535);
        bool last = pos + chunk == n;
        out.push_back(last ? 0x01 : 0x00);  // BFINAL + BTYPE=00, rest padding
        uint16_t len = uint16_t(chunk);
        out.push_back(len & 0xFF);
        out.push_back(len >> 8);
        out.push_back(~len & 0xFF);
        out.push_back((~len >> 8) & 0xFF);
        out.insert(out.end(), data + pos, data + pos + chunk);
        pos += chunk;
    } while (pos < n);
    return out;
}

inline std::vector<uint8_t> zlib_compress(const uint8_t* data, size_t n) {
    std::vector<uint8_t> out = {0x78, 0x01};
    auto body = deflate_store(data, n);
    out.insert(out.end(), body.begin(), body.end());
    uint32_t a = adler32(data, n);
    out.push_back((a >> 24) & 0xFF);
    out.push_back((a >> 16) & 0xFF);
    out.push_back((a >> 8) & 0xFF);
    out.push_back(a & 0xFF);
    return out;
}

inline std::vector<uint8_t> zlib_decompress(const uint8_t* data, size_t n, size_t size_hint = 0) {
    if (n < 6) throw std::runtime_error("zlib: stream too short");
    if ((data[0] & 0x0F) != 8) throw std::runtime_error("zlib: unsupported compression method");
    if (((uint32_t(data[0]) << 8) | data[1]) % 31 != 0) throw std::runtime_error("zlib: bad header check");
    auto out = inflate(data + 2, n - 6, size_hint);
    uint32_t stored = (uint32_t(data[n - 4]) << 24) | (uint32_t(data[n - 3]) << 16) |
                      (uint32_t(data[n - 2]) << 8) | data[n - 1];
    if (stored != adler32(out.data(), out.size())) throw std::runtime_error("zlib: adler32 mismatch");
    return out;
}

inline bool is_gzip(const uint8_t* data, size_t n) { return n >= 2 && data[0] == 0x1F && data[1] == 0x8B; }

inline std::vector<uint8_t> gzip_compress(const uint8_t* data, size_t n) {
    std::vector<uint8_t> out = {0x1F, 0x8B, 0x08, 0x00, 0, 0, 0, 0, 0x00, 0xFF};
    auto body = deflate_store(data, n);
    out.insert(out.end(), body.begin(), body.end());
    uint32_t c = crc32(data, n);
    uint32_t isize = uint32_t(n);
    for (uint32_t v : {c, isize})
        for (int i = 0; i < 4; ++i) out.push_back((v >> (8 * i)) & 0xFF);
    return out;
}

inline std::vector<uint8_t> gzip_decompress(const uint8_t* data, size_t n) {
    if (!is_gzip(data, n) || n < 18) throw std::runtime_error("gzip: bad magic or truncated stream");
    if (data[2] != 8) throw std::runtime_error("gzip: unsupported compression method");
    uint8_t flg = data[3];
    size_t pos = 10;
    if (flg & 0x04) {  // FEXTRA
        if (pos + 2 > n) throw std::runtime_error("gzip: truncated FEXTRA");
        size_t xlen = data[pos] | (size_t(data[pos + 1]) << 8);
        pos += 2 + xlen;
    }
    for (uint8_t skip_flag : {uint8_t(0x08), uint8_t(0x10)}) {  // FNAME, FCOMMENT
        if (flg & skip_flag) {
            while (pos < n && data[pos] != 0) ++pos;
            ++pos;
        }
    }
    if (flg & 0x02) pos += 2;  // FHCRC
    if (pos + 8 > n) throw std::runtime_error("gzip: truncated stream");
    auto out = inflate(data + pos, n - pos - 8);
    uint32_t stored_crc = 0, stored_size = 0;
    for (int i = 0; i < 4; ++i) {
        stored_crc |= uint32_t(data[n - 8 + i]) << (8 * i);
        stored_size |= uint32_t(data[n - 4 + i]) << (8 * i);
    }
    if (stored_size != uint32_t(out.size())) throw std::runtime_error("gzip: length mismatch");
    if (stored_crc != crc32(out.data(), out.size())) throw std::runtime_error("gzip: crc mismatch");
    return out;
}

}  // namespace chroma
