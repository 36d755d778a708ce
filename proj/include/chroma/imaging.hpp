#pragma once

// PNG rendering of image grids and partial-reconstruction panels. The
// encoder emits 8-bit grayscale or RGB PNGs with stored (uncompressed)
// DEFLATE blocks; the bundled decoder reads any 8-bit gray/RGB PNG back for
// round-trip checks. Values are clamped to [0,1] and quantized by
// round-half-up: byte = floor(v * 255 + 0.5).

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "compress.hpp"
#include "glyphs.hpp"
#include "rng.hpp"
#include "tensor.hpp"
#include "vae.hpp"

namespace chroma {

enum class ChannelMap { grayscale, red_green, rgb };

inline int source_channels(ChannelMap m) {
    switch (m) {
        case ChannelMap::grayscale: return 1;
        case ChannelMap::red_green: return 2;
        case ChannelMap::rgb: return 3;
    }
    return 1;
}

namespace detail {

inline void png_chunk(std::vector<uint8_t>& out, const char* type, const std::vector<uint8_t>& payload) {
    uint32_t len = uint32_t(payload.size());
    for (int i = 3; i >= 0; --i) out.push_back(uint8_t(len >> (8 * i)));
    size_t crc_start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    uint32_t crc = crc32(out.data() + crc_start, out.size() - crc_start);
    for (int i = 3; i >= 0; --i) out.push_back(uint8_t(crc >> (8 * i)));
}

}  // namespace detail

// channels: 1 (grayscale) or 3 (RGB); pixels row-major, interleaved.
inline void write_png(const std::string& path, int w, int h, int channels,
                      const std::vector<uint8_t>& pixels) {
    if (channels != 1 && channels != 3) throw std::invalid_argument("write_png: channels must be 1 or 3");
    if (pixels.size() != size_t(w) * h * channels) throw std::invalid_argument("write_png: pixel buffer size mismatch");
    std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
    std::vector<uint8_t> ihdr;
    for (uint32_t v : {uint32_t(w), uint32_t(h)})
        for (int i = 3; i >= 0; --i) ihdr.push_back(uint8_t(v >> (8 * i)));
    ihdr.push_back(8);                              // bit depth
    ihdr.push_back(channels == 1 ? 0 : 2);          // color type
    ihdr.insert(ihdr.end(), {0, 0, 0});             // compression, filter, interlace
    detail::png_chunk(out, "IHDR", ihdr);
    std::vector<uint8_t> raw;
    raw.reserve(size_t(h) * (size_t(w) * channels + 1));
    for (int r = 0; r < h; ++r) {
        raw.push_back(0);  // filter: none
        raw.insert(raw.end(), pixels.begin() + size_t(r) * w * channels,
                   pixels.begin() + size_t(r + 1) * w * channels);
    }
    detail::png_chunk(out, "IDAT", zlib_compress(raw.data(), raw.size()));
    detail::png_chunk(out, "IEND", {});
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_png: cannot write " + path);
    f.write(reinterpret_cast<const char*>(out.data()), long(out.size()));
    if (!f) throw std::runtime_error("write_png: write failed for " + path);
}

struct DecodedPng {
    int w = 0, h = 0, channels = 0;
    std::vector<uint8_t> pixels;
};

inline DecodedPng decode_png(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("decode_png: cannot open " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
    if (bytes.size() < 8 || !std::equal(sig, sig + 8, bytes.begin()))
        throw std::runtime_error("decode_png: bad signature in " + path);
    DecodedPng out;
    std::vector<uint8_t> idat;
    size_t pos = 8;
    while (pos + 8 <= bytes.size()) {
        uint32_t len = (uint32_t(bytes[pos]) << 24) | (uint32_t(bytes[pos + 1]) << 16) |
                       (uint32_t(bytes[pos + 2]) << 8) | bytes[pos + 3];
        std::string type(bytes.begin() + long(pos) + 4, bytes.begin() + long(pos) + 8);
        const uint8_t* payload = bytes.data() + pos + 8;
        if (type == "IHDR") {
            out.w = int((uint32_t(payload[0]) << 24) | (uint32_t(payload[1]) << 16) |
                        (uint32_t(payload[2]) << 8) | payload[3]);
            out.h = int((uint32_t(payload[4]) << 24) | (uint32_t(payload[5]) << 16) |
                        (uint32_t(payload[6]) << 8) | payload[7]);
            if (payload[8] != 8) throw std::runtime_error("decode_png: only bit depth 8 supported");
            if (payload[9] == 0) out.channels = 1;
            else if (payload[9] == 2) out.channels = 3;
            else throw std::runtime_error("decode_png: only gray/RGB color types supported");
            if (payload[12] != 0) throw std::runtime_error("decode_png: interlacing not supported");
        } else if (type == "IDAT") {
            idat.insert(idat.end(), payload, payload + len);
        } else if (type == "IEND") {
            break;
        }
        pos += 12 + len;
    }
    auto raw = zlib_decompress(idat.data(), idat.size(), size_t(out.h) * (size_t(out.w) * out.channels + 1));
    int bpp = out.channels;
    size_t stride = size_t(out.w) * bpp;
    if (raw.size() != size_t(out.h) * (stride + 1)) throw std::runtime_error("decode_png: scanline size mismatch");
    out.pixels.assign(size_t(out.h) * stride, 0);
    auto paeth = [](int a, int b, int c) {
        int p = a + b - c, pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
        if (pa <= pb && pa <= pc) return a;
        return pb <= pc ? b : c;
    };
    for (int r = 0; r < out.h; ++r) {
        uint8_t filter = raw[size_t(r) * (stride + 1)];
        const uint8_t* src = raw.data() + size_t(r) * (stride + 1) + 1;
        uint8_t* dst = out.pixels.data() + size_t(r) * stride;
        const uint8_t* up = r > 0 ? dst - stride : nullptr;
        for (size_t i = 0; i < stride; ++i) {
            int a = i >= size_t(bpp) ? dst[i - bpp] : 0;
            int b = up ? up[i] : 0;
            int c = (up && i >= size_t(bpp)) ? up[i - bpp] : 0;
            int v = src[i];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += paeth(a, b, c); break;
                default: throw std::runtime_error("decode_png: unknown filter type");
            }
            dst[i] = uint8_t(v);
        }
    }
    return out;
}

inline uint8_t quantize_unit(float v) {
    v = std::min(1.0f, std::max(0.0f, v));
    return uint8_t(std::floor(v * 255.0f + 0.5f));
}

struct ImageGrid {
    int rows = 0, cols = 0;
    int cell_h = 0, cell_w = 0;
    ChannelMap mapping = ChannelMap::grayscale;
    std::vector<std::vector<float>> cells;     // row-major; empty vector = blank cell
    std::vector<std::string> row_labels;       // optional, rendered in a left margin

    ImageGrid(int r, int c, int ch, int cw, ChannelMap m)
        : rows(r), cols(c), cell_h(ch), cell_w(cw), mapping(m), cells(size_t(r) * c) {}

    void set_cell(int r, int c, std::vector<float> data) {
        if (data.size() != size_t(cell_h) * cell_w * source_channels(mapping))
            throw std::invalid_argument("ImageGrid: cell data size mismatch");
        cells[size_t(r) * cols + c] = std::move(data);
    }
};

namespace detail {

// 5x7 bitmaps for the few characters grid labels use.
inline const GlyphBitmap* label_glyph(char ch) {
    static const GlyphBitmap x = bitmap_from_rows({"     ", "     ", "#   #", " # # ", "  #  ", " # # ", "#   #"});
    static const GlyphBitmap tilde = bitmap_from_rows({"     ", "     ", " #  #", "# # #", "#  # ", "     ", "     "});
    if (ch >= '0' && ch <= '9') return &digit_font()[size_t(ch - '0')];
    if (ch == 'x') return &x;
    if (ch == '~') return &tilde;
    return nullptr;  // unsupported characters render as blanks
}

}  // namespace detail

inline void render_grid(const ImageGrid& grid, const std::string& path) {
    if (grid.rows < 1 || grid.cols < 1) throw std::invalid_argument("render_grid: empty grid");
    const int gutter = 2;
    int label_w = 0;
    if (!grid.row_labels.empty()) {
        size_t longest = 0;
        for (const auto& l : grid.row_labels) longest = std::max(longest, l.size());
        label_w = int(longest) * 6 + 4;
    }
    int out_channels = grid.mapping == ChannelMap::grayscale ? 1 : 3;
    int W = label_w + grid.cols * grid.cell_w + (grid.cols - 1) * gutter;
    int H = grid.rows * grid.cell_h + (grid.rows - 1) * gutter;
    std::vector<uint8_t> canvas(size_t(W) * H * out_channels, 255);

    auto put = [&](int r, int c, int ch, uint8_t v) { canvas[(size_t(r) * W + c) * out_channels + ch] = v; };

    for (int gr = 0; gr < grid.rows; ++gr) {
        int y0 = gr * (grid.cell_h + gutter);
        if (label_w > 0 && gr < int(grid.row_labels.size())) {
            const std::string& text = grid.row_labels[size_t(gr)];
            for (size_t k = 0; k < text.size(); ++k) {
                const detail::GlyphBitmap* g = detail::label_glyph(text[k]);
                if (!g) continue;
                for (int r = 0; r < g->rows; ++r)
                    for (int c = 0; c < g->cols; ++c)
                        if (g->at(r, c) > 0.5f) {
                            int y = y0 + grid.cell_h / 2 - 3 + r, x = int(k) * 6 + 2 + c;
                            if (y >= 0 && y < H && x >= 0 && x < W)
                                for (int ch = 0; ch < out_channels; ++ch) put(y, x, ch, 0);
                        }
            }
        }
        for (int gc = 0; gc < grid.cols; ++gc) {
            const auto& cell = grid.cells[size_t(gr) * grid.cols + gc];
            if (cell.empty()) continue;
            int x0 = label_w + gc * (grid.cell_w + gutter);
            int hw = grid.cell_h * grid.cell_w;
            for (int r = 0; r < grid.cell_h; ++r)
                for (int c = 0; c < grid.cell_w; ++c) {
                    size_t pix = size_t(r) * grid.cell_w + c;
                    switch (grid.mapping) {
                        case ChannelMap::grayscale:
                            put(y0 + r, x0 + c, 0, quantize_unit(cell[pix]));
                            break;
                        case ChannelMap::red_green:
                            put(y0 + r, x0 + c, 0, quantize_unit(cell[pix]));
                            put(y0 + r, x0 + c, 1, quantize_unit(cell[pix + size_t(hw)]));
                            put(y0 + r, x0 + c, 2, 0);
                            break;
                        case ChannelMap::rgb:
                            for (int ch = 0; ch < 3; ++ch)
                                put(y0 + r, x0 + c, ch, quantize_unit(cell[pix + size_t(ch) * hw]));
                            break;
                    }
                }
        }
    }
    write_png(path, W, H, out_channels, canvas);
}

// Original image in column 0 of both rows, then n samples of x~1 (top row)
// and x~2 (bottom row).
inline void partial_recon_panel(const ChromaModel& m, const Tensor& x_single, int n, RngState rng,
                                const std::string& path) {
    Tensor x = x_single.rank() == 1 ? Tensor::from_data({1, int(x_single.numel())}, x_single.data()) : x_single;
    if (x.dim(0) != 1) throw std::invalid_argument("partial_recon_panel: expects a single example");
    ChannelMap map = m.channels == 2 ? ChannelMap::red_green
                                     : (m.channels == 3 ? ChannelMap::rgb : ChannelMap::grayscale);
    RngState r1 = rng.fork(1), r2 = rng.fork(2);
    Tensor x1 = partial_reconstruct_1(m, x, r1, n);
    Tensor x2 = partial_reconstruct_2(m, x, r2, n);
    ImageGrid grid(2, n + 1, m.height, m.width, map);
    grid.row_labels = {"x~1", "x~2"};
    std::vector<float> orig(x.data().begin(), x.data().end());
    grid.set_cell(0, 0, orig);
    grid.set_cell(1, 0, orig);
    for (int i = 0; i < n; ++i) {
        grid.set_cell(0, i + 1, std::vector<float>(x1.data().begin() + size_t(i) * m.pixels(),
                                                   x1.data().begin() + size_t(i + 1) * m.pixels()));
        grid.set_cell(1, i + 1, std::vector<float>(x2.data().begin() + size_t(i) * m.pixels(),
                                                   x2.data().begin() + size_t(i + 1) * m.pixels()));
    }
    render_grid(grid, path);
}

}  // namespace chroma
