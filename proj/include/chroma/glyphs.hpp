#pragma once

// Procedural 28x28 glyph images in the style of the MNIST/FashionMNIST
// corpora: ten digit classes and ten clothing-object classes, rendered from
// small bitmap fonts with per-example affine jitter and pixel noise. Object
// glyphs carry more jitter and per-class style variants than digits, so the
// digit panel is the easier feature when both appear in one image. Every
// example is a pure function of (seed, index).

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "datasets.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace chroma {

namespace detail {

struct GlyphBitmap {
    int rows = 0, cols = 0;
    std::vector<float> v;
    float at(int r, int c) const {
        if (r < 0 || r >= rows || c < 0 || c >= cols) return 0.0f;
        return v[size_t(r) * cols + c];
    }
};

inline GlyphBitmap bitmap_from_rows(const std::vector<std::string>& rows) {
    GlyphBitmap b;
    b.rows = int(rows.size());
    b.cols = int(rows[0].size());
    for (const auto& r : rows) {
        if (int(r.size()) != b.cols) throw std::logic_error("glyph bitmap rows have uneven widths");
        for (char ch : r) b.v.push_back(ch == '#' ? 1.0f : 0.0f);
    }
    return b;
}

inline const std::vector<GlyphBitmap>& digit_font() {
    static const std::vector<GlyphBitmap> font = [] {
        const std::vector<std::vector<std::string>> rows = {
            {" ### ", "#   #", "#  ##", "# # #", "##  #", "#   #", " ### "},
            {"  #  ", " ##  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "},
            {" ### ", "#   #", "    #", "  ## ", " #   ", "#    ", "#####"},
            {"#### ", "    #", "    #", " ### ", "    #", "    #", "#### "},
            {"#  # ", "#  # ", "#  # ", "#####", "   # ", "   # ", "   # "},
            {"#####", "#    ", "#### ", "    #", "    #", "#   #", " ### "},
            {" ### ", "#    ", "#    ", "#### ", "#   #", "#   #", " ### "},
            {"#####", "    #", "   # ", "   # ", "  #  ", "  #  ", "  #  "},
            {" ### ", "#   #", "#   #", " ### ", "#   #", "#   #", " ### "},
            {" ### ", "#   #", "#   #", " ####", "    #", "    #", " ### "},
        };
        std::vector<GlyphBitmap> out;
        for (const auto& r : rows) out.push_back(bitmap_from_rows(r));
        return out;
    }();
    return font;
}

// second handwriting style per digit
inline const std::vector<GlyphBitmap>& digit_font_alt() {
    static const std::vector<GlyphBitmap> font = [] {
        const std::vector<std::vector<std::string>> rows = {
            {"  #  ", " # # ", "#   #", "#   #", "#   #", " # # ", "  #  "},
            {"  #  ", "  #  ", "  #  ", "  #  ", "  #  ", "  #  ", "  #  "},
            {" ##  ", "#  # ", "   # ", "  #  ", " #   ", "#    ", "#####"},
            {" ### ", "#   #", "    #", "  ## ", "    #", "#   #", " ### "},
            {"  ## ", " # # ", "#  # ", "#####", "   # ", "   # ", "  ###"},
            {"#####", "#    ", "###  ", "   # ", "    #", "   # ", "###  "},
            {"  ## ", " #   ", "#    ", "#### ", "#   #", " #  #", "  ## "},
            {"#####", "    #", "   # ", "  ## ", "  #  ", " #   ", " #   "},
            {" ### ", "#   #", " # # ", "  #  ", " # # ", "#   #", " ### "},
            {" ####", "#   #", "#   #", " ####", "    #", "   # ", " ##  "},
        };
        std::vector<GlyphBitmap> out;
        for (const auto& r : rows) out.push_back(bitmap_from_rows(r));
        return out;
    }();
    return font;
}

// Clothing silhouettes keyed as FashionMNIST classes; dress (3) and coat (4)
// have two style variants each.
inline const std::vector<std::vector<GlyphBitmap>>& object_font() {
    static const std::vector<std::vector<GlyphBitmap>> font = [] {
        std::vector<std::vector<GlyphBitmap>> out(10);
        out[0] = {bitmap_from_rows({" ## ## ", "#######", "#######", " ##### ", " ##### ", " ##### ", " ##### "})};
        out[1] = {bitmap_from_rows({"#######", "#######", "##   ##", "##   ##", "##   ##", "##   ##", "##   ##"})};
        out[2] = {bitmap_from_rows({"### ###", "#######", "#######", "#######", " ##### ", " ##### ", " ##### "})};
        out[3] = {bitmap_from_rows({"  ###  ", "  ###  ", "  ###  ", " ##### ", " ##### ", "#######", "#######"}),
                  bitmap_from_rows({"  ###  ", "  ###  ", " ##### ", " ##### ", "#######", "#######", "#######"})};
        out[4] = {bitmap_from_rows({"## # ##", "#######", "## # ##", "## # ##", "## # ##", "## # ##", "#######"}),
                  bitmap_from_rows({"#######", "## # ##", "## # ##", "## # ##", "## # ##", "#######", "#######"})};
        out[5] = {bitmap_from_rows({"       ", "     ##", "    ## ", "   ##  ", " ##  # ", "#######", "#######"})};
        out[6] = {bitmap_from_rows({"## # ##", "#######", " ##### ", " ##### ", " ##### ", " ##### ", " ##### "})};
        out[7] = {bitmap_from_rows({"       ", "       ", "  ##   ", " ###   ", "## ####", "#######", "#######"})};
        out[8] = {bitmap_from_rows({"  ###  ", " #   # ", "#######", "#######", "#######", "#######", "#######"})};
        out[9] = {bitmap_from_rows({"  ###  ", "  ###  ", "  ###  ", "  #### ", "  #####", "#######", "#######"})};
        return out;
    }();
    return font;
}

struct GlyphJitter {
    double scale_lo, scale_hi;
    double rot;        // radians, +/-
    double shift;      // pixels, +/-
    double intensity_lo, intensity_hi;
    double noise_amp = 0.0;  // additive uniform background noise
    double warp = 0.0;       // sinusoidal stroke wobble amplitude, glyph-space px
    double grade = 0.0;      // intensity gradient across the canvas, +/-
    double weight_lo = 1.0, weight_hi = 1.0;  // stroke weight via soft-edge gamma
};

// Per-example appearance: affine pose, sinusoidal warp of the sampling grid
// (handwriting-like wobble), an intensity gradient, and stroke weight. Each
// factor is continuous, so a rendered set has substantial intrinsic
// dimensionality beyond the class identity.
inline void render_glyph(const GlyphBitmap& g, const GlyphJitter& jit, RngState& rng, float* out, int side) {
    double scale = rng.uniform(jit.scale_lo, jit.scale_hi);
    double theta = rng.uniform(-jit.rot, jit.rot);
    double dx = rng.uniform(-jit.shift, jit.shift);
    double dy = rng.uniform(-jit.shift, jit.shift);
    double intensity = rng.uniform(jit.intensity_lo, jit.intensity_hi);
    double warp_amp = rng.uniform(0.0, jit.warp);
    double warp_freq = rng.uniform(0.6, 1.7);
    double warp_phase_x = rng.uniform(0.0, 6.283185307179586);
    double warp_phase_y = rng.uniform(0.0, 6.283185307179586);
    double grade_x = rng.uniform(-jit.grade, jit.grade);
    double grade_y = rng.uniform(-jit.grade, jit.grade);
    double weight = rng.uniform(jit.weight_lo, jit.weight_hi);
    double ct = std::cos(theta), st = std::sin(theta);
    double cx = (side - 1) / 2.0 + dx, cy = (side - 1) / 2.0 + dy;
    double gcx = (g.cols - 1) / 2.0, gcy = (g.rows - 1) / 2.0;
    for (int r = 0; r < side; ++r) {
        for (int c = 0; c < side; ++c) {
            double ux = c - cx, uy = r - cy;
            double gx = (ct * ux + st * uy) / scale + gcx;
            double gy = (-st * ux + ct * uy) / scale + gcy;
            gx += warp_amp * std::sin(warp_freq * gy + warp_phase_x);
            gy += warp_amp * std::sin(warp_freq * gx + warp_phase_y);
            int x0 = int(std::floor(gx)), y0 = int(std::floor(gy));
            double fx = gx - x0, fy = gy - y0;
            double v = g.at(y0, x0) * (1 - fx) * (1 - fy) + g.at(y0, x0 + 1) * fx * (1 - fy) +
                       g.at(y0 + 1, x0) * (1 - fx) * fy + g.at(y0 + 1, x0 + 1) * fx * fy;
            v = std::pow(std::min(1.0, std::max(0.0, v)), 2.0 - weight);
            double shade = 1.0 + grade_x * (c - cx) / side + grade_y * (r - cy) / side;
            double px = v * intensity * shade + rng.uniform(0.0, jit.noise_amp);
            out[size_t(r) * side + c] = float(px < 0.0 ? 0.0 : (px > 1.0 ? 1.0 : px));
        }
    }
}

}  // namespace detail

inline RawImageSet make_glyph_digits(int n, uint64_t seed) {
    const int side = 28;
    const detail::GlyphJitter jit{2.5, 3.2, 0.13, 2.0, 0.75, 1.0};
    RawImageSet out;
    out.height = side;
    out.width = side;
    out.labels.resize(size_t(n));
    std::vector<float> px(size_t(n) * side * side);
    RngState base(seed);
    const auto& font = detail::digit_font();
    for (int i = 0; i < n; ++i) {
        RngState r = base.fork(uint64_t(i));
        int label = int(r.uniform_int(10));
        out.labels[size_t(i)] = label;
        detail::render_glyph(font[size_t(label)], jit, r, px.data() + size_t(i) * side * side, side);
    }
    out.images = Tensor::from_data({n, side * side}, std::move(px));
    return out;
}

inline RawImageSet make_glyph_objects(int n, uint64_t seed) {
    const int side = 28;
    const detail::GlyphJitter jit{2.2, 3.0, 0.22, 2.5, 0.6, 1.0};
    RawImageSet out;
    out.height = side;
    out.width = side;
    out.labels.resize(size_t(n));
    std::vector<float> px(size_t(n) * side * side);
    RngState base(seed);
    const auto& font = detail::object_font();
    for (int i = 0; i < n; ++i) {
        RngState r = base.fork(uint64_t(i));
        int label = int(r.uniform_int(10));
        out.labels[size_t(i)] = label;
        const auto& variants = font[size_t(label)];
        const auto& bitmap = variants[size_t(r.uniform_int(int64_t(variants.size())))];
        detail::render_glyph(bitmap, jit, r, px.data() + size_t(i) * side * side, side);
    }
    out.images = Tensor::from_data({n, side * side}, std::move(px));
    return out;
}

}  // namespace chroma
