#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chroma/imaging.hpp>

#include <filesystem>
#include <unistd.h>

using namespace chroma;
namespace fs = std::filesystem;

namespace {

std::string temp_png(const std::string& tag) {
    static int counter = 0;
    std::string dir = (fs::temp_directory_path() /
                       ("chroma_img_" + std::to_string(::getpid()) + "_" + std::to_string(++counter)))
                          .string();
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir + "/" + tag + ".png";
}

std::vector<uint8_t> file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::vector<uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("quantization rule: round half up") {
    CHECK(quantize_unit(0.5f) == 128);  // 127.5 rounds up
    CHECK(quantize_unit(0.0f) == 0);
    CHECK(quantize_unit(1.0f) == 255);
    CHECK(quantize_unit(-2.0f) == 0);   // clamped
    CHECK(quantize_unit(3.0f) == 255);  // clamped
}

TEST_CASE("1x1 all-ones grayscale grid renders a white cell") {
    ImageGrid grid(1, 1, 3, 3, ChannelMap::grayscale);
    grid.set_cell(0, 0, std::vector<float>(9, 1.0f));
    std::string path = temp_png("white");
    render_grid(grid, path);
    DecodedPng img = decode_png(path);
    CHECK(img.w == 3);
    CHECK(img.h == 3);
    CHECK(img.channels == 1);
    for (uint8_t v : img.pixels) CHECK(v == 255);
}

TEST_CASE("red-green mapping: channel 0 only gives pure red") {
    ImageGrid grid(1, 1, 2, 2, ChannelMap::red_green);
    std::vector<float> cell(8, 0.0f);
    for (int i = 0; i < 4; ++i) cell[size_t(i)] = 1.0f;  // channel 0 block
    grid.set_cell(0, 0, cell);
    std::string path = temp_png("red");
    render_grid(grid, path);
    DecodedPng img = decode_png(path);
    CHECK(img.channels == 3);
    for (int p = 0; p < 4; ++p) {
        CHECK(img.pixels[size_t(p) * 3 + 0] == 255);
        CHECK(img.pixels[size_t(p) * 3 + 1] == 0);
        CHECK(img.pixels[size_t(p) * 3 + 2] == 0);
    }
}

TEST_CASE("gutters are white and layout matches") {
    ImageGrid grid(2, 3, 4, 5, ChannelMap::grayscale);
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 3; ++c) grid.set_cell(r, c, std::vector<float>(20, 0.0f));
    std::string path = temp_png("layout");
    render_grid(grid, path);
    DecodedPng img = decode_png(path);
    CHECK(img.w == 3 * 5 + 2 * 2);
    CHECK(img.h == 2 * 4 + 1 * 2);
    // gutter row between the two cell rows is white
    for (int c = 0; c < img.w; ++c) CHECK(img.pixels[size_t(4) * img.w + c] == 255);
}

TEST_CASE("rendering is pure: identical grid, identical bytes") {
    RngState rng(5);
    ImageGrid grid(2, 2, 6, 6, ChannelMap::grayscale);
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 2; ++c) {
            std::vector<float> cell(36);
            for (auto& v : cell) v = float(rng.uniform(0, 1));
            grid.set_cell(r, c, cell);
        }
    std::string p1 = temp_png("pure1"), p2 = temp_png("pure2");
    render_grid(grid, p1);
    render_grid(grid, p2);
    CHECK(file_bytes(p1) == file_bytes(p2));
}

TEST_CASE("encode-decode round trip recovers values within 1/255") {
    RngState rng(6);
    ImageGrid grid(1, 1, 8, 8, ChannelMap::grayscale);
    std::vector<float> cell(64);
    for (auto& v : cell) v = float(rng.uniform(0, 1));
    grid.set_cell(0, 0, cell);
    std::string path = temp_png("roundtrip");
    render_grid(grid, path);
    DecodedPng img = decode_png(path);
    for (int i = 0; i < 64; ++i)
        CHECK(std::abs(img.pixels[size_t(i)] / 255.0f - cell[size_t(i)]) <= 1.0f / 255.0f + 1e-6f);
}

TEST_CASE("decoder handles sub/up/average/paeth filtered scanlines") {
    // craft a small RGB PNG using each filter type once
    const int w = 4, h = 5, ch = 3;
    std::vector<uint8_t> pixels(size_t(w) * h * ch);
    RngState rng(7);
    for (auto& v : pixels) v = uint8_t(rng.uniform_int(256));
    size_t stride = size_t(w) * ch;
    std::vector<uint8_t> raw;
    auto paeth = [](int a, int b, int c) {
        int p = a + b - c, pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
        if (pa <= pb && pa <= pc) return a;
        return pb <= pc ? b : c;
    };
    for (int r = 0; r < h; ++r) {
        uint8_t filter = uint8_t(r % 5);
        raw.push_back(filter);
        for (size_t i = 0; i < stride; ++i) {
            int cur = pixels[size_t(r) * stride + i];
            int a = i >= size_t(ch) ? pixels[size_t(r) * stride + i - ch] : 0;
            int b = r > 0 ? pixels[size_t(r - 1) * stride + i] : 0;
            int c = (r > 0 && i >= size_t(ch)) ? pixels[size_t(r - 1) * stride + i - ch] : 0;
            int enc = cur;
            switch (filter) {
                case 0: break;
                case 1: enc = cur - a; break;
                case 2: enc = cur - b; break;
                case 3: enc = cur - (a + b) / 2; break;
                case 4: enc = cur - paeth(a, b, c); break;
            }
            raw.push_back(uint8_t(enc & 0xFF));
        }
    }
    std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
    std::vector<uint8_t> ihdr;
    for (uint32_t v : {uint32_t(w), uint32_t(h)})
        for (int i = 3; i >= 0; --i) ihdr.push_back(uint8_t(v >> (8 * i)));
    ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});
    detail::png_chunk(out, "IHDR", ihdr);
    detail::png_chunk(out, "IDAT", zlib_compress(raw.data(), raw.size()));
    detail::png_chunk(out, "IEND", {});
    std::string path = temp_png("filters");
    std::ofstream f(path, std::ios::binary);
    f.write(reinterpret_cast<const char*>(out.data()), long(out.size()));
    f.close();
    DecodedPng img = decode_png(path);
    CHECK(img.pixels == pixels);
}

TEST_CASE("partial reconstruction panel layout and determinism") {
    RngState rng(8);
    ChromaArch arch;
    arch.encoder_widths = {16};
    arch.decoder_widths = {16};
    arch.classifier_widths = {8};
    ChromaModel m =
        make_chroma_model(2, 4, 4, 2, PartitionSpec::make(8, 0.5), HybridLossConfig{}, arch, rng);
    Tensor x = Tensor::zeros({32});
    for (auto& v : x.data()) v = float(rng.uniform(0, 1));

    const int n = 8;
    std::string p1 = temp_png("panel1"), p2 = temp_png("panel2");
    partial_recon_panel(m, x, n, RngState(3), p1);
    partial_recon_panel(m, x, n, RngState(3), p2);
    CHECK(file_bytes(p1) == file_bytes(p2));  // deterministic given seed

    DecodedPng img = decode_png(p1);
    int label_w = 3 * 6 + 4;  // "x~1" rendered in the margin
    CHECK(img.w == label_w + (n + 1) * 4 + n * 2);
    CHECK(img.h == 2 * 4 + 2);
    CHECK(img.channels == 3);  // red-green mapped to RGB
}
