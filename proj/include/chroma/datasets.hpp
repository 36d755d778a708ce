#pragma once

// IDX ingestion and synthetic shortcut datasets with exact group bookkeeping.
// Every synthesis op derives per-example randomness from (seed, example
// index), so regenerating from stored parameters is bitwise reproducible and
// order-stable under subsampling.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "compress.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace chroma {

using json = nlohmann::json;

struct RawImageSet {
    Tensor images;  // [N x (H*W)], values in [0,1]
    std::vector<int> labels;
    int height = 0, width = 0;

    int n() const { return images.defined() ? images.dim(0) : 0; }
};

struct IdxArray {
    uint32_t magic = 0;
    std::vector<int> dims;
    std::vector<uint8_t> data;
};

namespace detail {
inline uint32_t read_be32(const uint8_t* p) {
    return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | p[3];
}
inline std::vector<uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    return std::vector<uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}
}  // namespace detail

inline constexpr uint32_t kIdxImagesMagic = 0x00000803;  // 2051
inline constexpr uint32_t kIdxLabelsMagic = 0x00000801;  // 2049

// IDX binary format, raw or gzip-compressed (detected by magic bytes).
inline IdxArray read_idx(const std::string& path) {
    auto bytes = detail::read_file_bytes(path);
    if (is_gzip(bytes.data(), bytes.size())) bytes = gzip_decompress(bytes.data(), bytes.size());
    if (bytes.size() < 4) throw std::runtime_error("idx: file too short: " + path);
    IdxArray out;
    out.magic = detail::read_be32(bytes.data());
    if ((out.magic >> 8) != 0x08)  // two zero bytes then the unsigned-byte type code
        throw std::runtime_error("idx: unexpected magic 0x" + [&] {
            char buf[16];
            std::snprintf(buf, sizeof buf, "%08x", out.magic);
            return std::string(buf);
        }() + " in " + path);
    size_t ndims = out.magic & 0xFF;
    if (bytes.size() < 4 + 4 * ndims) throw std::runtime_error("idx: truncated dimension header in " + path);
    size_t total = 1;
    for (size_t i = 0; i < ndims; ++i) {
        uint32_t d = detail::read_be32(bytes.data() + 4 + 4 * i);
        out.dims.push_back(int(d));
        total *= d;
    }
    size_t expected = 4 + 4 * ndims + total;
    if (bytes.size() < expected)
        throw std::runtime_error("idx: truncated file " + path + ": expected " + std::to_string(expected) +
                                 " bytes, got " + std::to_string(bytes.size()));
    out.data.assign(bytes.begin() + long(4 + 4 * ndims), bytes.begin() + long(expected));
    return out;
}

inline void write_idx(const std::string& path, uint32_t magic, const std::vector<int>& dims,
                      const std::vector<uint8_t>& data, bool gzip = false) {
    std::vector<uint8_t> bytes;
    bytes.reserve(4 + 4 * dims.size() + data.size());
    for (int i = 3; i >= 0; --i) bytes.push_back(uint8_t(magic >> (8 * i)));
    for (int d : dims)
        for (int i = 3; i >= 0; --i) bytes.push_back(uint8_t(uint32_t(d) >> (8 * i)));
    bytes.insert(bytes.end(), data.begin(), data.end());
    if (gzip) bytes = gzip_compress(bytes.data(), bytes.size());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write file: " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), long(bytes.size()));
}

inline void save_raw_idx(const RawImageSet& raw, const std::string& images_path,
                         const std::string& labels_path, bool gzip = false) {
    std::vector<uint8_t> img_bytes(raw.images.numel());
    const float* p = raw.images.data().data();
    for (size_t i = 0; i < img_bytes.size(); ++i) {
        float v = std::min(1.0f, std::max(0.0f, p[i]));
        img_bytes[i] = uint8_t(v * 255.0f + 0.5f);
    }
    write_idx(images_path, kIdxImagesMagic, {raw.n(), raw.height, raw.width}, img_bytes, gzip);
    std::vector<uint8_t> lab_bytes(raw.labels.begin(), raw.labels.end());
    write_idx(labels_path, kIdxLabelsMagic, {raw.n()}, lab_bytes, gzip);
}

// Image/label file pair -> pixel tensor in [0,1] (byte 255 maps to exactly 1.0).
inline RawImageSet load_idx(const std::string& images_path, const std::string& labels_path) {
    IdxArray imgs = read_idx(images_path);
    if (imgs.magic != kIdxImagesMagic)
        throw std::runtime_error("idx: " + images_path + " is not an image file (magic " +
                                 std::to_string(imgs.magic) + ", want 2051)");
    if (imgs.dims.size() != 3) throw std::runtime_error("idx: expected 3 dims for images in " + images_path);
    IdxArray labs = read_idx(labels_path);
    if (labs.magic != kIdxLabelsMagic)
        throw std::runtime_error("idx: " + labels_path + " is not a label file (magic " +
                                 std::to_string(labs.magic) + ", want 2049)");
    if (labs.dims.size() != 1 || labs.dims[0] != imgs.dims[0])
        throw std::runtime_error("idx: label count does not match image count");

    RawImageSet out;
    out.height = imgs.dims[1];
    out.width = imgs.dims[2];
    int n = imgs.dims[0];
    std::vector<float> px(imgs.data.size());
    for (size_t i = 0; i < imgs.data.size(); ++i) px[i] = float(imgs.data[i]) / 255.0f;
    out.images = Tensor::from_data({n, out.height * out.width}, std::move(px));
    out.labels.assign(labs.data.begin(), labs.data.end());
    return out;
}

inline RawImageSet subset(const RawImageSet& raw, int begin, int end) {
    if (begin < 0 || end > raw.n() || begin > end) throw std::invalid_argument("subset: bad range");
    RawImageSet out;
    out.height = raw.height;
    out.width = raw.width;
    int w = raw.images.dim(1);
    out.images = Tensor::from_data({end - begin, w},
                                   std::vector<float>(raw.images.data().begin() + size_t(begin) * w,
                                                      raw.images.data().begin() + size_t(end) * w));
    out.labels.assign(raw.labels.begin() + begin, raw.labels.begin() + end);
    return out;
}

struct GroupedExample {
    Tensor x;
    int y = 0;
    int s = 0;
    std::pair<int, int> g() const { return {s, y}; }
};

enum class PatchCorner { top_left, top_right, bottom_left, bottom_right };

inline std::string corner_name(PatchCorner c) {
    switch (c) {
        case PatchCorner::top_left: return "tl";
        case PatchCorner::top_right: return "tr";
        case PatchCorner::bottom_left: return "bl";
        case PatchCorner::bottom_right: return "br";
    }
    return "?";
}

inline PatchCorner corner_from_name(const std::string& s) {
    if (s == "tl") return PatchCorner::top_left;
    if (s == "tr") return PatchCorner::top_right;
    if (s == "bl") return PatchCorner::bottom_left;
    if (s == "br") return PatchCorner::bottom_right;
    throw std::invalid_argument("unknown patch corner: " + s);
}

// Generation parameters, stored verbatim for exact replay.
struct GenParams {
    std::string kind;  // colored-mnist | patch | dominoes
    uint64_t seed = 0;
    double p_d = 0.25;
    double p_c = 0.1;
    double patch_prob = 0.9;
    int patch_size = 10;
    std::string patch_corner = "br";
    int patch_target_class = 1;
    double minority_fraction = 0.0;

    json to_json() const {
        json j;
        j["kind"] = kind;
        j["seed"] = seed;
        if (kind == "colored-mnist") {
            j["p_d"] = p_d;
            j["p_c"] = p_c;
        } else if (kind == "patch") {
            j["patch_prob"] = patch_prob;
            j["patch_size"] = patch_size;
            j["patch_corner"] = patch_corner;
            j["patch_target_class"] = patch_target_class;
        } else if (kind == "dominoes") {
            j["minority_fraction"] = minority_fraction;
        }
        return j;
    }

    static GenParams from_json(const json& j) {
        GenParams p;
        p.kind = j.at("kind").get<std::string>();
        p.seed = j.at("seed").get<uint64_t>();
        if (p.kind == "colored-mnist") {
            p.p_d = j.at("p_d").get<double>();
            p.p_c = j.at("p_c").get<double>();
        } else if (p.kind == "patch") {
            p.patch_prob = j.at("patch_prob").get<double>();
            p.patch_size = j.at("patch_size").get<int>();
            p.patch_corner = j.at("patch_corner").get<std::string>();
            p.patch_target_class = j.at("patch_target_class").get<int>();
        } else if (p.kind == "dominoes") {
            p.minority_fraction = j.at("minority_fraction").get<double>();
        }
        return p;
    }
};

struct ShortcutDataset {
    Tensor images;  // [N x (C*H*W)], channel-major rows
    std::vector<int> y;
    std::vector<int> s;
    int channels = 1, height = 0, width = 0;
    std::string distribution;  // train | test_in | test_out | test | ...
    std::string family;        // experiment identity shared by sibling splits
    GenParams params;
    bool color_flipped = false;

    int n() const { return images.defined() ? images.dim(0) : 0; }
    int pixels() const { return channels * height * width; }

    GroupedExample example(int i) const {
        GroupedExample e;
        int w = pixels();
        e.x = Tensor::from_data({w}, std::vector<float>(images.data().begin() + size_t(i) * w,
                                                        images.data().begin() + size_t(i + 1) * w));
        e.y = y[size_t(i)];
        e.s = s[size_t(i)];
        return e;
    }

    // Identity of the generating family (splits of one experiment share it).
    std::string family_id() const {
        return family.empty() ? params.kind + ":seed=" + std::to_string(params.seed) : family;
    }
};

inline std::map<std::pair<int, int>, int> group_counts(const ShortcutDataset& ds) {
    std::map<std::pair<int, int>, int> counts;
    for (size_t i = 0; i < ds.y.size(); ++i) ++counts[{ds.s[i], ds.y[i]}];
    return counts;
}

// ColoredMNIST construction: binarize digit labels (>= 5), flip with p_d to
// get the training label y, flip y with p_c to get the color c, then render
// the grayscale image into the red channel (c=0) or green channel (c=1).
// The color bit doubles as the shortcut label s.
inline ShortcutDataset make_colored_mnist(const RawImageSet& raw, double p_d, double p_c, uint64_t seed) {
    if (p_d < 0.0 || p_d > 1.0 || p_c < 0.0 || p_c > 1.0)
        throw std::invalid_argument("make_colored_mnist: flip probabilities must lie in [0,1]");
    int n = raw.n();
    int hw = raw.height * raw.width;
    ShortcutDataset ds;
    ds.channels = 2;
    ds.height = raw.height;
    ds.width = raw.width;
    ds.params.kind = "colored-mnist";
    ds.params.seed = seed;
    ds.params.p_d = p_d;
    ds.params.p_c = p_c;
    ds.y.resize(size_t(n));
    ds.s.resize(size_t(n));
    std::vector<float> px(size_t(n) * 2 * hw, 0.0f);
    RngState base(seed);
    const float* src = raw.images.data().data();
    for (int i = 0; i < n; ++i) {
        RngState r = base.fork(uint64_t(i));
        int y_hat = raw.labels[size_t(i)] >= 5 ? 1 : 0;
        int y = r.bernoulli(p_d) ? 1 - y_hat : y_hat;
        int c = r.bernoulli(p_c) ? 1 - y : y;
        ds.y[size_t(i)] = y;
        ds.s[size_t(i)] = c;
        float* dst = px.data() + size_t(i) * 2 * hw + size_t(c) * hw;  // channel 0 red, 1 green
        std::copy_n(src + size_t(i) * hw, hw, dst);
    }
    ds.images = Tensor::from_data({n, 2 * hw}, std::move(px));
    return ds;
}

// Swap red and green channels per image and complement s; y and example
// order are untouched, so the result pairs with its source by index.
inline ShortcutDataset flip_colors(const ShortcutDataset& ds) {
    if (ds.channels != 2)
        throw std::logic_error("flip_colors: expected a 2-channel colored dataset, got " +
                               std::to_string(ds.channels) + " channels");
    ShortcutDataset out = ds;
    out.color_flipped = !ds.color_flipped;
    int hw = ds.height * ds.width;
    // Tensor copies share storage; give the twin its own buffer before editing
    out.images = Tensor::from_data(ds.images.shape(), ds.images.data());
    float* p = out.images.data().data();
    for (int i = 0; i < ds.n(); ++i)
        std::swap_ranges(p + size_t(i) * 2 * hw, p + size_t(i) * 2 * hw + hw, p + size_t(i) * 2 * hw + hw);
    for (auto& v : out.s) v = 1 - v;
    return out;
}

// Solid unit-intensity square written into one corner of target-class images
// with the given probability; s records whether the patch is present.
inline ShortcutDataset inject_patch(const RawImageSet& raw, double positive_prob, int patch_size,
                                    PatchCorner corner, uint64_t seed, int target_class = 1) {
    if (positive_prob < 0.0 || positive_prob > 1.0)
        throw std::invalid_argument("inject_patch: probability must lie in [0,1]");
    if (patch_size < 1 || patch_size > raw.height || patch_size > raw.width)
        throw std::logic_error("inject_patch: patch " + std::to_string(patch_size) + "x" +
                               std::to_string(patch_size) + " does not fit a " + std::to_string(raw.height) +
                               "x" + std::to_string(raw.width) + " image");
    for (int l : raw.labels)
        if (l != 0 && l != 1) throw std::logic_error("inject_patch: labels must be binary");
    int n = raw.n();
    int hw = raw.height * raw.width;
    ShortcutDataset ds;
    ds.channels = 1;
    ds.height = raw.height;
    ds.width = raw.width;
    ds.params.kind = "patch";
    ds.params.seed = seed;
    ds.params.patch_prob = positive_prob;
    ds.params.patch_size = patch_size;
    ds.params.patch_corner = corner_name(corner);
    ds.params.patch_target_class = target_class;
    ds.images = Tensor::from_data({n, hw}, raw.images.data());
    ds.y = raw.labels;
    ds.s.assign(size_t(n), 0);
    int r0 = (corner == PatchCorner::bottom_left || corner == PatchCorner::bottom_right)
                 ? raw.height - patch_size : 0;
    int c0 = (corner == PatchCorner::top_right || corner == PatchCorner::bottom_right)
                 ? raw.width - patch_size : 0;
    RngState base(seed);
    float* p = ds.images.data().data();
    for (int i = 0; i < n; ++i) {
        if (raw.labels[size_t(i)] != target_class) continue;
        RngState r = base.fork(uint64_t(i));
        if (!r.bernoulli(positive_prob)) continue;
        ds.s[size_t(i)] = 1;
        for (int rr = 0; rr < patch_size; ++rr)
            for (int cc = 0; cc < patch_size; ++cc)
                p[size_t(i) * hw + size_t(r0 + rr) * raw.width + (c0 + cc)] = 1.0f;
    }
    return ds;
}

// Two-panel images: a digit (0 or 1, the shortcut s) stacked on top of an
// object (dress -> y=0, coat -> y=1, the true label). minority_fraction is
// the probability that an example breaks the s == y correlation; 0 removes
// the minority groups entirely.
inline ShortcutDataset make_dominoes(const RawImageSet& digits, const RawImageSet& objects,
                                     double minority_fraction, uint64_t seed, int n_examples) {
    if (minority_fraction < 0.0 || minority_fraction > 1.0)
        throw std::invalid_argument("make_dominoes: minority_fraction must lie in [0,1]");
    if (digits.height != objects.height || digits.width != objects.width)
        throw std::invalid_argument("make_dominoes: source image sizes differ");
    const int dress_class = 3, coat_class = 4;
    std::vector<std::vector<int>> digit_pool(2), object_pool(2);
    for (int i = 0; i < digits.n(); ++i)
        if (digits.labels[size_t(i)] == 0 || digits.labels[size_t(i)] == 1)
            digit_pool[size_t(digits.labels[size_t(i)])].push_back(i);
    for (int i = 0; i < objects.n(); ++i) {
        if (objects.labels[size_t(i)] == dress_class) object_pool[0].push_back(i);
        if (objects.labels[size_t(i)] == coat_class) object_pool[1].push_back(i);
    }
    RngState base(seed);
    for (int c = 0; c < 2; ++c) {
        auto perm = base.fork(100 + uint64_t(c)).permutation(int(digit_pool[size_t(c)].size()));
        std::vector<int> shuffled(perm.size());
        for (size_t i = 0; i < perm.size(); ++i) shuffled[i] = digit_pool[size_t(c)][size_t(perm[i])];
        digit_pool[size_t(c)] = std::move(shuffled);
        perm = base.fork(200 + uint64_t(c)).permutation(int(object_pool[size_t(c)].size()));
        shuffled.resize(perm.size());
        for (size_t i = 0; i < perm.size(); ++i) shuffled[i] = object_pool[size_t(c)][size_t(perm[i])];
        object_pool[size_t(c)] = std::move(shuffled);
    }

    int hw = digits.height * digits.width;
    ShortcutDataset ds;
    ds.channels = 1;
    ds.height = 2 * digits.height;
    ds.width = digits.width;
    ds.params.kind = "dominoes";
    ds.params.seed = seed;
    ds.params.minority_fraction = minority_fraction;
    ds.y.resize(size_t(n_examples));
    ds.s.resize(size_t(n_examples));
    std::vector<float> px(size_t(n_examples) * 2 * hw);
    size_t digit_used[2] = {0, 0}, object_used[2] = {0, 0};
    for (int i = 0; i < n_examples; ++i) {
        RngState r = base.fork(uint64_t(i));
        int y = i % 2;  // balanced true labels by construction
        int s = r.bernoulli(minority_fraction) ? 1 - y : y;
        ds.y[size_t(i)] = y;
        ds.s[size_t(i)] = s;
        if (digit_used[s] >= digit_pool[size_t(s)].size())
            throw std::logic_error("make_dominoes: insufficient digit images for class " + std::to_string(s));
        if (object_used[y] >= object_pool[size_t(y)].size())
            throw std::logic_error("make_dominoes: insufficient object images for class " + std::to_string(y));
        int di = digit_pool[size_t(s)][digit_used[s]++];
        int oi = object_pool[size_t(y)][object_used[y]++];
        std::copy_n(digits.images.data().data() + size_t(di) * hw, hw, px.data() + size_t(i) * 2 * hw);
        std::copy_n(objects.images.data().data() + size_t(oi) * hw, hw, px.data() + size_t(i) * 2 * hw + hw);
    }
    ds.images = Tensor::from_data({n_examples, 2 * hw}, std::move(px));
    return ds;
}

namespace detail {
inline void write_f32_section(std::ofstream& out, const float* data, size_t n) {
    out.write(reinterpret_cast<const char*>(data), long(n * 4));  // x86: already little-endian
}
}  // namespace detail

// Snapshot: manifest.json + data.bin (little-endian f32 sections).
inline void save_dataset(const ShortcutDataset& ds, const std::string& dir) {
    std::filesystem::create_directories(dir);
    json manifest;
    manifest["format_version"] = 1;
    manifest["params"] = ds.params.to_json();
    manifest["distribution"] = ds.distribution;
    manifest["family"] = ds.family;
    manifest["color_flipped"] = ds.color_flipped;
    manifest["n"] = ds.n();
    manifest["channels"] = ds.channels;
    manifest["height"] = ds.height;
    manifest["width"] = ds.width;
    json gc = json::object();
    for (const auto& [g, c] : group_counts(ds))
        gc["s=" + std::to_string(g.first) + ",y=" + std::to_string(g.second)] = c;
    manifest["group_counts"] = gc;
    size_t img_n = ds.images.numel();
    manifest["sections"] = json::array({
        json{{"name", "images"}, {"dtype", "f32"}, {"shape", {ds.n(), ds.pixels()}}, {"offset", 0}},
        json{{"name", "y"}, {"dtype", "f32"}, {"shape", {ds.n()}}, {"offset", img_n * 4}},
        json{{"name", "s"}, {"dtype", "f32"}, {"shape", {ds.n()}}, {"offset", (img_n + ds.y.size()) * 4}},
    });

    std::ofstream blob(dir + "/data.bin", std::ios::binary);
    if (!blob) throw std::runtime_error("cannot write " + dir + "/data.bin");
    detail::write_f32_section(blob, ds.images.data().data(), img_n);
    std::vector<float> tmp(ds.y.begin(), ds.y.end());
    detail::write_f32_section(blob, tmp.data(), tmp.size());
    tmp.assign(ds.s.begin(), ds.s.end());
    detail::write_f32_section(blob, tmp.data(), tmp.size());
    blob.close();

    std::ofstream mf(dir + "/manifest.json");
    if (!mf) throw std::runtime_error("cannot write " + dir + "/manifest.json");
    mf << manifest.dump(2) << "\n";
}

inline ShortcutDataset load_dataset(const std::string& dir) {
    std::ifstream mf(dir + "/manifest.json");
    if (!mf) throw std::runtime_error("dataset manifest not found: " + dir + "/manifest.json");
    json manifest = json::parse(mf);
    if (manifest.at("format_version").get<int>() != 1)
        throw std::runtime_error("dataset snapshot: unsupported format version");
    ShortcutDataset ds;
    ds.params = GenParams::from_json(manifest.at("params"));
    ds.distribution = manifest.at("distribution").get<std::string>();
    ds.family = manifest.at("family").get<std::string>();
    ds.color_flipped = manifest.at("color_flipped").get<bool>();
    ds.channels = manifest.at("channels").get<int>();
    ds.height = manifest.at("height").get<int>();
    ds.width = manifest.at("width").get<int>();
    int n = manifest.at("n").get<int>();

    auto bytes = detail::read_file_bytes(dir + "/data.bin");
    size_t img_n = size_t(n) * ds.pixels();
    if (bytes.size() != (img_n + 2 * size_t(n)) * 4)
        throw std::runtime_error("dataset snapshot: blob size mismatch in " + dir);
    const float* f = reinterpret_cast<const float*>(bytes.data());
    ds.images = Tensor::from_data({n, ds.pixels()}, std::vector<float>(f, f + img_n));
    ds.y.resize(size_t(n));
    ds.s.resize(size_t(n));
    for (int i = 0; i < n; ++i) {
        ds.y[size_t(i)] = int(f[img_n + size_t(i)]);
        ds.s[size_t(i)] = int(f[img_n + size_t(n) + size_t(i)]);
    }
    return ds;
}

}  // namespace chroma
