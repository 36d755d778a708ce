#pragma once

// Checkpoint format: <base>.json manifest describing every tensor (name,
// shape, dtype, byte offset) plus <base>.bin, one blob of little-endian
// values in row-major order. The manifest carries the partition, architecture
// widths, loss config and a format version.

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hash.hpp"
#include "nn.hpp"
#include "vae.hpp"

namespace chroma {

using json = nlohmann::json;

inline constexpr int kCheckpointFormatVersion = 1;

struct BlobWriter {
    std::vector<uint8_t> bytes;
    json sections = json::array();

    void add_f32(const std::string& name, const Shape& shape, const float* data, size_t n) {
        sections.push_back({{"name", name}, {"dtype", "f32"}, {"shape", shape}, {"offset", bytes.size()}});
        const uint8_t* p = reinterpret_cast<const uint8_t*>(data);
        bytes.insert(bytes.end(), p, p + n * 4);
    }
    void add_i32(const std::string& name, const std::vector<int>& v) {
        sections.push_back({{"name", name}, {"dtype", "i32"}, {"shape", {int(v.size())}}, {"offset", bytes.size()}});
        const uint8_t* p = reinterpret_cast<const uint8_t*>(v.data());
        bytes.insert(bytes.end(), p, p + v.size() * 4);
    }
};

struct BlobReader {
    json manifest;
    std::vector<uint8_t> bytes;

    static BlobReader open(const std::string& base) {
        BlobReader r;
        std::ifstream mf(base + ".json");
        if (!mf) throw std::runtime_error("checkpoint manifest not found: " + base + ".json");
        r.manifest = json::parse(mf);
        std::ifstream bf(base + ".bin", std::ios::binary);
        if (!bf) throw std::runtime_error("checkpoint blob not found: " + base + ".bin");
        r.bytes.assign(std::istreambuf_iterator<char>(bf), std::istreambuf_iterator<char>());
        return r;
    }

    const json& section(const std::string& name) const {
        for (const auto& s : manifest.at("tensors"))
            if (s.at("name") == name) return s;
        throw std::runtime_error("checkpoint: missing tensor " + name);
    }

    std::vector<float> get_f32(const std::string& name) const {
        const json& s = section(name);
        size_t n = 1;
        for (int d : s.at("shape").get<std::vector<int>>()) n *= size_t(d);
        size_t off = s.at("offset").get<size_t>();
        if (off + n * 4 > bytes.size()) throw std::runtime_error("checkpoint: blob too short for " + name);
        const float* p = reinterpret_cast<const float*>(bytes.data() + off);
        return std::vector<float>(p, p + n);
    }

    std::vector<int> get_i32(const std::string& name) const {
        const json& s = section(name);
        size_t n = size_t(s.at("shape").get<std::vector<int>>().at(0));
        size_t off = s.at("offset").get<size_t>();
        if (off + n * 4 > bytes.size()) throw std::runtime_error("checkpoint: blob too short for " + name);
        const int* p = reinterpret_cast<const int*>(bytes.data() + off);
        return std::vector<int>(p, p + n);
    }

    Shape shape(const std::string& name) const { return section(name).at("shape").get<Shape>(); }
};

namespace detail {

inline void write_checkpoint_files(const std::string& base, json manifest, const BlobWriter& blob) {
    manifest["tensors"] = blob.sections;
    std::ofstream bf(base + ".bin", std::ios::binary);
    if (!bf) throw std::runtime_error("cannot write " + base + ".bin");
    bf.write(reinterpret_cast<const char*>(blob.bytes.data()), long(blob.bytes.size()));
    bf.close();
    std::ofstream mf(base + ".json");
    if (!mf) throw std::runtime_error("cannot write " + base + ".json");
    mf << manifest.dump(2) << "\n";
}

inline json mlp_arch_json(const Mlp& m) {
    return {{"widths", m.widths()}, {"hidden", act_name(m.hidden)}, {"output", act_name(m.output)}};
}

inline Mlp mlp_from_arch_json(const json& j) {
    RngState scratch(0);
    Mlp m = make_mlp(j.at("widths").get<std::vector<int>>(), act_from_name(j.at("hidden")),
                     act_from_name(j.at("output")), scratch);
    return m;
}

inline void add_params(BlobWriter& w, std::vector<std::pair<std::string, Tensor*>> params) {
    for (auto& [name, t] : params) w.add_f32(name, t->shape(), t->data().data(), t->numel());
}

inline void load_params(const BlobReader& r, std::vector<std::pair<std::string, Tensor*>> params) {
    for (auto& [name, t] : params) {
        auto v = r.get_f32(name);
        if (v.size() != t->numel())
            throw std::runtime_error("checkpoint: size mismatch for " + name);
        if (r.shape(name) != t->shape())
            throw std::runtime_error("checkpoint: shape mismatch for " + name);
        t->data() = std::move(v);
    }
}

}  // namespace detail

inline void save_checkpoint(ChromaModel& m, const std::string& base) {
    json manifest;
    manifest["format_version"] = kCheckpointFormatVersion;
    manifest["model_kind"] = "chroma";
    manifest["dim_z"] = m.partition.dim_z;
    manifest["z_p"] = m.partition.z_p;
    manifest["channels"] = m.channels;
    manifest["height"] = m.height;
    manifest["width"] = m.width;
    manifest["classes"] = m.classes;
    manifest["clf_input_width"] = m.clf_input_width;
    manifest["loss"] = {{"lambda", m.loss_cfg.lambda},
                        {"beta", m.loss_cfg.beta},
                        {"recon_variance",
                         m.loss_cfg.recon_variance == ReconVariance::learned ? "learned" : "fixed"}};
    manifest["arch"] = {{"encoder", detail::mlp_arch_json(m.encoder)},
                        {"decoder", detail::mlp_arch_json(m.decoder)},
                        {"z1_classifier", detail::mlp_arch_json(m.z1_classifier)}};
    json heads = json::object();
    if (m.z2_classifier) heads["z2_mlp"] = detail::mlp_arch_json(*m.z2_classifier);
    if (m.xtilde2_classifier) heads["xtilde2"] = detail::mlp_arch_json(*m.xtilde2_classifier);
    if (m.z2_knn) heads["z2_knn"] = {{"k", m.z2_knn->k}, {"n", m.z2_knn->n}, {"d", m.z2_knn->d}};
    manifest["heads"] = heads;

    BlobWriter blob;
    detail::add_params(blob, m.named_params());
    if (m.dec_logvar_head) {
        blob.add_f32("dec_logvar_head.W", m.dec_logvar_head->W.shape(), m.dec_logvar_head->W.data().data(),
                     m.dec_logvar_head->W.numel());
        blob.add_f32("dec_logvar_head.b", m.dec_logvar_head->b.shape(), m.dec_logvar_head->b.data().data(),
                     m.dec_logvar_head->b.numel());
        manifest["has_dec_logvar_head"] = true;
    } else {
        manifest["has_dec_logvar_head"] = false;
    }
    if (m.z2_knn) {
        blob.add_f32("z2_knn.latents", {m.z2_knn->n, m.z2_knn->d}, m.z2_knn->latents.data(),
                     m.z2_knn->latents.size());
        blob.add_i32("z2_knn.labels", m.z2_knn->labels);
    }
    detail::write_checkpoint_files(base, std::move(manifest), blob);
}

inline ChromaModel load_checkpoint(const std::string& base) {
    BlobReader r = BlobReader::open(base);
    const json& mf = r.manifest;
    if (mf.at("format_version").get<int>() != kCheckpointFormatVersion)
        throw std::runtime_error("checkpoint: unsupported format version");
    if (mf.at("model_kind") != "chroma") throw std::runtime_error("checkpoint: not a chroma model");

    ChromaModel m;
    m.partition = PartitionSpec::make(mf.at("dim_z").get<int>(), mf.at("z_p").get<double>());
    m.channels = mf.at("channels").get<int>();
    m.height = mf.at("height").get<int>();
    m.width = mf.at("width").get<int>();
    m.classes = mf.at("classes").get<int>();
    m.clf_input_width = mf.at("clf_input_width").get<int>();
    m.loss_cfg.lambda = mf.at("loss").at("lambda").get<double>();
    m.loss_cfg.beta = mf.at("loss").at("beta").get<double>();
    m.loss_cfg.recon_variance =
        mf.at("loss").at("recon_variance") == "learned" ? ReconVariance::learned : ReconVariance::fixed_unit;

    m.encoder = detail::mlp_from_arch_json(mf.at("arch").at("encoder"));
    m.decoder = detail::mlp_from_arch_json(mf.at("arch").at("decoder"));
    m.z1_classifier = detail::mlp_from_arch_json(mf.at("arch").at("z1_classifier"));
    RngState scratch(0);
    int trunk_out = m.encoder.out_width();
    m.mu_head = make_affine(trunk_out, m.partition.dim_z, scratch);
    m.logvar_head = make_affine(trunk_out, m.partition.dim_z, scratch);
    if (mf.at("has_dec_logvar_head").get<bool>())
        m.dec_logvar_head = make_affine(m.partition.dim_z, m.pixels(), scratch);
    const json& heads = mf.at("heads");
    if (heads.contains("z2_mlp")) m.z2_classifier = detail::mlp_from_arch_json(heads.at("z2_mlp"));
    if (heads.contains("xtilde2")) m.xtilde2_classifier = detail::mlp_from_arch_json(heads.at("xtilde2"));

    detail::load_params(r, m.named_params());
    if (mf.at("has_dec_logvar_head").get<bool>()) {
        m.dec_logvar_head->W.data() = r.get_f32("dec_logvar_head.W");
        m.dec_logvar_head->b.data() = r.get_f32("dec_logvar_head.b");
    }
    if (heads.contains("z2_knn")) {
        KnnHead h;
        h.k = heads.at("z2_knn").at("k").get<int>();
        h.n = heads.at("z2_knn").at("n").get<int>();
        h.d = heads.at("z2_knn").at("d").get<int>();
        h.latents = r.get_f32("z2_knn.latents");
        h.labels = r.get_i32("z2_knn.labels");
        m.z2_knn = std::move(h);
    }
    return m;
}

inline void save_checkpoint(ImageClassifier& m, const std::string& base) {
    json manifest;
    manifest["format_version"] = kCheckpointFormatVersion;
    manifest["model_kind"] = "image-classifier";
    manifest["channels"] = m.channels;
    manifest["height"] = m.height;
    manifest["width"] = m.width;
    manifest["classes"] = m.classes;
    manifest["arch"] = {{"net", detail::mlp_arch_json(m.net)}};
    BlobWriter blob;
    detail::add_params(blob, m.named_params());
    detail::write_checkpoint_files(base, std::move(manifest), blob);
}

inline ImageClassifier load_classifier_checkpoint(const std::string& base) {
    BlobReader r = BlobReader::open(base);
    const json& mf = r.manifest;
    if (mf.at("format_version").get<int>() != kCheckpointFormatVersion)
        throw std::runtime_error("checkpoint: unsupported format version");
    if (mf.at("model_kind") != "image-classifier") throw std::runtime_error("checkpoint: not an image classifier");
    ImageClassifier m;
    m.channels = mf.at("channels").get<int>();
    m.height = mf.at("height").get<int>();
    m.width = mf.at("width").get<int>();
    m.classes = mf.at("classes").get<int>();
    m.net = detail::mlp_from_arch_json(mf.at("arch").at("net"));
    detail::load_params(r, m.named_params());
    return m;
}

// Digest over named parameter values; used for stage-separation checks.
inline std::string params_checksum(const std::vector<std::pair<std::string, Tensor*>>& params) {
    Sha256 h;
    for (const auto& [name, t] : params) {
        h.update(name.data(), name.size());
        h.update(t->data().data(), t->numel() * 4);
    }
    return h.hex_digest();
}

}  // namespace chroma
