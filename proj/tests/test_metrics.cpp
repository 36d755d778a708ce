#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chroma/glyphs.hpp>
#include <chroma/metrics.hpp>

#include <cmath>
#include <filesystem>
#include <unistd.h>

using namespace chroma;
namespace fs = std::filesystem;

namespace {

ShortcutDataset balanced_dataset(int n, uint64_t seed) {
    RngState rng(seed);
    ShortcutDataset ds;
    ds.channels = 1;
    ds.height = 2;
    ds.width = 2;
    ds.distribution = "test";
    ds.params.kind = "colored-mnist";
    ds.params.seed = seed;
    std::vector<float> px(size_t(n) * 4);
    for (int i = 0; i < n; ++i) {
        ds.y.push_back(i % 2);
        ds.s.push_back((i / 2) % 2);
        for (int j = 0; j < 4; ++j) px[size_t(i) * 4 + j] = float(rng.uniform(0, 1));
        px[size_t(i) * 4] = ds.y.back() ? 0.9f : 0.1f;  // pixel 0 encodes the label
    }
    ds.images = Tensor::from_data({n, 4}, std::move(px));
    return ds;
}

// classifier with hand-set weights: logits = (-s*x0, s*x0), perfect for the
// datasets above; zero scale gives a constant class-0 predictor
ImageClassifier handmade_classifier(float scale) {
    RngState rng(1);
    ImageClassifier m;
    m.channels = 1;
    m.height = 2;
    m.width = 2;
    m.classes = 2;
    m.net = make_mlp({4, 2}, Act::relu, Act::identity, rng);
    auto& W = m.net.layers[0].W.data();
    std::fill(W.begin(), W.end(), 0.0f);
    W[0] = -scale;  // class-0 logit from pixel 0
    W[4] = scale;   // class-1 logit from pixel 0
    auto& b = m.net.layers[0].b.data();
    b[0] = scale * 0.5f;
    b[1] = -scale * 0.5f;
    return m;
}

std::string temp_dir() {
    static int counter = 0;
    std::string dir = (fs::temp_directory_path() /
                       ("chroma_mx_test_" + std::to_string(::getpid()) + "_" + std::to_string(++counter)))
                          .string();
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("perfect predictor scores 1.0 everywhere") {
    ShortcutDataset ds = balanced_dataset(64, 1);
    MetricsReport r = evaluate(handmade_classifier(10.0f), ds);
    CHECK(r.average == 1.0);
    CHECK(r.worst_group == 1.0);
    for (const auto& [g, acc] : r.group_accuracy) CHECK(acc == 1.0);
    CHECK(r.n == 64);
}

TEST_CASE("constant predictor on balanced two-class data: average 0.5, worst group 0") {
    ShortcutDataset ds = balanced_dataset(64, 2);
    MetricsReport r = evaluate(handmade_classifier(0.0f), ds);  // always class 0
    CHECK(r.average == doctest::Approx(0.5));
    CHECK(r.worst_group == 0.0);
}

TEST_CASE("worst group is min over nonzero groups and never exceeds the average") {
    RngState rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        ShortcutDataset ds = balanced_dataset(40, 100 + uint64_t(trial));
        std::vector<int> pred;
        for (int i = 0; i < ds.n(); ++i) pred.push_back(int(rng.uniform_int(2)));
        MetricsReport r = detail::report_from_predictions(pred, ds, "random", "naive");
        CHECK(r.worst_group <= r.average + 1e-12);
        double min_acc = 1.0;
        for (const auto& [g, acc] : r.group_accuracy) min_acc = std::min(min_acc, acc);
        CHECK(r.worst_group == min_acc);
    }
}

TEST_CASE("evaluate is deterministic") {
    ShortcutDataset ds = balanced_dataset(32, 4);
    ImageClassifier m = handmade_classifier(3.0f);
    MetricsReport a = evaluate(m, ds);
    MetricsReport b = evaluate(m, ds);
    CHECK(a == b);
}

TEST_CASE("report JSON round trip reloads to an equal value") {
    ShortcutDataset ds = balanced_dataset(32, 5);
    MetricsReport r = evaluate(handmade_classifier(2.5f), ds);
    r.seed = 99;
    r.config_echo = json{{"k", "v"}};
    std::string path = temp_dir() + "/report.json";
    save_report(r, path);
    MetricsReport back = load_report(path);
    CHECK(back == r);
}

TEST_CASE("missing heads are contract errors") {
    RngState rng(6);
    ChromaArch arch;
    arch.encoder_widths = {8};
    arch.decoder_widths = {8};
    ChromaModel m = make_chroma_model(1, 2, 2, 2, PartitionSpec::make(4, 0.5), HybridLossConfig{}, arch, rng);
    ShortcutDataset ds = balanced_dataset(16, 7);
    CHECK_THROWS_AS(evaluate(m, ds, EvalHead::z2), std::logic_error);       // stage 2 absent
    CHECK_THROWS_AS(evaluate(m, ds, EvalHead::xtilde2), std::logic_error);  // head absent
    CHECK_THROWS_AS(evaluate(m, ds, EvalHead::naive), std::logic_error);
    CHECK_NOTHROW(evaluate(m, ds, EvalHead::z1));
}

TEST_CASE("latent shift profile: zero for identical twins, symmetric, dim_z long") {
    RngState rng(8);
    ChromaArch arch;
    arch.encoder_widths = {16};
    arch.decoder_widths = {16};
    ChromaModel m = make_chroma_model(2, 2, 2, 2, PartitionSpec::make(6, 0.5), HybridLossConfig{}, arch, rng);
    RawImageSet raw;
    raw.height = 2;
    raw.width = 2;
    raw.labels = {1, 7, 3, 9};
    Tensor imgs = Tensor::zeros({4, 4});
    for (auto& v : imgs.data()) v = float(rng.uniform(0, 1));
    raw.images = imgs;
    ShortcutDataset ds = make_colored_mnist(raw, 0.25, 0.1, 9);

    LatentShiftProfile same = latent_shift_profile(m, ds, ds);
    CHECK(same.mean_abs_diff.size() == 6);
    CHECK(same.partition_boundary == 3);
    for (double v : same.mean_abs_diff) CHECK(v == 0.0);

    ShortcutDataset twin = flip_colors(ds);
    LatentShiftProfile ab = latent_shift_profile(m, ds, twin);
    LatentShiftProfile ba = latent_shift_profile(m, twin, ds);
    for (size_t i = 0; i < ab.mean_abs_diff.size(); ++i)
        CHECK(ab.mean_abs_diff[i] == doctest::Approx(ba.mean_abs_diff[i]));

    ShortcutDataset shorter = ds;
    shorter.images = Tensor::from_data({2, 8}, std::vector<float>(ds.images.data().begin(),
                                                                  ds.images.data().begin() + 16));
    shorter.y.resize(2);
    shorter.s.resize(2);
    CHECK_THROWS_AS(latent_shift_profile(m, ds, shorter), std::logic_error);

    std::string csv = temp_dir() + "/shift.csv";
    ab.to_csv(csv);
    std::ifstream in(csv);
    std::string line;
    int rows = 0;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 7);  // header + dim_z
}

TEST_CASE("subspace probe separates a linear attribute and stays at chance for noise") {
    RngState rng(10);
    const int n = 1000, d = 6;
    Tensor latents = Tensor::zeros({n, d});
    for (auto& v : latents.data()) v = float(rng.uniform(-1, 1));
    std::vector<int> attr(n);
    for (int i = 0; i < n; ++i) attr[size_t(i)] = latents.data()[size_t(i) * d + 2] > 0 ? 1 : 0;
    CHECK(subspace_probe(latents, attr, 1) > 0.97);

    std::vector<int> noise(n);
    for (int i = 0; i < n; ++i) noise[size_t(i)] = int(rng.uniform_int(2));
    double acc = subspace_probe(latents, noise, 2);
    CHECK(std::abs(acc - 0.5) < 3.0 * std::sqrt(0.25 / 200.0));  // 3 sigma on the 20% held out

    // label shuffling destroys a real signal down to chance
    std::vector<int> shuffled = attr;
    auto perm = rng.permutation(n);
    for (int i = 0; i < n; ++i) shuffled[size_t(i)] = attr[size_t(perm[size_t(i)])];
    double shuffled_acc = subspace_probe(latents, shuffled, 3);
    CHECK(std::abs(shuffled_acc - 0.5) < 3.0 * std::sqrt(0.25 / 200.0));

    CHECK_THROWS_AS(subspace_probe(latents, std::vector<int>(n, 1), 4), std::logic_error);
}

TEST_CASE("compare_methods ordering, ties and errors") {
    ShortcutDataset ds = balanced_dataset(32, 11);
    auto mk = [&](const std::string& method, double avg, double worst, const std::string& dist) {
        MetricsReport r;
        r.method = method;
        r.head = "naive";
        r.dataset_id = ds.family_id();
        r.distribution = dist;
        r.average = avg;
        r.worst_group = worst;
        return r;
    };
    SUBCASE("single report, single row") {
        ComparisonTable t = compare_methods({mk("only", 0.9, 0.5, "test")});
        CHECK(t.rows.size() == 1);
        CHECK(t.rows[0].first == "only");
    }
    SUBCASE("rows sort by worst-group, ties break by method tag") {
        ComparisonTable t = compare_methods({mk("bbb", 0.9, 0.4, "test"), mk("aaa", 0.5, 0.4, "test"),
                                             mk("top", 0.7, 0.8, "test")});
        CHECK(t.rows[0].first == "top");
        CHECK(t.rows[1].first == "aaa");  // tie, lexicographic
        CHECK(t.rows[2].first == "bbb");
    }
    SUBCASE("mixed datasets are rejected") {
        MetricsReport other = mk("x", 0.5, 0.5, "test");
        other.dataset_id = "different:seed=1";
        CHECK_THROWS_AS(compare_methods({mk("a", 0.9, 0.9, "test"), other}), std::logic_error);
    }
    SUBCASE("csv round trips losslessly") {
        ComparisonTable t = compare_methods({mk("m1", 0.875, 0.25, "test_in"), mk("m1", 0.5, 0.125, "test_out"),
                                             mk("m2", 0.625, 0.375, "test_in")});
        std::string path = temp_dir() + "/cmp.csv";
        t.to_csv(path);
        auto rows = read_comparison_csv(path);
        CHECK(rows.size() == 3);
        for (const auto& row : rows) {
            bool found = false;
            for (const auto& [method, cells] : t.rows) {
                auto it = cells.find(row.distribution);
                if (method == row.method && it != cells.end() && it->second.average == row.average &&
                    it->second.worst_group == row.worst_group)
                    found = true;
            }
            CHECK(found);
        }
    }
}
