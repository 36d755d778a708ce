#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chroma/gradcheck.hpp>
#include <chroma/vae.hpp>

#include <cmath>

using namespace chroma;

namespace {

Tensor random_tensor(Shape shape, RngState& rng, float lo = -1.0f, float hi = 1.0f) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (auto& v : t.data()) v = float(rng.uniform(lo, hi));
    return t;
}

ChromaModel tiny_model(RngState& rng, int dim_z = 8, double z_p = 0.25, double lambda = 10.0) {
    ChromaArch arch;
    arch.encoder_widths = {16};
    arch.decoder_widths = {16};
    arch.classifier_widths = {8};
    HybridLossConfig cfg;
    cfg.lambda = lambda;
    return make_chroma_model(1, 4, 4, 2, PartitionSpec::make(dim_z, z_p), cfg, arch, rng);
}

// decoder is a single linear map; partial reconstructions have a closed-form mean
ChromaModel linear_decoder_model(RngState& rng, int dim_z, double z_p, int pixels) {
    ChromaArch arch;
    arch.encoder_widths = {8};
    arch.decoder_widths = {};
    arch.classifier_widths = {4};
    arch.decoder_output = Act::identity;
    ChromaModel m = make_chroma_model(1, 1, pixels, 2, PartitionSpec::make(dim_z, z_p),
                                      HybridLossConfig{}, arch, rng);
    return m;
}

}  // namespace

TEST_CASE("partition arithmetic is round-half-up") {
    auto p = PartitionSpec::make(32, 0.25);
    CHECK(p.dim_z1 == 8);
    CHECK(p.dim_z2 == 24);
    CHECK(PartitionSpec::make(8, 0.5).dim_z1 == 4);
    CHECK(PartitionSpec::make(4, 0.25).dim_z1 == 1);
    CHECK(PartitionSpec::make(4, 0.75).dim_z1 == 3);
    CHECK(PartitionSpec::make(5, 0.5).dim_z1 == 3);  // 2.5 rounds up
    CHECK_THROWS_AS(PartitionSpec::make(4, 0.9), std::invalid_argument);   // empty z2
    CHECK_THROWS_AS(PartitionSpec::make(4, 0.05), std::invalid_argument);  // empty z1
    CHECK_THROWS_AS(PartitionSpec::make(32, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(PartitionSpec::make(32, 1.0), std::invalid_argument);
}

TEST_CASE("encode: widths, determinism, partition slices") {
    RngState rng(1);
    ChromaArch arch;
    arch.encoder_widths = {32};
    arch.decoder_widths = {32};
    ChromaModel m = make_chroma_model(2, 4, 4, 2, PartitionSpec::make(32, 0.25), HybridLossConfig{}, arch, rng);
    Tensor x = random_tensor({3, 32}, rng, 0.0f, 1.0f);
    LatentCode code = encode(m, x);
    CHECK(code.mu.shape() == Shape{3, 32});
    CHECK(code.logvar.shape() == Shape{3, 32});
    CHECK(code.mu1().shape() == Shape{3, 8});
    CHECK(code.mu2().shape() == Shape{3, 24});
    LatentCode again = encode(m, x);
    CHECK(code.mu.data() == again.mu.data());

    Tensor bad = Tensor::zeros({2, 7});
    CHECK_THROWS_AS(encode(m, bad), std::invalid_argument);
}

TEST_CASE("reparameterize: degenerate variance collapses to the mean") {
    RngState rng(2);
    LatentCode code;
    code.partition = PartitionSpec::make(4, 0.5);
    code.mu = random_tensor({2, 4}, rng);
    code.logvar = Tensor::filled({2, 4}, -40.0f);
    RngState sample_rng(3);
    Tensor z = reparameterize(code, sample_rng);
    for (size_t i = 0; i < z.numel(); ++i) CHECK(std::abs(z.data()[i] - code.mu.data()[i]) < 1e-6f);
}

TEST_CASE("reparameterize: Monte-Carlo mean approaches mu") {
    LatentCode code;
    code.partition = PartitionSpec::make(2, 0.5);
    code.mu = Tensor::from_data({1, 2}, {0.7f, -1.3f});
    code.logvar = Tensor::zeros({1, 2});  // sigma = 1
    RngState rng(4);
    const int n = 100000;
    double acc0 = 0, acc1 = 0;
    for (int i = 0; i < n; ++i) {
        Tensor z = reparameterize(code, rng);
        acc0 += z.data()[0];
        acc1 += z.data()[1];
    }
    double tol = 3.0 / std::sqrt(double(n));  // 3 sigma / sqrt(n)
    CHECK(std::abs(acc0 / n - 0.7) < tol);
    CHECK(std::abs(acc1 / n + 1.3) < tol);
}

TEST_CASE("reparameterize: fixed seed reproduces z") {
    RngState rng(5);
    LatentCode code;
    code.partition = PartitionSpec::make(4, 0.5);
    code.mu = random_tensor({2, 4}, rng);
    code.logvar = random_tensor({2, 4}, rng);
    RngState ra(42), rb(42);
    CHECK(reparameterize(code, ra).data() == reparameterize(code, rb).data());
}

TEST_CASE("classify_z1 ignores mu2 bitwise and has class-count width") {
    RngState rng(6);
    ChromaModel m = tiny_model(rng);
    Tensor x = random_tensor({2, 16}, rng, 0.0f, 1.0f);
    LatentCode code = encode(m, x);
    Tensor logits = classify_z1(m, code);
    CHECK(logits.shape() == Shape{2, 2});

    LatentCode perturbed = code;
    perturbed.mu = Tensor::from_data(code.mu.shape(), code.mu.data());
    for (int i = 0; i < 2; ++i)
        for (int j = m.partition.dim_z1; j < m.partition.dim_z; ++j)
            perturbed.mu.data()[size_t(i) * m.partition.dim_z + j] += 17.0f;
    Tensor logits2 = classify_z1(m, perturbed);
    CHECK(logits.data() == logits2.data());  // bitwise
}

TEST_CASE("CE-only gradient never reaches the mu2 output head") {
    RngState rng(7);
    ChromaModel m = tiny_model(rng);
    Tensor x = random_tensor({4, 16}, rng, 0.0f, 1.0f);
    std::vector<int> y = {0, 1, 1, 0};
    auto params = m.stage1_named_params();
    {
        GradTape tape;
        LatentCode code = encode(m, x);
        Tensor ce = softmax_cross_entropy(classify_z1(m, code), y);
        backward(ce);
    }
    int dz1 = m.partition.dim_z1;
    const auto& gw = m.mu_head.W.grad();  // [dim_z x trunk]
    int trunk = m.mu_head.W.dim(1);
    bool z1_rows_nonzero = false;
    for (int r = 0; r < dz1; ++r)
        for (int c = 0; c < trunk; ++c) z1_rows_nonzero = z1_rows_nonzero || gw[size_t(r) * trunk + c] != 0.0f;
    CHECK(z1_rows_nonzero);
    for (int r = dz1; r < m.partition.dim_z; ++r)
        for (int c = 0; c < trunk; ++c) CHECK(gw[size_t(r) * trunk + c] == 0.0f);  // exact zeros
    // the logvar head is entirely outside the CE path
    CHECK_FALSE(m.logvar_head.W.has_grad());
    // trunk parameters are shared and do receive gradient
    CHECK(m.encoder.layers[0].W.has_grad());
}

TEST_CASE("reconstruction gradient reaches both mu heads") {
    RngState rng(8);
    ChromaModel m = tiny_model(rng, 8, 0.25, 0.0);
    Tensor x = random_tensor({4, 16}, rng, 0.0f, 1.0f);
    RngState sample_rng(9);
    {
        GradTape tape;
        HybridLoss hl = hybrid_loss(m, x, {0, 1, 0, 1}, m.loss_cfg, sample_rng);
        backward(hl.total);
    }
    int dz1 = m.partition.dim_z1, trunk = m.mu_head.W.dim(1);
    const auto& gw = m.mu_head.W.grad();
    double z1_mass = 0, z2_mass = 0;
    for (int r = 0; r < m.partition.dim_z; ++r)
        for (int c = 0; c < trunk; ++c)
            (r < dz1 ? z1_mass : z2_mass) += std::abs(double(gw[size_t(r) * trunk + c]));
    CHECK(z1_mass > 0.0);
    CHECK(z2_mass > 0.0);
}

TEST_CASE("hybrid loss bookkeeping") {
    RngState rng(10);
    Tensor x;
    std::vector<int> y = {0, 1, 1};
    SUBCASE("lambda=0 excludes the ce component from the total") {
        ChromaModel m = tiny_model(rng, 8, 0.25, 0.0);
        x = random_tensor({3, 16}, rng, 0.0f, 1.0f);
        RngState r2(1);
        HybridLoss hl = hybrid_loss(m, x, y, m.loss_cfg, r2);
        CHECK(hl.total.item() == doctest::Approx(hl.recon + m.loss_cfg.beta * hl.kl).epsilon(1e-6));
        CHECK(hl.ce > 0.0);  // still reported
    }
    SUBCASE("total == recon + beta*kl + lambda*ce") {
        for (double beta : {0.5, 1.0, 5.0}) {
            ChromaModel m = tiny_model(rng, 8, 0.25, 7.0);
            m.loss_cfg.beta = beta;
            x = random_tensor({3, 16}, rng, 0.0f, 1.0f);
            RngState r2(2);
            HybridLoss hl = hybrid_loss(m, x, y, m.loss_cfg, r2);
            CHECK(hl.total.item() ==
                  doctest::Approx(hl.recon + beta * hl.kl + 7.0 * hl.ce).epsilon(1e-6));
            CHECK(hl.kl >= 0.0);
            CHECK(std::isfinite(hl.recon));
        }
    }
    SUBCASE("empty batch rejected") {
        ChromaModel m = tiny_model(rng);
        RngState r2(3);
        Tensor empty = Tensor::zeros({0, 16});
        CHECK_THROWS_AS(hybrid_loss(m, empty, {}, m.loss_cfg, r2), std::invalid_argument);
    }
}

TEST_CASE("full hybrid loss passes gradcheck with frozen noise") {
    RngState rng(11);
    ChromaModel m = tiny_model(rng, 4, 0.5, 3.0);
    // finite differences need a smooth network; relu kinks break them
    m.encoder.hidden = m.encoder.output = Act::tanh;
    m.decoder.hidden = Act::tanh;
    m.z1_classifier.hidden = Act::tanh;
    Tensor x = random_tensor({2, 16}, rng, 0.0f, 1.0f);
    std::vector<int> y = {0, 1};
    auto f = [&] {
        RngState frozen(123);  // same noise every evaluation
        return hybrid_loss(m, x, y, m.loss_cfg, frozen).total;
    };
    std::vector<Tensor*> params;
    for (auto& [name, t] : m.stage1_named_params()) params.push_back(t);
    auto rep = gradcheck(f, params, 1e-2, 1e-3);
    CHECK_MESSAGE(rep.pass, rep.summary());
}

TEST_CASE("hybrid loss with learned decoder variance passes gradcheck") {
    RngState rng(19);
    ChromaArch arch;
    arch.encoder_widths = {12};
    arch.decoder_widths = {12};
    arch.classifier_widths = {6};
    arch.activation = Act::tanh;
    HybridLossConfig cfg;
    cfg.lambda = 2.0;
    cfg.recon_variance = ReconVariance::learned;
    ChromaModel m = make_chroma_model(1, 3, 3, 2, PartitionSpec::make(4, 0.5), cfg, arch, rng);
    Tensor x = random_tensor({2, 9}, rng, 0.0f, 1.0f);
    std::vector<int> y = {1, 0};
    auto f = [&] {
        RngState frozen(77);
        return hybrid_loss(m, x, y, cfg, frozen).total;
    };
    std::vector<Tensor*> params;
    for (auto& [name, t] : m.stage1_named_params()) params.push_back(t);
    auto rep = gradcheck(f, params, 1e-2, 1e-3);
    CHECK_MESSAGE(rep.pass, rep.summary());
}

TEST_CASE("partial reconstructions: linear-decoder analytic oracle") {
    RngState rng(12);
    const int dim_z = 6, pixels = 5;
    ChromaModel m = linear_decoder_model(rng, dim_z, 0.5, pixels);
    // remove the bias so the mean is exactly W[:, kept] mu_kept
    std::fill(m.decoder.layers[0].b.data().begin(), m.decoder.layers[0].b.data().end(), 0.0f);
    Tensor x = random_tensor({1, pixels}, rng, 0.0f, 1.0f);
    LatentCode code = encode(m, x);
    const auto& W = m.decoder.layers[0].W;  // [pixels x dim_z]
    int dz1 = m.partition.dim_z1;

    const int n = 60000;
    RngState r1(13);
    Tensor s1 = partial_reconstruct_1(m, x, r1, n);
    RngState r2(14);
    Tensor s2 = partial_reconstruct_2(m, x, r2, n);
    for (int p = 0; p < pixels; ++p) {
        double mean1 = 0, mean2 = 0;
        for (int i = 0; i < n; ++i) {
            mean1 += s1.data()[size_t(i) * pixels + p];
            mean2 += s2.data()[size_t(i) * pixels + p];
        }
        mean1 /= n;
        mean2 /= n;
        double expect1 = 0, var1 = 0, expect2 = 0, var2 = 0;
        for (int j = 0; j < dim_z; ++j) {
            double w = W.data()[size_t(p) * dim_z + j];
            double mu = code.mu.data()[size_t(j)];
            if (j < dz1) {
                expect1 += w * mu;  // kept in x~1
                var2 += w * w;      // resampled in x~2
            } else {
                expect2 += w * mu;
                var1 += w * w;
            }
        }
        CHECK(std::abs(mean1 - expect1) < 3.0 * std::sqrt(var1 / n) + 1e-4);
        CHECK(std::abs(mean2 - expect2) < 3.0 * std::sqrt(var2 / n) + 1e-4);
    }
}

TEST_CASE("partial reconstructions: shape contracts and fresh noise") {
    RngState rng(15);
    ChromaModel m = tiny_model(rng);
    Tensor x = random_tensor({1, 16}, rng, 0.0f, 1.0f);
    RngState r(16);
    Tensor empty = partial_reconstruct_1(m, x, r, 0);
    CHECK(empty.shape() == Shape{0, 16});
    Tensor two = partial_reconstruct_2(m, x, r, 2);
    CHECK(two.shape() == Shape{2, 16});
    std::vector<float> row0(two.data().begin(), two.data().begin() + 16);
    std::vector<float> row1(two.data().begin() + 16, two.data().end());
    CHECK(row0 != row1);  // fresh noise per sample
}

TEST_CASE("reconstruct: deterministic flag uses the mean path") {
    RngState rng(17);
    ChromaModel m = tiny_model(rng);
    Tensor x = random_tensor({3, 16}, rng, 0.0f, 1.0f);
    RngState ra(1), rb(2);
    Tensor da = reconstruct(m, x, ra, true);
    Tensor db = reconstruct(m, x, rb, true);
    CHECK(da.shape() == x.shape());
    CHECK(da.data() == db.data());  // rng unused on the deterministic path
    RngState rc(3);
    Tensor sampled = reconstruct(m, x, rc, false);
    CHECK(sampled.data() != da.data());
}
