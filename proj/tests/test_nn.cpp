#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chroma/gradcheck.hpp>
#include <chroma/nn.hpp>
#include <chroma/rng.hpp>

#include <cmath>

using namespace chroma;

namespace {

Tensor random_tensor(Shape shape, RngState& rng, float lo = -1.0f, float hi = 1.0f) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (auto& v : t.data()) v = float(rng.uniform(lo, hi));
    return t;
}

}  // namespace

TEST_CASE("glorot init bounds and zero bias") {
    RngState rng(1);
    // 1 -> 1 layer: a = sqrt(6/2) = sqrt(3)
    for (int trial = 0; trial < 50; ++trial) {
        AffineLayer l = make_affine(1, 1, rng);
        CHECK(std::abs(l.W.data()[0]) <= std::sqrt(3.0f));
        CHECK(l.b.data()[0] == 0.0f);
    }
    AffineLayer wide = make_affine(30, 20, rng);
    float bound = std::sqrt(6.0f / 50.0f);
    for (float w : wide.W.data()) CHECK(std::abs(w) <= bound);
    for (float b : wide.b.data()) CHECK(b == 0.0f);
}

TEST_CASE("same seed, same init") {
    RngState r1(9), r2(9);
    Mlp a = make_mlp({5, 7, 3}, Act::relu, Act::identity, r1);
    Mlp b = make_mlp({5, 7, 3}, Act::relu, Act::identity, r2);
    for (size_t i = 0; i < a.layers.size(); ++i) {
        CHECK(a.layers[i].W.data() == b.layers[i].W.data());
        CHECK(a.layers[i].b.data() == b.layers[i].b.data());
    }
}

TEST_CASE("cross entropy: uniform logits, two classes") {
    Tensor logits = Tensor::zeros({4, 2});
    Tensor loss = softmax_cross_entropy(logits, {0, 1, 0, 1});
    CHECK(loss.item() == doctest::Approx(std::log(2.0)).epsilon(1e-6));
}

TEST_CASE("cross entropy: extreme logits stay finite") {
    Tensor logits = Tensor::from_data({1, 2}, {1000.0f, -1000.0f});
    Tensor loss = softmax_cross_entropy(logits, {0});
    CHECK(std::isfinite(loss.item()));
    CHECK(loss.item() == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("cross entropy: label out of range") {
    Tensor logits = Tensor::zeros({2, 3});
    CHECK_THROWS_AS(softmax_cross_entropy(logits, {0, 3}), std::logic_error);
}

TEST_CASE("cross entropy gradient matches finite differences") {
    RngState rng(4);
    Tensor logits = random_tensor({5, 3}, rng);
    std::vector<int> y = {0, 2, 1, 1, 0};
    auto rep = gradcheck([&] { return softmax_cross_entropy(logits, y); }, {&logits}, 1e-3, 1e-3);
    CHECK_MESSAGE(rep.pass, rep.summary());
}

TEST_CASE("cross entropy shift invariance") {
    RngState rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor logits = random_tensor({6, 4}, rng, -3.0f, 3.0f);
        std::vector<int> y;
        for (int i = 0; i < 6; ++i) y.push_back(int(rng.uniform_int(4)));
        float c = float(rng.uniform(-5.0, 5.0));
        double base = softmax_cross_entropy(logits, y).item();
        double shifted = softmax_cross_entropy(add(logits, c), y).item();
        CHECK(shifted == doctest::Approx(base).epsilon(1e-5));
    }
}

TEST_CASE("weighted cross entropy equals duplication for integer weights") {
    RngState rng(6);
    Tensor logits = random_tensor({3, 2}, rng);
    std::vector<int> y = {0, 1, 0};
    // duplicate example 1 three times
    std::vector<float> dup_rows;
    std::vector<int> dup_y;
    for (int i : {0, 1, 1, 1, 2}) {
        dup_rows.insert(dup_rows.end(), logits.data().begin() + i * 2, logits.data().begin() + (i + 1) * 2);
        dup_y.push_back(y[size_t(i)]);
    }
    Tensor dup_logits = Tensor::from_data({5, 2}, dup_rows);
    double weighted = weighted_softmax_cross_entropy(logits, y, {1.0f, 3.0f, 1.0f}).item();
    double duplicated = softmax_cross_entropy(dup_logits, dup_y).item();
    CHECK(weighted == doctest::Approx(duplicated).epsilon(1e-6));
}

TEST_CASE("gaussian_kl closed forms") {
    CHECK(gaussian_kl(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})).item() == doctest::Approx(0.0));
    // mu=1, logvar=0, d=1 -> 0.5
    CHECK(gaussian_kl(Tensor::filled({1, 1}, 1.0f), Tensor::zeros({1, 1})).item() == doctest::Approx(0.5));
}

TEST_CASE("gaussian_kl nonnegative on random inputs, zero only at the prior") {
    RngState rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor mu = random_tensor({3, 5}, rng, -2.0f, 2.0f);
        Tensor lv = random_tensor({3, 5}, rng, -2.0f, 2.0f);
        double kl = gaussian_kl(mu, lv).item();
        CHECK(kl >= -1e-6);
        bool at_prior = true;
        for (float v : mu.data()) at_prior = at_prior && std::abs(v) < 1e-7;
        for (float v : lv.data()) at_prior = at_prior && std::abs(v) < 1e-7;
        if (!at_prior) CHECK(kl > 1e-6);
    }
    Tensor mu = random_tensor({2, 3}, rng), lv = random_tensor({2, 3}, rng);
    auto rep = gradcheck([&] { return gaussian_kl(mu, lv); }, {&mu, &lv}, 1e-3, 1e-3);
    CHECK_MESSAGE(rep.pass, rep.summary());
}

TEST_CASE("recon nll: zero residual leaves the constant") {
    Tensor x = Tensor::filled({2, 6}, 0.3f);
    Tensor mu = Tensor::filled({2, 6}, 0.3f);
    double v = gaussian_recon_nll(x, mu).item();
    CHECK(v / 6.0 == doctest::Approx(kHalfLog2Pi).epsilon(1e-6));  // per-pixel 0.5 log 2pi
}

TEST_CASE("recon nll: doubling the residual quadruples the quadratic term") {
    Tensor x = Tensor::zeros({1, 4});
    Tensor mu1 = Tensor::filled({1, 4}, 0.1f);
    Tensor mu2 = Tensor::filled({1, 4}, 0.2f);
    double c = 4.0 * kHalfLog2Pi;
    double q1 = gaussian_recon_nll(x, mu1).item() - c;
    double q2 = gaussian_recon_nll(x, mu2).item() - c;
    CHECK(q2 == doctest::Approx(4.0 * q1).epsilon(1e-4));
}

TEST_CASE("recon nll gradient: (mu - x)/B under fixed variance, FD-checked") {
    RngState rng(9);
    Tensor x = random_tensor({3, 4}, rng, 0.0f, 1.0f);
    Tensor mu = random_tensor({3, 4}, rng, 0.0f, 1.0f);
    mu.set_requires_grad();
    {
        GradTape tape;
        backward(gaussian_recon_nll(x, mu));
    }
    for (size_t i = 0; i < mu.numel(); ++i)
        CHECK(mu.grad()[i] == doctest::Approx((mu.data()[i] - x.data()[i]) / 3.0f).epsilon(1e-5));
    auto rep = gradcheck([&] { return gaussian_recon_nll(x, mu); }, {&mu}, 1e-3, 1e-3);
    CHECK_MESSAGE(rep.pass, rep.summary());
}

TEST_CASE("recon nll with learned variance, FD-checked") {
    RngState rng(10);
    Tensor x = random_tensor({2, 3}, rng, 0.0f, 1.0f);
    Tensor mu = random_tensor({2, 3}, rng, 0.0f, 1.0f);
    Tensor lv = random_tensor({2, 3}, rng, -1.0f, 1.0f);
    auto rep = gradcheck([&] { return gaussian_recon_nll(x, mu, lv); }, {&mu, &lv}, 1e-3, 1e-3);
    CHECK_MESSAGE(rep.pass, rep.summary());
}

TEST_CASE("affine gradcheck") {
    RngState rng(11);
    AffineLayer l = make_affine(4, 3, rng);
    Tensor x = random_tensor({2, 4}, rng).set_requires_grad();
    auto rep = gradcheck([&] { return sum(tanh(affine(x, l))); }, {&x, &l.W, &l.b}, 1e-3, 1e-3);
    CHECK_MESSAGE(rep.pass, rep.summary());
}

TEST_CASE("adam: zero gradients leave parameters unchanged") {
    RngState rng(12);
    AffineLayer l = make_affine(3, 3, rng);
    auto before = l.W.data();
    std::vector<Tensor*> params{&l.W, &l.b};
    AdamState st(AdamConfig{0.01f});
    st.init(params);
    l.W.node()->grad.assign(l.W.numel(), 0.0f);
    l.b.node()->grad.assign(l.b.numel(), 0.0f);
    adam_step(params, st);
    CHECK(l.W.data() == before);
}

TEST_CASE("adam: first step magnitude is about lr for constant gradient") {
    Tensor p = Tensor::filled({4}, 1.0f).set_requires_grad();
    p.node()->grad.assign(4, 0.37f);
    std::vector<Tensor*> params{&p};
    AdamState st(AdamConfig{0.01f});
    st.init(params);
    adam_step(params, st);
    for (float v : p.data()) CHECK(v == doctest::Approx(1.0f - 0.01f).epsilon(1e-3));
}

TEST_CASE("adam: lr=0 is the identity") {
    RngState rng(13);
    Tensor p = random_tensor({5}, rng).set_requires_grad();
    auto before = p.data();
    p.node()->grad.assign(5, 0.5f);
    std::vector<Tensor*> params{&p};
    AdamState st(AdamConfig{0.0f});
    st.init(params);
    for (int i = 0; i < 3; ++i) adam_step(params, st);
    CHECK(p.data() == before);
}

TEST_CASE("adam: NaN gradient aborts naming the parameter") {
    Tensor p = Tensor::filled({2}, 1.0f).set_requires_grad();
    p.node()->grad = {0.1f, std::nanf("")};
    std::vector<Tensor*> params{&p};
    std::vector<std::string> names{"decoder.layer0.W"};
    AdamState st;
    st.init(params);
    CHECK_THROWS_WITH_AS(adam_step(params, st, &names), doctest::Contains("decoder.layer0.W"),
                         std::runtime_error);
}

TEST_CASE("adam determinism across runs") {
    auto run = [] {
        RngState rng(14);
        Mlp m = make_mlp({6, 8, 2}, Act::relu, Act::identity, rng);
        auto params = m.params();
        AdamState st(AdamConfig{1e-3f});
        st.init(params);
        Tensor x = Tensor::zeros({4, 6});
        for (auto& v : x.data()) v = float(rng.uniform(0, 1));
        std::vector<int> y = {0, 1, 1, 0};
        for (int step = 0; step < 20; ++step) {
            zero_grads(params);
            GradTape tape;
            backward(softmax_cross_entropy(m.forward(x), y));
            adam_step(params, st);
        }
        return m.layers[0].W.data();
    };
    CHECK(run() == run());
}

TEST_CASE("knn basics") {
    // three points on a line, labels 0,0,1
    Tensor train = Tensor::from_data({3, 1}, {0.0f, 1.0f, 5.0f});
    std::vector<int> labels = {0, 0, 1};
    CHECK(knn_classify(train, labels, Tensor::from_data({1}, {5.0f}), 1) == 1);
    CHECK(knn_classify(train, labels, Tensor::from_data({1}, {0.9f}), 1) == 0);
    // k = N on a balanced set: tie broken toward the lower class index
    Tensor bal = Tensor::from_data({4, 1}, {0.0f, 1.0f, 2.0f, 3.0f});
    CHECK(knn_classify(bal, {1, 0, 1, 0}, Tensor::from_data({1}, {1.5f}), 4) == 0);
    CHECK_THROWS_AS(knn_classify(train, labels, Tensor::from_data({1}, {0.0f}), 0), std::logic_error);
    CHECK_THROWS_AS(knn_classify(train, labels, Tensor::from_data({1}, {0.0f}), 4), std::logic_error);
    CHECK_THROWS_AS(knn_classify(nullptr, 0, 1, {}, nullptr, 1), std::logic_error);
}

TEST_CASE("knn default k is floor(sqrt(N))") {
    CHECK(knn_default_k(50000) == 223);
    CHECK(knn_default_k(100) == 10);
    CHECK(knn_default_k(2) == 1);
}

TEST_CASE("knn is invariant to training-set permutation, including distance ties") {
    RngState rng(15);
    const int n = 40, d = 3;
    Tensor train = Tensor::zeros({n, d});
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) {
        labels[size_t(i)] = int(rng.uniform_int(3));
        // quantized coordinates force exact distance ties
        for (int j = 0; j < d; ++j) train.data()[size_t(i) * d + j] = float(rng.uniform_int(3));
    }
    Tensor query = Tensor::from_data({d}, {1.0f, 1.0f, 1.0f});
    for (int k : {1, 5, 17, 40}) {
        int base = knn_classify(train, labels, query, k);
        for (int trial = 0; trial < 10; ++trial) {
            auto perm = rng.permutation(n);
            Tensor shuffled = Tensor::zeros({n, d});
            std::vector<int> shuffled_labels(n);
            for (int i = 0; i < n; ++i) {
                shuffled_labels[size_t(i)] = labels[size_t(perm[size_t(i)])];
                for (int j = 0; j < d; ++j)
                    shuffled.data()[size_t(i) * d + j] = train.data()[size_t(perm[size_t(i)]) * d + j];
            }
            CHECK(knn_classify(shuffled, shuffled_labels, query, k) == base);
        }
    }
}
