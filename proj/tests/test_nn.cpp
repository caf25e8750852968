#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "confide/adam.hpp"
#include "confide/checkpoint.hpp"
#include "confide/nn.hpp"
#include "confide/rng.hpp"

#include "support/gradcheck.hpp"

using namespace confide;
using namespace confide::nn;
using confide::testing::gradcheck_max_rel_err;
using confide::opt::Adam;
using confide::opt::AdamConfig;

TEST_CASE("mlp spec stacking and validation") {
    MlpSpec spec = MlpSpec::stack(10, 32, 2, 3);
    CHECK(spec.widths == std::vector<int>{10, 32, 32, 3});
    CHECK(spec.in() == 10);
    CHECK(spec.out() == 3);
    CHECK(spec.n_layers() == 3);
    MlpSpec bad;
    bad.widths = {4};
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("mlp with hand-set weights matches a hand computation") {
    MlpSpec spec;
    spec.widths = {2, 2, 1};
    Rng rng(1);
    MlpParams p = MlpParams::init(spec, rng);
    // W0 = [[1,0],[0,1]], b0 = [1,-5]; W1 = [[2],[3]], b1 = [0.5]
    p.w[0].data = {1, 0, 0, 1};
    p.b[0].data = {1, -5};
    p.w[1].data = {2, 3};
    p.b[1].data = {0.5};

    Tensor x({1, 2}, std::vector<double>{2.0, 3.0});
    // layer0: [3, -2] -> relu -> [3, 0]; layer1: 3*2 + 0*3 + 0.5 = 6.5
    Tensor y = p.forward_value(x);
    CHECK(y.shape == std::vector<int>{1, 1});
    CHECK(y.data[0] == doctest::Approx(6.5).epsilon(1e-15));
}

TEST_CASE("graph forward equals value forward") {
    MlpSpec spec = MlpSpec::stack(5, 16, 2, 4);
    Rng rng(7);
    MlpParams p = MlpParams::init(spec, rng);
    Tensor x({3, 5});
    for (double& v : x.data) v = rng.uniform(-1.0, 1.0);

    Tensor by_value = p.forward_value(x);

    ad::Graph g;
    MlpVars vars = p.register_in(g);
    ad::Var xv = g.constant(x);
    ad::Var yv = p.forward(g, vars, xv);
    const Tensor& by_graph = g.value(yv);

    REQUIRE(by_graph.shape == by_value.shape);
    for (size_t i = 0; i < by_value.data.size(); ++i)
        CHECK(by_graph.data[i] == doctest::Approx(by_value.data[i]).epsilon(1e-14));
}

TEST_CASE("init is deterministic and seed-sensitive") {
    MlpSpec spec = MlpSpec::stack(8, 16, 1, 2);
    Rng a(5), b(5), c(6);
    MlpParams pa = MlpParams::init(spec, a);
    MlpParams pb = MlpParams::init(spec, b);
    MlpParams pc = MlpParams::init(spec, c);
    for (size_t l = 0; l < pa.w.size(); ++l) {
        CHECK(pa.w[l].data == pb.w[l].data);
        CHECK(pa.w[l].data != pc.w[l].data);
    }
}

TEST_CASE("kaiming bounds are respected") {
    MlpSpec spec = MlpSpec::stack(100, 50, 1, 10);
    Rng rng(9);
    MlpParams p = MlpParams::init(spec, rng);
    const double bound0 = std::sqrt(6.0 / 100.0);
    for (double v : p.w[0].data) CHECK(std::abs(v) <= bound0);
    const double bbound0 = 1.0 / std::sqrt(100.0);
    for (double v : p.b[0].data) CHECK(std::abs(v) <= bbound0);
}

TEST_CASE("gradcheck through a full mlp") {
    MlpSpec spec = MlpSpec::stack(4, 8, 2, 3);
    Rng rng(17);
    MlpParams p = MlpParams::init(spec, rng);
    Tensor x({2, 4});
    for (double& v : x.data) v = rng.uniform(0.2, 1.0);

    std::vector<Tensor> leaves;
    leaves.push_back(x);
    for (const Tensor& t : p.w) leaves.push_back(t);
    for (const Tensor& t : p.b) leaves.push_back(t);

    Tensor proj({2, 3});
    for (double& v : proj.data) v = rng.uniform(-1.0, 1.0);

    auto build = [&](ad::Graph& g, const std::vector<ad::Var>& vs) {
        MlpVars vars;
        const size_t nl = p.w.size();
        for (size_t l = 0; l < nl; ++l) vars.w.push_back(vs[1 + l]);
        for (size_t l = 0; l < nl; ++l) vars.b.push_back(vs[1 + nl + l]);
        ad::Var y = p.forward(g, vars, vs[0]);
        ad::Var c = g.constant(proj);
        return g.sum(g.mul(y, c));
    };
    CHECK(gradcheck_max_rel_err(leaves, build) < 1e-4);
}

TEST_CASE("named params cover every layer") {
    MlpSpec spec = MlpSpec::stack(4, 8, 1, 2);
    Rng rng(3);
    MlpParams p = MlpParams::init(spec, rng);
    auto named = p.named_params("enc");
    CHECK(named.size() == 4);
    CHECK(named[0].first == "enc.w0");
    CHECK(named[3].first == "enc.b1");
}

TEST_CASE("conv layer shapes round-trip the fn2d geometry") {
    Rng rng(8);
    Conv2dLayer conv = Conv2dLayer::init(2, 16, 3, 3, 2, 1, rng);
    CHECK(conv.k.shape == std::vector<int>{16, 2, 3, 3});
    Tensor x({4, 2, 32, 32});
    for (double& v : x.data) v = rng.uniform(-1.0, 1.0);
    Tensor y = conv.forward_value(x);
    CHECK(y.shape == std::vector<int>{4, 16, 16, 16});
    CHECK(y.all_finite());

    Deconv2dLayer dec = Deconv2dLayer::init(16, 2, 3, 3, 2, 1, 1, rng);
    Tensor z = dec.forward_value(y);
    CHECK(z.shape == std::vector<int>{4, 2, 32, 32});
}

TEST_CASE("adam: zero gradient leaves parameters untouched") {
    const std::vector<double> init{1, 2, 3, 4};
    Tensor w({2, 2}, init);
    Adam opt({&w}, AdamConfig{});
    Tensor g({2, 2});
    CHECK(opt.step({&g}));
    for (size_t i = 0; i < 4; ++i) CHECK(w.data[i] == doctest::Approx(init[i]).epsilon(1e-15));
}

TEST_CASE("adam: first step matches the closed form") {
    // with constant grad g, mhat = g and vhat = g^2 exactly at t=1, so the
    // first update is -lr * g / (|g| + eps)
    Tensor w({1, 3}, std::vector<double>{0.0, 10.0, -4.0});
    AdamConfig cfg;
    cfg.lr = 0.5;
    Adam opt({&w}, cfg);
    Tensor g({1, 3}, std::vector<double>{0.2, -3.0, 0.001});
    REQUIRE(opt.step({&g}));
    const double expect[3] = {0.0 - 0.5 * 0.2 / (0.2 + cfg.eps),
                              10.0 + 0.5 * 3.0 / (3.0 + cfg.eps),
                              -4.0 - 0.5 * 0.001 / (0.001 + cfg.eps)};
    for (int i = 0; i < 3; ++i) CHECK(w.data[static_cast<size_t>(i)] == doctest::Approx(expect[i]).epsilon(1e-12));
}

TEST_CASE("adam: matches a scalar reference over many steps") {
    // independent scalar implementation of the update rule
    double m = 0.0, v = 0.0, wref = 1.0;
    AdamConfig cfg;
    Tensor w({1, 1}, std::vector<double>{1.0});
    Adam opt({&w}, cfg);
    Rng rng(23);
    for (int t = 1; t <= 500; ++t) {
        const double grad = rng.uniform(-1.0, 1.0);
        m = cfg.beta1 * m + (1 - cfg.beta1) * grad;
        v = cfg.beta2 * v + (1 - cfg.beta2) * grad * grad;
        const double mhat = m / (1 - std::pow(cfg.beta1, t));
        const double vhat = v / (1 - std::pow(cfg.beta2, t));
        wref -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);

        Tensor g({1, 1}, std::vector<double>{grad});
        REQUIRE(opt.step({&g}));
        CHECK(w.data[0] == doctest::Approx(wref).epsilon(1e-12));
    }
    CHECK(opt.steps_taken() == 500);
}

TEST_CASE("adam: descends a quadratic") {
    Tensor w({1, 1}, std::vector<double>{5.0});
    AdamConfig cfg;
    cfg.lr = 0.05;
    Adam opt({&w}, cfg);
    for (int t = 0; t < 1000; ++t) {
        Tensor g({1, 1}, std::vector<double>{2.0 * w.data[0]});
        REQUIRE(opt.step({&g}));
    }
    CHECK(std::abs(w.data[0]) < 0.05);
}

TEST_CASE("adam: non-finite gradient is rejected atomically") {
    Tensor w({1, 2}, std::vector<double>{1.0, 2.0});
    Adam opt({&w}, AdamConfig{});
    Tensor good({1, 2}, std::vector<double>{0.1, 0.1});
    REQUIRE(opt.step({&good}));
    const std::vector<double> snapshot = w.data;
    const int steps = opt.steps_taken();

    Tensor bad({1, 2}, std::vector<double>{0.1, std::nan("")});
    CHECK_FALSE(opt.step({&bad}));
    CHECK(w.data == snapshot);
    CHECK(opt.steps_taken() == steps);

    // optimizer remains usable and continues the same moment trajectory
    REQUIRE(opt.step({&good}));
    CHECK(opt.steps_taken() == steps + 1);
}

TEST_CASE("adam: shape mismatch throws") {
    Tensor w({2, 2});
    Adam opt({&w}, AdamConfig{});
    Tensor g({2, 3});
    CHECK_THROWS_AS(opt.step({&g}), std::invalid_argument);
}

TEST_CASE("checkpoint bytes round-trip exactly") {
    Tensor a({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
    Tensor b({4}, std::vector<double>{0.25, -0.5, 0.125, 8});
    nlohmann::json meta;
    meta["family"] = "constant";
    meta["d_z"] = 64;

    auto bytes = io::checkpoint_bytes(meta, {{"enc.w0", &a}, {"enc.b0", &b}});
    io::Checkpoint ck = io::parse_checkpoint(bytes);
    CHECK(ck.meta["family"] == "constant");
    CHECK(ck.meta["d_z"] == 64);
    CHECK(ck.tensor("enc.w0").shape == a.shape);
    CHECK(ck.tensor("enc.w0").data == a.data);
    CHECK(ck.tensor("enc.b0").data == b.data);
    CHECK(ck.has("enc.b0"));
    CHECK_FALSE(ck.has("dec.w0"));
    CHECK_THROWS_AS(ck.tensor("dec.w0"), std::runtime_error);

    // values above were chosen f32-exact, so a rewrite is byte-identical
    auto again = io::checkpoint_bytes(ck.meta, {{"enc.w0", &ck.tensor("enc.w0")},
                                                {"enc.b0", &ck.tensor("enc.b0")}});
    CHECK(again == bytes);
}

TEST_CASE("checkpoint f32 quantization is idempotent") {
    Rng rng(77);
    Tensor a({8, 8});
    for (double& v : a.data) v = rng.normal();
    auto bytes1 = io::checkpoint_bytes({}, {{"p", &a}});
    io::Checkpoint ck1 = io::parse_checkpoint(bytes1);
    auto bytes2 = io::checkpoint_bytes({}, {{"p", &ck1.tensor("p")}});
    CHECK(bytes1 == bytes2);
}

TEST_CASE("checkpoint rejects corruption") {
    Tensor a({2}, std::vector<double>{1, 2});
    auto bytes = io::checkpoint_bytes({}, {{"p", &a}});

    auto flipped = bytes;
    flipped[flipped.size() / 2] ^= 0x01;
    CHECK_THROWS(io::parse_checkpoint(flipped));

    auto truncated = bytes;
    truncated.resize(truncated.size() - 3);
    CHECK_THROWS(io::parse_checkpoint(truncated));

    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS(io::parse_checkpoint(bad_magic));
}

TEST_CASE("checkpoint file save and load") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "confide_ck_test";
    fs::create_directories(dir);
    const std::string path = (dir / "model.ckpt").string();

    Tensor a({3}, std::vector<double>{1.5, 2.5, 3.5});
    nlohmann::json meta;
    meta["variant"] = "confide";
    io::save_checkpoint(path, meta, {{"w", &a}});
    io::Checkpoint ck = io::load_checkpoint(path);
    CHECK(ck.meta["variant"] == "confide");
    CHECK(ck.tensor("w").data == a.data);
    fs::remove_all(dir);
}
