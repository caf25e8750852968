#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "confide/checkpoint.hpp"
#include "confide/dataset.hpp"
#include "confide/eval.hpp"
#include "confide/model.hpp"

using namespace confide;
using namespace confide::eval;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / "confide_eval_tests" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string fixture_dataset(FamilyId family, const std::string& name, int n, uint64_t seed) {
    fs::path p = fs::temp_directory_path() / "confide_eval_tests" / name;
    fs::remove_all(p);
    data::SamplingSpec s;
    s.gp = data::default_gp(family);
    s.n_signals = n;
    s.seed = seed;
    const GridSpec grid =
        family == FamilyId::Fn2d ? GridSpec::fn2d_default() : GridSpec::line_default();
    data::generate_dataset(p.string(), family, grid, s, 1);
    return p.string();
}

const std::string& const_ds() {
    static const std::string dir =
        fixture_dataset(FamilyId::ConstantCoeff, "const12", 12, 91);
    return dir;
}

const std::string& burgers_ds() {
    static const std::string dir = fixture_dataset(FamilyId::Burgers, "burgers10", 10, 92);
    return dir;
}

const std::string& fn2d_ds() {
    static const std::string dir = fixture_dataset(FamilyId::Fn2d, "fn6", 6, 93);
    return dir;
}

model::TrainConfig tiny_cfg(uint64_t seed) {
    model::TrainConfig c;
    c.d_z = 16;
    c.enc_hidden = {64};
    c.dec_hidden = {64};
    c.est_hidden = {32, 32};
    c.head_hidden = {32, 32};
    c.max_epochs = 4;
    c.patience = 50;
    c.seed = seed;
    return c;
}

// Zero the last linear layer of the named sub-network so it emits its bias.
void pin_output(model::ConfideModel& m, const std::string& prefix,
                const std::vector<double>& bias) {
    std::map<std::string, Tensor*> pm;
    for (auto& [name, t] : m.named_params()) pm[name] = t;
    int last = 0;
    while (pm.count(prefix + ".w" + std::to_string(last + 1))) ++last;
    Tensor* w = pm.at(prefix + ".w" + std::to_string(last));
    Tensor* b = pm.at(prefix + ".b" + std::to_string(last));
    w->fill(0.0);
    REQUIRE(b->data.size() == bias.size());
    b->data = bias;
}

// Constant-coefficient model whose estimator always reports (0.5, 0.25, 0.1).
model::ConfideModel pinned_const_model(const data::Dataset& ds) {
    model::ConfideModel m = model::ConfideModel::init(ds.family(), ds.grid(), tiny_cfg(7));
    pin_output(m, "shead", {0.5, 0.25, 0.1});
    return m;
}

Signal decaying_signal() {
    GridSpec g = GridSpec::line_default();
    Signal s = Signal::zeros(g, g.nt + 1);
    for (int j = 0; j <= g.nt; ++j) {
        double* row = s.slice(0, j);
        for (int p = 0; p < g.points_x(); ++p)
            row[p] = std::exp(-0.04 * j) * std::sin(0.3 * p);
    }
    return s;
}

int line_count(const std::string& text) {
    return static_cast<int>(std::count(text.begin(), text.end(), '\n'));
}

}  // namespace

TEST_CASE("slice mse and rollout curve basics") {
    const Signal a = decaying_signal();
    Signal b = a;

    CHECK(slice_mse(a, 0, a, 0) == 0.0);
    CHECK(slice_mse(a, 3, b, 3) == 0.0);
    CHECK(slice_mse(a, 3, b, 7) == slice_mse(b, 7, a, 3));

    const std::vector<double> zero_curve = rollout_mse_curve(a, b, 20);
    CHECK(static_cast<int>(zero_curve.size()) == a.n_slices() - 20);
    for (double v : zero_curve) CHECK(v == 0.0);

    for (double& v : b.fields[0].data) v += 0.1;
    const std::vector<double> shifted = rollout_mse_curve(b, a, 20);
    for (double v : shifted) CHECK(v == doctest::Approx(0.01).epsilon(1e-12));

    GridSpec other = GridSpec::line_default();
    other.nx = 20;
    CHECK_THROWS_AS(slice_mse(a, 0, Signal::zeros(other, 3), 0), std::invalid_argument);
    CHECK_THROWS_AS(rollout_mse_curve(a, a, 0), std::invalid_argument);
    CHECK_THROWS_AS(rollout_mse_curve(a, a, a.n_slices()), std::invalid_argument);
}

TEST_CASE("persistence freezes the last context slice") {
    const Signal truth = decaying_signal();
    const int n_ctx = 20;
    const Signal pers = persistence_prediction(truth, n_ctx);

    for (int j = 0; j < n_ctx; ++j) CHECK(slice_mse(pers, j, truth, j) == 0.0);
    for (int j = n_ctx; j < truth.n_slices(); ++j)
        CHECK(slice_mse(pers, j, truth, n_ctx - 1) == 0.0);

    // the materialized curve must match the direct slice comparison
    const std::vector<double> curve = rollout_mse_curve(pers, truth, n_ctx);
    for (size_t h = 0; h < curve.size(); ++h)
        CHECK(curve[h] ==
              slice_mse(truth, n_ctx - 1, truth, n_ctx + static_cast<int>(h)));

    // on a monotonically decaying signal the persistence error keeps growing
    for (size_t h = 1; h < curve.size(); ++h) CHECK(curve[h] > curve[h - 1]);

    CHECK_THROWS_AS(persistence_prediction(truth, 0), std::invalid_argument);
}

TEST_CASE("pad prediction repeats the last slice") {
    const Signal full = decaying_signal();
    Signal cut = Signal::zeros(full.grid, 30);
    for (int j = 0; j < 30; ++j)
        std::copy_n(full.slice(0, j), full.grid.space_size(), cut.slice(0, j));

    const Signal padded = pad_prediction(cut, full.n_slices());
    CHECK(padded.n_slices() == full.n_slices());
    for (int j = 0; j < 30; ++j) CHECK(slice_mse(padded, j, full, j) == 0.0);
    for (int j = 30; j < padded.n_slices(); ++j) CHECK(slice_mse(padded, j, cut, 29) == 0.0);

    // already long enough: returned unchanged
    const Signal same = pad_prediction(full, full.n_slices());
    CHECK(slice_mse(same, 80, full, 80) == 0.0);
}

TEST_CASE("r2 and aggregate") {
    const std::vector<double> t = {0.2, 0.5, 1.1, 1.7};

    R2Result perfect = r2_of(t, t);
    CHECK(perfect.defined);
    CHECK(perfect.r2 == doctest::Approx(1.0));

    const double mean = (0.2 + 0.5 + 1.1 + 1.7) / 4.0;
    R2Result at_mean = r2_of(t, {mean, mean, mean, mean});
    CHECK(at_mean.defined);
    CHECK(at_mean.r2 == doctest::Approx(0.0));

    R2Result undef = r2_of({1.0, 1.0, 1.0}, {0.9, 1.0, 1.1});
    CHECK_FALSE(undef.defined);

    CHECK_THROWS_AS(r2_of({1.0}, {1.0}), std::invalid_argument);
    CHECK_THROWS_AS(r2_of({1.0, 2.0}, {1.0}), std::invalid_argument);

    Aggregate a = aggregate({1.0, 2.0, 3.0, 4.0});
    CHECK(a.n == 4);
    CHECK(a.mean == doctest::Approx(2.5));
    CHECK(a.stdev == doctest::Approx(std::sqrt(1.25)));
    CHECK(aggregate({}).n == 0);
}

TEST_CASE("coefficient error on analytic cases") {
    const Signal sig = decaying_signal();

    CoefficientEstimate truth;
    truth.family = FamilyId::ConstantCoeff;
    truth.scalars = {1.0, 0.5, -0.3};

    CoefParts zero = coefficient_error(truth, truth, sig, 20);
    CHECK(zero.overall == 0.0);
    CHECK(zero.scalar == 0.0);
    CHECK_FALSE(zero.has_head);
    CHECK(std::isnan(zero.head));

    CoefficientEstimate off = truth;
    for (double& s : off.scalars) s += 0.1;
    CoefParts shifted = coefficient_error(off, truth, sig, 20);
    CHECK(shifted.scalar == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(shifted.overall == doctest::Approx(0.01).epsilon(1e-12));

    // burgers: the head error is averaged over visited states, so a constant
    // offset of 0.2 lands exactly on 0.04
    CoefficientEstimate bt;
    bt.family = FamilyId::Burgers;
    bt.scalars = {0.8};
    bt.b_head = [](double u) { return -u; };
    CoefficientEstimate be = bt;
    be.scalars = {0.9};
    be.b_head = [](double u) { return -u + 0.2; };
    CoefParts bp = coefficient_error(be, bt, sig, 20);
    CHECK(bp.has_head);
    CHECK(bp.scalar == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(bp.head == doctest::Approx(0.04).epsilon(1e-12));
    CHECK(bp.overall == doctest::Approx(0.025).epsilon(1e-12));

    // fn2d
    Signal two = Signal::zeros(GridSpec::fn2d_default(), 25);
    CoefficientEstimate ft;
    ft.family = FamilyId::Fn2d;
    ft.scalars = {0.015};
    ft.rv_head = [](double u, double v) { return u - v; };
    CoefficientEstimate fe = ft;
    fe.rv_head = [](double u, double v) { return u - v + 0.1; };
    CoefParts fp = coefficient_error(fe, ft, two, 20);
    CHECK(fp.scalar == 0.0);
    CHECK(fp.head == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(fp.overall == doctest::Approx(0.005).epsilon(1e-12));

    CoefficientEstimate wrong = truth;
    wrong.family = FamilyId::Burgers;
    CHECK_THROWS_AS(coefficient_error(wrong, truth, sig, 20), std::invalid_argument);
    CoefficientEstimate headless = bt;
    headless.b_head = nullptr;
    CHECK_THROWS_AS(coefficient_error(headless, bt, sig, 20), std::invalid_argument);
}

TEST_CASE("evaluate on a pinned constant-coefficient model") {
    const data::Dataset ds = data::Dataset::open(const_ds());
    const data::TruthSidecar truth = data::TruthSidecar::open(const_ds());
    const model::ConfideModel m = pinned_const_model(ds);

    const EvalReport rep = evaluate(m, ds, &truth);
    CHECK(rep.family == FamilyId::ConstantCoeff);
    CHECK(rep.variant == "confide");
    CHECK(rep.split == "test");
    CHECK(rep.n_ctx == 20);
    CHECK(rep.n_signals == 2);
    CHECK(rep.n_incomplete == 0);
    CHECK(rep.dt == doctest::Approx(0.05));
    CHECK(rep.signals.size() == 2);
    CHECK(rep.signals[0].id == 10);
    CHECK(rep.signals[1].id == 11);

    const int horizon = ds.grid().nt + 1 - rep.n_ctx;
    CHECK(static_cast<int>(rep.curve_mean.size()) == horizon);
    CHECK(static_cast<int>(rep.signals[0].curve.size()) == horizon);

    // spot-check signal 10 against a manual rerun of the same pipeline
    const Signal s10 = ds.signal(10);
    const model::InferResult inf = m.infer(s10);
    const Signal pred = pad_prediction(inf.prediction, s10.n_slices());
    const std::vector<double> manual = rollout_mse_curve(pred, s10, rep.n_ctx);
    CHECK(rep.signals[0].final_mse == manual.back());
    CHECK(rep.signals[0].curve[0] == manual[0]);
    CHECK(rep.signals[0].final_pers == slice_mse(s10, 19, s10, ds.grid().nt));

    CHECK(rep.final_mse.n == 2);
    CHECK(rep.final_mse.mean ==
          doctest::Approx(0.5 * (rep.signals[0].final_mse + rep.signals[1].final_mse))
              .epsilon(1e-15));
    CHECK(rep.improvement_vs_persistence ==
          doctest::Approx(rep.pers_final.mean / rep.final_mse.mean));
    CHECK(std::isfinite(rep.mean_over_horizon));

    // coefficient side: pinned estimator vs. per-signal truths
    CHECK(rep.has_coef);
    CHECK_FALSE(rep.has_head);
    CHECK(rep.scalar_names == std::vector<std::string>{"a", "b", "c"});
    CHECK(rep.scalar_r2.size() == 3);
    for (int i = 0; i < 2; ++i) {
        const CoefficientEstimate t = truth.truth_estimate(rep.signals[i].id);
        CHECK(rep.signals[i].has_coef);
        CHECK(rep.signals[i].scalar_truth == t.scalars);
        CHECK(rep.signals[i].scalar_est == std::vector<double>{0.5, 0.25, 0.1});
        double acc = 0.0;
        for (int k = 0; k < 3; ++k) {
            const double d = t.scalars[k] - rep.signals[i].scalar_est[k];
            acc += d * d;
        }
        CHECK(rep.signals[i].coef.overall == doctest::Approx(acc / 3.0).epsilon(1e-14));
    }
    CHECK(rep.head_field.empty());
}

TEST_CASE("evaluate is permutation and thread-count invariant") {
    const data::Dataset ds = data::Dataset::open(const_ds());
    const data::TruthSidecar truth = data::TruthSidecar::open(const_ds());
    const model::ConfideModel m = pinned_const_model(ds);

    const EvalReport base = evaluate(m, ds, &truth);

    EvalOptions rev;
    rev.ids = {11, 10};
    const EvalReport perm = evaluate(m, ds, &truth, rev);
    CHECK(perm.signals[0].id == 11);
    CHECK(perm.final_mse.mean == base.final_mse.mean);
    CHECK(perm.final_mse.stdev == base.final_mse.stdev);
    CHECK(perm.pers_final.mean == base.pers_final.mean);
    CHECK(perm.coef_overall.mean == base.coef_overall.mean);
    CHECK(perm.coef_overall.stdev == base.coef_overall.stdev);
    for (size_t h = 0; h < base.curve_mean.size(); ++h)
        CHECK(perm.curve_mean[h] == base.curve_mean[h]);

    EvalOptions two;
    two.jobs = 2;
    const EvalReport par = evaluate(m, ds, &truth, two);
    CHECK(par.final_mse.mean == base.final_mse.mean);
    CHECK(par.coef_overall.mean == base.coef_overall.mean);
    for (size_t h = 0; h < base.curve_mean.size(); ++h)
        CHECK(par.curve_mean[h] == base.curve_mean[h]);

    CHECK_THROWS_AS(evaluate(m, ds, &truth, EvalOptions{"nope", {}, 1}),
                    std::invalid_argument);
}

TEST_CASE("evaluate without truth or estimator yields prediction metrics only") {
    const data::Dataset ds = data::Dataset::open(const_ds());
    const model::ConfideModel m = pinned_const_model(ds);

    const EvalReport no_truth = evaluate(m, ds, nullptr);
    CHECK_FALSE(no_truth.has_coef);
    CHECK(no_truth.final_mse.n == 2);

    model::TrainConfig c0 = tiny_cfg(8);
    c0.variant = model::Variant::Confide0;
    model::ConfideModel mz = model::ConfideModel::init(ds.family(), ds.grid(), c0);
    pin_output(mz, "mnet", std::vector<double>(ds.grid().slice_size(), 0.0));
    const data::TruthSidecar truth = data::TruthSidecar::open(const_ds());
    const EvalReport zero = evaluate(mz, ds, &truth);
    CHECK_FALSE(zero.has_coef);
    CHECK(zero.variant == "confide0");
    // a zero time-derivative network is exactly the persistence baseline
    CHECK(zero.final_mse.mean == doctest::Approx(zero.pers_final.mean).epsilon(1e-12));
}

TEST_CASE("evaluate on a pinned burgers model emits head fields") {
    const data::Dataset ds = data::Dataset::open(burgers_ds());
    const data::TruthSidecar truth = data::TruthSidecar::open(burgers_ds());

    model::ConfideModel m = model::ConfideModel::init(ds.family(), ds.grid(), tiny_cfg(9));
    pin_output(m, "shead", {0.7});
    pin_output(m, "head.rest", {0.25});

    const EvalReport rep = evaluate(m, ds, &truth);
    CHECK(rep.n_signals == 1);
    CHECK(rep.signals[0].id == 9);
    CHECK(rep.has_coef);
    CHECK(rep.has_head);
    CHECK(rep.scalar_names == std::vector<std::string>{"a"});
    CHECK(std::isfinite(rep.coef_head.mean));

    const int space = ds.grid().space_size();
    CHECK(static_cast<int>(rep.head_field.size()) == 3 * space);
    const Signal s9 = ds.signal(9);
    for (const HeadFieldRow& row : rep.head_field) {
        CHECK(row.truth == doctest::Approx(-row.u).epsilon(1e-12));
        CHECK(row.est == doctest::Approx(0.25).epsilon(1e-12));
        CHECK(row.v == 0.0);
        CHECK(row.u == s9.slice(0, row.slice)[row.point]);
    }
    CHECK(rep.head_field.front().slice == 0);
    CHECK(rep.head_field.back().slice == ds.grid().nt);
}

TEST_CASE("evaluate on a pinned fn2d model") {
    const data::Dataset ds = data::Dataset::open(fn2d_ds());
    const data::TruthSidecar truth = data::TruthSidecar::open(fn2d_ds());

    model::TrainConfig c = tiny_cfg(11);
    c.d_z = 32;
    c.conv_c1 = 4;
    c.conv_c2 = 8;
    c.dense_hidden = 64;
    model::ConfideModel m = model::ConfideModel::init(ds.family(), ds.grid(), c);
    pin_output(m, "shead", {0.0});
    pin_output(m, "head.rest", {0.0});

    const EvalReport rep = evaluate(m, ds, &truth);
    CHECK(rep.n_signals == 2);
    CHECK(rep.n_incomplete == 0);
    CHECK(static_cast<int>(rep.curve_mean.size()) == ds.grid().nt + 1 - rep.n_ctx);
    CHECK(rep.has_head);
    CHECK(rep.scalar_names == std::vector<std::string>{"k"});

    // rv head rows carry both state fields
    bool saw_v = false;
    for (const HeadFieldRow& row : rep.head_field) {
        if (row.v != 0.0) saw_v = true;
        CHECK(row.truth == doctest::Approx(row.u - row.v).epsilon(1e-12));
        CHECK(row.est == doctest::Approx(0.0).epsilon(1e-12));
    }
    CHECK(saw_v);
    CHECK(static_cast<int>(rep.head_field.size()) == 3 * ds.grid().space_size());
}

TEST_CASE("ablation runner shares identical cells and validates sizes") {
    const data::Dataset ds = data::Dataset::open(const_ds());
    const data::TruthSidecar truth = data::TruthSidecar::open(const_ds());

    model::TrainConfig base = tiny_cfg(13);
    base.max_epochs = 2;

    AblationRunner runner(ds, truth, base);
    const std::vector<AblationCell> sizes = runner.train_size({4, 9});
    REQUIRE(sizes.size() == 2);
    CHECK(sizes[0].label == "4");
    CHECK(sizes[1].label == "9");
    for (const AblationCell& c : sizes) {
        CHECK(std::isfinite(c.pred_final));
        CHECK(std::isfinite(c.coef_error));
        CHECK(c.epochs == 2);
    }

    // rho 0.2 over the full train split is the same cell as size 9; a fresh
    // runner must agree with the memoized value bit for bit
    const std::vector<AblationCell> rhos = runner.context_ratio({0.2});
    REQUIRE(rhos.size() == 1);
    CHECK(rhos[0].pred_final == sizes[1].pred_final);
    CHECK(rhos[0].coef_error == sizes[1].coef_error);

    AblationRunner fresh(ds, truth, base);
    const std::vector<AblationCell> again = fresh.context_ratio({0.2});
    CHECK(again[0].pred_final == sizes[1].pred_final);
    CHECK(again[0].coef_error == sizes[1].coef_error);

    const std::vector<AblationCell> var = runner.autoencoder();
    REQUIRE(var.size() == 3);
    CHECK(var[0].label == "confide");
    CHECK(var[1].label == "ae-ic");
    CHECK(var[2].label == "no-ae");
    CHECK(var[0].pred_final == sizes[1].pred_final);
    CHECK(var[1].pred_final != var[0].pred_final);

    CHECK_THROWS_AS(runner.train_size({10}), std::invalid_argument);
    CHECK_THROWS_AS(runner.train_size({0}), std::invalid_argument);

    // priming makes memo hits observable: a sentinel cell is returned as-is
    // instead of being retrained
    AblationRunner primed(ds, truth, base);
    AblationCell sentinel;
    sentinel.pred_final = -123.0;
    sentinel.coef_error = -456.0;
    primed.prime(base, 9, sentinel);
    const std::vector<AblationCell> hit = primed.train_size({9});
    CHECK(hit[0].pred_final == -123.0);
    CHECK(hit[0].coef_error == -456.0);
    CHECK(hit[0].label == "9");
}

TEST_CASE("report files are schema-valid, complete and byte-stable") {
    const data::Dataset ds = data::Dataset::open(const_ds());
    const data::TruthSidecar truth = data::TruthSidecar::open(const_ds());
    const model::ConfideModel m = pinned_const_model(ds);
    const EvalReport rep = evaluate(m, ds, &truth);

    const fs::path dir = scratch_dir("report_const");
    const nlohmann::json prov = {{"command", "eval"}, {"seed", 7}};
    write_report(dir.string(), rep, prov);

    const nlohmann::json doc = nlohmann::json::parse(io::read_file((dir / "metrics.json").string()));
    std::string err;
    CHECK(validate_schema(doc, report_schema(), &err));
    CHECK(err.empty());
    CHECK(doc["schema"] == "confide-report-v1");
    CHECK(doc["family"] == "constant");
    CHECK(doc["n_signals"] == 2);
    CHECK(doc["prediction"]["final_mse_mean"].get<double>() ==
          doctest::Approx(rep.final_mse.mean));
    CHECK(doc["coefficients"]["head_mean"].is_null());
    CHECK(doc["coefficients"]["r2"].size() == 3);
    CHECK(nlohmann::json::parse(io::read_file((dir / "provenance.json").string())) == prov);

    const std::string curve = io::read_file((dir / "horizon_curve.csv").string());
    CHECK(line_count(curve) == 1 + ds.grid().nt + 1 - rep.n_ctx);
    CHECK(curve.rfind("horizon,t,mse_mean,mse_std,persistence_mean,persistence_std\n", 0) == 0);
    CHECK(curve.find("\n1,1,") != std::string::npos);  // first horizon lands at t = 1

    const std::string scatter = io::read_file((dir / "scatter.csv").string());
    CHECK(line_count(scatter) == 1 + 3 * 2);
    CHECK(scatter.find("a,10,") != std::string::npos);
    CHECK(scatter.find("c,11,") != std::string::npos);
    CHECK_FALSE(fs::exists(dir / "coef_field.csv"));

    // byte-stable across rewrites
    const std::string m1 = io::read_file((dir / "metrics.json").string());
    write_report(dir.string(), rep, prov);
    CHECK(io::read_file((dir / "metrics.json").string()) == m1);
    CHECK(io::read_file((dir / "horizon_curve.csv").string()) == curve);
    CHECK(io::read_file((dir / "scatter.csv").string()) == scatter);

    // the shipped schema file is the embedded document
    const nlohmann::json shipped = nlohmann::json::parse(
        io::read_file(std::string(CONFIDE_SOURCE_DIR) + "/schemas/report.schema.json"));
    CHECK(shipped == report_schema());
}

TEST_CASE("burgers report ships the coefficient field csv") {
    const data::Dataset ds = data::Dataset::open(burgers_ds());
    const data::TruthSidecar truth = data::TruthSidecar::open(burgers_ds());
    model::ConfideModel m = model::ConfideModel::init(ds.family(), ds.grid(), tiny_cfg(9));
    pin_output(m, "shead", {0.7});
    pin_output(m, "head.rest", {0.25});
    const EvalReport rep = evaluate(m, ds, &truth);

    const fs::path dir = scratch_dir("report_burgers");
    write_report(dir.string(), rep, nlohmann::json::object());

    const std::string field = io::read_file((dir / "coef_field.csv").string());
    CHECK(line_count(field) == 1 + 3 * ds.grid().space_size());
    CHECK(field.rfind("slice,point,u,v,truth,estimate\n", 0) == 0);

    const nlohmann::json doc =
        nlohmann::json::parse(io::read_file((dir / "metrics.json").string()));
    std::string err;
    CHECK(validate_schema(doc, report_schema(), &err));
    CHECK(doc["coefficients"]["head_mean"].is_number());
    CHECK(doc["coefficients"]["r2"].contains("a"));
}

TEST_CASE("confide0 metrics omit coefficients but stay schema-valid") {
    const data::Dataset ds = data::Dataset::open(const_ds());
    model::TrainConfig c0 = tiny_cfg(8);
    c0.variant = model::Variant::Confide0;
    model::ConfideModel mz = model::ConfideModel::init(ds.family(), ds.grid(), c0);
    pin_output(mz, "mnet", std::vector<double>(ds.grid().slice_size(), 0.0));

    const EvalReport rep = evaluate(mz, ds, nullptr);
    const nlohmann::json doc = metrics_json(rep);
    CHECK_FALSE(doc.contains("coefficients"));
    std::string err;
    CHECK(validate_schema(doc, report_schema(), &err));
}

TEST_CASE("ablation csv layout and percentage columns") {
    std::vector<AblationCell> cells(3);
    cells[0] = {"300", 0.2, 0.4, 0, 12};
    cells[1] = {"1000", 0.1, 0.3, 1, 15};
    cells[2] = {"3000", 0.05, 0.1, 0, 20};

    const fs::path dir = scratch_dir("ablation_csv");
    const std::string path = (dir / "ablation_train_size.csv").string();
    write_ablation_csv(path, "train_size", cells, true);
    const std::string text = io::read_file(path);
    CHECK(line_count(text) == 4);
    CHECK(text.rfind("train_size,pred_final_mse,coef_error,n_incomplete,epochs,"
                     "pred_pct_vs_first,coef_pct_vs_first\n",
                     0) == 0);
    CHECK(text.find("\n1000,") != std::string::npos);
    CHECK(text.find(",-50,") != std::string::npos);    // 0.1 vs 0.2
    CHECK(text.find(",-75\n") != std::string::npos);   // 0.1 vs 0.4

    write_ablation_csv(path, "train_size", cells, true);
    CHECK(io::read_file(path) == text);

    const std::string bare = (dir / "bare.csv").string();
    write_ablation_csv(bare, "rho", {cells[0]}, false);
    CHECK(io::read_file(bare).find("pct") == std::string::npos);
}

TEST_CASE("schema validator flags structural violations") {
    const nlohmann::json schema = report_schema();

    nlohmann::json doc = {{"schema", "confide-report-v1"},
                          {"family", "constant"},
                          {"variant", "confide"},
                          {"split", "test"},
                          {"n_ctx", 20},
                          {"n_signals", 2},
                          {"n_incomplete", 0},
                          {"prediction",
                           {{"final_mse_mean", 0.1},
                            {"final_mse_std", 0.0},
                            {"mean_over_horizon", 0.1},
                            {"persistence_final_mse_mean", 0.5},
                            {"persistence_final_mse_std", 0.0},
                            {"improvement_vs_persistence", nullptr}}}};
    std::string err;
    CHECK(validate_schema(doc, schema, &err));

    nlohmann::json bad_family = doc;
    bad_family["family"] = "navier-stokes";
    CHECK_FALSE(validate_schema(bad_family, schema, &err));
    CHECK(err.find("family") != std::string::npos);

    nlohmann::json missing = doc;
    missing.erase("prediction");
    CHECK_FALSE(validate_schema(missing, schema, &err));
    CHECK(err.find("prediction") != std::string::npos);

    nlohmann::json wrong_type = doc;
    wrong_type["n_ctx"] = "twenty";
    CHECK_FALSE(validate_schema(wrong_type, schema, &err));
    CHECK(err.find("n_ctx") != std::string::npos);

    nlohmann::json deep = doc;
    deep["prediction"]["final_mse_mean"] = "large";
    CHECK_FALSE(validate_schema(deep, schema, &err));

    // items handling
    const nlohmann::json arr_schema = {{"type", "array"}, {"items", {{"type", "integer"}}}};
    CHECK(validate_schema(nlohmann::json::array({1, 2, 3}), arr_schema, &err));
    CHECK_FALSE(validate_schema(nlohmann::json::array({1, "x"}), arr_schema, &err));
}
