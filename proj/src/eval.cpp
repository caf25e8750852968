#include "confide/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <mutex>
#include <set>
#include <stdexcept>
#include <thread>

#include "confide/checkpoint.hpp"

namespace confide::eval {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

std::string fmt_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt_label(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

// Runs fn(0..n-1) on up to `jobs` threads; rethrows the first failure.
void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
    if (jobs <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr first_error;
    std::mutex err_mu;
    auto worker = [&] {
        for (;;) {
            const int i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mu);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    const int n_threads = std::min(jobs, n);
    pool.reserve(static_cast<size_t>(n_threads));
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace

double slice_mse(const Signal& a, int ja, const Signal& b, int jb) {
    if (!a.grid.same_as(b.grid)) throw std::invalid_argument("slice_mse: grid mismatch");
    const int space = a.grid.space_size();
    double acc = 0.0;
    for (int f = 0; f < a.grid.fields; ++f) {
        const double* pa = a.slice(f, ja);
        const double* pb = b.slice(f, jb);
        for (int p = 0; p < space; ++p) {
            const double d = pa[p] - pb[p];
            acc += d * d;
        }
    }
    return acc / (static_cast<double>(a.grid.fields) * space);
}

std::vector<double> rollout_mse_curve(const Signal& pred, const Signal& truth, int n_ctx) {
    if (pred.n_slices() != truth.n_slices())
        throw std::invalid_argument("rollout_mse_curve: slice count mismatch");
    if (n_ctx < 1 || n_ctx >= truth.n_slices())
        throw std::invalid_argument("rollout_mse_curve: bad context length");
    std::vector<double> out;
    out.reserve(static_cast<size_t>(truth.n_slices() - n_ctx));
    for (int j = n_ctx; j < truth.n_slices(); ++j) out.push_back(slice_mse(pred, j, truth, j));
    return out;
}

Signal persistence_prediction(const Signal& truth, int n_ctx) {
    if (n_ctx < 1 || n_ctx > truth.n_slices())
        throw std::invalid_argument("persistence: bad context length");
    Signal out = Signal::zeros(truth.grid, truth.n_slices());
    const int space = truth.grid.space_size();
    for (int f = 0; f < truth.grid.fields; ++f) {
        for (int j = 0; j < n_ctx; ++j) std::copy_n(truth.slice(f, j), space, out.slice(f, j));
        for (int j = n_ctx; j < truth.n_slices(); ++j)
            std::copy_n(truth.slice(f, n_ctx - 1), space, out.slice(f, j));
    }
    return out;
}

Signal pad_prediction(const Signal& pred, int n_slices) {
    if (pred.n_slices() < 1) throw std::invalid_argument("pad_prediction: empty prediction");
    if (pred.n_slices() >= n_slices) return pred;
    Signal out = Signal::zeros(pred.grid, n_slices);
    const int space = pred.grid.space_size();
    const int last = pred.n_slices() - 1;
    for (int f = 0; f < pred.grid.fields; ++f) {
        for (int j = 0; j <= last; ++j) std::copy_n(pred.slice(f, j), space, out.slice(f, j));
        for (int j = last + 1; j < n_slices; ++j)
            std::copy_n(pred.slice(f, last), space, out.slice(f, j));
    }
    return out;
}

R2Result r2_of(const std::vector<double>& truth, const std::vector<double>& est) {
    if (truth.size() != est.size() || truth.size() < 2)
        throw std::invalid_argument("r2: need >= 2 paired samples");
    double mean = 0.0;
    for (double t : truth) mean += t;
    mean /= static_cast<double>(truth.size());
    double ss_tot = 0.0, ss_res = 0.0;
    for (size_t i = 0; i < truth.size(); ++i) {
        ss_tot += (truth[i] - mean) * (truth[i] - mean);
        ss_res += (est[i] - truth[i]) * (est[i] - truth[i]);
    }
    R2Result r;
    if (ss_tot == 0.0) return r;  // undefined
    r.defined = true;
    r.r2 = 1.0 - ss_res / ss_tot;
    return r;
}

Aggregate aggregate(const std::vector<double>& xs) {
    Aggregate a;
    a.n = static_cast<int>(xs.size());
    if (xs.empty()) return a;
    for (double x : xs) a.mean += x;
    a.mean /= a.n;
    double var = 0.0;
    for (double x : xs) var += (x - a.mean) * (x - a.mean);
    a.stdev = std::sqrt(var / a.n);
    return a;
}

CoefParts coefficient_error(const CoefficientEstimate& est, const CoefficientEstimate& truth,
                            const Signal& sig, int n_ctx) {
    if (est.family != truth.family) throw std::invalid_argument("coefficient_error: family mix");
    if (est.scalars.size() != truth.scalars.size())
        throw std::invalid_argument("coefficient_error: scalar arity mismatch");
    CoefParts out;
    out.head = kNan;

    double ssum = 0.0;
    for (size_t i = 0; i < est.scalars.size(); ++i) {
        const double d = est.scalars[i] - truth.scalars[i];
        ssum += d * d;
    }
    out.scalar = ssum / static_cast<double>(est.scalars.size());

    const bool burgers_head = static_cast<bool>(truth.b_head);
    const bool rv_head = static_cast<bool>(truth.rv_head);
    if (burgers_head || rv_head) {
        if (burgers_head && !est.b_head)
            throw std::invalid_argument("coefficient_error: estimate lacks the b head");
        if (rv_head && !est.rv_head)
            throw std::invalid_argument("coefficient_error: estimate lacks the rv head");
        const int space = sig.grid.space_size();
        double hsum = 0.0;
        int64_t count = 0;
        for (int j = 0; j < n_ctx; ++j) {
            const double* u = sig.slice(0, j);
            const double* v = rv_head ? sig.slice(1, j) : nullptr;
            for (int p = 0; p < space; ++p) {
                const double d = burgers_head
                                     ? est.b_head(u[p]) - truth.b_head(u[p])
                                     : est.rv_head(u[p], v[p]) - truth.rv_head(u[p], v[p]);
                hsum += d * d;
                ++count;
            }
        }
        out.head = hsum / static_cast<double>(count);
        out.has_head = true;
        out.overall = 0.5 * (out.scalar + out.head);
    } else {
        out.overall = out.scalar;
    }
    return out;
}

EvalReport evaluate(const model::ConfideModel& m, const data::Dataset& ds,
                    const data::TruthSidecar* truth, const EvalOptions& opt) {
    std::vector<int> ids = opt.ids.empty() ? ds.split_indices(opt.split) : opt.ids;
    if (ids.empty()) throw std::invalid_argument("evaluate: no signals in split " + opt.split);

    EvalReport rep;
    rep.family = m.family();
    rep.variant = model::variant_name(m.config().variant);
    rep.split = opt.split;
    rep.n_ctx = m.n_ctx();
    rep.n_signals = static_cast<int>(ids.size());
    rep.dt = ds.grid().dt;
    rep.scalar_names = family_info(m.family()).scalar_names;
    rep.signals.resize(ids.size());

    const int n_ctx = m.n_ctx();
    parallel_for(static_cast<int>(ids.size()), opt.jobs, [&](int i) {
        const int id = ids[static_cast<size_t>(i)];
        const Signal sig = ds.signal(id);
        SignalRecord rec;
        rec.id = id;

        model::InferResult inf = m.infer(sig);
        rec.complete = inf.complete;
        const Signal pred = pad_prediction(inf.prediction, sig.n_slices());
        rec.curve = rollout_mse_curve(pred, sig, n_ctx);
        rec.final_mse = rec.curve.back();

        rec.curve_pers.reserve(rec.curve.size());
        for (int j = n_ctx; j < sig.n_slices(); ++j)
            rec.curve_pers.push_back(slice_mse(sig, n_ctx - 1, sig, j));
        rec.final_pers = rec.curve_pers.back();

        if (truth != nullptr && inf.has_estimate) {
            const CoefficientEstimate t = truth->truth_estimate(id);
            rec.coef = coefficient_error(inf.estimate, t, sig, n_ctx);
            rec.has_coef = true;
            rec.scalar_truth = t.scalars;
            rec.scalar_est = inf.estimate.scalars;
        }
        rep.signals[static_cast<size_t>(i)] = std::move(rec);
    });

    // aggregates, in id order
    const size_t H = rep.signals.front().curve.size();
    std::vector<double> col(rep.signals.size());
    rep.curve_mean.resize(H);
    rep.curve_std.resize(H);
    rep.pers_curve_mean.resize(H);
    rep.pers_curve_std.resize(H);
    for (size_t h = 0; h < H; ++h) {
        for (size_t i = 0; i < rep.signals.size(); ++i) col[i] = rep.signals[i].curve[h];
        const Aggregate a = aggregate(col);
        rep.curve_mean[h] = a.mean;
        rep.curve_std[h] = a.stdev;
        for (size_t i = 0; i < rep.signals.size(); ++i) col[i] = rep.signals[i].curve_pers[h];
        const Aggregate p = aggregate(col);
        rep.pers_curve_mean[h] = p.mean;
        rep.pers_curve_std[h] = p.stdev;
    }
    for (size_t i = 0; i < rep.signals.size(); ++i) col[i] = rep.signals[i].final_mse;
    rep.final_mse = aggregate(col);
    for (size_t i = 0; i < rep.signals.size(); ++i) col[i] = rep.signals[i].final_pers;
    rep.pers_final = aggregate(col);
    rep.mean_over_horizon = aggregate(rep.curve_mean).mean;
    rep.improvement_vs_persistence =
        rep.final_mse.mean > 0.0 ? rep.pers_final.mean / rep.final_mse.mean : kNan;
    for (const SignalRecord& r : rep.signals)
        if (!r.complete) ++rep.n_incomplete;

    rep.has_coef = std::all_of(rep.signals.begin(), rep.signals.end(),
                               [](const SignalRecord& r) { return r.has_coef; });
    if (rep.has_coef) {
        std::vector<double> ov, sc, hd;
        for (const SignalRecord& r : rep.signals) {
            ov.push_back(r.coef.overall);
            sc.push_back(r.coef.scalar);
            if (r.coef.has_head) hd.push_back(r.coef.head);
        }
        rep.coef_overall = aggregate(ov);
        rep.coef_scalar = aggregate(sc);
        rep.has_head = hd.size() == rep.signals.size();
        rep.coef_head = rep.has_head ? aggregate(hd) : Aggregate{kNan, kNan, 0};

        const size_t n_sc = rep.scalar_names.size();
        for (size_t k = 0; k < n_sc; ++k) {
            std::vector<double> ts, es;
            for (const SignalRecord& r : rep.signals) {
                ts.push_back(r.scalar_truth[k]);
                es.push_back(r.scalar_est[k]);
            }
            rep.scalar_r2.push_back(rep.signals.size() >= 2 ? r2_of(ts, es) : R2Result{});
        }

        // figure-style head-field data from one fixed signal
        if (rep.has_head) {
            const int id = *std::min_element(ids.begin(), ids.end());
            const Signal sig = ds.signal(id);
            const CoefficientEstimate t = truth->truth_estimate(id);
            const CoefficientEstimate e = m.estimate(m.encode(Patch::from_signal(sig, 0, n_ctx)));
            const int mid = (sig.n_slices() - 1) / 2;
            const int space = sig.grid.space_size();
            for (int j : {0, mid, sig.n_slices() - 1}) {
                const double* u = sig.slice(0, j);
                const double* v = sig.grid.fields > 1 ? sig.slice(1, j) : nullptr;
                for (int p = 0; p < space; ++p) {
                    HeadFieldRow row;
                    row.slice = j;
                    row.point = p;
                    row.u = u[p];
                    if (v != nullptr) {
                        row.v = v[p];
                        row.truth = t.rv_head(u[p], v[p]);
                        row.est = e.rv_head(u[p], v[p]);
                    } else {
                        row.truth = t.b_head(u[p]);
                        row.est = e.b_head(u[p]);
                    }
                    rep.head_field.push_back(row);
                }
            }
        }
    }
    return rep;
}

// ---------------------------------------------------------------------------

AblationRunner::AblationRunner(const data::Dataset& ds, const data::TruthSidecar& truth,
                               model::TrainConfig base, int jobs)
    : ds_(ds), truth_(truth), base_(std::move(base)), jobs_(std::max(1, jobs)) {}

AblationCell AblationRunner::run_cell(const model::TrainConfig& cfg, int n_train) {
    const std::vector<int> all_train = ds_.split_indices("train");
    if (n_train < 1 || n_train > static_cast<int>(all_train.size()))
        throw std::invalid_argument("ablation: train subset of " + std::to_string(n_train) +
                                    " exceeds the train split");
    std::vector<int> ids(all_train.begin(), all_train.begin() + n_train);

    model::ConfideModel m = model::ConfideModel::init(ds_.family(), ds_.grid(), cfg);
    const model::TrainResult res = m.train(ds_, ids, ds_.split_indices("val"));

    EvalOptions opt;
    opt.split = "test";
    const EvalReport rep = evaluate(m, ds_, &truth_, opt);

    AblationCell cell;
    cell.pred_final = rep.final_mse.mean;
    cell.coef_error = rep.has_coef ? rep.coef_overall.mean : kNan;
    cell.n_incomplete = rep.n_incomplete;
    cell.epochs = res.epochs;
    return cell;
}

std::vector<AblationCell> AblationRunner::run_cells(const std::vector<std::string>& labels,
                                                    const std::vector<model::TrainConfig>& cfgs,
                                                    const std::vector<int>& n_trains) {
    const int n = static_cast<int>(labels.size());
    std::vector<std::string> keys(labels.size());
    std::vector<int> pending;
    std::set<std::string> queued;
    for (int i = 0; i < n; ++i) {
        keys[static_cast<size_t>(i)] =
            cfgs[static_cast<size_t>(i)].to_json().dump() + "#" +
            std::to_string(n_trains[static_cast<size_t>(i)]);
        if (!memo_.count(keys[static_cast<size_t>(i)]) &&
            queued.insert(keys[static_cast<size_t>(i)]).second)
            pending.push_back(i);
    }

    std::vector<AblationCell> fresh(pending.size());
    parallel_for(static_cast<int>(pending.size()), jobs_, [&](int pi) {
        const int i = pending[static_cast<size_t>(pi)];
        fresh[static_cast<size_t>(pi)] =
            run_cell(cfgs[static_cast<size_t>(i)], n_trains[static_cast<size_t>(i)]);
    });
    for (size_t pi = 0; pi < pending.size(); ++pi)
        memo_[keys[static_cast<size_t>(pending[pi])]] = fresh[pi];

    std::vector<AblationCell> out;
    out.reserve(labels.size());
    for (int i = 0; i < n; ++i) {
        AblationCell cell = memo_.at(keys[static_cast<size_t>(i)]);
        cell.label = labels[static_cast<size_t>(i)];
        out.push_back(std::move(cell));
    }
    return out;
}

void AblationRunner::prime(const model::TrainConfig& cfg, int n_train,
                           const AblationCell& cell) {
    memo_[cfg.to_json().dump() + "#" + std::to_string(n_train)] = cell;
}

std::vector<AblationCell> AblationRunner::train_size(const std::vector<int>& sizes) {
    std::vector<std::string> labels;
    std::vector<model::TrainConfig> cfgs;
    std::vector<int> n_trains;
    for (int s : sizes) {
        labels.push_back(std::to_string(s));
        cfgs.push_back(base_);
        n_trains.push_back(s);
    }
    return run_cells(labels, cfgs, n_trains);
}

std::vector<AblationCell> AblationRunner::context_ratio(const std::vector<double>& rhos) {
    const int full = static_cast<int>(ds_.split_indices("train").size());
    std::vector<std::string> labels;
    std::vector<model::TrainConfig> cfgs;
    std::vector<int> n_trains;
    for (double r : rhos) {
        labels.push_back(fmt_label(r));
        model::TrainConfig c = base_;
        c.rho = r;
        cfgs.push_back(c);
        n_trains.push_back(full);
    }
    return run_cells(labels, cfgs, n_trains);
}

std::vector<AblationCell> AblationRunner::autoencoder() {
    const int full = static_cast<int>(ds_.split_indices("train").size());
    std::vector<std::string> labels;
    std::vector<model::TrainConfig> cfgs;
    std::vector<int> n_trains;
    for (model::Variant v :
         {model::Variant::Confide, model::Variant::AeIc, model::Variant::NoAe}) {
        labels.push_back(model::variant_name(v));
        model::TrainConfig c = base_;
        c.variant = v;
        cfgs.push_back(c);
        n_trains.push_back(full);
    }
    return run_cells(labels, cfgs, n_trains);
}

// ---------------------------------------------------------------------------

nlohmann::json metrics_json(const EvalReport& r) {
    nlohmann::json j;
    j["schema"] = "confide-report-v1";
    j["family"] = family_name(r.family);
    j["variant"] = r.variant;
    j["split"] = r.split;
    j["n_ctx"] = r.n_ctx;
    j["n_signals"] = r.n_signals;
    j["n_incomplete"] = r.n_incomplete;
    j["prediction"] = {{"final_mse_mean", r.final_mse.mean},
                       {"final_mse_std", r.final_mse.stdev},
                       {"mean_over_horizon", r.mean_over_horizon},
                       {"persistence_final_mse_mean", r.pers_final.mean},
                       {"persistence_final_mse_std", r.pers_final.stdev},
                       {"improvement_vs_persistence", r.improvement_vs_persistence}};
    if (r.has_coef) {
        nlohmann::json c = {{"overall_mean", r.coef_overall.mean},
                            {"overall_std", r.coef_overall.stdev},
                            {"scalar_mean", r.coef_scalar.mean},
                            {"scalar_std", r.coef_scalar.stdev},
                            {"head_mean", r.has_head ? nlohmann::json(r.coef_head.mean)
                                                     : nlohmann::json(nullptr)},
                            {"head_std", r.has_head ? nlohmann::json(r.coef_head.stdev)
                                                    : nlohmann::json(nullptr)}};
        nlohmann::json r2 = nlohmann::json::object();
        for (size_t k = 0; k < r.scalar_names.size(); ++k)
            r2[r.scalar_names[k]] = r.scalar_r2[k].defined ? nlohmann::json(r.scalar_r2[k].r2)
                                                           : nlohmann::json(nullptr);
        c["r2"] = r2;
        j["coefficients"] = c;
    }
    return j;
}

void write_report(const std::string& dir, const EvalReport& r,
                  const nlohmann::json& provenance) {
    io::ensure_dir(dir);
    io::write_file(dir + "/metrics.json", metrics_json(r).dump(2) + "\n");
    io::write_file(dir + "/provenance.json", provenance.dump(2) + "\n");

    std::string curve = "horizon,t,mse_mean,mse_std,persistence_mean,persistence_std\n";
    for (size_t h = 0; h < r.curve_mean.size(); ++h) {
        const double t = (r.n_ctx + static_cast<double>(h)) * r.dt;
        curve += std::to_string(h + 1) + "," + fmt_g(t) + "," + fmt_g(r.curve_mean[h]) + "," +
                 fmt_g(r.curve_std[h]) + "," + fmt_g(r.pers_curve_mean[h]) + "," +
                 fmt_g(r.pers_curve_std[h]) + "\n";
    }
    io::write_file(dir + "/horizon_curve.csv", curve);

    if (r.has_coef) {
        std::string sc = "scalar,signal_id,truth,estimate\n";
        for (size_t k = 0; k < r.scalar_names.size(); ++k)
            for (const SignalRecord& s : r.signals)
                sc += r.scalar_names[k] + "," + std::to_string(s.id) + "," +
                      fmt_g(s.scalar_truth[k]) + "," + fmt_g(s.scalar_est[k]) + "\n";
        io::write_file(dir + "/scatter.csv", sc);
    }
    if (!r.head_field.empty()) {
        std::string hf = "slice,point,u,v,truth,estimate\n";
        for (const HeadFieldRow& row : r.head_field)
            hf += std::to_string(row.slice) + "," + std::to_string(row.point) + "," +
                  fmt_g(row.u) + "," + fmt_g(row.v) + "," + fmt_g(row.truth) + "," +
                  fmt_g(row.est) + "\n";
        io::write_file(dir + "/coef_field.csv", hf);
    }
}

void write_ablation_csv(const std::string& path, const std::string& key_column,
                        const std::vector<AblationCell>& cells, bool pct_vs_first) {
    std::string out = key_column + ",pred_final_mse,coef_error,n_incomplete,epochs";
    if (pct_vs_first) out += ",pred_pct_vs_first,coef_pct_vs_first";
    out += "\n";
    for (const AblationCell& c : cells) {
        out += c.label + "," + fmt_g(c.pred_final) + "," + fmt_g(c.coef_error) + "," +
               std::to_string(c.n_incomplete) + "," + std::to_string(c.epochs);
        if (pct_vs_first) {
            const AblationCell& base = cells.front();
            const double pp = base.pred_final != 0.0
                                  ? 100.0 * (c.pred_final - base.pred_final) / base.pred_final
                                  : kNan;
            const double cp = base.coef_error != 0.0
                                  ? 100.0 * (c.coef_error - base.coef_error) / base.coef_error
                                  : kNan;
            out += "," + fmt_g(pp) + "," + fmt_g(cp);
        }
        out += "\n";
    }
    io::write_file(path, out);
}

nlohmann::json report_schema() {
    static const char* kSchema = R"JSON({
  "$schema": "http://json-schema.org/draft-07/schema#",
  "title": "confide evaluation report",
  "type": "object",
  "required": ["schema", "family", "variant", "split", "n_ctx", "n_signals",
               "n_incomplete", "prediction"],
  "properties": {
    "schema": {"type": "string", "enum": ["confide-report-v1"]},
    "family": {"type": "string", "enum": ["constant", "burgers", "fn2d"]},
    "variant": {"type": "string", "enum": ["confide", "ae-ic", "no-ae", "confide0"]},
    "split": {"type": "string"},
    "n_ctx": {"type": "integer"},
    "n_signals": {"type": "integer"},
    "n_incomplete": {"type": "integer"},
    "prediction": {
      "type": "object",
      "required": ["final_mse_mean", "final_mse_std", "mean_over_horizon",
                   "persistence_final_mse_mean", "persistence_final_mse_std",
                   "improvement_vs_persistence"],
      "properties": {
        "final_mse_mean": {"type": "number"},
        "final_mse_std": {"type": "number"},
        "mean_over_horizon": {"type": "number"},
        "persistence_final_mse_mean": {"type": "number"},
        "persistence_final_mse_std": {"type": "number"},
        "improvement_vs_persistence": {"type": ["number", "null"]}
      }
    },
    "coefficients": {
      "type": "object",
      "required": ["overall_mean", "overall_std", "scalar_mean", "scalar_std",
                   "head_mean", "head_std", "r2"],
      "properties": {
        "overall_mean": {"type": "number"},
        "overall_std": {"type": "number"},
        "scalar_mean": {"type": "number"},
        "scalar_std": {"type": "number"},
        "head_mean": {"type": ["number", "null"]},
        "head_std": {"type": ["number", "null"]},
        "r2": {"type": "object"}
      }
    }
  }
})JSON";
    return nlohmann::json::parse(kSchema);
}

namespace {

bool type_matches(const nlohmann::json& doc, const std::string& type) {
    if (type == "object") return doc.is_object();
    if (type == "array") return doc.is_array();
    if (type == "string") return doc.is_string();
    if (type == "integer") return doc.is_number_integer();
    if (type == "number") return doc.is_number();
    if (type == "boolean") return doc.is_boolean();
    if (type == "null") return doc.is_null();
    return false;
}

bool validate_node(const nlohmann::json& doc, const nlohmann::json& schema, std::string path,
                   std::string* err) {
    if (schema.contains("type")) {
        const nlohmann::json& t = schema["type"];
        bool ok = false;
        if (t.is_string()) ok = type_matches(doc, t.get<std::string>());
        else
            for (const auto& one : t) ok = ok || type_matches(doc, one.get<std::string>());
        if (!ok) {
            if (err) *err = path + ": type mismatch";
            return false;
        }
    }
    if (schema.contains("enum")) {
        bool ok = false;
        for (const auto& v : schema["enum"]) ok = ok || v == doc;
        if (!ok) {
            if (err) *err = path + ": value not in enum";
            return false;
        }
    }
    if (doc.is_object()) {
        if (schema.contains("required"))
            for (const auto& key : schema["required"])
                if (!doc.contains(key.get<std::string>())) {
                    if (err) *err = path + ": missing required key " + key.get<std::string>();
                    return false;
                }
        if (schema.contains("properties"))
            for (auto it = schema["properties"].begin(); it != schema["properties"].end(); ++it)
                if (doc.contains(it.key()) &&
                    !validate_node(doc[it.key()], it.value(), path + "/" + it.key(), err))
                    return false;
    }
    if (doc.is_array() && schema.contains("items")) {
        for (size_t i = 0; i < doc.size(); ++i)
            if (!validate_node(doc[i], schema["items"], path + "/" + std::to_string(i), err))
                return false;
    }
    return true;
}

}  // namespace

bool validate_schema(const nlohmann::json& doc, const nlohmann::json& schema, std::string* err) {
    return validate_node(doc, schema, "", err);
}

}  // namespace confide::eval
