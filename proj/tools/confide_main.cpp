// confide: generate PDE datasets, train context models, infer coefficients,
// evaluate rollouts and run ablations. Exit codes: 0 ok, 2 usage/config
// error, 3 numerical failure.
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "confide/checkpoint.hpp"
#include "confide/dataset.hpp"
#include "confide/eval.hpp"
#include "confide/model.hpp"
#include "confide/solver.hpp"

using namespace confide;
namespace fs = std::filesystem;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string fmt_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string hex_hash(std::string_view bytes) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%08x", io::crc32_of(bytes));
    return buf;
}

std::string file_hash(const std::string& path) { return hex_hash(io::read_file(path)); }

// Deferred application of config-file values: a bound flag takes the config
// value only when it was not given on the command line.
class ConfigMerge {
  public:
    template <typename T>
    void bind(CLI::Option* opt, const std::string& key, T& target) {
        entries_.push_back([opt, key, &target](const nlohmann::json& cfg) {
            if (opt->count() == 0 && cfg.contains(key)) target = cfg.at(key).get<T>();
        });
    }
    void apply(const nlohmann::json& cfg) {
        for (auto& e : entries_) e(cfg);
    }

  private:
    std::vector<std::function<void(const nlohmann::json&)>> entries_;
};

nlohmann::json load_config_file(const std::string& path) {
    if (path.empty()) return nlohmann::json::object();
    nlohmann::json cfg = nlohmann::json::parse(io::read_file(path));
    if (!cfg.is_object()) throw UsageError("config file must hold a JSON object: " + path);
    return cfg;
}

// flag > config file > CONFIDE_SEED env > built-in default
uint64_t resolve_seed(const CLI::Option* opt, uint64_t flag_value, const nlohmann::json& cfg,
                      uint64_t fallback) {
    if (opt->count() > 0) return flag_value;
    if (cfg.contains("seed")) return cfg.at("seed").get<uint64_t>();
    if (const char* env = std::getenv("CONFIDE_SEED")) {
        try {
            return std::stoull(env);
        } catch (const std::exception&) {
            throw UsageError(std::string("CONFIDE_SEED is not an integer: ") + env);
        }
    }
    return fallback;
}

nlohmann::json make_provenance(const std::string& command, const std::vector<std::string>& args,
                               uint64_t seed, const nlohmann::json& inputs) {
    nlohmann::json p;
    p["command"] = command;
    p["args"] = args;
    p["seed"] = seed;
    p["inputs"] = inputs;
    return p;
}

void write_json(const std::string& path, const nlohmann::json& j) {
    io::write_file(path, j.dump(2) + "\n");
}

// ---- single-signal container (CONFSIG), also used for predicted rollouts ----

constexpr char kSignalMagic[8] = {'C', 'O', 'N', 'F', 'S', 'I', 'G', '\0'};

std::string signal_bytes(FamilyId family, const Signal& s) {
    nlohmann::json header;
    header["format_version"] = 1;
    header["family"] = family_name(family);
    header["grid"] = data::grid_to_json(s.grid);
    header["n_slices"] = s.n_slices();
    const std::string htext = header.dump();

    std::string out(kSignalMagic, sizeof kSignalMagic);
    io::put_u32(out, static_cast<uint32_t>(htext.size()));
    out += htext;
    for (const Tensor& field : s.fields)
        for (double v : field.data) io::put_f32(out, static_cast<float>(v));
    io::put_u32(out, io::crc32_of(out));
    return out;
}

void write_signal_file(const std::string& path, FamilyId family, const Signal& s) {
    io::write_file(path, signal_bytes(family, s));
}

std::pair<FamilyId, Signal> read_signal_file(const std::string& path) {
    const std::string bytes = io::read_file(path);
    if (bytes.size() < sizeof kSignalMagic + 8 ||
        bytes.compare(0, sizeof kSignalMagic, kSignalMagic, sizeof kSignalMagic) != 0)
        throw UsageError("not a confide signal file: " + path);
    size_t off = bytes.size() - 4;
    const uint32_t crc = io::get_u32(bytes, off);
    if (crc != io::crc32_of(std::string_view(bytes).substr(0, bytes.size() - 4)))
        throw UsageError("signal file failed its checksum: " + path);

    off = sizeof kSignalMagic;
    const uint32_t hlen = io::get_u32(bytes, off);
    if (off + hlen + 4 > bytes.size()) throw UsageError("truncated signal file: " + path);
    const nlohmann::json header = nlohmann::json::parse(bytes.substr(off, hlen));
    off += hlen;

    const FamilyId family = family_from_name(header.at("family").get<std::string>());
    const GridSpec grid = data::grid_from_json(header.at("grid"));
    const int n_slices = header.at("n_slices").get<int>();
    const size_t expect =
        static_cast<size_t>(grid.fields) * n_slices * grid.space_size() * 4 + off + 4;
    if (bytes.size() != expect) throw UsageError("signal payload size mismatch: " + path);

    Signal s = Signal::zeros(grid, n_slices);
    for (Tensor& field : s.fields)
        for (double& v : field.data) v = static_cast<double>(io::get_f32(bytes, off));
    return {family, s};
}

// ---- shared option bundles ----

struct TrainOverrides {
    std::string profile = "desk";
    std::string variant = "confide";
    double alpha = 0.5;
    double rho = 0.2;
    int max_epochs = 0;
    int patience = 0;
    int batch_size = 0;
    double lr = 0.0;
    double lr_decay = 0.0;
    uint64_t seed = 1;

    CLI::Option *profile_opt = nullptr, *variant_opt = nullptr, *alpha_opt = nullptr,
                *rho_opt = nullptr, *epochs_opt = nullptr, *patience_opt = nullptr,
                *batch_opt = nullptr, *lr_opt = nullptr, *lr_decay_opt = nullptr,
                *seed_opt = nullptr;

    void add_to(CLI::App* cmd, ConfigMerge& merge) {
        profile_opt = cmd->add_option("--profile", profile,
                                      "Training profile: desk (reduced widths, CPU-sized) or "
                                      "paper (full-scale widths)");
        variant_opt = cmd->add_option(
            "--variant", variant, "Model variant: confide, ae-ic, no-ae or confide0");
        alpha_opt = cmd->add_option("--alpha", alpha,
                                    "Weight of the reconstruction term in the training loss");
        rho_opt = cmd->add_option("--rho", rho, "Context ratio: fraction of the time axis "
                                                "visible to the encoder");
        epochs_opt = cmd->add_option("--max-epochs", max_epochs, "Cap on training epochs");
        patience_opt =
            cmd->add_option("--patience", patience, "Early-stopping patience in epochs");
        batch_opt = cmd->add_option("--batch-size", batch_size, "Minibatch size");
        lr_opt = cmd->add_option("--lr", lr, "Adam learning rate");
        lr_decay_opt =
            cmd->add_option("--lr-decay", lr_decay, "Per-epoch multiplicative lr factor");
        seed_opt = cmd->add_option("--seed", seed, "Seed for init and batch shuffling "
                                                   "(CONFIDE_SEED env is the fallback)");
        merge.bind(profile_opt, "profile", profile);
        merge.bind(variant_opt, "variant", variant);
        merge.bind(alpha_opt, "alpha", alpha);
        merge.bind(rho_opt, "rho", rho);
        merge.bind(epochs_opt, "max-epochs", max_epochs);
        merge.bind(patience_opt, "patience", patience);
        merge.bind(batch_opt, "batch-size", batch_size);
        merge.bind(lr_opt, "lr", lr);
    }

    bool given(const CLI::Option* opt, const nlohmann::json& cfg, const char* key) const {
        return opt->count() > 0 || cfg.contains(key);
    }

    model::TrainConfig build(FamilyId family, const nlohmann::json& cfg) const {
        model::TrainConfig c;
        if (profile == "desk") c = model::TrainConfig::desk(family);
        else if (profile == "paper") c = model::TrainConfig::paper(family);
        else throw UsageError("unknown profile '" + profile + "' (expected desk or paper)");

        c.variant = model::variant_from_name(variant);
        const bool alpha_given = given(alpha_opt, cfg, "alpha");
        if (c.variant == model::Variant::NoAe) {
            if (alpha_given && alpha != 0.0)
                throw UsageError("--variant no-ae forces --alpha 0; drop the conflicting "
                                 "--alpha " + fmt_g(alpha));
            c.alpha = 0.0;
        } else if (alpha_given) {
            c.alpha = alpha;
        }
        if (given(rho_opt, cfg, "rho")) c.rho = rho;
        if (given(epochs_opt, cfg, "max-epochs")) c.max_epochs = max_epochs;
        if (given(patience_opt, cfg, "patience")) c.patience = patience;
        if (given(batch_opt, cfg, "batch-size")) c.batch_size = batch_size;
        if (given(lr_opt, cfg, "lr")) c.lr = lr;
        if (given(lr_decay_opt, cfg, "lr-decay")) c.lr_decay = lr_decay;
        c.seed = resolve_seed(seed_opt, seed, cfg, c.seed);
        return c;
    }
};

std::vector<double> parse_values(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        size_t used = 0;
        const double v = std::stod(item, &used);
        if (used != item.size()) throw UsageError("bad numeric value '" + item + "' in --values");
        out.push_back(v);
    }
    if (out.empty()) throw UsageError("--values must list at least one number");
    return out;
}

std::string model_ckpt_path(const std::string& model_arg) {
    if (fs::is_directory(model_arg)) return model_arg + "/model.ckpt";
    return model_arg;
}

void require(bool ok, const std::string& message) {
    if (!ok) throw UsageError(message);
}

// ---- subcommand payloads ----

struct GenerateArgs {
    std::string family, out, config_path;
    int n = 10000;
    uint64_t seed = 1;
    int jobs = 1;
    int nx = 0, ny = 0, nt = 0;
    double dx = 0.0, dt = 0.0;
    CLI::Option *seed_opt = nullptr, *nx_opt = nullptr, *ny_opt = nullptr, *nt_opt = nullptr,
                *dx_opt = nullptr, *dt_opt = nullptr;
    ConfigMerge merge;
};

int run_generate(GenerateArgs& a, const std::vector<std::string>& argv_tail) {
    const nlohmann::json cfg = load_config_file(a.config_path);
    a.merge.apply(cfg);
    require(!a.family.empty(), "generate: --family is required");
    require(!a.out.empty(), "generate: --out is required");
    require(a.n >= 1, "generate: --n must be positive");

    const FamilyId family = family_from_name(a.family);
    GridSpec grid =
        family == FamilyId::Fn2d ? GridSpec::fn2d_default() : GridSpec::line_default();
    auto touched = [&](const CLI::Option* opt, const char* key) {
        return opt->count() > 0 || cfg.contains(key);
    };
    if (touched(a.nx_opt, "nx")) grid.nx = a.nx;
    if (touched(a.ny_opt, "ny")) grid.ny = a.ny;
    if (touched(a.nt_opt, "nt")) grid.nt = a.nt;
    if (touched(a.dx_opt, "dx")) grid.dx = a.dx;
    if (touched(a.dt_opt, "dt")) grid.dt = a.dt;
    grid.validate();

    data::SamplingSpec spec;
    spec.gp = data::default_gp(family);
    spec.n_signals = a.n;
    spec.seed = resolve_seed(a.seed_opt, a.seed, cfg, 1);
    data::generate_dataset(a.out, family, grid, spec, a.jobs);

    nlohmann::json inputs = nlohmann::json::object();
    if (!a.config_path.empty()) inputs["config_file"] = file_hash(a.config_path);
    write_json(a.out + "/provenance.json",
               make_provenance("generate", argv_tail, spec.seed, inputs));
    std::cout << a.out << "/manifest.json\n";
    return 0;
}

struct TrainArgs {
    std::string dataset, out, config_path;
    bool quiet = false;
    TrainOverrides tr;
    ConfigMerge merge;
};

int run_train(TrainArgs& a, const std::vector<std::string>& argv_tail) {
    const nlohmann::json cfg = load_config_file(a.config_path);
    a.merge.apply(cfg);
    require(!a.dataset.empty(), "train: --dataset is required");
    require(!a.out.empty(), "train: --out is required");
    require(fs::exists(a.dataset), "train: dataset path does not exist: " + a.dataset);

    const data::Dataset ds = data::Dataset::open(a.dataset);
    const model::TrainConfig tc = a.tr.build(ds.family(), cfg);

    model::ConfideModel m = model::ConfideModel::init(ds.family(), ds.grid(), tc);
    model::ConfideModel::EpochHook hook;
    if (!a.quiet)
        hook = [](int epoch, double train, double val) {
            std::fprintf(stderr, "epoch %d train %.6g val %.6g\n", epoch, train, val);
        };
    const model::TrainResult res = m.train(ds, hook);

    io::ensure_dir(a.out);
    const std::string cfg_hash = hex_hash(tc.to_json().dump());
    nlohmann::json extra;
    extra["dataset_hash"] = ds.content_hash();
    extra["config_hash"] = cfg_hash;
    m.save(a.out + "/model.ckpt", extra);

    nlohmann::json manifest;
    manifest["family"] = family_name(ds.family());
    manifest["d_z"] = tc.d_z;
    manifest["variant"] = model::variant_name(tc.variant);
    manifest["n_ctx"] = m.n_ctx();
    manifest["config"] = tc.to_json();
    manifest["config_hash"] = cfg_hash;
    manifest["dataset_hash"] = ds.content_hash();
    manifest["checkpoint"] = "model.ckpt";
    manifest["epochs"] = res.epochs;
    manifest["best_epoch"] = res.best_epoch;
    manifest["best_val"] = res.best_val;
    write_json(a.out + "/model.json", manifest);

    std::string trace = "epoch,train_loss,train_ae,train_coef,val_loss\n";
    for (int e = 0; e < res.epochs; ++e)
        trace += std::to_string(e) + "," + fmt_g(res.train_loss[e]) + "," +
                 fmt_g(res.train_ae[e]) + "," + fmt_g(res.train_coef[e]) + "," +
                 fmt_g(res.val_loss[e]) + "\n";
    io::write_file(a.out + "/loss_trace.csv", trace);

    nlohmann::json inputs;
    inputs["dataset"] = ds.content_hash();
    if (!a.config_path.empty()) inputs["config_file"] = file_hash(a.config_path);
    write_json(a.out + "/provenance.json",
               make_provenance("train", argv_tail, tc.seed, inputs));
    std::cout << a.out << "/model.ckpt\n";
    return 0;
}

struct InferArgs {
    std::string model, dataset, signal_file, out, config_path;
    int index = -1;
    CLI::Option* index_opt = nullptr;
    ConfigMerge merge;
};

int run_infer(InferArgs& a, const std::vector<std::string>& argv_tail) {
    const nlohmann::json cfg = load_config_file(a.config_path);
    a.merge.apply(cfg);
    require(!a.model.empty(), "infer: --model is required");
    require(!a.out.empty(), "infer: --out is required");
    const bool from_ds = !a.dataset.empty();
    const bool from_file = !a.signal_file.empty();
    require(from_ds != from_file,
            "infer: give exactly one source, --dataset with --index or --signal-file");
    if (from_ds)
        require(a.index_opt->count() > 0 || cfg.contains("index"),
                "infer: --index is required with --dataset");

    const std::string ckpt = model_ckpt_path(a.model);
    const model::ConfideModel m = model::ConfideModel::load(ckpt);

    FamilyId sig_family = m.family();
    Signal sig = Signal::zeros(m.grid(), 1);
    nlohmann::json inputs;
    inputs["model"] = file_hash(ckpt);
    if (from_ds) {
        const data::Dataset ds = data::Dataset::open(a.dataset);
        if (ds.family() != m.family())
            throw UsageError("infer: model family '" + family_name(m.family()) +
                             "' does not match dataset family '" + family_name(ds.family()) +
                             "'");
        require(a.index >= 0 && a.index < ds.size(),
                "infer: --index out of range [0, " + std::to_string(ds.size()) + ")");
        sig = ds.signal(a.index);
        sig_family = ds.family();
        inputs["dataset"] = ds.content_hash();
    } else {
        auto [fam, s] = read_signal_file(a.signal_file);
        sig_family = fam;
        sig = std::move(s);
        inputs["signal_file"] = file_hash(a.signal_file);
    }
    if (sig_family != m.family())
        throw UsageError("infer: model family '" + family_name(m.family()) +
                         "' does not match signal family '" + family_name(sig_family) + "'");
    if (!sig.grid.same_as(m.grid()))
        throw UsageError("infer: signal grid does not match the model's training grid");

    const model::InferResult inf = m.infer(sig);

    nlohmann::json p_hat;
    p_hat["family"] = family_name(m.family());
    p_hat["variant"] = model::variant_name(m.config().variant);
    p_hat["n_ctx"] = inf.n_ctx;
    p_hat["complete"] = inf.complete;
    if (inf.has_estimate) {
        const FamilyInfo& info = family_info(m.family());
        for (int k = 0; k < info.n_scalars; ++k)
            p_hat[info.scalar_names[static_cast<size_t>(k)]] = inf.estimate.scalars[k];
        // visited state range from the context window, for head tabulation
        double lo = sig.slice(0, 0)[0], hi = lo;
        for (int j = 0; j < inf.n_ctx; ++j) {
            const double* u = sig.slice(0, j);
            for (int p = 0; p < sig.grid.space_size(); ++p) {
                lo = std::min(lo, u[p]);
                hi = std::max(hi, u[p]);
            }
        }
        if (inf.estimate.b_head) {
            nlohmann::json rows = nlohmann::json::array();
            for (int i = 0; i <= 100; ++i) {
                const double u = lo + (hi - lo) * i / 100.0;
                rows.push_back({u, inf.estimate.b_head(u)});
            }
            p_hat["b_head"] = rows;
        }
        if (inf.estimate.rv_head) {
            double vlo = sig.slice(1, 0)[0], vhi = vlo;
            for (int j = 0; j < inf.n_ctx; ++j) {
                const double* v = sig.slice(1, j);
                for (int p = 0; p < sig.grid.space_size(); ++p) {
                    vlo = std::min(vlo, v[p]);
                    vhi = std::max(vhi, v[p]);
                }
            }
            nlohmann::json rows = nlohmann::json::array();
            for (int i = 0; i <= 20; ++i)
                for (int k = 0; k <= 20; ++k) {
                    const double u = lo + (hi - lo) * i / 20.0;
                    const double v = vlo + (vhi - vlo) * k / 20.0;
                    rows.push_back({u, v, inf.estimate.rv_head(u, v)});
                }
            p_hat["rv_head"] = rows;
        }
    }

    io::ensure_dir(a.out);
    write_json(a.out + "/p_hat.json", p_hat);
    const std::string u_path =
        a.out + (inf.complete ? "/u_hat.bin" : "/u_hat.bin.partial");
    write_signal_file(u_path, m.family(), inf.prediction);
    write_json(a.out + "/provenance.json",
               make_provenance("infer", argv_tail, m.config().seed, inputs));
    std::cout << a.out << "/p_hat.json\n" << u_path << "\n";
    if (!inf.complete) {
        std::cerr << "infer: rollout left the stable region; wrote partial prediction\n";
        return kExitNumerical;
    }
    return 0;
}

struct EvalArgs {
    std::string model, dataset, out, split = "test", config_path;
    int jobs = 1;
    ConfigMerge merge;
};

int run_eval(EvalArgs& a, const std::vector<std::string>& argv_tail) {
    const nlohmann::json cfg = load_config_file(a.config_path);
    a.merge.apply(cfg);
    require(!a.model.empty(), "eval: --model is required");
    require(!a.dataset.empty(), "eval: --dataset is required");
    require(!a.out.empty(), "eval: --out is required");

    const std::string ckpt = model_ckpt_path(a.model);
    const model::ConfideModel m = model::ConfideModel::load(ckpt);
    const data::Dataset ds = data::Dataset::open(a.dataset);
    if (ds.family() != m.family())
        throw UsageError("eval: model family '" + family_name(m.family()) +
                         "' does not match dataset family '" + family_name(ds.family()) + "'");
    if (!ds.grid().same_as(m.grid()))
        throw UsageError("eval: dataset grid does not match the model's training grid");

    const data::TruthSidecar truth = data::TruthSidecar::open(a.dataset);
    eval::EvalOptions opt;
    opt.split = a.split;
    opt.jobs = a.jobs;
    const eval::EvalReport rep = eval::evaluate(m, ds, &truth, opt);

    nlohmann::json inputs;
    inputs["model"] = file_hash(ckpt);
    inputs["dataset"] = ds.content_hash();
    if (!a.config_path.empty()) inputs["config_file"] = file_hash(a.config_path);
    eval::write_report(a.out, rep,
                       make_provenance("eval", argv_tail, m.config().seed, inputs));
    std::cout << a.out << "/metrics.json\n";
    return 0;
}

struct AblateArgs {
    std::string dataset, out, axis, values, config_path;
    int jobs = 1;
    bool quiet = false;
    TrainOverrides tr;
    CLI::Option* values_opt = nullptr;
    ConfigMerge merge;
};

int run_ablate(AblateArgs& a, const std::vector<std::string>& argv_tail) {
    const nlohmann::json cfg = load_config_file(a.config_path);
    a.merge.apply(cfg);
    require(!a.dataset.empty(), "ablate: --dataset is required");
    require(!a.out.empty(), "ablate: --out is required");
    require(!a.axis.empty(), "ablate: --axis is required (size, context or autoencoder)");

    const data::Dataset ds = data::Dataset::open(a.dataset);
    const data::TruthSidecar truth = data::TruthSidecar::open(a.dataset);
    const model::TrainConfig base = a.tr.build(ds.family(), cfg);

    const bool values_given = a.values_opt->count() > 0 || cfg.contains("values");
    eval::AblationRunner runner(ds, truth, base, a.jobs);
    std::vector<eval::AblationCell> cells;
    std::string csv_path, key_column;
    bool pct = false;
    if (a.axis == "size") {
        std::vector<int> sizes;
        for (double v : parse_values(values_given ? a.values : "300,1000,3000")) {
            if (v < 1 || v != static_cast<int>(v))
                throw UsageError("ablate: train sizes must be positive integers");
            sizes.push_back(static_cast<int>(v));
        }
        cells = runner.train_size(sizes);
        csv_path = a.out + "/ablation_train_size.csv";
        key_column = "train_size";
    } else if (a.axis == "context") {
        cells = runner.context_ratio(parse_values(values_given ? a.values : "0.05,0.1,0.2"));
        csv_path = a.out + "/ablation_context.csv";
        key_column = "rho";
    } else if (a.axis == "autoencoder") {
        require(!values_given, "ablate: --values does not apply to the autoencoder axis");
        cells = runner.autoencoder();
        csv_path = a.out + "/ablation_autoencoder.csv";
        key_column = "variant";
        pct = true;
    } else {
        throw UsageError("ablate: unknown axis '" + a.axis +
                         "' (expected size, context or autoencoder)");
    }

    io::ensure_dir(a.out);
    eval::write_ablation_csv(csv_path, key_column, cells, pct);
    nlohmann::json inputs;
    inputs["dataset"] = ds.content_hash();
    if (!a.config_path.empty()) inputs["config_file"] = file_hash(a.config_path);
    write_json(a.out + "/provenance.json",
               make_provenance("ablate", argv_tail, base.seed, inputs));
    std::cout << csv_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"confide: PDE coefficient identification from spatio-temporal context"};
    app.require_subcommand(1);
    const std::vector<std::string> argv_tail(argv + 1, argv + argc);

    GenerateArgs gen;
    CLI::App* cgen = app.add_subcommand("generate", "Sample a PDE dataset into a directory");
    {
        CLI::Option* fam = cgen->add_option(
            "--family", gen.family, "PDE family: constant, burgers or fn2d");
        CLI::Option* n = cgen->add_option("--n", gen.n, "Number of signals");
        gen.seed_opt = cgen->add_option("--seed", gen.seed,
                                        "Sampling seed (CONFIDE_SEED env is the fallback)");
        CLI::Option* out = cgen->add_option("--out", gen.out, "Output dataset directory");
        CLI::Option* jobs = cgen->add_option("--jobs", gen.jobs, "Worker threads");
        gen.nx_opt = cgen->add_option("--nx", gen.nx, "Grid intervals along x");
        gen.ny_opt = cgen->add_option("--ny", gen.ny, "Grid points along y (fn2d)");
        gen.nt_opt = cgen->add_option("--nt", gen.nt, "Time steps");
        gen.dx_opt = cgen->add_option("--dx", gen.dx, "Spatial step");
        gen.dt_opt = cgen->add_option("--dt", gen.dt, "Time step");
        cgen->add_option("--config", gen.config_path,
                         "JSON config file; keys are long option names, flags win");
        gen.merge.bind(fam, "family", gen.family);
        gen.merge.bind(n, "n", gen.n);
        gen.merge.bind(out, "out", gen.out);
        gen.merge.bind(jobs, "jobs", gen.jobs);
        gen.merge.bind(gen.nx_opt, "nx", gen.nx);
        gen.merge.bind(gen.ny_opt, "ny", gen.ny);
        gen.merge.bind(gen.nt_opt, "nt", gen.nt);
        gen.merge.bind(gen.dx_opt, "dx", gen.dx);
        gen.merge.bind(gen.dt_opt, "dt", gen.dt);
    }

    TrainArgs tra;
    CLI::App* ctra = app.add_subcommand("train", "Train a model on a generated dataset");
    {
        CLI::Option* ds = ctra->add_option("--dataset", tra.dataset, "Dataset directory");
        CLI::Option* out = ctra->add_option("--out", tra.out, "Output model directory");
        ctra->add_flag("--quiet", tra.quiet, "Suppress per-epoch progress on stderr");
        ctra->add_option("--config", tra.config_path,
                         "JSON config file; keys are long option names, flags win");
        tra.tr.add_to(ctra, tra.merge);
        tra.merge.bind(ds, "dataset", tra.dataset);
        tra.merge.bind(out, "out", tra.out);
    }

    InferArgs inf;
    CLI::App* cinf = app.add_subcommand(
        "infer", "Estimate coefficients and roll out a prediction for one signal");
    {
        CLI::Option* model = cinf->add_option("--model", inf.model,
                                              "Model directory or checkpoint file");
        CLI::Option* ds = cinf->add_option("--dataset", inf.dataset,
                                           "Dataset directory (needs --index)");
        inf.index_opt = cinf->add_option("--index", inf.index, "Signal index in --dataset");
        CLI::Option* sf = cinf->add_option("--signal-file", inf.signal_file,
                                           "Single-signal file as written by infer");
        CLI::Option* out = cinf->add_option("--out", inf.out, "Output directory");
        cinf->add_option("--config", inf.config_path,
                         "JSON config file; keys are long option names, flags win");
        inf.merge.bind(model, "model", inf.model);
        inf.merge.bind(ds, "dataset", inf.dataset);
        inf.merge.bind(inf.index_opt, "index", inf.index);
        inf.merge.bind(sf, "signal-file", inf.signal_file);
        inf.merge.bind(out, "out", inf.out);
    }

    EvalArgs eva;
    CLI::App* ceva = app.add_subcommand("eval", "Evaluate a model on a dataset split");
    {
        CLI::Option* model = ceva->add_option("--model", eva.model,
                                              "Model directory or checkpoint file");
        CLI::Option* ds = ceva->add_option("--dataset", eva.dataset, "Dataset directory");
        CLI::Option* out = ceva->add_option("--out", eva.out, "Report directory");
        CLI::Option* split = ceva->add_option("--split", eva.split,
                                              "Dataset split: train, val or test");
        CLI::Option* jobs = ceva->add_option("--jobs", eva.jobs, "Worker threads");
        ceva->add_option("--config", eva.config_path,
                         "JSON config file; keys are long option names, flags win");
        eva.merge.bind(model, "model", eva.model);
        eva.merge.bind(ds, "dataset", eva.dataset);
        eva.merge.bind(out, "out", eva.out);
        eva.merge.bind(split, "split", eva.split);
        eva.merge.bind(jobs, "jobs", eva.jobs);
    }

    AblateArgs abl;
    CLI::App* cabl = app.add_subcommand(
        "ablate", "Sweep train size, context ratio or the autoencoder variants");
    {
        CLI::Option* ds = cabl->add_option("--dataset", abl.dataset, "Dataset directory");
        CLI::Option* out = cabl->add_option("--out", abl.out, "Report directory");
        CLI::Option* axis = cabl->add_option(
            "--axis", abl.axis, "Sweep axis: size, context or autoencoder");
        abl.values_opt = cabl->add_option("--values", abl.values,
                                          "Comma-separated sweep values (size and context)");
        CLI::Option* jobs = cabl->add_option("--jobs", abl.jobs,
                                             "Parallel training jobs for ablation cells");
        cabl->add_flag("--quiet", abl.quiet, "Suppress progress output");
        cabl->add_option("--config", abl.config_path,
                         "JSON config file; keys are long option names, flags win");
        abl.tr.add_to(cabl, abl.merge);
        abl.merge.bind(ds, "dataset", abl.dataset);
        abl.merge.bind(out, "out", abl.out);
        abl.merge.bind(axis, "axis", abl.axis);
        abl.merge.bind(abl.values_opt, "values", abl.values);
        abl.merge.bind(jobs, "jobs", abl.jobs);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (cgen->parsed()) return run_generate(gen, argv_tail);
        if (ctra->parsed()) return run_train(tra, argv_tail);
        if (cinf->parsed()) return run_infer(inf, argv_tail);
        if (ceva->parsed()) return run_eval(eva, argv_tail);
        if (cabl->parsed()) return run_ablate(abl, argv_tail);
        std::cerr << "error: no subcommand given\n";
        return kExitUsage;
    } catch (const UnstableError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const model::DivergenceError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
}
