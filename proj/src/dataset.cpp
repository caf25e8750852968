#include "confide/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstring>
#include <mutex>
#include <stdexcept>
#include <thread>
#include <utility>

#include "confide/checkpoint.hpp"
#include "confide/solver.hpp"

namespace confide::data {

namespace {

constexpr int kFormatVersion = 1;

size_t signal_bytes(const GridSpec& g) {
    return static_cast<size_t>(g.fields) * (g.nt + 1) * g.space_size() * sizeof(float);
}

// Encode one signal: fields in order, each [n_slices, space] row-major f32 LE.
std::string encode_signal(const Signal& s) {
    std::string out;
    out.reserve(signal_bytes(s.grid));
    for (const Tensor& f : s.fields)
        for (double v : f.data) io::put_f32(out, static_cast<float>(v));
    return out;
}

struct Slot {
    Signal signal;
    TrueCoeffs coeffs;
    int retries = 0;
};

// One slot of the dataset: retries draw from independent seed streams so the
// result does not depend on how slots are scheduled across threads.
Slot make_slot(FamilyId family, const GridSpec& grid, const SamplingSpec& spec,
               const GpSampler& gp, int index) {
    for (int retry = 0; retry < spec.max_retries; ++retry) {
        Rng rng(derive_seed(spec.seed, static_cast<uint64_t>(index), static_cast<uint64_t>(retry)));
        TrueCoeffs coeffs = sample_coeffs(family, rng);
        for (double& v : coeffs.scalars) v = quantize_f32(v);

        std::vector<Tensor> init;
        for (int f = 0; f < grid.fields; ++f) {
            Tensor ic = gp.sample(rng);
            for (double& v : ic.data) v = quantize_f32(v);
            init.push_back(std::move(ic));
        }

        try {
            Signal s = solve_explicit(CoefficientEstimate::from_truth(coeffs), grid, init, grid.nt);
            if (!check_stability(s, family).ok) continue;
            Slot slot;
            slot.signal = std::move(s);
            slot.coeffs = std::move(coeffs);
            slot.retries = retry;
            return slot;
        } catch (const UnstableError&) {
            continue;
        }
    }
    throw std::runtime_error("generate: slot " + std::to_string(index) + " unstable after " +
                             std::to_string(spec.max_retries) + " retries");
}

}  // namespace

TrueCoeffs sample_coeffs(FamilyId family, Rng& rng) {
    TrueCoeffs c;
    c.family = family;
    switch (family) {
        case FamilyId::ConstantCoeff:
            c.scalars = {rng.uniform(0.0, 2.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
            break;
        case FamilyId::Burgers:
            c.scalars = {rng.uniform(1.0, 2.0)};
            break;
        case FamilyId::Fn2d:
            c.scalars = {rng.uniform(0.0, 1.0)};
            break;
    }
    return c;
}

GpSpec default_gp(FamilyId family) {
    GpSpec s;
    if (family == FamilyId::Fn2d) {
        s.length_scale = 0.1;
        s.condition_dirichlet = false;
    }
    return s;
}

nlohmann::json grid_to_json(const GridSpec& g) {
    return {{"dims", g.dims}, {"nx", g.nx},     {"ny", g.ny},
            {"dx", g.dx},     {"dt", g.dt},     {"nt", g.nt},
            {"periodic", g.periodic},           {"fields", g.fields}};
}

GridSpec grid_from_json(const nlohmann::json& j) {
    GridSpec g;
    g.dims = j.at("dims").get<int>();
    g.nx = j.at("nx").get<int>();
    g.ny = j.at("ny").get<int>();
    g.dx = j.at("dx").get<double>();
    g.dt = j.at("dt").get<double>();
    g.nt = j.at("nt").get<int>();
    g.periodic = j.at("periodic").get<bool>();
    g.fields = j.at("fields").get<int>();
    g.validate();
    return g;
}

nlohmann::json gp_to_json(const GpSpec& s) {
    return {{"length_scale", s.length_scale},
            {"sigma", s.sigma},
            {"condition_dirichlet", s.condition_dirichlet},
            {"jitter", s.jitter}};
}

GpSpec gp_from_json(const nlohmann::json& j) {
    GpSpec s;
    s.length_scale = j.at("length_scale").get<double>();
    s.sigma = j.at("sigma").get<double>();
    s.condition_dirichlet = j.at("condition_dirichlet").get<bool>();
    s.jitter = j.at("jitter").get<double>();
    return s;
}

Splits Splits::contiguous(int n) {
    if (n < 1) throw std::invalid_argument("splits: need at least one signal");
    Splits s;
    const int train = n * 8 / 10;
    const int val = n / 10;
    s.train = {0, train};
    s.val = {train, train + val};
    s.test = {train + val, n};
    return s;
}

void generate_dataset(const std::string& dir, FamilyId family, const GridSpec& grid,
                      const SamplingSpec& spec, int jobs) {
    grid.validate();
    const FamilyInfo& info = family_info(family);
    if (grid.dims != info.dims || grid.fields != info.fields)
        throw std::invalid_argument("generate: grid does not match family");
    if (spec.n_signals < 1) throw std::invalid_argument("generate: n_signals must be positive");
    if (jobs < 1) throw std::invalid_argument("generate: jobs must be positive");

    GpSampler gp = grid.dims == 1
                       ? GpSampler::line(spec.gp, grid.points_x(), grid.dx)
                       : GpSampler::grid2d(spec.gp, grid.points_y(), grid.points_x(), grid.dx);

    io::ensure_dir(dir);
    std::string signals;
    signals.reserve(signal_bytes(grid) * static_cast<size_t>(spec.n_signals));
    std::string coeffs;
    std::vector<uint64_t> offsets(static_cast<size_t>(spec.n_signals));
    std::vector<uint32_t> crcs(static_cast<size_t>(spec.n_signals));

    // Chunked: workers fill a window of slots, then the window is appended in
    // index order. Keeps peak memory at chunk_size signals.
    const int chunk_size = std::max(jobs * 4, 16);
    for (int lo = 0; lo < spec.n_signals; lo += chunk_size) {
        const int hi = std::min(lo + chunk_size, spec.n_signals);
        std::vector<Slot> window(static_cast<size_t>(hi - lo));
        if (jobs == 1) {
            for (int i = lo; i < hi; ++i)
                window[static_cast<size_t>(i - lo)] = make_slot(family, grid, spec, gp, i);
        } else {
            std::atomic<int> next{lo};
            std::exception_ptr first_error;
            std::mutex err_mu;
            std::vector<std::thread> pool;
            for (int w = 0; w < jobs; ++w)
                pool.emplace_back([&]() {
                    for (;;) {
                        const int i = next.fetch_add(1);
                        if (i >= hi) return;
                        try {
                            window[static_cast<size_t>(i - lo)] =
                                make_slot(family, grid, spec, gp, i);
                        } catch (...) {
                            std::lock_guard<std::mutex> lock(err_mu);
                            if (!first_error) first_error = std::current_exception();
                            return;
                        }
                    }
                });
            for (std::thread& t : pool) t.join();
            if (first_error) std::rethrow_exception(first_error);
        }
        for (int i = lo; i < hi; ++i) {
            const Slot& slot = window[static_cast<size_t>(i - lo)];
            const std::string bytes = encode_signal(slot.signal);
            offsets[static_cast<size_t>(i)] = signals.size();
            crcs[static_cast<size_t>(i)] = io::crc32_of(bytes);
            signals += bytes;
            for (double v : slot.coeffs.scalars) io::put_f32(coeffs, static_cast<float>(v));
        }
    }

    Splits splits = Splits::contiguous(spec.n_signals);
    nlohmann::json manifest;
    manifest["format_version"] = kFormatVersion;
    manifest["family"] = family_name(family);
    manifest["grid"] = grid_to_json(grid);
    manifest["gp"] = gp_to_json(spec.gp);
    manifest["sampling"] = {{"seed", spec.seed}, {"max_retries", spec.max_retries}};
    manifest["n_signals"] = spec.n_signals;
    manifest["n_scalars"] = info.n_scalars;
    manifest["splits"] = {{"train", {splits.train.lo, splits.train.hi}},
                          {"val", {splits.val.lo, splits.val.hi}},
                          {"test", {splits.test.lo, splits.test.hi}}};
    manifest["signal_nbytes"] = signal_bytes(grid);
    manifest["signal_offsets"] = offsets;
    manifest["signal_crc32"] = crcs;
    manifest["coeffs_crc32"] = io::crc32_of(coeffs);

    io::write_file(dir + "/signals.bin", signals);
    io::write_file(dir + "/coeffs.bin", coeffs);
    io::write_file(dir + "/manifest.json", manifest.dump(2) + "\n");
}

Dataset Dataset::open(const std::string& dir) {
    Dataset d;
    const std::string manifest_text = io::read_file(dir + "/manifest.json");
    d.manifest_ = nlohmann::json::parse(manifest_text);
    if (d.manifest_.at("format_version").get<int>() != kFormatVersion)
        throw std::runtime_error("dataset: unsupported format version");
    d.family_ = family_from_name(d.manifest_.at("family").get<std::string>());
    d.grid_ = grid_from_json(d.manifest_.at("grid"));
    d.gp_ = gp_from_json(d.manifest_.at("gp"));
    d.seed_ = d.manifest_.at("sampling").at("seed").get<uint64_t>();
    d.n_signals_ = d.manifest_.at("n_signals").get<int>();

    const auto& sj = d.manifest_.at("splits");
    auto range = [&](const char* name) {
        const auto& r = sj.at(name);
        return SplitRange{r.at(0).get<int>(), r.at(1).get<int>()};
    };
    d.splits_.train = range("train");
    d.splits_.val = range("val");
    d.splits_.test = range("test");

    const std::string bytes = io::read_file(dir + "/signals.bin");
    d.offsets_ = d.manifest_.at("signal_offsets").get<std::vector<uint64_t>>();
    const auto crcs = d.manifest_.at("signal_crc32").get<std::vector<uint32_t>>();
    const size_t per = d.manifest_.at("signal_nbytes").get<size_t>();
    if (per != signal_bytes(d.grid_)) throw std::runtime_error("dataset: signal size mismatch");
    if (d.offsets_.size() != static_cast<size_t>(d.n_signals_) || crcs.size() != d.offsets_.size())
        throw std::runtime_error("dataset: manifest index length mismatch");
    if (bytes.size() != per * static_cast<size_t>(d.n_signals_))
        throw std::runtime_error("dataset: signals.bin has wrong length");
    for (int i = 0; i < d.n_signals_; ++i) {
        if (d.offsets_[static_cast<size_t>(i)] != per * static_cast<size_t>(i))
            throw std::runtime_error("dataset: non-contiguous signal offsets");
        const std::string_view view(bytes.data() + d.offsets_[static_cast<size_t>(i)], per);
        if (io::crc32_of(view) != crcs[static_cast<size_t>(i)])
            throw std::runtime_error("dataset: signal " + std::to_string(i) + " failed crc check");
    }

    d.signals_.assign(bytes.begin(), bytes.end());
    uint32_t h = io::crc32_of(manifest_text);
    h ^= io::crc32_of(std::string_view(bytes));
    char buf[16];
    std::snprintf(buf, sizeof buf, "%08x", h);
    d.content_hash_ = buf;
    return d;
}

Signal Dataset::signal(int i) const {
    if (i < 0 || i >= n_signals_) throw std::out_of_range("dataset: signal index");
    const size_t per = signal_bytes(grid_);
    const unsigned char* base = signals_.data() + offsets_[static_cast<size_t>(i)];
    Signal s = Signal::zeros(grid_, grid_.nt + 1);
    size_t off = 0;
    for (Tensor& f : s.fields)
        for (double& v : f.data) {
            float x;
            std::memcpy(&x, base + off, sizeof x);
            off += sizeof x;
            v = static_cast<double>(x);
        }
    if (off != per) throw std::runtime_error("dataset: decode size mismatch");
    return s;
}

std::vector<int> Dataset::split_indices(const std::string& name) const {
    SplitRange r;
    if (name == "train") r = splits_.train;
    else if (name == "val") r = splits_.val;
    else if (name == "test") r = splits_.test;
    else throw std::invalid_argument("dataset: unknown split " + name);
    std::vector<int> out;
    out.reserve(static_cast<size_t>(r.size()));
    for (int i = r.lo; i < r.hi; ++i) out.push_back(i);
    return out;
}

TruthSidecar TruthSidecar::open(const std::string& dir) {
    TruthSidecar t;
    const nlohmann::json manifest = nlohmann::json::parse(io::read_file(dir + "/manifest.json"));
    t.family_ = family_from_name(manifest.at("family").get<std::string>());
    t.n_signals_ = manifest.at("n_signals").get<int>();
    t.n_scalars_ = manifest.at("n_scalars").get<int>();

    const std::string bytes = io::read_file(dir + "/coeffs.bin");
    if (io::crc32_of(bytes) != manifest.at("coeffs_crc32").get<uint32_t>())
        throw std::runtime_error("sidecar: coeffs.bin failed crc check");
    const size_t want = static_cast<size_t>(t.n_signals_) * t.n_scalars_ * sizeof(float);
    if (bytes.size() != want) throw std::runtime_error("sidecar: coeffs.bin has wrong length");

    size_t off = 0;
    t.values_.resize(static_cast<size_t>(t.n_signals_) * t.n_scalars_);
    for (double& v : t.values_) v = static_cast<double>(io::get_f32(bytes, off));
    return t;
}

TrueCoeffs TruthSidecar::truth(int i) const {
    if (i < 0 || i >= n_signals_) throw std::out_of_range("sidecar: signal index");
    TrueCoeffs c;
    c.family = family_;
    const size_t base = static_cast<size_t>(i) * n_scalars_;
    c.scalars.assign(values_.begin() + static_cast<long>(base),
                     values_.begin() + static_cast<long>(base + static_cast<size_t>(n_scalars_)));
    return c;
}

CoefficientEstimate TruthSidecar::truth_estimate(int i) const {
    return CoefficientEstimate::from_truth(truth(i));
}

}  // namespace confide::data
