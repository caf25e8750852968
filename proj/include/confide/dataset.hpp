#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "confide/gp.hpp"
#include "confide/pde.hpp"
#include "confide/rng.hpp"

namespace confide::data {

// Draws the family's coefficients from their documented ranges, in a fixed
// order, so replay and distribution tests can call this directly.
TrueCoeffs sample_coeffs(FamilyId family, Rng& rng);

// Default GP priors used for initial conditions.
GpSpec default_gp(FamilyId family);

nlohmann::json grid_to_json(const GridSpec& g);
GridSpec grid_from_json(const nlohmann::json& j);
nlohmann::json gp_to_json(const GpSpec& s);
GpSpec gp_from_json(const nlohmann::json& j);

struct SamplingSpec {
    GpSpec gp;
    int n_signals = 0;
    uint64_t seed = 0;
    int max_retries = 50;
};

struct SplitRange {
    int lo = 0, hi = 0;  // [lo, hi)
    int size() const { return hi - lo; }
};

struct Splits {
    SplitRange train, val, test;
    static Splits contiguous(int n);  // 80/10/10 by floor division
};

// Round through the stored precision so a value survives serialization
// bit-for-bit.
inline double quantize_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

// Writes manifest.json, signals.bin and coeffs.bin into dir. Every signal is
// produced from a per-slot seed stream, so the result is independent of jobs.
// Throws std::runtime_error if a slot exhausts its retry budget.
void generate_dataset(const std::string& dir, FamilyId family, const GridSpec& grid,
                      const SamplingSpec& spec, int jobs = 1);

// Read-only view of a generated dataset. Deliberately has no accessor for the
// coefficient file; evaluation code that needs ground truth must go through
// TruthSidecar explicitly.
class Dataset {
  public:
    static Dataset open(const std::string& dir);

    int size() const { return n_signals_; }
    FamilyId family() const { return family_; }
    const GridSpec& grid() const { return grid_; }
    const GpSpec& gp() const { return gp_; }
    const Splits& splits() const { return splits_; }
    uint64_t seed() const { return seed_; }
    const nlohmann::json& manifest() const { return manifest_; }

    Signal signal(int i) const;                    // decoded to f64
    std::vector<int> split_indices(const std::string& name) const;
    std::string content_hash() const { return content_hash_; }

  private:
    nlohmann::json manifest_;
    std::vector<unsigned char> signals_;
    std::vector<uint64_t> offsets_;
    FamilyId family_ = FamilyId::ConstantCoeff;
    GridSpec grid_;
    GpSpec gp_;
    Splits splits_;
    uint64_t seed_ = 0;
    int n_signals_ = 0;
    std::string content_hash_;
};

// Ground-truth coefficients, stored separately from the signal container.
class TruthSidecar {
  public:
    static TruthSidecar open(const std::string& dir);

    TrueCoeffs truth(int i) const;
    CoefficientEstimate truth_estimate(int i) const;
    int size() const { return n_signals_; }

  private:
    FamilyId family_ = FamilyId::ConstantCoeff;
    int n_signals_ = 0;
    int n_scalars_ = 0;
    std::vector<double> values_;
};

}  // namespace confide::data
