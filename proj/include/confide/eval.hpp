#pragma once

#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "confide/dataset.hpp"
#include "confide/model.hpp"

namespace confide::eval {

// ---- primitive metrics ----

// MSE between slice ja of a and slice jb of b, averaged over fields and space.
double slice_mse(const Signal& a, int ja, const Signal& b, int jb);

// Per-horizon MSE for one signal: entry h-1 compares slice n_ctx-1+h of both
// signals, h = 1..n_slices-n_ctx. Both signals must span the full window.
std::vector<double> rollout_mse_curve(const Signal& pred, const Signal& truth, int n_ctx);

// Freeze the last context slice for all future horizons.
Signal persistence_prediction(const Signal& truth, int n_ctx);

// Extend a truncated rollout to n_slices by repeating its last slice.
Signal pad_prediction(const Signal& pred, int n_slices);

struct R2Result {
    double r2 = 0.0;
    bool defined = false;  // false when the truths have zero variance
};
R2Result r2_of(const std::vector<double>& truth, const std::vector<double>& est);

struct Aggregate {
    double mean = 0.0, stdev = 0.0;
    int n = 0;
};
Aggregate aggregate(const std::vector<double>& xs);

// Coefficient error against the ground-truth estimate (scalars + analytic
// heads). Head error is the MSE of head outputs over every state visited by
// the signal's context slices.
struct CoefParts {
    double overall = 0.0;
    double scalar = 0.0;
    double head = 0.0;   // NaN when the family has no function head
    bool has_head = false;
};
CoefParts coefficient_error(const CoefficientEstimate& est, const CoefficientEstimate& truth,
                            const Signal& sig, int n_ctx);

// ---- full-model evaluation ----

struct SignalRecord {
    int id = -1;
    bool complete = true;
    double final_mse = 0.0, final_pers = 0.0;
    std::vector<double> curve, curve_pers;
    CoefParts coef;            // valid only if has_coef
    bool has_coef = false;
    std::vector<double> scalar_truth, scalar_est;
};

// Coefficient-function field sample (estimated vs. true head output along the
// grid at a few time slices of one test signal).
struct HeadFieldRow {
    int slice = 0, point = 0;
    double u = 0.0, v = 0.0;  // v only for two-field families
    double truth = 0.0, est = 0.0;
};

struct EvalReport {
    FamilyId family = FamilyId::ConstantCoeff;
    std::string variant, split;
    int n_ctx = 0;
    int n_signals = 0, n_incomplete = 0;
    double dt = 0.0;  // grid step, for time axes in the exported curves

    std::vector<SignalRecord> signals;  // in evaluation id order

    std::vector<double> curve_mean, curve_std, pers_curve_mean, pers_curve_std;
    Aggregate final_mse, pers_final;
    double mean_over_horizon = 0.0;
    double improvement_vs_persistence = 0.0;  // pers mean / model mean

    bool has_coef = false;
    Aggregate coef_overall, coef_scalar, coef_head;
    bool has_head = false;
    std::vector<std::string> scalar_names;
    std::vector<R2Result> scalar_r2;
    std::vector<HeadFieldRow> head_field;  // from the first evaluated signal
};

struct EvalOptions {
    std::string split = "test";
    std::vector<int> ids;  // explicit id list; overrides split when non-empty
    int jobs = 1;
};

// truth may be null: prediction metrics only (also the case for confide0).
EvalReport evaluate(const model::ConfideModel& m, const data::Dataset& ds,
                    const data::TruthSidecar* truth, const EvalOptions& opt = {});

// ---- ablation drivers ----

struct AblationCell {
    std::string label;
    double pred_final = 0.0;  // test-set final-horizon MSE (mean over signals)
    double coef_error = 0.0;  // test-set overall coefficient error; NaN if n/a
    int n_incomplete = 0;
    int epochs = 0;
};

// Trains one model per cell with shared seeds; identical cells across the
// three sweeps (size 3000 / rho 0.2 / variant confide with the same base
// config) are trained once and reused.
class AblationRunner {
  public:
    AblationRunner(const data::Dataset& ds, const data::TruthSidecar& truth,
                   model::TrainConfig base, int jobs = 1);

    std::vector<AblationCell> train_size(const std::vector<int>& sizes);
    std::vector<AblationCell> context_ratio(const std::vector<double>& rhos);
    std::vector<AblationCell> autoencoder();  // confide, ae-ic, no-ae

    // Seeds the memo with an externally computed cell. The caller must have
    // produced `cell` by the same train-and-evaluate procedure run_cell uses,
    // or later sweeps will disagree with fresh runs.
    void prime(const model::TrainConfig& cfg, int n_train, const AblationCell& cell);

  private:
    AblationCell run_cell(const model::TrainConfig& cfg, int n_train);
    std::vector<AblationCell> run_cells(const std::vector<std::string>& labels,
                                        const std::vector<model::TrainConfig>& cfgs,
                                        const std::vector<int>& n_trains);

    const data::Dataset& ds_;
    const data::TruthSidecar& truth_;
    model::TrainConfig base_;
    int jobs_;
    std::map<std::string, AblationCell> memo_;
};

// ---- report files ----

nlohmann::json metrics_json(const EvalReport& r);

// Writes metrics.json, horizon_curve.csv, scatter.csv (when coefficients are
// available), coef_field.csv (function-head families) and provenance.json.
void write_report(const std::string& dir, const EvalReport& r, const nlohmann::json& provenance);

// ablation_<axis>.csv; when pct_vs_first, appends percentage columns relative
// to the first row.
void write_ablation_csv(const std::string& path, const std::string& key_column,
                        const std::vector<AblationCell>& cells, bool pct_vs_first);

// The JSON schema that metrics.json conforms to; schemas/report.schema.json
// ships the same document.
nlohmann::json report_schema();

// Minimal structural validator for the schema subset used by report_schema
// (type/properties/required/items/enum). Returns false and fills err on the
// first violation.
bool validate_schema(const nlohmann::json& doc, const nlohmann::json& schema, std::string* err);

}  // namespace confide::eval
