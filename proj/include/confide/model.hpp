#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "confide/dataset.hpp"
#include "confide/nn.hpp"
#include "confide/pde.hpp"

namespace confide::model {

// Confide: full method. AeIc: decoder not conditioned on the initial
// condition. NoAe: alpha forced to 0 (pure residual loss). Confide0: the
// symbolic estimator is replaced by a learned time-derivative network.
enum class Variant { Confide, AeIc, NoAe, Confide0 };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& s);

struct TrainConfig {
    Variant variant = Variant::Confide;
    double alpha = 0.5;  // loss = alpha*L_ae + (1-alpha)*L_coef
    double rho = 0.2;    // context fraction; n_ctx = floor(rho*nt)
    int max_epochs = 150;
    int patience = 20;
    int batch_size = 64;
    double lr = 1e-3;
    double lr_decay = 1.0;  // per-epoch multiplicative lr factor; 1 = constant lr
    int d_z = 64;

    std::vector<int> enc_hidden{256, 128};
    std::vector<int> dec_hidden{128, 256};
    std::vector<int> est_hidden{64, 64};   // scalar estimator h_omega
    std::vector<int> head_hidden{64, 64};  // pointwise coefficient-function heads
    int conv_c1 = 8, conv_c2 = 16;  // fn2d encoder channels
    int dense_hidden = 256;         // fn2d post-conv / pre-deconv dense width

    // Subsampling of residual rows/points in the training and validation
    // losses. Reported metrics always use the full stacks.
    int residual_row_stride = 1;
    int residual_col_stride = 1;

    bool random_offsets = true;  // one random patch per signal per epoch
    double max_skip_frac = 0.01;
    uint64_t seed = 0;

    static TrainConfig desk(FamilyId family);
    static TrainConfig paper(FamilyId family);
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
    void validate(FamilyId family) const;
};

int context_slices(const GridSpec& grid, double rho);

// State-dependent coefficient head. The first layer is stored split so the
// latent half can be evaluated once per patch and broadcast over points.
struct HeadParams {
    Tensor w_lat;    // [d_z, h]
    Tensor w_state;  // [arity, h]
    Tensor b1;       // [h]
    nn::MlpParams rest;  // [h, ..., 1]

    static HeadParams init(int d_z, int arity, const std::vector<int>& hidden, Rng& rng);
};

struct TrainResult {
    int epochs = 0;
    int best_epoch = -1;
    double best_val = 0.0;
    std::vector<double> train_loss, train_ae, train_coef, val_loss;
    int skipped_batches = 0;
};

struct LossParts {
    double total = 0.0, ae = 0.0, coef = 0.0;
};

// Raised when too many minibatches in one epoch produce non-finite losses.
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InferResult {
    Tensor latent;                 // [1, d_z]
    CoefficientEstimate estimate;  // heads close over the latent
    bool has_estimate = false;     // false for Confide0
    Signal prediction;             // context slices then rollout
    bool complete = true;          // false if the rollout left the stable region
    int n_ctx = 0;
};

class ConfideModel {
  public:
    static ConfideModel init(FamilyId family, const GridSpec& grid, const TrainConfig& cfg);

    // on_epoch(epoch, train_loss, val_loss) fires after every epoch.
    using EpochHook = std::function<void(int, double, double)>;

    TrainResult train(const data::Dataset& ds, const EpochHook& on_epoch = {});
    // Ablation entry point: explicit id lists instead of the stored splits.
    TrainResult train(const data::Dataset& ds, const std::vector<int>& train_ids,
                      std::vector<int> val_ids, const EpochHook& on_epoch = {});

    // Value-mode components (no graph).
    Tensor encode(const Patch& patch) const;                      // [1, d_z]
    Tensor reconstruct(const Tensor& latent, const Tensor& ic) const;  // [1, patch elems]
    CoefficientEstimate estimate(const Tensor& latent) const;
    InferResult infer(const Signal& signal) const;

    // Loss on prefix patches of the given signals, without an optimizer step.
    LossParts eval_loss(const data::Dataset& ds, const std::vector<int>& ids) const;
    // Single-batch gradients for inspection; prefix patches, no update.
    LossParts batch_gradients(const data::Dataset& ds, const std::vector<int>& ids,
                              std::vector<std::pair<std::string, Tensor>>& grads_out);

    void save(const std::string& path, const nlohmann::json& extra_meta = {}) const;
    static ConfideModel load(const std::string& path);

    FamilyId family() const { return family_; }
    const GridSpec& grid() const { return grid_; }
    const TrainConfig& config() const { return cfg_; }
    int n_ctx() const { return n_ctx_; }
    std::vector<std::pair<std::string, Tensor*>> named_params();
    std::vector<std::pair<std::string, const Tensor*>> named_params() const;

  private:
    struct BatchData;
    struct GraphVars;
    struct GraphLoss {
        ad::Var total, ae, coef;
    };

    GraphLoss build_loss(ad::Graph& g, const GraphVars& vars, const BatchData& bd) const;
    GraphVars register_params(ad::Graph& g) const;
    BatchData assemble(const data::Dataset& ds, const std::vector<int>& ids,
                       const std::vector<int>& offsets) const;
    void collect_grads(ad::Graph& g, const GraphVars& vars,
                       std::vector<const Tensor*>& out) const;
    std::vector<Tensor> rollout_rhs_confide0(const Tensor& latent,
                                             const std::vector<Tensor>& state) const;
    int feat_per_slice() const;

    FamilyId family_ = FamilyId::ConstantCoeff;
    GridSpec grid_;
    TrainConfig cfg_;
    int n_ctx_ = 0;

    // 1-D: enc_mlp_ is the whole encoder. 2-D: conv stack then enc_mlp_ on the
    // flattened features. Decoder mirrors.
    nn::MlpParams enc_mlp_;
    nn::MlpParams dec_mlp_;
    nn::Conv2dLayer conv1_, conv2_;
    nn::Deconv2dLayer dec_deconv1_, dec_deconv2_;
    nn::MlpParams scalar_head_;  // latent -> family scalars
    HeadParams state_head_;      // burgers / fn2d only
    nn::MlpParams m_net_;        // confide0 only

    bool has_conv_ = false;
    bool has_state_head_ = false;
};

}  // namespace confide::model
