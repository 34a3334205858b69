#pragma once

#include "scanshift/cohort.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

namespace scanshift::mil {

/// Training defaults follow the ABMIL (CLAM-SB style) recipe: dropout 0.25,
/// AdamW lr 1e-4, weight decay 1e-5, at most 20 epochs, early stopping with
/// patience 10, cross-entropy bag loss.
struct Hyperparams {
    std::size_t input_dim = 0;
    std::size_t proj_dim = 512;
    std::size_t attn_dim = 256;
    std::size_t n_classes = 2;
    double dropout = 0.25;
    double learning_rate = 1e-4;
    double weight_decay = 1e-5;
    int max_epochs = 20;
    int patience = 10;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    /// Throws BadHyperparams.
    void validate() const;
};

/// Gated-attention MIL network:
///   m_k    = relu(W_proj x_k + b_proj)                (dropout on m_k)
///   s_k    = w . (tanh(V m_k) * sigmoid(U m_k))
///   a      = softmax(s)
///   z      = sum_k a_k m_k                             (dropout on z)
///   logits = W_cls z + b_cls
/// The same struct holds gradients and Adam moments.
struct Model {
    Eigen::MatrixXd proj_w;  // P x d
    Eigen::VectorXd proj_b;  // P
    Eigen::MatrixXd attn_v;  // A x P
    Eigen::MatrixXd attn_u;  // A x P
    Eigen::VectorXd attn_w;  // A
    Eigen::MatrixXd cls_w;   // C x P
    Eigen::VectorXd cls_b;   // C

    static constexpr std::size_t kTensorCount = 7;

    static Model zeros(const Hyperparams& hp);
    /// Xavier-normal weights, zero biases.
    static Model xavier(const Hyperparams& hp, std::mt19937_64& rng);

    std::array<std::span<double>, kTensorCount> tensors();
    std::array<std::span<const double>, kTensorCount> tensors() const;
    std::size_t parameter_count() const;
    bool same_shape(const Model& other) const;
    bool all_finite() const;

    friend bool operator==(const Model& a, const Model& b);
};

/// Inverted-dropout multipliers (0 or 1/(1-rate)). Empty means no dropout.
struct DropoutMask {
    RowMatrix tiles;        // K x P
    Eigen::VectorXd slide;  // P

    bool empty() const { return tiles.size() == 0 && slide.size() == 0; }
    static DropoutMask sample(std::size_t tile_count, std::size_t proj_dim, double rate,
                              std::mt19937_64& rng);
};

struct Forward {
    Eigen::VectorXd logits;
    Eigen::VectorXd attention;  // sums to 1
};

Forward forward(const RowMatrix& bag, const Model& model, const DropoutMask& mask = {});

struct LossGrad {
    double loss = 0.0;
    Model grads;
};

/// Softmax cross-entropy of the bag and its analytic gradient.
LossGrad loss_grad(const RowMatrix& bag, std::size_t label, const Model& model,
                   const DropoutMask& mask = {});

/// Same as loss_grad, writing into `out` so its buffers can be reused.
void loss_grad_into(const RowMatrix& bag, std::size_t label, const Model& model,
                    const DropoutMask& mask, LossGrad& out);

/// Class probabilities with dropout disabled.
Eigen::VectorXd predict(const RowMatrix& bag, const Model& model);

struct AdamState {
    Model m;
    Model v;
    std::int64_t step = 0;

    static AdamState zeros(const Hyperparams& hp);
};

/// One AdamW update (decoupled weight decay, bias-corrected moments).
/// Increments state.step. Throws NonFiniteUpdate.
void adamw_step(Model& model, const Model& grads, AdamState& state, const Hyperparams& hp);

struct Split {
    std::vector<std::size_t> train;  // ascending patient indices
    std::vector<std::size_t> val;
};

/// Per-class seeded 80/20 splits; split i uses seed (seed_base, i) and depends
/// only on the labels and the seed. Throws ClassTooSmall.
std::vector<Split> stratified_splits(std::span<const int> labels, double train_ratio = 0.8,
                                     std::size_t n_splits = 10, std::uint64_t seed_base = 0);

struct TrainRun {
    std::uint64_t seed = 0;
    std::size_t split_id = 0;
    std::vector<double> train_losses;  // mean per epoch
    std::vector<double> val_losses;
    std::size_t best_epoch = 0;        // index into val_losses
    Model model;                       // parameters after best_epoch
};

/// Batch-size-1 AdamW training with seeded shuffling and dropout; keeps the
/// model with the lowest validation loss and stops after `patience`
/// consecutive non-improving epochs or at max_epochs.
TrainRun train(std::span<const RowMatrix> bags, std::span<const int> labels, const Split& split,
               const Hyperparams& hp, std::uint64_t seed, std::size_t split_id = 0);

/// Mean cross-entropy over `ids` without dropout.
double mean_loss(std::span<const RowMatrix> bags, std::span<const int> labels,
                 std::span<const std::size_t> ids, const Model& model);

/// Checkpoint: magic "MIL1", u32 LE header length, JSON header (shapes,
/// hyperparameters, seed), then every parameter as LE float64 in tensor order.
void save_checkpoint(const std::filesystem::path& path, const Model& model, const Hyperparams& hp,
                     std::uint64_t seed);

struct Checkpoint {
    Model model;
    Hyperparams hp;
    std::uint64_t seed = 0;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace scanshift::mil
