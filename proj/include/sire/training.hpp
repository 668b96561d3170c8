#pragma once

// Single-sample Adam training of the multi-scale estimator, the MSE and
// negative-sample objectives, and a finite-difference gradient check.

#include "sire/network.hpp"
#include "sire/sampler.hpp"

#include "json.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

namespace sire {

struct TrainConfig {
    int epochs = 300;
    int samples_per_epoch = 256;
    double learning_rate = 1e-4;
    ScaleSet scales = ScaleSet::uniform(1.0, 30.0, 8);
    double negative_probability = kNegativeProbability;
    std::uint64_t seed = 1;
    /// Epochs between checkpoints; 0 writes only the final weights.
    int checkpoint_every = 0;
    /// 32 or 64.
    int precision = 32;
    Architecture architecture = Architecture::default_gem();
    int subdivisions = 3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    void validate() const;
};

/// Keys mirror the field names; "scales" is {"fixed": [...]} or
/// {"uniform": [low, high], "count": m}. Missing keys keep their defaults.
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& config);

/// Positive: mean (pred - target)^2. Negative (no target): mean pred^2.
/// Writes d loss / d pred when grad is non-null.
template <typename T>
double sample_loss(const Vector<T>& prediction, const std::optional<Vector<double>>& target,
                   Vector<T>* grad = nullptr);

struct EpochStats {
    int epoch = 0;
    double mean_loss = 0.0;
    double mean_pos_loss = 0.0;
    double mean_neg_loss = 0.0;
    int positives = 0;
    int negatives = 0;
};

struct TrainOptions {
    /// Weights are written here at the checkpoint cadence and at the end.
    std::optional<std::filesystem::path> checkpoint;
    /// Starting weights; a freshly initialised network when absent.
    std::optional<ModelParams> initial;
    std::function<void(const EpochStats&)> on_epoch;
    /// Replaces the per-sample scale draw; used to test ordering invariance.
    std::function<std::vector<double>(std::vector<double>)> scale_hook;
};

struct TrainResult {
    ModelParams model;
    std::vector<EpochStats> history;
    /// Loss of every optimisation step, in order.
    std::vector<double> step_losses;
};

class Adam {
public:
    Adam(std::size_t size, double lr, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8);

    template <typename T>
    void step(std::span<T> params, std::span<const T> grads);

    long steps() const { return t_; }

private:
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<double> m_, v_;
};

/// Orders scales ascending (stable) together with their signals, so the
/// gradient accumulation order does not depend on how the list was given.
void canonicalize_scales(TrainingSample& sample);

/// Runs one Adam step on a fixed sample and returns its loss before the step.
template <typename T>
double train_step(Network<T>& net, const SphereDomain<T>& domain, Adam& adam, const TrainingSample& sample);

TrainResult train(const Dataset& dataset, const TrainConfig& config, const TrainOptions& options = {});

/// epoch,mean_loss,mean_pos_loss,mean_neg_loss
void write_loss_csv(const std::filesystem::path& path, const std::vector<EpochStats>& history);

/// Writes to a temporary sibling, then renames over the target.
void save_weights_atomic(const std::filesystem::path& path, const ModelParams& model);

struct GradientCheckResult {
    double max_relative_error = 0.0;
    int checked = 0;
    int worst_index = -1;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

inline constexpr double kGradientCheckFloor = 1e-6;

/// Compares analytic gradients against central differences with
/// h = 1e-5 (1 + |theta|) in 64-bit precision on `count` random parameters
/// (all of them if the model has fewer). Relative error is
/// |a - n| / max(|a|, |n|, kGradientCheckFloor).
GradientCheckResult gradient_check(const Network<double>& net, const SphereDomain<double>& domain,
                                   const TrainingSample& sample, int count, std::uint64_t seed);
GradientCheckResult gradient_check(const ModelParams& model, const TrainingSample& sample, int count,
                                   std::uint64_t seed, int subdivisions = 3);

}  // namespace sire
