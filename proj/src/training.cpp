#include "sire/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace sire {

void TrainConfig::validate() const
{
    require(epochs >= 1, "epochs must be at least 1");
    require(samples_per_epoch >= 1, "samples per epoch must be at least 1");
    require(learning_rate > 0.0 && std::isfinite(learning_rate), "learning rate must be positive and finite");
    require(negative_probability >= 0.0 && negative_probability <= 1.0, "negative probability must lie in [0, 1]");
    require(checkpoint_every >= 0, "checkpoint cadence must be non-negative");
    require(precision == 32 || precision == 64, "precision must be 32 or 64");
    require(subdivisions >= 1 && subdivisions <= kMaxSubdivisions, "mesh subdivisions out of range");
    require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && epsilon > 0.0, "invalid Adam constants");
    scales.validate();
    architecture.validate();
}

TrainConfig train_config_from_json(const nlohmann::json& j)
{
    TrainConfig c;
    try {
        c.epochs = j.value("epochs", c.epochs);
        c.samples_per_epoch = j.value("samples_per_epoch", c.samples_per_epoch);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.negative_probability = j.value("negative_probability", c.negative_probability);
        c.seed = j.value("seed", c.seed);
        c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
        c.precision = j.value("precision", c.precision);
        c.subdivisions = j.value("subdivisions", c.subdivisions);
        c.beta1 = j.value("beta1", c.beta1);
        c.beta2 = j.value("beta2", c.beta2);
        c.epsilon = j.value("epsilon", c.epsilon);
        if (j.contains("architecture")) c.architecture = architecture_from_json(j.at("architecture"));
        if (j.contains("scales")) {
            const auto& s = j.at("scales");
            if (s.contains("fixed")) {
                c.scales = ScaleSet::fixed_set(s.at("fixed").get<std::vector<double>>());
            } else {
                const auto range = s.at("uniform").get<std::array<double, 2>>();
                c.scales = ScaleSet::uniform(range[0], range[1], s.at("count").get<int>());
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed training config: ") + e.what());
    }
    c.validate();
    return c;
}

nlohmann::json to_json(const TrainConfig& c)
{
    nlohmann::json scales;
    if (c.scales.randomized())
        scales = {{"uniform", {c.scales.low, c.scales.high}}, {"count", c.scales.count}};
    else
        scales = {{"fixed", c.scales.fixed}};
    return {{"epochs", c.epochs},
            {"samples_per_epoch", c.samples_per_epoch},
            {"learning_rate", c.learning_rate},
            {"scales", scales},
            {"negative_probability", c.negative_probability},
            {"seed", c.seed},
            {"checkpoint_every", c.checkpoint_every},
            {"precision", c.precision},
            {"architecture", to_json(c.architecture)},
            {"subdivisions", c.subdivisions},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"epsilon", c.epsilon}};
}

template <typename T>
double sample_loss(const Vector<T>& prediction, const std::optional<Vector<double>>& target, Vector<T>* grad)
{
    const auto n = prediction.size();
    require(n > 0, "empty prediction");
    if (target) require(target->size() == n, "prediction and target sizes differ");
    if (grad) grad->resize(n);
    double total = 0.0;
    for (Eigen::Index v = 0; v < n; ++v) {
        const double diff = static_cast<double>(prediction[v]) - (target ? (*target)[v] : 0.0);
        total += diff * diff;
        if (grad) (*grad)[v] = static_cast<T>(2.0 * diff / static_cast<double>(n));
    }
    return total / static_cast<double>(n);
}

Adam::Adam(std::size_t size, double lr, double beta1, double beta2, double epsilon)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(epsilon), m_(size, 0.0), v_(size, 0.0)
{
}

template <typename T>
void Adam::step(std::span<T> params, std::span<const T> grads)
{
    require(params.size() == m_.size() && grads.size() == m_.size(), "optimizer size mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
        const double g = grads[k];
        m_[k] = beta1_ * m_[k] + (1.0 - beta1_) * g;
        v_[k] = beta2_ * v_[k] + (1.0 - beta2_) * g * g;
        const double update = lr_ * (m_[k] / c1) / (std::sqrt(v_[k] / c2) + eps_);
        params[k] = static_cast<T>(params[k] - update);
    }
}

void canonicalize_scales(TrainingSample& sample)
{
    require(sample.scales.size() == sample.inputs.size(), "one signal per scale is required");
    std::vector<std::size_t> order(sample.scales.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return sample.scales[a] < sample.scales[b]; });
    std::vector<double> scales;
    std::vector<SphericalSignal> inputs;
    for (auto k : order) {
        scales.push_back(sample.scales[k]);
        inputs.push_back(std::move(sample.inputs[k]));
    }
    sample.scales = std::move(scales);
    sample.inputs = std::move(inputs);
}

namespace {

template <typename T>
double loss_and_gradient(const Network<T>& net, const SphereDomain<T>& domain, const TrainingSample& sample,
                         std::vector<T>& grads)
{
    const auto inputs = to_inputs<T>(sample.inputs);
    std::vector<Tape<T>> tapes;
    const auto out = forward_multiscale(net, domain, std::span<const Matrix<T>>(inputs), &tapes);
    Vector<T> d_max;
    const double loss = sample_loss(out.max, sample.target, &d_max);
    grads.assign(net.num_params(), T(0));
    if (std::isfinite(loss)) backward_multiscale(net, domain, out, tapes, d_max, std::span<T>(grads));
    return loss;
}

template <typename T>
double loss_only(const Network<T>& net, const SphereDomain<T>& domain, const TrainingSample& sample)
{
    const auto inputs = to_inputs<T>(sample.inputs);
    const auto out = forward_multiscale(net, domain, std::span<const Matrix<T>>(inputs));
    return sample_loss(out.max, sample.target);
}

std::string describe(const TrainingSample& s)
{
    std::ostringstream os;
    os << "case " << s.case_index << ", branch " << s.branch_index << ", arc " << s.arc_position
       << (s.negative ? " (negative)" : " (positive)") << ", scales [";
    for (std::size_t k = 0; k < s.scales.size(); ++k) os << (k ? ", " : "") << s.scales[k];
    os << "]";
    return os.str();
}

template <typename T>
TrainResult train_impl(const Dataset& dataset, const TrainConfig& config, const TrainOptions& options)
{
    Network<T> net(config.architecture);
    if (options.initial) {
        net = make_network<T>(*options.initial);
        require(net.architecture() == config.architecture, "initial weights do not match the configured architecture");
    } else {
        net.init(config.seed);
    }
    const auto domain = SphereDomain<T>::make(config.subdivisions, std::max(1, config.architecture.max_order()));
    Adam adam(net.num_params(), config.learning_rate, config.beta1, config.beta2, config.epsilon);
    std::mt19937_64 rng(config.seed);
    SampleOptions sample_options;
    sample_options.negative_probability = config.negative_probability;
    sample_options.channels = config.architecture.input_channels;

    TrainResult result;
    std::vector<T> grads;
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        EpochStats stats;
        stats.epoch = epoch;
        double pos = 0.0, neg = 0.0;
        for (int k = 0; k < config.samples_per_epoch; ++k) {
            TrainingSample sample = draw_sample(dataset, domain.mesh, config.scales, rng, sample_options);
            if (options.scale_hook) {
                // Re-sample at the substituted scales, keeping the location.
                sample.scales = options.scale_hook(sample.scales);
                const auto& tc = dataset.cases[sample.case_index];
                sample.inputs =
                    sample_multiscale(tc.volume, sample.centre, sample.scales, domain.mesh, sample_options.channels);
            }
            canonicalize_scales(sample);
            const double loss = loss_and_gradient(net, domain, sample, grads);
            if (!std::isfinite(loss))
                throw RuntimeFailure("non-finite loss at epoch " + std::to_string(epoch) + ", sample " +
                                     std::to_string(k) + ": " + describe(sample));
            adam.step(std::span<T>(net.params()), std::span<const T>(grads));
            result.step_losses.push_back(loss);
            if (sample.negative) {
                neg += loss;
                ++stats.negatives;
            } else {
                pos += loss;
                ++stats.positives;
            }
        }
        stats.mean_loss = (pos + neg) / config.samples_per_epoch;
        stats.mean_pos_loss = stats.positives ? pos / stats.positives : 0.0;
        stats.mean_neg_loss = stats.negatives ? neg / stats.negatives : 0.0;
        result.history.push_back(stats);
        if (options.on_epoch) options.on_epoch(stats);
        if (options.checkpoint && config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0)
            save_weights_atomic(*options.checkpoint, to_model_params(net));
    }
    result.model = to_model_params(net);
    if (options.checkpoint) save_weights_atomic(*options.checkpoint, result.model);
    return result;
}

}  // namespace

template <typename T>
double train_step(Network<T>& net, const SphereDomain<T>& domain, Adam& adam, const TrainingSample& sample)
{
    TrainingSample s = sample;
    canonicalize_scales(s);
    std::vector<T> grads;
    const double loss = loss_and_gradient(net, domain, s, grads);
    if (!std::isfinite(loss)) throw RuntimeFailure("non-finite loss: " + describe(s));
    adam.step(std::span<T>(net.params()), std::span<const T>(grads));
    return loss;
}

TrainResult train(const Dataset& dataset, const TrainConfig& config, const TrainOptions& options)
{
    config.validate();
    require(!dataset.cases.empty(), "dataset is empty");
    if (config.precision == 64) return train_impl<double>(dataset, config, options);
    return train_impl<float>(dataset, config, options);
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<EpochStats>& history)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write " + path.string());
    out.precision(10);
    out << "epoch,mean_loss,mean_pos_loss,mean_neg_loss\n";
    for (const auto& h : history)
        out << h.epoch << ',' << h.mean_loss << ',' << h.mean_pos_loss << ',' << h.mean_neg_loss << '\n';
    if (!out) throw RuntimeFailure("failed writing " + path.string());
}

void save_weights_atomic(const std::filesystem::path& path, const ModelParams& model)
{
    auto tmp = path;
    tmp += ".tmp";
    save_weights(tmp, model);
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw RuntimeFailure("cannot move checkpoint into place: " + ec.message());
}

GradientCheckResult gradient_check(const Network<double>& net, const SphereDomain<double>& domain,
                                   const TrainingSample& sample, int count, std::uint64_t seed)
{
    require(count >= 1, "gradient check needs at least one parameter");
    TrainingSample s = sample;
    canonicalize_scales(s);
    std::vector<double> grads;
    loss_and_gradient(net, domain, s, grads);

    std::vector<int> indices(net.num_params());
    std::iota(indices.begin(), indices.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(indices.begin(), indices.end(), rng);
    indices.resize(std::min<std::size_t>(indices.size(), count));

    Network<double> probe = net;
    GradientCheckResult r;
    for (int idx : indices) {
        const double theta = net.params()[idx];
        const double h = 1e-5 * (1.0 + std::abs(theta));
        probe.params()[idx] = theta + h;
        const double up = loss_only(probe, domain, s);
        probe.params()[idx] = theta - h;
        const double down = loss_only(probe, domain, s);
        probe.params()[idx] = theta;
        const double numeric = (up - down) / (2.0 * h);
        const double analytic = grads[idx];
        const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradientCheckFloor});
        const double rel = std::abs(analytic - numeric) / denom;
        ++r.checked;
        if (rel >= r.max_relative_error) {
            r.max_relative_error = rel;
            r.worst_index = idx;
            r.worst_analytic = analytic;
            r.worst_numeric = numeric;
        }
    }
    return r;
}

GradientCheckResult gradient_check(const ModelParams& model, const TrainingSample& sample, int count,
                                   std::uint64_t seed, int subdivisions)
{
    const auto net = make_network<double>(model);
    const auto domain = SphereDomain<double>::make(subdivisions, std::max(1, model.architecture.max_order()));
    return gradient_check(net, domain, sample, count, seed);
}

template double sample_loss(const Vector<float>&, const std::optional<Vector<double>>&, Vector<float>*);
template double sample_loss(const Vector<double>&, const std::optional<Vector<double>>&, Vector<double>*);
template void Adam::step(std::span<float>, std::span<const float>);
template void Adam::step(std::span<double>, std::span<const double>);
template double train_step(Network<float>&, const SphereDomain<float>&, Adam&, const TrainingSample&);
template double train_step(Network<double>&, const SphereDomain<double>&, Adam&, const TrainingSample&);

}  // namespace sire
