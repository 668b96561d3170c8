#include "doctest.h"

#include "sire/phantom.hpp"
#include "sire/training.hpp"
#include "test_util.hpp"

#include <fstream>

using namespace sire;

namespace {

Dataset small_dataset()
{
    PhantomSpec spec;
    spec.dims = {40, 40, 40};
    BranchSpec b;
    b.control_points = {Vec3(8, 12, 20), Vec3(20, 22, 18), Vec3(32, 28, 22)};
    b.radius.r0 = b.radius.r1 = 3.0;
    spec.branches.push_back(b);
    spec.noise_sigma = 10.0;
    spec.seed = 4;
    const auto ph = generate(spec);
    Dataset ds;
    ds.cases.push_back({rescale_window(ph.volume), ph.centerlines});
    return ds;
}

const Dataset& dataset()
{
    static const Dataset ds = small_dataset();
    return ds;
}

TrainConfig quick_config()
{
    TrainConfig c;
    c.epochs = 2;
    c.samples_per_epoch = 6;
    c.learning_rate = 1e-3;
    c.scales = ScaleSet::uniform(1.0, 8.0, 3);
    c.seed = 9;
    return c;
}

TrainingSample sample_with(bool negative, std::uint64_t seed, const IcosphereMesh& mesh)
{
    std::mt19937_64 rng(seed);
    SampleOptions opt;
    opt.negative_probability = negative ? 1.0 : 0.0;
    return draw_sample(dataset(), mesh, ScaleSet::uniform(1.0, 8.0, 3), rng, opt);
}

}  // namespace

TEST_CASE("loss examples")
{
    Vector<double> target(4);
    target << 1.0, 2.0, 0.0, -3.0;
    CHECK(sample_loss<double>(target, target) == 0.0);
    CHECK(sample_loss<double>(Vector<double>::Zero(4), std::nullopt) == 0.0);
    const Vector<double> shifted = target.array() + 1.0;
    CHECK(sample_loss<double>(shifted, target) == doctest::Approx(1.0).epsilon(1e-15));

    Vector<double> grad;
    Vector<double> pred(4);
    pred << 0.5, 1.0, -1.0, 2.0;
    const double l = sample_loss<double>(pred, target, &grad);
    CHECK(l == doctest::Approx((0.25 + 1.0 + 1.0 + 25.0) / 4));
    for (int k = 0; k < 4; ++k) CHECK(grad[k] == doctest::Approx(2.0 * (pred[k] - target[k]) / 4));

    const double neg = sample_loss<double>(pred, std::nullopt, &grad);
    CHECK(neg == doctest::Approx((0.25 + 1.0 + 1.0 + 4.0) / 4));
    for (int k = 0; k < 4; ++k) CHECK(grad[k] == doctest::Approx(2.0 * pred[k] / 4));
}

TEST_CASE("loss is invariant under a joint icosahedral permutation")
{
    const auto mesh = build_icosphere(3);
    std::mt19937_64 rng(1);
    std::normal_distribution<double> g(0.0, 1.0);
    Vector<double> pred(642);
    for (auto& x : pred) x = g(rng);
    const Vector<double> target = target_heatmap(mesh, Vec3(1, 2, 3).normalized(), Vec3(-1, 0, 1).normalized());
    for (const auto& r : icosahedral_rotations()) {
        const auto perm = vertex_permutation(mesh, r);
        Vector<double> p2(642), t2(642);
        for (int v = 0; v < 642; ++v) {
            p2[perm[v]] = pred[v];
            t2[perm[v]] = target[v];
        }
        CHECK(sample_loss<double>(p2, t2) == doctest::Approx(sample_loss<double>(pred, target)).epsilon(1e-14));
    }
}

TEST_CASE("zero learning rate leaves parameters unchanged")
{
    const auto domain = SphereDomain<double>::make(3, 1);
    Network<double> net(Architecture::default_gem());
    net.init(3);
    const auto before = net.params();
    Adam adam(net.num_params(), 0.0);
    for (int k = 0; k < 5; ++k) train_step(net, domain, adam, sample_with(k % 2 == 0, 10 + k, domain.mesh));
    CHECK(net.params() == before);
}

TEST_CASE("loss strictly decreases over 50 steps on a repeated sample")
{
    const auto domain = SphereDomain<double>::make(3, 1);
    Network<double> net(Architecture::default_gem());
    net.init(5);
    Adam adam(net.num_params(), 1e-5);
    const auto sample = sample_with(false, 3, domain.mesh);
    double prev = std::numeric_limits<double>::infinity();
    int increases = 0;
    for (int k = 0; k < 51; ++k) {
        const double loss = train_step(net, domain, adam, sample);
        if (!(loss < prev)) ++increases;
        prev = loss;
    }
    CHECK(increases == 0);
}

TEST_CASE("gradient check: linear model is exact")
{
    Architecture linear;
    linear.hidden = {};
    ModelParams model{linear, {}};
    Network<float> net(linear);
    net.init(2);
    model = to_model_params(net);
    const auto domain = SphereDomain<double>::make(3, 1);
    const auto r = gradient_check(model, sample_with(false, 4, domain.mesh), 200, 1);
    CHECK(r.checked == static_cast<int>(net.num_params()));
    CHECK(r.max_relative_error < 1e-9);
}

TEST_CASE("gradient check: full GEM model on positive and negative samples")
{
    const auto domain = SphereDomain<double>::make(3, 1);
    Network<double> net(Architecture::default_gem());
    net.init(1);
    for (bool negative : {false, true}) {
        CAPTURE(negative);
        const auto r = gradient_check(net, domain, sample_with(negative, 20, domain.mesh), 200, 2);
        CHECK(r.checked == 200);
        CHECK(r.max_relative_error < 1e-4);
    }
}

TEST_CASE("gradient check: GAT model")
{
    const auto domain = SphereDomain<double>::make(3, 0);
    Network<double> net(Architecture::default_gat());
    net.init(1);
    const auto r = gradient_check(net, domain, sample_with(false, 21, domain.mesh), 200, 3);
    CHECK(r.max_relative_error < 1e-3);
}

TEST_CASE("training is deterministic for a fixed seed")
{
    const auto cfg = quick_config();
    const auto a = train(dataset(), cfg);
    const auto b = train(dataset(), cfg);
    CHECK(a.step_losses == b.step_losses);
    CHECK(a.model.values == b.model.values);
    CHECK(std::abs(a.history.back().mean_loss - b.history.back().mean_loss) < 1e-6);
}

TEST_CASE("scale order does not change the training trajectory")
{
    auto cfg = quick_config();
    cfg.precision = 64;
    TrainOptions reversed;
    reversed.scale_hook = [](std::vector<double> s) {
        std::reverse(s.begin(), s.end());
        return s;
    };
    TrainOptions rotated;
    rotated.scale_hook = [](std::vector<double> s) {
        std::rotate(s.begin(), s.begin() + 1, s.end());
        return s;
    };
    const auto a = train(dataset(), cfg);
    const auto b = train(dataset(), cfg, reversed);
    const auto c = train(dataset(), cfg, rotated);
    CHECK(a.step_losses == b.step_losses);
    CHECK(a.model.values == b.model.values);
    CHECK(a.model.values == c.model.values);
}

TEST_CASE("loss history trends downward")
{
    auto cfg = quick_config();
    cfg.epochs = 10;
    cfg.samples_per_epoch = 12;
    const auto r = train(dataset(), cfg);
    REQUIRE(r.history.size() == 10);
    CHECK(r.history.back().mean_loss < r.history.front().mean_loss);
    for (const auto& h : r.history) CHECK(h.positives + h.negatives == 12);
}

TEST_CASE("non-finite loss aborts with the sample and scales")
{
    Dataset broken = dataset();
    std::fill(broken.cases[0].volume.data.begin(), broken.cases[0].volume.data.end(), std::nanf(""));
    auto cfg = quick_config();
    try {
        train(broken, cfg);
        FAIL("expected a runtime failure");
    } catch (const RuntimeFailure& e) {
        const std::string msg = e.what();
        CHECK(msg.find("non-finite") != std::string::npos);
        CHECK(msg.find("scale") != std::string::npos);
    }
}

TEST_CASE("train config validation and JSON")
{
    auto cfg = quick_config();
    CHECK(train_config_from_json(to_json(cfg)).epochs == cfg.epochs);
    const auto back = train_config_from_json(to_json(cfg));
    CHECK(to_json(back) == to_json(cfg));

    const auto fixed = train_config_from_json(nlohmann::json::parse(R"({"scales": {"fixed": [2, 4, 8]}})"));
    CHECK(fixed.scales.fixed == std::vector<double>{2, 4, 8});
    CHECK(fixed.learning_rate == 1e-4);

    cfg.learning_rate = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg.learning_rate = 1e-3;
    cfg.epochs = 0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    CHECK_THROWS_AS(train_config_from_json(nlohmann::json::parse(R"({"precision": 16})")), ValidationError);
}

TEST_CASE("checkpoints and loss history files")
{
    test::TempDir dir("train");
    auto cfg = quick_config();
    cfg.checkpoint_every = 1;
    TrainOptions opt;
    opt.checkpoint = dir / "ckpt.wts";
    int epochs_seen = 0;
    opt.on_epoch = [&](const EpochStats&) { ++epochs_seen; };
    const auto r = train(dataset(), cfg, opt);
    CHECK(epochs_seen == 2);
    CHECK(std::filesystem::exists(dir / "ckpt.wts"));
    CHECK(!std::filesystem::exists(dir / "ckpt.wts.tmp"));
    CHECK(load_weights(dir / "ckpt.wts").values == r.model.values);

    write_loss_csv(dir / "loss.csv", r.history);
    std::ifstream in(dir / "loss.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "epoch,mean_loss,mean_pos_loss,mean_neg_loss");
    int rows = 0;
    for (std::string line; std::getline(in, line);) ++rows;
    CHECK(rows == 2);

    // Resuming from saved weights continues from them.
    TrainOptions resume;
    resume.initial = r.model;
    cfg.epochs = 1;
    CHECK_NOTHROW(train(dataset(), cfg, resume));
}
