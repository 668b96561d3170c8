// OpenMP kernels against their serial references.

#include "sire/kernels.hpp"
#include "sire/network.hpp"
#include "sire/sampler.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace sire;

namespace {

struct AggregationFixture {
    SphereDomain<float> domain = SphereDomain<float>::make(3, 2);
    FieldSignature sig{8, 8, 8};
    AggregationPlan plan = AggregationPlan::make(sig.slots(), {0, 1, 2}, sig.dim());
    Matrix<float> in;
    Matrix<float> d_agg;

    AggregationFixture()
    {
        std::mt19937_64 rng(1);
        std::normal_distribution<float> g(0.0f, 1.0f);
        in.resize(domain.num_vertices(), sig.dim());
        for (auto& x : in.reshaped()) x = g(rng);
        d_agg.resize(domain.num_vertices(), plan.agg_dim);
        for (auto& x : d_agg.reshaped()) x = g(rng);
    }
};

const AggregationFixture& fixture()
{
    static const AggregationFixture f;
    return f;
}

ImageVolume noise_volume()
{
    ImageVolume vol({96, 96, 96}, Vec3(1, 1, 1), Vec3::Zero());
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (auto& v : vol.data) v = u(rng);
    return vol;
}

void BM_GemAggregate(benchmark::State& state)
{
    const auto& f = fixture();
    Matrix<float> agg;
    for (auto _ : state) {
        gem_aggregate(f.domain.edges, f.plan, f.in, agg);
        benchmark::DoNotOptimize(agg.data());
    }
}

void BM_GemAggregateReference(benchmark::State& state)
{
    const auto& f = fixture();
    Matrix<float> agg;
    for (auto _ : state) {
        gem_aggregate_reference(f.domain.edges, f.plan, f.in, agg);
        benchmark::DoNotOptimize(agg.data());
    }
}

void BM_GemAggregateBackward(benchmark::State& state)
{
    const auto& f = fixture();
    Matrix<float> d_in;
    for (auto _ : state) {
        gem_aggregate_backward(f.domain.edges, f.plan, f.d_agg, d_in);
        benchmark::DoNotOptimize(d_in.data());
    }
}

void BM_GemAggregateBackwardReference(benchmark::State& state)
{
    const auto& f = fixture();
    Matrix<float> d_in;
    for (auto _ : state) {
        gem_aggregate_backward_reference(f.domain.edges, f.plan, f.d_agg, d_in);
        benchmark::DoNotOptimize(d_in.data());
    }
}

void BM_SampleRays(benchmark::State& state)
{
    static const ImageVolume vol = noise_volume();
    const auto& mesh = fixture().domain.mesh;
    Matrix<double> out;
    for (auto _ : state) {
        sample_rays(vol, Vec3(48, 48, 48), 20.0, mesh.vertices, kDefaultRayChannels, out);
        benchmark::DoNotOptimize(out.data());
    }
}

void BM_SampleRaysReference(benchmark::State& state)
{
    static const ImageVolume vol = noise_volume();
    const auto& mesh = fixture().domain.mesh;
    Matrix<double> out;
    for (auto _ : state) {
        sample_rays_reference(vol, Vec3(48, 48, 48), 20.0, mesh.vertices, kDefaultRayChannels, out);
        benchmark::DoNotOptimize(out.data());
    }
}

void BM_NetworkForward(benchmark::State& state)
{
    const auto arch = Architecture::default_gem();
    const auto domain = SphereDomain<float>::make(3, arch.max_order());
    Network<float> net(arch);
    net.init(3);
    std::mt19937_64 rng(4);
    std::normal_distribution<float> g(0.0f, 1.0f);
    Matrix<float> in(domain.num_vertices(), arch.input_channels);
    for (auto& x : in.reshaped()) x = g(rng);
    for (auto _ : state) {
        auto out = net.forward(domain, in);
        benchmark::DoNotOptimize(out.data());
    }
}

}  // namespace

BENCHMARK(BM_GemAggregate)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_GemAggregateReference)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_GemAggregateBackward)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_GemAggregateBackwardReference)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_SampleRays)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_SampleRaysReference)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_NetworkForward)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
