#include <random>

#include <benchmark/benchmark.h>

#include "pcnn/blocks.hpp"
#include "pcnn/model.hpp"
#include "pcnn/ops.hpp"

using namespace pcnn;

namespace {

Tensor random(Shape shape, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = g(rng);
    return t;
}

blocks::BlockConfig block_config(std::size_t channels) {
    ModelConfig m = toy_config();
    m.channels = channels;
    return m.block_config();
}

// 3x3 conv at dilation 2, C -> C over a C x 32 x 64 map.
void BM_conv2d(benchmark::State& state) {
    const auto c = static_cast<std::size_t>(state.range(0));
    const Tensor x = random({c, 32, 64}, 1), w = random({c, c, 3, 3}, 2);
    ops::Conv2dOptions opt;
    opt.dilation = {2, 2};
    opt.padding = {2, 2};
    for (auto _ : state) benchmark::DoNotOptimize(ops::conv2d(Var(x), Var(w), Var{}, opt).value());
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * c * c * 9 * 32 * 64));
}
BENCHMARK(BM_conv2d)->Arg(8)->Arg(32);

void BM_self_ctfa(benchmark::State& state) {
    const auto c = static_cast<std::size_t>(state.range(0));
    const blocks::BlockConfig cfg = block_config(c);
    ParamSet p;
    ParamInit init(p, 3);
    blocks::init_self_ctfa(init, "", cfg);
    const Bindings bound(p, nullptr);
    const Tensor x = random({c, 32, 64}, 4);
    for (auto _ : state) benchmark::DoNotOptimize(blocks::self_ctfa_forward(Var(x), Scope(bound, "")).value());
}
BENCHMARK(BM_self_ctfa)->Arg(8)->Arg(32);

void BM_pcb_forward(benchmark::State& state) {
    const auto c = static_cast<std::size_t>(state.range(0));
    const blocks::BlockConfig cfg = block_config(c);
    ParamSet p;
    ParamInit init(p, 5);
    blocks::init_pcb(init, "", cfg);
    const Bindings bound(p, nullptr);
    const Tensor x = random({c, 16, 32}, 6);
    for (auto _ : state) benchmark::DoNotOptimize(blocks::pcb_forward(Var(x), Scope(bound, ""), cfg).value());
}
BENCHMARK(BM_pcb_forward)->Arg(8)->Arg(16);

void BM_pcb_backward(benchmark::State& state) {
    const auto c = static_cast<std::size_t>(state.range(0));
    const blocks::BlockConfig cfg = block_config(c);
    ParamSet p;
    ParamInit init(p, 5);
    blocks::init_pcb(init, "", cfg);
    const Tensor x = random({c, 16, 32}, 6);
    for (auto _ : state) {
        Tape tape;
        const Bindings bound(p, &tape);
        const Var y = blocks::pcb_forward(tape.leaf("x", x), Scope(bound, ""), cfg);
        benchmark::DoNotOptimize(tape.backward(ops::sum(y)));
    }
}
BENCHMARK(BM_pcb_backward)->Arg(8)->Arg(16);

void BM_toy_model_forward(benchmark::State& state) {
    const PcnnParams params = build(toy_config());
    const Tensor x = random({static_cast<std::size_t>(state.range(0))}, 7);
    for (auto _ : state) benchmark::DoNotOptimize(forward(params, x.data()));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_toy_model_forward)->Arg(4000)->Arg(16000);

} // namespace

BENCHMARK_MAIN();
