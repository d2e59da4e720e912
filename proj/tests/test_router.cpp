#include <doctest.h>

#include "mom/router.hpp"
#include "oracles.hpp"

using mom::RouterKind;
using mom::Tensor;
using D = Tensor<double>;

namespace {

oracle::GruWeights to_oracle(const mom::GruCell<double>& c, size_t d) {
    oracle::GruWeights w;
    w.d = d;
    auto cp = [](const D& t) { return oracle::Vec(t.values().begin(), t.values().end()); };
    w.wz = cp(c.wz); w.uz = cp(c.uz); w.bz = cp(c.bz);
    w.wr = cp(c.wr); w.ur = cp(c.ur); w.br = cp(c.br);
    w.wh = cp(c.wh); w.uh = cp(c.uh); w.bh = cp(c.bh);
    return w;
}

}  // namespace

TEST_CASE("gru step with all-zero parameters maps zero state to zero") {
    mom::Rng rng(1);
    auto cell = mom::GruCell<double>::init(4, rng, 0.5);
    for (auto* p : cell.params())
        for (auto& v : p->raw_values()) v = 0.0;
    auto x = oracle::rand_tensor<double>(rng, {2, 4}, false);
    auto s = D::zeros({2, 4});
    auto next = cell.step(x, s);
    for (const double v : next.values()) CHECK(v == 0.0);
}

TEST_CASE("gru saturated update gate preserves state") {
    mom::Rng rng(2);
    auto cell = mom::GruCell<double>::init(4, rng, 0.5);
    for (auto& v : cell.bz.raw_values()) v = -30.0;  // z ~ 0 regardless of input
    auto x = oracle::rand_tensor<double>(rng, {3, 4}, false);
    auto s = oracle::rand_tensor<double>(rng, {3, 4}, false);
    auto next = cell.step(x, s);
    for (size_t i = 0; i < next.numel(); ++i)
        CHECK(next.values()[i] == doctest::Approx(s.values()[i]).epsilon(1e-6));
}

TEST_CASE("gru step matches the scalar per-gate oracle") {
    mom::Rng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        auto cell = mom::GruCell<double>::init(4, rng, 0.6);
        for (auto* p : cell.params())
            if (p->rank() == 1)
                for (auto& v : p->raw_values()) v = rng.uniform(-0.3, 0.3);
        auto x = oracle::rand_tensor<double>(rng, {1, 4}, false);
        auto s = oracle::rand_tensor<double>(rng, {1, 4}, false);
        auto got = cell.step(x, s);
        auto ref = oracle::gru_step(to_oracle(cell, 4),
                                    {x.values().begin(), x.values().end()},
                                    {s.values().begin(), s.values().end()});
        for (size_t j = 0; j < 4; ++j)
            CHECK(got.values()[j] == doctest::Approx(ref[j]).epsilon(1e-6));
    }
}

TEST_CASE("gru width mismatch rejected") {
    mom::Rng rng(4);
    auto cell = mom::GruCell<double>::init(4, rng, 0.5);
    CHECK_THROWS_AS(cell.step(D::zeros({2, 3}), D::zeros({2, 3})), mom::DimensionError);
    CHECK_THROWS_AS(cell.step(D::zeros({2, 4}), D::zeros({3, 4})), mom::DimensionError);
}

TEST_CASE("gru step gradients pass finite differences through both arguments") {
    mom::Rng rng(5);
    auto cell = mom::GruCell<double>::init(3, rng, 0.6);
    auto x = oracle::rand_tensor<double>(rng, {2, 3}, true);
    auto s = oracle::rand_tensor<double>(rng, {2, 3}, true);
    auto f = [&] { return mom::sum_all(cell.step(x, s)); };
    CHECK(oracle::fd_check<double>(x, f) < 1e-6);
    CHECK(oracle::fd_check<double>(s, f) < 1e-6);
    CHECK(oracle::fd_check<double>(cell.uh, f) < 1e-6);
    CHECK(oracle::fd_check<double>(cell.bz, f) < 1e-6);
}

TEST_CASE("route examples from fixed logits") {
    // Route by planting logits through an identity projection: use a
    // 1-token MLP router with crafted final layer so logits are exact.
    // Simpler: exercise the selection helper directly.
    {
        double logits[] = {2, 1, 0};
        auto idx = mom::topk_indices(logits, 3, 1);
        CHECK(idx == std::vector<int>{0});
    }
    {
        double logits[] = {0, 0, 0};
        auto idx = mom::topk_indices(logits, 3, 2);
        CHECK(idx == std::vector<int>{0, 1});
    }
    {
        double logits[] = {1, 3, 2, 0};
        auto idx = mom::topk_indices(logits, 4, 2);
        CHECK(idx == std::vector<int>{1, 2});
        // softmax over the selected pair [3, 2]
        oracle::Vec sel{3, 2};
        auto gates = oracle::softmax_row(sel);
        CHECK(gates[0] == doctest::Approx(0.73106).epsilon(1e-4));
        CHECK(gates[1] == doctest::Approx(0.26894).epsilon(1e-4));
    }
}

TEST_CASE("top-k matches the sort oracle with lowest-index ties") {
    mom::Rng rng(6);
    for (int trial = 0; trial < 2000; ++trial) {
        const size_t n = 2 + rng.next_below(7);
        const size_t k = 1 + rng.next_below(n);
        oracle::Vec logits(n);
        // Quantized values make ties common.
        for (auto& v : logits) v = double(int(rng.next_below(5))) - 2.0;
        auto got = mom::topk_indices(logits.data(), n, k);
        auto want = oracle::topk_sorted(logits, k);
        CHECK(got == want);
    }
}

TEST_CASE("route_batch: identical rows decide identically, permutation equivariant") {
    mom::Rng rng(7);
    const size_t d = 6;
    auto router = mom::GruRouter<double>::init(RouterKind::ffn, d, 4, true, rng);
    auto row = oracle::rand_tensor<double>(rng, {1, d}, false);
    std::vector<double> two_rows(row.values().begin(), row.values().end());
    two_rows.insert(two_rows.end(), row.values().begin(), row.values().end());
    auto x = D::from_data({2, d}, two_rows);
    auto s0 = D::zeros({2, d});
    auto br = mom::route_batch(router, x, s0, 2);
    CHECK(br.decision.indices[0] == br.decision.indices[1]);
    CHECK(br.decision.gates[0][0] == doctest::Approx(br.decision.gates[1][0]));

    // Permuting rows permutes decisions identically.
    auto xa = oracle::rand_tensor<double>(rng, {3, d}, false);
    std::vector<double> swapped(xa.values().begin(), xa.values().end());
    for (size_t j = 0; j < d; ++j) std::swap(swapped[0 * d + j], swapped[2 * d + j]);
    auto xb = D::from_data({3, d}, std::move(swapped));
    auto sa = D::zeros({3, d});
    auto ra = mom::route_batch(router, xa, sa, 2);
    auto rb = mom::route_batch(router, xb, sa, 2);
    CHECK(ra.decision.indices[0] == rb.decision.indices[2]);
    CHECK(ra.decision.indices[2] == rb.decision.indices[0]);
    CHECK(ra.decision.indices[1] == rb.decision.indices[1]);
}

TEST_CASE("route_batch equals a per-row loop") {
    mom::Rng rng(8);
    const size_t d = 5, tokens = 4;
    auto router = mom::GruRouter<double>::init(RouterKind::attention, d, 3, true, rng);
    auto x = oracle::rand_tensor<double>(rng, {tokens, d}, false);
    auto s = oracle::rand_tensor<double>(rng, {tokens, d}, false);
    auto batch = mom::route_batch(router, x, s, 2);
    for (size_t i = 0; i < tokens; ++i) {
        auto xi = mom::slice_rows_copy(x, i);
        auto si = mom::slice_rows_copy(s, i);
        auto one = mom::route_batch(router, xi, si, 2);
        CHECK(one.decision.indices[0] == batch.decision.indices[i]);
        for (size_t j = 0; j < 2; ++j)
            CHECK(one.decision.gates[0][j] ==
                  doctest::Approx(batch.decision.gates[i][j]).epsilon(1e-12));
        for (size_t j = 0; j < d; ++j)
            CHECK(one.s_next.values()[j] ==
                  doctest::Approx(batch.s_next.at(i, j)).epsilon(1e-12));
    }
}

TEST_CASE("gate weights sum to one and shift invariance holds at index level") {
    mom::Rng rng(9);
    for (int trial = 0; trial < 300; ++trial) {
        const size_t n = 3 + rng.next_below(4);
        const size_t k = 1 + rng.next_below(n);
        // Dyadic grid logits keep the shifted comparison exact.
        std::vector<double> base(n);
        for (auto& v : base) v = double(int(rng.next_below(2048)) - 1024) / 128.0;
        const double shift = double(int(rng.next_below(17)) - 8);
        std::vector<double> shifted(base);
        for (auto& v : shifted) v += shift;

        auto la = D::from_data({1, n}, base);
        auto lb = D::from_data({1, n}, shifted);
        D ga, gb;
        auto da = mom::detail::select_topk(la, n, k, RouterKind::ffn, 0, -1, ga);
        auto db = mom::detail::select_topk(lb, n, k, RouterKind::ffn, 0, -1, gb);
        CHECK(da.indices[0] == db.indices[0]);
        double sum = 0.0;
        for (size_t j = 0; j < k; ++j) {
            CHECK(da.gates[0][j] == doctest::Approx(db.gates[0][j]).epsilon(1e-12));
            sum += da.gates[0][j];
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("K larger than choice count is a configuration error") {
    mom::Rng rng(10);
    auto router = mom::GruRouter<double>::init(RouterKind::ffn, 4, 2, true, rng);
    auto x = D::zeros({1, 4});
    auto s = D::zeros({1, 4});
    CHECK_THROWS_AS(mom::route_batch(router, x, s, 4), std::invalid_argument);
    CHECK_NOTHROW(mom::route_batch(router, x, s, 3));

    auto no_skip = mom::GruRouter<double>::init(RouterKind::ffn, 4, 2, false, rng);
    CHECK_THROWS_AS(mom::route_batch(no_skip, x, s, 3), std::invalid_argument);
    CHECK_NOTHROW(mom::route_batch(no_skip, x, s, 2));
}

TEST_CASE("skip never selected when the pool excludes it") {
    mom::Rng rng(11);
    auto router = mom::GruRouter<double>::init(RouterKind::ffn, 4, 3, false, rng);
    for (int trial = 0; trial < 50; ++trial) {
        auto x = oracle::rand_tensor<double>(rng, {2, 4}, false, -3, 3);
        auto s = oracle::rand_tensor<double>(rng, {2, 4}, false);
        auto br = mom::route_batch(router, x, s, 2);
        CHECK(br.decision.skip_index == -1);
        for (const auto& row : br.decision.indices)
            for (int idx : row) CHECK(idx < 3);
    }
}

TEST_CASE("recurrence: earlier input changes later GRU decision but not MLP") {
    mom::Rng rng(12);
    const size_t d = 6;
    auto gru = mom::GruRouter<double>::init(RouterKind::ffn, d, 4, false, rng);
    auto mlp = mom::MlpRouter<double>::init(RouterKind::ffn, d, 4, false, rng);

    // Scan candidate step-1 inputs until the step-3 GRU decision flips for
    // a fixed step-3 input; statelessness means MLP never flips.
    auto x3 = oracle::rand_tensor<double>(rng, {1, d}, false);
    auto x2 = oracle::rand_tensor<double>(rng, {1, d}, false);
    auto s0 = D::zeros({1, d});

    auto run_gru = [&](const D& x1) {
        auto r1 = mom::route_batch(gru, x1, s0, 1, 0);
        auto r2 = mom::route_batch(gru, x2, r1.s_next, 1, 1);
        auto r3 = mom::route_batch(gru, x3, r2.s_next, 1, 2);
        return r3.decision.indices[0][0];
    };
    auto run_mlp = [&](const D& x1) {
        auto r1 = mom::route_batch(mlp, x1, s0, 1, 0);
        auto r2 = mom::route_batch(mlp, x2, r1.s_next, 1, 1);
        auto r3 = mom::route_batch(mlp, x3, r2.s_next, 1, 2);
        return r3.decision.indices[0][0];
    };

    const int gru_base = run_gru(oracle::rand_tensor<double>(rng, {1, d}, false));
    const int mlp_base = run_mlp(oracle::rand_tensor<double>(rng, {1, d}, false));
    bool gru_flipped = false;
    for (int trial = 0; trial < 200 && !gru_flipped; ++trial) {
        auto x1 = oracle::rand_tensor<double>(rng, {1, d}, false, -8.0, 8.0);
        if (run_gru(x1) != gru_base) gru_flipped = true;
        CHECK(run_mlp(x1) == mlp_base);
    }
    CHECK(gru_flipped);
}

TEST_CASE("gate gradients reach router parameters") {
    mom::Rng rng(13);
    const size_t d = 5;
    auto router = mom::GruRouter<double>::init(RouterKind::ffn, d, 3, true, rng);
    auto x = oracle::rand_tensor<double>(rng, {2, d}, true);
    auto s = D::zeros({2, d});
    auto f = [&] {
        auto br = mom::route_batch(router, x, s, 2);
        return mom::sum_all(mom::mul(br.gates, br.gates));
    };
    CHECK(oracle::fd_check<double>(router.projection, f) < 1e-6);
    CHECK(oracle::fd_check<double>(router.cell.wz, f) < 1e-6);
    CHECK(oracle::fd_check<double>(x, f) < 1e-6);
}
