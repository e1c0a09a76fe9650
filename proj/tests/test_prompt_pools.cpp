#include <doctest.h>

#include <cmath>
#include <numbers>

#include "pdet/numcore.hpp"
#include "pdet/prompt_pools.hpp"
#include "pdet/rng.hpp"

using namespace pdet;

namespace {

PoolEntry entry_with(Tensor prompt, std::vector<double> key,
                     std::vector<double> adapter) {
    PoolEntry e;
    e.prompt = std::move(prompt);
    e.key = std::move(key);
    e.adapter = std::move(adapter);
    return e;
}

}  // namespace

TEST_CASE("retrieve: self-retrieval returns the prompt exactly") {
    SharedPool shared;
    shared.prompt_len = 2;
    shared.feature_dim = 3;
    const Tensor prompt({2, 3}, {1, 2, 3, 4, 5, 6});
    const std::vector<double> query = {0.3, -0.7, 0.9};
    shared.entries.push_back(entry_with(prompt, query, {1, 1, 1}));
    PrivatePool priv;
    priv.prompt_len = 2;
    priv.feature_dim = 3;

    const RetrievalResult r = retrieve(query, shared, priv);
    CHECK(r.weights.size() == 1);
    CHECK(r.weights[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(r.prompt.data == prompt.data);
}

TEST_CASE("retrieve: orthogonal keys give a zero prompt") {
    SharedPool shared;
    shared.prompt_len = 2;
    shared.feature_dim = 2;
    for (int i = 0; i < 3; ++i)
        shared.entries.push_back(
            entry_with(Tensor({2, 2}, {1, 1, 1, 1}), {0, 1}, {1, 1}));
    PrivatePool priv;
    priv.prompt_len = 2;
    priv.feature_dim = 2;

    const std::vector<double> query = {1, 0};
    const RetrievalResult r = retrieve(query, shared, priv);
    for (double w : r.weights) CHECK(w == 0.0);
    for (double v : r.prompt.data) CHECK(v == 0.0);
}

TEST_CASE("retrieve matches a loop-based oracle on mixed pools") {
    Rng rng(71);
    const std::size_t lp = 4, dim = 6;
    SharedPool shared = SharedPool::init(3, lp, dim, rng.next_u64());
    PrivatePool priv;
    priv.prompt_len = lp;
    priv.feature_dim = dim;
    grow_private(priv, 0, 2, rng.next_u64());

    std::vector<double> query(dim);
    for (double& v : query) v = rng.uniform(-1, 1);

    const RetrievalResult got = retrieve(query, shared, priv);
    CHECK(got.weights.size() == 5);

    // Independent scalar recomputation.
    std::vector<const PoolEntry*> entries;
    for (const auto& e : shared.entries) entries.push_back(&e);
    for (const auto& s : priv.slabs)
        for (const auto& e : s.entries) entries.push_back(&e);

    std::vector<double> expect(lp * dim, 0.0);
    for (std::size_t i = 0; i < entries.size(); ++i) {
        double dot_mk = 0.0, nm = 0.0, nk = 0.0;
        for (std::size_t d = 0; d < dim; ++d) {
            const double m = query[d] * entries[i]->adapter[d];
            dot_mk += m * entries[i]->key[d];
            nm += m * m;
            nk += entries[i]->key[d] * entries[i]->key[d];
        }
        const double w = dot_mk / (std::sqrt(nm) * std::sqrt(nk));
        CHECK(std::abs(got.weights[i] - w) <= 1e-12);
        for (std::size_t x = 0; x < expect.size(); ++x)
            expect[x] += w * entries[i]->prompt.data[x];
    }
    for (std::size_t x = 0; x < expect.size(); ++x)
        CHECK(std::abs(got.prompt.data[x] - expect[x]) <= 1e-10);
}

TEST_CASE("retrieve: zero-norm entries get weight zero and are counted") {
    SharedPool shared;
    shared.prompt_len = 2;
    shared.feature_dim = 2;
    shared.entries.push_back(
        entry_with(Tensor({2, 2}, {1, 2, 3, 4}), {1, 0}, {0, 0}));  // dead adapter
    PrivatePool priv;
    priv.prompt_len = 2;
    priv.feature_dim = 2;

    const std::vector<double> query = {1, 1};
    const RetrievalResult r = retrieve(query, shared, priv);
    CHECK(r.weights[0] == 0.0);
    CHECK(r.zero_norm_entries == 1);
}

TEST_CASE("retrieval is linear in the prompts") {
    Rng rng(73);
    const std::size_t lp = 2, dim = 4;
    SharedPool shared = SharedPool::init(4, lp, dim, rng.next_u64());
    PrivatePool priv;
    priv.prompt_len = lp;
    priv.feature_dim = dim;
    grow_private(priv, 0, 3, rng.next_u64());

    std::vector<double> query(dim);
    for (double& v : query) v = rng.uniform(-1, 1);
    const RetrievalResult base = retrieve(query, shared, priv);

    const double c = 2.5;
    for (auto& e : shared.entries)
        for (double& v : e.prompt.data) v *= c;
    for (auto& s : priv.slabs)
        for (auto& e : s.entries)
            for (double& v : e.prompt.data) v *= c;
    const RetrievalResult scaled = retrieve(query, shared, priv);

    CHECK(scaled.weights == base.weights);  // weights ignore prompts
    for (std::size_t x = 0; x < base.prompt.data.size(); ++x)
        CHECK(scaled.prompt.data[x] ==
              doctest::Approx(c * base.prompt.data[x]).epsilon(1e-12));
}

TEST_CASE("split_prefix partitions and restores") {
    const Tensor two({2, 3}, {1, 2, 3, 4, 5, 6});
    const auto [k2, v2] = split_prefix(two);
    CHECK(k2.data == std::vector<double>{1, 2, 3});
    CHECK(v2.data == std::vector<double>{4, 5, 6});

    Rng rng(79);
    Tensor big = Tensor::zeros({8, 5});
    for (double& v : big.data) v = rng.uniform(-1, 1);
    const auto [pk, pv] = split_prefix(big);
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t d = 0; d < 5; ++d) {
            CHECK(pk.at(r, d) == big.at(r, d));
            CHECK(pv.at(r, d) == big.at(r + 4, d));
        }

    std::vector<double> restored = pk.data;
    restored.insert(restored.end(), pv.data.begin(), pv.data.end());
    CHECK(restored == big.data);
}

TEST_CASE("pool construction rejects odd prompt lengths") {
    CHECK_THROWS(SharedPool::init(2, 3, 4, 1));
    PrivatePool priv;
    priv.prompt_len = 3;
    priv.feature_dim = 4;
    CHECK_THROWS(grow_private(priv, 0, 2, 1));
}

TEST_CASE("ddl closed forms") {
    const std::size_t lp = 2, dim = 4;
    const double half_pi = std::numbers::pi / 2.0;

    // Exactly orthogonal prompts (disjoint support) sit on the hinge: loss 0.
    SharedPool shared;
    shared.prompt_len = lp;
    shared.feature_dim = dim;
    shared.entries.push_back(entry_with(
        Tensor({lp, dim}, {1, 0, 0, 0, 2, 0, 0, 0}), {1, 0, 0, 0}, {1, 1, 1, 1}));
    PrivatePool priv;
    priv.prompt_len = lp;
    priv.feature_dim = dim;
    PrivateSlab slab;
    slab.task_id = 0;
    slab.entries.push_back(entry_with(
        Tensor({lp, dim}, {0, 3, 0, 0, 0, 1, 0, 0}), {1, 0, 0, 0}, {1, 1, 1, 1}));
    priv.slabs.push_back(slab);

    const DdlResult ortho = ddl_loss(shared, priv, half_pi, 0.15);
    CHECK(std::abs(ortho.value) <= 1e-12);

    // One parallel pair: loss = 0.15 * 2 * (pi/2) = 0.15 * pi. The vectors
    // have exact integer norms (3-4-5 scaled), so cos evaluates to exactly 1.
    shared.entries[0].prompt = Tensor({lp, dim}, {3, 0, 0, 0, 4, 0, 0, 0});
    priv.slabs[0].entries[0].prompt = Tensor({lp, dim}, {6, 0, 0, 0, 8, 0, 0, 0});
    const DdlResult parallel = ddl_loss(shared, priv, half_pi, 0.15);
    CHECK(std::abs(parallel.value - 0.47123889803846897) <= 1e-9);
}

TEST_CASE("ddl hinge is exactly flat past the threshold") {
    const double half_pi = std::numbers::pi / 2.0;
    SharedPool shared;
    shared.prompt_len = 2;
    shared.feature_dim = 2;
    shared.entries.push_back(
        entry_with(Tensor({2, 2}, {1, 0, 0, 0}), {1, 0}, {1, 1}));
    PrivatePool priv;
    priv.prompt_len = 2;
    priv.feature_dim = 2;
    PrivateSlab slab;
    slab.task_id = 0;
    // Angle > 90 degrees (negative dot product).
    slab.entries.push_back(
        entry_with(Tensor({2, 2}, {-1, 0.2, 0, 0}), {1, 0}, {1, 1}));
    priv.slabs.push_back(slab);

    const DdlResult before = ddl_loss(shared, priv, half_pi, 0.15);
    CHECK(before.value == 0.0);
    for (const auto& t : before.d_shared)
        for (double v : t.data) CHECK(v == 0.0);

    // Perturb while staying past the threshold: still exactly zero.
    priv.slabs[0].entries[0].prompt.data[1] = 0.4;
    const DdlResult after = ddl_loss(shared, priv, half_pi, 0.15);
    CHECK(after.value == 0.0);
}

TEST_CASE("ddl invariant under positive rescaling of one prompt") {
    Rng rng(83);
    SharedPool shared = SharedPool::init(3, 2, 4, rng.next_u64());
    PrivatePool priv;
    priv.prompt_len = 2;
    priv.feature_dim = 4;
    grow_private(priv, 0, 2, rng.next_u64());

    const double half_pi = std::numbers::pi / 2.0;
    const double base = ddl_loss(shared, priv, half_pi, 0.15).value;
    for (double& v : shared.entries[1].prompt.data) v *= 7.5;
    const double scaled = ddl_loss(shared, priv, half_pi, 0.15).value;
    CHECK(std::abs(base - scaled) <= 1e-12);
}

TEST_CASE("ddl skips zero-norm prompts with a diagnostic") {
    SharedPool shared;
    shared.prompt_len = 2;
    shared.feature_dim = 2;
    shared.entries.push_back(
        entry_with(Tensor::zeros({2, 2}), {1, 0}, {1, 1}));
    PrivatePool priv;
    priv.prompt_len = 2;
    priv.feature_dim = 2;
    PrivateSlab slab;
    slab.task_id = 0;
    slab.entries.push_back(entry_with(Tensor({2, 2}, {1, 1, 1, 1}), {1, 0}, {1, 1}));
    priv.slabs.push_back(slab);

    const DdlResult res = ddl_loss(shared, priv, std::numbers::pi / 2.0, 0.15);
    CHECK(res.skipped_pairs == 1);
    CHECK(res.value == 0.0);
    CHECK(std::isfinite(res.value));
}

TEST_CASE("grow_private freezing policy and bookkeeping") {
    PrivatePool pool;
    pool.prompt_len = 2;
    pool.feature_dim = 4;

    grow_private(pool, 0, 4, 11);
    REQUIRE(pool.slabs.size() == 1);
    CHECK(pool.slabs[0].entries.size() == 4);
    CHECK(pool.slabs[0].trainable);

    grow_private(pool, 1, 2, 12);
    REQUIRE(pool.slabs.size() == 2);
    CHECK(!pool.slabs[0].trainable);
    CHECK(pool.slabs[1].trainable);
    CHECK(pool.slabs[1].entries.size() == 2);
    CHECK(pool.total_entries() == 6);

    CHECK_THROWS(grow_private(pool, 1, 3, 13));  // duplicate task

    // Retrieval weight vector spans shared plus every private entry.
    SharedPool shared = SharedPool::init(5, 2, 4, 14);
    std::vector<double> query = {1, 0, 0, 0};
    CHECK(retrieve(query, shared, pool).weights.size() == 5 + 6);
}
