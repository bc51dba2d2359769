#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include <varident/data.hpp>
#include <varident/eval.hpp>
#include <varident/model.hpp>

using namespace varident;

namespace {

DistanceMatrix matrix(int nq, int ng, std::vector<double> d) {
    DistanceMatrix m;
    m.n_query = nq;
    m.n_gallery = ng;
    m.d = std::move(d);
    return m;
}

// independent re-derivation of both metrics for the oracle comparison
struct Oracle {
    static std::vector<int> order(const DistanceMatrix& m, int q) {
        std::vector<std::pair<double, int>> keyed;
        for (int g = 0; g < m.n_gallery; ++g) keyed.emplace_back(m.at(q, g), g);
        std::stable_sort(keyed.begin(), keyed.end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });
        std::vector<int> out;
        for (const auto& [d, g] : keyed) out.push_back(g);
        return out;
    }

    static double cmc_at(const DistanceMatrix& m, const std::vector<int>& ql,
                         const std::vector<int>& gl, int k) {
        int hits = 0;
        for (int q = 0; q < m.n_query; ++q) {
            const auto ord = order(m, q);
            const int kk = std::min<int>(k, m.n_gallery);
            for (int r = 0; r < kk; ++r)
                if (gl[static_cast<std::size_t>(ord[static_cast<std::size_t>(r)])] ==
                    ql[static_cast<std::size_t>(q)]) {
                    ++hits;
                    break;
                }
        }
        return static_cast<double>(hits) / m.n_query;
    }

    static double map(const DistanceMatrix& m, const std::vector<int>& ql,
                      const std::vector<int>& gl) {
        double total = 0.0;
        for (int q = 0; q < m.n_query; ++q) {
            const auto ord = order(m, q);
            int rel = 0;
            double ap = 0.0;
            for (int r = 0; r < m.n_gallery; ++r)
                if (gl[static_cast<std::size_t>(ord[static_cast<std::size_t>(r)])] ==
                    ql[static_cast<std::size_t>(q)]) {
                    ++rel;
                    ap += static_cast<double>(rel) / (r + 1);
                }
            total += ap / rel;
        }
        return total / m.n_query;
    }
};

} // namespace

TEST_CASE("retrieval metrics reproduce the worked examples") {
    // one query, ranked gallery relevance (1, 0, 1): AP = (1 + 2/3) / 2 = 5/6
    const DistanceMatrix m1 = matrix(1, 3, {0.1, 0.2, 0.3});
    const std::vector<int> q1 = {0};
    const std::vector<int> g1 = {0, 1, 0};
    REQUIRE(mean_ap(m1, q1, g1) == Catch::Approx(5.0 / 6.0).epsilon(1e-12));
    REQUIRE(cmc(m1, q1, g1, 1) == 1.0);

    // relevance (0, 1): AP = (1/2) / 1 = 0.5, rank-1 misses, rank-2 hits
    const DistanceMatrix m2 = matrix(1, 2, {0.1, 0.2});
    const std::vector<int> q2 = {0};
    const std::vector<int> g2 = {1, 0};
    REQUIRE(mean_ap(m2, q2, g2) == Catch::Approx(0.5).epsilon(1e-12));
    REQUIRE(cmc(m2, q2, g2, 1) == 0.0);
    REQUIRE(cmc(m2, q2, g2, 2) == 1.0);
}

TEST_CASE("retrieval metrics match a brute-force oracle on random matrices") {
    RngStream rng(202);
    for (int trial = 0; trial < 100; ++trial) {
        const int nq = 1 + static_cast<int>(rng.uniform() * 8);
        const int ng = 1 + static_cast<int>(rng.uniform() * 8);
        DistanceMatrix m;
        m.n_query = nq;
        m.n_gallery = ng;
        m.d.resize(static_cast<std::size_t>(nq) * ng);
        for (double& v : m.d) v = rng.uniform();
        // a few exact ties to exercise the stable ordering
        if (ng > 1 && trial % 3 == 0)
            for (int q = 0; q < nq; ++q) m.at(q, 1) = m.at(q, 0);

        std::vector<int> gl(static_cast<std::size_t>(ng));
        for (int& v : gl) v = static_cast<int>(rng.uniform() * 4);
        std::vector<int> ql(static_cast<std::size_t>(nq));
        for (int q = 0; q < nq; ++q) {
            // force every query to have a true match somewhere
            ql[static_cast<std::size_t>(q)] =
                gl[static_cast<std::size_t>(static_cast<int>(rng.uniform() * ng))];
        }

        for (int k = 1; k <= ng; ++k)
            REQUIRE(cmc(m, ql, gl, k) == Oracle::cmc_at(m, ql, gl, k));
        REQUIRE(mean_ap(m, ql, gl) == Oracle::map(m, ql, gl));
    }
}

TEST_CASE("retrieval metrics depend only on the distance ordering") {
    RngStream rng(7);
    DistanceMatrix m = matrix(4, 6, {});
    m.d.resize(24);
    for (double& v : m.d) v = rng.uniform();
    const std::vector<int> ql = {0, 1, 2, 0};
    const std::vector<int> gl = {0, 1, 2, 0, 1, 2};

    DistanceMatrix warped = m;
    for (double& v : warped.d) v = v * v * v + v; // strictly increasing map

    for (int k = 1; k <= 6; ++k) REQUIRE(cmc(m, ql, gl, k) == cmc(warped, ql, gl, k));
    REQUIRE(mean_ap(m, ql, gl) == mean_ap(warped, ql, gl));
}

TEST_CASE("retrieval metrics validate their inputs") {
    const DistanceMatrix m = matrix(1, 2, {0.1, 0.2});
    REQUIRE_THROWS_AS(cmc(m, {0}, {1, 1}, 1), std::invalid_argument); // no true match
    REQUIRE_THROWS_AS(cmc(m, {0, 0}, {0, 1}, 1), std::invalid_argument); // shape mismatch
    REQUIRE_THROWS_AS(cmc(m, {0}, {0, 1}, 0), std::invalid_argument);    // bad k
    REQUIRE_THROWS_AS(mean_ap(m, {0}, {1, 1}), std::invalid_argument);
}

TEST_CASE("distance statistics on hand-checkable embeddings") {
    // two identities on orthogonal axes, one visible and one infrared sample
    // each: intra distance 0 after normalization, inter distance sqrt(2)
    const std::vector<std::vector<double>> emb = {
        {1.0, 0.0}, {2.0, 0.0}, {0.0, 1.0}, {0.0, 3.0}};
    const std::vector<int> labels = {0, 0, 1, 1};
    const std::vector<Modality> mods = {Modality::visible, Modality::infrared,
                                        Modality::visible, Modality::infrared};
    const DistanceStats st = distance_stats(emb, labels, mods);

    REQUIRE(st.intra_mean == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(st.inter_mean == Catch::Approx(std::sqrt(2.0)).epsilon(1e-12));
    REQUIRE(st.delta == Catch::Approx(std::sqrt(2.0)).epsilon(1e-12));
    REQUIRE(st.intra_std == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(st.inter_std == Catch::Approx(0.0).margin(1e-12));

    // only cross-modality pairs count: one intra pair per identity, two
    // cross-identity cross-modality pairs
    REQUIRE(st.n_intra == 2);
    REQUIRE(st.n_inter == 2);
    long intra_total = 0, inter_total = 0;
    for (long c : st.hist_intra) intra_total += c;
    for (long c : st.hist_inter) inter_total += c;
    REQUIRE(intra_total == st.n_intra);
    REQUIRE(inter_total == st.n_inter);

    const std::string csv = histogram_csv(st);
    REQUIRE(csv.rfind("bin_left,count_intra,count_inter\n", 0) == 0);
    REQUIRE(std::count(csv.begin(), csv.end(), '\n') == DistanceStats::kBins + 1);
}

TEST_CASE("distance statistics validate their inputs") {
    const std::vector<Modality> vi = {Modality::visible, Modality::infrared};
    REQUIRE_THROWS_AS(distance_stats({}, {}, {}), std::invalid_argument);
    REQUIRE_THROWS_AS(distance_stats({{1.0}}, {0, 1}, vi), std::invalid_argument);
    // a single identity has no inter pairs
    REQUIRE_THROWS_AS(distance_stats({{1.0}, {2.0}}, {0, 0}, vi), std::invalid_argument);
    // same-modality inputs leave both partitions empty
    REQUIRE_THROWS_AS(
        distance_stats({{1.0}, {2.0}}, {0, 1}, {Modality::visible, Modality::visible}),
        std::invalid_argument);
}

TEST_CASE("posterior whitening divides means by their own standard deviation") {
    const std::vector<double> w = detail::whiten_by_std({1.0, -2.0}, {0.0, std::log(2.0)});
    REQUIRE(w[0] == Catch::Approx(1.0).epsilon(1e-12));
    REQUIRE(w[1] == Catch::Approx(-1.0).epsilon(1e-12));
    REQUIRE_THROWS_AS(detail::whiten_by_std({1.0}, {0.0, 0.0}), std::invalid_argument);
}

TEST_CASE("disentanglement probe separates structured from unstructured codes") {
    // synthetic codes: d carries the class cleanly, a is pure noise
    RngStream rng(55);
    const int classes = 4, per_class = 16, dim = 6;
    std::vector<std::vector<double>> d, a;
    std::vector<int> ids;
    for (int c = 0; c < classes; ++c) {
        for (int s = 0; s < per_class; ++s) {
            std::vector<double> dv(dim), av(dim);
            for (int k = 0; k < dim; ++k) {
                dv[static_cast<std::size_t>(k)] =
                    (k == c ? 3.0 : 0.0) + rng.normal(0.0, 0.3);
                av[static_cast<std::size_t>(k)] = rng.normal(0.0, 1.0);
            }
            d.push_back(dv);
            a.push_back(av);
            ids.push_back(c + 10); // labels need not be contiguous from zero
        }
    }

    const ProbeResult res = disentanglement_probe(d, a, ids);
    REQUIRE(res.n_classes == classes);
    REQUIRE(res.chance == Catch::Approx(0.25));
    REQUIRE(res.n_heldout == classes * per_class); // every sample scored once
    REQUIRE(res.idi_accuracy >= 0.95);
    REQUIRE(res.iai_accuracy <= 2.0 * res.chance);

    // deterministic: same inputs, same numbers
    const ProbeResult again = disentanglement_probe(d, a, ids);
    REQUIRE(again.idi_accuracy == res.idi_accuracy);
    REQUIRE(again.iai_accuracy == res.iai_accuracy);
}

TEST_CASE("disentanglement probe is invariant to a global code rescale") {
    RngStream rng(56);
    const int classes = 3, per_class = 12, dim = 4;
    std::vector<std::vector<double>> d, a;
    std::vector<int> ids;
    for (int c = 0; c < classes; ++c)
        for (int s = 0; s < per_class; ++s) {
            std::vector<double> dv(dim), av(dim);
            for (int k = 0; k < dim; ++k) {
                dv[static_cast<std::size_t>(k)] = (k == c ? 2.0 : 0.0) + rng.normal(0.0, 0.5);
                av[static_cast<std::size_t>(k)] = rng.normal(0.0, 1.0);
            }
            d.push_back(dv);
            a.push_back(av);
            ids.push_back(c);
        }

    const ProbeResult base = disentanglement_probe(d, a, ids);
    auto scaled = d;
    for (auto& v : scaled)
        for (double& x : v) x *= 1024.0; // power of two, exact in floating point
    const ProbeResult big = disentanglement_probe(scaled, a, ids);
    REQUIRE(big.idi_accuracy == base.idi_accuracy);
}

TEST_CASE("disentanglement probe scores permuted labels at chance level") {
    RngStream rng(57);
    const int classes = 4, per_class = 16, dim = 6;
    std::vector<std::vector<double>> d, a;
    std::vector<int> ids;
    for (int c = 0; c < classes; ++c)
        for (int s = 0; s < per_class; ++s) {
            std::vector<double> dv(dim), av(dim);
            for (int k = 0; k < dim; ++k) {
                dv[static_cast<std::size_t>(k)] = (k == c ? 3.0 : 0.0) + rng.normal(0.0, 0.3);
                av[static_cast<std::size_t>(k)] = rng.normal(0.0, 1.0);
            }
            d.push_back(dv);
            a.push_back(av);
            // labels decoupled from the structure by rotation
            ids.push_back((c + s) % classes);
        }

    const ProbeResult res = disentanglement_probe(d, a, ids);
    // structure and labels are independent, so accuracy sits near chance
    REQUIRE(res.idi_accuracy <= 2.0 * res.chance);
}

TEST_CASE("disentanglement probe validates its inputs") {
    const std::vector<std::vector<double>> one = {{1.0}, {2.0}};
    REQUIRE_THROWS_AS(disentanglement_probe(one, one, {0, 0}), std::invalid_argument);
    REQUIRE_THROWS_AS(disentanglement_probe(one, one, {0}), std::invalid_argument);
    // a class with a single sample cannot be split across folds
    const std::vector<std::vector<double>> three = {{1.0}, {2.0}, {3.0}};
    REQUIRE_THROWS_AS(disentanglement_probe(three, three, {0, 0, 1}), std::invalid_argument);
}

TEST_CASE("collapse diagnostic flags merged means and foreign assignments") {
    MoGPrior prior(2, 2);
    prior.means().value = Tensor::matrix(2, 2, {0.0, 0.0, 1.0, 0.0});

    auto post = [](double x, double y, int id) {
        CollapseInput c;
        c.d_mean = {x, y};
        c.a_mean = {0.0, 0.0};
        c.a_log_std = {0.0, 0.0};
        c.identity = id;
        return c;
    };

    SECTION("well-separated means and faithful assignments pass") {
        const std::vector<CollapseInput> ps = {post(0.1, 0.0, 0), post(-0.1, 0.0, 0),
                                               post(0.9, 0.0, 1), post(1.1, 0.0, 1)};
        const CollapseReport rep = collapse_diagnostic(prior, ps);
        REQUIRE(rep.min_mean_distance == Catch::Approx(1.0));
        REQUIRE(rep.nearest_mean_accuracy == 1.0);
        // unit-variance zero-mean ambient posterior has zero divergence
        REQUIRE(rep.iai_kl_per_dim == Catch::Approx(0.0).margin(1e-12));
        REQUIRE_FALSE(rep.flagged);
    }
    SECTION("means closer than the threshold raise the flag") {
        prior.means().value = Tensor::matrix(2, 2, {0.0, 0.0, 5e-4, 0.0});
        const std::vector<CollapseInput> ps = {post(0.0, 0.0, 0), post(5e-4, 0.0, 1)};
        REQUIRE(collapse_diagnostic(prior, ps).flagged);
    }
    SECTION("samples landing on the wrong mean raise the flag") {
        const std::vector<CollapseInput> ps = {post(0.9, 0.0, 0), post(1.1, 0.0, 0),
                                               post(0.05, 0.0, 1), post(-0.05, 0.0, 1)};
        const CollapseReport rep = collapse_diagnostic(prior, ps);
        REQUIRE(rep.nearest_mean_accuracy == 0.0);
        REQUIRE(rep.flagged);
    }
    SECTION("empty input and unknown identities are rejected") {
        REQUIRE_THROWS_AS(collapse_diagnostic(prior, {}), std::invalid_argument);
        REQUIRE_THROWS_AS(collapse_diagnostic(prior, {post(0, 0, 5)}), std::invalid_argument);
    }
}

TEST_CASE("retrieval protocol shape on an untrained model") {
    SyntheticConfig dc;
    dc.n_identities = 6;
    dc.samples_per_identity_per_modality = 4;
    dc.identity_dim = 4;
    dc.nuisance_dim = 2;
    dc.raw_dim = 6;
    dc.seed = 11;
    const Dataset ds = generate_dataset(dc);

    ModelConfig mc;
    mc.raw_dim = 6;
    mc.feature_dim = 8;
    mc.extractor_hidden = 8;
    mc.trunk_hidden = 8;
    mc.pool_group = 2;
    mc.d_dim = 5;
    mc.a_dim = 2;
    mc.n_classes = 5;
    DgVaeModel m(mc);
    RngStream rng(5);
    m.init(rng);

    const RetrievalOutcome out = run_retrieval(m, ds, 3, 99);
    // queries: all infrared samples of the held-out identity
    REQUIRE(out.n_query == 4);
    // gallery: one visible sample per identity, training ids as distractors
    REQUIRE(out.n_gallery == 6);
    REQUIRE(out.draws == 3);
    REQUIRE(out.rank1 >= 0.0);
    REQUIRE(out.rank1 <= 1.0);
    REQUIRE(out.map >= 0.0);
    REQUIRE(out.map <= 1.0);
    REQUIRE(out.rank10 == 1.0); // ten covers the whole six-entry gallery

    // the protocol seed fixes the gallery draws exactly
    const RetrievalOutcome again = run_retrieval(m, ds, 3, 99);
    REQUIRE(again.map == out.map);
    REQUIRE(again.rank1 == out.rank1);

    REQUIRE_THROWS_AS(run_retrieval(m, ds, 0, 99), std::invalid_argument);
}
