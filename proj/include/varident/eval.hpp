#pragma once

// Retrieval metrics (CMC rank-k, mAP) with deterministic tie-breaking,
// cross-modality distance statistics with a fixed-bin histogram, a linear
// disentanglement probe over code means, posterior-collapse diagnostics, and
// the single-shot retrieval protocol (all held-out infrared samples as
// queries, one random visible sample per identity as gallery, several draws
// averaged).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "data.hpp"
#include "model.hpp"
#include "param.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace varident {

struct DistanceMatrix {
    int n_query = 0;
    int n_gallery = 0;
    std::vector<double> d; // row-major

    DistanceMatrix() = default;
    DistanceMatrix(int nq, int ng)
        : n_query(nq), n_gallery(ng),
          d(static_cast<std::size_t>(nq) * static_cast<std::size_t>(ng), 0.0) {
        if (nq < 1 || ng < 1)
            throw std::invalid_argument("DistanceMatrix: empty query or gallery");
    }

    double& at(int q, int g) {
        return d[static_cast<std::size_t>(q) * n_gallery + static_cast<std::size_t>(g)];
    }
    double at(int q, int g) const {
        return d[static_cast<std::size_t>(q) * n_gallery + static_cast<std::size_t>(g)];
    }
};

namespace detail {

// gallery indices sorted by (distance, index); stable ranking is what makes
// oracle equality and determinism possible
inline std::vector<int> ranking(const DistanceMatrix& dist, int q) {
    std::vector<int> order(static_cast<std::size_t>(dist.n_gallery));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return dist.at(q, a) < dist.at(q, b);
    });
    return order;
}

inline void check_labels(const DistanceMatrix& dist, const std::vector<int>& query_labels,
                         const std::vector<int>& gallery_labels) {
    if (static_cast<int>(query_labels.size()) != dist.n_query ||
        static_cast<int>(gallery_labels.size()) != dist.n_gallery)
        throw std::invalid_argument("metric: label count does not match matrix shape");
    for (int q = 0; q < dist.n_query; ++q) {
        bool any = false;
        for (int g = 0; g < dist.n_gallery; ++g)
            if (gallery_labels[static_cast<std::size_t>(g)] ==
                query_labels[static_cast<std::size_t>(q)]) {
                any = true;
                break;
            }
        if (!any)
            throw std::invalid_argument("metric: query " + std::to_string(q) +
                                        " has no true match in the gallery");
    }
}

} // namespace detail

// fraction of queries whose top-k ranked gallery items contain a true match
inline double cmc(const DistanceMatrix& dist, const std::vector<int>& query_labels,
                  const std::vector<int>& gallery_labels, int k) {
    if (k < 1) throw std::invalid_argument("cmc: k must be positive");
    detail::check_labels(dist, query_labels, gallery_labels);
    const int kk = std::min(k, dist.n_gallery);
    int hits = 0;
    for (int q = 0; q < dist.n_query; ++q) {
        const auto order = detail::ranking(dist, q);
        for (int r = 0; r < kk; ++r) {
            if (gallery_labels[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])] ==
                query_labels[static_cast<std::size_t>(q)]) {
                ++hits;
                break;
            }
        }
    }
    return static_cast<double>(hits) / static_cast<double>(dist.n_query);
}

// mean over queries of average precision (precision at each relevant rank,
// averaged over that query's relevant count)
inline double mean_ap(const DistanceMatrix& dist, const std::vector<int>& query_labels,
                      const std::vector<int>& gallery_labels) {
    detail::check_labels(dist, query_labels, gallery_labels);
    double sum_ap = 0.0;
    for (int q = 0; q < dist.n_query; ++q) {
        const auto order = detail::ranking(dist, q);
        int hits = 0;
        double ap = 0.0;
        for (int r = 0; r < dist.n_gallery; ++r) {
            if (gallery_labels[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])] ==
                query_labels[static_cast<std::size_t>(q)]) {
                ++hits;
                ap += static_cast<double>(hits) / static_cast<double>(r + 1);
            }
        }
        sum_ap += ap / static_cast<double>(hits);
    }
    return sum_ap / static_cast<double>(dist.n_query);
}

// ---- distance statistics ----

struct DistanceStats {
    double intra_mean = 0, intra_std = 0;
    double inter_mean = 0, inter_std = 0;
    double delta = 0; // inter_mean - intra_mean
    long n_intra = 0, n_inter = 0;
    static constexpr int kBins = 64;
    std::array<long, kBins> hist_intra{};
    std::array<long, kBins> hist_inter{};
};

namespace detail {

inline std::vector<double> normalized(const std::vector<double>& v) {
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    if (n == 0.0) throw std::domain_error("distance_stats: zero embedding cannot be normalized");
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
    return out;
}

inline double euclidean(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

} // namespace detail

// cross-modality pairwise distances on normalized embeddings, partitioned by
// identity; normalized L2 distances live in [0, 2], binned accordingly
inline DistanceStats distance_stats(const std::vector<std::vector<double>>& embeddings,
                                    const std::vector<int>& labels,
                                    const std::vector<Modality>& modalities) {
    const std::size_t n = embeddings.size();
    if (labels.size() != n || modalities.size() != n)
        throw std::invalid_argument("distance_stats: input length mismatch");
    std::vector<int> distinct(labels);
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (distinct.size() < 2)
        throw std::invalid_argument("distance_stats: need at least 2 identities");

    std::vector<std::vector<double>> unit(n);
    for (std::size_t i = 0; i < n; ++i) unit[i] = detail::normalized(embeddings[i]);

    DistanceStats st;
    double intra_sum = 0, intra_sumsq = 0, inter_sum = 0, inter_sumsq = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (modalities[i] == modalities[j]) continue;
            const double dist = detail::euclidean(unit[i], unit[j]);
            const int bin = std::min(DistanceStats::kBins - 1,
                                     static_cast<int>(dist / 2.0 * DistanceStats::kBins));
            if (labels[i] == labels[j]) {
                ++st.n_intra;
                intra_sum += dist;
                intra_sumsq += dist * dist;
                ++st.hist_intra[static_cast<std::size_t>(bin)];
            } else {
                ++st.n_inter;
                inter_sum += dist;
                inter_sumsq += dist * dist;
                ++st.hist_inter[static_cast<std::size_t>(bin)];
            }
        }
    }
    if (st.n_intra < 1 || st.n_inter < 1)
        throw std::invalid_argument("distance_stats: a distance partition is empty");
    st.intra_mean = intra_sum / static_cast<double>(st.n_intra);
    st.inter_mean = inter_sum / static_cast<double>(st.n_inter);
    st.intra_std = std::sqrt(
        std::max(0.0, intra_sumsq / static_cast<double>(st.n_intra) - st.intra_mean * st.intra_mean));
    st.inter_std = std::sqrt(
        std::max(0.0, inter_sumsq / static_cast<double>(st.n_inter) - st.inter_mean * st.inter_mean));
    st.delta = st.inter_mean - st.intra_mean;
    return st;
}

inline std::string histogram_csv(const DistanceStats& st) {
    std::string out = "bin_left,count_intra,count_inter\n";
    char buf[80];
    for (int b = 0; b < DistanceStats::kBins; ++b) {
        const double left = 2.0 * b / DistanceStats::kBins;
        std::snprintf(buf, sizeof(buf), "%.17g,%ld,%ld\n", left,
                      st.hist_intra[static_cast<std::size_t>(b)],
                      st.hist_inter[static_cast<std::size_t>(b)]);
        out += buf;
    }
    return out;
}

// ---- disentanglement probe ----

struct ProbeResult {
    double idi_accuracy = 0.0;
    double iai_accuracy = 0.0;
    double chance = 0.0;
    int n_classes = 0;
    int n_train = 0;
    int n_heldout = 0;
};

namespace detail {

inline std::vector<double> whiten_by_std(const std::vector<double>& mean,
                                         const std::vector<double>& log_std) {
    if (mean.size() != log_std.size())
        throw std::invalid_argument("whiten_by_std: size mismatch");
    std::vector<double> out(mean.size());
    for (std::size_t i = 0; i < mean.size(); ++i)
        out[i] = mean[i] * std::exp(-log_std[i]);
    return out;
}

// single affine softmax probe: zero init, fixed budget of 200 full-batch
// gradient steps at lr 0.1, evaluated on the held-out split. All inputs are
// rescaled by one shared constant (the mean norm over the probe's training
// split) so the fixed budget behaves the same at any code scale; relative
// geometry between samples is left untouched.
inline double probe_accuracy(const std::vector<std::vector<double>>& raw_codes,
                             const std::vector<int>& classes, int n_classes,
                             const std::vector<int>& train_idx,
                             const std::vector<int>& test_idx) {
    const int dim = static_cast<int>(raw_codes[0].size());

    double mean_norm = 0.0;
    for (int i : train_idx) {
        double norm = 0.0;
        for (double v : raw_codes[static_cast<std::size_t>(i)]) norm += v * v;
        mean_norm += std::sqrt(norm);
    }
    mean_norm /= static_cast<double>(train_idx.size());
    const double scale = mean_norm > 1e-12 ? 1.0 / mean_norm : 1.0;

    std::vector<std::vector<double>> codes(raw_codes);
    for (auto& c : codes)
        for (double& v : c) v *= scale;

    Parameter w, b;
    w.name = "probe.w";
    w.value = Tensor::zeros({n_classes, dim});
    b.name = "probe.b";
    b.value = Tensor::zeros({n_classes});
    w.value.requires_grad = true;
    b.value.requires_grad = true;

    constexpr int kSteps = 200;
    constexpr double kLr = 0.1;
    for (int step = 0; step < kSteps; ++step) {
        Tape t;
        GraphContext ctx(t);
        const NodeId wn = ctx.param(w);
        const NodeId bn = ctx.param(b);
        std::vector<NodeId> ces;
        ces.reserve(train_idx.size());
        for (int i : train_idx) {
            const NodeId x = ctx.input(codes[static_cast<std::size_t>(i)]);
            const NodeId logits = t.affine(wn, x, bn);
            ces.push_back(t.softmax_cross_entropy(logits, classes[static_cast<std::size_t>(i)]));
        }
        const NodeId loss = t.mean(t.concat(ces));
        const GradMap g = t.backward(loss);
        const Tensor& gw = g.at(wn);
        const Tensor& gb = g.at(bn);
        for (int i = 0; i < w.value.size(); ++i)
            w.value.values[static_cast<std::size_t>(i)] -= kLr * gw.values[static_cast<std::size_t>(i)];
        for (int i = 0; i < b.value.size(); ++i)
            b.value.values[static_cast<std::size_t>(i)] -= kLr * gb.values[static_cast<std::size_t>(i)];
    }

    int hits = 0;
    for (int i : test_idx) {
        const auto& x = codes[static_cast<std::size_t>(i)];
        int best = 0;
        double best_v = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < n_classes; ++c) {
            double v = b.value.values[static_cast<std::size_t>(c)];
            for (int j = 0; j < dim; ++j)
                v += w.value.values[static_cast<std::size_t>(c) * dim + static_cast<std::size_t>(j)] *
                     x[static_cast<std::size_t>(j)];
            if (v > best_v) {
                best_v = v;
                best = c;
            }
        }
        if (best == classes[static_cast<std::size_t>(i)]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(test_idx.size());
}

} // namespace detail

// Four-fold cross-validation, deterministic and stratified: per class the
// samples are split into quarters by input order, each quarter scores a probe
// trained on the other three, and every sample is scored exactly once. The
// reported accuracy pools all test decisions, so no single split assignment
// decides the result.
inline ProbeResult disentanglement_probe(const std::vector<std::vector<double>>& d_means,
                                         const std::vector<std::vector<double>>& a_means,
                                         const std::vector<int>& identities) {
    const std::size_t n = identities.size();
    if (d_means.size() != n || a_means.size() != n)
        throw std::invalid_argument("disentanglement_probe: input length mismatch");
    if (n < 2) throw std::invalid_argument("disentanglement_probe: need at least 2 samples");

    std::vector<int> distinct(identities);
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (distinct.size() < 2)
        throw std::invalid_argument("disentanglement_probe: single-class input");

    std::vector<int> classes(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto it = std::lower_bound(distinct.begin(), distinct.end(), identities[i]);
        classes[i] = static_cast<int>(it - distinct.begin());
    }
    const int n_classes = static_cast<int>(distinct.size());

    std::vector<std::vector<int>> by_class(static_cast<std::size_t>(n_classes));
    for (std::size_t i = 0; i < n; ++i)
        by_class[static_cast<std::size_t>(classes[i])].push_back(static_cast<int>(i));

    constexpr int kFolds = 4;
    ProbeResult res;
    res.n_classes = n_classes;
    res.chance = 1.0 / static_cast<double>(n_classes);

    double idi_hits = 0.0, iai_hits = 0.0;
    int tested = 0, max_train = 0;
    for (int fold = 0; fold < kFolds; ++fold) {
        std::vector<int> train_idx, test_idx;
        for (const auto& members : by_class) {
            if (members.size() < 2)
                throw std::invalid_argument(
                    "disentanglement_probe: class with fewer than 2 samples");
            for (std::size_t i = 0; i < members.size(); ++i) {
                const int f = static_cast<int>(i * kFolds / members.size());
                (f == fold ? test_idx : train_idx).push_back(members[i]);
            }
        }
        if (test_idx.empty()) continue;
        const double nt = static_cast<double>(test_idx.size());
        idi_hits += nt * detail::probe_accuracy(d_means, classes, n_classes, train_idx, test_idx);
        iai_hits += nt * detail::probe_accuracy(a_means, classes, n_classes, train_idx, test_idx);
        tested += static_cast<int>(test_idx.size());
        max_train = std::max(max_train, static_cast<int>(train_idx.size()));
    }

    res.n_train = max_train;
    res.n_heldout = tested;
    res.idi_accuracy = idi_hits / static_cast<double>(tested);
    res.iai_accuracy = iai_hits / static_cast<double>(tested);
    return res;
}

// ---- posterior-collapse diagnostics ----

struct CollapseInput {
    std::vector<double> d_mean;
    std::vector<double> a_mean;
    std::vector<double> a_log_std;
    int identity = 0;
};

struct CollapseReport {
    double min_mean_distance = 0.0;     // min pairwise distance among prior means
    double iai_kl_per_dim = 0.0;        // mean per-dimension paper-KL of IAI posteriors
    double nearest_mean_accuracy = 0.0; // fraction of identities nearest their own mean
    bool flagged = false;
};

// An identity counts as correctly assigned when more than half of its
// samples' IDI posterior means lie nearest (Euclidean) to that identity's own
// prior mean.
inline CollapseReport collapse_diagnostic(const MoGPrior& prior,
                                          const std::vector<CollapseInput>& posteriors) {
    if (posteriors.empty())
        throw std::invalid_argument("collapse_diagnostic: no posteriors given");
    CollapseReport rep;

    const int ny = prior.n_components();
    rep.min_mean_distance = std::numeric_limits<double>::infinity();
    for (int a = 0; a < ny; ++a)
        for (int b = a + 1; b < ny; ++b)
            rep.min_mean_distance = std::min(
                rep.min_mean_distance, detail::euclidean(prior.mean_of(a), prior.mean_of(b)));
    if (ny < 2) rep.min_mean_distance = 0.0;

    double kl_sum = 0.0;
    std::vector<long> per_id_total(static_cast<std::size_t>(ny), 0);
    std::vector<long> per_id_own(static_cast<std::size_t>(ny), 0);
    for (const CollapseInput& p : posteriors) {
        prior.check_component(p.identity);
        kl_sum += kl_standard_paper(DiagonalGaussian(p.a_mean, p.a_log_std)) /
                  static_cast<double>(p.a_mean.size());
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (int c = 0; c < ny; ++c) {
            const double d = detail::euclidean(p.d_mean, prior.mean_of(c));
            if (d < best_d) {
                best_d = d;
                best = c;
            }
        }
        ++per_id_total[static_cast<std::size_t>(p.identity)];
        if (best == p.identity) ++per_id_own[static_cast<std::size_t>(p.identity)];
    }
    rep.iai_kl_per_dim = kl_sum / static_cast<double>(posteriors.size());

    int present = 0;
    int own = 0;
    for (int y = 0; y < ny; ++y) {
        if (per_id_total[static_cast<std::size_t>(y)] == 0) continue;
        ++present;
        if (2 * per_id_own[static_cast<std::size_t>(y)] >
            per_id_total[static_cast<std::size_t>(y)])
            ++own;
    }
    rep.nearest_mean_accuracy =
        present > 0 ? static_cast<double>(own) / static_cast<double>(present) : 0.0;
    rep.flagged = rep.min_mean_distance < 1e-3 || rep.nearest_mean_accuracy < 0.5;
    return rep;
}

// ---- retrieval protocol ----

struct RetrievalOutcome {
    double rank1 = 0.0;
    double rank10 = 0.0;
    double map = 0.0;
    int n_query = 0;
    int n_gallery = 0;
    int draws = 0;
};

// Single-shot protocol: queries are all infrared samples of held-out
// identities; each draw fills the gallery with one random visible sample per
// identity, training identities included as distractors; metrics averaged
// over draws. The retrieval feature is the normalized IDI posterior mean.
inline RetrievalOutcome run_retrieval(DgVaeModel& model, const Dataset& ds, int draws,
                                      std::uint64_t protocol_seed) {
    if (draws < 1) throw std::invalid_argument("run_retrieval: need at least one draw");

    std::vector<int> query_idx;
    for (int i : ds.heldout_sample_indices())
        if (ds.samples[static_cast<std::size_t>(i)].modality == Modality::infrared)
            query_idx.push_back(i);
    if (query_idx.empty())
        throw std::invalid_argument("run_retrieval: no held-out infrared queries");

    // embed every visible sample once; gallery draws only re-select rows
    std::vector<std::vector<double>> embedding(ds.samples.size());
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        const Sample& s = ds.samples[i];
        if (s.modality == Modality::visible ||
            (s.identity >= ds.n_train_identities && s.modality == Modality::infrared))
            embedding[i] = detail::normalized(
                summarize_codes(model, s.raw, s.modality).d_mean);
    }

    std::vector<int> query_labels;
    for (int i : query_idx)
        query_labels.push_back(ds.samples[static_cast<std::size_t>(i)].identity);

    RngStream rng(protocol_seed);
    RetrievalOutcome out;
    out.draws = draws;
    out.n_query = static_cast<int>(query_idx.size());
    out.n_gallery = ds.config.n_identities;
    for (int draw = 0; draw < draws; ++draw) {
        std::vector<int> gallery_idx;
        std::vector<int> gallery_labels;
        for (int y = 0; y < ds.config.n_identities; ++y) {
            const int pair = rng.uniform_int(0, ds.pairs_per_identity() - 1);
            gallery_idx.push_back(ds.sample_index(y, pair, Modality::visible));
            gallery_labels.push_back(y);
        }
        DistanceMatrix dist(out.n_query, out.n_gallery);
        for (int q = 0; q < out.n_query; ++q)
            for (int g = 0; g < out.n_gallery; ++g)
                dist.at(q, g) = detail::euclidean(
                    embedding[static_cast<std::size_t>(query_idx[static_cast<std::size_t>(q)])],
                    embedding[static_cast<std::size_t>(gallery_idx[static_cast<std::size_t>(g)])]);
        out.rank1 += cmc(dist, query_labels, gallery_labels, 1);
        out.rank10 += cmc(dist, query_labels, gallery_labels, 10);
        out.map += mean_ap(dist, query_labels, gallery_labels);
    }
    out.rank1 /= draws;
    out.rank10 /= draws;
    out.map /= draws;
    return out;
}

// held-out embedding export for external visualization
inline std::string embeddings_csv(DgVaeModel& model, const Dataset& ds) {
    std::string out = "id,modality";
    char buf[48];
    for (int j = 0; j < model.config().d_dim; ++j) {
        std::snprintf(buf, sizeof(buf), ",c_%d", j);
        out += buf;
    }
    out += "\n";
    for (int i : ds.heldout_sample_indices()) {
        const Sample& s = ds.samples[static_cast<std::size_t>(i)];
        const auto codes = summarize_codes(model, s.raw, s.modality);
        std::snprintf(buf, sizeof(buf), "%d,%d", s.identity, static_cast<int>(s.modality));
        out += buf;
        for (double v : codes.d_mean) {
            std::snprintf(buf, sizeof(buf), ",%.17g", v);
            out += buf;
        }
        out += "\n";
    }
    return out;
}

} // namespace varident
