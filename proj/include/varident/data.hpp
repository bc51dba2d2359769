#pragma once

// Synthetic two-modality dataset with known ground truth.
//
// Each identity y owns a shared factor s_y. A sample is built as
//     raw = tanh(A_m (s_y + jitter)) + nuisance_scale * tanh(B_m n) + noise
// where A_m, B_m are fixed random linear maps per modality, jitter is a small
// per-pair perturbation of the shared factor (drawn once per cross-modality
// pair, so the two members of a pair carry identical pre-map shared content),
// n is a per-sample nuisance factor and noise is iid Gaussian. Identity and
// modality labels are visible to the model; the stored factors (s + jitter,
// n) exist only for the evaluation probes.
//
// Samples are laid out pair-major: for identity y, pair k, the visible member
// sits at index ((y * pairs + k) * 2) and its infrared mate right after it.
// The last quarter of identities (at least one) is held out of training for
// the generalization split.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "rng.hpp"
#include "serialize.hpp"

namespace varident {

enum class Modality : std::uint8_t { visible = 0, infrared = 1 };

inline const char* modality_name(Modality m) {
    return m == Modality::visible ? "visible" : "infrared";
}

// spread of the per-pair shared-factor perturbation (generator constant)
inline constexpr double kPairJitterStd = 0.35;

struct SyntheticConfig {
    int n_identities = 16;
    int samples_per_identity_per_modality = 12;
    int identity_dim = 8;
    int nuisance_dim = 4;
    int raw_dim = 32;
    double nuisance_scale = 1.0;
    double noise_std = 0.05;
    std::uint64_t seed = 7;

    void validate() const {
        if (n_identities < 2)
            throw std::invalid_argument("SyntheticConfig: need at least 2 identities");
        if (samples_per_identity_per_modality < 1)
            throw std::invalid_argument("SyntheticConfig: need at least 1 pair per identity");
        if (identity_dim < 1 || nuisance_dim < 1 || raw_dim < 1)
            throw std::invalid_argument("SyntheticConfig: all dims must be positive");
        if (nuisance_scale < 0.0)
            throw std::invalid_argument("SyntheticConfig: nuisance_scale must be nonnegative");
        if (noise_std < 0.0)
            throw std::invalid_argument("SyntheticConfig: noise_std must be nonnegative");
    }
};

struct Sample {
    int identity = 0;
    Modality modality = Modality::visible;
    int pair_index = 0;
    std::vector<double> raw;
    // ground truth, for eval probes only
    std::vector<double> shared;   // s_y + pair jitter
    std::vector<double> nuisance; // n
};

struct Dataset {
    SyntheticConfig config;
    int n_train_identities = 0;
    std::vector<Sample> samples;

    int pairs_per_identity() const { return config.samples_per_identity_per_modality; }

    int sample_index(int identity, int pair, Modality m) const {
        return (identity * pairs_per_identity() + pair) * 2 +
               (m == Modality::infrared ? 1 : 0);
    }

    // the other member of a sample's cross-modality pair
    int mate_of(int index) const { return index ^ 1; }

    bool is_train_identity(int identity) const { return identity < n_train_identities; }

    std::vector<int> train_sample_indices() const {
        std::vector<int> out;
        for (int i = 0; i < static_cast<int>(samples.size()); ++i)
            if (is_train_identity(samples[static_cast<std::size_t>(i)].identity))
                out.push_back(i);
        return out;
    }

    std::vector<int> heldout_sample_indices() const {
        std::vector<int> out;
        for (int i = 0; i < static_cast<int>(samples.size()); ++i)
            if (!is_train_identity(samples[static_cast<std::size_t>(i)].identity))
                out.push_back(i);
        return out;
    }
};

namespace detail {

// random linear map, entries scaled so the pre-tanh activations have roughly
// unit variance for unit-variance inputs
inline std::vector<double> random_map(RngStream& rng, int rows, int cols) {
    std::vector<double> m(static_cast<std::size_t>(rows) * cols);
    const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
    for (double& v : m) v = rng.normal(0.0, scale);
    return m;
}

inline void apply_map_tanh(const std::vector<double>& m, int rows, int cols,
                           const std::vector<double>& x, std::vector<double>& out) {
    for (int i = 0; i < rows; ++i) {
        double s = 0.0;
        const double* row = m.data() + static_cast<std::size_t>(i) * cols;
        for (int j = 0; j < cols; ++j) s += row[j] * x[static_cast<std::size_t>(j)];
        out[static_cast<std::size_t>(i)] = std::tanh(s);
    }
}

} // namespace detail

inline Dataset generate(const SyntheticConfig& config, std::uint64_t seed) {
    config.validate();
    RngStream rng(seed);

    const int id_dim = config.identity_dim;
    const int nu_dim = config.nuisance_dim;
    const int raw_dim = config.raw_dim;

    // per-modality maps: identity content and nuisance content
    const auto a_vis = detail::random_map(rng, raw_dim, id_dim);
    const auto a_inf = detail::random_map(rng, raw_dim, id_dim);
    const auto b_vis = detail::random_map(rng, raw_dim, nu_dim);
    const auto b_inf = detail::random_map(rng, raw_dim, nu_dim);

    Dataset ds;
    ds.config = config;
    ds.config.seed = seed;
    const int heldout = std::max(1, config.n_identities / 4);
    ds.n_train_identities = config.n_identities - heldout;
    ds.samples.reserve(static_cast<std::size_t>(config.n_identities) *
                       config.samples_per_identity_per_modality * 2);

    std::vector<double> shared(static_cast<std::size_t>(id_dim));
    std::vector<double> id_part(static_cast<std::size_t>(raw_dim));
    std::vector<double> nu_part(static_cast<std::size_t>(raw_dim));

    for (int y = 0; y < config.n_identities; ++y) {
        std::vector<double> s(static_cast<std::size_t>(id_dim));
        for (double& v : s) v = rng.normal();

        for (int k = 0; k < config.samples_per_identity_per_modality; ++k) {
            // one jitter per pair: both members see the same shared content
            for (int i = 0; i < id_dim; ++i)
                shared[static_cast<std::size_t>(i)] =
                    s[static_cast<std::size_t>(i)] + rng.normal(0.0, kPairJitterStd);

            for (Modality m : {Modality::visible, Modality::infrared}) {
                Sample sm;
                sm.identity = y;
                sm.modality = m;
                sm.pair_index = k;
                sm.shared = shared;
                sm.nuisance.resize(static_cast<std::size_t>(nu_dim));
                for (double& v : sm.nuisance) v = rng.normal();

                const auto& a = (m == Modality::visible) ? a_vis : a_inf;
                const auto& b = (m == Modality::visible) ? b_vis : b_inf;
                detail::apply_map_tanh(a, raw_dim, id_dim, sm.shared, id_part);
                detail::apply_map_tanh(b, raw_dim, nu_dim, sm.nuisance, nu_part);

                sm.raw.resize(static_cast<std::size_t>(raw_dim));
                for (int i = 0; i < raw_dim; ++i)
                    sm.raw[static_cast<std::size_t>(i)] =
                        id_part[static_cast<std::size_t>(i)] +
                        config.nuisance_scale * nu_part[static_cast<std::size_t>(i)] +
                        config.noise_std * rng.normal();
                ds.samples.push_back(std::move(sm));
            }
        }
    }
    return ds;
}

// ---- batch and triplet organization ----

struct BatchPair {
    int identity = 0;
    int visible = 0;  // sample index
    int infrared = 0; // sample index
};

struct TripletBatch {
    int p = 0; // identities
    int k = 0; // pairs per identity
    std::vector<BatchPair> pairs;
    std::vector<int> images; // all sample indices, visible+infrared interleaved by pair
};

struct Triplet {
    int anchor = 0;
    int positive = 0;
    int negative = 0;
};

// P = 4 identities x K = 4 cross-modality pairs = 32 images
inline TripletBatch sample_batch(const Dataset& ds, RngStream& rng) {
    constexpr int P = 4;
    constexpr int K = 4;
    if (ds.n_train_identities < P)
        throw std::invalid_argument("sample_batch: fewer than 4 training identities");
    if (ds.pairs_per_identity() < K)
        throw std::invalid_argument("sample_batch: fewer than 4 pairs per identity");

    std::vector<int> ids(static_cast<std::size_t>(ds.n_train_identities));
    for (int i = 0; i < ds.n_train_identities; ++i) ids[static_cast<std::size_t>(i)] = i;
    rng.shuffle(ids);
    ids.resize(P);

    std::vector<int> pair_pool(static_cast<std::size_t>(ds.pairs_per_identity()));
    TripletBatch batch;
    batch.p = P;
    batch.k = K;
    for (int yi = 0; yi < P; ++yi) {
        const int y = ids[static_cast<std::size_t>(yi)];
        for (int i = 0; i < ds.pairs_per_identity(); ++i)
            pair_pool[static_cast<std::size_t>(i)] = i;
        rng.shuffle(pair_pool);
        for (int ki = 0; ki < K; ++ki) {
            BatchPair bp;
            bp.identity = y;
            bp.visible = ds.sample_index(y, pair_pool[static_cast<std::size_t>(ki)], Modality::visible);
            bp.infrared = ds.sample_index(y, pair_pool[static_cast<std::size_t>(ki)], Modality::infrared);
            batch.pairs.push_back(bp);
            batch.images.push_back(bp.visible);
            batch.images.push_back(bp.infrared);
        }
    }
    return batch;
}

inline TripletBatch sample_batch(const Dataset& ds, std::uint64_t seed) {
    RngStream rng(seed);
    return sample_batch(ds, rng);
}

// one triplet per batch image: anchor = the image, positive = random
// same-identity opposite-modality member, negative = random different-identity
// opposite-modality member (uniform, no hard mining)
inline std::vector<Triplet> build_triplets(const Dataset& ds, const TripletBatch& batch,
                                           RngStream& rng) {
    std::vector<Triplet> out;
    out.reserve(batch.images.size());
    for (int anchor : batch.images) {
        const Sample& a = ds.samples[static_cast<std::size_t>(anchor)];
        std::vector<int> positives;
        std::vector<int> negatives;
        for (int other : batch.images) {
            const Sample& o = ds.samples[static_cast<std::size_t>(other)];
            if (o.modality == a.modality) continue;
            if (o.identity == a.identity)
                positives.push_back(other);
            else
                negatives.push_back(other);
        }
        if (positives.empty() || negatives.empty())
            throw std::invalid_argument("build_triplets: no valid positive/negative for anchor");
        Triplet t;
        t.anchor = anchor;
        t.positive = positives[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<int>(positives.size()) - 1))];
        t.negative = negatives[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<int>(negatives.size()) - 1))];
        out.push_back(t);
    }
    return out;
}

// the six members of one swap group: a triplet plus each member's pair mate
struct SwapGroup {
    int vis_anchor, vis_positive, vis_negative;
    int inf_anchor, inf_positive, inf_negative;
};

// one group per visible-anchored triplet; mates resolve the missing modality
inline std::vector<SwapGroup> make_swap_groups(const Dataset& ds,
                                               const std::vector<Triplet>& triplets) {
    std::vector<SwapGroup> out;
    for (const Triplet& t : triplets) {
        if (ds.samples[static_cast<std::size_t>(t.anchor)].modality != Modality::visible)
            continue;
        SwapGroup g;
        g.vis_anchor = t.anchor;
        g.inf_anchor = ds.mate_of(t.anchor);
        g.inf_positive = t.positive;
        g.vis_positive = ds.mate_of(t.positive);
        g.inf_negative = t.negative;
        g.vis_negative = ds.mate_of(t.negative);
        out.push_back(g);
    }
    return out;
}

// ---- file formats ----

inline constexpr char kDatasetMagic[8] = {'V', 'I', 'D', 'D', 'S', 'E', 'T', '1'};

inline void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
    write_file_atomic(path, [&](BinaryWriter& w) {
        w.magic(kDatasetMagic, sizeof(kDatasetMagic));
        w.u32(1); // version
        w.u32(static_cast<std::uint32_t>(ds.config.n_identities));
        w.u32(static_cast<std::uint32_t>(ds.config.samples_per_identity_per_modality));
        w.u32(static_cast<std::uint32_t>(ds.config.identity_dim));
        w.u32(static_cast<std::uint32_t>(ds.config.nuisance_dim));
        w.u32(static_cast<std::uint32_t>(ds.config.raw_dim));
        w.f64(ds.config.nuisance_scale);
        w.f64(ds.config.noise_std);
        w.u64(ds.config.seed);
        w.u32(static_cast<std::uint32_t>(ds.n_train_identities));
        w.u32(static_cast<std::uint32_t>(ds.samples.size()));
        for (const Sample& s : ds.samples) {
            w.u32(static_cast<std::uint32_t>(s.identity));
            w.u8(static_cast<std::uint8_t>(s.modality));
            w.u32(static_cast<std::uint32_t>(s.pair_index));
            for (double v : s.raw) w.f64(v);
            for (double v : s.shared) w.f64(v);
            for (double v : s.nuisance) w.f64(v);
        }
    });
}

inline Dataset load_dataset(const std::filesystem::path& path) {
    BinaryReader r(path);
    r.expect_magic(kDatasetMagic, sizeof(kDatasetMagic));
    const std::uint32_t version = r.u32();
    if (version != 1)
        throw io_error("dataset version mismatch: " + std::to_string(version));
    Dataset ds;
    ds.config.n_identities = static_cast<int>(r.u32());
    ds.config.samples_per_identity_per_modality = static_cast<int>(r.u32());
    ds.config.identity_dim = static_cast<int>(r.u32());
    ds.config.nuisance_dim = static_cast<int>(r.u32());
    ds.config.raw_dim = static_cast<int>(r.u32());
    ds.config.nuisance_scale = r.f64();
    ds.config.noise_std = r.f64();
    ds.config.seed = r.u64();
    ds.n_train_identities = static_cast<int>(r.u32());
    const std::uint32_t n = r.u32();
    ds.samples.resize(n);
    for (Sample& s : ds.samples) {
        s.identity = static_cast<int>(r.u32());
        const std::uint8_t m = r.u8();
        if (m > 1) throw io_error("dataset: bad modality byte");
        s.modality = static_cast<Modality>(m);
        s.pair_index = static_cast<int>(r.u32());
        s.raw.resize(static_cast<std::size_t>(ds.config.raw_dim));
        for (double& v : s.raw) v = r.f64();
        s.shared.resize(static_cast<std::size_t>(ds.config.identity_dim));
        for (double& v : s.shared) v = r.f64();
        s.nuisance.resize(static_cast<std::size_t>(ds.config.nuisance_dim));
        for (double& v : s.nuisance) v = r.f64();
    }
    return ds;
}

inline std::string dataset_csv(const Dataset& ds) {
    std::string out = "id,modality";
    char buf[40];
    for (int j = 0; j < ds.config.raw_dim; ++j) {
        std::snprintf(buf, sizeof(buf), ",f_%d", j);
        out += buf;
    }
    out += "\n";
    for (const Sample& s : ds.samples) {
        std::snprintf(buf, sizeof(buf), "%d,%d", s.identity, static_cast<int>(s.modality));
        out += buf;
        for (double v : s.raw) {
            std::snprintf(buf, sizeof(buf), ",%.17g", v);
            out += buf;
        }
        out += "\n";
    }
    return out;
}

} // namespace varident
