#pragma once

// Network roles at desk scale: two modality-specific extractors, shared
// identity-discriminable (IDI) and identity-ambiguous (IAI) Gaussian encoders,
// a decoder over concatenated codes, a single-layer latent-code classifier,
// and the triplet-swap forward graph.
//
// The encoders share parameters across modalities. Their trunks end in a
// grouped reduction whose flavor carries the inductive bias: max-reduction
// for the IDI head (discriminative), mean-reduction for the IAI head
// (comprehensive). The decoder concatenates d-then-a (order fixed globally)
// and squashes its output into (-1, 1).

#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "data.hpp"
#include "distributions.hpp"
#include "param.hpp"
#include "priors.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace varident {

struct ModelConfig {
    int raw_dim = 32;
    int feature_dim = 64;
    int extractor_hidden = 64;
    int trunk_hidden = 64;
    int pool_group = 2;
    int d_dim = 32;
    int a_dim = 8;
    int n_classes = 12;
    double leaky_slope = 0.2;

    void validate() const {
        if (raw_dim < 1 || feature_dim < 1 || extractor_hidden < 1 || trunk_hidden < 1 ||
            d_dim < 1 || a_dim < 1 || n_classes < 1)
            throw std::invalid_argument("ModelConfig: all dims must be positive");
        if (a_dim >= d_dim)
            throw std::invalid_argument("ModelConfig: IAI dim must be smaller than IDI dim");
        if (pool_group < 1 || trunk_hidden % pool_group != 0)
            throw std::invalid_argument("ModelConfig: pool_group must divide trunk_hidden");
        if (leaky_slope < 0.0 || leaky_slope >= 1.0)
            throw std::invalid_argument("ModelConfig: leaky_slope must be in [0, 1)");
    }
};

namespace detail {

inline void init_affine(Parameter& w, Parameter& b, const std::string& prefix,
                        int out_dim, int in_dim, RngStream& rng) {
    w.name = prefix + ".w";
    b.name = prefix + ".b";
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
    std::vector<double> wv(static_cast<std::size_t>(out_dim) * in_dim);
    for (double& v : wv) v = (2.0 * rng.uniform() - 1.0) * bound;
    w.value = Tensor::matrix(out_dim, in_dim, std::move(wv));
    std::vector<double> bv(static_cast<std::size_t>(out_dim));
    for (double& v : bv) v = (2.0 * rng.uniform() - 1.0) * bound;
    b.value = Tensor::vector(std::move(bv));
}

} // namespace detail

// modality-specific feature extractor: raw -> hidden -> feature, tanh both
// layers so features live in (-1, 1) like decoder outputs
struct Extractor {
    Parameter w1, b1, w2, b2;

    void init(const std::string& prefix, int raw_dim, int hidden, int feature_dim,
              RngStream& rng) {
        detail::init_affine(w1, b1, prefix + ".l1", hidden, raw_dim, rng);
        detail::init_affine(w2, b2, prefix + ".l2", feature_dim, hidden, rng);
    }

    NodeId forward(GraphContext& ctx, NodeId x) {
        Tape& t = ctx.tape();
        const NodeId h = t.tanh(t.affine(ctx.param(w1), x, ctx.param(b1)));
        return t.tanh(t.affine(ctx.param(w2), h, ctx.param(b2)));
    }

    std::vector<Parameter*> params() { return {&w1, &b1, &w2, &b2}; }
};

// shared Gaussian encoder: 2-layer trunk, grouped max or mean reduction,
// then separate mean and log-std heads (log-std clamped)
struct GaussianEncoder {
    Parameter w1, b1, w2, b2, wm, bm, ws, bs;
    int pool_group = 2;
    bool max_pool = true;

    void init(const std::string& prefix, int feature_dim, int hidden, int group,
              int code_dim, bool use_max_pool, double log_std_bias, RngStream& rng) {
        pool_group = group;
        max_pool = use_max_pool;
        const int pooled = hidden / group;
        detail::init_affine(w1, b1, prefix + ".l1", hidden, feature_dim, rng);
        detail::init_affine(w2, b2, prefix + ".l2", hidden, hidden, rng);
        detail::init_affine(wm, bm, prefix + ".mean", code_dim, pooled, rng);
        detail::init_affine(ws, bs, prefix + ".logstd", code_dim, pooled, rng);
        // a head can start with deliberately small posterior stds; shifting
        // the bias leaves the clamp and the gradients alone
        for (double& v : bs.value.values) v += log_std_bias;
    }

    GaussianNodes forward(GraphContext& ctx, NodeId f) {
        Tape& t = ctx.tape();
        const NodeId h1 = t.tanh(t.affine(ctx.param(w1), f, ctx.param(b1)));
        const NodeId h2 = t.tanh(t.affine(ctx.param(w2), h1, ctx.param(b2)));
        const NodeId pooled = max_pool ? t.group_max(h2, pool_group)
                                       : t.group_mean(h2, pool_group);
        GaussianNodes g;
        g.mean = t.affine(ctx.param(wm), pooled, ctx.param(bm));
        g.log_std = t.clamp(t.affine(ctx.param(ws), pooled, ctx.param(bs)),
                            kLogStdMin, kLogStdMax);
        return g;
    }

    std::vector<Parameter*> params() { return {&w1, &b1, &w2, &b2, &wm, &bm, &ws, &bs}; }
};

struct Decoder {
    Parameter w1, b1, w2, b2;
    double slope = 0.2;

    void init(const std::string& prefix, int d_dim, int a_dim, int hidden,
              int feature_dim, double leaky_slope, RngStream& rng) {
        slope = leaky_slope;
        detail::init_affine(w1, b1, prefix + ".l1", hidden, d_dim + a_dim, rng);
        detail::init_affine(w2, b2, prefix + ".l2", feature_dim, hidden, rng);
    }

    // concatenation order is d-then-a everywhere
    NodeId forward(GraphContext& ctx, NodeId d, NodeId a) {
        Tape& t = ctx.tape();
        const NodeId z = t.concat({d, a});
        const NodeId h = t.leaky_relu(t.affine(ctx.param(w1), z, ctx.param(b1)), slope);
        return t.tanh(t.affine(ctx.param(w2), h, ctx.param(b2)));
    }

    std::vector<Parameter*> params() { return {&w1, &b1, &w2, &b2}; }
};

struct LatentClassifier {
    Parameter w, b;

    void init(const std::string& prefix, int d_dim, int n_classes, RngStream& rng) {
        detail::init_affine(w, b, prefix, n_classes, d_dim, rng);
    }

    NodeId logits(GraphContext& ctx, NodeId code) {
        return ctx.tape().affine(ctx.param(w), code, ctx.param(b));
    }

    std::vector<Parameter*> params() { return {&w, &b}; }
};

// per-image forward products: extracted feature, both posteriors, both codes
struct ImageCodes {
    NodeId f = -1;
    GaussianNodes d_post, a_post;
    NodeId d = -1;
    NodeId a = -1;
    int identity = -1;
    Modality modality = Modality::visible;
};

struct BatchForward {
    std::vector<int> order; // sample indices in encode order
    std::unordered_map<int, ImageCodes> codes;

    const ImageCodes& at(int sample_index) const {
        auto it = codes.find(sample_index);
        if (it == codes.end())
            throw std::invalid_argument("BatchForward: sample " +
                                        std::to_string(sample_index) + " was not encoded");
        return it->second;
    }
};

class DgVaeModel {
public:
    DgVaeModel(const ModelConfig& config)
        : config_(config), prior_(config.n_classes, config.d_dim) {
        config.validate();
    }

    void init(RngStream& rng) {
        vis_.init("extract.vis", config_.raw_dim, config_.extractor_hidden,
                  config_.feature_dim, rng);
        inf_.init("extract.inf", config_.raw_dim, config_.extractor_hidden,
                  config_.feature_dim, rng);
        // identity codes start nearly deterministic: the clustering loss
        // drives their stds toward the clamp floor anyway, and starting the
        // walk there keeps sampled codes usable from the first epochs.
        // Ambiguous codes start at unit std, the optimum of their prior
        // term; the sampling noise doubles as an information bottleneck
        idi_.init("encode.idi", config_.feature_dim, config_.trunk_hidden,
                  config_.pool_group, config_.d_dim, /*max_pool=*/true,
                  /*log_std_bias=*/-2.0, rng);
        iai_.init("encode.iai", config_.feature_dim, config_.trunk_hidden,
                  config_.pool_group, config_.a_dim, /*max_pool=*/false,
                  /*log_std_bias=*/0.0, rng);
        dec_.init("decode", config_.d_dim, config_.a_dim, config_.trunk_hidden,
                  config_.feature_dim, config_.leaky_slope, rng);
        cls_.init("classify", config_.d_dim, config_.n_classes, rng);
        prior_.init(rng);
    }

    const ModelConfig& config() const { return config_; }
    MoGPrior& prior() { return prior_; }
    const MoGPrior& prior() const { return prior_; }
    Extractor& extractor(Modality m) { return m == Modality::visible ? vis_ : inf_; }
    GaussianEncoder& idi_encoder() { return idi_; }
    GaussianEncoder& iai_encoder() { return iai_; }
    Decoder& decoder() { return dec_; }
    LatentClassifier& classifier() { return cls_; }

    NodeId extract(GraphContext& ctx, NodeId raw, Modality m) {
        if (m != Modality::visible && m != Modality::infrared)
            throw std::invalid_argument("extract: unknown modality");
        return extractor(m).forward(ctx, raw);
    }

    GaussianNodes encode_idi(GraphContext& ctx, NodeId f) { return idi_.forward(ctx, f); }
    GaussianNodes encode_iai(GraphContext& ctx, NodeId f) { return iai_.forward(ctx, f); }

    NodeId decode(GraphContext& ctx, NodeId d, NodeId a) {
        if (ctx.tape().value(d).size() != config_.d_dim ||
            ctx.tape().value(a).size() != config_.a_dim)
            throw std::invalid_argument("decode: code dimension mismatch");
        return dec_.forward(ctx, d, a);
    }

    NodeId classify(GraphContext& ctx, NodeId code) { return cls_.logits(ctx, code); }

    // encode a feature node into posteriors and (optionally sampled) codes;
    // with sample=false the codes are the posterior means
    ImageCodes encode_feature(GraphContext& ctx, NodeId f, int identity, Modality modality,
                              bool sample, RngStream* noise) {
        ImageCodes c;
        c.f = f;
        c.identity = identity;
        c.modality = modality;
        c.d_post = encode_idi(ctx, f);
        c.a_post = encode_iai(ctx, f);
        if (sample) {
            if (noise == nullptr)
                throw std::invalid_argument("encode_feature: sampling requires a noise stream");
            Tensor eps_d = Tensor::zeros({config_.d_dim});
            for (double& v : eps_d.values) v = noise->normal();
            Tensor eps_a = Tensor::zeros({config_.a_dim});
            for (double& v : eps_a.values) v = noise->normal();
            c.d = reparameterize_node(ctx.tape(), c.d_post, eps_d);
            c.a = reparameterize_node(ctx.tape(), c.a_post, eps_a);
        } else {
            c.d = c.d_post.mean;
            c.a = c.a_post.mean;
        }
        return c;
    }

    // encode every image of a batch exactly once, in batch order, one noise
    // draw per code
    BatchForward encode_batch(GraphContext& ctx, const Dataset& ds, const TripletBatch& batch,
                              bool sample, RngStream* noise) {
        BatchForward fw;
        for (int idx : batch.images) {
            if (fw.codes.count(idx)) continue;
            const Sample& s = ds.samples[static_cast<std::size_t>(idx)];
            const NodeId raw = ctx.input(s.raw);
            const NodeId f = extract(ctx, raw, s.modality);
            fw.codes.emplace(idx, encode_feature(ctx, f, s.identity, s.modality, sample, noise));
            fw.order.push_back(idx);
        }
        return fw;
    }

    std::vector<Parameter*> all_params() {
        std::vector<Parameter*> out;
        for (auto* list : {&vis_, &inf_}) {
            auto p = list->params();
            out.insert(out.end(), p.begin(), p.end());
        }
        for (auto* enc : {&idi_, &iai_}) {
            auto p = enc->params();
            out.insert(out.end(), p.begin(), p.end());
        }
        auto pd = dec_.params();
        out.insert(out.end(), pd.begin(), pd.end());
        auto pc = cls_.params();
        out.insert(out.end(), pc.begin(), pc.end());
        out.push_back(&prior_.means());
        out.push_back(&prior_.margins());
        return out;
    }

    // parameter groups as the stage masks see them
    std::vector<Parameter*> extractor_params() {
        std::vector<Parameter*> out = vis_.params();
        auto p = inf_.params();
        out.insert(out.end(), p.begin(), p.end());
        return out;
    }
    std::vector<Parameter*> idi_params() { return idi_.params(); }
    std::vector<Parameter*> iai_params() { return iai_.params(); }
    std::vector<Parameter*> decoder_params() { return dec_.params(); }
    std::vector<Parameter*> classifier_params() { return cls_.params(); }
    std::vector<Parameter*> prior_params() { return {&prior_.means(), &prior_.margins()}; }

private:
    ModelConfig config_;
    Extractor vis_, inf_;
    GaussianEncoder idi_, iai_;
    Decoder dec_;
    LatentClassifier cls_;
    MoGPrior prior_;
};

// ---- triplet-swap forward graph ----

struct ReconEntry {
    NodeId recon = -1;
    NodeId target = -1;  // original feature node, or -1 when no L1 target exists
    NodeId d_code = -1;  // codes fed into the decoder
    NodeId a_code = -1;
    GaussianNodes re_d;  // posteriors of the re-encoded reconstruction
    GaussianNodes re_a;  // only filled for cross entries
    bool has_re_a = false;
    int d_identity = -1; // identity of the d-code source
    bool cross = false;
};

struct ReconSet {
    std::vector<ReconEntry> entries;
    int n_groups = 0;
    int n_targeted = 0; // entries carrying an L1 target
};

namespace detail {

inline void check_group(const BatchForward& fw, const SwapGroup& g) {
    const auto& va = fw.at(g.vis_anchor);
    const auto& vp = fw.at(g.vis_positive);
    const auto& vn = fw.at(g.vis_negative);
    const auto& ia = fw.at(g.inf_anchor);
    const auto& ip = fw.at(g.inf_positive);
    const auto& in = fw.at(g.inf_negative);
    if (va.identity != ia.identity || vp.identity != ip.identity ||
        vn.identity != in.identity)
        throw std::invalid_argument("tsr_forward: pair members disagree on identity");
    if (va.identity != vp.identity)
        throw std::invalid_argument("tsr_forward: anchor and positive identities differ");
    if (va.identity == vn.identity)
        throw std::invalid_argument("tsr_forward: anchor and negative identities match");
    for (const ImageCodes* v : {&va, &vp, &vn})
        if (v->modality != Modality::visible)
            throw std::invalid_argument("tsr_forward: visible slot holds wrong modality");
    for (const ImageCodes* i : {&ia, &ip, &in})
        if (i->modality != Modality::infrared)
            throw std::invalid_argument("tsr_forward: infrared slot holds wrong modality");
}

} // namespace detail

// Decodes, per group, 6 self-reconstructions plus 18 cross-modality code
// pairings (ordered roles (i, j) in {a, p, n}^2, both directions: d from the
// opposite modality's j member, a from this modality's i member). The 4 cross
// entries with i != j in {a, p} carry L1 targets; negative-involving entries
// never do. Every reconstruction is re-encoded for the cycle and identity
// consistency terms.
inline ReconSet tsr_forward(GraphContext& ctx, DgVaeModel& model,
                            const std::vector<SwapGroup>& groups, const BatchForward& fw) {
    ReconSet set;
    set.n_groups = static_cast<int>(groups.size());
    for (const SwapGroup& g : groups) {
        detail::check_group(fw, g);
        const std::array<const ImageCodes*, 3> vis = {
            &fw.at(g.vis_anchor), &fw.at(g.vis_positive), &fw.at(g.vis_negative)};
        const std::array<const ImageCodes*, 3> inf = {
            &fw.at(g.inf_anchor), &fw.at(g.inf_positive), &fw.at(g.inf_negative)};

        auto add_entry = [&](const ImageCodes& d_src, const ImageCodes& a_src,
                             bool targeted, bool cross) {
            ReconEntry e;
            e.d_code = d_src.d;
            e.a_code = a_src.a;
            e.recon = model.decode(ctx, d_src.d, a_src.a);
            e.d_identity = d_src.identity;
            e.cross = cross;
            if (targeted) {
                e.target = a_src.f;
                ++set.n_targeted;
            }
            e.re_d = model.encode_idi(ctx, e.recon);
            if (cross) {
                e.re_a = model.encode_iai(ctx, e.recon);
                e.has_re_a = true;
            }
            set.entries.push_back(e);
        };

        // self-reconstructions, all six members
        for (const auto* m : vis) add_entry(*m, *m, /*targeted=*/true, /*cross=*/false);
        for (const auto* m : inf) add_entry(*m, *m, /*targeted=*/true, /*cross=*/false);

        // cross pairings: a from role i of one modality, d from role j of the
        // other; only anchor/positive swaps (i != j) keep an L1 target
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) {
                const bool targeted = (i != j) && i < 2 && j < 2;
                add_entry(*inf[static_cast<std::size_t>(j)],
                          *vis[static_cast<std::size_t>(i)], targeted, /*cross=*/true);
                add_entry(*vis[static_cast<std::size_t>(j)],
                          *inf[static_cast<std::size_t>(i)], targeted, /*cross=*/true);
            }
        }
    }
    return set;
}

// ---- evaluation-time encoding (no gradients, no sampling) ----

struct CodeSummary {
    std::vector<double> d_mean, d_log_std;
    std::vector<double> a_mean, a_log_std;
};

inline CodeSummary summarize_codes(DgVaeModel& model, const std::vector<double>& raw,
                                   Modality modality) {
    Tape tape;
    GraphContext ctx(tape);
    const NodeId x = ctx.input(raw);
    const NodeId f = model.extract(ctx, x, modality);
    const GaussianNodes d = model.encode_idi(ctx, f);
    const GaussianNodes a = model.encode_iai(ctx, f);
    CodeSummary s;
    s.d_mean = tape.value(d.mean).values;
    s.d_log_std = tape.value(d.log_std).values;
    s.a_mean = tape.value(a.mean).values;
    s.a_log_std = tape.value(a.log_std).values;
    return s;
}

} // namespace varident
