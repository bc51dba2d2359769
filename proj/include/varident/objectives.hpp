#pragma once

// Loss terms and the stage-dependent weighted total.
//
// Identity branch:    id (cross-entropy on posterior means plus an auxiliary
//                     weighted term on sampled codes), cmtl (cross-modality
//                     triplet loss over both modality directions).
// Clustering branch:  gmm (log-det plus half squared distance to the
//                     identity's prior mean), lmc (adaptive large-margin
//                     clustering); the pair is combined as the
//                     discriminability term weighted by lambda_disc.
// Ambiguity branch:   ambi (paper-form KL of IAI posteriors to the standard
//                     normal, summed over dims, averaged over the batch).
// Swap branch:        rec (L1 of targeted reconstructions), cyc (code-space
//                     L1 of re-encoded reconstructions), idc (cross-entropy
//                     of re-encoded reconstructions against the d-source
//                     identity).
//
// Stages: 1 trains id+cmtl+disc, 2 trains the swap branch plus a weak ambi
// term, 3 trains everything with the stronger ambi weight.

#include <stdexcept>
#include <vector>

#include "distributions.hpp"
#include "model.hpp"
#include "param.hpp"
#include "priors.hpp"
#include "tensor.hpp"

namespace varident {

struct LossWeights {
    double gmm = 1.0;
    double lmc = 0.1;
    double disc = 0.2;
    double ambi_stage2 = 0.001;
    double ambi_stage3 = 0.01;
    double idc = 0.5;
    double cyc = 0.5;
    double rec = 0.5;
    double tsr = 1.0;
    double id = 1.0;
    double cmtl = 1.0;
    double aux = 0.1;
    double margin = 0.1;

    void validate() const {
        for (double v : {gmm, lmc, disc, ambi_stage2, ambi_stage3, idc, cyc, rec,
                         tsr, id, cmtl, aux, margin})
            if (v < 0.0) throw std::invalid_argument("LossWeights: negative weight");
    }

    double ambi_for_stage(int stage) const {
        return stage == 2 ? ambi_stage2 : ambi_stage3;
    }
};

// ---- small composites ----

inline NodeId mae_node(Tape& t, NodeId a, NodeId b) {
    return t.mean(t.abs(t.sub(a, b)));
}

inline NodeId l2_normalize_node(Tape& t, NodeId x) {
    return t.div_scalar(x, t.l2norm(x));
}

// L2 distance between L2-normalized inputs
inline NodeId normalized_distance_node(Tape& t, NodeId x, NodeId y) {
    return t.l2norm(t.sub(l2_normalize_node(t, x), l2_normalize_node(t, y)));
}

// [D(a,p) - D(a,n) + m]_+ on normalized inputs
inline NodeId triplet_term_node(Tape& t, NodeId anchor, NodeId positive, NodeId negative,
                                double m) {
    const NodeId dp = normalized_distance_node(t, anchor, positive);
    const NodeId dn = normalized_distance_node(t, anchor, negative);
    return t.relu(t.add_const(t.sub(dp, dn), m));
}

inline double triplet_term(const std::vector<double>& anchor,
                           const std::vector<double>& positive,
                           const std::vector<double>& negative, double m) {
    Tape t;
    const NodeId a = t.leaf(Tensor::vector(anchor));
    const NodeId p = t.leaf(Tensor::vector(positive));
    const NodeId n = t.leaf(Tensor::vector(negative));
    return t.value(triplet_term_node(t, a, p, n, m)).item();
}

namespace detail {

inline NodeId mean_of(Tape& t, const std::vector<NodeId>& scalars, const char* what) {
    if (scalars.empty())
        throw std::invalid_argument(std::string(what) + ": nothing to average");
    return t.mean(t.concat(scalars));
}

inline void check_label(int identity, int n_classes, const char* what) {
    if (identity < 0 || identity >= n_classes)
        throw std::invalid_argument(std::string(what) + ": identity label out of range");
}

} // namespace detail

// mean over the batch of CE(classify(mu), y) + lambda_aux * CE(classify(d), y)
inline NodeId id_loss_node(GraphContext& ctx, DgVaeModel& model, const BatchForward& fw,
                           double lambda_aux) {
    Tape& t = ctx.tape();
    const int n_classes = model.config().n_classes;
    std::vector<NodeId> per_image;
    for (int idx : fw.order) {
        const ImageCodes& c = fw.at(idx);
        detail::check_label(c.identity, n_classes, "id_loss");
        NodeId ce = t.softmax_cross_entropy(model.classify(ctx, c.d_post.mean), c.identity);
        if (lambda_aux > 0.0) {
            const NodeId aux =
                t.softmax_cross_entropy(model.classify(ctx, c.d), c.identity);
            ce = t.add(ce, t.scale(aux, lambda_aux));
        }
        per_image.push_back(ce);
    }
    return detail::mean_of(t, per_image, "id_loss");
}

// Eq-16-shaped cross-modality triplet loss: mean over visible-anchored
// triplets plus mean over infrared-anchored triplets, each combining the
// posterior-mean term with the lambda_aux-weighted sampled-code term
inline NodeId cmtl_loss_node(GraphContext& ctx, const Dataset& ds, const BatchForward& fw,
                             const std::vector<Triplet>& triplets, double margin,
                             double lambda_aux) {
    Tape& t = ctx.tape();
    std::vector<NodeId> by_direction[2];
    for (const Triplet& tr : triplets) {
        const ImageCodes& a = fw.at(tr.anchor);
        const ImageCodes& p = fw.at(tr.positive);
        const ImageCodes& n = fw.at(tr.negative);
        NodeId term = triplet_term_node(t, a.d_post.mean, p.d_post.mean, n.d_post.mean, margin);
        if (lambda_aux > 0.0) {
            const NodeId aux = triplet_term_node(t, a.d, p.d, n.d, margin);
            term = t.add(term, t.scale(aux, lambda_aux));
        }
        const int dir =
            ds.samples[static_cast<std::size_t>(tr.anchor)].modality == Modality::visible ? 0 : 1;
        by_direction[dir].push_back(term);
    }
    if (by_direction[0].empty() || by_direction[1].empty())
        throw std::invalid_argument("cmtl_loss: triplets must cover both modality directions");
    return t.add(detail::mean_of(t, by_direction[0], "cmtl_loss"),
                 detail::mean_of(t, by_direction[1], "cmtl_loss"));
}

inline NodeId gmm_loss_node(GraphContext& ctx, DgVaeModel& model, const BatchForward& fw) {
    std::vector<NodeId> per_image;
    for (int idx : fw.order) {
        const ImageCodes& c = fw.at(idx);
        per_image.push_back(
            gmm_term_node(ctx, model.prior(), c.d, c.d_post.log_std, c.identity));
    }
    return detail::mean_of(ctx.tape(), per_image, "gmm_loss");
}

inline NodeId lmc_loss_node(GraphContext& ctx, DgVaeModel& model, const BatchForward& fw) {
    std::vector<NodeId> per_image;
    for (int idx : fw.order) {
        const ImageCodes& c = fw.at(idx);
        per_image.push_back(almc_loss_node(ctx, model.prior(), c.d, c.d_post, c.identity));
    }
    return detail::mean_of(ctx.tape(), per_image, "lmc_loss");
}

inline NodeId ambi_loss_node(GraphContext& ctx, const BatchForward& fw) {
    std::vector<NodeId> per_image;
    for (int idx : fw.order)
        per_image.push_back(kl_standard_paper_node(ctx.tape(), fw.at(idx).a_post));
    return detail::mean_of(ctx.tape(), per_image, "ambi_loss");
}

// mean element-averaged L1 over every reconstruction that has a target
// (6 self + 4 anchor/positive d-swaps per group)
inline NodeId rec_loss_node(GraphContext& ctx, const ReconSet& set) {
    Tape& t = ctx.tape();
    std::vector<NodeId> maes;
    for (const ReconEntry& e : set.entries)
        if (e.target >= 0) maes.push_back(mae_node(t, e.recon, e.target));
    return detail::mean_of(t, maes, "rec_loss");
}

// per cross entry: L1(a fed in, re-encoded a) + L1(d fed in, re-encoded d),
// averaged over the enumerated pairings
inline NodeId cyc_loss_node(GraphContext& ctx, const ReconSet& set) {
    Tape& t = ctx.tape();
    std::vector<NodeId> terms;
    for (const ReconEntry& e : set.entries) {
        if (!e.cross) continue;
        if (!e.has_re_a)
            throw std::invalid_argument("cyc_loss: cross entry missing re-encoded IAI code");
        terms.push_back(t.add(mae_node(t, e.a_code, e.re_a.mean),
                              mae_node(t, e.d_code, e.re_d.mean)));
    }
    return detail::mean_of(t, terms, "cyc_loss");
}

// cross-entropy of classify(re-encoded d mean) against the d-source identity,
// over every reconstruction in the bundle
inline NodeId idc_loss_node(GraphContext& ctx, DgVaeModel& model, const ReconSet& set) {
    Tape& t = ctx.tape();
    const int n_classes = model.config().n_classes;
    std::vector<NodeId> terms;
    for (const ReconEntry& e : set.entries) {
        detail::check_label(e.d_identity, n_classes, "idc_loss");
        terms.push_back(
            t.softmax_cross_entropy(model.classify(ctx, e.re_d.mean), e.d_identity));
    }
    return detail::mean_of(t, terms, "idc_loss");
}

// ---- stage-weighted total ----

struct StageTerms {
    NodeId id = -1;
    NodeId cmtl = -1;
    NodeId gmm = -1;
    NodeId lmc = -1;
    NodeId rec = -1;
    NodeId cyc = -1;
    NodeId idc = -1;
    NodeId ambi = -1;
};

struct LossReport {
    int stage = 0;
    // term values (0 when the term is not part of the stage or is ablated)
    double id = 0, cmtl = 0, gmm = 0, lmc = 0, rec = 0, cyc = 0, idc = 0, ambi = 0;
    // effective weights actually applied to each term
    double w_id = 0, w_cmtl = 0, w_gmm = 0, w_lmc = 0, w_rec = 0, w_cyc = 0, w_idc = 0,
           w_ambi = 0;
    double total = 0;

    double weighted_sum() const {
        double s = 0.0;
        s += w_id * id;
        s += w_cmtl * cmtl;
        s += w_gmm * gmm;
        s += w_lmc * lmc;
        s += w_rec * rec;
        s += w_cyc * cyc;
        s += w_idc * idc;
        s += w_ambi * ambi;
        return s;
    }
};

struct TotalLoss {
    NodeId node = -1;
    LossReport report;
};

inline TotalLoss total_loss(GraphContext& ctx, int stage, const StageTerms& terms,
                            const LossWeights& w) {
    if (stage < 1 || stage > 3) throw std::invalid_argument("total_loss: unknown stage");
    w.validate();
    Tape& t = ctx.tape();

    TotalLoss out;
    out.report.stage = stage;
    NodeId acc = -1;

    auto take = [&](NodeId term, double weight, double& value_slot, double& weight_slot,
                    const char* name) {
        if (weight == 0.0) {
            // an ablated or out-of-stage term contributes nothing; report it
            // as zero weight (and zero value if it was never built)
            value_slot = term >= 0 ? t.value(term).item() : 0.0;
            weight_slot = 0.0;
            return;
        }
        if (term < 0)
            throw std::invalid_argument(std::string("total_loss: stage needs term '") + name +
                                        "' but it was not provided");
        value_slot = t.value(term).item();
        weight_slot = weight;
        const NodeId weighted = t.scale(term, weight);
        acc = acc < 0 ? weighted : t.add(acc, weighted);
    };

    const bool task_stage = (stage == 1 || stage == 3);
    const bool swap_stage = (stage == 2 || stage == 3);

    take(terms.id, task_stage ? w.id : 0.0, out.report.id, out.report.w_id, "id");
    take(terms.cmtl, task_stage ? w.cmtl : 0.0, out.report.cmtl, out.report.w_cmtl, "cmtl");
    take(terms.gmm, task_stage ? w.disc * w.gmm : 0.0, out.report.gmm, out.report.w_gmm, "gmm");
    take(terms.lmc, task_stage ? w.disc * w.lmc : 0.0, out.report.lmc, out.report.w_lmc, "lmc");
    take(terms.rec, swap_stage ? w.tsr * w.rec : 0.0, out.report.rec, out.report.w_rec, "rec");
    take(terms.cyc, swap_stage ? w.tsr * w.cyc : 0.0, out.report.cyc, out.report.w_cyc, "cyc");
    take(terms.idc, swap_stage ? w.tsr * w.idc : 0.0, out.report.idc, out.report.w_idc, "idc");
    take(terms.ambi, swap_stage ? w.ambi_for_stage(stage) : 0.0, out.report.ambi,
         out.report.w_ambi, "ambi");

    // a fully ablated stage still needs a well-defined scalar loss
    out.node = acc < 0 ? t.constant(0.0) : acc;
    out.report.total = t.value(out.node).item();
    return out;
}

} // namespace varident
