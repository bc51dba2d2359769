#pragma once

// Three-stage training loop: bias-corrected adaptive-moment updates for
// everything except the latent classifier (classical momentum there),
// per-stage trainable-parameter masks, margin projection after every step,
// per-epoch loss records with a retrieval snapshot, and bitwise
// checkpoint/restore including optimizer buffers and RNG stream positions.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "data.hpp"
#include "eval.hpp"
#include "model.hpp"
#include "objectives.hpp"
#include "param.hpp"
#include "rng.hpp"
#include "serialize.hpp"
#include "tensor.hpp"

namespace varident {

struct AdamState {
    std::vector<double> m, v;
    std::uint64_t step = 0;
};

struct MomentumState {
    std::vector<double> v;
};

namespace detail {

inline void check_grad_finite(const Parameter& p, const Tensor& grad) {
    if (grad.shape != p.value.shape)
        throw std::invalid_argument("optimizer: gradient shape mismatch for " + p.name);
    if (!grad.all_finite())
        throw numerical_error("optimizer: non-finite gradient for " + p.name);
}

} // namespace detail

// Adam with bias correction, beta1 0.9, beta2 0.999, eps 1e-8
inline void adaptive_moment_step(Parameter& p, const Tensor& grad, AdamState& st, double lr) {
    detail::check_grad_finite(p, grad);
    const std::size_t n = p.value.values.size();
    if (st.m.empty()) {
        st.m.assign(n, 0.0);
        st.v.assign(n, 0.0);
    }
    if (st.m.size() != n || st.v.size() != n)
        throw std::invalid_argument("optimizer: moment buffer shape mismatch for " + p.name);
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    st.step += 1;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(st.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(st.step));
    for (std::size_t i = 0; i < n; ++i) {
        const double g = grad.values[i];
        st.m[i] = b1 * st.m[i] + (1.0 - b1) * g;
        st.v[i] = b2 * st.v[i] + (1.0 - b2) * g * g;
        const double mh = st.m[i] / c1;
        const double vh = st.v[i] / c2;
        p.value.values[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
}

// classical momentum (0.9), used for the latent classifier only
inline void momentum_step(Parameter& p, const Tensor& grad, MomentumState& st, double lr,
                          double momentum = 0.9) {
    detail::check_grad_finite(p, grad);
    const std::size_t n = p.value.values.size();
    if (st.v.empty()) st.v.assign(n, 0.0);
    if (st.v.size() != n)
        throw std::invalid_argument("optimizer: velocity buffer shape mismatch for " + p.name);
    for (std::size_t i = 0; i < n; ++i) {
        st.v[i] = momentum * st.v[i] + grad.values[i];
        p.value.values[i] -= lr * st.v[i];
    }
}

struct StageConfig {
    int epochs = 0;
    double lr = 0.0;
};

struct TrainerConfig {
    // desk-scale schedule; stage-3 rate is a tenth of stage 1
    std::array<StageConfig, 3> stages{{{30, 2e-4}, {15, 2e-4}, {30, 2e-5}}};
    int steps_per_epoch = 96;
    int snapshot_draws = 2; // gallery draws for the per-epoch retrieval snapshot
    bool snapshots = true;

    void validate() const {
        for (const StageConfig& s : stages) {
            if (s.epochs < 0) throw std::invalid_argument("TrainerConfig: negative epochs");
            if (!(s.lr > 0.0)) throw std::invalid_argument("TrainerConfig: lr must be positive");
        }
        if (steps_per_epoch < 1)
            throw std::invalid_argument("TrainerConfig: steps_per_epoch must be positive");
        if (snapshots && snapshot_draws < 1)
            throw std::invalid_argument("TrainerConfig: snapshot_draws must be positive");
    }
};

// the set of parameters a stage is allowed to update; stage 2 freezes the
// whole stage-1 set (modality extractors, IDI encoder, prior)
inline std::vector<Parameter*> stage_mask(DgVaeModel& model, int stage) {
    std::vector<Parameter*> out;
    auto add = [&out](const std::vector<Parameter*>& group) {
        out.insert(out.end(), group.begin(), group.end());
    };
    switch (stage) {
        case 1:
            add(model.extractor_params());
            add(model.idi_params());
            add(model.classifier_params());
            add(model.prior_params());
            break;
        case 2:
            add(model.iai_params());
            add(model.decoder_params());
            add(model.classifier_params());
            break;
        case 3:
            add(model.all_params());
            break;
        default:
            throw std::invalid_argument("stage_mask: stage must be 1, 2 or 3");
    }
    return out;
}

struct EpochRecord {
    int stage = 0;
    int epoch_in_stage = 0; // 1-based, value after the epoch completed
    int global_epoch = 0;   // 1-based across stages
    std::uint64_t global_step = 0;
    LossReport mean; // term values averaged over the epoch's steps
    bool has_retrieval = false;
    RetrievalOutcome retrieval;
};

using MetricsSink = std::function<void(const EpochRecord&)>;

class Trainer {
public:
    Trainer(const ModelConfig& mc, const Dataset& ds, const LossWeights& w,
            const TrainerConfig& tc, std::uint64_t seed)
        : model_(mc), ds_(ds), weights_(w), tconf_(tc), seed_(seed),
          data_rng_(derive_seed(seed, 101)), noise_rng_(derive_seed(seed, 102)) {
        weights_.validate();
        tconf_.validate();
        if (mc.n_classes != ds.n_train_identities)
            throw std::invalid_argument("Trainer: model classes must match training identities");
        RngStream init_rng(derive_seed(seed, 100));
        model_.init(init_rng);
        for (Parameter* p : model_.classifier_params()) classifier_names_.insert(p->name);
    }

    DgVaeModel& model() { return model_; }
    const Dataset& dataset() const { return ds_; }
    const LossWeights& weights() const { return weights_; }
    int stage() const { return stage_; }
    int epoch_in_stage() const { return epoch_in_stage_; }
    std::uint64_t global_step() const { return global_step_; }
    void set_sink(MetricsSink sink) { sink_ = std::move(sink); }

    // one batch: sample, encode, build the stage's loss, backprop, step the
    // masked parameters, project margins
    LossReport train_step(int stage) {
        const double lr = tconf_.stages[static_cast<std::size_t>(stage - 1)].lr;
        Tape t;
        GraphContext ctx(t);

        TripletBatch batch = sample_batch(ds_, data_rng_);
        const std::vector<Triplet> triplets = build_triplets(ds_, batch, data_rng_);
        BatchForward fw = model_.encode_batch(ctx, ds_, batch, /*sample=*/true, &noise_rng_);

        StageTerms terms;
        const bool task_stage = (stage == 1 || stage == 3);
        const bool swap_stage = (stage == 2 || stage == 3);
        if (task_stage) {
            if (weights_.id != 0.0)
                terms.id = id_loss_node(ctx, model_, fw, weights_.aux);
            if (weights_.cmtl != 0.0)
                terms.cmtl = cmtl_loss_node(ctx, ds_, fw, triplets, weights_.margin, weights_.aux);
            if (weights_.disc * weights_.gmm != 0.0)
                terms.gmm = gmm_loss_node(ctx, model_, fw);
            if (weights_.disc * weights_.lmc != 0.0)
                terms.lmc = lmc_loss_node(ctx, model_, fw);
        }
        if (swap_stage) {
            const bool need_swaps =
                weights_.tsr != 0.0 &&
                (weights_.rec != 0.0 || weights_.cyc != 0.0 || weights_.idc != 0.0);
            if (need_swaps) {
                const std::vector<SwapGroup> groups = make_swap_groups(ds_, triplets);
                const ReconSet recon = tsr_forward(ctx, model_, groups, fw);
                if (weights_.rec != 0.0) terms.rec = rec_loss_node(ctx, recon);
                if (weights_.cyc != 0.0) terms.cyc = cyc_loss_node(ctx, recon);
                if (weights_.idc != 0.0) terms.idc = idc_loss_node(ctx, model_, recon);
            }
            if (weights_.ambi_for_stage(stage) != 0.0) terms.ambi = ambi_loss_node(ctx, fw);
        }

        const TotalLoss loss = total_loss(ctx, stage, terms, weights_);
        const GradMap grads = t.backward(loss.node);
        apply_updates(ctx, grads, stage, lr);
        model_.prior().project_margins();
        ++global_step_;
        return loss.report;
    }

    // run (the remainder of) one stage; emits one record per epoch and keeps
    // latest.ckpt plus a stage checkpoint in out_dir when given
    void run_stage(int stage, const std::string& out_dir = "") {
        if (stage < 1 || stage > 3)
            throw std::invalid_argument("run_stage: stage must be 1, 2 or 3");
        if (stage != stage_)
            throw std::invalid_argument("run_stage: trainer is at stage " +
                                        std::to_string(stage_));
        const StageConfig& sc = tconf_.stages[static_cast<std::size_t>(stage - 1)];
        while (epoch_in_stage_ < sc.epochs) {
            if (budget_ > 0 && used_this_run_ >= budget_) return; // clean mid-stage stop
            LossReport sum;
            for (int s = 0; s < tconf_.steps_per_epoch; ++s) {
                const LossReport r = train_step(stage);
                accumulate(sum, r);
            }
            finish_mean(sum, tconf_.steps_per_epoch);
            ++epoch_in_stage_;

            EpochRecord rec;
            rec.stage = stage;
            rec.epoch_in_stage = epoch_in_stage_;
            rec.global_epoch = completed_epochs_before(stage) + epoch_in_stage_;
            rec.global_step = global_step_;
            rec.mean = sum;
            if (tconf_.snapshots) {
                rec.retrieval = run_retrieval(model_, ds_, tconf_.snapshot_draws,
                                              derive_seed(seed_, 103));
                rec.has_retrieval = true;
            }
            if (sink_) sink_(rec);
            if (!out_dir.empty()) checkpoint(out_dir + "/latest.ckpt");
            ++used_this_run_;
        }
        if (!out_dir.empty())
            checkpoint(out_dir + "/stage" + std::to_string(stage) + ".ckpt");
        if (stage_ < 3) {
            stage_ += 1;
            epoch_in_stage_ = 0;
        }
    }

    // run to completion, or for at most max_epochs epochs in this call
    // (0 means no cap); a capped run stops at an epoch boundary with
    // latest.ckpt current, so a later run continues it exactly
    void run(const std::string& out_dir = "", int max_epochs = 0) {
        budget_ = max_epochs;
        used_this_run_ = 0;
        const int first = stage_;
        for (int s = first; s <= 3; ++s) {
            run_stage(s, out_dir);
            if (budget_ > 0 && used_this_run_ >= budget_ && !finished()) break;
        }
        budget_ = 0;
    }

    void run_all(const std::string& out_dir = "") { run(out_dir, 0); }

    bool finished() const {
        return stage_ == 3 && epoch_in_stage_ == tconf_.stages[2].epochs;
    }

    // ---- checkpointing ----
    //
    // Little-endian layout: magic "VIDCKPT1", u32 version, u32 stage,
    // u32 epoch_in_stage, u64 global_step, u64 seed, data/noise RNG states as
    // strings, then named parameter blocks (name, rank, dims, f64 values),
    // then adaptive-moment states (name, step, n, m[], v[]) and momentum
    // states (name, n, v[]), both sorted by name.

    static constexpr char kMagic[8] = {'V', 'I', 'D', 'C', 'K', 'P', 'T', '1'};
    static constexpr std::uint32_t kVersion = 1;

    void checkpoint(const std::filesystem::path& path) const {
        write_file_atomic(path, [&](BinaryWriter& w) {
            w.magic(kMagic, sizeof(kMagic));
            w.u32(kVersion);
            w.u32(static_cast<std::uint32_t>(stage_));
            w.u32(static_cast<std::uint32_t>(epoch_in_stage_));
            w.u64(global_step_);
            w.u64(seed_);
            w.str(data_rng_.state());
            w.str(noise_rng_.state());

            auto params = const_cast<DgVaeModel&>(model_).all_params();
            w.u32(static_cast<std::uint32_t>(params.size()));
            for (const Parameter* p : params) {
                w.str(p->name);
                w.u32(static_cast<std::uint32_t>(p->value.shape.size()));
                for (int d : p->value.shape) w.u32(static_cast<std::uint32_t>(d));
                for (double v : p->value.values) w.f64(v);
            }

            w.u32(static_cast<std::uint32_t>(adam_.size()));
            for (const auto& [name, st] : adam_) {
                w.str(name);
                w.u64(st.step);
                w.u32(static_cast<std::uint32_t>(st.m.size()));
                for (double v : st.m) w.f64(v);
                for (double v : st.v) w.f64(v);
            }
            w.u32(static_cast<std::uint32_t>(momentum_.size()));
            for (const auto& [name, st] : momentum_) {
                w.str(name);
                w.u32(static_cast<std::uint32_t>(st.v.size()));
                for (double v : st.v) w.f64(v);
            }
        });
    }

    void restore(const std::filesystem::path& path) {
        BinaryReader r(path);
        r.expect_magic(kMagic, sizeof(kMagic));
        const std::uint32_t version = r.u32();
        if (version != kVersion)
            throw io_error("checkpoint: unsupported version " + std::to_string(version));
        const std::uint32_t stage = r.u32();
        if (stage < 1 || stage > 3) throw io_error("checkpoint: invalid stage id");
        stage_ = static_cast<int>(stage);
        epoch_in_stage_ = static_cast<int>(r.u32());
        global_step_ = r.u64();
        seed_ = r.u64();
        data_rng_.set_state(r.str());
        noise_rng_.set_state(r.str());

        std::map<std::string, Parameter*> by_name;
        for (Parameter* p : model_.all_params()) by_name[p->name] = p;
        const std::uint32_t n_params = r.u32();
        if (n_params != by_name.size())
            throw io_error("checkpoint: parameter count mismatch");
        std::set<std::string> seen;
        for (std::uint32_t i = 0; i < n_params; ++i) {
            const std::string name = r.str();
            const auto it = by_name.find(name);
            if (it == by_name.end())
                throw io_error("checkpoint: unknown parameter '" + name + "'");
            if (!seen.insert(name).second)
                throw io_error("checkpoint: duplicate parameter '" + name + "'");
            std::vector<int> shape(r.u32());
            for (int& d : shape) d = static_cast<int>(r.u32());
            if (shape != it->second->value.shape)
                throw io_error("checkpoint: shape mismatch for '" + name + "'");
            for (double& v : it->second->value.values) v = r.f64();
        }

        adam_.clear();
        const std::uint32_t n_adam = r.u32();
        for (std::uint32_t i = 0; i < n_adam; ++i) {
            const std::string name = r.str();
            const auto it = by_name.find(name);
            if (it == by_name.end())
                throw io_error("checkpoint: moment state for unknown parameter '" + name + "'");
            AdamState st;
            st.step = r.u64();
            const std::uint32_t n = r.u32();
            if (n != it->second->value.values.size())
                throw io_error("checkpoint: moment buffer size mismatch for '" + name + "'");
            st.m.resize(n);
            st.v.resize(n);
            for (double& v : st.m) v = r.f64();
            for (double& v : st.v) v = r.f64();
            adam_.emplace(name, std::move(st));
        }

        momentum_.clear();
        const std::uint32_t n_mom = r.u32();
        for (std::uint32_t i = 0; i < n_mom; ++i) {
            const std::string name = r.str();
            const auto it = by_name.find(name);
            if (it == by_name.end())
                throw io_error("checkpoint: velocity state for unknown parameter '" + name + "'");
            MomentumState st;
            const std::uint32_t n = r.u32();
            if (n != it->second->value.values.size())
                throw io_error("checkpoint: velocity buffer size mismatch for '" + name + "'");
            st.v.resize(n);
            for (double& v : st.v) v = r.f64();
            momentum_.emplace(name, std::move(st));
        }
        r.expect_end();
    }

private:
    void apply_updates(GraphContext& ctx, const GradMap& grads, int stage, double lr) {
        for (Parameter* p : stage_mask(model_, stage)) {
            if (!p->trainable) continue;
            const NodeId node = ctx.node_of(*p);
            if (node < 0) continue; // parameter never entered this graph
            if (!grads.contains(node)) continue;
            const Tensor& g = grads.at(node);
            if (classifier_names_.count(p->name))
                momentum_step(*p, g, momentum_[p->name], lr);
            else
                adaptive_moment_step(*p, g, adam_[p->name], lr);
        }
    }

    int completed_epochs_before(int stage) const {
        int n = 0;
        for (int s = 1; s < stage; ++s)
            n += tconf_.stages[static_cast<std::size_t>(s - 1)].epochs;
        return n;
    }

    static void accumulate(LossReport& sum, const LossReport& r) {
        sum.stage = r.stage;
        sum.id += r.id;
        sum.cmtl += r.cmtl;
        sum.gmm += r.gmm;
        sum.lmc += r.lmc;
        sum.rec += r.rec;
        sum.cyc += r.cyc;
        sum.idc += r.idc;
        sum.ambi += r.ambi;
        sum.total += r.total;
        sum.w_id = r.w_id;
        sum.w_cmtl = r.w_cmtl;
        sum.w_gmm = r.w_gmm;
        sum.w_lmc = r.w_lmc;
        sum.w_rec = r.w_rec;
        sum.w_cyc = r.w_cyc;
        sum.w_idc = r.w_idc;
        sum.w_ambi = r.w_ambi;
    }

    static void finish_mean(LossReport& sum, int steps) {
        const double inv = 1.0 / static_cast<double>(steps);
        sum.id *= inv;
        sum.cmtl *= inv;
        sum.gmm *= inv;
        sum.lmc *= inv;
        sum.rec *= inv;
        sum.cyc *= inv;
        sum.idc *= inv;
        sum.ambi *= inv;
        sum.total *= inv;
    }

    DgVaeModel model_;
    Dataset ds_;
    LossWeights weights_;
    TrainerConfig tconf_;
    std::uint64_t seed_ = 0;
    RngStream data_rng_;
    RngStream noise_rng_;
    int stage_ = 1;
    int epoch_in_stage_ = 0;
    std::uint64_t global_step_ = 0;
    int budget_ = 0;
    int used_this_run_ = 0;
    std::map<std::string, AdamState> adam_;
    std::map<std::string, MomentumState> momentum_;
    std::set<std::string> classifier_names_;
    MetricsSink sink_;
};

} // namespace varident
