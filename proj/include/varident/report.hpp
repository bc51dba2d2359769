#pragma once

// Full post-training evaluation bundle and the JSON shapes shared by the CLI
// and the test suite: per-epoch metric records, the final metrics document,
// provenance, and verification reports. No timestamps anywhere: identical
// runs must produce identical bytes.

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include <json.hpp>

#include "config.hpp"
#include "data.hpp"
#include "eval.hpp"
#include "model.hpp"
#include "trainer.hpp"
#include "verify.hpp"

namespace varident {

struct FullEval {
    RetrievalOutcome retrieval;
    DistanceStats distance;
    ProbeResult probe;
    CollapseReport collapse;
};

// the complete evaluation protocol: retrieval over gallery draws, held-out
// cross-modality distance statistics, the linear probe on held-out
// identities, and collapse diagnostics on the training identities
inline FullEval full_eval(DgVaeModel& model, const Dataset& ds, const EvalConfig& ec) {
    FullEval out;
    out.retrieval = run_retrieval(model, ds, ec.draws, ec.seed);

    std::vector<std::vector<double>> d_means, a_means, embeddings;
    std::vector<int> identities;
    std::vector<Modality> modalities;
    for (int i : ds.heldout_sample_indices()) {
        const Sample& s = ds.samples[static_cast<std::size_t>(i)];
        const CodeSummary c = summarize_codes(model, s.raw, s.modality);
        // probe inputs are posterior means in units of their own std: mean
        // structure the encoder resolves above its sampling noise counts as
        // code content, structure drowned by that noise does not
        d_means.push_back(detail::whiten_by_std(c.d_mean, c.d_log_std));
        a_means.push_back(detail::whiten_by_std(c.a_mean, c.a_log_std));
        embeddings.push_back(c.d_mean);
        identities.push_back(s.identity);
        modalities.push_back(s.modality);
    }
    out.distance = distance_stats(embeddings, identities, modalities);
    out.probe = disentanglement_probe(d_means, a_means, identities);

    std::vector<CollapseInput> posteriors;
    for (int i : ds.train_sample_indices()) {
        const Sample& s = ds.samples[static_cast<std::size_t>(i)];
        const CodeSummary c = summarize_codes(model, s.raw, s.modality);
        CollapseInput ci;
        ci.d_mean = c.d_mean;
        ci.a_mean = c.a_mean;
        ci.a_log_std = c.a_log_std;
        ci.identity = s.identity;
        posteriors.push_back(std::move(ci));
    }
    out.collapse = collapse_diagnostic(model.prior(), posteriors);
    return out;
}

inline std::string hash_hex(std::uint64_t h) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline nlohmann::json metrics_json(const FullEval& e, std::uint64_t config_hash,
                                   std::uint64_t seed) {
    nlohmann::json j;
    j["retrieval"] = {{"rank1", e.retrieval.rank1},   {"rank10", e.retrieval.rank10},
                      {"map", e.retrieval.map},       {"n_query", e.retrieval.n_query},
                      {"n_gallery", e.retrieval.n_gallery}, {"draws", e.retrieval.draws}};
    j["distance"] = {{"intra_mean", e.distance.intra_mean},
                     {"intra_std", e.distance.intra_std},
                     {"inter_mean", e.distance.inter_mean},
                     {"inter_std", e.distance.inter_std},
                     {"delta", e.distance.delta},
                     {"n_intra", e.distance.n_intra},
                     {"n_inter", e.distance.n_inter}};
    j["probe"] = {{"idi_accuracy", e.probe.idi_accuracy},
                  {"iai_accuracy", e.probe.iai_accuracy},
                  {"chance", e.probe.chance},
                  {"n_classes", e.probe.n_classes},
                  {"n_train", e.probe.n_train},
                  {"n_heldout", e.probe.n_heldout}};
    j["collapse"] = {{"min_mean_distance", e.collapse.min_mean_distance},
                     {"iai_kl_per_dim", e.collapse.iai_kl_per_dim},
                     {"nearest_mean_accuracy", e.collapse.nearest_mean_accuracy},
                     {"flagged", e.collapse.flagged}};
    j["config_hash"] = hash_hex(config_hash);
    j["seed"] = seed;
    return j;
}

inline nlohmann::json epoch_record_json(const EpochRecord& r) {
    nlohmann::json j;
    j["stage"] = r.stage;
    j["epoch"] = r.epoch_in_stage;
    j["global_epoch"] = r.global_epoch;
    j["step"] = r.global_step;
    j["loss"] = {{"total", r.mean.total}, {"id", r.mean.id},   {"cmtl", r.mean.cmtl},
                 {"gmm", r.mean.gmm},     {"lmc", r.mean.lmc}, {"rec", r.mean.rec},
                 {"cyc", r.mean.cyc},     {"idc", r.mean.idc}, {"ambi", r.mean.ambi}};
    j["effective_weights"] = {{"id", r.mean.w_id},   {"cmtl", r.mean.w_cmtl},
                              {"gmm", r.mean.w_gmm}, {"lmc", r.mean.w_lmc},
                              {"rec", r.mean.w_rec}, {"cyc", r.mean.w_cyc},
                              {"idc", r.mean.w_idc}, {"ambi", r.mean.w_ambi}};
    if (r.has_retrieval)
        j["retrieval"] = {{"rank1", r.retrieval.rank1},
                          {"rank10", r.retrieval.rank10},
                          {"map", r.retrieval.map}};
    return j;
}

inline nlohmann::json verify_report_json(const VerifyReport& rep) {
    nlohmann::json checks = nlohmann::json::array();
    for (const CheckResult& c : rep.checks)
        checks.push_back({{"name", c.name},
                          {"pass", c.pass},
                          {"residual", c.residual},
                          {"bound", c.bound},
                          {"detail", c.detail}});
    return nlohmann::json{{"checks", checks}, {"all_pass", rep.all_pass()}};
}

// artifact versions and identifying hashes for a run directory
inline nlohmann::json provenance_json(const RunConfig& cfg, const std::string& dataset_file) {
    return nlohmann::json{{"tool", "varident"},
                          {"tool_version", "1.0.0"},
                          {"config_hash", hash_hex(config_hash(cfg))},
                          {"seed", cfg.seed},
                          {"dataset_file", dataset_file},
                          {"dataset_format_version", 1},
                          {"checkpoint_format_version", 1}};
}

} // namespace varident
