#pragma once

// Run configuration: one JSON document covering data generation, model
// architecture, loss weights, the stage schedule and evaluation protocol.
// Every field has a default; unknown keys are rejected at every nesting
// level so a typo cannot silently fall back to a default. The effective
// (fully expanded) config is echoed into each run directory together with a
// stable content hash.

#include <array>
#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "data.hpp"
#include "model.hpp"
#include "objectives.hpp"
#include "serialize.hpp"
#include "trainer.hpp"

namespace varident {

class config_error : public std::runtime_error {
public:
    explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

struct EvalConfig {
    int draws = 10;
    std::uint64_t seed = 2026;

    void validate() const {
        if (draws < 1) throw std::invalid_argument("EvalConfig: draws must be positive");
    }
};

struct RunConfig {
    std::uint64_t seed = 1; // training seed (init, batches, noise)
    std::string out_dir;    // usually supplied by --out
    SyntheticConfig data;
    ModelConfig model;
    LossWeights weights;
    TrainerConfig trainer;
    EvalConfig eval;

    void validate() const {
        data.validate();
        weights.validate();
        trainer.validate();
        eval.validate();
        // raw_dim and n_classes are derived from the dataset; validate the
        // architecture against the data geometry it will face
        model_for_data(data.raw_dim, 1).validate();
    }

    // the model configuration is completed from the dataset at run time
    ModelConfig model_for_data(int raw_dim, int n_classes) const {
        ModelConfig mc = model;
        mc.raw_dim = raw_dim;
        mc.n_classes = n_classes;
        return mc;
    }
};

namespace cfg {

inline void require_object(const nlohmann::json& j, const std::string& where) {
    if (!j.is_object()) throw config_error(where + ": expected an object");
}

inline void check_keys(const nlohmann::json& j, const std::string& where,
                       std::initializer_list<const char*> allowed) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* k : allowed)
            if (it.key() == k) {
                known = true;
                break;
            }
        if (!known) throw config_error(where + ": unknown key '" + it.key() + "'");
    }
}

inline int get_int(const nlohmann::json& j, const std::string& where, const char* key,
                   int def) {
    if (!j.contains(key)) return def;
    const auto& v = j.at(key);
    if (!v.is_number_integer())
        throw config_error(where + "." + key + ": expected an integer");
    return v.get<int>();
}

inline double get_num(const nlohmann::json& j, const std::string& where, const char* key,
                      double def) {
    if (!j.contains(key)) return def;
    const auto& v = j.at(key);
    if (!v.is_number()) throw config_error(where + "." + key + ": expected a number");
    return v.get<double>();
}

inline std::uint64_t get_u64(const nlohmann::json& j, const std::string& where,
                             const char* key, std::uint64_t def) {
    if (!j.contains(key)) return def;
    const auto& v = j.at(key);
    if (!(v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0)))
        throw config_error(where + "." + key + ": expected a nonnegative integer");
    return v.get<std::uint64_t>();
}

inline bool get_bool(const nlohmann::json& j, const std::string& where, const char* key,
                     bool def) {
    if (!j.contains(key)) return def;
    const auto& v = j.at(key);
    if (!v.is_boolean()) throw config_error(where + "." + key + ": expected a boolean");
    return v.get<bool>();
}

inline std::string get_str(const nlohmann::json& j, const std::string& where,
                           const char* key, const std::string& def) {
    if (!j.contains(key)) return def;
    const auto& v = j.at(key);
    if (!v.is_string()) throw config_error(where + "." + key + ": expected a string");
    return v.get<std::string>();
}

template <typename T, std::size_t N>
std::array<T, N> get_array(const nlohmann::json& j, const std::string& where,
                           const char* key, const std::array<T, N>& def, bool integer) {
    if (!j.contains(key)) return def;
    const auto& v = j.at(key);
    if (!v.is_array() || v.size() != N)
        throw config_error(where + "." + key + ": expected an array of " +
                           std::to_string(N) + " numbers");
    std::array<T, N> out{};
    for (std::size_t i = 0; i < N; ++i) {
        if (integer ? !v[i].is_number_integer() : !v[i].is_number())
            throw config_error(where + "." + key + ": element " + std::to_string(i) +
                               " has the wrong type");
        out[i] = v[i].get<T>();
    }
    return out;
}

} // namespace cfg

inline RunConfig parse_run_config(const nlohmann::json& j) {
    cfg::require_object(j, "config");
    cfg::check_keys(j, "config", {"seed", "out_dir", "data", "model", "weights", "trainer",
                                  "eval"});
    RunConfig c;
    c.seed = cfg::get_u64(j, "config", "seed", c.seed);
    c.out_dir = cfg::get_str(j, "config", "out_dir", c.out_dir);

    if (j.contains("data")) {
        const auto& d = j.at("data");
        cfg::require_object(d, "data");
        cfg::check_keys(d, "data",
                        {"n_identities", "pairs_per_identity", "identity_dim", "nuisance_dim",
                         "raw_dim", "nuisance_scale", "noise_std", "seed"});
        c.data.n_identities = cfg::get_int(d, "data", "n_identities", c.data.n_identities);
        c.data.samples_per_identity_per_modality = cfg::get_int(
            d, "data", "pairs_per_identity", c.data.samples_per_identity_per_modality);
        c.data.identity_dim = cfg::get_int(d, "data", "identity_dim", c.data.identity_dim);
        c.data.nuisance_dim = cfg::get_int(d, "data", "nuisance_dim", c.data.nuisance_dim);
        c.data.raw_dim = cfg::get_int(d, "data", "raw_dim", c.data.raw_dim);
        c.data.nuisance_scale =
            cfg::get_num(d, "data", "nuisance_scale", c.data.nuisance_scale);
        c.data.noise_std = cfg::get_num(d, "data", "noise_std", c.data.noise_std);
        c.data.seed = cfg::get_u64(d, "data", "seed", c.data.seed);
    }

    if (j.contains("model")) {
        const auto& m = j.at("model");
        cfg::require_object(m, "model");
        cfg::check_keys(m, "model",
                        {"feature_dim", "extractor_hidden", "trunk_hidden", "pool_group",
                         "d_dim", "a_dim", "leaky_slope"});
        c.model.feature_dim = cfg::get_int(m, "model", "feature_dim", c.model.feature_dim);
        c.model.extractor_hidden =
            cfg::get_int(m, "model", "extractor_hidden", c.model.extractor_hidden);
        c.model.trunk_hidden = cfg::get_int(m, "model", "trunk_hidden", c.model.trunk_hidden);
        c.model.pool_group = cfg::get_int(m, "model", "pool_group", c.model.pool_group);
        c.model.d_dim = cfg::get_int(m, "model", "d_dim", c.model.d_dim);
        c.model.a_dim = cfg::get_int(m, "model", "a_dim", c.model.a_dim);
        c.model.leaky_slope = cfg::get_num(m, "model", "leaky_slope", c.model.leaky_slope);
    }

    if (j.contains("weights")) {
        const auto& w = j.at("weights");
        cfg::require_object(w, "weights");
        cfg::check_keys(w, "weights",
                        {"gmm", "lmc", "disc", "ambi_stage2", "ambi_stage3", "idc", "cyc",
                         "rec", "tsr", "id", "cmtl", "aux", "margin"});
        c.weights.gmm = cfg::get_num(w, "weights", "gmm", c.weights.gmm);
        c.weights.lmc = cfg::get_num(w, "weights", "lmc", c.weights.lmc);
        c.weights.disc = cfg::get_num(w, "weights", "disc", c.weights.disc);
        c.weights.ambi_stage2 = cfg::get_num(w, "weights", "ambi_stage2", c.weights.ambi_stage2);
        c.weights.ambi_stage3 = cfg::get_num(w, "weights", "ambi_stage3", c.weights.ambi_stage3);
        c.weights.idc = cfg::get_num(w, "weights", "idc", c.weights.idc);
        c.weights.cyc = cfg::get_num(w, "weights", "cyc", c.weights.cyc);
        c.weights.rec = cfg::get_num(w, "weights", "rec", c.weights.rec);
        c.weights.tsr = cfg::get_num(w, "weights", "tsr", c.weights.tsr);
        c.weights.id = cfg::get_num(w, "weights", "id", c.weights.id);
        c.weights.cmtl = cfg::get_num(w, "weights", "cmtl", c.weights.cmtl);
        c.weights.aux = cfg::get_num(w, "weights", "aux", c.weights.aux);
        c.weights.margin = cfg::get_num(w, "weights", "margin", c.weights.margin);
    }

    if (j.contains("trainer")) {
        const auto& t = j.at("trainer");
        cfg::require_object(t, "trainer");
        cfg::check_keys(t, "trainer",
                        {"stage_epochs", "stage_lrs", "steps_per_epoch", "snapshot_draws",
                         "snapshots"});
        const std::array<int, 3> def_epochs = {c.trainer.stages[0].epochs,
                                               c.trainer.stages[1].epochs,
                                               c.trainer.stages[2].epochs};
        const std::array<double, 3> def_lrs = {c.trainer.stages[0].lr, c.trainer.stages[1].lr,
                                               c.trainer.stages[2].lr};
        const auto epochs =
            cfg::get_array<int, 3>(t, "trainer", "stage_epochs", def_epochs, true);
        const auto lrs = cfg::get_array<double, 3>(t, "trainer", "stage_lrs", def_lrs, false);
        for (int s = 0; s < 3; ++s) {
            c.trainer.stages[static_cast<std::size_t>(s)].epochs =
                epochs[static_cast<std::size_t>(s)];
            c.trainer.stages[static_cast<std::size_t>(s)].lr = lrs[static_cast<std::size_t>(s)];
        }
        c.trainer.steps_per_epoch =
            cfg::get_int(t, "trainer", "steps_per_epoch", c.trainer.steps_per_epoch);
        c.trainer.snapshot_draws =
            cfg::get_int(t, "trainer", "snapshot_draws", c.trainer.snapshot_draws);
        c.trainer.snapshots = cfg::get_bool(t, "trainer", "snapshots", c.trainer.snapshots);
    }

    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        cfg::require_object(e, "eval");
        cfg::check_keys(e, "eval", {"draws", "seed"});
        c.eval.draws = cfg::get_int(e, "eval", "draws", c.eval.draws);
        c.eval.seed = cfg::get_u64(e, "eval", "seed", c.eval.seed);
    }

    c.validate();
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open config: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw config_error(std::string("config parse error: ") + e.what());
    }
    return parse_run_config(j);
}

// fully expanded echo of the configuration actually in effect
inline nlohmann::json effective_config_json(const RunConfig& c) {
    nlohmann::json j;
    j["seed"] = c.seed;
    j["out_dir"] = c.out_dir;
    j["data"] = {{"n_identities", c.data.n_identities},
                 {"pairs_per_identity", c.data.samples_per_identity_per_modality},
                 {"identity_dim", c.data.identity_dim},
                 {"nuisance_dim", c.data.nuisance_dim},
                 {"raw_dim", c.data.raw_dim},
                 {"nuisance_scale", c.data.nuisance_scale},
                 {"noise_std", c.data.noise_std},
                 {"seed", c.data.seed}};
    j["model"] = {{"feature_dim", c.model.feature_dim},
                  {"extractor_hidden", c.model.extractor_hidden},
                  {"trunk_hidden", c.model.trunk_hidden},
                  {"pool_group", c.model.pool_group},
                  {"d_dim", c.model.d_dim},
                  {"a_dim", c.model.a_dim},
                  {"leaky_slope", c.model.leaky_slope}};
    j["weights"] = {{"gmm", c.weights.gmm},
                    {"lmc", c.weights.lmc},
                    {"disc", c.weights.disc},
                    {"ambi_stage2", c.weights.ambi_stage2},
                    {"ambi_stage3", c.weights.ambi_stage3},
                    {"idc", c.weights.idc},
                    {"cyc", c.weights.cyc},
                    {"rec", c.weights.rec},
                    {"tsr", c.weights.tsr},
                    {"id", c.weights.id},
                    {"cmtl", c.weights.cmtl},
                    {"aux", c.weights.aux},
                    {"margin", c.weights.margin}};
    j["trainer"] = {
        {"stage_epochs",
         {c.trainer.stages[0].epochs, c.trainer.stages[1].epochs, c.trainer.stages[2].epochs}},
        {"stage_lrs",
         {c.trainer.stages[0].lr, c.trainer.stages[1].lr, c.trainer.stages[2].lr}},
        {"steps_per_epoch", c.trainer.steps_per_epoch},
        {"snapshot_draws", c.trainer.snapshot_draws},
        {"snapshots", c.trainer.snapshots}};
    j["eval"] = {{"draws", c.eval.draws}, {"seed", c.eval.seed}};
    return j;
}

// FNV-1a over the canonical (sorted-key) dump of the effective config; the
// output directory is location, not semantics, so it stays out of the hash
inline std::uint64_t config_hash(const RunConfig& c) {
    RunConfig canon = c;
    canon.out_dir.clear();
    const std::string s = effective_config_json(canon).dump();
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

// --ablate gmm,lmc,rec,idc,cyc,ambi : zero the chosen loss weights
inline void apply_ablations(LossWeights& w, const std::string& list) {
    std::stringstream ss(list);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        if (tok == "gmm")
            w.gmm = 0.0;
        else if (tok == "lmc")
            w.lmc = 0.0;
        else if (tok == "rec")
            w.rec = 0.0;
        else if (tok == "idc")
            w.idc = 0.0;
        else if (tok == "cyc")
            w.cyc = 0.0;
        else if (tok == "ambi") {
            w.ambi_stage2 = 0.0;
            w.ambi_stage3 = 0.0;
        } else
            throw config_error("unknown ablation '" + tok + "'");
    }
}

// --stage-epochs a,b,c
inline std::array<int, 3> parse_stage_epochs(const std::string& s) {
    std::array<int, 3> out{};
    std::stringstream ss(s);
    std::string tok;
    int i = 0;
    while (std::getline(ss, tok, ',')) {
        if (i >= 3) throw config_error("--stage-epochs takes exactly three values");
        try {
            std::size_t pos = 0;
            out[static_cast<std::size_t>(i)] = std::stoi(tok, &pos);
            if (pos != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
            throw config_error("--stage-epochs: bad value '" + tok + "'");
        }
        ++i;
    }
    if (i != 3) throw config_error("--stage-epochs takes exactly three values");
    return out;
}

} // namespace varident
