// varident command-line tool: dataset generation, three-stage training,
// evaluation, and the numerical verification suite. Exit codes: 0 success,
// 1 configuration error, 2 numerical failure, 3 I/O error.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include <varident/config.hpp>
#include <varident/data.hpp>
#include <varident/eval.hpp>
#include <varident/model.hpp>
#include <varident/report.hpp>
#include <varident/trainer.hpp>
#include <varident/verify.hpp>

namespace fs = std::filesystem;
using namespace varident;

namespace {

// run directories are exclusive while a process works in them
class RunLock {
public:
    explicit RunLock(const fs::path& dir) : path_(dir / ".lock") {
        if (fs::exists(path_))
            throw io_error("run directory is locked (stale lock? remove " + path_.string() +
                           ")");
        std::ofstream out(path_);
        if (!out) throw io_error("cannot create lock file " + path_.string());
        out << "varident\n";
        owned_ = true;
    }
    ~RunLock() {
        if (owned_) {
            std::error_code ec;
            fs::remove(path_, ec);
        }
    }
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    fs::path path_;
    bool owned_ = false;
};

int env_threads() {
    const char* v = std::getenv("VARIDENT_THREADS");
    if (v == nullptr || *v == '\0') return 1;
    char* end = nullptr;
    const long n = std::strtol(v, &end, 10);
    if (end == nullptr || *end != '\0' || n < 1)
        throw config_error(std::string("VARIDENT_THREADS must be a positive integer, got '") +
                           v + "'");
    return static_cast<int>(n);
}

RunConfig load_config_or_defaults(const std::string& path) {
    if (path.empty()) return RunConfig{};
    return load_run_config(path);
}

void write_json_atomic(const fs::path& path, const nlohmann::json& j) {
    write_text_atomic(path, j.dump(2) + "\n");
}

int cmd_gendata(const std::string& config_path, const std::string& out,
                bool seed_set, std::uint64_t seed) {
    RunConfig cfg = load_config_or_defaults(config_path);
    if (seed_set) cfg.data.seed = seed;
    cfg.validate();

    const Dataset ds = generate(cfg.data, cfg.data.seed);
    const fs::path out_path(out);
    if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
    save_dataset(ds, out_path);
    write_text_atomic(out_path.string() + ".csv", dataset_csv(ds));
    write_json_atomic(out_path.string() + ".provenance.json",
                      provenance_json(cfg, out_path.string()));
    std::printf("wrote %zu samples (%d identities, %d held out) to %s\n", ds.samples.size(),
                ds.config.n_identities, ds.config.n_identities - ds.n_train_identities,
                out_path.string().c_str());
    return 0;
}

void write_eval_artifacts(const fs::path& dir, DgVaeModel& model, const Dataset& ds,
                          const RunConfig& cfg) {
    const FullEval fe = full_eval(model, ds, cfg.eval);
    write_json_atomic(dir / "metrics.json", metrics_json(fe, config_hash(cfg), cfg.seed));
    write_text_atomic(dir / "histogram.csv", histogram_csv(fe.distance));
    write_text_atomic(dir / "embeddings.csv", embeddings_csv(model, ds));
    std::printf("rank1 %.4f  rank10 %.4f  mAP %.4f  delta %.4f  probe idi %.4f iai %.4f%s\n",
                fe.retrieval.rank1, fe.retrieval.rank10, fe.retrieval.map, fe.distance.delta,
                fe.probe.idi_accuracy, fe.probe.iai_accuracy,
                fe.collapse.flagged ? "  [collapse flagged]" : "");
}

int cmd_train(const std::string& config_path, const std::string& data_path,
              const std::string& out, bool seed_set, std::uint64_t seed,
              const std::string& ablate, const std::string& stage_epochs, int max_epochs) {
    RunConfig cfg = load_config_or_defaults(config_path);
    if (seed_set) cfg.seed = seed;
    if (!out.empty()) cfg.out_dir = out;
    if (cfg.out_dir.empty()) throw config_error("train needs --out (or out_dir in the config)");
    if (!ablate.empty()) apply_ablations(cfg.weights, ablate);
    if (!stage_epochs.empty()) {
        const auto e = parse_stage_epochs(stage_epochs);
        for (int s = 0; s < 3; ++s)
            cfg.trainer.stages[static_cast<std::size_t>(s)].epochs =
                e[static_cast<std::size_t>(s)];
    }
    if (max_epochs < 0) throw config_error("--max-epochs must be nonnegative");

    const Dataset ds = load_dataset(data_path);
    cfg.data = ds.config; // the dataset file is the authority on data settings
    cfg.validate();

    const fs::path dir(cfg.out_dir);
    fs::create_directories(dir);
    RunLock lock(dir);

    const bool resume = fs::exists(dir / "latest.ckpt");
    write_json_atomic(dir / "effective_config.json", effective_config_json(cfg));
    write_json_atomic(dir / "provenance.json", provenance_json(cfg, data_path));

    const ModelConfig mc = cfg.model_for_data(ds.config.raw_dim, ds.n_train_identities);
    Trainer trainer(mc, ds, cfg.weights, cfg.trainer, cfg.seed);
    if (resume) {
        trainer.restore(dir / "latest.ckpt");
        std::printf("resuming from stage %d, epoch %d\n", trainer.stage(),
                    trainer.epoch_in_stage());
    }

    std::ofstream jsonl(dir / "metrics.jsonl",
                        resume ? std::ios::app : std::ios::trunc);
    if (!jsonl) throw io_error("cannot open metrics stream in " + cfg.out_dir);
    trainer.set_sink([&](const EpochRecord& r) {
        jsonl << epoch_record_json(r).dump() << "\n";
        jsonl.flush();
        char extra[40] = "";
        if (r.has_retrieval)
            std::snprintf(extra, sizeof(extra), "  mAP %.4f", r.retrieval.map);
        std::printf("stage %d epoch %3d  total %.5f%s\n", r.stage, r.epoch_in_stage,
                    r.mean.total, extra);
    });

    trainer.run(cfg.out_dir, max_epochs);

    if (trainer.finished()) {
        write_eval_artifacts(dir, trainer.model(), ds, cfg);
    } else {
        std::printf("stopped early at stage %d, epoch %d (resume by running again)\n",
                    trainer.stage(), trainer.epoch_in_stage());
    }
    return 0;
}

int cmd_eval(const std::string& config_path, const std::string& ckpt,
             const std::string& data_path, const std::string& out, bool seed_set,
             std::uint64_t seed) {
    RunConfig cfg = load_config_or_defaults(config_path);
    if (seed_set) cfg.eval.seed = seed;
    if (!out.empty()) cfg.out_dir = out;
    if (cfg.out_dir.empty()) throw config_error("eval needs --out (or out_dir in the config)");

    const Dataset ds = load_dataset(data_path);
    cfg.data = ds.config;
    cfg.validate();

    const fs::path dir(cfg.out_dir);
    fs::create_directories(dir);
    RunLock lock(dir);

    const ModelConfig mc = cfg.model_for_data(ds.config.raw_dim, ds.n_train_identities);
    Trainer trainer(mc, ds, cfg.weights, cfg.trainer, cfg.seed);
    trainer.restore(ckpt); // shape mismatch here means checkpoint/config mismatch

    write_json_atomic(dir / "effective_config.json", effective_config_json(cfg));
    write_json_atomic(dir / "provenance.json", provenance_json(cfg, data_path));
    write_eval_artifacts(dir, trainer.model(), ds, cfg);
    return 0;
}

int cmd_verify(bool seed_set, std::uint64_t seed, const std::string& out,
               double tamper_scale) {
    VerifyOptions opt;
    if (seed_set) opt.seed = seed;
    opt.threads = env_threads();
    opt.closed_form_scale = tamper_scale;

    const VerifyReport rep = run_verify(opt);
    for (const CheckResult& c : rep.checks)
        std::printf("%s %-22s residual=%-12.6g bound=%-12.6g %s\n", c.pass ? "PASS" : "FAIL",
                    c.name.c_str(), c.residual, c.bound, c.detail.c_str());
    if (!out.empty()) {
        fs::create_directories(out);
        write_json_atomic(fs::path(out) / "verify_report.json", verify_report_json(rep));
    }
    return rep.all_pass() ? 0 : 2;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"varident: variational identity-subspace model workbench"};
    app.require_subcommand(1);

    std::string config_path, data_path, out, ckpt, ablate, stage_epochs;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int max_epochs = 0;
    double tamper_scale = 1.0;

    auto add_seed = [&](CLI::App* sub) {
        sub->add_option("--seed", seed, "override the relevant seed")
            ->each([&](const std::string&) { seed_set = true; });
    };

    CLI::App* gendata = app.add_subcommand("gendata", "generate a synthetic dataset file");
    gendata->add_option("--config", config_path, "run configuration (JSON)");
    gendata->add_option("--out", out, "output dataset file")->required();
    add_seed(gendata);

    CLI::App* train = app.add_subcommand("train", "run the three-stage training schedule");
    train->add_option("--config", config_path, "run configuration (JSON)");
    train->add_option("--data", data_path, "dataset file from gendata")->required();
    train->add_option("--out", out, "run directory");
    train->add_option("--ablate", ablate,
                      "comma list of loss terms to zero: gmm,lmc,rec,idc,cyc,ambi");
    train->add_option("--stage-epochs", stage_epochs, "override stage epochs as a,b,c");
    train->add_option("--max-epochs", max_epochs,
                      "stop after this many epochs in this invocation (0 = run to the end); "
                      "rerun with the same --out to continue");
    add_seed(train);

    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    eval_cmd->add_option("--config", config_path, "run configuration (JSON)");
    eval_cmd->add_option("--checkpoint", ckpt, "checkpoint file")->required();
    eval_cmd->add_option("--data", data_path, "dataset file from gendata")->required();
    eval_cmd->add_option("--out", out, "output directory");
    add_seed(eval_cmd);

    CLI::App* verify = app.add_subcommand("verify", "run the numerical verification suite");
    verify->add_option("--out", out, "directory for verify_report.json");
    verify->add_option("--tamper-closed-form", tamper_scale,
                       "mutation hook: scale the closed-form KL (anything but 1 must fail)");
    add_seed(verify);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (gendata->parsed()) return cmd_gendata(config_path, out, seed_set, seed);
        if (train->parsed())
            return cmd_train(config_path, data_path, out, seed_set, seed, ablate, stage_epochs,
                             max_epochs);
        if (eval_cmd->parsed())
            return cmd_eval(config_path, ckpt, data_path, out, seed_set, seed);
        if (verify->parsed()) return cmd_verify(seed_set, seed, out, tamper_scale);
        std::fprintf(stderr, "no subcommand given\n");
        return 1;
    } catch (const numerical_error& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 2;
    } catch (const io_error& e) {
        std::fprintf(stderr, "i/o error: %s\n", e.what());
        return 3;
    } catch (const config_error& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
