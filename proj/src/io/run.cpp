#include "nasdet/run.hpp"

#include "nasdet/errors.hpp"
#include "nasdet/genotype_io.hpp"
#include "nasdet/image_io.hpp"
#include "nasdet/report.hpp"
#include "nasdet/rng.hpp"

namespace nasdet {

namespace {

void check_genotype_digest(const Genotype& g, const NetworkConfig& network) {
    if (g.config_digest.empty()) return;
    const std::string expected = network_digest(network);
    if (g.config_digest != expected) {
        throw ConfigError("genotype was searched with network settings " + g.config_digest +
                          " but the configuration gives " + expected);
    }
}

}  // namespace

SearchRunResult search_to_directory(const RunConfig& cfg, const Dataset& train, std::uint64_t seed,
                                    const fs::path& out, bool resume,
                                    const std::function<void(const EpochRecord&)>& progress) {
    const fs::path ckpt = out / run_files::kSearchCheckpoint;
    const std::uint64_t data_digest = dataset_digest(train);
    SearchRunResult result;
    SearchState state;
    if (resume && fs::exists(ckpt)) {
        SearchCheckpoint loaded = load_search_checkpoint(ckpt, train);
        if (loaded.digest != search_digest(cfg.search)) {
            throw StateError(ckpt.string() + " was written with different search settings (digest " + loaded.digest +
                             ", configuration gives " + search_digest(cfg.search) + ")");
        }
        if (loaded.state.seed != seed) {
            throw StateError(ckpt.string() + " was written with seed " + std::to_string(loaded.state.seed));
        }
        state = std::move(loaded.state);
        result.log = std::move(loaded.log);
        result.resumed = true;
    } else {
        state = init_search(cfg.search, train, seed);
    }
    write_file_atomic(out / run_files::kConfig, format_config(cfg));

    SearchHooks hooks;
    hooks.on_epoch = [&](const EpochRecord& r) {
        result.log.push_back(r);
        if (progress) progress(r);
    };
    hooks.on_checkpoint = [&](const SearchState& s) {
        save_search_checkpoint(ckpt, s, result.log, data_digest);
        write_file_atomic(out / run_files::kSearchLog, search_log_jsonl(result.log));
    };
    result.genotype = run_search(cfg.search, train, seed, hooks, &state);
    result.genotype.config_digest = network_digest(cfg.search.network);
    write_file_atomic(out / run_files::kGenotype, serialize_genotype(result.genotype));
    write_file_atomic(out / run_files::kGenotypeDot, genotype_dot(result.genotype));
    write_file_atomic(out / run_files::kGenotypeText, render_genotype(result.genotype));
    write_file_atomic(out / run_files::kSearchLog, search_log_jsonl(result.log));
    return result;
}

RetrainRunResult retrain_to_directory(const RunConfig& cfg, const Genotype& genotype, const Dataset& train,
                                      std::uint64_t seed, const fs::path& out, bool resume, int checkpoint_every,
                                      const std::function<void(const TrainRecord&)>& progress) {
    if (checkpoint_every < 1) throw ConfigError("checkpoint interval must be at least 1 epoch");
    check_genotype_digest(genotype, cfg.search.network);
    const fs::path ckpt = out / run_files::kModel;
    const std::uint64_t data_digest = dataset_digest(train);
    RetrainRunResult result;
    if (resume && fs::exists(ckpt)) {
        ModelCheckpoint loaded = load_model_checkpoint(ckpt);
        if (network_digest(loaded.network) != network_digest(cfg.search.network) || !(loaded.genotype == genotype)) {
            throw StateError(ckpt.string() + " holds a different network");
        }
        if (loaded.data_digest != data_digest) throw StateError(ckpt.string() + " was trained on a different set");
        if (loaded.seed != derive_seed(seed, "retrain.init")) {
            throw StateError(ckpt.string() + " was written with a different seed");
        }
        result.net = std::move(loaded.net);
        result.state = std::move(loaded.state);
        result.resumed = true;
    } else {
        result.net = build_discrete_network(genotype, cfg.search.network, derive_seed(seed, "retrain.init"));
        result.state = init_retrain(cfg.retrain);
    }
    write_file_atomic(out / run_files::kConfig, format_config(cfg));

    const auto save = [&](const RetrainState& s) {
        save_model_checkpoint(ckpt, *result.net, cfg.retrain, derive_seed(seed, "retrain.init"), s, data_digest);
        write_file_atomic(out / run_files::kRetrainLog, retrain_log_jsonl(s.history));
    };
    RetrainHooks hooks;
    hooks.on_epoch = progress;
    hooks.on_checkpoint = [&](const RetrainState& s) {
        if (s.epoch % checkpoint_every == 0) save(s);
    };
    retrain(*result.net, train, cfg.retrain, seed, result.state, hooks);
    save(result.state);
    return result;
}

Evaluation evaluate_to_directory(Network& net, const Dataset& test, double threshold, const fs::path& out,
                                 bool write_predictions) {
    Evaluation ev = evaluate(net, test, threshold, 8, write_predictions);
    const Complexity cx = count_params_flops(net, test.front().image.shape());
    write_file_atomic(out / run_files::kMetrics, metrics_json(ev.metrics, &cx));
    if (write_predictions) {
        for (std::size_t i = 0; i < test.size(); ++i) {
            const fs::path dir = out / run_files::kPredictions;
            write_gray_png(dir / (test[i].id + "_prob.png"), ev.predictions[i]);
            write_mask_png(dir / (test[i].id + ".png"), ev.predictions[i], threshold);
        }
    }
    return ev;
}

void report_directory(const fs::path& run) {
    std::vector<EpochRecord> search;
    std::vector<TrainRecord> retrain;
    MetricsRecord metrics;
    bool have_metrics = false;
    if (fs::exists(run / run_files::kSearchLog)) search = parse_search_log(read_file(run / run_files::kSearchLog));
    if (fs::exists(run / run_files::kRetrainLog)) retrain = parse_retrain_log(read_file(run / run_files::kRetrainLog));
    if (fs::exists(run / run_files::kMetrics)) {
        metrics = parse_metrics(read_file(run / run_files::kMetrics));
        have_metrics = true;
    }
    if (search.empty() && retrain.empty() && !have_metrics) {
        throw IoError(run.string() + " holds no logs or metrics to report on");
    }
    write_file_atomic(run / run_files::kReport, report_json(search, retrain, have_metrics ? &metrics : nullptr));
    write_loss_plot(run / run_files::kLossPlot, search, retrain, have_metrics ? &metrics : nullptr);
}

}  // namespace nasdet
