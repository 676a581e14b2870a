// Command-line front end: synthetic data, search, retraining, evaluation,
// decoding, complexity accounting and reports.

#include <cstdio>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "nasdet/checkpoint.hpp"
#include "nasdet/errors.hpp"
#include "nasdet/genotype_io.hpp"
#include "nasdet/image_io.hpp"
#include "nasdet/rng.hpp"
#include "nasdet/run.hpp"
#include "nasdet/synth.hpp"

using namespace nasdet;

namespace {

struct Common {
    std::string config;
    std::uint64_t seed = 0;
    std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool out_required = true) {
    cmd->add_option("--config", c.config, "settings file (see --schema)")->check(CLI::ExistingFile);
    cmd->add_option("--seed", c.seed, "root seed");
    auto* out = cmd->add_option("--out", c.out, "output directory");
    if (out_required) out->required();
}

RunConfig load_config(const std::string& path) {
    if (path.empty()) return RunConfig{};
    return parse_config(read_file(path));
}

LoadOptions load_options(const NetworkConfig& n) {
    return {n.in_channels, n.height, n.width};
}

void say(const std::string& line) { std::fprintf(stderr, "%s\n", line.c_str()); }

std::string fixed(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

void print_complexity(const Complexity& cx) {
    std::printf("params %lld\nflops %lld\n", static_cast<long long>(cx.params), static_cast<long long>(cx.flops));
    for (const auto& [kind, flops] : cx.flops_by_kind) std::printf("  %-12s %lld\n", kind.c_str(), static_cast<long long>(flops));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Differentiable architecture search for defect segmentation"};
    app.require_subcommand(0, 1);
    bool schema = false;
    app.add_flag("--schema", schema, "print every configuration key with its default and exit");

    Common synth_c;
    int synth_train = -1, synth_test = -1;
    auto* synth = app.add_subcommand("synth-data", "generate a synthetic defect dataset");
    add_common(synth, synth_c);
    synth->add_option("--train", synth_train, "training images (overrides synth_train)");
    synth->add_option("--test", synth_test, "test images (overrides synth_test)");

    Common search_c;
    std::string search_data;
    bool search_resume = false;
    auto* search = app.add_subcommand("search", "run the staged architecture search");
    add_common(search, search_c);
    search->add_option("--data", search_data, "dataset root with train/ and test/")->required();
    search->add_flag("--resume", search_resume, "continue from the checkpoint in --out");

    Common retrain_c;
    std::string retrain_data, retrain_genotype;
    int retrain_epochs = -1, retrain_every = 1;
    bool retrain_resume = false;
    auto* retrain_cmd = app.add_subcommand("retrain", "train the decoded network from scratch");
    add_common(retrain_cmd, retrain_c);
    retrain_cmd->add_option("--data", retrain_data, "dataset root")->required();
    retrain_cmd->add_option("--genotype", retrain_genotype, "genotype file")->required()->check(CLI::ExistingFile);
    retrain_cmd->add_option("--epochs", retrain_epochs, "override retrain_epochs");
    retrain_cmd->add_option("--checkpoint-every", retrain_every, "epochs between checkpoints");
    retrain_cmd->add_flag("--resume", retrain_resume, "continue from the checkpoint in --out");

    Common eval_c;
    std::string eval_data, eval_model, eval_split = "test";
    bool eval_predictions = false;
    auto* eval = app.add_subcommand("eval", "score a trained model");
    add_common(eval, eval_c);
    eval->add_option("--data", eval_data, "dataset root")->required();
    eval->add_option("--model", eval_model, "model checkpoint")->required()->check(CLI::ExistingFile);
    eval->add_option("--split", eval_split, "dataset split to score");
    eval->add_flag("--predictions", eval_predictions, "write one prediction PNG per image");

    Common decode_c;
    std::string decode_ckpt, genotype_file;
    auto* decode = app.add_subcommand("decode", "derive and render a genotype");
    add_common(decode, decode_c);
    auto* from_ckpt = decode->add_option("--checkpoint", decode_ckpt, "finished search checkpoint");
    auto* from_geno = decode->add_option("--genotype", genotype_file, "genotype file to re-render");
    from_ckpt->excludes(from_geno)->check(CLI::ExistingFile);
    from_geno->check(CLI::ExistingFile);

    Common cx_c;
    std::string cx_genotype;
    bool cx_supernet = false;
    auto* cx = app.add_subcommand("complexity", "count parameters and FLOPs");
    add_common(cx, cx_c, false);
    auto* cx_g = cx->add_option("--genotype", cx_genotype, "discrete network of this genotype")->check(CLI::ExistingFile);
    cx->add_flag("--supernet", cx_supernet, "the full supernet")->excludes(cx_g);

    Common report_c;
    auto* report = app.add_subcommand("report", "summarize a run directory");
    add_common(report, report_c);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (schema) {
            std::cout << config_schema();
            return 0;
        }
        if (app.get_subcommands().empty()) {
            std::cout << app.help();
            return 2;
        }

        if (synth->parsed()) {
            RunConfig cfg = load_config(synth_c.config);
            if (synth_train >= 0) cfg.synth.n_train = synth_train;
            if (synth_test >= 0) cfg.synth.n_test = synth_test;
            cfg.synth.seed = derive_seed(synth_c.seed, "data");
            cfg.synth.validate();
            generate_synthetic_dataset(cfg.synth, synth_c.out);
            say("wrote " + std::to_string(cfg.synth.n_train) + " training and " + std::to_string(cfg.synth.n_test) +
                " test images to " + synth_c.out);
        } else if (search->parsed()) {
            const RunConfig cfg = load_config(search_c.config);
            const Dataset train = load_dataset(search_data, "train", load_options(cfg.search.network));
            const auto result = search_to_directory(cfg, train, search_c.seed, search_c.out, search_resume,
                                                    [](const EpochRecord& r) {
                                                        say("stage " + std::to_string(r.stage) + " epoch " +
                                                            std::to_string(r.epoch) + " " + r.split + " loss " +
                                                            fixed(r.loss_total) + " alive " +
                                                            std::to_string(r.alive_max));
                                                    });
            if (result.resumed) say("resumed from " + (fs::path(search_c.out) / run_files::kSearchCheckpoint).string());
            std::cout << render_genotype(result.genotype);
        } else if (retrain_cmd->parsed()) {
            RunConfig cfg = load_config(retrain_c.config);
            if (retrain_epochs >= 0) cfg.retrain.epochs = retrain_epochs;
            cfg.validate();
            const Genotype g = parse_genotype(read_file(retrain_genotype));
            const Dataset train = load_dataset(retrain_data, "train", load_options(cfg.search.network));
            const auto result = retrain_to_directory(cfg, g, train, retrain_c.seed, retrain_c.out, retrain_resume,
                                                     retrain_every, [](const TrainRecord& r) {
                                                         say("epoch " + std::to_string(r.epoch) + " loss " +
                                                             fixed(r.loss_total));
                                                     });
            say("trained " + std::to_string(result.state.epoch) + " epochs; model in " +
                (fs::path(retrain_c.out) / run_files::kModel).string());
        } else if (eval->parsed()) {
            ModelCheckpoint model = load_model_checkpoint(eval_model);
            const Dataset test = load_dataset(eval_data, eval_split, load_options(model.network));
            const Evaluation ev =
                evaluate_to_directory(*model.net, test, model.retrain.threshold, eval_c.out, eval_predictions);
            std::printf("IoU %s\nF1 %s\nPA %s\nparams %lld\nflops %lld\nimages %lld\n", fixed(ev.metrics.iou).c_str(),
                        fixed(ev.metrics.f1).c_str(), fixed(ev.metrics.pa).c_str(),
                        static_cast<long long>(ev.metrics.params), static_cast<long long>(ev.metrics.flops),
                        static_cast<long long>(ev.metrics.images));
        } else if (decode->parsed()) {
            Genotype g;
            if (!decode_ckpt.empty()) {
                const SearchSummary s = read_search_summary(decode_ckpt);
                g = decode_genotype(s.arch);
                g.seed = s.seed;
                g.schedule = s.cfg.effective_schedule();
                g.config_digest = network_digest(s.cfg.network);
            } else if (!genotype_file.empty()) {
                g = parse_genotype(read_file(genotype_file));
            } else {
                throw ConfigError("decode needs --checkpoint or --genotype");
            }
            const fs::path out = decode_c.out;
            write_file_atomic(out / run_files::kGenotype, serialize_genotype(g));
            write_file_atomic(out / run_files::kGenotypeDot, genotype_dot(g));
            write_file_atomic(out / run_files::kGenotypeText, render_genotype(g));
            std::cout << render_genotype(g);
        } else if (cx->parsed()) {
            const RunConfig cfg = load_config(cx_c.config);
            const NetworkConfig& n = cfg.search.network;
            const Shape input{1, n.in_channels, n.height, n.width};
            if (!cx_genotype.empty()) {
                const Genotype g = parse_genotype(read_file(cx_genotype));
                auto net = build_discrete_network(g, n, cx_c.seed);
                print_complexity(count_params_flops(*net, input));
            } else {
                if (!cx_supernet) say("no --genotype given; counting the supernet");
                auto net = build_supernet(n, cx_c.seed);
                print_complexity(count_params_flops(*net, input));
            }
        } else if (report->parsed()) {
            report_directory(report_c.out);
            std::cout << read_file(fs::path(report_c.out) / run_files::kReport);
        }
    } catch (const Error& e) {
        std::fprintf(stderr, "nasdet: %s\n", e.what());
        return 1;
    }
    return 0;
}
