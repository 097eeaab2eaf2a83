#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>

#include "poq/checkpoint.hpp"
#include "poq/experiment.hpp"
#include "poq/report.hpp"

namespace fs = std::filesystem;

namespace {

struct CliState {
    poq::ExperimentConfig cfg;
    std::string query_mode = "primal";
    std::string loss = "aligned";
    std::string mixup = "none";
    std::vector<std::string> bias_pairs;
    std::uint64_t data_seed = 1;
    std::string out_dir = ".";
    bool residual_cross = true;
};

void parse_bias_pairs(const std::vector<std::string>& raw, poq::DatasetSpec& spec) {
    for (const auto& s : raw) {
        auto colon = s.find(':');
        if (colon == std::string::npos)
            throw poq::ConfigError("bias pair '" + s + "' must look like A:B");
        int a = std::stoi(s.substr(0, colon));
        int b = std::stoi(s.substr(colon + 1));
        spec.bias_pairs.emplace_back(a, b);
    }
}

void add_model_options(CLI::App* cmd, CliState& st) {
    auto& m = st.cfg.model;
    cmd->add_option("--enc-layers", m.num_encoder_layers, "Encoder layer count");
    cmd->add_option("--dec-layers", m.num_decoder_layers, "Decoder layer count");
    cmd->add_option("--dim", m.model_dim, "Transformer model dimension D");
    cmd->add_option("--queries", m.num_queries, "Object query count O");
    cmd->add_option("--classes", m.num_classes, "Class count");
    cmd->add_option("--heads", m.num_heads, "Attention head count");
    cmd->add_option("--query-mode", st.query_mode,
                    "primal | additive-shared | additive-per-layer");
    cmd->add_option("--residual-cross", st.residual_cross,
                    "Keep the residual connection around cross-attention");
    cmd->add_option("--image-size", m.image_size, "Square image size in pixels");
    cmd->add_option("--patch-size", m.patch_size, "Backbone patch size");
    cmd->add_option("--channels", m.channels, "Backbone output channels");
}

void add_data_options(CLI::App* cmd, CliState& st) {
    auto& d = st.cfg.data;
    cmd->add_option("--data", st.cfg.data_dir, "Directory with train/val/test .poqd files");
    cmd->add_option("--max-labels", d.max_labels, "Maximum labels per generated image");
    cmd->add_option("--train-size", d.train_size, "Generated train split size");
    cmd->add_option("--val-size", d.val_size, "Generated val split size");
    cmd->add_option("--test-size", d.test_size, "Generated test split size");
    cmd->add_option("--data-seed", st.data_seed, "Generator seed");
    cmd->add_option("--bias-strength", d.bias_strength, "Co-occurrence bias strength in [0,1]");
    cmd->add_option("--bias-pair", st.bias_pairs, "Co-occurring class pair A:B (repeatable)");
}

void add_train_options(CLI::App* cmd, CliState& st) {
    cmd->add_option("--epochs", st.cfg.epochs, "Training epochs");
    cmd->add_option("--batch-size", st.cfg.batch_size, "Minibatch size");
    cmd->add_option("--loss", st.loss, "aligned | exhaustive");
    cmd->add_option("--mixup", st.mixup, "none | soft | hard | restricted-hard");
    cmd->add_option("--alpha", st.cfg.mixup.alpha, "Beta parameter for soft mixup");
    cmd->add_option("--backbone-lr", st.cfg.optim.backbone_lr, "SGD learning rate (backbone)");
    cmd->add_option("--transformer-lr", st.cfg.optim.transformer_lr,
                    "Adam learning rate (transformer)");
    cmd->add_option("--momentum", st.cfg.optim.backbone_momentum, "SGD momentum");
    cmd->add_option("--threshold", st.cfg.decode_threshold,
                    "Score threshold for decoding (0 = argmax rule)");
    cmd->add_option("--window", st.cfg.convergence_window, "Convergence plateau window");
    cmd->add_option("--delta", st.cfg.convergence_delta, "Convergence plateau tolerance");
}

void finalize(CLI::App* cmd, CliState& st) {
    st.cfg.model.query_mode = poq::parse_query_mode(st.query_mode);
    st.cfg.model.residual_cross_enabled = st.residual_cross;
    st.cfg.loss = poq::parse_loss_kind(st.loss);
    st.cfg.mixup.mode = poq::parse_mixup_mode(st.mixup);
    st.cfg.data.seed = st.data_seed;
    st.cfg.data.num_classes = st.cfg.model.num_classes;
    st.cfg.data.image_size = st.cfg.model.image_size;
    parse_bias_pairs(st.bias_pairs, st.cfg.data);
    st.cfg.out_dir = st.out_dir;
    auto* lr_opt = cmd->get_option_no_throw("--backbone-lr");
    if (lr_opt && lr_opt->count() > 0) st.cfg.optim.backbone_lr_explicit = true;
    fs::create_directories(st.out_dir);
}

poq::Model<float> load_model(const CliState& st, const std::string& checkpoint) {
    poq::Model<float> model(st.cfg.model, st.cfg.seed);
    poq::load_checkpoint(model, checkpoint);
    return model;
}

const std::vector<poq::Sample>& pick_split(const poq::Dataset& data, const std::string& split) {
    if (split == "train") return data.train;
    if (split == "val") return data.val;
    if (split == "test") return data.test;
    throw poq::ConfigError("unknown split '" + split + "' (valid splits: train, val, test)");
}

void print_report(const std::string& tag, const poq::MetricReport& r) {
    std::printf("%s  C-P %.4f  C-R %.4f  C-F1 %.4f  (geometric C-F1 %.4f)\n", tag.c_str(),
                r.class_p, r.class_r, r.class_f1, r.class_f1_geometric);
    std::printf("%s  O-P %.4f  O-R %.4f  O-F1 %.4f  mAP %.4f\n", tag.c_str(), r.overall_p,
                r.overall_r, r.overall_f1, r.map);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-label set-prediction transformer with primal object queries"};
    app.require_subcommand(1);

    CliState st;
    std::string checkpoint, split = "test";
    std::vector<std::string> modes = {"primal", "additive-shared"};
    std::vector<int> depths = {1, 2, 3};
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    int workers = 0;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--seed", st.cfg.seed, "Run seed");
        cmd->add_option("--out", st.out_dir, "Output directory");
        cmd->set_config("--config", "", "Flat key=value config file; flags override it");
        return cmd;
    };

    auto* gen = add_common(app.add_subcommand("generate-data", "Write synthetic dataset splits"));
    add_data_options(gen, st);
    gen->add_option("--classes", st.cfg.model.num_classes, "Class count");
    gen->add_option("--image-size", st.cfg.model.image_size, "Square image size in pixels");

    auto* train = add_common(app.add_subcommand("train", "Train a model and log metrics"));
    add_model_options(train, st);
    add_data_options(train, st);
    add_train_options(train, st);

    bool per_class = false;
    auto* eval = add_common(app.add_subcommand("eval", "Evaluate a checkpoint on a split"));
    add_model_options(eval, st);
    add_data_options(eval, st);
    add_train_options(eval, st);
    eval->add_option("--checkpoint", checkpoint, "Checkpoint path")->required();
    eval->add_option("--split", split, "train | val | test");
    eval->add_flag("--per-class", per_class, "Also print the per-class table");

    auto* cmp = add_common(
        app.add_subcommand("compare-queries", "Train query-mode arms and compare convergence"));
    add_model_options(cmp, st);
    add_data_options(cmp, st);
    add_train_options(cmp, st);
    cmp->add_option("--modes", modes, "Query modes to race");
    cmp->add_option("--depths", depths, "Decoder layer counts");
    cmp->add_option("--seeds", seeds, "Seeds shared by every arm");
    cmp->add_option("--workers", workers, "Parallel arm workers (0 = all cores)");

    auto* spec = add_common(
        app.add_subcommand("specialization", "Per-query distribution of predicted classes"));
    add_model_options(spec, st);
    add_data_options(spec, st);
    spec->add_option("--checkpoint", checkpoint, "Checkpoint path")->required();
    spec->add_option("--split", split, "train | val | test");

    auto* rep = add_common(app.add_subcommand("report", "Re-render curves.csv into SVG + summary"));
    rep->add_option("--window", st.cfg.convergence_window, "Convergence plateau window");
    rep->add_option("--delta", st.cfg.convergence_delta, "Convergence plateau tolerance");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) {
            finalize(gen, st);
            poq::DatasetSpec dspec = st.cfg.data;
            auto data = poq::generate(dspec);
            for (auto [s, samples] :
                 {std::pair{poq::Split::Train, &data.train}, {poq::Split::Val, &data.val},
                  {poq::Split::Test, &data.test}}) {
                fs::path path = fs::path(st.out_dir) / (std::string(poq::split_name(s)) + ".poqd");
                poq::save_dataset(path.string(), dspec, *samples);
                std::printf("wrote %s (%zu samples)\n", path.string().c_str(), samples->size());
            }
        } else if (train->parsed()) {
            finalize(train, st);
            auto data = poq::obtain_dataset(st.cfg);
            auto out = poq::train_run(st.cfg, data, &std::cout);
            fs::path mpath = fs::path(st.out_dir) / "metrics.csv";
            poq::write_metrics_csv(mpath.string(), out.log);
            fs::path cpath = fs::path(st.out_dir) / "checkpoint.poqt";
            poq::save_checkpoint(out.model, cpath.string());
            std::printf("wrote %s and %s\n", mpath.string().c_str(), cpath.string().c_str());
            if (out.log.has_test) {
                std::printf("best epoch %d (val C-F1 %.4f)\n", out.log.best_epoch,
                            out.log.best_val_cf1);
                print_report("test", out.log.test_metrics);
            }
        } else if (eval->parsed()) {
            finalize(eval, st);
            auto data = poq::obtain_dataset(st.cfg);
            auto model = load_model(st, checkpoint);
            auto report = poq::evaluate_model(model, pick_split(data, split),
                                              st.cfg.decode_threshold);
            print_report(split, report);
            if (per_class)
                for (std::size_t k = 0; k < report.per_class.size(); ++k) {
                    const auto& s = report.per_class[k];
                    std::printf("class %2zu  P %.4f  R %.4f  tp %ld fp %ld fn %ld\n", k,
                                s.precision, s.recall, s.tp, s.fp, s.fn);
                }
        } else if (cmp->parsed()) {
            finalize(cmp, st);
            std::vector<poq::QueryMode> qmodes;
            for (const auto& m : modes) qmodes.push_back(poq::parse_query_mode(m));
            auto data = poq::obtain_dataset(st.cfg);
            auto report =
                poq::compare_queries(st.cfg, qmodes, depths, seeds, data, workers, &std::cout);
            fs::path ccsv = fs::path(st.out_dir) / "curves.csv";
            fs::path csvg = fs::path(st.out_dir) / "curves.svg";
            poq::write_curves_csv(ccsv.string(), report);
            poq::write_curves_svg(csvg.string(), report);
            std::printf("wrote %s and %s\n", ccsv.string().c_str(), csvg.string().c_str());
            std::fputs(poq::convergence_summary_text(report).c_str(), stdout);
        } else if (spec->parsed()) {
            finalize(spec, st);
            auto data = poq::obtain_dataset(st.cfg);
            auto model = load_model(st, checkpoint);
            auto report = poq::query_specialization(model, pick_split(data, split));
            fs::path path = fs::path(st.out_dir) / "specialization.csv";
            poq::write_specialization_csv(path.string(), report);
            std::printf("wrote %s\n", path.string().c_str());
        } else if (rep->parsed()) {
            fs::path dir(st.out_dir);
            auto report = poq::read_curves_csv((dir / "curves.csv").string(),
                                               st.cfg.convergence_window, st.cfg.convergence_delta);
            poq::write_curves_svg((dir / "curves.svg").string(), report);
            std::printf("wrote %s\n", (dir / "curves.svg").string().c_str());
            std::fputs(poq::convergence_summary_text(report).c_str(), stdout);
        }
    } catch (const poq::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 0;
}
