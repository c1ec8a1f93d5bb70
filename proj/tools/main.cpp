#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rotpretext/config.hpp"
#include "rotpretext/eval.hpp"

namespace rp = rotpretext;
namespace fs = std::filesystem;

namespace {

struct CommonArgs {
    std::string config_file;
    std::vector<std::string> overrides;
};

rp::Config load_config(const CommonArgs& args, unsigned mask) {
    return rp::Config::load(args.config_file, args.overrides, mask);
}

void apply_threads(const rp::Config& c) {
    rp::set_num_threads(c.get_int("threads"));
}

rp::LabeledDataset load_split(const std::string& data_dir, const char* basename, rp::Split split) {
    return rp::load_dataset((fs::path(data_dir) / (std::string(basename) + ".idx")).string(),
                            split);
}

int cmd_gen_data(const CommonArgs& args) {
    const auto c = load_config(args, rp::kSubGenData);
    apply_threads(c);
    const std::string dir = rp::resolve_data_dir(c);
    rp::SynthSpec spec = rp::synth_spec_from(c);
    const auto train = rp::generate_synthetic_dataset(spec, dir, "train", rp::Split::kTrain);
    rp::SynthSpec test_spec = spec;
    test_spec.seed = rp::Rng(spec.seed).fork(0x7E57).seed();
    test_spec.clips_per_class = c.get_int("test_clips_per_class");
    const auto test = rp::generate_synthetic_dataset(test_spec, dir, "test", rp::Split::kTest);
    std::cout << "gen-data: wrote " << train.items.size() << " train and " << test.items.size()
              << " test clips under " << dir << "\n";
    return 0;
}

int cmd_pretrain(const CommonArgs& args) {
    const auto c = load_config(args, rp::kSubPretrain);
    apply_threads(c);
    rp::TrainConfig t = rp::train_config_from(c);
    const std::string dir = rp::resolve_data_dir(c);
    const auto train = rp::unlabeled_view(load_split(dir, "train", rp::Split::kTrain));
    rp::UnlabeledDataset eval_set;
    const rp::UnlabeledDataset* eval_ptr = nullptr;
    if (fs::exists(fs::path(dir) / "test.idx")) {
        eval_set = rp::unlabeled_view(load_split(dir, "test", rp::Split::kTest));
        eval_ptr = &eval_set;
    }
    auto result = rp::pretrain(t, train, eval_ptr, c.get_string("resume"));
    const auto& last = result.log.rows.back();
    std::cout << "pretrain: done iter=" << last.iter << " loss=" << last.loss
              << " eval_acc=" << last.eval_acc << " checkpoint="
              << (fs::path(t.out_dir) / (t.run_id + "_final.rpck")).string() << "\n";
    return 0;
}

int cmd_finetune(const CommonArgs& args) {
    const auto c = load_config(args, rp::kSubFinetune);
    apply_threads(c);
    rp::TrainConfig t = rp::train_config_from(c);
    t.task = rp::TaskKind::kTransfer;
    const std::string dir = rp::resolve_data_dir(c);
    rp::LabeledDataset train = load_split(dir, "train", rp::Split::kTrain);
    const int shots = c.get_int("shots_per_class");
    if (shots > 0) train = rp::few_shot_subset(train, shots, t.seed);
    rp::LabeledDataset test;
    const rp::LabeledDataset* test_ptr = nullptr;
    if (fs::exists(fs::path(dir) / "test.idx")) {
        test = load_split(dir, "test", rp::Split::kTest);
        test_ptr = &test;
    }

    rp::Model pretrained;
    const rp::Model* init_ptr = nullptr;
    const std::string init = c.get_string("init");
    if (!init.empty()) {
        pretrained = rp::load_model(init).model;
        init_ptr = &pretrained;
    }
    auto result = rp::finetune(t, init_ptr, train, test_ptr, c.get_string("resume"));
    const auto& last = result.log.rows.back();
    std::cout << "finetune: done iter=" << last.iter << " loss=" << last.loss
              << " eval_acc=" << last.eval_acc << " checkpoint="
              << (fs::path(t.out_dir) / (t.run_id + "_final.rpck")).string() << "\n";
    return 0;
}

int cmd_eval(const CommonArgs& args) {
    const auto c = load_config(args, rp::kSubEval);
    apply_threads(c);
    const std::string init = c.get_string("init");
    if (init.empty()) throw rp::ConfigError("eval needs init=<checkpoint>");
    auto loaded = rp::load_model(init);
    rp::TrainConfig pipe = rp::train_config_from(c);
    const std::string dir = rp::resolve_data_dir(c);

    if (loaded.model.spec.head == rp::HeadKind::kPretext) {
        const auto test = rp::unlabeled_view(load_split(dir, "test", rp::Split::kTest));
        const double acc =
            rp::rotation_accuracy(loaded.model, test, pipe.rotations, pipe);
        std::cout << "pretext_acc=" << acc << "\n";
        return 0;
    }

    rp::LabeledDataset test = load_split(dir, "test", rp::Split::kTest);
    auto preds = rp::predict(loaded.model, test, pipe);
    std::cout << "top1_acc=" << rp::prediction_top1(preds) << "\n";
    const std::string init2 = c.get_string("init2");
    if (!init2.empty()) {
        auto second = rp::load_model(init2);
        rp::TrainConfig pipe2 = pipe;
        pipe2.modality =
            c.get_string("modality2") == "dif" ? rp::Modality::kDif : rp::Modality::kRgb;
        auto preds2 = rp::predict(second.model, test, pipe2);
        std::cout << "top1_acc_b=" << rp::prediction_top1(preds2) << "\n";
        std::cout << "top1_acc_fused=" << rp::prediction_top1(rp::fuse_predictions(preds, preds2))
                  << "\n";
    }
    return 0;
}

int cmd_ablate(const CommonArgs& args) {
    const auto c = load_config(args, rp::kSubAblate);
    apply_threads(c);
    rp::TrainConfig base = rp::train_config_from(c);
    base.out_dir.clear();  // matrix runs do not spill per-run checkpoints

    rp::TrainConfig transfer = base;
    transfer.task = rp::TaskKind::kTransfer;
    transfer.lr_initial = 0.008;
    transfer.lr_decay_every = 4000;
    transfer.freeze_prefix = 0;

    const std::string dir = rp::resolve_data_dir(c);
    rp::AblateData data;
    data.pretext_train = rp::unlabeled_view(load_split(dir, "train", rp::Split::kTrain));
    data.pretext_eval = rp::unlabeled_view(load_split(dir, "test", rp::Split::kTest));
    data.transfer_train = load_split(dir, "train", rp::Split::kTrain);
    const int shots = c.get_int("shots_per_class");
    if (shots > 0) data.transfer_train = rp::few_shot_subset(data.transfer_train, shots, base.seed);
    data.transfer_test = load_split(dir, "test", rp::Split::kTest);

    const std::string matrix = c.get_string("matrix");
    const auto runs = matrix == "rotations" ? rp::rotation_set_matrix(base, transfer)
                                            : rp::clip_length_matrix(base, transfer);
    fs::create_directories(c.get_string("out_dir"));
    const std::string csv =
        (fs::path(c.get_string("out_dir")) / ("ablate_" + matrix + ".csv")).string();
    const auto rows = rp::ablate(runs, data, csv);
    for (const auto& row : rows)
        std::cout << "ablate: " << row.run_id << " pretext_acc=" << row.pretext_acc
                  << " transfer_acc=" << row.transfer_acc << (row.failed ? " (failed)" : "")
                  << "\n";
    std::cout << "ablate: results in " << csv << "\n";
    return 0;
}

int cmd_attention(const CommonArgs& args) {
    const auto c = load_config(args, rp::kSubAttention);
    apply_threads(c);
    const std::string init = c.get_string("init");
    if (init.empty()) throw rp::ConfigError("attention needs init=<checkpoint>");
    auto loaded = rp::load_model(init);

    std::string clip_path = c.get_string("clip_path");
    if (clip_path.empty()) {
        const auto test =
            load_split(rp::resolve_data_dir(c), "test", rp::Split::kTest);
        const int idx = c.get_int("clip_index");
        if (idx < 0 || idx >= static_cast<int>(test.items.size()))
            throw rp::ConfigError("clip_index out of range");
        clip_path = test.items[static_cast<std::size_t>(idx)].path;
    }

    // Rebuild the preprocessing the checkpoint was trained with.
    rp::TrainConfig pipe;
    const auto& meta = loaded.metadata;
    if (meta.count("clip_length")) pipe.clip_length = std::stoi(meta.at("clip_length"));
    if (meta.count("resize_to")) pipe.resize_to = std::stoi(meta.at("resize_to"));
    if (meta.count("modality") && meta.at("modality") == "dif") pipe.modality = rp::Modality::kDif;
    pipe.crop_size = loaded.model.spec.input_size;

    rp::VideoClip clip = rp::eval_preprocess(rp::load_clip(clip_path), pipe);
    if (pipe.modality == rp::Modality::kDif) clip = rp::compute_dif(clip);
    const auto maps = rp::attention_map(loaded.model, clip);
    rp::export_attention_pgm(maps, c.get_string("out_dir"));
    std::cout << "attention: wrote " << maps.size() << " maps to " << c.get_string("out_dir")
              << "\n";
    return 0;
}

int cmd_kernels(const CommonArgs& args) {
    const auto c = load_config(args, rp::kSubKernels);
    apply_threads(c);
    const std::string init = c.get_string("init");
    if (init.empty()) throw rp::ConfigError("kernels needs init=<checkpoint>");
    auto loaded = rp::load_model(init);
    rp::export_kernels_pgm(loaded.model, c.get_string("out_dir"));
    const auto& w = loaded.model.stem.weight;
    std::cout << "kernels: wrote " << w.extent(0) * w.extent(2) << " images to "
              << c.get_string("out_dir") << "\n";
    return 0;
}

void add_common(CLI::App* sub, CommonArgs& args, unsigned mask) {
    sub->add_option("--config", args.config_file, "config file (key=value lines)");
    sub->add_option("overrides", args.overrides, "key=value overrides");
    sub->footer(rp::config_help(mask));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"rotpretext: self-supervised video features from rotation prediction"};
    app.require_subcommand(1);

    struct SubDef {
        const char* name;
        const char* desc;
        unsigned mask;
        int (*run)(const CommonArgs&);
    };
    const SubDef defs[] = {
        {"gen-data", "generate the synthetic oriented-video dataset", rp::kSubGenData,
         cmd_gen_data},
        {"pretrain", "self-supervised rotation pretraining", rp::kSubPretrain, cmd_pretrain},
        {"finetune", "supervised action fine-tuning", rp::kSubFinetune, cmd_finetune},
        {"eval", "evaluate a checkpoint (rotation or action accuracy)", rp::kSubEval, cmd_eval},
        {"ablate", "run a config matrix and emit a results CSV", rp::kSubAblate, cmd_ablate},
        {"attention", "export first-layer attention maps as PGM", rp::kSubAttention,
         cmd_attention},
        {"kernels", "export first-layer kernels as PGM", rp::kSubKernels, cmd_kernels},
    };

    std::vector<CommonArgs> args(std::size(defs));
    std::vector<CLI::App*> subs;
    for (std::size_t i = 0; i < std::size(defs); ++i) {
        CLI::App* sub = app.add_subcommand(defs[i].name, defs[i].desc);
        add_common(sub, args[i], defs[i].mask);
        // Flag conveniences; they append as overrides so file < flag holds.
        if (defs[i].mask & (rp::kSubFinetune | rp::kSubEval | rp::kSubAttention | rp::kSubKernels))
            sub->add_option_function<std::string>(
                "--init", [&args, i](const std::string& v) { args[i].overrides.push_back("init=" + v); },
                "checkpoint to start from / evaluate");
        if (defs[i].mask & (rp::kSubPretrain | rp::kSubFinetune))
            sub->add_option_function<std::string>(
                "--resume",
                [&args, i](const std::string& v) { args[i].overrides.push_back("resume=" + v); },
                "checkpoint to continue training from");
        if (defs[i].mask & rp::kSubAblate)
            sub->add_option_function<std::string>(
                "--matrix",
                [&args, i](const std::string& v) { args[i].overrides.push_back("matrix=" + v); },
                "config matrix to run (rotations | cliplen)");
        sub->add_option_function<std::string>(
            "--seed", [&args, i](const std::string& v) { args[i].overrides.push_back("seed=" + v); },
            "run seed");
        sub->add_option_function<std::string>(
            "--threads",
            [&args, i](const std::string& v) { args[i].overrides.push_back("threads=" + v); },
            "worker cap; 1 is bit-deterministic");
        subs.push_back(sub);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        for (std::size_t i = 0; i < subs.size(); ++i) {
            if (subs[i]->parsed()) {
                std::cout << subs[i]->help();
                return 0;
            }
        }
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "usage error: " << e.what() << "\n" << app.help();
        return 2;
    }

    for (std::size_t i = 0; i < std::size(defs); ++i) {
        if (subs[i]->parsed()) {
            try {
                return defs[i].run(args[i]);
            } catch (const rp::ConfigError& e) {
                std::cerr << "error: " << e.what() << "\n";
                return 2;
            } catch (const std::exception& e) {
                std::cerr << "error: " << e.what() << "\n";
                return 1;
            }
        }
    }
    std::cerr << "usage error: no subcommand\n" << app.help();
    return 2;
}
