// Command-line harness: train / eval / report over the library in
// include/tae. One command per process; every artifact lands under the run
// directory next to a manifest that reproduces it.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "tae/checkpoint.hpp"
#include "tae/common.hpp"
#include "tae/config.hpp"
#include "tae/data.hpp"
#include "tae/eval.hpp"
#include "tae/manifest.hpp"
#include "tae/nets.hpp"
#include "tae/report.hpp"
#include "tae/train.hpp"
#include "tae_version.h"

namespace fs = std::filesystem;
using namespace tae;

namespace {

// exit codes: 0 success, 2 usage/config, 3 data/format, 4 numerical abort
template <typename F>
int guarded(F&& f) {
    try {
        f();
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const ContractError& e) {
        std::cerr << "contract error: " << e.what() << "\n";
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 3;
    } catch (const InputError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 3;
    } catch (const ShapeError& e) {
        std::cerr << "shape error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 4;
    }
}

struct DatasetPair {
    Dataset train;
    Dataset test;
};

// Per-channel standardization using the training set's statistics.
void standardize_pair(DatasetPair& ds) {
    const int c = ds.train.images.channels();
    const int n = ds.train.size();
    const size_t plane = static_cast<size_t>(ds.train.images.height()) * ds.train.images.width();
    std::vector<double> mu(static_cast<size_t>(c), 0.0), sd(static_cast<size_t>(c), 0.0);
    for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch) {
            const double* p = ds.train.images.data.data.data() + (static_cast<size_t>(i) * c + ch) * plane;
            for (size_t j = 0; j < plane; ++j) mu[static_cast<size_t>(ch)] += p[j];
        }
    for (double& v : mu) v /= static_cast<double>(n) * static_cast<double>(plane);
    for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch) {
            const double* p = ds.train.images.data.data.data() + (static_cast<size_t>(i) * c + ch) * plane;
            for (size_t j = 0; j < plane; ++j) {
                const double d = p[j] - mu[static_cast<size_t>(ch)];
                sd[static_cast<size_t>(ch)] += d * d;
            }
        }
    for (double& v : sd) v = std::max(1e-8, std::sqrt(v / (static_cast<double>(n) * static_cast<double>(plane))));

    auto apply = [&](Dataset& d) {
        if (d.size() == 0) return;
        double lo = 0.0, hi = 0.0;
        for (int i = 0; i < d.size(); ++i)
            for (int ch = 0; ch < c; ++ch) {
                double* p = d.images.data.data.data() + (static_cast<size_t>(i) * c + ch) * plane;
                for (size_t j = 0; j < plane; ++j) {
                    p[j] = (p[j] - mu[static_cast<size_t>(ch)]) / sd[static_cast<size_t>(ch)];
                    lo = std::min(lo, p[j]);
                    hi = std::max(hi, p[j]);
                }
            }
        d.images.value_range = {lo, hi};
    };
    apply(ds.train);
    apply(ds.test);
}

// Datasets are part of the manifest contract: the same config + seed must
// rebuild the exact same bytes here and in eval.
DatasetPair build_datasets(const RunConfig& rc) {
    DatasetPair out;
    if (rc.data.source == "synth") {
        Rng root(rc.train.seed);
        Rng train_rng = root.stream("dataset-train");
        Rng test_rng = root.stream("dataset-test");
        out.train = synth_shapes(rc.data.synth_n, rc.data.synth_size, rc.data.synth_classes, train_rng);
        if (rc.data.synth_test_n > 0)
            out.test = synth_shapes(rc.data.synth_test_n, rc.data.synth_size, rc.data.synth_classes, test_rng);
    } else if (rc.data.source == "cifar10") {
        out.train = load_cifar10_binary(rc.data.path);
        if (!rc.data.test_path.empty()) out.test = load_cifar10_binary(rc.data.test_path);
    } else {  // idx
        IdxContent imgs = load_idx(rc.data.path);
        if (imgs.is_labels) throw FormatError("'" + rc.data.path + "' is a label file, expected images");
        out.train.images.data = std::move(imgs.images);
        out.train.name = "idx";
        if (!rc.data.labels_path.empty()) {
            IdxContent labels = load_idx(rc.data.labels_path);
            if (!labels.is_labels) throw FormatError("'" + rc.data.labels_path + "' is an image file, expected labels");
            out.train.labels = std::move(labels.labels);
            int classes = 0;
            for (int y : out.train.labels) classes = std::max(classes, y + 1);
            out.train.class_count = classes;
        }
        if (!rc.data.test_path.empty()) {
            IdxContent timgs = load_idx(rc.data.test_path);
            if (timgs.is_labels) throw FormatError("'" + rc.data.test_path + "' is a label file, expected images");
            out.test.images.data = std::move(timgs.images);
            out.test.name = "idx";
            out.test.class_count = out.train.class_count;
            if (!rc.data.test_labels_path.empty()) {
                IdxContent tl = load_idx(rc.data.test_labels_path);
                out.test.labels = std::move(tl.labels);
            }
        }
    }
    out.train.validate();
    if (out.test.size() > 0) out.test.validate();
    if (rc.standardize) standardize_pair(out);
    return out;
}

// Hide all but labeled_per_class labels of each class (-1 = hidden),
// deterministically in the run's seed.
void mask_labels(Dataset& ds, int labeled_per_class, std::uint64_t seed) {
    if (labeled_per_class <= 0 || !ds.has_labels()) return;
    Rng rng = Rng(seed).stream("labelmask");
    std::vector<std::vector<int>> by_class(static_cast<size_t>(ds.class_count));
    for (int i = 0; i < ds.size(); ++i)
        if (ds.labels[static_cast<size_t>(i)] >= 0) by_class[static_cast<size_t>(ds.labels[static_cast<size_t>(i)])].push_back(i);
    for (auto& cls : by_class) {
        rng.shuffle(cls);
        if (static_cast<int>(cls.size()) < labeled_per_class)
            throw InputError("mask_labels: class has only " + std::to_string(cls.size()) + " examples, need " +
                             std::to_string(labeled_per_class));
        for (size_t i = static_cast<size_t>(labeled_per_class); i < cls.size(); ++i)
            ds.labels[static_cast<size_t>(cls[i])] = -1;
    }
}

NetConfig net_from(const RunConfig& rc, const DatasetPair& ds) {
    return rc.net_for(ds.train.images.channels(), ds.train.images.height(),
                      ds.train.class_count > 0 ? ds.train.class_count : 2);
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string config_path;
    std::string mode;
    std::uint64_t seed = 0;
    bool has_seed = false;
    bool paper_scale = false;
    double entmin = 0.0;
    bool has_entmin = false;
    double lambda = 0.0;
    bool has_lambda = false;
    std::string out_dir = "run";
};

void cmd_train(const TrainArgs& args) {
    RunConfig rc = load_config(args.config_path);
    if (!args.mode.empty()) rc.train.mode = mode_from_string(args.mode);
    if (args.has_seed) rc.train.seed = args.seed;
    if (args.has_entmin) rc.train.entmin_weight = args.entmin;
    if (args.has_lambda) rc.train.lambda = args.lambda;
    if (args.paper_scale) apply_paper_scale(rc);

    DatasetPair ds = build_datasets(rc);
    if (rc.train.mode == Mode::SAT) mask_labels(ds.train, rc.labeled_per_class, rc.train.seed);

    const NetConfig net = net_from(rc, ds);
    net.validate();
    rc.train.validate();

    RunManifest manifest;
    manifest.command = "train";
    manifest.mode = mode_name(rc.train.mode);
    manifest.seed = rc.train.seed;
    manifest.code_hash = kTaeCodeHash;
    manifest.config_text = dump_config(rc);
    manifest.config_hash = config_hash(rc);
    write_manifest(args.out_dir, manifest);

    std::ofstream metrics(fs::path(args.out_dir) / manifest.metrics_file);
    if (!metrics) throw FormatError("cannot open metrics stream in '" + args.out_dir + "'");
    MetricsSink sink = [&](const StepRecord& r) { metrics << step_record_json(r) << "\n"; };

    CheckpointSink ckpt = [&](const ModelState& state, int epoch) {
        CheckpointMeta meta{manifest.config_hash, rc.train.seed, epoch};
        const bool final = epoch >= rc.train.epochs;
        const std::string name =
            final ? manifest.checkpoint_file : "checkpoint_epoch" + std::to_string(epoch) + ".tae";
        save_checkpoint((fs::path(args.out_dir) / name).string(), state, meta);
    };

    ModelState state = run(net, rc.train, ds.train, sink, ckpt);
    metrics.close();

    std::cout << "trained " << mode_name(rc.train.mode) << " for " << rc.train.epochs << " epochs; artifacts in "
              << args.out_dir << "\n";
    (void)state;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalContext {
    RunConfig rc;
    ModelState state;
    CheckpointMeta meta;
    DatasetPair ds;
    FeatureBank train_bank;
    FeatureBank test_bank;
    std::string run_dir;
};

EvalContext load_eval_context(const std::string& run_dir, int n_samples_override) {
    EvalContext ctx;
    ctx.run_dir = run_dir;
    read_manifest(run_dir);  // existence check; config snapshot is authoritative
    ctx.rc = load_config((fs::path(run_dir) / "config.cfg").string());

    auto loaded = load_checkpoint((fs::path(run_dir) / "checkpoint.tae").string());
    ctx.state = std::move(loaded.first);
    ctx.meta = loaded.second;
    if (ctx.meta.config_hash != config_hash(ctx.rc))
        throw FormatError("checkpoint/config mismatch in '" + run_dir + "': checkpoint hash " +
                          hex64(ctx.meta.config_hash) + " vs config " + hex64(config_hash(ctx.rc)));

    ctx.ds = build_datasets(ctx.rc);
    if (ctx.ds.test.size() == 0) throw InputError("eval needs held-out data (test split is empty)");
    if (!ctx.ds.train.has_labels() || !ctx.ds.test.has_labels()) throw InputError("eval needs labeled data");

    const int n_samples = n_samples_override > 0 ? n_samples_override : ctx.rc.eval.n_samples;
    Rng rng = Rng(ctx.meta.seed).stream("eval-features");
    ctx.train_bank = extract_features(ctx.state, ctx.ds.train, n_samples, rng, run_dir + "/checkpoint.tae");
    ctx.test_bank = extract_features(ctx.state, ctx.ds.test, n_samples, rng, run_dir + "/checkpoint.tae");
    return ctx;
}

void append_summary(const std::string& run_dir, const std::string& key, const nlohmann::json& value) {
    const fs::path path = fs::path(run_dir) / "summary.json";
    nlohmann::json j;
    if (fs::exists(path)) {
        std::ifstream in(path);
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("'" + path.string() + "': " + e.what());
        }
    }
    j[key] = value;
    std::ofstream out(path);
    out << j.dump(2) << "\n";
}

void cmd_eval_knn(const std::string& run_dir, std::vector<int> ks, int n_samples) {
    EvalContext ctx = load_eval_context(run_dir, n_samples);
    if (ks.empty()) ks = ctx.rc.eval.knn_k;
    std::vector<EvalRow> rows;
    nlohmann::json summary;
    for (int k : ks) {
        const double err = knn_error(ctx.train_bank, ctx.test_bank, k);
        rows.push_back({"knn", "k=" + std::to_string(k), ctx.meta.seed, err});
        summary["k=" + std::to_string(k)] = err;
        std::cout << "knn k=" << k << " error " << err << "\n";
    }
    write_eval_csv((fs::path(run_dir) / "eval_knn.csv").string(), rows);
    append_summary(run_dir, "knn", summary);
}

void cmd_eval_probe(const std::string& run_dir, const std::string& head, int n_samples) {
    EvalContext ctx = load_eval_context(run_dir, n_samples);
    ProbeConfig pc = ctx.rc.eval.probe();
    if (!head.empty()) pc.head = probe_head_from_string(head);
    pc.seed = ctx.meta.seed;

    const std::uint64_t before = digest_params(ctx.state.params);
    const double err = probe_train(ctx.train_bank, ctx.test_bank, ctx.ds.train.class_count, pc);
    if (digest_params(ctx.state.params) != before)
        throw ContractError("probe training mutated the encoder parameters");

    const std::string setting = pc.head == ProbeHead::Linear ? "linear" : "nonlinear";
    write_eval_csv((fs::path(run_dir) / "eval_probe.csv").string(), {{"probe", setting, ctx.meta.seed, err}});
    append_summary(run_dir, "probe_" + setting, err);
    std::cout << "probe " << setting << " error " << err << "\n";

    if (ctx.state.mode == Mode::SAT) {
        Rng rng = Rng(ctx.meta.seed).stream("eval-classifier");
        const double cls_err = classifier_error(ctx.state, ctx.ds.test, n_samples > 0 ? n_samples : ctx.rc.eval.n_samples, rng);
        append_summary(run_dir, "classifier_error", cls_err);
        std::cout << "classifier error " << cls_err << "\n";
    }
}

void cmd_eval_few_label(const std::string& run_dir, std::vector<int> per_class, int n_samples) {
    EvalContext ctx = load_eval_context(run_dir, n_samples);
    if (per_class.empty()) per_class = ctx.rc.eval.per_class;
    Rng rng = Rng(ctx.meta.seed).stream("eval-fewlabel");
    const std::vector<FewLabelRow> table = few_label_protocol(ctx.train_bank, ctx.test_bank, ctx.ds.train.class_count,
                                                              per_class, ctx.rc.eval.few_label_reps,
                                                              ctx.rc.eval.probe(), rng);
    std::vector<EvalRow> rows;
    nlohmann::json summary;
    std::map<int, std::vector<double>> grouped;
    for (const FewLabelRow& r : table) {
        rows.push_back({"few_label", "per_class=" + std::to_string(r.per_class) + ";rep=" + std::to_string(r.repetition),
                        ctx.meta.seed, r.error});
        grouped[r.per_class].push_back(r.error);
    }
    for (const auto& [count, errs] : grouped) {
        const SummaryStat s = summarize(errs);
        summary["per_class=" + std::to_string(count)] = s.mean;
        std::cout << "few-label per_class=" << count << " mean error " << s.mean << "\n";
    }
    write_eval_csv((fs::path(run_dir) / "eval_fewlabel.csv").string(), rows);
    append_summary(run_dir, "few_label", summary);
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

void cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
    struct RunData {
        std::string dir;
        std::string mode;
        std::uint64_t seed = 0;
        std::vector<StepRecord> metrics;
        std::vector<EvalRow> eval_rows;
    };
    std::vector<RunData> runs;
    for (const std::string& dir : run_dirs) {
        RunData rd;
        rd.dir = dir;
        const nlohmann::json manifest = read_manifest(dir);
        rd.mode = manifest.value("mode", "?");
        rd.seed = manifest.value("seed", 0ull);
        const fs::path metrics_path = fs::path(dir) / manifest["layout"].value("metrics", "metrics.jsonl");
        if (fs::exists(metrics_path)) rd.metrics = read_metrics_jsonl(metrics_path.string());
        for (const char* name : {"eval_knn.csv", "eval_probe.csv", "eval_fewlabel.csv"}) {
            const fs::path p = fs::path(dir) / name;
            if (!fs::exists(p)) continue;
            std::vector<EvalRow> rows = read_eval_csv(p.string());
            rd.eval_rows.insert(rd.eval_rows.end(), rows.begin(), rows.end());
        }
        runs.push_back(std::move(rd));
    }

    bool any_metrics = false;
    for (const RunData& rd : runs) any_metrics |= !rd.metrics.empty();
    if (!any_metrics) throw InputError("report: no metrics found in the given run directories");

    fs::create_directories(out_dir);

    // loss curves
    std::vector<Series> curves;
    for (const RunData& rd : runs) {
        if (rd.metrics.empty()) continue;
        Series s;
        s.label = rd.mode + " seed " + std::to_string(rd.seed);
        for (const StepRecord& r : rd.metrics) {
            s.x.push_back(static_cast<double>(r.step));
            s.y.push_back(r.loss.total);
        }
        curves.push_back(std::move(s));
    }
    write_svg_lines((fs::path(out_dir) / "loss_curves.svg").string(), "training loss", "step", "total loss", curves);

    // error table, grouped over runs by protocol/setting
    std::map<std::string, std::vector<double>> error_groups;
    for (const RunData& rd : runs)
        for (const EvalRow& row : rd.eval_rows) error_groups[row.protocol + " " + row.setting].push_back(row.error_rate);
    if (!error_groups.empty()) {
        std::vector<std::pair<std::string, double>> bars;
        for (const auto& [key, errs] : error_groups) bars.emplace_back(key, summarize(errs).mean);
        write_svg_bars((fs::path(out_dir) / "error_table.svg").string(), "evaluation error rates", bars);
    }

    // markdown summary
    std::ofstream md(fs::path(out_dir) / "report.md");
    if (!md) throw FormatError("cannot write report in '" + out_dir + "'");
    md << "# Run report\n\n## Runs\n\n";
    md << "| run | mode | seed | steps | final total loss |\n|---|---|---|---|---|\n";
    char buf[64];
    for (const RunData& rd : runs) {
        const double final_total = rd.metrics.empty() ? 0.0 : rd.metrics.back().loss.total;
        std::snprintf(buf, sizeof(buf), "%.6g", final_total);
        md << "| " << rd.dir << " | " << rd.mode << " | " << rd.seed << " | " << rd.metrics.size() << " | " << buf
           << " |\n";
    }

    std::map<std::string, std::vector<double>> finals_by_mode;
    for (const RunData& rd : runs)
        if (!rd.metrics.empty()) finals_by_mode[rd.mode].push_back(rd.metrics.back().loss.total);
    md << "\n## Final loss by mode\n\n| mode | runs | mean | std |\n|---|---|---|---|\n";
    for (const auto& [mode, values] : finals_by_mode) {
        const SummaryStat s = summarize(values);
        char mean_buf[64], std_buf[64];
        std::snprintf(mean_buf, sizeof(mean_buf), "%.6g", s.mean);
        std::snprintf(std_buf, sizeof(std_buf), "%.6g", s.stddev);
        md << "| " << mode << " | " << s.count << " | " << mean_buf << " | " << std_buf << " |\n";
    }

    if (!error_groups.empty()) {
        md << "\n## Evaluation error rates\n\n| protocol / setting | runs | mean | std |\n|---|---|---|---|\n";
        for (const auto& [key, errs] : error_groups) {
            const SummaryStat s = summarize(errs);
            char mean_buf[64], std_buf[64];
            std::snprintf(mean_buf, sizeof(mean_buf), "%.6g", s.mean);
            std::snprintf(std_buf, sizeof(std_buf), "%.6g", s.stddev);
            md << "| " << key << " | " << s.count << " | " << mean_buf << " | " << std_buf << " |\n";
        }
    }
    md << "\n![loss curves](loss_curves.svg)\n";
    if (!error_groups.empty()) md << "\n![error rates](error_table.svg)\n";

    std::cout << "report written to " << out_dir << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"transformation-equivariant representation learning workbench"};
    app.require_subcommand(1);

    // train
    TrainArgs targs;
    CLI::App* train_cmd = app.add_subcommand("train", "train a model and write checkpoint + metrics");
    train_cmd->add_option("--config", targs.config_path, "config file")->required();
    train_cmd->add_option("--mode", targs.mode, "aet | avt | sat (overrides config)");
    CLI::Option* seed_opt = train_cmd->add_option("--seed", targs.seed, "RNG seed (overrides config)");
    train_cmd->add_flag("--paper-scale", targs.paper_scale, "published training recipe (slow)");
    CLI::Option* entmin_opt = train_cmd->add_option("--entmin", targs.entmin, "entropy-minimization weight");
    CLI::Option* lambda_opt = train_cmd->add_option("--lambda", targs.lambda, "label term weight");
    train_cmd->add_option("--out", targs.out_dir, "output directory");

    // eval
    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a trained run");
    eval_cmd->require_subcommand(1);
    std::string run_dir;
    int n_samples = 0;
    std::vector<int> ks;
    std::string head;
    std::vector<int> per_class;

    CLI::App* knn_cmd = eval_cmd->add_subcommand("knn", "K-nearest-neighbor error");
    knn_cmd->add_option("--run", run_dir, "run directory")->required();
    knn_cmd->add_option("--k", ks, "K values");
    knn_cmd->add_option("--n-samples", n_samples, "representation samples to average");

    CLI::App* probe_cmd = eval_cmd->add_subcommand("probe", "classifier probe on frozen features");
    probe_cmd->add_option("--run", run_dir, "run directory")->required();
    probe_cmd->add_option("--head", head, "linear | nonlinear");
    probe_cmd->add_option("--n-samples", n_samples, "representation samples to average");

    CLI::App* few_cmd = eval_cmd->add_subcommand("few-label", "probes on stratified label subsets");
    few_cmd->add_option("--run", run_dir, "run directory")->required();
    few_cmd->add_option("--per-class", per_class, "labels per class");
    few_cmd->add_option("--n-samples", n_samples, "representation samples to average");

    // report
    std::vector<std::string> report_dirs;
    std::string report_out = "report";
    CLI::App* report_cmd = app.add_subcommand("report", "plots and summary over run directories");
    report_cmd->add_option("runs", report_dirs, "run directories")->required();
    report_cmd->add_option("--out", report_out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    targs.has_seed = seed_opt->count() > 0;
    targs.has_entmin = entmin_opt->count() > 0;
    targs.has_lambda = lambda_opt->count() > 0;

    if (train_cmd->parsed()) return guarded([&] { cmd_train(targs); });
    if (knn_cmd->parsed()) return guarded([&] { cmd_eval_knn(run_dir, ks, n_samples); });
    if (probe_cmd->parsed()) return guarded([&] { cmd_eval_probe(run_dir, head, n_samples); });
    if (few_cmd->parsed()) return guarded([&] { cmd_eval_few_label(run_dir, per_class, n_samples); });
    if (report_cmd->parsed()) return guarded([&] { cmd_report(report_dirs, report_out); });
    std::cerr << "no command given\n";
    return 2;
}
