#include "cli.hpp"

#include "protopaws/embedding_store.hpp"
#include "protopaws/errors.hpp"
#include "protopaws/knn.hpp"
#include "protopaws/nn.hpp"
#include "protopaws/parallel.hpp"
#include "protopaws/paws.hpp"
#include "protopaws/proto_select.hpp"
#include "protopaws/synth.hpp"
#include "protopaws/vmf_sne.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <algorithm>
#include <cstdio>
#include <deque>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>

namespace protopaws::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    out.flush();
    if (!out) throw IoError("write failed for " + path.string());
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
}

std::string jsonl(const std::vector<json>& records) {
    std::string s;
    for (const auto& r : records) s += r.dump() + "\n";
    return s;
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> parts;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) parts.push_back(item);
    }
    return parts;
}

std::vector<std::uint32_t> read_indices(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open index list " + path.string());
    std::vector<std::uint32_t> out;
    std::string tok;
    while (in >> tok) {
        try {
            std::size_t used = 0;
            const unsigned long v = std::stoul(tok, &used);
            if (used != tok.size() || v > 0xffffffffUL) throw std::invalid_argument(tok);
            out.push_back(static_cast<std::uint32_t>(v));
        } catch (const std::logic_error&) {
            throw FormatError("index list " + path.string() + ": bad entry '" + tok + "'");
        }
    }
    return out;
}

std::string index_lines(std::span<const std::uint32_t> indices) {
    std::string s;
    for (auto i : indices) s += std::to_string(i) + "\n";
    return s;
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

struct HeadOptions {
    std::string init_path;
    Eigen::Index hidden = 384;
    Eigen::Index out_dim = 512;

    void add(CLI::App* sub) {
        sub->add_option("--head", init_path, "Initial head checkpoint (.head); random init when omitted");
        sub->add_option("--hidden", hidden, "Hidden width for a fresh head")->check(CLI::PositiveNumber);
        sub->add_option("--out-dim", out_dim, "Output width for a fresh head")->check(CLI::PositiveNumber);
    }

    ProjectionHead<float> make(std::uint32_t in_dim, Rng& rng) const {
        if (!init_path.empty()) {
            ProjectionHead<float> head = load_head(init_path);
            require(head.in_dim() == static_cast<Eigen::Index>(in_dim),
                    "head checkpoint input width does not match the dataset dimension");
            return head;
        }
        return init_head<float>(in_dim, hidden, out_dim, rng);
    }
};

struct ScheduleOptions {
    double start_lr = 0.3;
    double max_lr = 6.4;
    double final_lr = 0.064;
    LarsConfig lars;

    void add(CLI::App* sub) {
        sub->add_option("--start-lr", start_lr, "Learning rate at step 0");
        sub->add_option("--max-lr", max_lr, "Learning rate at the end of warmup");
        sub->add_option("--final-lr", final_lr, "Learning rate at the last step");
        sub->add_option("--momentum", lars.momentum, "LARS momentum");
        sub->add_option("--weight-decay", lars.weight_decay, "LARS weight decay");
        sub->add_option("--trust", lars.trust, "LARS trust coefficient");
    }
};

// ---------------------------------------------------------------- gen-synthetic

struct GenSynthetic {
    std::uint32_t classes = 10;
    std::string per_class = "200";
    std::uint32_t dim = 64;
    double class_kappa = 100.0;
    double view_kappa = 200.0;
    std::uint32_t globals = 4;
    std::uint32_t locals = 8;
    std::uint64_t seed = 0;
    std::string out;
    std::string eval_out;
    double eval_fraction = 0.2;

    void add(CLI::App* sub) {
        sub->add_option("--classes", classes, "Number of classes");
        sub->add_option("--per-class", per_class, "Points per class: one count, or a comma list with one per class");
        sub->add_option("--dim", dim, "Embedding dimension");
        sub->add_option("--class-kappa", class_kappa, "Concentration of points around class means");
        sub->add_option("--view-kappa", view_kappa, "Concentration of views around their item");
        sub->add_option("--globals", globals, "Global views per item");
        sub->add_option("--locals", locals, "Local views per item");
        sub->add_option("--seed", seed, "Random seed")->required();
        sub->add_option("--out", out, "Output EMB1 path")->required();
        sub->add_option("--eval-out", eval_out, "Also write a stratified held-out split here");
        sub->add_option("--eval-fraction", eval_fraction, "Share of every class held out for --eval-out");
    }

    static void write(const EmbeddingDataset& ds, const fs::path& path, const DatasetManifest& manifest) {
        if (path.has_parent_path()) ensure_dir(path.parent_path());
        save_dataset(ds, path);
        save_manifest(manifest, path);
    }

    void operator()(std::ostream& os) const {
        MixtureSpec spec;
        spec.n_classes = classes;
        spec.dim = dim;
        spec.class_kappa = class_kappa;
        spec.view_kappa = view_kappa;
        spec.n_global = globals;
        spec.n_local = locals;
        spec.seed = seed;
        const auto parts = split_list(per_class);
        for (const auto& p : parts) {
            try {
                spec.points_per_class.push_back(static_cast<std::uint32_t>(std::stoul(p)));
            } catch (const std::logic_error&) {
                throw ConfigError("--per-class: bad count '" + p + "'");
            }
        }
        if (spec.points_per_class.size() == 1) spec.points_per_class.assign(classes, spec.points_per_class[0]);
        if (spec.points_per_class.size() != classes) {
            throw ConfigError("--per-class needs one count or exactly one count per class");
        }
        EmbeddingDataset ds = gen_mixture(spec);
        DatasetManifest manifest;
        for (std::uint32_t c = 0; c < classes; ++c) manifest.class_names.push_back("class_" + std::to_string(c));
        manifest.source = "synthetic vMF mixture, seed " + std::to_string(seed);
        json summary{{"out", out}, {"classes", ds.n_classes}, {"dim", ds.dim}, {"globals", ds.n_global},
                     {"locals", ds.n_local}};
        if (!eval_out.empty()) {
            require(eval_fraction > 0.0 && eval_fraction < 1.0, "--eval-fraction must lie in (0, 1)");
            Rng split_rng(seed ^ 0x5eed5eedULL);
            auto [train_part, eval_part] = split_stratified(ds, eval_fraction, split_rng);
            write(eval_part, eval_out, manifest);
            summary["eval_out"] = eval_out;
            summary["eval_items"] = eval_part.n_items;
            ds = std::move(train_part);
        }
        write(ds, out, manifest);
        summary["items"] = ds.n_items;
        os << summary.dump() << "\n";
    }
};

// -------------------------------------------------------------- pretrain-vmfsne

struct PretrainVmfSne {
    std::string train;
    std::string eval;
    std::string out_dir;
    std::uint64_t seed = 0;
    HeadOptions head;
    ScheduleOptions sched;
    VmfSneConfig cfg;

    void add(CLI::App* sub) {
        sub->add_option("--train", train, "Training EMB1 file")->required();
        sub->add_option("--eval", eval, "Labelled EMB1 file for per-epoch kNN accuracy");
        sub->add_option("--out-dir", out_dir, "Directory for head.head and metrics.jsonl")->required();
        sub->add_option("--seed", seed, "Random seed")->required();
        head.add(sub);
        sched.add(sub);
        sub->add_option("--perplexity", cfg.perplexity, "Perplexity of the input-space neighbour distribution");
        sub->add_option("--tau", cfg.tau, "Temperature of the output-space kernel");
        sub->add_option("--batch-size", cfg.batch_size, "Items per step");
        sub->add_option("--epochs", cfg.epochs, "Training epochs");
        sub->add_option("--warmup-epochs", cfg.warmup_epochs, "Linear warmup epochs");
        sub->add_option("--knn-k", cfg.knn.k, "k for the per-epoch kNN evaluation");
        sub->add_option("--knn-tau", cfg.knn.tau, "Temperature for the per-epoch kNN evaluation");
    }

    void operator()(std::ostream& os) {
        cfg.start_lr = sched.start_lr;
        cfg.max_lr = sched.max_lr;
        cfg.final_lr = sched.final_lr;
        cfg.lars = sched.lars;
        cfg.validate();
        const EmbeddingDataset ds = load_dataset(train);
        std::optional<EmbeddingDataset> ev;
        if (!eval.empty()) ev = load_dataset(eval);
        ensure_dir(out_dir);

        Rng rng(seed);
        ProjectionHead<float> init = head.make(ds.dim, rng);
        const PretrainResult result = pretrain_vmfsne(ds, std::move(init), cfg, rng, ev ? &*ev : nullptr);

        std::vector<json> records;
        for (const auto& e : result.history) {
            records.push_back(json{{"epoch", e.epoch}, {"kl", e.kl}, {"knn_acc", optional_number(e.knn_acc)}});
        }
        write_text(fs::path(out_dir) / "metrics.jsonl", jsonl(records));
        save_head(result.head, fs::path(out_dir) / "head.head");
        json summary{{"head", (fs::path(out_dir) / "head.head").string()}, {"epochs", result.history.size()}};
        if (!result.history.empty()) {
            summary["final_kl"] = result.history.back().kl;
            summary["final_knn_acc"] = optional_number(result.history.back().knn_acc);
        }
        os << summary.dump() << "\n";
    }
};

// ------------------------------------------------------------------- train-paws

struct TrainPaws {
    std::string train;
    std::string eval;
    std::string prototypes;
    std::size_t per_class = 0;
    std::string out_dir;
    std::uint64_t seed = 0;
    std::string loss_mode = "pseudolabel";
    HeadOptions head;
    ScheduleOptions sched;
    PawsConfig cfg;
    CLI::Option* locals_opt = nullptr;

    void add(CLI::App* sub) {
        sub->add_option("--train", train, "Training EMB1 file")->required();
        sub->add_option("--eval", eval, "Labelled validation EMB1 file (defaults to --train)");
        sub->add_option("--prototypes", prototypes, "File of labelled item ids (one per line)");
        sub->add_option("--per-class", per_class, "Pick this many random labelled items per class instead");
        sub->add_option("--out-dir", out_dir, "Directory for head.head and metrics.jsonl")->required();
        sub->add_option("--seed", seed, "Random seed")->required();
        head.add(sub);
        sched.add(sub);
        sub->add_option("--loss-mode", loss_mode, "pseudolabel | consistency");
        sub->add_option("--tau", cfg.tau, "Prediction temperature");
        sub->add_option("--T", cfg.sharpen_t, "Sharpening temperature");
        sub->add_option("--me-max", cfg.me_max, "Mean-entropy maximisation (true|false)");
        sub->add_option("--label-smoothing", cfg.label_smoothing, "Label smoothing epsilon");
        sub->add_option("--support-per-class", cfg.support_per_class, "Prototypes per class per step (0 = all)");
        sub->add_option("--classes-per-batch", cfg.classes_per_batch, "Classes per support batch (0 = all)");
        sub->add_option("--batch-size", cfg.unlabelled_batch, "Unlabelled items per step");
        locals_opt = sub->add_option("--locals", cfg.n_local, "Local views per item per step");
        sub->add_option("--epochs", cfg.epochs, "Training epochs");
        sub->add_option("--warmup-epochs", cfg.warmup_epochs, "Linear warmup epochs");
    }

    void operator()(std::ostream& os) {
        cfg.loss_mode = parse_loss_mode(loss_mode);
        cfg.start_lr = sched.start_lr;
        cfg.max_lr = sched.max_lr;
        cfg.final_lr = sched.final_lr;
        cfg.lars = sched.lars;
        if (prototypes.empty() == (per_class == 0)) {
            throw ConfigError("train-paws: give exactly one of --prototypes or --per-class");
        }
        const EmbeddingDataset ds = load_dataset(train);
        std::optional<EmbeddingDataset> ev;
        if (!eval.empty()) ev = load_dataset(eval);
        if (locals_opt->count() == 0) cfg.n_local = std::min(cfg.n_local, ds.n_local);
        cfg.validate();
        ensure_dir(out_dir);

        Rng rng(seed);
        ProjectionHead<float> init = head.make(ds.dim, rng);
        std::vector<std::uint32_t> ids;
        if (!prototypes.empty()) {
            ids = read_indices(prototypes);
        } else {
            require(ds.has_labels(), "train-paws: --per-class needs a labelled dataset");
            ids = random_select(ds, per_class * ds.n_classes, RandomMode::class_stratified, rng);
        }
        const PrototypeSet protos = make_prototype_set(ds, ids, cfg.label_smoothing);
        const PawsResult result = train_paws(ds, protos, std::move(init), cfg, rng, ev ? &*ev : nullptr);

        std::vector<json> records;
        for (const auto& e : result.history) {
            records.push_back(json{{"epoch", e.epoch}, {"loss", e.loss}, {"val_acc", e.val_acc}});
        }
        write_text(fs::path(out_dir) / "metrics.jsonl", jsonl(records));
        write_text(fs::path(out_dir) / "prototypes.txt", index_lines(protos.indices));
        save_head(result.head, fs::path(out_dir) / "head.head");
        json summary{{"head", (fs::path(out_dir) / "head.head").string()},
                     {"loss_mode", std::string(to_string(cfg.loss_mode))},
                     {"prototypes", protos.size()},
                     {"initial_val_acc", result.initial_val_acc}};
        if (!result.history.empty()) summary["final_val_acc"] = result.history.back().val_acc;
        os << summary.dump() << "\n";
    }
};

// ------------------------------------------------------------ select-prototypes

struct SelectPrototypes {
    std::string data;
    std::string method = "kmeans";
    std::size_t budget = 0;
    std::uint64_t seed = 0;
    std::string out_dir;
    UslLiteConfig usl;

    void add(CLI::App* sub) {
        sub->add_option("--data", data, "EMB1 file to select from")->required();
        sub->add_option("--method", method, "kmeans | usl-lite | random | random-stratified");
        sub->add_option("--budget", budget, "Number of items to select")->required();
        sub->add_option("--seed", seed, "Random seed")->required();
        sub->add_option("--out-dir", out_dir, "Directory for indices.txt and report.json")->required();
        sub->add_option("--k-density", usl.k_density, "Neighbours for the density estimate (usl-lite)");
        sub->add_option("--reg-iters", usl.reg_iters, "Regularisation sweeps (usl-lite)");
        sub->add_option("--lambda", usl.lambda, "Regularisation weight (usl-lite)");
        sub->add_option("--n-init", usl.n_init, "k-means restarts");
    }

    void operator()(std::ostream& os) const {
        const SelectionMethod m = parse_selection_method(method);
        const EmbeddingDataset ds = load_dataset(data);
        ensure_dir(out_dir);
        Rng rng(seed);
        const auto indices = select_prototypes(ds, m, budget, rng, usl);
        json report{{"method", std::string(to_string(m))}, {"budget", budget}, {"seed", seed}, {"indices", indices}};
        report["classes_covered"] =
            ds.has_labels() ? json(class_coverage(indices, *ds.labels)) : json(nullptr);
        write_text(fs::path(out_dir) / "indices.txt", index_lines(indices));
        write_text(fs::path(out_dir) / "report.json", report.dump(2) + "\n");
        os << report.dump() << "\n";
    }
};

// ---------------------------------------------------------------------- eval-knn

struct EvalKnn {
    std::string train;
    std::string eval;
    std::string head;
    KnnConfig cfg;

    void add(CLI::App* sub) {
        sub->add_option("--train", train, "Labelled reference EMB1 file")->required();
        sub->add_option("--eval", eval, "Labelled query EMB1 file")->required();
        sub->add_option("--head", head, "Project both sets through this head first");
        sub->add_option("--k", cfg.k, "Neighbours");
        sub->add_option("--tau", cfg.tau, "Vote temperature");
    }

    void operator()(std::ostream& os) const {
        cfg.validate();
        const EmbeddingDataset tr = load_dataset(train);
        const EmbeddingDataset ev = load_dataset(eval);
        std::optional<ProjectionHead<float>> h;
        if (!head.empty()) h = load_head(head);
        const double acc = evaluate_knn(tr, ev, cfg, h ? &*h : nullptr);
        os << json{{"accuracy", acc}, {"k", cfg.k}, {"tau", cfg.tau}, {"representation", h ? "head" : "canonical"}}
                  .dump()
           << "\n";
    }
};

// ----------------------------------------------------------------- coverage-bench

struct CoverageBench {
    std::string data;
    std::size_t budget = 0;
    std::size_t seeds = 20;
    std::uint64_t seed = 0;
    std::string methods = "kmeans,usl-lite,random";
    std::string out_dir;
    UslLiteConfig usl;

    void add(CLI::App* sub) {
        sub->add_option("--data", data, "Labelled EMB1 file")->required();
        sub->add_option("--budget", budget, "Items per selection (0 = number of classes)");
        sub->add_option("--seeds", seeds, "Number of seeds")->check(CLI::PositiveNumber);
        sub->add_option("--seed", seed, "First seed; runs use seed, seed+1, ...")->required();
        sub->add_option("--methods", methods, "Comma list of selection methods");
        sub->add_option("--out-dir", out_dir, "Directory for coverage.jsonl (per-run records)");
        sub->add_option("--k-density", usl.k_density, "Neighbours for the density estimate (usl-lite)");
        sub->add_option("--reg-iters", usl.reg_iters, "Regularisation sweeps (usl-lite)");
        sub->add_option("--lambda", usl.lambda, "Regularisation weight (usl-lite)");
        sub->add_option("--n-init", usl.n_init, "k-means restarts");
    }

    void operator()(std::ostream& os) const {
        std::vector<SelectionMethod> ms;
        for (const auto& name : split_list(methods)) ms.push_back(parse_selection_method(name));
        if (ms.empty()) throw ConfigError("coverage-bench: --methods is empty");
        const EmbeddingDataset ds = load_dataset(data);
        require(ds.has_labels(), "coverage-bench: dataset has no labels");
        const std::size_t b = budget == 0 ? ds.n_classes : budget;
        std::vector<std::uint64_t> seed_list(seeds);
        for (std::size_t i = 0; i < seeds; ++i) seed_list[i] = seed + i;
        const auto summaries = coverage_bench(ds, b, seed_list, ms, usl);

        std::vector<json> runs;
        for (const auto& s : summaries) {
            for (const auto& r : s.runs) {
                runs.push_back(json{{"method", r.method}, {"seed", r.seed}, {"budget", r.budget},
                                    {"classes_covered", r.classes_covered}});
            }
            os << json{{"method", s.method},
                       {"budget", b},
                       {"seeds", seeds},
                       {"n_classes", ds.n_classes},
                       {"mean_coverage", s.mean},
                       {"min_coverage", s.min},
                       {"max_coverage", s.max},
                       {"fraction_all_classes", s.fraction_all_classes}}
                      .dump()
               << "\n";
        }
        if (!out_dir.empty()) {
            ensure_dir(out_dir);
            write_text(fs::path(out_dir) / "coverage.jsonl", jsonl(runs));
        }
    }
};

// ----------------------------------------------------------------- sharpen-curve

struct SharpenCurve {
    double t = 0.25;
    std::size_t classes = 2;
    std::optional<double> p;
    std::size_t points = 21;

    void add(CLI::App* sub) {
        sub->add_option("--T", t, "Sharpening temperature");
        sub->add_option("--classes", classes, "Number of classes")->check(CLI::Range(2, 1000000));
        sub->add_option("--p", p, "Single input probability for the first class");
        sub->add_option("--points", points, "Rows in the table")->check(CLI::Range(2, 1000000));
    }

    static double sharpened_first(double p1, std::size_t classes, double t) {
        std::vector<double> dist(classes, (1.0 - p1) / static_cast<double>(classes - 1));
        dist[0] = p1;
        return sharpen(dist, t)[0];
    }

    void operator()(std::ostream& os) const {
        require(t > 0.0, "sharpen-curve: --T must be positive");
        char buf[64];
        if (p) {
            require(*p >= 0.0 && *p <= 1.0, "sharpen-curve: --p must lie in [0, 1]");
            std::snprintf(buf, sizeof buf, "%.4f\n", sharpened_first(*p, classes, t));
            os << buf;
            return;
        }
        os << "p\tsharpened\n";
        for (std::size_t i = 0; i < points; ++i) {
            const double x = static_cast<double>(i) / static_cast<double>(points - 1);
            std::snprintf(buf, sizeof buf, "%.4f\t%.6f\n", x, sharpened_first(x, classes, t));
            os << buf;
        }
    }
};

int exit_code_for(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::config:
    case ErrorKind::contract: return ExitCode::config;
    case ErrorKind::format:
    case ErrorKind::io: return ExitCode::data;
    case ErrorKind::numeric: return ExitCode::numeric;
    }
    return ExitCode::numeric;
}

std::string_view kind_label(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::config: return "config error";
    case ErrorKind::contract: return "invalid argument";
    case ErrorKind::format: return "data format error";
    case ErrorKind::io: return "i/o error";
    case ErrorKind::numeric: return "numeric error";
    }
    return "error";
}

// Splices `--key value` pairs from the subcommand's --config file in front of
// the explicit arguments; with take-last parsing the explicit flags win.
std::vector<std::string> expand_config(CLI::App& app, const std::vector<std::string>& args) {
    std::size_t sub_pos = args.size();
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--threads") {
            ++i;
            continue;
        }
        if (!args[i].empty() && args[i][0] == '-') continue;
        sub_pos = i;
        break;
    }
    if (sub_pos == args.size()) return args;
    CLI::App* sub = app.get_subcommand_no_throw(args[sub_pos]);
    if (!sub) return args;

    std::optional<std::string> config_path;
    for (std::size_t i = sub_pos + 1; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
        if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
    }
    if (!config_path) return args;

    std::vector<std::string> injected;
    for (const auto& [key, value] : read_config_file(*config_path)) {
        if (key == "config" || !sub->get_option_no_throw("--" + key)) {
            throw ConfigError("unknown key '" + key + "' in " + *config_path + " for " + args[sub_pos]);
        }
        injected.push_back("--" + key);
        injected.push_back(value);
    }
    std::vector<std::string> out(args.begin(), args.begin() + static_cast<std::ptrdiff_t>(sub_pos + 1));
    out.insert(out.end(), injected.begin(), injected.end());
    out.insert(out.end(), args.begin() + static_cast<std::ptrdiff_t>(sub_pos + 1), args.end());
    return out;
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Frozen-backbone semi-supervised learning on precomputed embeddings", "protopaws"};
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.require_subcommand(1);
    int threads = 1;
    app.add_option("--threads", threads, "Worker threads (env PROTOPAWS_THREADS)")
        ->envname("PROTOPAWS_THREADS")
        ->check(CLI::PositiveNumber);

    GenSynthetic gen;
    PretrainVmfSne pretrain;
    TrainPaws paws;
    SelectPrototypes select;
    EvalKnn knn;
    CoverageBench coverage;
    SharpenCurve curve;
    std::function<void(std::ostream&)> action;
    std::deque<std::string> config_paths; // consumed by expand_config before parsing

    auto add_sub = [&](const char* name, const char* help, auto& cmd) {
        CLI::App* sub = app.add_subcommand(name, help);
        sub->add_option("--config", config_paths.emplace_back(),
                        "Key-value file of option defaults; explicit flags win");
        cmd.add(sub);
        sub->callback([&action, &cmd] { action = [&cmd](std::ostream& os) { cmd(os); }; });
    };
    add_sub("gen-synthetic", "Write a labelled vMF-mixture dataset", gen);
    add_sub("pretrain-vmfsne", "Pretrain a projection head with vMF-SNE", pretrain);
    add_sub("train-paws", "Semi-supervised training from labelled prototypes", paws);
    add_sub("select-prototypes", "Choose items to label", select);
    add_sub("eval-knn", "Weighted kNN accuracy", knn);
    add_sub("coverage-bench", "Class coverage of selection methods over seeds", coverage);
    add_sub("sharpen-curve", "Sharpened probability of the first class", curve);

    try {
        std::vector<std::string> reversed = expand_config(app, args);
        std::reverse(reversed.begin(), reversed.end());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? ExitCode::ok : ExitCode::usage;
    } catch (const Error& e) {
        err << "protopaws: " << kind_label(e.kind()) << ": " << e.what() << "\n";
        return exit_code_for(e.kind());
    }

    try {
        set_num_threads(threads);
        action(out);
    } catch (const Error& e) {
        err << "protopaws: " << kind_label(e.kind()) << ": " << e.what() << "\n";
        return exit_code_for(e.kind());
    } catch (const fs::filesystem_error& e) {
        err << "protopaws: i/o error: " << e.what() << "\n";
        return ExitCode::data;
    } catch (const std::exception& e) {
        err << "protopaws: internal error: " << e.what() << "\n";
        return ExitCode::numeric;
    }
    return ExitCode::ok;
}

} // namespace protopaws::cli
