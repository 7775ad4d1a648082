// Experiment driver: gen-data | train | eval | ablate | heatmap.
//
// Every option is `--key value` (or `--key=value`); the same keys can come
// from a flat `key = value` config file passed with --config. Precedence per
// key: flag > LLS_SEED env (seed only) > file > preset > default, and the
// fully resolved config is printed with per-key provenance before any work
// starts. Exit codes: 0 ok, 2 config error, 3 IO error, 4 diverged training.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lls/checkpoint.hpp"
#include "lls/data.hpp"
#include "lls/train_eval.hpp"

namespace fs = std::filesystem;
using namespace lls;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIO = 3;
constexpr int kExitDiverged = 4;

struct Entry {
    std::string value;
    std::string source = "default";
};

// Ordered key -> (default, help). Insertion order is the print order.
struct Schema {
    std::vector<std::pair<std::string, std::pair<std::string, std::string>>> keys;
    void add(std::string key, std::string def, std::string help) {
        keys.emplace_back(std::move(key), std::make_pair(std::move(def), std::move(help)));
    }
    bool has(const std::string& key) const {
        for (const auto& [k, v] : keys)
            if (k == key) return true;
        return false;
    }
};

struct Resolved {
    std::map<std::string, Entry> entries;

    const std::string& str(const std::string& key) const { return entries.at(key).value; }

    int integer(const std::string& key) const {
        const std::string& s = str(key);
        try {
            std::size_t pos = 0;
            const int v = std::stoi(s, &pos);
            if (pos != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw InvalidConfig("--" + key + ": expected an integer, got '" + s + "'");
        }
    }

    double number(const std::string& key) const {
        const std::string& s = str(key);
        try {
            std::size_t pos = 0;
            const double v = std::stod(s, &pos);
            if (pos != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw InvalidConfig("--" + key + ": expected a number, got '" + s + "'");
        }
    }

    bool boolean(const std::string& key) const {
        const std::string& s = str(key);
        if (s == "true" || s == "1" || s == "on" || s == "yes") return true;
        if (s == "false" || s == "0" || s == "off" || s == "no") return false;
        throw InvalidConfig("--" + key + ": expected true/false, got '" + s + "'");
    }

    std::uint64_t seed() const {
        const std::string& s = str("seed");
        try {
            std::size_t pos = 0;
            const unsigned long long v = std::stoull(s, &pos);
            if (pos != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw InvalidConfig("--seed: expected an unsigned integer, got '" + s + "'");
        }
    }
};

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

// preset name -> key/value overrides (documentation presets pinning the
// published hyper-parameter sets; desk runs normally keep the defaults)
std::map<std::string, std::string> preset_values(const std::string& name) {
    if (name == "paper-mini")
        return {{"gamma", "0.6"},       {"beta", "0.8"},
                {"lambda-s", "0.2"},    {"lambda-r", "0.0001"},
                {"episodes", "50000"},  {"way", "15"},
                {"shot", "9"},          {"lr-schedule", "0:0.1,30000:0.006,45000:0.0012"}};
    if (name == "paper-tiered")
        return {{"gamma", "0.4"},       {"beta", "0.9"},
                {"lambda-s", "0.2"},    {"lambda-r", "0.0001"},
                {"episodes", "50000"},  {"way", "15"},
                {"shot", "9"},          {"lr-schedule", "0:0.01,20000:0.001,40000:0.0001"},
                {"pretrain-batches", "2000"}, {"pretrain-lr", "0.1"}};
    if (name == "paper-cifar")
        return {{"gamma", "0.2"},       {"beta", "0.5"},
                {"lambda-s", "0.2"},    {"lambda-r", "0.0001"},
                {"episodes", "50000"},  {"way", "15"},
                {"shot", "9"},          {"lr-schedule", "0:0.1,30000:0.006,45000:0.0012"}};
    throw InvalidConfig("unknown preset '" + name +
                        "' (expected paper-mini, paper-tiered, or paper-cifar)");
}

Resolved resolve(const Schema& schema, const std::vector<std::string>& args) {
    Resolved r;
    for (const auto& [key, dh] : schema.keys) r.entries[key] = {dh.first, "default"};

    // flags are parsed first so --config/--preset can be found, but applied
    // last so they win
    std::map<std::string, std::string> flags;
    for (std::size_t i = 0; i < args.size(); ++i) {
        std::string a = args[i];
        if (a.rfind("--", 0) != 0)
            throw InvalidConfig("expected --key, got '" + a + "'");
        a = a.substr(2);
        std::string value;
        const auto eq = a.find('=');
        if (eq != std::string::npos) {
            value = a.substr(eq + 1);
            a = a.substr(0, eq);
        } else {
            if (i + 1 >= args.size()) throw InvalidConfig("--" + a + ": missing value");
            value = args[++i];
        }
        if (a != "config" && a != "preset" && !schema.has(a))
            throw InvalidConfig("unknown option --" + a);
        if (!flags.emplace(a, value).second)
            throw InvalidConfig("--" + a + " given twice");
    }

    if (auto it = flags.find("preset"); it != flags.end()) {
        for (const auto& [key, value] : preset_values(it->second)) {
            if (!schema.has(key)) continue;  // presets only touch keys the command has
            r.entries[key] = {value, "preset " + it->second};
        }
        flags.erase(it);
    }

    if (auto it = flags.find("config"); it != flags.end()) {
        std::ifstream in(it->second);
        if (!in) throw IOFailure("cannot open config file " + it->second);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            line = trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw InvalidConfig(it->second + ":" + std::to_string(lineno) +
                                    ": expected 'key = value'");
            const std::string key = trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            if (!schema.has(key))
                throw InvalidConfig(it->second + ":" + std::to_string(lineno) +
                                    ": unknown key '" + key + "'");
            r.entries[key] = {value, "file"};
        }
        flags.erase(it);
    }

    if (const char* env = std::getenv("LLS_SEED"); env && schema.has("seed"))
        r.entries["seed"] = {env, "env LLS_SEED"};

    for (const auto& [key, value] : flags) r.entries[key] = {value, "flag"};
    return r;
}

bool wants_help(const std::vector<std::string>& args) {
    for (const auto& a : args)
        if (a == "--help" || a == "-h") return true;
    return false;
}

int print_help(const std::string& command, const Schema& schema) {
    std::printf("usage: lls %s [--key value ...]\n\noptions:\n", command.c_str());
    for (const auto& [key, dh] : schema.keys)
        std::printf("  --%-20s %s [default: %s]\n", key.c_str(), dh.second.c_str(),
                    dh.first.empty() ? "<none>" : dh.first.c_str());
    std::printf(
        "  --%-20s %s\n  --%-20s %s\n", "config FILE",
        "flat key = value file, '#' comments; flags override it", "preset NAME",
        "paper-mini | paper-tiered | paper-cifar hyper-parameter sets");
    return kExitOk;
}

void print_resolved(const std::string& command, const Schema& schema, const Resolved& r) {
    std::printf("[%s] resolved config:\n", command.c_str());
    for (const auto& [key, dh] : schema.keys) {
        const Entry& e = r.entries.at(key);
        std::printf("  %-20s = %-28s (%s)\n", key.c_str(),
                    e.value.empty() ? "<unset>" : e.value.c_str(), e.source.c_str());
    }
    std::fflush(stdout);
}

std::vector<std::pair<int, double>> parse_schedule(const std::string& text) {
    std::vector<std::pair<int, double>> schedule;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ',')) {
        const auto colon = part.find(':');
        if (colon == std::string::npos)
            throw InvalidConfig("--lr-schedule: expected 'episode:rate[,...]', got '" + text +
                                "'");
        try {
            schedule.emplace_back(std::stoi(part.substr(0, colon)),
                                  std::stod(part.substr(colon + 1)));
        } catch (const std::exception&) {
            throw InvalidConfig("--lr-schedule: bad segment '" + part + "'");
        }
    }
    if (schedule.empty()) throw InvalidConfig("--lr-schedule: empty schedule");
    return schedule;
}

LatMode parse_lat(const std::string& s) {
    if (s == "off") return LatMode::off;
    if (s == "cls") return LatMode::cls;
    if (s == "cls-reg") return LatMode::cls_reg;
    throw InvalidConfig("--lat: expected off, cls, or cls-reg, got '" + s + "'");
}

std::string require(const Resolved& r, const std::string& key) {
    if (r.str(key).empty()) throw InvalidConfig("--" + key + " is required");
    return r.str(key);
}

MetricConfig metric_from(const Resolved& r) {
    MetricConfig m;
    m.gamma = r.number("gamma");
    m.softmax_scale = r.number("scale");
    m.per_location_norm = r.boolean("per-location-norm");
    if (m.gamma < 0.0) throw InvalidConfig("--gamma must be >= 0");
    if (m.softmax_scale <= 0.0) throw InvalidConfig("--scale must be > 0");
    return m;
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const std::vector<std::string>& args) {
    Schema schema;
    schema.add("out", "", "output directory (required)");
    schema.add("base", "20", "number of base (training) classes");
    schema.add("val", "5", "number of validation classes");
    schema.add("novel", "10", "number of novel (test) classes");
    schema.add("per-class", "40", "images per class");
    schema.add("side", "32", "image side in pixels (multiple of 16)");
    schema.add("seed", "0", "generator seed");
    if (wants_help(args)) return print_help("gen-data", schema);
    Resolved r = resolve(schema, args);
    print_resolved("gen-data", schema, r);

    const fs::path out = require(r, "out");
    Corpus corpus =
        generate_glyph_corpus(r.integer("base"), r.integer("val"), r.integer("novel"),
                              r.integer("per-class"), r.integer("side"), r.seed());
    fs::create_directories(out);
    write_corpus(corpus, out);
    std::printf("wrote %zu images over %zu classes to %s\n", corpus.images.size(),
                corpus.class_names.size(), out.string().c_str());
    return kExitOk;
}

int cmd_train(const std::vector<std::string>& args) {
    Schema schema;
    schema.add("data", "", "corpus directory (required)");
    schema.add("out", "", "checkpoint output path (required)");
    schema.add("episodes", "2000", "training episodes");
    schema.add("way", "5", "classes per training episode");
    schema.add("shot", "5", "supports per class");
    schema.add("lat", "cls-reg", "training losses: off | cls | cls-reg");
    schema.add("lambda-s", "0.2", "similarity loss weight");
    schema.add("lambda-r", "0.0001", "regularization loss weight");
    schema.add("gamma", "0.6", "matching-distance weight in the training metric");
    schema.add("scale", "10.0", "softmax scale on negative distances");
    schema.add("per-location-norm", "false", "per-location normalization variant");
    schema.add("lr-schedule", "0:0.0005,1200:0.00005,1800:0.000005", "episode:rate list");
    schema.add("momentum", "0.9", "SGD momentum");
    schema.add("pretrain-batches", "0", "batch pre-training steps (0 = off)");
    schema.add("pretrain-batch-size", "32", "pre-training batch size");
    schema.add("pretrain-lr", "0.1", "pre-training learning rate");
    schema.add("leave-one-out", "false", "exclude the query from its own prototype");
    schema.add("augment", "true", "flip/crop augmentation during training");
    schema.add("log", "", "optional training-log CSV path");
    schema.add("seed", "0", "training seed");
    if (wants_help(args)) return print_help("train", schema);
    Resolved r = resolve(schema, args);
    print_resolved("train", schema, r);

    const fs::path data = require(r, "data");
    const fs::path out = require(r, "out");

    TrainConfig cfg;
    cfg.episodes_total = r.integer("episodes");
    cfg.way = r.integer("way");
    cfg.shot = r.integer("shot");
    cfg.lat = parse_lat(r.str("lat"));
    cfg.weights.lambda_s = r.number("lambda-s");
    cfg.weights.lambda_r = r.number("lambda-r");
    cfg.metric = metric_from(r);
    cfg.lr_schedule = parse_schedule(r.str("lr-schedule"));
    cfg.momentum = r.number("momentum");
    cfg.pretrain_batches = r.integer("pretrain-batches");
    cfg.pretrain_batch_size = r.integer("pretrain-batch-size");
    cfg.pretrain_lr = r.number("pretrain-lr");
    cfg.leave_one_out = r.boolean("leave-one-out");
    cfg.augment_images = r.boolean("augment");
    cfg.seed = r.seed();
    cfg.validate();

    Corpus corpus = load_corpus(data);
    BackboneArch arch;
    arch.input_side = corpus.side;
    arch.in_channels = corpus.channels;
    arch.num_classes = corpus.num_base_classes();

    std::vector<TrainLogRow> log;
    BackboneParams params =
        train(corpus, cfg, arch, r.str("log").empty() ? nullptr : &log);
    save_checkpoint(params, out);
    if (!r.str("log").empty()) write_training_log(log, r.str("log"));
    std::printf("saved checkpoint to %s\n", out.string().c_str());
    return kExitOk;
}

int cmd_eval(const std::vector<std::string>& args) {
    Schema schema;
    schema.add("ckpt", "", "checkpoint path (required)");
    schema.add("data", "", "corpus directory (required)");
    schema.add("split", "novel", "base | val | novel");
    schema.add("way", "5", "classes per episode");
    schema.add("shot", "1", "supports per class");
    schema.add("queries", "15", "queries per class");
    schema.add("episodes", "1000", "evaluation episodes");
    schema.add("mode", "local", "local | pooled-baseline");
    schema.add("gamma", "0.6", "matching-distance weight");
    schema.add("beta", "0.8", "transfer blend weight (with --lkt on)");
    schema.add("scale", "10.0", "softmax scale on negative distances");
    schema.add("per-location-norm", "false", "per-location normalization variant");
    schema.add("lkt", "off", "knowledge-transfer refinement: off | on");
    schema.add("workers", "1", "evaluation worker threads");
    schema.add("out", "", "optional per-episode accuracy CSV path");
    schema.add("seed", "0", "episode-sampling seed");
    if (wants_help(args)) return print_help("eval", schema);
    Resolved r = resolve(schema, args);
    print_resolved("eval", schema, r);

    Corpus corpus = load_corpus(require(r, "data"));
    BackboneParams params = load_checkpoint(require(r, "ckpt"));

    EvalMode mode;
    if (r.str("mode") == "local")
        mode = EvalMode::local;
    else if (r.str("mode") == "pooled-baseline")
        mode = EvalMode::pooled_baseline;
    else
        throw InvalidConfig("--mode: expected local or pooled-baseline, got '" + r.str("mode") +
                            "'");

    std::optional<TransferConfig> transfer;
    if (r.boolean("lkt")) {
        TransferConfig t;
        t.beta = r.number("beta");
        transfer = t;
    }

    Extractor extract = [&params](const Tensor& image, int idx) {
        return forward_features(params, image, idx).values;
    };
    EvalReport report = evaluate_with(
        corpus, extract, &params, split_from_name(r.str("split")), r.integer("way"),
        r.integer("shot"), r.integer("episodes"), metric_from(r), transfer, mode, r.seed(),
        r.integer("workers"), r.integer("queries"));
    std::printf("%s\n", eval_summary_line(report).c_str());
    if (!r.str("out").empty()) write_eval_csv(report, r.str("out"));
    return kExitOk;
}

int cmd_ablate(const std::vector<std::string>& args) {
    Schema schema;
    schema.add("data", "", "corpus directory (required)");
    schema.add("out", "report.csv", "ladder report CSV path");
    schema.add("episodes", "2000", "training episodes per checkpoint");
    schema.add("way", "5", "classes per training episode");
    schema.add("shot", "5", "supports per class during training");
    schema.add("eval-way", "5", "classes per evaluation episode");
    schema.add("eval-episodes", "400", "evaluation episodes per cell");
    schema.add("eval-split", "novel", "base | val | novel");
    schema.add("lambda-s", "0.2", "similarity loss weight");
    schema.add("lambda-r", "0.0001", "regularization loss weight");
    schema.add("gamma", "0.6", "matching-distance weight");
    schema.add("beta", "0.8", "transfer blend weight");
    schema.add("scale", "10.0", "softmax scale on negative distances");
    schema.add("per-location-norm", "false", "per-location normalization variant");
    schema.add("lr-schedule", "0:0.0005,1200:0.00005,1800:0.000005", "episode:rate list");
    schema.add("momentum", "0.9", "SGD momentum");
    schema.add("augment", "true", "flip/crop augmentation during training");
    schema.add("workers", "1", "evaluation worker threads");
    schema.add("seed", "0", "training + evaluation seed");
    if (wants_help(args)) return print_help("ablate", schema);
    Resolved r = resolve(schema, args);
    print_resolved("ablate", schema, r);

    Corpus corpus = load_corpus(require(r, "data"));

    AblationConfig cfg;
    cfg.train.episodes_total = r.integer("episodes");
    cfg.train.way = r.integer("way");
    cfg.train.shot = r.integer("shot");
    cfg.train.weights.lambda_s = r.number("lambda-s");
    cfg.train.weights.lambda_r = r.number("lambda-r");
    cfg.train.metric = metric_from(r);
    cfg.train.lr_schedule = parse_schedule(r.str("lr-schedule"));
    cfg.train.momentum = r.number("momentum");
    cfg.train.augment_images = r.boolean("augment");
    cfg.train.seed = r.seed();
    cfg.train.validate();
    cfg.eval_way = r.integer("eval-way");
    cfg.eval_episodes = r.integer("eval-episodes");
    cfg.eval_split = split_from_name(r.str("eval-split"));
    cfg.gamma = r.number("gamma");
    cfg.beta = r.number("beta");
    cfg.softmax_scale = r.number("scale");
    cfg.workers = r.integer("workers");

    const std::vector<AblationRow> rows = run_ablation(corpus, cfg);

    std::ofstream out(r.str("out"), std::ios::binary);
    if (!out) throw IOFailure("cannot open " + r.str("out"));
    out << "lat,lsm,lkt,acc_1shot,ci_1shot,acc_5shot,ci_5shot\n";
    std::printf("%-8s %-8s %-4s %16s %16s\n", "LAT", "LSM", "LKT", "1-shot", "5-shot");
    for (const auto& row : rows) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%s,%s,%s,%.6f,%.6f,%.6f,%.6f\n", row.lat.c_str(),
                      row.lsm.c_str(), row.lkt.c_str(), row.acc_1shot, row.ci_1shot,
                      row.acc_5shot, row.ci_5shot);
        out << buf;
        std::printf("%-8s %-8s %-4s  %6.2f%% ± %4.2f  %6.2f%% ± %4.2f\n", row.lat.c_str(),
                    row.lsm.c_str(), row.lkt.c_str(), 100 * row.acc_1shot, 100 * row.ci_1shot,
                    100 * row.acc_5shot, 100 * row.ci_5shot);
    }
    if (!out) throw IOFailure("write failed: " + r.str("out"));
    std::printf("wrote %s\n", r.str("out").c_str());
    return kExitOk;
}

int cmd_heatmap(const std::vector<std::string>& args) {
    Schema schema;
    schema.add("ckpt", "", "checkpoint path (required)");
    schema.add("image", "", "input PGM path (required)");
    schema.add("out", "", "output prefix, writes <out>.pgm and <out>.csv (required)");
    schema.add("seed", "0", "unused, accepted for uniformity");
    if (wants_help(args)) return print_help("heatmap", schema);
    Resolved r = resolve(schema, args);
    print_resolved("heatmap", schema, r);

    BackboneParams params = load_checkpoint(require(r, "ckpt"));
    Tensor image = read_pgm(require(r, "image"));
    export_heatmap(params, image, require(r, "out"));
    std::printf("wrote %s.pgm and %s.csv\n", r.str("out").c_str(), r.str("out").c_str());
    return kExitOk;
}

int usage(std::FILE* to) {
    std::fprintf(to,
                 "usage: lls <command> [--key value ...]\n"
                 "\n"
                 "commands:\n"
                 "  gen-data   write a synthetic glyph corpus (PGMs + manifest.csv)\n"
                 "  train      episodic training, saves a checkpoint\n"
                 "  eval       few-shot evaluation of a checkpoint\n"
                 "  ablate     train 3 checkpoints and print the 6-row ladder\n"
                 "  heatmap    export the per-location feature-norm grid\n"
                 "\n"
                 "common options: --config FILE (key = value lines, # comments),\n"
                 "--preset paper-mini|paper-tiered|paper-cifar, --seed N (or LLS_SEED).\n"
                 "Run `lls <command> --help` to list every key with its default.\n");
    return to == stdout ? kExitOk : kExitConfig;
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) return usage(stderr);
    const std::string command = argv[1];
    std::vector<std::string> args(argv + 2, argv + argc);

    if (command == "--help" || command == "help") return usage(stdout);

    try {
        if (command == "gen-data") return cmd_gen_data(args);
        if (command == "train") return cmd_train(args);
        if (command == "eval") return cmd_eval(args);
        if (command == "ablate") return cmd_ablate(args);
        if (command == "heatmap") return cmd_heatmap(args);
        std::fprintf(stderr, "unknown command '%s'\n\n", command.c_str());
        return usage(stderr);
    } catch (const DivergedLoss& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitDiverged;
    } catch (const IOFailure& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitIO;
    } catch (const MissingManifest& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitIO;
    } catch (const CorruptImage& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitIO;
    } catch (const fs::filesystem_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitIO;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "unexpected error: %s\n", e.what());
        return 1;
    }
}
