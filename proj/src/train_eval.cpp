#include "lls/train_eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <thread>

namespace lls {

namespace {

constexpr std::uint64_t kSeedMix = 0x9e3779b97f4a7c15ULL;

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
    std::uint64_t z = seed + kSeedMix * (stream + 1) + 0x2545f4914f6cdd1dULL * (index + 1);
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ULL;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebULL;
    z ^= z >> 31;
    return z;
}

struct SgdState {
    std::vector<std::vector<double>> velocity;

    explicit SgdState(std::vector<Tensor*> params) {
        for (Tensor* p : params) velocity.emplace_back(p->size(), 0.0);
    }

    void step(std::vector<Tensor*> params, double lr, double momentum) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor* p = params[i];
            const double* g = p->grad_ptr();
            double* v = velocity[i].data();
            double* val = p->ptr();
            for (std::size_t j = 0; j < p->size(); ++j) {
                v[j] = momentum * v[j] - lr * g[j];
                val[j] += v[j];
            }
        }
    }
};

void clear_grads(std::vector<Tensor*> params) {
    for (Tensor* p : params) p->clear_grad();
}

// Pooled ProtoNet loss: squared Euclidean distances between pooled vectors,
// raw (unscaled) negative distances through softmax.
Tensor pooled_similarity_loss(Tape* tape, const std::vector<Tensor>& maps,
                              const std::vector<int>& labels, int way) {
    std::vector<std::pair<Tensor, int>> pooled;
    pooled.reserve(maps.size());
    for (std::size_t i = 0; i < maps.size(); ++i)
        pooled.emplace_back(global_avg_pool(tape, maps[i]), labels[i]);
    std::vector<Prototype> protos = compute_prototypes(tape, pooled, way);
    Tensor loss;
    for (std::size_t i = 0; i < pooled.size(); ++i) {
        std::vector<Tensor> neg;
        neg.reserve(way);
        for (int c = 0; c < way; ++c)
            neg.push_back(
                scale(tape, sumsq(tape, sub(tape, pooled[i].first, protos[c].values)), -1.0));
        Tensor ce = cross_entropy_logits(tape, stack_scalars(tape, neg), pooled[i].second);
        loss = loss.defined() ? add(tape, loss, ce) : ce;
    }
    return loss;
}

}  // namespace

double TrainConfig::lr_at(int episode) const {
    double lr = lr_schedule.front().second;
    for (const auto& [start, rate] : lr_schedule)
        if (episode >= start) lr = rate;
    return lr;
}

void TrainConfig::validate() const {
    if (lr_schedule.empty()) throw InvalidConfig("train: empty lr schedule");
    if (lr_schedule.front().first != 0)
        throw InvalidConfig("train: lr schedule must cover episode 0");
    int prev = -1;
    for (const auto& [start, rate] : lr_schedule) {
        if (start <= prev && prev != -1) throw InvalidConfig("train: lr schedule not ascending");
        if (rate < 0.0) throw InvalidConfig("train: negative learning rate");
        prev = start;
    }
    if (episodes_total < 0) throw InvalidConfig("train: negative episode count");
    if (way < 2 || shot < 1) throw InvalidConfig("train: way must be >= 2 and shot >= 1");
}

EvalReport EvalReport::from_accuracies(std::vector<double> accs, std::string config_echo) {
    EvalReport r;
    r.per_episode_accuracy = std::move(accs);
    r.config_echo = std::move(config_echo);
    const std::size_t n = r.per_episode_accuracy.size();
    if (n == 0) throw InvalidConfig("eval report: no per-episode accuracies");
    double sum = 0.0;
    for (double a : r.per_episode_accuracy) sum += a;
    r.mean = sum / static_cast<double>(n);
    double var = 0.0;
    for (double a : r.per_episode_accuracy) {
        const double d = a - r.mean;
        var += d * d;
    }
    var /= static_cast<double>(n);
    r.ci95_halfwidth = 1.96 * std::sqrt(var) / std::sqrt(static_cast<double>(n));
    return r;
}

void pretrain(const Corpus& corpus, BackboneParams& params, const TrainConfig& config) {
    if (config.pretrain_batches <= 0) return;
    std::vector<int> base_pool;
    for (std::size_t i = 0; i < corpus.images.size(); ++i)
        if (corpus.images[i].split == Split::base) base_pool.push_back(static_cast<int>(i));
    if (base_pool.empty()) throw InsufficientSamples("pretrain: empty base split");

    SgdState sgd(params.learnable());
    for (int b = 0; b < config.pretrain_batches; ++b) {
        std::mt19937_64 rng(derive_seed(config.seed, 11, b));
        std::vector<Tensor> images;
        std::vector<int> labels;
        std::uniform_int_distribution<int> pick(0, static_cast<int>(base_pool.size()) - 1);
        for (int i = 0; i < config.pretrain_batch_size; ++i) {
            const int idx = base_pool[pick(rng)];
            Tensor img = corpus.images[idx].image;
            if (config.augment_images) img = augment(img, rng);
            images.push_back(img);
            labels.push_back(corpus.base_label(corpus.images[idx].class_id));
        }
        Tape tape;
        std::vector<Tensor> maps = forward_batch(&tape, params, images, /*training=*/true);
        std::vector<std::pair<Tensor, int>> with_labels;
        for (std::size_t i = 0; i < maps.size(); ++i) with_labels.emplace_back(maps[i], labels[i]);
        Tensor loss = local_classification_loss(&tape, with_labels, params.classifier_W);
        if (!std::isfinite(loss.scalar()) || loss.scalar() > 1e8)
            throw DivergedLoss("pretrain: loss diverged at batch " + std::to_string(b));
        tape.backward(loss);
        sgd.step(params.learnable(), config.pretrain_lr, config.momentum);
        clear_grads(params.learnable());
    }
}

BackboneParams train(const Corpus& corpus, const TrainConfig& config, const BackboneArch& arch,
                     std::vector<TrainLogRow>* log) {
    config.validate();
    BackboneParams params = BackboneParams::init(arch, config.seed);
    if (config.pretrain_batches > 0) pretrain(corpus, params, config);

    SgdState sgd(params.learnable());
    for (int e = 0; e < config.episodes_total; ++e) {
        const double lr = config.lr_at(e);
        Episode ep = sample_episode(corpus, Split::base, config.way, config.shot, 0,
                                    derive_seed(config.seed, 1, e));
        std::mt19937_64 aug_rng(derive_seed(config.seed, 2, e));
        std::vector<Tensor> images;
        std::vector<int> episode_labels, base_labels;
        for (const auto& s : ep.support) {
            Tensor img = corpus.images[s.corpus_index].image;
            if (config.augment_images) img = augment(img, aug_rng);
            images.push_back(img);
            episode_labels.push_back(s.label);
            base_labels.push_back(corpus.base_label(s.class_id));
        }

        Tape tape;
        std::vector<Tensor> maps = forward_batch(&tape, params, images, /*training=*/true);

        double lc_v = 0.0, ls_v = 0.0, lr_v = 0.0;
        Tensor j;
        if (config.lat == LatMode::off) {
            j = pooled_similarity_loss(&tape, maps, episode_labels, config.way);
            ls_v = j.scalar();
        } else {
            std::vector<std::pair<Tensor, int>> sim, cls;
            for (std::size_t i = 0; i < maps.size(); ++i) {
                sim.emplace_back(maps[i], episode_labels[i]);
                cls.emplace_back(maps[i], base_labels[i]);
            }
            Tensor lc = local_classification_loss(&tape, cls, params.classifier_W);
            Tensor ls = similarity_loss(&tape, sim, config.metric, config.leave_one_out);
            lc_v = lc.scalar();
            ls_v = ls.scalar();
            j = add(&tape, lc, scale(&tape, ls, config.weights.lambda_s));
            if (config.lat == LatMode::cls_reg && config.weights.lambda_r != 0.0) {
                Tensor lreg = local_regularization_loss(&tape, maps);
                lr_v = lreg.scalar();
                j = add(&tape, j, scale(&tape, lreg, config.weights.lambda_r));
            }
        }
        const double j_v = j.scalar();
        if (!std::isfinite(j_v) || j_v > 1e8)
            throw DivergedLoss("train: objective diverged at episode " + std::to_string(e) +
                               " (J=" + std::to_string(j_v) + ")");
        if (lr > 0.0) {
            tape.backward(j);
            sgd.step(params.learnable(), lr, config.momentum);
            clear_grads(params.learnable());
        }
        if (log) log->push_back({e, lc_v, ls_v, lr_v, j_v, lr});
    }
    return params;
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

EvalReport evaluate_with(const Corpus& corpus, const Extractor& extract,
                         const BackboneParams* params_for_lkt, Split split, int way, int shot,
                         int n_episodes, const MetricConfig& metric,
                         const std::optional<TransferConfig>& transfer, EvalMode mode,
                         std::uint64_t seed, int workers, int queries_per_class) {
    if (transfer && !params_for_lkt)
        throw InvalidConfig("evaluate: transfer stage requires backbone params");

    // Features are a pure function of the image, so precompute one (and, when
    // LKT is active, one refined) map per split image.
    std::vector<Tensor> raw(corpus.images.size());
    std::vector<Tensor> refined(corpus.images.size());
    for (std::size_t i = 0; i < corpus.images.size(); ++i) {
        if (corpus.images[i].split != split) continue;
        raw[i] = extract(corpus.images[i].image, static_cast<int>(i));
        if (transfer) refined[i] = refine_map(raw[i], *params_for_lkt, *transfer);
    }

    auto support_map = [&](int idx) -> const Tensor& {
        return (transfer && transfer->refine_supports) ? refined[idx] : raw[idx];
    };
    auto query_map = [&](int idx) -> const Tensor& {
        return transfer ? refined[idx] : raw[idx];
    };

    std::vector<double> accs(n_episodes, 0.0);
    auto run_episode = [&](int e) {
        Episode ep =
            sample_episode(corpus, split, way, shot, queries_per_class, derive_seed(seed, 3, e));
        int correct = 0;
        if (mode == EvalMode::pooled_baseline) {
            std::vector<std::pair<Tensor, int>> pooled;
            for (const auto& s : ep.support)
                pooled.emplace_back(global_avg_pool(nullptr, raw[s.corpus_index]), s.label);
            std::vector<Prototype> protos = compute_prototypes(nullptr, pooled, way);
            for (const auto& q : ep.query) {
                Tensor qv = global_avg_pool(nullptr, raw[q.corpus_index]);
                int best = 0;
                double best_d = std::numeric_limits<double>::infinity();
                for (int c = 0; c < way; ++c) {
                    const double d = sumsq(nullptr, sub(nullptr, qv, protos[c].values)).scalar();
                    if (d < best_d) {
                        best_d = d;
                        best = c;
                    }
                }
                if (best == q.label) ++correct;
            }
        } else {
            std::vector<std::pair<Tensor, int>> supports;
            for (const auto& s : ep.support) supports.emplace_back(support_map(s.corpus_index), s.label);
            std::vector<Prototype> protos = compute_prototypes(nullptr, supports, way);
            for (const auto& q : ep.query) {
                const Tensor& qm = query_map(q.corpus_index);
                int best = 0;
                double best_d = std::numeric_limits<double>::infinity();
                for (int c = 0; c < way; ++c) {
                    const double d = combined_distance(qm, protos[c].values, metric);
                    if (d < best_d) {
                        best_d = d;
                        best = c;
                    }
                }
                if (best == q.label) ++correct;
            }
        }
        accs[e] = static_cast<double>(correct) / static_cast<double>(ep.query.size());
    };

    if (workers <= 1) {
        for (int e = 0; e < n_episodes; ++e) run_episode(e);
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w)
            pool.emplace_back([&, w]() {
                for (int e = w; e < n_episodes; e += workers) run_episode(e);
            });
        for (auto& t : pool) t.join();
    }

    char echo[160];
    std::snprintf(echo, sizeof(echo),
                  "mode=%s way=%d shot=%d episodes=%d gamma=%g scale=%g lkt=%s seed=%llu",
                  mode == EvalMode::local ? "local" : "pooled-baseline", way, shot, n_episodes,
                  metric.gamma, metric.softmax_scale, transfer ? "on" : "off",
                  static_cast<unsigned long long>(seed));
    return EvalReport::from_accuracies(std::move(accs), echo);
}

EvalReport evaluate(const Corpus& corpus, const BackboneParams& params, Split split, int way,
                    int shot, int n_episodes, const MetricConfig& metric,
                    const std::optional<TransferConfig>& transfer, EvalMode mode,
                    std::uint64_t seed, int workers) {
    if (!params.all_finite()) throw NonFinite("evaluate: non-finite parameters");
    Extractor extract = [&params](const Tensor& image, int idx) {
        return forward_features(params, image, idx).values;
    };
    return evaluate_with(corpus, extract, &params, split, way, shot, n_episodes, metric, transfer,
                         mode, seed, workers);
}

// ---------------------------------------------------------------------------
// ablation ladder
// ---------------------------------------------------------------------------

std::vector<AblationRow> run_ablation(const Corpus& corpus, const AblationConfig& config) {
    MetricConfig eval_loc_only;  // Loc row: gamma = 0
    eval_loc_only.gamma = 0.0;
    eval_loc_only.softmax_scale = config.softmax_scale;
    MetricConfig eval_full;
    eval_full.gamma = config.gamma;
    eval_full.softmax_scale = config.softmax_scale;
    TransferConfig lkt;
    lkt.beta = config.beta;

    auto train_mode = [&](LatMode lat) {
        TrainConfig tc = config.train;
        tc.lat = lat;
        BackboneArch arch;
        arch.input_side = corpus.side;
        arch.in_channels = corpus.channels;
        arch.num_classes = corpus.num_base_classes();
        return train(corpus, tc, arch);
    };

    BackboneParams ckpt_off = train_mode(LatMode::off);
    BackboneParams ckpt_cls = train_mode(LatMode::cls);
    BackboneParams ckpt_full = train_mode(LatMode::cls_reg);

    struct RowSpec {
        const char *lat, *lsm, *lkt_label;
        const BackboneParams* params;
        EvalMode mode;
        const MetricConfig* metric;
        const std::optional<TransferConfig> transfer;
    };
    const std::optional<TransferConfig> no_lkt;
    const std::vector<RowSpec> specs = {
        {"off", "off", "off", &ckpt_off, EvalMode::pooled_baseline, &eval_full, no_lkt},
        {"Cls", "off", "off", &ckpt_cls, EvalMode::pooled_baseline, &eval_full, no_lkt},
        {"Cls+Reg", "off", "off", &ckpt_full, EvalMode::pooled_baseline, &eval_full, no_lkt},
        {"Cls+Reg", "Loc", "off", &ckpt_full, EvalMode::local, &eval_loc_only, no_lkt},
        {"Cls+Reg", "Loc+Mat", "off", &ckpt_full, EvalMode::local, &eval_full, no_lkt},
        {"Cls+Reg", "Loc+Mat", "on", &ckpt_full, EvalMode::local, &eval_full, lkt},
    };

    std::vector<AblationRow> rows;
    for (const auto& spec : specs) {
        AblationRow row;
        row.lat = spec.lat;
        row.lsm = spec.lsm;
        row.lkt = spec.lkt_label;
        // Same eval seed for every row: paired episodes sharpen the ladder.
        EvalReport r1 = evaluate(corpus, *spec.params, config.eval_split, config.eval_way, 1,
                                 config.eval_episodes, *spec.metric, spec.transfer, spec.mode,
                                 config.train.seed, config.workers);
        EvalReport r5 = evaluate(corpus, *spec.params, config.eval_split, config.eval_way, 5,
                                 config.eval_episodes, *spec.metric, spec.transfer, spec.mode,
                                 config.train.seed, config.workers);
        row.acc_1shot = r1.mean;
        row.ci_1shot = r1.ci95_halfwidth;
        row.acc_5shot = r5.mean;
        row.ci_5shot = r5.ci95_halfwidth;
        rows.push_back(row);
    }
    return rows;
}

// ---------------------------------------------------------------------------
// heatmap + report files
// ---------------------------------------------------------------------------

void export_heatmap(const BackboneParams& params, const Tensor& image,
                    const std::filesystem::path& out_prefix) {
    FeatureMap fmap = forward_features(params, image);
    const int h = fmap.values.shape[1], w = fmap.values.shape[2];
    Tensor norms = location_norms(nullptr, fmap.values);

    double lo = norms.ptr()[0], hi = norms.ptr()[0];
    for (std::size_t i = 0; i < norms.size(); ++i) {
        lo = std::min(lo, norms.ptr()[i]);
        hi = std::max(hi, norms.ptr()[i]);
    }
    Tensor scaled = zeros({1, h, w});
    // degenerate (constant) maps scale to all-zero
    if (hi > lo)
        for (std::size_t i = 0; i < norms.size(); ++i)
            scaled.ptr()[i] = (norms.ptr()[i] - lo) / (hi - lo);
    std::filesystem::path pgm = out_prefix;
    pgm += ".pgm";
    write_pgm(pgm, scaled);

    std::filesystem::path csv = out_prefix;
    csv += ".csv";
    std::ofstream out(csv, std::ios::binary);
    if (!out) throw IOFailure("export_heatmap: cannot open " + csv.string());
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.17g", norms.ptr()[y * w + x]);
            out << buf << (x + 1 < w ? "," : "\n");
        }
    }
    if (!out) throw IOFailure("export_heatmap: csv write failed");
}

void write_training_log(const std::vector<TrainLogRow>& log, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IOFailure("write_training_log: cannot open " + path.string());
    out << "episode,lc,ls,lr_loss,j,learning_rate\n";
    for (const auto& row : log) {
        char buf[200];
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", row.episode, row.lc,
                      row.ls, row.lr_loss, row.j, row.learning_rate);
        out << buf;
    }
    if (!out) throw IOFailure("write_training_log: write failed");
}

void write_eval_csv(const EvalReport& report, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IOFailure("write_eval_csv: cannot open " + path.string());
    out << "episode,accuracy\n";
    for (std::size_t i = 0; i < report.per_episode_accuracy.size(); ++i) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", i, report.per_episode_accuracy[i]);
        out << buf;
    }
    char tail[128];
    std::snprintf(tail, sizeof(tail), "mean,%.17g\nci95_halfwidth,%.17g\n", report.mean,
                  report.ci95_halfwidth);
    out << tail;
    if (!out) throw IOFailure("write_eval_csv: write failed");
}

std::string eval_summary_line(const EvalReport& report) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "acc %.4f±%.4f over %zu episodes", report.mean,
                  report.ci95_halfwidth, report.per_episode_accuracy.size());
    return buf;
}

}  // namespace lls
