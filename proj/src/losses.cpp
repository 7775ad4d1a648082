#include "lls/losses.hpp"

#include <algorithm>
#include <string>

namespace lls {

namespace {

// Mean of maps excluding index `skip` (-1 for none), summed ascending.
Tensor mean_excluding(Tape* tape, const std::vector<std::pair<Tensor, int>>& maps, int cls,
                      int skip) {
    Tensor acc;
    int count = 0;
    for (std::size_t i = 0; i < maps.size(); ++i) {
        if (maps[i].second != cls || static_cast<int>(i) == skip) continue;
        acc = count == 0 ? maps[i].first : add(tape, acc, maps[i].first);
        ++count;
    }
    if (count == 0)
        throw EmptyClass("similarity_loss: class " + std::to_string(cls) +
                         " has no prototype members");
    return count == 1 ? acc : scale(tape, acc, 1.0 / count);
}

}  // namespace

Tensor similarity_loss(Tape* tape, const std::vector<std::pair<Tensor, int>>& episode_maps,
                       const MetricConfig& cfg, bool leave_one_out) {
    if (episode_maps.empty()) throw EmptyClass("similarity_loss: empty episode");
    int way = 0;
    for (const auto& [m, y] : episode_maps) way = std::max(way, y + 1);
    if (way < 2) throw EmptyClass("similarity_loss: needs at least two classes");

    std::vector<Prototype> shared = compute_prototypes(tape, episode_maps, way);

    Tensor loss;
    for (std::size_t i = 0; i < episode_maps.size(); ++i) {
        const Tensor& x = episode_maps[i].first;
        const int y = episode_maps[i].second;
        std::vector<Tensor> neg_scaled;
        neg_scaled.reserve(way);
        for (int c = 0; c < way; ++c) {
            Tensor proto = (leave_one_out && c == y)
                               ? mean_excluding(tape, episode_maps, c, static_cast<int>(i))
                               : shared[c].values;
            neg_scaled.push_back(
                scale(tape, combined_distance(tape, x, proto, cfg), -cfg.softmax_scale));
        }
        Tensor ce = cross_entropy_logits(tape, stack_scalars(tape, neg_scaled), y);
        loss = loss.defined() ? add(tape, loss, ce) : ce;
    }
    return loss;
}

Tensor local_classification_loss(Tape* tape,
                                 const std::vector<std::pair<Tensor, int>>& maps_with_labels,
                                 const Tensor& classifier_W) {
    if (maps_with_labels.empty()) throw EmptyClass("local_classification_loss: empty episode");
    const int c = classifier_W.shape[1];
    Tensor loss;
    for (const auto& [fmap, label] : maps_with_labels) {
        if (label < 0 || label >= c)
            throw LabelOutOfRange("local_classification_loss: label " + std::to_string(label) +
                                  " outside [0, " + std::to_string(c) + ")");
        Tensor logits = conv1x1(tape, fmap, classifier_W);
        Tensor ce = spatial_cross_entropy(tape, logits, label);
        loss = loss.defined() ? add(tape, loss, ce) : ce;
    }
    return loss;
}

Tensor local_regularization_loss(Tape* tape, const std::vector<Tensor>& maps) {
    if (maps.empty()) throw EmptyClass("local_regularization_loss: empty episode");
    Tensor loss;
    for (const auto& fmap : maps) {
        if (fmap.shape.size() != 3 || fmap.shape[1] * fmap.shape[2] < 2)
            throw DegenerateMap("local_regularization_loss: needs at least two locations");
        Tensor v = variance(tape, location_norms(tape, fmap));
        loss = loss.defined() ? add(tape, loss, v) : v;
    }
    return loss;
}

Tensor total_objective(Tape* tape, const EpisodeMaps& episode, const Tensor& classifier_W,
                       const MetricConfig& cfg, const LossWeights& weights, bool leave_one_out) {
    if (episode.maps.size() != episode.episode_labels.size() ||
        episode.maps.size() != episode.base_labels.size())
        throw ShapeMismatch("total_objective: label lists disagree with maps");
    std::vector<std::pair<Tensor, int>> sim, cls;
    sim.reserve(episode.maps.size());
    cls.reserve(episode.maps.size());
    for (std::size_t i = 0; i < episode.maps.size(); ++i) {
        sim.emplace_back(episode.maps[i], episode.episode_labels[i]);
        cls.emplace_back(episode.maps[i], episode.base_labels[i]);
    }
    Tensor j = local_classification_loss(tape, cls, classifier_W);
    if (weights.lambda_s != 0.0)
        j = add(tape, j, scale(tape, similarity_loss(tape, sim, cfg, leave_one_out),
                               weights.lambda_s));
    if (weights.lambda_r != 0.0)
        j = add(tape, j,
                scale(tape, local_regularization_loss(tape, episode.maps), weights.lambda_r));
    return j;
}

}  // namespace lls
