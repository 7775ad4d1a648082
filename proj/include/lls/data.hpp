#pragma once

// Desk-scale corpus handling: a synthetic parametric glyph generator, P5 PGM
// + manifest.csv persistence, N-way K-shot episode sampling, and training
// augmentation (horizontal flip, 4-pixel-pad random crop).

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "lls/tensor.hpp"

namespace lls {

enum class Split { base, val, novel };

const char* split_name(Split s);
Split split_from_name(const std::string& name);

struct CorpusImage {
    Tensor image;  // ch×s×s in [0,1]
    int class_id = -1;
    Split split = Split::base;
    std::string filename;
};

struct Corpus {
    std::vector<CorpusImage> images;
    std::vector<std::string> class_names;
    int side = 0;
    int channels = 1;

    // Class ids present in a split, ascending.
    std::vector<int> classes_in(Split split) const;
    // Indices of images of one class in one split, ascending.
    std::vector<int> images_of(int class_id, Split split) const;
    int num_base_classes() const;
    // Dense base-category label in [0, c) for L_C; class must be in base.
    int base_label(int class_id) const;
};

struct EpisodeSample {
    int corpus_index = -1;
    int label = -1;     // episode-local, in [0, way)
    int class_id = -1;  // global
};

struct Episode {
    std::vector<EpisodeSample> support;
    std::vector<EpisodeSample> query;
    int way = 0;
    int shot = 0;
    std::vector<int> class_map;  // episode label -> global class id
};

Corpus generate_glyph_corpus(int num_base, int num_val, int num_novel, int per_class, int side,
                             std::uint64_t seed);

void write_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus load_corpus(const std::filesystem::path& dir);

Episode sample_episode(const Corpus& corpus, Split split, int way, int shot, int queries_per_class,
                       std::uint64_t seed);

// Horizontal flip with probability 0.5, then a random crop out of a
// 4-pixel zero-padded canvas back to the original side.
Tensor augment(const Tensor& image, std::mt19937_64& rng);
// Deterministic pieces behind augment().
Tensor hflip(const Tensor& image);
Tensor augment_with(const Tensor& image, bool flip, int offset_y, int offset_x);

// P5 PGM, 8-bit. Values are quantized with round(v*255).
void write_pgm(const std::filesystem::path& path, const Tensor& image);
Tensor read_pgm(const std::filesystem::path& path);

}  // namespace lls
