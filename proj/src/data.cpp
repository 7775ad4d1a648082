#include "lls/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

namespace lls {

namespace fs = std::filesystem;

const char* split_name(Split s) {
    switch (s) {
        case Split::base: return "base";
        case Split::val: return "val";
        case Split::novel: return "novel";
    }
    return "?";
}

Split split_from_name(const std::string& name) {
    if (name == "base") return Split::base;
    if (name == "val") return Split::val;
    if (name == "novel") return Split::novel;
    throw InvalidConfig("unknown split name: " + name);
}

std::vector<int> Corpus::classes_in(Split split) const {
    std::set<int> seen;
    for (const auto& img : images)
        if (img.split == split) seen.insert(img.class_id);
    return {seen.begin(), seen.end()};
}

std::vector<int> Corpus::images_of(int class_id, Split split) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < images.size(); ++i)
        if (images[i].class_id == class_id && images[i].split == split)
            out.push_back(static_cast<int>(i));
    return out;
}

int Corpus::num_base_classes() const { return static_cast<int>(classes_in(Split::base).size()); }

int Corpus::base_label(int class_id) const {
    std::vector<int> base = classes_in(Split::base);
    auto it = std::lower_bound(base.begin(), base.end(), class_id);
    if (it == base.end() || *it != class_id)
        throw LabelOutOfRange("base_label: class not in base split");
    return static_cast<int>(it - base.begin());
}

// ---------------------------------------------------------------------------
// glyph rendering
// ---------------------------------------------------------------------------

namespace {

constexpr int kNumFamilies = 12;

struct GlyphClass {
    int family;
    double base_rotation;  // radians
    double base_scale;
    double stroke;      // half thickness in glyph units
    double detail;      // family-specific parameter (counts, radii)
    double foreground;  // ink intensity
};

// Membership test in centered glyph coordinates (u,v) roughly in [-1,1].
bool glyph_inside(const GlyphClass& g, double u, double v) {
    const double r = std::sqrt(u * u + v * v);
    const double t = g.stroke;
    switch (g.family) {
        case 0:  // disk
            return r < 0.55;
        case 1:  // ring
            return std::abs(r - 0.55) < t;
        case 2:  // plus cross
            return (std::abs(u) < t && std::abs(v) < 0.7) ||
                   (std::abs(v) < t && std::abs(u) < 0.7);
        case 3:  // horizontal bars
            return std::abs(u) < 0.7 &&
                   std::fmod(std::abs(v * g.detail + 10.0), 1.0) < 0.45 && std::abs(v) < 0.75;
        case 4:  // vertical bars
            return std::abs(v) < 0.7 &&
                   std::fmod(std::abs(u * g.detail + 10.0), 1.0) < 0.45 && std::abs(u) < 0.75;
        case 5:  // checkerboard
            return std::abs(u) < 0.75 && std::abs(v) < 0.75 &&
                   (static_cast<int>(std::floor(u * g.detail)) +
                    static_cast<int>(std::floor(v * g.detail))) % 2 == 0;
        case 6:  // filled triangle
            return v > -0.55 && v < 0.6 && std::abs(u) < (0.6 - v) * 0.55;
        case 7:  // square outline
            return std::max(std::abs(u), std::abs(v)) < 0.62 &&
                   std::max(std::abs(u), std::abs(v)) > 0.62 - 2.0 * t;
        case 8:  // diagonal stripe
            return std::abs(u - v) < 1.4 * t && r < 0.85;
        case 9:  // X shape
            return (std::abs(u - v) < 1.1 * t || std::abs(u + v) < 1.1 * t) && r < 0.75;
        case 10: {  // dot grid
            const double p = 1.0 / g.detail;
            const double du = std::fmod(std::abs(u) + 0.5 * p, p) - 0.5 * p;
            const double dv = std::fmod(std::abs(v) + 0.5 * p, p) - 0.5 * p;
            return std::abs(u) < 0.7 && std::abs(v) < 0.7 && du * du + dv * dv < t * t;
        }
        case 11:  // half disk
            return r < 0.6 && v > -t;
    }
    return false;
}

GlyphClass make_class(int class_index, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    GlyphClass g;
    g.family = class_index % kNumFamilies;
    g.base_rotation = unit(rng) * 2.0 * std::numbers::pi;
    g.base_scale = 0.75 + 0.4 * unit(rng);
    g.stroke = 0.10 + 0.14 * unit(rng);
    g.detail = 2.0 + std::floor(unit(rng) * 3.0);
    g.foreground = 0.65 + 0.3 * unit(rng);
    return g;
}

Tensor render_glyph(const GlyphClass& g, int side, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double rot = g.base_rotation + (unit(rng) - 0.5) * 0.6;  // +-~17 degrees
    const double sc = g.base_scale * (0.85 + 0.3 * unit(rng));
    const double tx = (unit(rng) - 0.5) * 0.45;
    const double ty = (unit(rng) - 0.5) * 0.45;
    const double noise_sigma = 0.09;
    const double background = 0.08 + 0.08 * unit(rng);
    const double cr = std::cos(-rot), sr = std::sin(-rot);

    Tensor img = zeros({1, side, side});
    double* px = img.ptr();
    const double half = side / 2.0;
    for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
            const double nx = (x + 0.5 - half) / half - tx;
            const double ny = (y + 0.5 - half) / half - ty;
            const double u = (cr * nx - sr * ny) / sc;
            const double v = (sr * nx + cr * ny) / sc;
            double val = glyph_inside(g, u, v) ? g.foreground : background;
            val += gauss(rng) * noise_sigma;
            px[y * side + x] = std::clamp(val, 0.0, 1.0);
        }
    }
    return img;
}

}  // namespace

Corpus generate_glyph_corpus(int num_base, int num_val, int num_novel, int per_class, int side,
                             std::uint64_t seed) {
    if (num_base < 1 || num_val < 1 || num_novel < 1 || per_class < 1)
        throw InvalidConfig("generate_glyph_corpus: counts must be >= 1");
    if (side < 16 || side % 16 != 0)
        throw InvalidConfig("generate_glyph_corpus: side must be a positive multiple of 16");

    Corpus corpus;
    corpus.side = side;
    corpus.channels = 1;
    const int total = num_base + num_val + num_novel;
    std::mt19937_64 class_rng(seed);
    for (int c = 0; c < total; ++c) {
        GlyphClass g = make_class(c, class_rng);
        Split split = c < num_base            ? Split::base
                      : c < num_base + num_val ? Split::val
                                               : Split::novel;
        corpus.class_names.push_back("glyph_" + std::to_string(c));
        std::mt19937_64 sample_rng(seed ^ (0x9e3779b97f4a7c15ULL * (c + 1)));
        for (int s = 0; s < per_class; ++s) {
            CorpusImage img;
            img.image = render_glyph(g, side, sample_rng);
            img.class_id = c;
            img.split = split;
            char buf[64];
            std::snprintf(buf, sizeof(buf), "c%03d_s%04d.pgm", c, s);
            img.filename = buf;
            corpus.images.push_back(std::move(img));
        }
    }
    return corpus;
}

// ---------------------------------------------------------------------------
// PGM + manifest IO
// ---------------------------------------------------------------------------

void write_pgm(const fs::path& path, const Tensor& image) {
    if (image.shape.size() != 3 || image.shape[0] != 1)
        throw IOFailure("write_pgm: expected 1×h×w grayscale tensor");
    const int h = image.shape[1], w = image.shape[2];
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IOFailure("write_pgm: cannot open " + path.string());
    out << "P5\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(w) * h);
    for (std::size_t i = 0; i < row.size(); ++i) {
        const double v = std::clamp(image.ptr()[i], 0.0, 1.0);
        row[i] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    if (!out) throw IOFailure("write_pgm: short write to " + path.string());
}

Tensor read_pgm(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IOFailure("read_pgm: cannot open " + path.string());
    std::string magic;
    in >> magic;
    if (magic != "P5") throw CorruptImage("read_pgm: not a P5 file: " + path.string());
    int w = 0, h = 0, maxval = 0;
    in >> w >> h >> maxval;
    if (!in || w <= 0 || h <= 0 || maxval != 255)
        throw CorruptImage("read_pgm: bad header in " + path.string());
    in.get();  // single whitespace after maxval
    std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size()))
        throw CorruptImage("read_pgm: truncated pixel data in " + path.string());
    Tensor img = zeros({1, h, w});
    for (std::size_t i = 0; i < raw.size(); ++i) img.ptr()[i] = raw[i] / 255.0;
    return img;
}

void write_corpus(const Corpus& corpus, const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    std::ofstream manifest(dir / "manifest.csv", std::ios::binary);
    if (!manifest) throw IOFailure("write_corpus: cannot create manifest in " + dir.string());
    manifest << "filename,class_id,class_name,split\n";
    for (const auto& img : corpus.images) {
        write_pgm(dir / img.filename, img.image);
        manifest << img.filename << "," << img.class_id << ","
                 << corpus.class_names[img.class_id] << "," << split_name(img.split) << "\n";
    }
    if (!manifest) throw IOFailure("write_corpus: manifest write failed");
}

Corpus load_corpus(const fs::path& dir) {
    const fs::path manifest_path = dir / "manifest.csv";
    std::ifstream manifest(manifest_path);
    if (!manifest) throw MissingManifest("load_corpus: no manifest.csv in " + dir.string());
    std::string line;
    if (!std::getline(manifest, line) ||
        line.find("filename,class_id,class_name,split") != 0)
        throw MissingManifest("load_corpus: manifest header missing or malformed");

    Corpus corpus;
    corpus.channels = 1;
    std::map<int, Split> class_split;
    std::map<int, std::string> names;
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string filename, class_id_s, class_name, split_s;
        if (!std::getline(ss, filename, ',') || !std::getline(ss, class_id_s, ',') ||
            !std::getline(ss, class_name, ',') || !std::getline(ss, split_s))
            throw MissingManifest("load_corpus: malformed manifest row: " + line);
        CorpusImage img;
        img.class_id = std::stoi(class_id_s);
        img.split = split_from_name(split_s);
        img.filename = filename;
        auto [it, inserted] = class_split.emplace(img.class_id, img.split);
        if (!inserted && it->second != img.split)
            throw SplitOverlap("load_corpus: class " + class_id_s + " listed in two splits");
        names[img.class_id] = class_name;
        img.image = read_pgm(dir / filename);
        if (corpus.side == 0)
            corpus.side = img.image.shape[1];
        else if (img.image.shape[1] != corpus.side || img.image.shape[2] != corpus.side)
            throw CorruptImage("load_corpus: inconsistent image sides");
        corpus.images.push_back(std::move(img));
    }
    if (corpus.images.empty()) throw MissingManifest("load_corpus: manifest has no rows");
    const int max_class = class_split.rbegin()->first;
    corpus.class_names.assign(max_class + 1, "");
    for (const auto& [cid, name] : names) corpus.class_names[cid] = name;
    return corpus;
}

// ---------------------------------------------------------------------------
// episodes + augmentation
// ---------------------------------------------------------------------------

Episode sample_episode(const Corpus& corpus, Split split, int way, int shot,
                       int queries_per_class, std::uint64_t seed) {
    if (way < 1 || shot < 1 || queries_per_class < 0)
        throw InvalidConfig("sample_episode: need way >= 1, shot >= 1, queries >= 0");
    std::vector<int> classes = corpus.classes_in(split);
    if (static_cast<int>(classes.size()) < way)
        throw InsufficientClasses("sample_episode: split has fewer than N classes");
    std::mt19937_64 rng(seed);
    // uniform class choice without replacement
    for (int i = 0; i < way; ++i) {
        std::uniform_int_distribution<int> pick(i, static_cast<int>(classes.size()) - 1);
        std::swap(classes[i], classes[pick(rng)]);
    }
    Episode ep;
    ep.way = way;
    ep.shot = shot;
    for (int label = 0; label < way; ++label) {
        const int cid = classes[label];
        std::vector<int> pool = corpus.images_of(cid, split);
        if (static_cast<int>(pool.size()) < shot + queries_per_class)
            throw InsufficientSamples("sample_episode: class " + std::to_string(cid) +
                                      " has fewer than K+Q samples");
        for (int i = 0; i < shot + queries_per_class; ++i) {
            std::uniform_int_distribution<int> pick(i, static_cast<int>(pool.size()) - 1);
            std::swap(pool[i], pool[pick(rng)]);
        }
        ep.class_map.push_back(cid);
        for (int i = 0; i < shot; ++i) ep.support.push_back({pool[i], label, cid});
        for (int i = 0; i < queries_per_class; ++i)
            ep.query.push_back({pool[shot + i], label, cid});
    }
    return ep;
}

Tensor hflip(const Tensor& image) {
    if (image.shape.size() != 3) throw ShapeMismatch("hflip: expected ch×h×w");
    const int ch = image.shape[0], h = image.shape[1], w = image.shape[2];
    Tensor out = zeros(image.shape);
    const double* in = image.ptr();
    double* o = out.ptr();
    for (int c = 0; c < ch; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                o[(static_cast<std::size_t>(c) * h + y) * w + x] =
                    in[(static_cast<std::size_t>(c) * h + y) * w + (w - 1 - x)];
    return out;
}

Tensor augment_with(const Tensor& image, bool flip, int offset_y, int offset_x) {
    if (image.shape.size() != 3) throw ShapeMismatch("augment: expected ch×s×s");
    const int ch = image.shape[0], h = image.shape[1], w = image.shape[2];
    constexpr int pad = 4;
    Tensor src = flip ? hflip(image) : image;
    Tensor out = zeros(image.shape);
    const double* in = src.ptr();
    double* o = out.ptr();
    for (int c = 0; c < ch; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                // position inside the padded canvas that lands on (y,x)
                const int sy = y + offset_y - pad;
                const int sx = x + offset_x - pad;
                double v = 0.0;
                if (sy >= 0 && sy < h && sx >= 0 && sx < w)
                    v = in[(static_cast<std::size_t>(c) * h + sy) * w + sx];
                o[(static_cast<std::size_t>(c) * h + y) * w + x] = v;
            }
    return out;
}

Tensor augment(const Tensor& image, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> coin(0, 1);
    std::uniform_int_distribution<int> off(0, 8);
    const bool flip = coin(rng) == 1;
    const int oy = off(rng);
    const int ox = off(rng);
    return augment_with(image, flip, oy, ox);
}

}  // namespace lls
