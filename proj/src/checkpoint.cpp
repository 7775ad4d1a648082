#include "lls/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace lls {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

constexpr char kMagic[4] = {'L', 'L', 'S', '1'};
constexpr std::uint32_t kVersion = 1;

struct Record {
    std::string name;
    std::vector<int> dims;
    std::vector<double> values;
};

void write_record(std::ofstream& out, const Record& r) {
    const std::uint16_t name_len = static_cast<std::uint16_t>(r.name.size());
    out.write(reinterpret_cast<const char*>(&name_len), 2);
    out.write(r.name.data(), name_len);
    const std::uint8_t ndim = static_cast<std::uint8_t>(r.dims.size());
    out.write(reinterpret_cast<const char*>(&ndim), 1);
    for (int d : r.dims) {
        const std::uint32_t v = static_cast<std::uint32_t>(d);
        out.write(reinterpret_cast<const char*>(&v), 4);
    }
    std::vector<float> f(r.values.begin(), r.values.end());
    out.write(reinterpret_cast<const char*>(f.data()),
              static_cast<std::streamsize>(f.size() * sizeof(float)));
}

Record read_record(std::ifstream& in) {
    Record r;
    std::uint16_t name_len = 0;
    in.read(reinterpret_cast<char*>(&name_len), 2);
    r.name.resize(name_len);
    in.read(r.name.data(), name_len);
    std::uint8_t ndim = 0;
    in.read(reinterpret_cast<char*>(&ndim), 1);
    std::size_t count = 1;
    for (int i = 0; i < ndim; ++i) {
        std::uint32_t v = 0;
        in.read(reinterpret_cast<char*>(&v), 4);
        r.dims.push_back(static_cast<int>(v));
        count *= v;
    }
    std::vector<float> f(count);
    in.read(reinterpret_cast<char*>(f.data()),
            static_cast<std::streamsize>(count * sizeof(float)));
    if (!in) throw IOFailure("checkpoint: truncated record " + r.name);
    r.values.assign(f.begin(), f.end());
    return r;
}

std::vector<Record> collect(const BackboneParams& p) {
    std::vector<Record> recs;
    recs.push_back({"arch",
                    {static_cast<int>(7)},
                    {static_cast<double>(p.arch.input_side), static_cast<double>(p.arch.in_channels),
                     static_cast<double>(p.arch.widths[0]), static_cast<double>(p.arch.widths[1]),
                     static_cast<double>(p.arch.widths[2]), static_cast<double>(p.arch.widths[3]),
                     static_cast<double>(p.arch.num_classes)}});
    for (int b = 0; b < 4; ++b) {
        const std::string prefix = "block" + std::to_string(b) + ".";
        const auto& blk = p.blocks[b];
        recs.push_back({prefix + "kernel", blk.kernel.shape, *blk.kernel.data});
        recs.push_back({prefix + "gamma", blk.gamma.shape, *blk.gamma.data});
        recs.push_back({prefix + "beta", blk.beta.shape, *blk.beta.data});
        recs.push_back({prefix + "running_mean",
                        {static_cast<int>(blk.running_mean.size())},
                        blk.running_mean});
        recs.push_back({prefix + "running_var",
                        {static_cast<int>(blk.running_var.size())},
                        blk.running_var});
    }
    recs.push_back({"classifier_w", p.classifier_W.shape, *p.classifier_W.data});
    return recs;
}

}  // namespace

void save_checkpoint(const BackboneParams& params, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IOFailure("save_checkpoint: cannot open " + path.string());
    out.write(kMagic, 4);
    out.write(reinterpret_cast<const char*>(&kVersion), 4);
    std::vector<Record> recs = collect(params);
    const std::uint32_t count = static_cast<std::uint32_t>(recs.size());
    out.write(reinterpret_cast<const char*>(&count), 4);
    for (const auto& r : recs) write_record(out, r);
    if (!out) throw IOFailure("save_checkpoint: write failed for " + path.string());
}

BackboneParams load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IOFailure("load_checkpoint: cannot open " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw IOFailure("load_checkpoint: bad magic in " + path.string());
    std::uint32_t version = 0, count = 0;
    in.read(reinterpret_cast<char*>(&version), 4);
    in.read(reinterpret_cast<char*>(&count), 4);
    if (version != kVersion) throw IOFailure("load_checkpoint: unsupported version");

    std::vector<Record> recs;
    for (std::uint32_t i = 0; i < count; ++i) recs.push_back(read_record(in));

    auto find = [&](const std::string& name) -> Record& {
        for (auto& r : recs)
            if (r.name == name) return r;
        throw IOFailure("load_checkpoint: missing record " + name);
    };

    Record& arch_r = find("arch");
    BackboneArch arch;
    arch.input_side = static_cast<int>(arch_r.values[0]);
    arch.in_channels = static_cast<int>(arch_r.values[1]);
    for (int i = 0; i < 4; ++i) arch.widths[i] = static_cast<int>(arch_r.values[2 + i]);
    arch.num_classes = static_cast<int>(arch_r.values[6]);

    BackboneParams p;
    p.arch = arch;
    for (int b = 0; b < 4; ++b) {
        const std::string prefix = "block" + std::to_string(b) + ".";
        auto& blk = p.blocks[b];
        Record& k = find(prefix + "kernel");
        blk.kernel = Tensor(k.dims, k.values);
        Record& g = find(prefix + "gamma");
        blk.gamma = Tensor(g.dims, g.values);
        Record& be = find(prefix + "beta");
        blk.beta = Tensor(be.dims, be.values);
        blk.running_mean = find(prefix + "running_mean").values;
        blk.running_var = find(prefix + "running_var").values;
    }
    Record& w = find("classifier_w");
    p.classifier_W = Tensor(w.dims, w.values);
    return p;
}

}  // namespace lls
