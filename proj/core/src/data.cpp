#include "strokeseg/data.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace strokeseg::data {

using nlohmann::json;

std::string modality_name(Modality m) {
    switch (m) {
        case Modality::TMax: return "TMax";
        case Modality::TTP: return "TTP";
        case Modality::DWI: return "DWI";
    }
    return "?";
}

void Case::validate() const {
    for (Modality m : kModalityOrder)
        if (!modalities.count(m)) throw MissingModality(modality_name(m));
    if (penumbra_mask.vox.empty()) throw MissingModality("penumbra");
    if (core_mask.vox.empty()) throw MissingModality("core");

    const auto& ref = modalities.at(Modality::TMax).shape();
    auto check_shape = [&](const Volume& v, const std::string& name) {
        if (v.shape() != ref)
            throw ShapeMismatch("case " + case_id + ": " + name + " has shape " +
                                Tensor::shape_str(v.shape()) + " but TMax has " +
                                Tensor::shape_str(ref));
    };
    check_shape(modalities.at(Modality::TTP), "TTP");
    check_shape(modalities.at(Modality::DWI), "DWI");
    check_shape(penumbra_mask, "penumbra");
    check_shape(core_mask, "core");

    for (const Volume* mask : {&penumbra_mask, &core_mask})
        for (std::int64_t i = 0; i < mask->vox.numel(); ++i)
            if (mask->vox[i] != 0.0f && mask->vox[i] != 1.0f)
                throw ShapeMismatch("case " + case_id + ": mask is not binary");
}

// ---------------------------------------------------------------------------
// rawf32 + sidecar
// ---------------------------------------------------------------------------

Volume read_rawf32(const fs::path& rawf32_path) {
    fs::path sidecar = rawf32_path;
    sidecar.replace_extension(".json");
    std::ifstream js(sidecar);
    if (!js) throw UnreadableFile("missing sidecar " + sidecar.string());
    json meta;
    try {
        js >> meta;
    } catch (const json::exception& e) {
        throw UnreadableFile("bad sidecar " + sidecar.string() + ": " + e.what());
    }

    Volume v;
    try {
        const auto shape = meta.at("shape").get<std::vector<int>>();
        if (shape.size() != 3) throw UnreadableFile("sidecar shape must be [D,H,W]");
        v.vox = Tensor(shape);
        if (meta.contains("spacing")) {
            const auto sp = meta.at("spacing").get<std::vector<double>>();
            if (sp.size() == 3) v.spacing = {sp[0], sp[1], sp[2]};
        }
    } catch (const json::exception& e) {
        throw UnreadableFile("bad sidecar " + sidecar.string() + ": " + e.what());
    }

    std::ifstream raw(rawf32_path, std::ios::binary);
    if (!raw) throw UnreadableFile("cannot open " + rawf32_path.string());
    raw.read(reinterpret_cast<char*>(v.vox.data()),
             static_cast<std::streamsize>(v.vox.numel() * sizeof(float)));
    if (raw.gcount() != static_cast<std::streamsize>(v.vox.numel() * sizeof(float)))
        throw UnreadableFile("truncated rawf32 " + rawf32_path.string());
    return v;
}

void write_rawf32(const Volume& v, const fs::path& rawf32_path) {
    std::ofstream raw(rawf32_path, std::ios::binary);
    if (!raw) throw IOError("cannot write " + rawf32_path.string());
    raw.write(reinterpret_cast<const char*>(v.vox.data()),
              static_cast<std::streamsize>(v.vox.numel() * sizeof(float)));
    if (!raw) throw IOError("short write to " + rawf32_path.string());

    fs::path sidecar = rawf32_path;
    sidecar.replace_extension(".json");
    json meta;
    meta["shape"] = v.vox.shape();
    meta["spacing"] = v.spacing;
    std::ofstream js(sidecar);
    if (!js) throw IOError("cannot write " + sidecar.string());
    js << meta.dump(2) << "\n";
}

Volume read_volume(const fs::path& path) {
    const std::string name = path.filename().string();
    if (name.ends_with(".nii") || name.ends_with(".nii.gz")) return read_nifti(path);
    if (name.ends_with(".rawf32")) return read_rawf32(path);
    throw UnreadableFile("unsupported volume format: " + path.string());
}

// ---------------------------------------------------------------------------
// Case loading
// ---------------------------------------------------------------------------

namespace {

const std::array<const char*, 5> kCaseFiles{"TMax", "TTP", "DWI", "penumbra", "core"};

fs::path resolve_case_file(const fs::path& dir, const std::string& stem) {
    for (const char* ext : {".nii", ".nii.gz", ".rawf32"}) {
        fs::path p = dir / (stem + ext);
        if (fs::exists(p)) return p;
    }
    return {};
}

void binarize(Volume& v) {
    for (std::int64_t i = 0; i < v.vox.numel(); ++i) v.vox[i] = v.vox[i] > 0.5f ? 1.0f : 0.0f;
}

}  // namespace

Case load_case(const fs::path& case_dir) {
    if (!fs::is_directory(case_dir)) throw UnreadableFile("not a directory: " + case_dir.string());
    Case c;
    c.case_id = case_dir.filename().string();

    std::map<std::string, Volume> loaded;
    for (const char* stem : kCaseFiles) {
        const fs::path p = resolve_case_file(case_dir, stem);
        if (p.empty()) throw MissingModality(stem);
        loaded[stem] = read_volume(p);
    }

    c.modalities[Modality::TMax] = std::move(loaded["TMax"]);
    c.modalities[Modality::TTP] = std::move(loaded["TTP"]);
    c.modalities[Modality::DWI] = std::move(loaded["DWI"]);
    c.penumbra_mask = std::move(loaded["penumbra"]);
    c.core_mask = std::move(loaded["core"]);
    binarize(c.penumbra_mask);
    binarize(c.core_mask);

    for (Modality m : kModalityOrder)
        if (!c.modalities.at(m).vox.all_finite())
            throw UnreadableFile("case " + c.case_id + ": non-finite voxels in " +
                                 modality_name(m));
    c.validate();
    return c;
}

void write_case(const Case& c, const fs::path& case_dir) {
    std::error_code ec;
    fs::create_directories(case_dir, ec);
    if (ec) throw IOError("cannot create " + case_dir.string());
    write_rawf32(c.modalities.at(Modality::TMax), case_dir / "TMax.rawf32");
    write_rawf32(c.modalities.at(Modality::TTP), case_dir / "TTP.rawf32");
    write_rawf32(c.modalities.at(Modality::DWI), case_dir / "DWI.rawf32");
    write_rawf32(c.penumbra_mask, case_dir / "penumbra.rawf32");
    write_rawf32(c.core_mask, case_dir / "core.rawf32");
}

// ---------------------------------------------------------------------------
// Label encoding & normalization
// ---------------------------------------------------------------------------

IntTensor encode_labels(const Volume& penumbra_mask, const Volume& core_mask) {
    if (penumbra_mask.shape() != core_mask.shape())
        throw ShapeMismatch("encode_labels: penumbra " + Tensor::shape_str(penumbra_mask.shape()) +
                            " vs core " + Tensor::shape_str(core_mask.shape()));
    IntTensor labels(penumbra_mask.shape());
    for (std::int64_t i = 0; i < labels.numel(); ++i) {
        if (core_mask.vox[i] != 0.0f)
            labels[i] = 2;
        else if (penumbra_mask.vox[i] != 0.0f)
            labels[i] = 1;
        else
            labels[i] = 0;
    }
    return labels;
}

Volume normalize_modality(const Volume& v) {
    double sum = 0, sq = 0;
    std::int64_t n = 0;
    for (std::int64_t i = 0; i < v.vox.numel(); ++i) {
        if (v.vox[i] == 0.0f) continue;
        sum += v.vox[i];
        sq += static_cast<double>(v.vox[i]) * v.vox[i];
        ++n;
    }
    Volume out;
    out.spacing = v.spacing;
    out.vox = Tensor(v.vox.shape());
    if (n == 0) return out;

    const double mean = sum / static_cast<double>(n);
    const double var = std::max(0.0, sq / static_cast<double>(n) - mean * mean);
    if (var < 1e-24) return out;  // constant support -> all zero
    const double inv_std = 1.0 / std::sqrt(var);
    for (std::int64_t i = 0; i < v.vox.numel(); ++i)
        if (v.vox[i] != 0.0f)
            out.vox[i] = static_cast<float>((v.vox[i] - mean) * inv_std);
    return out;
}

// ---------------------------------------------------------------------------
// Slicing
// ---------------------------------------------------------------------------

std::pair<int, int> pad_offsets(int size, int multiple) {
    const int rem = size % multiple;
    const int total = rem == 0 ? 0 : multiple - rem;
    return {total / 2, total - total / 2};
}

std::vector<SliceSample> extract_slices(const Case& c, const SliceOptions& opts) {
    c.validate();
    const int d = c.penumbra_mask.depth(), h = c.penumbra_mask.height(),
              w = c.penumbra_mask.width();
    const auto [py, py2] = pad_offsets(h, opts.pad_multiple);
    const auto [px, px2] = pad_offsets(w, opts.pad_multiple);
    const int ph = h + py + py2, pw = w + px + px2;

    std::array<Volume, 3> norm;
    for (size_t m = 0; m < 3; ++m) norm[m] = normalize_modality(c.modalities.at(kModalityOrder[m]));

    const IntTensor labels3d = encode_labels(c.penumbra_mask, c.core_mask);

    std::vector<SliceSample> out;
    out.reserve(static_cast<size_t>(d));
    for (int z = 0; z < d; ++z) {
        SliceSample s;
        s.case_id = c.case_id;
        s.slice_index = z;
        s.input = Tensor({3, ph, pw});
        s.labels = IntTensor({ph, pw});
        s.boundary_weights = Tensor({ph, pw}, 1.0f);

        IntTensor raw_labels({h, w});
        bool any_fg = false;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const auto v = labels3d.at(z, y, x);
                raw_labels.at(y, x) = v;
                any_fg = any_fg || v != 0;
                s.labels.at(y + py, x + px) = v;
            }
        if (opts.drop_empty && !any_fg) continue;

        for (int m = 0; m < 3; ++m)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    s.input.at(m, y + py, x + px) = norm[static_cast<size_t>(m)].vox.at(z, y, x);

        // weights from the unpadded map so padding stays at 1
        const Tensor wmap = morphology::weight_map(raw_labels, opts.weights);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) s.boundary_weights.at(y + py, x + px) = wmap.at(y, x);

        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Folds
// ---------------------------------------------------------------------------

FoldSplit make_folds(std::vector<std::string> case_ids, int k, std::uint64_t seed) {
    if (k < 2) throw TooFewCases("make_folds: k must be >= 2");
    if (static_cast<int>(case_ids.size()) < k)
        throw TooFewCases("make_folds: " + std::to_string(case_ids.size()) + " cases for k=" +
                          std::to_string(k));
    const std::set<std::string> unique(case_ids.begin(), case_ids.end());
    if (unique.size() != case_ids.size()) throw DataError("make_folds: duplicate case ids");

    Rng rng(seed);
    deterministic_shuffle(case_ids, rng);

    FoldSplit split;
    split.seed = seed;
    split.folds.assign(static_cast<size_t>(k), {});
    for (size_t i = 0; i < case_ids.size(); ++i)
        split.folds[i % static_cast<size_t>(k)].push_back(case_ids[i]);
    return split;
}

// ---------------------------------------------------------------------------
// Phantom generator
// ---------------------------------------------------------------------------

Case synth_case(std::uint64_t seed, std::array<int, 3> shape) {
    const auto [d, h, w] = shape;
    if (h < 64 || w < 64) throw InvalidConfig("synth_case: H and W must be >= 64");
    if (d < 1) throw InvalidConfig("synth_case: D must be >= 1");

    Rng rng(seed);
    auto uni = [&](double lo, double hi) {
        std::uniform_real_distribution<double> dist(lo, hi);
        return dist(rng);
    };

    // geometry
    const double cy = uni(0.40, 0.60) * h, cx = uni(0.40, 0.60) * w;
    const double cz = (d - 1) / 2.0;
    const double ry = uni(0.14, 0.20) * h, rx = uni(0.14, 0.20) * w;
    const double rz = std::max(1.0, 1.1 * d);
    const double core_scale = uni(0.45, 0.60);

    const double by = 0.44 * h, bx = 0.44 * w;  // brain ellipse (all slices)

    auto ellipse = [](double z, double y, double x, double czz, double cyy, double cxx, double rzz,
                      double ryy, double rxx) {
        const double a = (z - czz) / rzz, b = (y - cyy) / ryy, c = (x - cxx) / rxx;
        return a * a + b * b + c * c <= 1.0;
    };

    Case out;
    out.case_id = "synth_" + std::to_string(seed);

    Volume pen, core;
    pen.vox = Tensor({d, h, w});
    core.vox = Tensor({d, h, w});
    Volume tmax = pen, ttp = pen, dwi = pen;  // zero-initialized copies

    std::normal_distribution<double> noise(0.0, 0.04);
    for (int z = 0; z < d; ++z) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const bool brain = ellipse(z, y, x, cz, h / 2.0, w / 2.0, 10.0 * d + 1.0, by, bx);
                const bool in_pen = ellipse(z, y, x, cz, cy, cx, rz, ry, rx);
                const bool in_core =
                    ellipse(z, y, x, cz, cy, cx, rz * core_scale, ry * core_scale, rx * core_scale);
                pen.vox.at(z, y, x) = in_pen ? 1.0f : 0.0f;
                core.vox.at(z, y, x) = in_core ? 1.0f : 0.0f;
                if (!brain) {
                    // keep background exactly zero; still consume the noise
                    // stream so geometry does not shift voxel draws
                    noise(rng);
                    noise(rng);
                    noise(rng);
                    continue;
                }
                const double base = 0.55 + 0.20 * std::sin(6.283185307179586 * y / h) *
                                               std::cos(6.283185307179586 * x / w) +
                                    0.10 * (z + 1.0) / (d + 1.0);
                const double p = in_pen ? 1.0 : 0.0, q = in_core ? 1.0 : 0.0;
                tmax.vox.at(z, y, x) = static_cast<float>(base + 0.9 * p + noise(rng));
                ttp.vox.at(z, y, x) = static_cast<float>(base + 0.5 * p + 0.4 * q + noise(rng));
                dwi.vox.at(z, y, x) = static_cast<float>(base + 0.05 * p + 1.0 * q + noise(rng));
            }
        }
    }

    out.modalities[Modality::TMax] = std::move(tmax);
    out.modalities[Modality::TTP] = std::move(ttp);
    out.modalities[Modality::DWI] = std::move(dwi);
    out.penumbra_mask = std::move(pen);
    out.core_mask = std::move(core);
    out.validate();
    return out;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

std::vector<std::string> read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw UnreadableFile("cannot open manifest " + path.string());
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(in, line)) {
        const auto b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos) continue;
        const auto e = line.find_last_not_of(" \t\r");
        ids.push_back(line.substr(b, e - b + 1));
    }
    return ids;
}

void write_manifest(const std::vector<std::string>& ids, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw IOError("cannot write manifest " + path.string());
    for (const auto& id : ids) out << id << "\n";
}

}  // namespace strokeseg::data
