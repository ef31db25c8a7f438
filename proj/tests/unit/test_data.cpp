#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <zlib.h>

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>

#include "oracles.hpp"
#include "strokeseg/data.hpp"

using namespace strokeseg;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("strokeseg_test_" + std::to_string(Rng(std::random_device{}())()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

data::Volume make_volume(std::vector<int> shape, float fill) {
    data::Volume v;
    v.vox = Tensor(std::move(shape), fill);
    return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// encode_labels / normalize
// ---------------------------------------------------------------------------

TEST_CASE("encode_labels precedence") {
    data::Volume pen = make_volume({1, 1, 4}, 0.0f), core = make_volume({1, 1, 4}, 0.0f);
    pen.vox[0] = 1;                  // penumbra only
    pen.vox[1] = 1;
    core.vox[1] = 1;                 // overlap: core wins
    core.vox[2] = 1;                 // core only
    const IntTensor labels = data::encode_labels(pen, core);
    CHECK(labels[0] == 1);
    CHECK(labels[1] == 2);
    CHECK(labels[2] == 2);
    CHECK(labels[3] == 0);

    data::Volume small = make_volume({1, 1, 3}, 0.0f);
    CHECK_THROWS_AS(data::encode_labels(pen, small), ShapeMismatch);
}

TEST_CASE("encode_labels zones on random masks") {
    Rng rng(77);
    for (int rep = 0; rep < 20; ++rep) {
        data::Volume pen = make_volume({1, 8, 8}, 0.0f), core = make_volume({1, 8, 8}, 0.0f);
        for (std::int64_t i = 0; i < 64; ++i) {
            pen.vox[i] = static_cast<float>(rng() % 2);
            core.vox[i] = static_cast<float>(rng() % 2);
        }
        const IntTensor labels = data::encode_labels(pen, core);
        for (std::int64_t i = 0; i < 64; ++i) {
            REQUIRE((labels[i] == 2) == (core.vox[i] != 0.0f));
            REQUIRE((labels[i] == 0) == (pen.vox[i] == 0.0f && core.vox[i] == 0.0f));
        }
    }
}

TEST_CASE("normalize_modality") {
    SUBCASE("constant volume maps to all-zero") {
        const data::Volume v = make_volume({1, 2, 2}, 7.0f);
        const data::Volume n = data::normalize_modality(v);
        for (std::int64_t i = 0; i < n.vox.numel(); ++i) CHECK(n.vox[i] == 0.0f);
    }
    SUBCASE("two-value support standardizes to -1/+1 and zeros stay zero") {
        data::Volume v = make_volume({1, 1, 4}, 0.0f);
        v.vox[1] = 1.0f;
        v.vox[2] = 3.0f;
        const data::Volume n = data::normalize_modality(v);
        CHECK(n.vox[0] == 0.0f);
        CHECK(n.vox[3] == 0.0f);
        CHECK(n.vox[1] == doctest::Approx(-1.0f));
        CHECK(n.vox[2] == doctest::Approx(1.0f));
    }
    SUBCASE("idempotent on the support within 1e-6") {
        Rng rng(3);
        data::Volume v = make_volume({2, 8, 8}, 0.0f);
        for (std::int64_t i = 0; i < v.vox.numel(); ++i)
            v.vox[i] = (i % 5 == 0) ? 0.0f : static_cast<float>(rng() % 1000) / 100.0f + 1.0f;
        const data::Volume once = data::normalize_modality(v);
        double mean = 0, sq = 0;
        std::int64_t n = 0;
        const data::Volume twice = data::normalize_modality(once);
        for (std::int64_t i = 0; i < twice.vox.numel(); ++i) {
            if (once.vox[i] == 0.0f) continue;
            mean += twice.vox[i];
            sq += static_cast<double>(twice.vox[i]) * twice.vox[i];
            ++n;
        }
        mean /= static_cast<double>(n);
        const double var = sq / static_cast<double>(n) - mean * mean;
        CHECK(std::abs(mean) < 1e-6);
        CHECK(std::abs(var - 1.0) < 1e-5);
    }
}

// ---------------------------------------------------------------------------
// synth + slicing
// ---------------------------------------------------------------------------

TEST_CASE("synth_case invariants") {
    SUBCASE("core strictly inside penumbra for 100 seeds") {
        for (std::uint64_t seed = 0; seed < 100; ++seed) {
            const data::Case c = data::synth_case(seed, {2, 64, 64});
            for (std::int64_t i = 0; i < c.core_mask.vox.numel(); ++i)
                if (c.core_mask.vox[i] != 0.0f) REQUIRE(c.penumbra_mask.vox[i] != 0.0f);
        }
    }
    SUBCASE("seed 1 at (2,96,96): penumbra count > core count > 0") {
        const data::Case c = data::synth_case(1, {2, 96, 96});
        std::int64_t pen = 0, core = 0;
        for (std::int64_t i = 0; i < c.core_mask.vox.numel(); ++i) {
            pen += c.penumbra_mask.vox[i] != 0.0f;
            core += c.core_mask.vox[i] != 0.0f;
        }
        CHECK(pen > core);
        CHECK(core > 0);
    }
    SUBCASE("same seed twice is bit-identical") {
        const data::Case a = data::synth_case(42, {2, 64, 64});
        const data::Case b = data::synth_case(42, {2, 64, 64});
        CHECK(a.modalities.at(data::Modality::TMax).vox.vec() ==
              b.modalities.at(data::Modality::TMax).vox.vec());
        CHECK(a.modalities.at(data::Modality::DWI).vox.vec() ==
              b.modalities.at(data::Modality::DWI).vox.vec());
        CHECK(a.core_mask.vox.vec() == b.core_mask.vox.vec());
    }
    SUBCASE("rejects too-small sections") {
        CHECK_THROWS_AS(data::synth_case(0, {1, 32, 64}), InvalidConfig);
    }
}

TEST_CASE("extract_slices shapes, padding and recovery") {
    SUBCASE("(2,96,96) gives 2 samples of (3,96,96)") {
        const data::Case c = data::synth_case(3, {2, 96, 96});
        const auto slices = data::extract_slices(c);
        REQUIRE(slices.size() == 2);
        CHECK(slices[0].input.shape() == std::vector<int>{3, 96, 96});
        CHECK(slices[0].labels.shape() == std::vector<int>{96, 96});
        CHECK(slices[1].slice_index == 1);
        CHECK(slices[0].case_id == c.case_id);
    }
    SUBCASE("(1,90,90) pads to (3,96,96) with 3 per side") {
        const data::Case c = data::synth_case(4, {1, 90, 90});
        const auto slices = data::extract_slices(c);
        REQUIRE(slices.size() == 1);
        CHECK(slices[0].input.shape() == std::vector<int>{3, 96, 96});

        // padding region: label 0, weight 1, input 0
        const auto& s = slices[0];
        for (int x = 0; x < 96; ++x) {
            CHECK(s.labels.at(0, x) == 0);
            CHECK(s.boundary_weights.at(0, x) == 1.0f);
            CHECK(s.input.at(0, 0, x) == 0.0f);
            CHECK(s.labels.at(95, x) == 0);
        }

        // cropping the padding recovers the original label map exactly
        const IntTensor full = data::encode_labels(c.penumbra_mask, c.core_mask);
        for (int y = 0; y < 90; ++y)
            for (int x = 0; x < 90; ++x)
                REQUIRE(s.labels.at(y + 3, x + 3) == full.at(0, y, x));
    }
    SUBCASE("labels/weights invariants on every sample") {
        const data::Case c = data::synth_case(9, {3, 70, 80});
        for (const auto& s : data::extract_slices(c)) {
            CHECK(s.input.all_finite());
            for (std::int64_t i = 0; i < s.labels.numel(); ++i) {
                CHECK(s.labels[i] >= 0);
                CHECK(s.labels[i] <= 2);
                CHECK((s.boundary_weights[i] == 1.0f || s.boundary_weights[i] == 10.0f));
            }
        }
    }
    SUBCASE("drop_empty removes all-background slices") {
        // build a case whose top slice has no lesion
        data::Case c = data::synth_case(5, {2, 64, 64});
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x) {
                c.penumbra_mask.vox.at(0, y, x) = 0;
                c.core_mask.vox.at(0, y, x) = 0;
            }
        data::SliceOptions opts;
        opts.drop_empty = true;
        const auto kept = data::extract_slices(c, opts);
        REQUIRE(kept.size() == 1);
        CHECK(kept[0].slice_index == 1);

        const auto all = data::extract_slices(c);
        CHECK(all.size() == 2);
        bool any_fg = false;
        for (std::int64_t i = 0; i < all[0].labels.numel(); ++i)
            any_fg = any_fg || all[0].labels[i] != 0;
        CHECK(!any_fg);
        for (std::int64_t i = 0; i < all[0].boundary_weights.numel(); ++i)
            CHECK(all[0].boundary_weights[i] == 1.0f);
    }
}

// ---------------------------------------------------------------------------
// folds
// ---------------------------------------------------------------------------

TEST_CASE("make_folds partitions, determinism, sizes") {
    SUBCASE("9 ids k=3 gives three folds of three") {
        std::vector<std::string> ids;
        for (int i = 0; i < 9; ++i) ids.push_back("c" + std::to_string(i));
        const auto split = data::make_folds(ids, 3, 7);
        REQUIRE(split.folds.size() == 3);
        for (const auto& f : split.folds) CHECK(f.size() == 3);
    }
    SUBCASE("10 ids k=3 gives fold sizes 4,3,3") {
        std::vector<std::string> ids;
        for (int i = 0; i < 10; ++i) ids.push_back("c" + std::to_string(i));
        const auto split = data::make_folds(ids, 3, 7);
        std::multiset<size_t> sizes;
        for (const auto& f : split.folds) sizes.insert(f.size());
        CHECK(sizes == std::multiset<size_t>{3, 3, 4});
    }
    SUBCASE("same ids and seed reproduce identical folds") {
        std::vector<std::string> ids{"a", "b", "c", "d", "e"};
        const auto s1 = data::make_folds(ids, 2, 99);
        const auto s2 = data::make_folds(ids, 2, 99);
        CHECK(s1.folds == s2.folds);
    }
    SUBCASE("exhaustive partition property for |ids| <= 12, all k") {
        for (int n = 2; n <= 12; ++n) {
            std::vector<std::string> ids;
            for (int i = 0; i < n; ++i) ids.push_back("id" + std::to_string(i));
            for (int k = 2; k <= n; ++k) {
                const auto split = data::make_folds(ids, k, static_cast<std::uint64_t>(n * 100 + k));
                std::set<std::string> seen;
                size_t total = 0, mx = 0, mn = SIZE_MAX;
                for (const auto& f : split.folds) {
                    total += f.size();
                    mx = std::max(mx, f.size());
                    mn = std::min(mn, f.size());
                    for (const auto& id : f) REQUIRE(seen.insert(id).second);  // disjoint
                }
                REQUIRE(total == ids.size());
                REQUIRE(seen.size() == ids.size());  // union = everything
                REQUIRE(mx - mn <= 1);
            }
        }
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(data::make_folds({"a", "b"}, 3, 0), TooFewCases);
        CHECK_THROWS_AS(data::make_folds({"a", "b", "c"}, 1, 0), TooFewCases);
        CHECK_THROWS_AS(data::make_folds({"a", "a", "b"}, 2, 0), DataError);
    }
}

// ---------------------------------------------------------------------------
// on-disk formats
// ---------------------------------------------------------------------------

TEST_CASE("rawf32 round trip and case IO") {
    TempDir tmp;
    const data::Case c = data::synth_case(8, {2, 64, 64});
    data::write_case(c, tmp.path / c.case_id);

    const data::Case back = data::load_case(tmp.path / c.case_id);
    CHECK(back.case_id == c.case_id);
    CHECK(back.modalities.at(data::Modality::TTP).vox.vec() ==
          c.modalities.at(data::Modality::TTP).vox.vec());
    CHECK(back.penumbra_mask.vox.vec() == c.penumbra_mask.vox.vec());
}

TEST_CASE("load_case error paths") {
    TempDir tmp;
    const data::Case c = data::synth_case(8, {2, 64, 64});
    const fs::path dir = tmp.path / c.case_id;
    data::write_case(c, dir);

    SUBCASE("missing DWI") {
        fs::remove(dir / "DWI.rawf32");
        try {
            data::load_case(dir);
            FAIL("expected MissingModality");
        } catch (const MissingModality& e) {
            CHECK(e.modality == "DWI");
        }
    }
    SUBCASE("missing penumbra mask") {
        fs::remove(dir / "penumbra.rawf32");
        CHECK_THROWS_AS(data::load_case(dir), MissingModality);
    }
    SUBCASE("shape mismatch is reported with both shapes") {
        data::Volume odd = make_volume({2, 64, 32}, 0.0f);
        data::write_rawf32(odd, dir / "penumbra.rawf32");
        try {
            data::load_case(dir);
            FAIL("expected ShapeMismatch");
        } catch (const ShapeMismatch& e) {
            const std::string msg = e.what();
            CHECK(msg.find("(2,64,32)") != std::string::npos);
            CHECK(msg.find("(2,64,64)") != std::string::npos);
        }
    }
    SUBCASE("truncated raw file") {
        std::ofstream f(dir / "core.rawf32", std::ios::binary | std::ios::trunc);
        f << "short";
        f.close();
        CHECK_THROWS_AS(data::load_case(dir), UnreadableFile);
    }
    SUBCASE("not a directory") {
        CHECK_THROWS_AS(data::load_case(tmp.path / "nope"), UnreadableFile);
    }
}

namespace {

/// Tiny NIfTI-1 writer for tests: float32 or int16, optional gzip, optional
/// byte-swap to emulate big-endian files.
void write_test_nifti(const fs::path& path, const std::vector<int>& dhw,
                      const std::vector<float>& values, bool gz, bool swapped,
                      bool int16 = false, float slope = 1.0f, float inter = 0.0f) {
    std::vector<unsigned char> hdr(348, 0);
    auto put32 = [&](size_t off, std::uint32_t v) {
        for (int i = 0; i < 4; ++i)
            hdr[off + static_cast<size_t>(i)] =
                static_cast<unsigned char>(v >> (swapped ? (24 - 8 * i) : (8 * i)));
    };
    auto put16 = [&](size_t off, std::uint16_t v) {
        hdr[off] = static_cast<unsigned char>(swapped ? v >> 8 : v & 0xff);
        hdr[off + 1] = static_cast<unsigned char>(swapped ? v & 0xff : v >> 8);
    };
    auto putf = [&](size_t off, float f) {
        std::uint32_t u;
        std::memcpy(&u, &f, 4);
        put32(off, u);
    };
    put32(0, 348);
    put16(40, 3);  // dim[0]
    put16(42, static_cast<std::uint16_t>(dhw[2]));  // nx = W
    put16(44, static_cast<std::uint16_t>(dhw[1]));  // ny = H
    put16(46, static_cast<std::uint16_t>(dhw[0]));  // nz = D
    put16(70, int16 ? 4 : 16);                      // datatype
    put16(72, int16 ? 16 : 32);                     // bitpix
    putf(80, 2.0f);   // pixdim[1]
    putf(84, 3.0f);   // pixdim[2]
    putf(88, 4.0f);   // pixdim[3]
    putf(108, 352.0f);  // vox_offset
    putf(112, slope);
    putf(116, inter);
    hdr[344] = 'n';
    hdr[345] = '+';
    hdr[346] = '1';

    std::vector<unsigned char> body(4);  // 348 -> 352 alignment
    for (float v : values) {
        if (int16) {
            auto s = static_cast<std::int16_t>(v);
            unsigned char b[2];
            std::memcpy(b, &s, 2);
            if (swapped) std::swap(b[0], b[1]);
            body.push_back(b[0]);
            body.push_back(b[1]);
        } else {
            unsigned char b[4];
            std::memcpy(b, &v, 4);
            if (swapped) std::reverse(b, b + 4);
            body.insert(body.end(), b, b + 4);
        }
    }

    if (gz) {
        gzFile f = gzopen(path.string().c_str(), "wb");
        REQUIRE(f != nullptr);
        gzwrite(f, hdr.data(), static_cast<unsigned>(hdr.size()));
        gzwrite(f, body.data(), static_cast<unsigned>(body.size()));
        gzclose(f);
    } else {
        std::ofstream f(path, std::ios::binary);
        f.write(reinterpret_cast<const char*>(hdr.data()), static_cast<std::streamsize>(hdr.size()));
        f.write(reinterpret_cast<const char*>(body.data()),
                static_cast<std::streamsize>(body.size()));
    }
}

}  // namespace

TEST_CASE("nifti reader: plain, gzipped, byte-swapped, scaled int16") {
    TempDir tmp;
    const std::vector<int> dhw{2, 3, 4};
    std::vector<float> values;
    for (int i = 0; i < 24; ++i) values.push_back(static_cast<float>(i) - 5.0f);

    SUBCASE("float32 .nii") {
        write_test_nifti(tmp.path / "a.nii", dhw, values, false, false);
        const data::Volume v = data::read_nifti(tmp.path / "a.nii");
        REQUIRE(v.shape() == dhw);
        for (int i = 0; i < 24; ++i) CHECK(v.vox[i] == values[static_cast<size_t>(i)]);
        CHECK(v.spacing[0] == doctest::Approx(4.0));  // z
        CHECK(v.spacing[2] == doctest::Approx(2.0));  // x
    }
    SUBCASE("float32 .nii.gz") {
        write_test_nifti(tmp.path / "a.nii.gz", dhw, values, true, false);
        const data::Volume v = data::read_volume(tmp.path / "a.nii.gz");
        REQUIRE(v.shape() == dhw);
        for (int i = 0; i < 24; ++i) CHECK(v.vox[i] == values[static_cast<size_t>(i)]);
    }
    SUBCASE("big-endian emulation") {
        write_test_nifti(tmp.path / "b.nii", dhw, values, false, true);
        const data::Volume v = data::read_nifti(tmp.path / "b.nii");
        REQUIRE(v.shape() == dhw);
        for (int i = 0; i < 24; ++i) CHECK(v.vox[i] == values[static_cast<size_t>(i)]);
    }
    SUBCASE("int16 with scl_slope/inter") {
        write_test_nifti(tmp.path / "c.nii", dhw, values, false, false, true, 0.5f, 10.0f);
        const data::Volume v = data::read_nifti(tmp.path / "c.nii");
        for (int i = 0; i < 24; ++i)
            CHECK(v.vox[i] ==
                  doctest::Approx(static_cast<float>(static_cast<std::int16_t>(
                                      values[static_cast<size_t>(i)])) * 0.5f + 10.0f));
    }
    SUBCASE("garbage rejected") {
        std::ofstream f(tmp.path / "bad.nii", std::ios::binary);
        f << "this is not a nifti file at all, not even close, sorry.";
        f.close();
        CHECK_THROWS_AS(data::read_nifti(tmp.path / "bad.nii"), UnreadableFile);
    }
}

TEST_CASE("nifti case directory loads like rawf32") {
    TempDir tmp;
    const fs::path dir = tmp.path / "case1";
    fs::create_directories(dir);
    const std::vector<int> dhw{1, 2, 2};
    write_test_nifti(dir / "TMax.nii", dhw, {1, 2, 3, 4}, false, false);
    write_test_nifti(dir / "TTP.nii.gz", dhw, {4, 3, 2, 1}, true, false);
    write_test_nifti(dir / "DWI.nii", dhw, {1, 1, 2, 2}, false, false);
    write_test_nifti(dir / "penumbra.nii", dhw, {0, 1, 1, 0}, false, false);
    write_test_nifti(dir / "core.nii", dhw, {0, 0, 1, 0}, false, false);

    const data::Case c = data::load_case(dir);
    CHECK(c.case_id == "case1");
    CHECK(c.penumbra_mask.vox[1] == 1.0f);
    CHECK(c.core_mask.vox[2] == 1.0f);
    const IntTensor labels = data::encode_labels(c.penumbra_mask, c.core_mask);
    CHECK(labels[1] == 1);
    CHECK(labels[2] == 2);
}

TEST_CASE("manifest IO") {
    TempDir tmp;
    data::write_manifest({"a", "b", "c"}, tmp.path / "m.txt");
    CHECK(data::read_manifest(tmp.path / "m.txt") == std::vector<std::string>{"a", "b", "c"});

    std::ofstream f(tmp.path / "m2.txt");
    f << "  one \n\n two\t\n";
    f.close();
    CHECK(data::read_manifest(tmp.path / "m2.txt") == std::vector<std::string>{"one", "two"});
    CHECK_THROWS_AS(data::read_manifest(tmp.path / "absent.txt"), UnreadableFile);
}

TEST_CASE("pad_offsets") {
    CHECK(data::pad_offsets(96, 32) == std::pair<int, int>{0, 0});
    CHECK(data::pad_offsets(90, 32) == std::pair<int, int>{3, 3});
    CHECK(data::pad_offsets(65, 32) == std::pair<int, int>{15, 16});
}
