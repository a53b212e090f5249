#include <doctest.h>

#include <zlib.h>

#include <filesystem>
#include <fstream>

#include "lesionbench/data_model.hpp"
#include "lesionbench/rng.hpp"
#include "lesionbench/volume_io.hpp"

using namespace lesionbench;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
    fs::path p = fs::temp_directory_path() / ("lbtest_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

CaseRecord sample_case(const Vec3& shape, int64_t channels, uint64_t seed) {
    CaseRecord rec;
    rec.case_id = "case0";
    rec.image.data = NdArray<double>({channels, shape[0], shape[1], shape[2]});
    rec.image.spacing = {1.0, 0.5, 2.0};
    rec.image.origin = {-3.0, 1.0, 4.5};
    Rng rng(seed);
    for (double& v : rec.image.data.data) v = rng.normal();
    rec.label.num_classes = 2;
    rec.label.data = NdArray<int32_t>({shape[0], shape[1], shape[2]});
    for (auto& v : rec.label.data.data) v = rng.uniform() < 0.2 ? 1 : 0;
    NdArray<uint8_t> mask({shape[0], shape[1], shape[2]});
    for (auto& v : mask.data) v = rng.uniform() < 0.5 ? 1 : 0;
    rec.brain_mask = std::move(mask);
    rec.diagnosis = Diagnosis::meningioma;
    rec.split = Split::train;
    return rec;
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream f(p);
    f << text;
}

void write_mha(const fs::path& p, const Vec3& shape, const std::vector<int16_t>& values, bool compressed) {
    std::string header;
    header += "ObjectType = Image\n";
    header += "NDims = 3\n";
    header += "BinaryData = True\n";
    header += "BinaryDataByteOrderMSB = False\n";
    if (compressed) header += "CompressedData = True\n";
    header += "DimSize = " + std::to_string(shape[2]) + " " + std::to_string(shape[1]) + " " +
              std::to_string(shape[0]) + "\n";
    header += "ElementSpacing = 1 1 1\n";
    header += "ElementType = MET_SHORT\n";
    header += "ElementDataFile = LOCAL\n";

    std::ofstream f(p, std::ios::binary);
    f << header;
    if (!compressed) {
        f.write(reinterpret_cast<const char*>(values.data()),
                static_cast<std::streamsize>(values.size() * 2));
    } else {
        uLongf bound = compressBound(static_cast<uLong>(values.size() * 2));
        std::vector<Bytef> out(bound);
        REQUIRE(compress(out.data(), &bound, reinterpret_cast<const Bytef*>(values.data()),
                         static_cast<uLong>(values.size() * 2)) == Z_OK);
        f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(bound));
    }
}

}  // namespace

TEST_SUITE("data_model") {

TEST_CASE("nifti write/read round trip is bit-exact for f64 volumes") {
    fs::path dir = temp_dir("nifti");
    RawVolume v;
    v.data = NdArray<double>({5, 6, 7});
    Rng rng(3);
    for (double& x : v.data.data) x = rng.normal();
    v.spacing = {2.0, 1.5, 1.0};
    v.origin = {10.0, -4.0, 0.25};

    for (const char* name : {"vol.nii", "vol.nii.gz"}) {
        write_nifti((dir / name).string(), v, VoxelType::f64);
        RawVolume r = read_nifti((dir / name).string());
        CHECK(r.data.shape == v.data.shape);
        CHECK(r.data.data == v.data.data);  // bit-exact
        for (int a = 0; a < 3; ++a) {
            CHECK(r.spacing[a] == doctest::Approx(v.spacing[a]));
            CHECK(r.origin[a] == doctest::Approx(v.origin[a]));
        }
    }

    CHECK_THROWS(read_nifti((dir / "missing.nii").string()));
}

TEST_CASE("mha reader handles raw and compressed LOCAL payloads") {
    fs::path dir = temp_dir("mha");
    Vec3 shape{3, 4, 5};
    std::vector<int16_t> values(static_cast<size_t>(vec3_product(shape)));
    for (size_t i = 0; i < values.size(); ++i) values[i] = static_cast<int16_t>(i * 3 - 20);

    write_mha(dir / "raw.mha", shape, values, false);
    write_mha(dir / "z.mha", shape, values, true);
    for (const char* name : {"raw.mha", "z.mha"}) {
        RawVolume r = read_mha((dir / name).string());
        REQUIRE(r.data.shape == std::vector<int64_t>{3, 4, 5});
        for (size_t i = 0; i < values.size(); ++i)
            CHECK(r.data[static_cast<int64_t>(i)] == static_cast<double>(values[i]));
    }
}

TEST_CASE("case write/load round trip reproduces arrays bit-exactly") {
    fs::path dir = temp_dir("case_rt");
    for (int64_t channels : {int64_t{1}, int64_t{4}}) {
        CaseRecord rec = sample_case({6, 5, 4}, channels, 11 + static_cast<uint64_t>(channels));
        ManifestRow row = write_case(rec, dir.string());
        CaseRecord back = load_case(row, dir.string());
        CHECK(back.image.data.shape == rec.image.data.shape);
        CHECK(back.image.data.data == rec.image.data.data);
        CHECK(back.label.data.data == rec.label.data.data);
        REQUIRE(back.brain_mask.has_value());
        CHECK(back.brain_mask->data == rec.brain_mask->data);
        CHECK(back.diagnosis == rec.diagnosis);
        CHECK(back.split == rec.split);
        for (int a = 0; a < 3; ++a) CHECK(back.image.spacing[a] == doctest::Approx(rec.image.spacing[a]));
    }
}

TEST_CASE("multi-sequence load stacks channels in listed order") {
    fs::path dir = temp_dir("multiseq");
    CaseRecord rec = sample_case({4, 4, 4}, 4, 21);
    ManifestRow row = write_case(rec, dir.string());
    CHECK(split_field(row.image_path, ';').size() == 4);

    CaseRecord back = load_case(row, dir.string());
    CHECK(back.image.channels() == 4);
    // BraTS-style labels {0..4} give num_classes 5
    for (int32_t v = 0; v < 5; ++v) back.label.data[v] = v;
    RawVolume lv;
    lv.data = NdArray<double>({4, 4, 4});
    for (int64_t i = 0; i < 5; ++i) lv.data[i] = static_cast<double>(i);
    write_nifti((dir / "lab5.nii.gz").string(), lv, VoxelType::u8);
    row.label_path = "lab5.nii.gz";
    CaseRecord brats = load_case(row, dir.string());
    CHECK(brats.image.channels() == 4);
    CHECK(brats.label.num_classes == 5);
}

TEST_CASE("load_case rejects misaligned label shapes") {
    fs::path dir = temp_dir("mismatch");
    CaseRecord rec = sample_case({4, 4, 4}, 1, 31);
    ManifestRow row = write_case(rec, dir.string());

    RawVolume wrong;
    wrong.data = NdArray<double>({3, 4, 4});
    write_nifti((dir / "wrong.nii.gz").string(), wrong, VoxelType::u8);
    row.mask_path.clear();
    row.label_path = "wrong.nii.gz";
    CHECK_THROWS_WITH_AS(load_case(row, dir.string()), doctest::Contains("does not match"), std::runtime_error);
}

TEST_CASE("manifest parsing: happy path, duplicate id, unknown tag") {
    fs::path dir = temp_dir("manifest");
    std::string header = "case_id,image_path,label_path,mask_path,diagnosis,split\n";

    write_text(dir / "ok.csv", header +
                                   "a,a.nii,a_lab.nii,,metastasis,train\n"
                                   "b,b.nii,b_lab.nii,b_mask.nii,avm,test\n"
                                   "c,c1.nii;c2.nii,c_lab.nii,,other,train\n");
    DatasetManifest m = load_manifest((dir / "ok.csv").string());
    CHECK(m.rows.size() == 3);
    CHECK(m.rows[1].diagnosis == Diagnosis::avm);
    CHECK(m.rows[1].split == Split::test);
    CHECK(m.rows[2].image_path == "c1.nii;c2.nii");
    CHECK(m.split_rows(Split::train).size() == 2);
    CHECK(m.split_rows(Split::test).size() == 1);

    write_text(dir / "dup.csv", header +
                                    "a,a.nii,a_lab.nii,,metastasis,train\n"
                                    "a,b.nii,b_lab.nii,,avm,test\n");
    CHECK_THROWS_WITH_AS(load_manifest((dir / "dup.csv").string()), doctest::Contains("'a'"),
                         std::runtime_error);

    write_text(dir / "tag.csv", header + "a,a.nii,a_lab.nii,,glioma,train\n");
    CHECK_THROWS_WITH_AS(load_manifest((dir / "tag.csv").string()), doctest::Contains("glioma"),
                         std::runtime_error);

    write_text(dir / "short.csv", header + "a,a.nii,a_lab.nii,train\n");
    CHECK_THROWS(load_manifest((dir / "short.csv").string()));

    write_text(dir / "badheader.csv", "id,image\na,b\n");
    CHECK_THROWS(load_manifest((dir / "badheader.csv").string()));
}

TEST_CASE("manifest round trip and split partition property") {
    fs::path dir = temp_dir("manifest_rt");
    DatasetManifest m;
    m.base_dir = dir.string();
    for (int i = 0; i < 6; ++i) {
        ManifestRow r;
        r.case_id = "case" + std::to_string(i);
        r.image_path = r.case_id + ".nii";
        r.label_path = r.case_id + "_lab.nii";
        r.diagnosis = all_diagnoses()[static_cast<size_t>(i) % all_diagnoses().size()];
        r.split = (i % 3 == 0) ? Split::test : Split::train;
        m.rows.push_back(r);
    }
    write_manifest((dir / "m.csv").string(), m);
    DatasetManifest back = load_manifest((dir / "m.csv").string());
    REQUIRE(back.rows.size() == m.rows.size());

    auto train = back.split_rows(Split::train);
    auto test = back.split_rows(Split::test);
    CHECK(train.size() + test.size() == back.rows.size());
    for (const auto& tr : train)
        for (const auto& te : test) CHECK(tr.case_id != te.case_id);
}

TEST_CASE("validation rejects NaN images, bad spacing, out-of-range labels") {
    CaseRecord rec = sample_case({3, 3, 3}, 1, 41);
    rec.validate();

    CaseRecord nan_case = rec;
    nan_case.image.data[5] = std::nan("");
    CHECK_THROWS(nan_case.validate());

    CaseRecord sp_case = rec;
    sp_case.image.spacing[1] = 0.0;
    CHECK_THROWS(sp_case.validate());

    CaseRecord lab_case = rec;
    lab_case.label.data[0] = 7;  // >= num_classes
    CHECK_THROWS(lab_case.validate());
}

}  // TEST_SUITE
