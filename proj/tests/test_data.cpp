#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

#include "fmrgc/data.hpp"
#include "fmrgc/errors.hpp"
#include "testers.hpp"

using namespace fmrgc;

namespace {

namespace fs = std::filesystem;

fs::path temp_dir() {
    const fs::path dir = fs::temp_directory_path() / "fmrgc_data_tests";
    fs::create_directories(dir);
    return dir;
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& bytes) {
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

// One canonical record: label byte then R, G, B planes row-major.
std::vector<unsigned char> make_record(unsigned char label, unsigned char fill) {
    std::vector<unsigned char> rec(3073, fill);
    rec[0] = label;
    return rec;
}

}  // namespace

TEST_CASE("cifar loader scales bytes by 1/255 and passes labels through") {
    const fs::path file = temp_dir() / "two_records.bin";
    std::vector<unsigned char> bytes = make_record(7, 255);
    const std::vector<unsigned char> second = make_record(3, 0);
    bytes.insert(bytes.end(), second.begin(), second.end());
    write_bytes(file, bytes);

    Dataset d = load_cifar10_records(file.string());
    REQUIRE(d.size() == 2);
    CHECK(d.labels[0] == 7);
    CHECK(d.labels[1] == 3);
    CHECK(d.images.shape() == std::vector<int>{2, 3, 32, 32});
    for (int p = 0; p < 3072; ++p) {
        CHECK(d.images[static_cast<std::size_t>(p)] == 1.0);
        CHECK(d.images[3072 + static_cast<std::size_t>(p)] == 0.0);
    }
}

TEST_CASE("cifar loader decodes a crafted record byte-for-byte") {
    // Deterministic byte pattern, decoded independently below.
    std::vector<unsigned char> rec(3073);
    rec[0] = 4;
    for (int p = 0; p < 3072; ++p) rec[static_cast<std::size_t>(p) + 1] = static_cast<unsigned char>((p * 37 + 11) % 256);
    std::vector<unsigned char> bytes = rec;
    const std::vector<unsigned char> second = make_record(9, 128);
    bytes.insert(bytes.end(), second.begin(), second.end());

    const fs::path file = temp_dir() / "crafted.bin";
    write_bytes(file, bytes);
    Dataset d = load_cifar10_records(file.string());
    REQUIRE(d.size() == 2);
    CHECK(d.labels[0] == 4);

    // independent byte walk: plane-major, row-major within a plane
    for (int ch = 0; ch < 3; ++ch)
        for (int i = 0; i < 32; ++i)
            for (int j = 0; j < 32; ++j) {
                const int p = ch * 1024 + i * 32 + j;
                const double expect = ((p * 37 + 11) % 256) / 255.0;
                CHECK(d.images[static_cast<std::size_t>(p)] == expect);
            }
}

TEST_CASE("cifar loader rejects truncated files and bad labels") {
    const fs::path truncated = temp_dir() / "truncated.bin";
    write_bytes(truncated, std::vector<unsigned char>(3072, 0));
    CHECK_THROWS_AS(load_cifar10_records(truncated.string()), TruncatedFileError);

    const fs::path bad_label = temp_dir() / "bad_label.bin";
    write_bytes(bad_label, make_record(10, 0));
    CHECK_THROWS_AS(load_cifar10_records(bad_label.string()), BadLabelError);

    CHECK_THROWS_AS(load_cifar10_records((temp_dir() / "missing.bin").string()), IoError);
}

TEST_CASE("synthetic data: zero noise collapses each class to its template") {
    SyntheticSpec spec;
    spec.classes = 3;
    spec.per_class = 4;
    spec.image_size = 8;
    spec.noise = 0.0;
    Dataset d = make_synthetic(spec, 0);
    REQUIRE(d.size() == 12);

    const std::size_t chunk = d.images.size() / 12;
    for (int cls = 0; cls < 3; ++cls) {
        const std::size_t base = static_cast<std::size_t>(cls) * 4 * chunk;
        for (int rep = 1; rep < 4; ++rep)
            for (std::size_t i = 0; i < chunk; ++i)
                CHECK(d.images[base + static_cast<std::size_t>(rep) * chunk + i] == d.images[base + i]);
    }
}

TEST_CASE("synthetic data is deterministic in the seed and in range") {
    SyntheticSpec spec;
    spec.classes = 4;
    spec.per_class = 5;
    spec.image_size = 8;
    spec.seed = 77;
    Dataset a = make_synthetic(spec, 0);
    Dataset b = make_synthetic(spec, 0);
    CHECK(a.images.bit_equal(b.images));
    CHECK(a.labels == b.labels);

    Dataset c = make_synthetic(spec, 1);
    CHECK_FALSE(a.images.bit_equal(c.images));

    for (double v : a.images.values()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("subset selection is deterministic and within range") {
    const std::vector<int> a = deterministic_subset(9, 10, 100);
    const std::vector<int> b = deterministic_subset(9, 10, 100);
    CHECK(a == b);
    std::vector<bool> seen(100, false);
    for (int idx : a) {
        CHECK(idx >= 0);
        CHECK(idx < 100);
        CHECK_FALSE(seen[static_cast<std::size_t>(idx)]);
        seen[static_cast<std::size_t>(idx)] = true;
    }
    CHECK_THROWS_AS(deterministic_subset(1, 11, 10), BadConfigError);
}

TEST_CASE("load_dataset applies subset sizes and rejects oversubscription") {
    DatasetSpec spec;
    spec.source = DatasetSpec::Source::Synthetic;
    spec.synthetic.classes = 4;
    spec.synthetic.per_class = 30;
    spec.synthetic.image_size = 8;
    spec.train_size = 40;
    spec.test_size = 20;
    spec.seed = 3;
    auto [train, test] = load_dataset(spec);
    CHECK(train.size() == 40);
    CHECK(test.size() == 20);

    spec.train_size = 1000;
    CHECK_THROWS_AS(load_dataset(spec), BadConfigError);
}
