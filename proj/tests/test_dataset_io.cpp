#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <iterator>

#include "mmon/dataset_io.hpp"
#include "mmon/error.hpp"
#include "mmon/generator.hpp"

using namespace mmon;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("mmon_test_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << bytes;
}

io::Dataset small_dataset() {
    std::vector<PuzzleInstance> instances;
    for (ConfigKind c : kAllConfigs) instances.push_back(generate_puzzle(c, static_cast<std::uint64_t>(c) + 100));
    for (std::uint64_t s = 0; s < 3; ++s) instances.push_back(generate_puzzle(ConfigKind::Center, s));
    return io::make_dataset(std::move(instances), 40);
}

}  // namespace

TEST_CASE("datasets round-trip exactly", "[dataset]") {
    const io::Dataset d = small_dataset();
    REQUIRE(d.count() == 10);
    REQUIRE(d.rasters.size() == 160);
    const fs::path dir = scratch("roundtrip");
    io::serialize_dataset(d, dir);
    const io::Dataset back = io::deserialize_dataset(dir);
    CHECK(back.size == 40);
    REQUIRE(back.count() == d.count());
    for (std::size_t i = 0; i < d.count(); ++i) CHECK(back.instances[i] == d.instances[i]);
    CHECK(back.rasters == d.rasters);

    // Writing the read-back copy reproduces both files byte for byte.
    const fs::path dir2 = scratch("roundtrip2");
    io::serialize_dataset(back, dir2);
    CHECK(slurp(dir / "panels.bin") == slurp(dir2 / "panels.bin"));
    CHECK(slurp(dir / "manifest.json") == slurp(dir2 / "manifest.json"));
    fs::remove_all(dir);
    fs::remove_all(dir2);
}

TEST_CASE("panels file layout", "[dataset]") {
    const io::Dataset d = small_dataset();
    const fs::path dir = scratch("layout");
    io::serialize_dataset(d, dir);
    const std::string bytes = slurp(dir / "panels.bin");
    CHECK(bytes.substr(0, 4) == "RPM1");
    CHECK(static_cast<unsigned char>(bytes[4]) == 10);
    CHECK(static_cast<unsigned char>(bytes[8]) == 40);
    CHECK(static_cast<unsigned char>(bytes[10]) == 40);
    CHECK(bytes.size() == 12 + 10 * 16 * 40 * 40);
    // The first pixel of instance 0's candidate 3.
    CHECK(static_cast<std::uint8_t>(bytes[12 + 11 * 40 * 40]) == d.rasters[11].data[0]);
    fs::remove_all(dir);
}

TEST_CASE("empty datasets are valid", "[dataset]") {
    const io::Dataset empty = io::make_dataset({}, 80);
    const fs::path dir = scratch("empty");
    io::serialize_dataset(empty, dir);
    const io::Dataset back = io::deserialize_dataset(dir);
    CHECK(back.count() == 0);
    CHECK(back.rasters.empty());
    fs::remove_all(dir);
}

TEST_CASE("corrupted datasets raise FormatError", "[dataset]") {
    const io::Dataset d = small_dataset();
    const fs::path dir = scratch("corrupt");
    io::serialize_dataset(d, dir);
    const std::string panels = slurp(dir / "panels.bin");
    const std::string manifest = slurp(dir / "manifest.json");

    std::string bad = panels;
    bad[0] = 'X';
    spit(dir / "panels.bin", bad);
    CHECK_THROWS_AS(io::deserialize_dataset(dir), FormatError);

    spit(dir / "panels.bin", panels.substr(0, panels.size() - 7));
    CHECK_THROWS_AS(io::deserialize_dataset(dir), FormatError);

    spit(dir / "panels.bin", panels);
    spit(dir / "manifest.json", manifest.substr(0, manifest.size() / 2));
    CHECK_THROWS_AS(io::deserialize_dataset(dir), FormatError);

    spit(dir / "manifest.json", manifest);
    CHECK(io::deserialize_dataset(dir).count() == d.count());

    fs::remove(dir / "panels.bin");
    CHECK_THROWS_AS(io::deserialize_dataset(dir), IoError);
    fs::remove_all(dir);
}

TEST_CASE("instance json round-trip", "[dataset]") {
    for (ConfigKind c : kAllConfigs) {
        const PuzzleInstance inst = generate_puzzle(c, 42);
        CHECK(io::instance_from_json(io::instance_to_json(inst)) == inst);
    }
    nlohmann::json j = io::instance_to_json(generate_puzzle(ConfigKind::Center, 1));
    j["label"] = 9;
    CHECK_THROWS_AS(io::instance_from_json(j), FormatError);
}
