#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "snpforge/checkpoint.hpp"

using namespace snpforge;

namespace {

std::string temp_path(const char* name) {
    return std::string("snpf_test_") + name + ".snpf";
}

} // namespace

TEST_CASE("snpf round trip preserves tensors bit for bit") {
    const auto path = temp_path("roundtrip");
    SnpfFile f;
    Rng rng(5);
    auto a = Tensorf::randn({3, 4}, rng);
    auto b = Tensord::randn({2, 2, 2}, rng);
    f.add(SnpfTensor::from("weights/a", a));
    f.add(SnpfTensor::from("weights/b", b));
    f.add_scalar("config/lr", 1e-3);
    f.write(path);

    const auto r = SnpfFile::read(path);
    CHECK(r.tensors().size() == 3);
    CHECK(r.get("weights/a").to_f32().data() == a.data());
    CHECK(r.get("weights/b").to_f64().data() == b.data());
    CHECK(r.scalar("config/lr") == doctest::Approx(1e-3));
    std::remove(path.c_str());
}

TEST_CASE("snpf rejects a bad magic") {
    const auto path = temp_path("magic");
    {
        std::ofstream os(path, std::ios::binary);
        os << "NOPEgarbage";
    }
    CHECK_THROWS_WITH_AS(SnpfFile::read(path), doctest::Contains("bad magic"), std::runtime_error);
    std::remove(path.c_str());
}

TEST_CASE("snpf rejects truncated files") {
    const auto path = temp_path("trunc");
    SnpfFile f;
    f.add_scalar("x", 1.0);
    f.write(path);
    std::ifstream is(path, std::ios::binary);
    std::string buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    is.close();
    {
        std::ofstream os(path, std::ios::binary);
        os.write(buf.data(), static_cast<std::streamsize>(buf.size() - 4));
    }
    CHECK_THROWS_WITH_AS(SnpfFile::read(path), doctest::Contains("truncated"), std::runtime_error);
    std::remove(path.c_str());
}

TEST_CASE("snpf rejects duplicate tensor names") {
    SnpfFile f;
    f.add_scalar("x", 1.0);
    CHECK_THROWS_WITH_AS(f.add_scalar("x", 2.0), doctest::Contains("duplicate"),
                         std::runtime_error);
}
