#include <doctest.h>

#include <cmath>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "snpforge/genodata.hpp"

using namespace snpforge;

namespace {

std::vector<Variant> make_variants(int64_t l) {
    std::vector<Variant> v(static_cast<size_t>(l));
    for (int64_t j = 0; j < l; ++j) v[static_cast<size_t>(j)] = {1, 1000 + 100 * static_cast<uint64_t>(j), 'A', 'G'};
    return v;
}

GenotypeMatrix tiny_matrix(const std::vector<uint8_t>& dosages, int64_t n, int64_t l) {
    return GenotypeMatrix(n, l, dosages, make_variants(l));
}

} // namespace

TEST_CASE("one-hot encoding puts exactly one channel high per position") {
    auto g = tiny_matrix({0, 1, 2}, 1, 3);
    auto x = one_hot_encode<float>(g);
    CHECK(x.shape() == Shape{1, 3, 3});
    // dosage row [0,1,2] -> channels columnwise [[1,0,0],[0,1,0],[0,0,1]]
    CHECK(x.at({0, 0, 0}) == 1.f);
    CHECK(x.at({0, 1, 1}) == 1.f);
    CHECK(x.at({0, 2, 2}) == 1.f);
    float total = 0;
    for (const auto v : x.data()) total += v;
    CHECK(total == 3.f);
}

TEST_CASE("one-hot then argmax is the identity on valid dosages") {
    Rng rng(9);
    std::vector<uint8_t> dosages(200 * 7);
    for (auto& d : dosages) d = static_cast<uint8_t>(rng.below(3));
    auto g = tiny_matrix(dosages, 200, 7);
    const auto decoded = decode_argmax(one_hot_encode<float>(g));
    CHECK(decoded == dosages);
}

TEST_CASE("one-hot batch of 2 rows with L=4 has shape 2x3x4") {
    auto g = tiny_matrix({0, 1, 2, 0, 2, 2, 1, 0}, 2, 4);
    const std::vector<int64_t> rows{0, 1};
    CHECK(one_hot_encode<float>(g, rows).shape() == Shape{2, 3, 4});
}

TEST_CASE("decode_argmax favors channel 1 everywhere when it dominates") {
    auto logits = Tensorf::zeros({2, 3, 5});
    for (int64_t b = 0; b < 2; ++b)
        for (int64_t j = 0; j < 5; ++j) logits.data()[static_cast<size_t>((b * 3 + 1) * 5 + j)] = 4.f;
    const auto d = decode_argmax(logits);
    for (const auto v : d) CHECK(v == 1);
}

TEST_CASE("decode_argmax breaks exact ties toward the lowest class") {
    auto logits = Tensorf::zeros({1, 3, 2});
    const auto d = decode_argmax(logits);
    CHECK(d[0] == 0);
    CHECK(d[1] == 0);
}

TEST_CASE("decode_argmax rejects NaN logits") {
    auto logits = Tensorf::zeros({1, 3, 1});
    logits.data()[1] = std::nanf("");
    CHECK_THROWS_WITH_AS(decode_argmax(logits), doctest::Contains("NaN"), std::runtime_error);
}

TEST_CASE("decode_argmax matches a per-position brute-force max") {
    Rng rng(11);
    auto logits = Tensorf::randn({4, 3, 9}, rng);
    const auto fast = decode_argmax(logits);
    for (int64_t b = 0; b < 4; ++b)
        for (int64_t j = 0; j < 9; ++j) {
            uint8_t best = 0;
            for (uint8_t c = 1; c < 3; ++c)
                if (logits.at({b, c, j}) > logits.at({b, best, j})) best = c;
            CHECK(fast[static_cast<size_t>(b * 9 + j)] == best);
        }
}

TEST_CASE("maf hand examples") {
    // columns: [0,0,0,0], [1,1,1,1], [0,1,2,1]
    auto g = tiny_matrix({0, 1, 0, 0, 1, 1, 0, 1, 2, 0, 1, 1}, 4, 3);
    const auto f = maf(g);
    CHECK(f[0] == doctest::Approx(0.0)); // all zeros
    CHECK(f[1] == doctest::Approx(0.5)); // all ones -> p = 0.5
    CHECK(f[2] == doctest::Approx(0.5)); // [0,1,2,1] -> p = 4/8
}

TEST_CASE("pack/unpack identity across random dosage patterns") {
    Rng rng(13);
    for (int rep = 0; rep < 20; ++rep) {
        const int64_t n = 1 + static_cast<int64_t>(rng.below(8));
        const int64_t l = 1 + static_cast<int64_t>(rng.below(19));
        std::vector<uint8_t> dosages(static_cast<size_t>(n * l));
        for (auto& d : dosages) d = static_cast<uint8_t>(rng.below(3));
        auto g = tiny_matrix(dosages, n, l);
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < l; ++j)
                CHECK(g.dosage(i, j) == dosages[static_cast<size_t>(i * l + j)]);
    }
}

TEST_CASE("dosage values outside {0,1,2} are rejected") {
    CHECK_THROWS_AS(tiny_matrix({0, 3, 1}, 1, 3), std::invalid_argument);
}

TEST_CASE("variants must be position sorted") {
    std::vector<Variant> vars{{1, 2000, 'A', 'G'}, {1, 1000, 'A', 'G'}};
    CHECK_THROWS_AS(GenotypeMatrix(1, 2, {0, 1}, vars), std::invalid_argument);
}

TEST_CASE("bitplane mismatch counter agrees with direct comparison") {
    Rng rng(17);
    std::vector<uint8_t> dosages(6 * 70);
    for (auto& d : dosages) d = static_cast<uint8_t>(rng.below(3));
    auto g = tiny_matrix(dosages, 6, 70);
    for (int64_t a = 0; a < 6; ++a)
        for (int64_t b = 0; b < 6; ++b) {
            int64_t expect = 0;
            for (int64_t j = 0; j < 70; ++j) expect += g.dosage(a, j) != g.dosage(b, j);
            CHECK(g.mismatches(a, g, b) == expect);
        }
}

// ---- grouped stratified split --------------------------------------------------

namespace {

GenotypeMatrix labelled_matrix(int64_t n, const std::vector<std::string>& family_ids) {
    std::vector<uint8_t> dosages(static_cast<size_t>(n) * 2, 1);
    std::vector<std::string> sample_ids;
    for (int64_t i = 0; i < n; ++i) sample_ids.push_back("ind" + std::to_string(i));
    return GenotypeMatrix(n, 2, dosages, make_variants(2), sample_ids, family_ids);
}

} // namespace

TEST_CASE("families are never split across sets, for many seeds") {
    const int64_t n = 60;
    std::vector<std::string> fams;
    for (int64_t i = 0; i < n; ++i) fams.push_back("fam" + std::to_string(i / 5));
    auto g = labelled_matrix(n, fams);
    PhenotypeVector y;
    for (int64_t i = 0; i < n; ++i) y.labels.push_back(i % 3 == 0);
    for (uint64_t seed = 0; seed < 8; ++seed) {
        const auto s = grouped_stratified_split(g, y, {0.7, 0.2, 0.1}, seed);
        for (int64_t i = 0; i < n; ++i)
            CHECK(s.set[static_cast<size_t>(i)] == s.set[static_cast<size_t>((i / 5) * 5)]);
    }
}

TEST_CASE("one family of five lands in a single set") {
    auto g = labelled_matrix(5, {"f", "f", "f", "f", "f"});
    PhenotypeVector y;
    y.labels = {1, 0, 0, 1, 0};
    const auto s = grouped_stratified_split(g, y, {0.7, 0.2, 0.1}, 3);
    for (int64_t i = 1; i < 5; ++i) CHECK(s.set[static_cast<size_t>(i)] == s.set[0]);
}

TEST_CASE("unrelated cohort splits close to target counts and case balance") {
    const int64_t n = 1000;
    auto g = labelled_matrix(n, {});
    PhenotypeVector y;
    for (int64_t i = 0; i < n; ++i) y.labels.push_back(i < 100); // 10% cases
    for (uint64_t seed = 1; seed <= 5; ++seed) {
        const auto s = grouped_stratified_split(g, y, {0.7, 0.2, 0.1}, seed);
        const auto test_idx = s.indices(SplitSet::test);
        CHECK(std::abs(static_cast<double>(test_idx.size()) - 100.0) <= 5.0);
        int64_t cases = 0;
        for (const auto i : test_idx) cases += y.labels[static_cast<size_t>(i)];
        CHECK(std::abs(static_cast<double>(cases) - 10.0) <= 2.0);
    }
}

TEST_CASE("degenerate fractions put everything in train") {
    auto g = labelled_matrix(20, {});
    PhenotypeVector y;
    for (int64_t i = 0; i < 20; ++i) y.labels.push_back(i % 2);
    const auto s = grouped_stratified_split(g, y, {1.0, 0.0, 0.0}, 1);
    for (const auto t : s.set) CHECK(t == SplitSet::train);
}

// ---- GPACK I/O ---------------------------------------------------------------------

TEST_CASE("gpack round trip is byte exact") {
    Rng rng(23);
    std::vector<uint8_t> dosages(50 * 13);
    for (auto& d : dosages) d = static_cast<uint8_t>(rng.below(3));
    std::vector<std::string> sample_ids, fams, snp_ids;
    for (int i = 0; i < 50; ++i) {
        sample_ids.push_back("s" + std::to_string(i));
        fams.push_back(i % 2 ? "famA" : ".");
    }
    for (int j = 0; j < 13; ++j) snp_ids.push_back("rs" + std::to_string(j));
    GenotypeMatrix g(50, 13, dosages, make_variants(13), sample_ids, fams, snp_ids);
    PhenotypeVector y;
    y.trait = "demo";
    for (int i = 0; i < 50; ++i) y.labels.push_back(i % 3 == 0);

    write_gpack("gpack_test_rt", g, y);
    const auto c = read_gpack("gpack_test_rt");
    CHECK(c.genotypes.packed() == g.packed());
    CHECK(c.genotypes.checksum() == g.checksum());
    CHECK(c.genotypes.sample_ids() == sample_ids);
    CHECK(c.genotypes.family_ids() == fams);
    CHECK(c.genotypes.snp_ids() == snp_ids);
    REQUIRE(c.phenotype.has_value());
    CHECK(c.phenotype->labels == y.labels);
    CHECK(c.phenotype->trait == "demo");
    for (const auto* ext : {".gpack", ".samples.tsv", ".variants.tsv"})
        std::remove((std::string("gpack_test_rt") + ext).c_str());
}

TEST_CASE("gpack distinguishes bad magic, version, and truncation") {
    auto g = tiny_matrix({0, 1, 2, 1}, 2, 2);
    write_gpack("gpack_test_err", g);
    std::ifstream is("gpack_test_err.gpack", std::ios::binary);
    std::string buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    is.close();

    {
        std::string bad = buf;
        bad[0] = 'X';
        std::ofstream os("gpack_test_err.gpack", std::ios::binary);
        os.write(bad.data(), static_cast<std::streamsize>(bad.size()));
        os.close();
        CHECK_THROWS_WITH_AS(read_gpack("gpack_test_err"), doctest::Contains("bad magic"),
                             std::runtime_error);
    }
    {
        std::string bad = buf;
        bad[3] = '9';
        std::ofstream os("gpack_test_err.gpack", std::ios::binary);
        os.write(bad.data(), static_cast<std::streamsize>(bad.size()));
        os.close();
        CHECK_THROWS_WITH_AS(read_gpack("gpack_test_err"), doctest::Contains("version"),
                             std::runtime_error);
    }
    {
        std::ofstream os("gpack_test_err.gpack", std::ios::binary);
        os.write(buf.data(), static_cast<std::streamsize>(buf.size() - 1));
        os.close();
        CHECK_THROWS_WITH_AS(read_gpack("gpack_test_err"), doctest::Contains("shorter"),
                             std::runtime_error);
    }
    {
        // reserved dosage value 3 in the packed block
        std::string bad = buf;
        bad[bad.size() - 1] = static_cast<char>(0xFF);
        std::ofstream os("gpack_test_err.gpack", std::ios::binary);
        os.write(bad.data(), static_cast<std::streamsize>(bad.size()));
        os.close();
        CHECK_THROWS_WITH_AS(read_gpack("gpack_test_err"), doctest::Contains("reserved"),
                             std::runtime_error);
    }
    for (const auto* ext : {".gpack", ".samples.tsv", ".variants.tsv"})
        std::remove((std::string("gpack_test_err") + ext).c_str());
}

TEST_CASE("subset_rows and subset_cols keep data aligned") {
    Rng rng(29);
    std::vector<uint8_t> dosages(10 * 8);
    for (auto& d : dosages) d = static_cast<uint8_t>(rng.below(3));
    auto g = tiny_matrix(dosages, 10, 8);
    const std::vector<int64_t> rows{1, 3, 7};
    const std::vector<int64_t> cols{0, 2, 5};
    auto gr = g.subset_rows(rows);
    auto gc = g.subset_cols(cols);
    for (size_t i = 0; i < rows.size(); ++i)
        for (int64_t j = 0; j < 8; ++j)
            CHECK(gr.dosage(static_cast<int64_t>(i), j) == g.dosage(rows[i], j));
    for (int64_t i = 0; i < 10; ++i)
        for (size_t j = 0; j < cols.size(); ++j)
            CHECK(gc.dosage(i, static_cast<int64_t>(j)) == g.dosage(i, cols[j]));
}
